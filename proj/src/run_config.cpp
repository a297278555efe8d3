#include "levytd/run_config.hpp"

#include "levytd/errors.hpp"
#include "levytd/problems.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace levytd {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) {
        return "";
    }
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::string normalize_key(std::string key) {
    key = trim(key);
    while (!key.empty() && key.front() == '-') {
        key.erase(key.begin());
    }
    std::replace(key.begin(), key.end(), '-', '_');
    if (key == "out") {
        key = "out_dir";
    }
    return key;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
    std::size_t out = 0;
    const std::string v = trim(value);
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("'" + key + "' expects a non-negative integer, got '" + value + "'");
    }
    return out;
}

double parse_real(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size()) {
        throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (v == "1" || v == "true" || v == "on" || v == "yes") {
        return true;
    }
    if (v == "0" || v == "false" || v == "off" || v == "no") {
        return false;
    }
    throw ConfigError("'" + key + "' expects a boolean, got '" + value + "'");
}

std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class T>
std::string format_optional(const std::optional<T>& v) {
    if (!v) {
        return "";
    }
    if constexpr (std::is_floating_point_v<T>) {
        return format_real(*v);
    } else {
        return std::to_string(*v);
    }
}

}  // namespace

std::vector<double> parse_number_list(const std::string& text) {
    std::vector<double> out;
    if (trim(text).empty()) {
        return out;
    }
    std::stringstream ss(text + ",");
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_real("list", item));
    }
    return out;
}

const std::vector<std::string>& field_names() {
    static const std::vector<std::string> names = {
        "problem",      "d",          "M",          "N",           "iterations",           "td_step",
        "T",            "lambda",     "jump",       "jump_params", "epsilon",              "theta",
        "lr0",          "lr_drop_every", "lr_drop_factor", "seed", "out_dir",              "log_every",
        "sample_paths", "width",      "blocks",     "threads",     "stop_gradient_target", "detach_jump_target", "timing",
    };
    return names;
}

namespace {

// Empty text clears the field back to the problem default.
template <class Parse>
auto optional_field(const std::string& v, Parse parse) -> std::optional<decltype(parse())> {
    if (v.empty()) {
        return std::nullopt;
    }
    return parse();
}

}  // namespace

void set_field(RunConfig& c, const std::string& raw_key, const std::string& value) {
    const std::string key = normalize_key(raw_key);
    const std::string v = trim(value);
    if (key == "problem") {
        c.problem = v;
    } else if (key == "d") {
        c.d = optional_field(v, [&] { return parse_count(key, v); });
    } else if (key == "M") {
        c.M = optional_field(v, [&] { return parse_count(key, v); });
    } else if (key == "N") {
        c.N = optional_field(v, [&] { return parse_count(key, v); });
    } else if (key == "iterations") {
        c.iterations = optional_field(v, [&] { return parse_count(key, v); });
    } else if (key == "td_step") {
        c.td_step = parse_count(key, v);
    } else if (key == "T") {
        c.T = parse_real(key, v);
    } else if (key == "lambda") {
        c.lambda = parse_real(key, v);
    } else if (key == "jump") {
        c.jump = v;
    } else if (key == "jump_params") {
        c.jump_params = parse_number_list(v);
    } else if (key == "epsilon") {
        c.epsilon = optional_field(v, [&] { return parse_real(key, v); });
    } else if (key == "theta") {
        c.theta = optional_field(v, [&] { return parse_real(key, v); });
    } else if (key == "lr0") {
        c.lr0 = parse_real(key, v);
    } else if (key == "lr_drop_every") {
        c.lr_drop_every = parse_count(key, v);
    } else if (key == "lr_drop_factor") {
        c.lr_drop_factor = parse_real(key, v);
    } else if (key == "seed") {
        c.seed = parse_count(key, v);
    } else if (key == "out_dir") {
        c.out_dir = v;
    } else if (key == "log_every") {
        c.log_every = parse_count(key, v);
    } else if (key == "sample_paths") {
        c.sample_paths = parse_count(key, v);
    } else if (key == "width") {
        c.width = parse_count(key, v);
    } else if (key == "blocks") {
        c.blocks = parse_count(key, v);
    } else if (key == "threads") {
        c.threads = static_cast<unsigned>(parse_count(key, v));
    } else if (key == "stop_gradient_target") {
        c.stop_gradient_target = parse_bool(key, v);
    } else if (key == "detach_jump_target") {
        c.detach_jump_target = parse_bool(key, v);
    } else if (key == "timing") {
        c.timing = parse_bool(key, v);
    } else {
        throw ConfigError("unknown configuration key '" + raw_key + "'");
    }
}

std::string get_field(const RunConfig& c, const std::string& raw_key) {
    const std::string key = normalize_key(raw_key);
    if (key == "problem") return c.problem;
    if (key == "d") return format_optional(c.d);
    if (key == "M") return format_optional(c.M);
    if (key == "N") return format_optional(c.N);
    if (key == "iterations") return format_optional(c.iterations);
    if (key == "td_step") return std::to_string(c.td_step);
    if (key == "T") return format_real(c.T);
    if (key == "lambda") return format_real(c.lambda);
    if (key == "jump") return c.jump;
    if (key == "jump_params") {
        std::string out;
        for (std::size_t i = 0; i < c.jump_params.size(); ++i) {
            out += (i ? "," : "") + format_real(c.jump_params[i]);
        }
        return out;
    }
    if (key == "epsilon") return format_optional(c.epsilon);
    if (key == "theta") return format_optional(c.theta);
    if (key == "lr0") return format_real(c.lr0);
    if (key == "lr_drop_every") return std::to_string(c.lr_drop_every);
    if (key == "lr_drop_factor") return format_real(c.lr_drop_factor);
    if (key == "seed") return std::to_string(c.seed);
    if (key == "out_dir") return c.out_dir;
    if (key == "log_every") return std::to_string(c.log_every);
    if (key == "sample_paths") return std::to_string(c.sample_paths);
    if (key == "width") return std::to_string(c.width);
    if (key == "blocks") return std::to_string(c.blocks);
    if (key == "threads") return std::to_string(c.threads);
    if (key == "stop_gradient_target") return c.stop_gradient_target ? "true" : "false";
    if (key == "detach_jump_target") return c.detach_jump_target ? "true" : "false";
    if (key == "timing") return c.timing ? "true" : "false";
    throw ConfigError("unknown configuration key '" + raw_key + "'");
}

void apply_config_text(RunConfig& config, const std::string& text) {
    std::stringstream ss(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        if (trim(line).empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        set_field(config, line.substr(0, eq), line.substr(eq + 1));
    }
}

void apply_config_file(RunConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file '" + path + "'");
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    apply_config_text(config, buffer.str());
}

std::string default_out_dir() {
    if (const char* env = std::getenv("LEVYTD_OUT"); env != nullptr && *env != '\0') {
        return env;
    }
    return "levytd_out";
}

namespace {

JumpLaw resolve_law(const RunConfig& c, const std::string& default_name, std::vector<double> default_params,
                    std::size_t dim) {
    const std::string name = c.jump.empty() ? default_name : c.jump;
    const std::vector<double> params = c.jump.empty() && c.jump_params.empty() ? default_params : c.jump_params;
    try {
        return JumpLaw::from_name(name, params, dim);
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace

ResolvedRun resolve(const RunConfig& input) {
    RunConfig c = input;
    if (c.out_dir.empty()) {
        c.out_dir = default_out_dir();
    }
    ProblemSpec problem;
    try {
        if (c.problem == "pure_jump_1d") {
            c.d = c.d.value_or(1);
            c.M = c.M.value_or(1000);
            c.N = c.N.value_or(50);
            c.iterations = c.iterations.value_or(400);
            const JumpLaw law = resolve_law(c, "normal", {0.4, 0.25}, 1);
            const auto* normal = std::get_if<JumpLaw::Normal>(&law.variant());
            if (normal == nullptr) {
                throw ConfigError("pure_jump_1d uses normal jumps; use robustness_1d for other laws");
            }
            if (*c.d != 1) {
                throw ConfigError("pure_jump_1d is one-dimensional");
            }
            problem = pure_jump_1d(c.lambda, normal->mean, normal->stddev);
        } else if (c.problem == "robustness_1d") {
            c.d = c.d.value_or(1);
            c.M = c.M.value_or(250);
            c.N = c.N.value_or(50);
            c.iterations = c.iterations.value_or(400);
            c.epsilon = c.epsilon.value_or(0.25);
            c.theta = c.theta.value_or(0.0);
            if (*c.d != 1) {
                throw ConfigError("robustness_1d is one-dimensional");
            }
            problem = robustness_1d(*c.epsilon, *c.theta, c.lambda, resolve_law(c, "normal", {0.4, 0.25}, 1));
        } else if (c.problem == "highdim") {
            c.d = c.d.value_or(100);
            c.M = c.M.value_or(500);
            c.N = c.N.value_or(50);
            c.iterations = c.iterations.value_or(400);
            c.epsilon = c.epsilon.value_or(0.0);
            c.theta = c.theta.value_or(0.3);
            if (*c.d < 1) {
                throw ConfigError("d must be >= 1");
            }
            const JumpLaw law = resolve_law(c, "constant", {0.1}, *c.d);
            const auto* constant = std::get_if<JumpLaw::ConstantVector>(&law.variant());
            if (constant == nullptr) {
                throw ConfigError("highdim uses the constant jump law");
            }
            problem = highdim(*c.d, *c.epsilon, *c.theta, c.lambda, constant->value);
        } else {
            throw ConfigError("unknown problem '" + c.problem + "'");
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (!(c.T > 0.0)) {
        throw ConfigError("T must be > 0");
    }
    problem.horizon = c.T;

    if (*c.M < 1 || *c.N < 1 || *c.iterations < 1 || c.td_step < 1 || c.log_every < 1 || c.blocks < 1 ||
        c.lr_drop_every < 1) {
        throw ConfigError("counts (M, N, iterations, td_step, log_every, blocks, lr_drop_every) must be >= 1");
    }
    if (*c.N % c.td_step != 0) {
        throw ConfigError("td_step " + std::to_string(c.td_step) + " does not divide N = " + std::to_string(*c.N));
    }

    TrainOptions options;
    options.paths = *c.M;
    options.steps = *c.N;
    options.iterations = *c.iterations;
    options.td_step = c.td_step;
    options.adam.lr0 = c.lr0;
    options.adam.drop_every = c.lr_drop_every;
    options.adam.drop_factor = c.lr_drop_factor;
    options.seed = c.seed;
    options.log_every = c.log_every;
    options.stop_gradient_target = c.stop_gradient_target;
    options.detach_jump_target = c.detach_jump_target;
    options.threads = std::max(1u, c.threads);
    NetConfig net = NetConfig::for_dimension(*c.d);
    if (c.width > 0) {
        net.width = c.width;
    }
    net.blocks = c.blocks;
    options.net = net;
    options.validate();
    return {std::move(problem), options, c};
}

}  // namespace levytd
