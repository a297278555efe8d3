#include "levytd/errors.hpp"
#include "levytd/run_config.hpp"
#include "levytd/runner.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

namespace {

struct FlagSet {
    std::optional<std::string> config_file;
    std::map<std::string, std::string> values;
    bool quiet = false;
};

// One string flag per RunConfig field; values are applied after the config file.
void add_config_flags(CLI::App& app, FlagSet& flags) {
    app.add_option("--config", flags.config_file, "key = value file applied before the flags");
    app.add_flag("-q,--quiet", flags.quiet, "suppress progress output");
    for (const std::string& name : levytd::field_names()) {
        std::string flag = name;
        for (char& c : flag) {
            if (c == '_') {
                c = '-';
            }
        }
        if (name == "out_dir") {
            flag = "out";
        }
        app.add_option_function<std::string>(
            "--" + flag, [&flags, name](const std::string& v) { flags.values[name] = v; }, "RunConfig " + name);
    }
}

levytd::RunConfig build_config(const FlagSet& flags) {
    levytd::RunConfig config;
    if (flags.config_file) {
        levytd::apply_config_file(config, *flags.config_file);
    }
    for (const auto& [key, value] : flags.values) {
        levytd::set_field(config, key, value);
    }
    return config;
}

std::vector<std::string> split_values(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        if (b == std::string::npos) {
            continue;
        }
        out.push_back(item.substr(b, item.find_last_not_of(" \t") - b + 1));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Temporal-difference solver for PIDEs with jumps"};
    app.require_subcommand(1);

    FlagSet run_flags;
    CLI::App* run_cmd = app.add_subcommand("run", "train one configuration");
    add_config_flags(*run_cmd, run_flags);

    FlagSet sweep_flags;
    std::string axis;
    std::string values;
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "train one configuration per axis value");
    add_config_flags(*sweep_cmd, sweep_flags);
    sweep_cmd->add_option("--axis", axis, "RunConfig field to vary")->required();
    sweep_cmd->add_option("--values", values, "comma-separated values; use ';' inside a value for jump params");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run_cmd->parsed()) {
            const levytd::RunConfig config = build_config(run_flags);
            const levytd::RunSummary s = levytd::run(config, run_flags.quiet ? nullptr : &std::cerr);
            std::cout << "problem       " << s.problem << '\n'
                      << "Y0 estimate   " << levytd::format_double(s.y0_estimate) << '\n'
                      << "Y0 exact      " << levytd::format_double(s.y0_exact) << '\n'
                      << "relative err  " << s.y0_rel_error * 100.0 << " %\n"
                      << "updates       " << s.updates << '\n'
                      << "runtime       " << s.seconds << " s\n";
            return 0;
        }
        const levytd::RunConfig config = build_config(sweep_flags);
        std::vector<std::string> list = split_values(values);
        for (std::string& v : list) {
            for (char& c : v) {
                if (c == ';') {
                    c = ',';
                }
            }
        }
        const auto rows = levytd::sweep(config, axis, list, sweep_flags.quiet ? nullptr : &std::cerr);
        int failures = 0;
        for (const auto& row : rows) {
            std::cout << axis << " = " << row.value << "  rel_err " << row.summary.y0_rel_error * 100.0 << " %  "
                      << row.summary.seconds << " s  " << row.status << '\n';
            failures += row.status == "ok" ? 0 : 1;
        }
        return failures == 0 ? 0 : 1;
    } catch (const levytd::ConfigError& e) {
        std::cerr << "levytd: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "levytd: " << e.what() << '\n';
        return 1;
    }
}
