#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "levytd/errors.hpp"
#include "levytd/run_config.hpp"
#include "levytd/runner.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace levytd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("levytd_test_cli_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    for (std::string line; std::getline(ss, line);) {
        out.push_back(line);
    }
    return out;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) {
        out.push_back(cell);
    }
    return out;
}

// A run that takes well under a second.
RunConfig tiny(const fs::path& out) {
    RunConfig c;
    c.problem = "robustness_1d";
    c.M = 16;
    c.N = 10;
    c.iterations = 3;
    c.log_every = 5;
    c.width = 4;
    c.blocks = 1;
    c.sample_paths = 12;
    c.out_dir = out.string();
    return c;
}

}  // namespace

TEST_CASE("config keys accept flag and field spellings") {
    RunConfig c;
    set_field(c, "--td-step", "3");
    set_field(c, "jump_params", "0.4, 0.25");
    set_field(c, "out", "somewhere");
    set_field(c, "stop-gradient-target", "true");
    set_field(c, "M", "77");
    CHECK(c.td_step == 3);
    CHECK(c.jump_params == std::vector<double>{0.4, 0.25});
    CHECK(c.out_dir == "somewhere");
    CHECK(c.stop_gradient_target);
    CHECK(*c.M == 77);
    CHECK(get_field(c, "M") == "77");
    CHECK(get_field(c, "td-step") == "3");
    for (const auto& key : field_names()) {
        CHECK_NOTHROW(set_field(c, key, get_field(c, key)));
    }
    set_field(c, "M", "");
    CHECK(!c.M.has_value());
}

TEST_CASE("config text parsing") {
    RunConfig c;
    apply_config_text(c, "# experiment\nproblem = highdim\n\n  d = 10   # small\nlambda=0.6\njump = constant\n");
    CHECK(c.problem == "highdim");
    CHECK(*c.d == 10);
    CHECK(c.lambda == 0.6);
    CHECK(c.jump == "constant");

    CHECK_THROWS_AS(apply_config_text(c, "d 10\n"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(c, "colour = red\n"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(c, "M = -4\n"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(c, "lambda = fast\n"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(c, "timing = maybe\n"), ConfigError);
    CHECK_THROWS_AS(apply_config_file(c, "/nonexistent/levytd.cfg"), ConfigError);
    CHECK_THROWS_AS(get_field(c, "colour"), ConfigError);
}

TEST_CASE("number lists") {
    CHECK(parse_number_list("1, 2.5,-3e-1") == std::vector<double>{1.0, 2.5, -0.3});
    CHECK(parse_number_list("").empty());
    CHECK_THROWS_AS(parse_number_list("1,,2"), ConfigError);
}

TEST_CASE("problem defaults") {
    RunConfig c;
    c.out_dir = "x";
    ResolvedRun r = resolve(c);
    CHECK(r.problem.name == "pure_jump_1d");
    CHECK(r.options.paths == 1000);
    CHECK(r.options.steps == 50);
    CHECK(r.options.iterations == 400);
    CHECK(r.options.td_step == 1);
    CHECK(r.options.adam.lr0 == 5e-5);
    CHECK(r.options.seed == 2023);
    CHECK(r.options.net->width == 25);
    CHECK(r.options.net->blocks == 5);

    c.problem = "robustness_1d";
    r = resolve(c);
    CHECK(r.options.paths == 250);
    CHECK(*r.config.epsilon == 0.25);
    CHECK(*r.config.theta == 0.0);

    c.problem = "highdim";
    r = resolve(c);
    CHECK(r.problem.dim == 100);
    CHECK(r.options.paths == 500);
    CHECK(r.options.net->width == 110);
    CHECK(r.problem.exact_initial_value() == doctest::Approx(1.0).epsilon(1e-12));

    c.d = 10;
    c.width = 7;
    r = resolve(c);
    CHECK(r.problem.dim == 10);
    CHECK(r.options.net->width == 7);
}

TEST_CASE("invalid configurations are rejected") {
    RunConfig c;
    c.out_dir = "x";
    c.problem = "heat";
    CHECK_THROWS_AS(resolve(c), ConfigError);
    c.problem = "pure_jump_1d";
    c.N = 50;
    c.td_step = 4;
    CHECK_THROWS_AS(resolve(c), ConfigError);
    c.td_step = 5;
    CHECK_NOTHROW(resolve(c));
    c.jump = "uniform";
    CHECK_THROWS_AS(resolve(c), ConfigError);
    c.problem = "robustness_1d";
    c.jump = "exponential";
    c.jump_params = {0.5};
    CHECK_THROWS_AS(resolve(c), ConfigError);
    c.jump_params = {3.0};
    CHECK_NOTHROW(resolve(c));
    c.M = 0;
    CHECK_THROWS_AS(resolve(c), ConfigError);
    c.M = 10;
    c.T = 0.0;
    CHECK_THROWS_AS(resolve(c), ConfigError);
    c.T = 1.0;
    c.d = 2;
    CHECK_THROWS_AS(resolve(c), ConfigError);
}

TEST_CASE("run writes its outputs") {
    const fs::path out = scratch("run");
    const RunConfig c = tiny(out);
    const RunSummary s = run(c);
    CHECK(s.problem == "robustness_1d");
    CHECK(s.updates == 30);
    CHECK(s.y0_exact == 1.0);
    CHECK(s.y0_rel_error == doctest::Approx(std::abs(s.y0_estimate - 1.0)).epsilon(1e-12));

    const auto metrics = lines_of(slurp(out / "metrics.csv"));
    REQUIRE(metrics.size() == 1 + 7);
    CHECK(metrics[0] == kMetricsHeader);
    CHECK(split(metrics[1])[1] == "0");
    CHECK(split(metrics.back())[1] == "30");
    for (std::size_t i = 1; i < metrics.size(); ++i) {
        const auto cells = split(metrics[i]);
        REQUIRE(cells.size() == 10);
        CHECK(cells[9] == "0");
    }

    const auto traj = lines_of(slurp(out / "trajectories.csv"));
    CHECK(traj[0] == kTrajectoriesHeader);
    CHECK(traj.size() == 1 + 12 * 11);
    bool jumped = false;
    for (std::size_t i = 1; i < traj.size(); ++i) {
        const auto cells = split(traj[i]);
        REQUIRE(cells.size() == 8);
        CHECK(std::stod(cells[6]) == std::stod(cells[4]));  // u = x
        jumped = jumped || cells[7] == "1";
        if (cells[1] == "0") {
            CHECK(cells[7] == "0");
            CHECK(std::stod(cells[4]) == 1.0);
        }
    }
    CHECK(jumped);

    const std::string summary = slurp(out / "summary.txt");
    CHECK(summary.find("status: completed") != std::string::npos);
    CHECK(summary.find("y0_exact: 1\n") != std::string::npos);
    CHECK(fs::exists(out / "model.ckpt"));
    fs::remove_all(out);
}

TEST_CASE("metrics are byte-identical across runs") {
    const fs::path a = scratch("same_a");
    const fs::path b = scratch("same_b");
    RunConfig c = tiny(a);
    run(c);
    c.out_dir = b.string();
    c.threads = 2;
    run(c);
    CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
    CHECK(slurp(a / "trajectories.csv") == slurp(b / "trajectories.csv"));

    c.seed = 7;
    run(c);
    CHECK(slurp(a / "metrics.csv") != slurp(b / "metrics.csv"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("timing fills the seconds column") {
    const fs::path out = scratch("timing");
    RunConfig c = tiny(out);
    c.timing = true;
    run(c);
    const auto metrics = lines_of(slurp(out / "metrics.csv"));
    CHECK(std::stod(split(metrics.back())[9]) > 0.0);
    fs::remove_all(out);
}

TEST_CASE("divergence keeps the metrics written so far") {
    const fs::path out = scratch("diverge");
    RunConfig c = tiny(out);
    c.lr0 = 1e300;
    CHECK_THROWS_AS(run(c), TrainingDivergedError);
    const auto metrics = lines_of(slurp(out / "metrics.csv"));
    REQUIRE(metrics.size() >= 2);
    CHECK(metrics[0] == kMetricsHeader);
    CHECK(split(metrics[1])[1] == "0");
    CHECK(slurp(out / "summary.txt").find("status: failed") != std::string::npos);
    fs::remove_all(out);
}

TEST_CASE("sweeps") {
    const fs::path out = scratch("sweep");
    RunConfig c = tiny(out);

    SUBCASE("empty value list writes only the header") {
        CHECK(sweep(c, "M", {}).empty());
        CHECK(slurp(out / "sweep.csv") == std::string(kSweepHeader) + "\n");
    }
    SUBCASE("unknown axis") { CHECK_THROWS_AS(sweep(c, "colour", {"1"}), ConfigError); }
    SUBCASE("failures are recorded and the sweep continues") {
        const auto rows = sweep(c, "td_step", {"1", "3", "2"});
        REQUIRE(rows.size() == 3);
        CHECK(rows[0].status == "ok");
        CHECK(rows[1].status != "ok");
        CHECK(rows[2].status == "ok");
        CHECK(rows[2].summary.updates == 15);
        const auto lines = lines_of(slurp(out / "sweep.csv"));
        REQUIRE(lines.size() == 4);
        CHECK(lines[0] == kSweepHeader);
        CHECK(split(lines[1]).size() == 5);
        CHECK(split(lines[2])[0] == "3");
        CHECK(split(lines[2])[1] == "nan");
        CHECK(fs::exists(out / "td_step_0" / "metrics.csv"));
        CHECK(fs::exists(out / "td_step_2" / "summary.txt"));
    }
    SUBCASE("list-valued axis") {
        c.problem = "robustness_1d";
        c.jump = "uniform";
        const auto rows = sweep(c, "jump_params", {"0.4", "0.2"});
        CHECK(rows[0].status == "ok");
        CHECK(rows[1].status == "ok");
        CHECK(rows[0].summary.y0_estimate != rows[1].summary.y0_estimate);
    }
    fs::remove_all(out);
}

TEST_CASE("command line tool") {
    const fs::path out = scratch("tool");
    const std::string tool = LEVYTD_TOOL;
    auto sh = [](const std::string& cmd) {
        const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
        return WEXITSTATUS(status);
    };
    const std::string small = " --problem robustness_1d --M 8 --N 5 --iterations 2 --width 3 --blocks 1 -q";
    CHECK(sh(tool + " run" + small + " --out " + out.string()) == 0);
    CHECK(fs::exists(out / "summary.txt"));

    const fs::path cfg = out / "run.cfg";
    std::ofstream(cfg) << "problem = robustness_1d\nM = 8\nN = 5\niterations = 1\nwidth = 3\nblocks = 1\n";
    CHECK(sh(tool + " run --config " + cfg.string() + " --N 4 -q --out " + (out / "cfg").string()) == 0);
    CHECK(lines_of(slurp(out / "cfg" / "metrics.csv")).back().rfind("0,4,", 0) == 0);

    CHECK(sh(tool + " run --problem heat --out " + out.string()) == 2);
    CHECK(sh(tool + " run --td-step 3" + small + " --out " + out.string()) == 2);
    CHECK(sh(tool + " run --bogus 1") == 2);
    CHECK(sh(tool + " sweep --axis M --values 8,9" + small + " --out " + (out / "sw").string()) == 0);
    CHECK(lines_of(slurp(out / "sw" / "sweep.csv")).size() == 3);
    CHECK(sh(tool + " sweep --axis td_step --values 1,2" + small + " --out " + (out / "sw2").string()) == 1);
    fs::remove_all(out);
}
