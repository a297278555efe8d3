#include "levytd/runner.hpp"

#include "levytd/errors.hpp"
#include "levytd/network.hpp"
#include "levytd/stochastic.hpp"
#include "levytd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>

namespace levytd {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

namespace fs = std::filesystem;

std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ConfigError("cannot write '" + path.string() + "'");
    }
    return out;
}

void write_metric(std::ostream& out, const MetricRecord& r, bool timing) {
    out << r.iteration << ',' << r.update << ',' << format_double(r.y0_estimate) << ','
        << format_double(r.y0_rel_error) << ',' << format_double(r.loss.loss1) << ',' << format_double(r.loss.loss2)
        << ',' << format_double(r.loss.loss3) << ',' << format_double(r.loss.loss4) << ',' << format_double(r.lr)
        << ',' << format_double(timing ? r.seconds : 0.0) << '\n';
    out.flush();
}

void write_trajectories(const fs::path& path, const ProblemSpec& problem, const Net& net, const ResolvedRun& run) {
    std::ofstream out = open_output(path);
    out << kTrajectoriesHeader << '\n';
    const std::size_t paths = run.config.sample_paths;
    if (paths == 0) {
        return;
    }
    const std::size_t steps = run.options.steps;
    const std::size_t d = problem.dim;
    const PathBatch batch = simulate_batch(problem, paths, steps,
                                           {StreamFactory(run.options.seed), StreamPurpose::kSamplePaths, 0},
                                           run.options.threads);
    std::vector<double> x(paths * d);
    for (std::size_t n = 0; n <= steps; ++n) {
        const double t = batch.time(n);
        for (std::size_t j = 0; j < paths; ++j) {
            const auto s = batch.state(j, n);
            std::copy(s.begin(), s.end(), x.begin() + static_cast<std::ptrdiff_t>(j * d));
        }
        const NetOutputs values = forward(net, t, x, paths);
        for (std::size_t j = 0; j < paths; ++j) {
            const auto s = batch.state(j, n);
            const double exact = problem.has_exact() ? problem.exact(t, s) : std::numeric_limits<double>::quiet_NaN();
            const int jump = n > 0 && !batch.jumps_in_step(j, n - 1).empty() ? 1 : 0;
            for (std::size_t c = 0; c < d; ++c) {
                out << j << ',' << n << ',' << format_double(t) << ',' << c << ',' << format_double(s[c]) << ','
                    << format_double(values.n1[j]) << ',' << format_double(exact) << ',' << jump << '\n';
            }
        }
    }
}

void write_summary(const fs::path& path, const RunSummary& s, const std::string& status) {
    std::ofstream out = open_output(path);
    out << "problem: " << s.problem << '\n'
        << "y0_estimate: " << format_double(s.y0_estimate) << '\n'
        << "y0_exact: " << format_double(s.y0_exact) << '\n'
        << "y0_rel_error: " << format_double(s.y0_rel_error) << '\n'
        << "updates: " << s.updates << '\n'
        << "runtime_seconds: " << format_double(s.seconds) << '\n'
        << "status: " << status << '\n';
}

}  // namespace

RunSummary run(const RunConfig& config, std::ostream* log) {
    const ResolvedRun resolved = resolve(config);
    const ProblemSpec& problem = resolved.problem;
    const fs::path dir(resolved.config.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
    }

    const auto started = std::chrono::steady_clock::now();
    RunSummary summary;
    summary.problem = problem.name;
    summary.y0_exact = problem.has_exact() ? problem.exact_initial_value() : std::numeric_limits<double>::quiet_NaN();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count(); };

    std::ofstream metrics = open_output(dir / "metrics.csv");
    metrics << kMetricsHeader << '\n';
    TrainObserver observer;
    observer.on_metric = [&](const MetricRecord& r) {
        write_metric(metrics, r, resolved.config.timing);
        summary.y0_estimate = r.y0_estimate;
        summary.y0_rel_error = r.y0_rel_error;
        summary.updates = r.update;
        if (log != nullptr) {
            *log << "update " << r.update << "  y0 " << format_double(r.y0_estimate) << "  rel_err "
                 << r.y0_rel_error << "  loss1 " << r.loss.loss1 << '\n';
        }
    };

    try {
        TrainResult result = train(problem, resolved.options, initial_state(problem, resolved.options), observer);
        summary.y0_estimate = y0_estimate(result.state.net, problem);
        summary.y0_rel_error = std::abs(summary.y0_estimate - summary.y0_exact) / std::abs(summary.y0_exact);
        summary.updates = result.state.update_count;
        metrics.close();
        save_checkpoint(result.state.net, (dir / "model.ckpt").string());
        write_trajectories(dir / "trajectories.csv", problem, result.state.net, resolved);
    } catch (const Error& e) {
        metrics.close();
        summary.seconds = elapsed();
        write_summary(dir / "summary.txt", summary, std::string("failed: ") + e.what());
        throw;
    }
    summary.seconds = elapsed();
    write_summary(dir / "summary.txt", summary, "completed");
    return summary;
}

std::vector<SweepRow> sweep(const RunConfig& config, const std::string& axis, const std::vector<std::string>& values,
                            std::ostream* log) {
    RunConfig base = config;
    if (base.out_dir.empty()) {
        base.out_dir = default_out_dir();
    }
    // Rejects an unknown axis before anything runs.
    (void)get_field(base, axis);
    const fs::path dir(base.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
    }
    std::ofstream out = open_output(dir / "sweep.csv");
    out << kSweepHeader << '\n';
    out.flush();

    std::string axis_name = axis;
    std::replace(axis_name.begin(), axis_name.end(), '-', '_');
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < values.size(); ++i) {
        SweepRow row;
        row.value = values[i];
        const auto started = std::chrono::steady_clock::now();
        try {
            RunConfig c = base;
            set_field(c, axis, values[i]);
            c.out_dir = (dir / (axis_name + "_" + std::to_string(i))).string();
            if (log != nullptr) {
                *log << axis << " = " << values[i] << '\n';
            }
            row.summary = run(c, log);
            row.status = "ok";
        } catch (const std::exception& e) {
            row.summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            row.summary.y0_estimate = std::numeric_limits<double>::quiet_NaN();
            row.summary.y0_rel_error = std::numeric_limits<double>::quiet_NaN();
            row.status = e.what();
        }
        std::string status = row.status;
        std::replace(status.begin(), status.end(), ',', ';');
        std::replace(status.begin(), status.end(), '\n', ' ');
        std::string value = row.value;
        std::replace(value.begin(), value.end(), ',', ';');
        out << value << ',' << format_double(row.summary.y0_rel_error) << ',' << format_double(row.summary.seconds)
            << ',' << format_double(row.summary.y0_estimate) << ',' << status << '\n';
        out.flush();
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace levytd
