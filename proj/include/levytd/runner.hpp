#pragma once

#include "levytd/run_config.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace levytd {

inline constexpr const char* kMetricsHeader =
    "iteration,update,y0_estimate,y0_rel_error,loss1,loss2,loss3,loss4,lr,seconds";
inline constexpr const char* kTrajectoriesHeader =
    "trajectory,step,time,coord_index,x_value,n1_value,exact_value,jump_flag";
inline constexpr const char* kSweepHeader = "value,y0_rel_error,seconds,y0_estimate,status";

struct RunSummary {
    std::string problem;
    double y0_estimate = 0.0;
    double y0_exact = 0.0;
    double y0_rel_error = 0.0;
    double seconds = 0.0;
    std::size_t updates = 0;
};

/// Trains one configuration and writes metrics.csv, trajectories.csv, summary.txt and
/// model.ckpt into out_dir. Progress lines go to `log` when given.
///
/// Throws ConfigError for an invalid configuration. On divergence the metrics written so
/// far stay on disk, summary.txt records the failure and the error is rethrown.
RunSummary run(const RunConfig& config, std::ostream* log = nullptr);

struct SweepRow {
    std::string value;
    RunSummary summary;
    std::string status;  ///< "ok" or the error message
};

/// Runs `config` once per value of `axis`, each in out_dir/<axis>_<index>, and writes
/// out_dir/sweep.csv. A failed run is recorded in its row and the sweep continues.
std::vector<SweepRow> sweep(const RunConfig& config, const std::string& axis, const std::vector<std::string>& values,
                            std::ostream* log = nullptr);

/// %.17g
std::string format_double(double v);

}  // namespace levytd
