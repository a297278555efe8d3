#pragma once

#include "levytd/problem_spec.hpp"
#include "levytd/trainer.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace levytd {

/// Experiment settings. Unset optionals take the chosen problem's defaults.
struct RunConfig {
    std::string problem = "pure_jump_1d";
    std::optional<std::size_t> d;
    std::optional<std::size_t> M;
    std::optional<std::size_t> N;
    std::optional<std::size_t> iterations;
    std::size_t td_step = 1;
    double T = 1.0;
    double lambda = 0.3;
    std::string jump;  ///< empty: problem default
    std::vector<double> jump_params;
    std::optional<double> epsilon;
    std::optional<double> theta;
    double lr0 = 5e-5;
    std::size_t lr_drop_every = 5000;
    double lr_drop_factor = 5.0;
    std::uint64_t seed = 2023;
    std::string out_dir;
    std::size_t log_every = 500;
    std::size_t sample_paths = 10;
    std::size_t width = 0;  ///< 0: 25 for d = 1, d + 10 otherwise
    std::size_t blocks = 5;
    bool stop_gradient_target = false;
    bool detach_jump_target = false;
    /// Write elapsed wall-clock seconds into metrics.csv (otherwise the column is 0).
    bool timing = false;
    unsigned threads = 1;
};

/// Sets one field from its textual value. Keys use the flag spelling with '-' or '_'.
void set_field(RunConfig& config, const std::string& key, const std::string& value);

/// Current value of a field, formatted as set_field would accept it.
std::string get_field(const RunConfig& config, const std::string& key);

/// Every key accepted by set_field.
const std::vector<std::string>& field_names();

/// Applies `key = value` lines; '#' starts a comment.
void apply_config_text(RunConfig& config, const std::string& text);
void apply_config_file(RunConfig& config, const std::string& path);

/// out_dir from LEVYTD_OUT, falling back to "levytd_out".
std::string default_out_dir();

struct ResolvedRun {
    ProblemSpec problem;
    TrainOptions options;
    RunConfig config;  ///< with every default filled in
};

/// Validates the configuration and builds the problem and training options.
ResolvedRun resolve(const RunConfig& config);

std::vector<double> parse_number_list(const std::string& text);

}  // namespace levytd
