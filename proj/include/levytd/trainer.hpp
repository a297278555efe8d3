#pragma once

#include "levytd/autodiff.hpp"
#include "levytd/network.hpp"
#include "levytd/problem_spec.hpp"
#include "levytd/stochastic.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace levytd {

struct LossBreakdown {
    double loss1 = 0.0;  ///< mean squared TD error
    double loss2 = 0.0;  ///< terminal value mismatch, scaled by 1/N
    double loss3 = 0.0;  ///< terminal gradient mismatch, scaled by 1/N
    double loss4 = 0.0;  ///< |batch mean of the compensated jump increment|
    double total = 0.0;
};

struct AdamOptions {
    double lr0 = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t drop_every = 5000;
    double drop_factor = 5.0;
};

/// lr0 / drop_factor^⌊update_count / drop_every⌋
double scheduled_lr(const AdamOptions& adam, std::size_t update_count);

struct TrainOptions {
    std::size_t paths = 1000;    ///< M
    std::size_t steps = 50;      ///< N
    std::size_t iterations = 400;
    std::size_t td_step = 1;     ///< k; must divide N
    AdamOptions adam;
    std::uint64_t seed = 2023;
    std::size_t log_every = 500;
    /// Treat N1(t_{n+k}, x_{n+k}) in the TD error as a constant target.
    bool stop_gradient_target = false;
    /// Let Loss⁴ train N2 only: its N1 jump terms enter as constants.
    bool detach_jump_target = false;
    /// Defaults to NetConfig::for_dimension(problem.dim).
    std::optional<NetConfig> net;
    /// Worker threads for path simulation; results do not depend on it.
    unsigned threads = 1;

    void validate() const;
};

struct TrainState {
    Net net;
    std::vector<Tensor> adam_m;
    std::vector<Tensor> adam_v;
    std::size_t update_count = 0;
    double lr = 0.0;
    /// X_T of the previous iteration, M × d row-major.
    std::vector<double> terminal_buffer;
    /// Iteration that produced terminal_buffer; −1 for the initial random buffer.
    std::int64_t buffer_version = -1;
    std::size_t iterations_done = 0;
};

struct MetricRecord {
    std::size_t iteration = 0;
    std::size_t update = 0;
    double y0_estimate = 0.0;
    double y0_rel_error = 0.0;
    LossBreakdown loss;
    double lr = 0.0;
    double seconds = 0.0;
};

/// Emitted after every optimizer step.
struct StepEvent {
    std::size_t iteration = 0;
    std::size_t first_step = 0;
    std::size_t td_step = 1;
    std::size_t update_count = 0;
    std::int64_t buffer_version = -1;
    LossBreakdown loss;
};

struct TrainObserver {
    std::function<void(const MetricRecord&)> on_metric;
    std::function<void(const StepEvent&)> on_step;
};

struct TrainResult {
    TrainState state;
    std::vector<MetricRecord> metrics;
};

/// Values of a candidate solution: N1, N2 and ∇ₓN1 on a row-major batch of points at time t.
struct SolutionModel {
    std::function<std::vector<double>(double t, std::span<const double> x, std::size_t rows)> value;
    std::function<std::vector<double>(double t, std::span<const double> x, std::size_t rows)> nonlocal;
    std::function<std::vector<double>(double t, std::span<const double> x, std::size_t rows)> gradient;
};

SolutionModel net_model(const Net& net);

/// Per-sample TD error over the transition (t_n, t_{n+k}):
///
///   Σ_{m=n}^{n+k−1} [ −f Δt + (σᵀ∇N1)ᵀΔW_m + Σ_i (N1(t_m, x_m + G(x_m, z_i)) − N1(t_m, x_m)) − Δt N2(t_m, x_m) ]
///   + N1(t_n, x_n) − N1(t_{n+k}, x_{n+k})
std::vector<double> td_error(const SolutionModel& model, const ProblemSpec& problem, const PathBatch& batch,
                             std::size_t n, std::size_t k = 1);

double loss1(std::span<const double> td_errors);
double loss2(const SolutionModel& model, const ProblemSpec& problem, std::span<const double> terminal_buffer,
             std::size_t steps);
double loss3(const SolutionModel& model, const ProblemSpec& problem, std::span<const double> terminal_buffer,
             std::size_t steps);
double loss4(const SolutionModel& model, const ProblemSpec& problem, const PathBatch& batch, std::size_t n);

/// Tape nodes of the loss for one optimizer step.
struct StepLoss {
    Var total;
    Var loss1;
    Var loss2;
    Var loss3;
    Var loss4;
    Var td;  ///< M × 1 per-sample TD errors

    LossBreakdown values() const;
};

/// Records the loss of the window (t_n, …, t_{n+k}) on `tape`. Loss⁴ is summed over the k
/// transitions and Loss²/Loss³ are counted once per transition, so a full
/// iteration always weighs the terminal losses by one.
StepLoss build_step_loss(const BoundNet& net, const ProblemSpec& problem, const PathBatch& batch,
                         std::span<const double> terminal_buffer, std::size_t n, std::size_t k,
                         bool stop_gradient_target = false, bool detach_jump_target = false);

/// Fresh network and a terminal buffer taken from one untrained forward simulation.
TrainState initial_state(const ProblemSpec& problem, const TrainOptions& options);

/// One Adam update with bias correction, after setting the scheduled learning rate.
void adam_step(TrainState& state, std::span<const Tensor> gradients, const AdamOptions& adam);

/// N1(0, ξ).
double y0_estimate(const Net& net, const ProblemSpec& problem);

/// Runs `options.iterations` further iterations of temporal-difference training.
TrainResult train(const ProblemSpec& problem, const TrainOptions& options, TrainState state,
                  const TrainObserver& observer = {});

}  // namespace levytd
