#pragma once

#include "levytd/jump_law.hpp"
#include "levytd/problem_spec.hpp"
#include "levytd/random.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace levytd {

struct JumpRecord {
    double time;
    std::vector<double> size;
};

/// Arrival times of a Poisson process of intensity `intensity` on (0, horizon].
///
/// Sums i.i.d. Exponential(intensity) gaps until the horizon is passed.
std::vector<double> sample_jump_times(double intensity, double horizon, Rng& rng);

std::vector<double> sample_jump_size(const JumpLaw& law, Rng& rng);

/// E[e^Z] − 1 under a scalar law: the compensator integral of G(x,z) = x(e^z − 1) divided by x.
double compensator_exp_moment(const JumpLaw& law);

/// E[Z]; the compensator integral of G(x,z) = z. Length dimension().
std::vector<double> compensator_mean(const JumpLaw& law);

/// Index n of the grid interval (t_n, t_{n+1}] containing `time`, with t_k = k·horizon/steps.
/// A time equal to a grid point t_n belongs to the interval ending there.
std::size_t jump_interval(double time, double horizon, std::size_t steps);

/// M simulated trajectories of the discretised forward process on a uniform grid.
class PathBatch {
public:
    PathBatch(std::size_t paths, std::size_t steps, std::size_t dim, double horizon);

    std::size_t paths() const noexcept { return paths_; }
    std::size_t steps() const noexcept { return steps_; }
    std::size_t dim() const noexcept { return dim_; }
    double horizon() const noexcept { return horizon_; }
    double dt() const noexcept { return horizon_ / static_cast<double>(steps_); }
    double time(std::size_t n) const noexcept {
        return horizon_ * static_cast<double>(n) / static_cast<double>(steps_);
    }

    std::span<const double> state(std::size_t j, std::size_t n) const;
    std::span<double> state(std::size_t j, std::size_t n);
    std::span<const double> increment(std::size_t j, std::size_t n) const;
    std::span<double> increment(std::size_t j, std::size_t n);

    /// All jumps of trajectory j, in time order.
    std::span<const JumpRecord> jumps(std::size_t j) const { return jumps_[j]; }
    /// Jumps of trajectory j falling in (t_n, t_{n+1}].
    std::span<const JumpRecord> jumps_in_step(std::size_t j, std::size_t n) const;
    std::size_t jump_count(std::size_t j, std::size_t n) const;
    std::size_t total_jumps() const;

    /// Replaces trajectory j's jumps; they must be sorted by time.
    void set_jumps(std::size_t j, std::vector<JumpRecord> jumps);

    /// Terminal states X_T as an M×d row-major array.
    std::vector<double> terminal_states() const;

    const std::vector<double>& states() const noexcept { return states_; }
    const std::vector<double>& brownian() const noexcept { return brownian_; }

private:
    std::size_t paths_;
    std::size_t steps_;
    std::size_t dim_;
    double horizon_;
    std::vector<double> states_;
    std::vector<double> brownian_;
    std::vector<std::vector<JumpRecord>> jumps_;
    std::vector<std::size_t> jump_offsets_;
};

struct BatchStream {
    StreamFactory factory;
    StreamPurpose purpose = StreamPurpose::kTraining;
    std::uint64_t iteration = 0;
};

/// Simulates M trajectories of
///
///   X_{n+1} = X_n + b(X_n)Δt + σ(X_n)ΔW_n + Σ_{jumps in (t_n, t_{n+1}]} G(X_n, z_i) − Δt ∫G(X_n, z)ν(dz).
///
/// Trajectory j draws everything from stream (purpose, iteration, j), so the
/// result does not depend on `threads`.
PathBatch simulate_batch(const ProblemSpec& problem, std::size_t paths, std::size_t steps, const BatchStream& stream,
                         unsigned threads = 1);

}  // namespace levytd
