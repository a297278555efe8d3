#include "levytd/stochastic.hpp"

#include "levytd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <random>
#include <thread>

namespace levytd {

std::vector<double> sample_jump_times(double intensity, double horizon, Rng& rng) {
    if (!(intensity >= 0.0) || !std::isfinite(intensity)) {
        throw ParameterError("jump intensity must be a finite value >= 0");
    }
    if (!(horizon > 0.0) || !std::isfinite(horizon)) {
        throw ParameterError("horizon must be a finite value > 0");
    }
    std::vector<double> times;
    if (intensity == 0.0) {
        return times;
    }
    std::exponential_distribution<double> gap(intensity);
    double t = gap(rng);
    while (t <= horizon) {
        times.push_back(t);
        t += gap(rng);
    }
    return times;
}

std::vector<double> sample_jump_size(const JumpLaw& law, Rng& rng) { return law.sample(rng); }

double compensator_exp_moment(const JumpLaw& law) {
    const auto& v = law.variant();
    if (const auto* l = std::get_if<JumpLaw::Normal>(&v)) {
        return std::exp(l->mean + 0.5 * l->stddev * l->stddev) - 1.0;
    }
    if (const auto* l = std::get_if<JumpLaw::Uniform>(&v)) {
        return std::sinh(l->half_width) / l->half_width - 1.0;
    }
    if (const auto* l = std::get_if<JumpLaw::Exponential>(&v)) {
        if (!(l->rate > 1.0)) {
            throw DivergentIntegralError("E[e^Z] diverges for an exponential jump law with rate <= 1");
        }
        return l->rate / (l->rate - 1.0) - 1.0;
    }
    if (const auto* l = std::get_if<JumpLaw::Bernoulli>(&v)) {
        return l->p_low * std::exp(l->low) + (1.0 - l->p_low) * std::exp(l->high) - 1.0;
    }
    throw UnsupportedLawError("exponential-moment compensator is defined for scalar jump laws only");
}

std::vector<double> compensator_mean(const JumpLaw& law) {
    const auto& v = law.variant();
    if (const auto* l = std::get_if<JumpLaw::Normal>(&v)) {
        return {l->mean};
    }
    if (std::holds_alternative<JumpLaw::Uniform>(v)) {
        return {0.0};
    }
    if (const auto* l = std::get_if<JumpLaw::Exponential>(&v)) {
        return {1.0 / l->rate};
    }
    if (const auto* l = std::get_if<JumpLaw::Bernoulli>(&v)) {
        return {l->p_low * l->low + (1.0 - l->p_low) * l->high};
    }
    const auto& c = std::get<JumpLaw::ConstantVector>(v);
    return std::vector<double>(c.dim, c.value);
}

std::size_t jump_interval(double time, double horizon, std::size_t steps) {
    const auto grid = [&](std::size_t k) { return horizon * static_cast<double>(k) / static_cast<double>(steps); };
    const double scaled = std::ceil(time * static_cast<double>(steps) / horizon);
    std::size_t n = scaled <= 1.0 ? 0 : std::min(static_cast<std::size_t>(scaled) - 1, steps - 1);
    while (n > 0 && time <= grid(n)) {
        --n;
    }
    while (n + 1 < steps && time > grid(n + 1)) {
        ++n;
    }
    return n;
}

PathBatch::PathBatch(std::size_t paths, std::size_t steps, std::size_t dim, double horizon)
    : paths_(paths),
      steps_(steps),
      dim_(dim),
      horizon_(horizon),
      states_(paths * (steps + 1) * dim, 0.0),
      brownian_(paths * steps * dim, 0.0),
      jumps_(paths),
      jump_offsets_(paths * (steps + 1), 0) {
    if (paths < 1 || steps < 1 || dim < 1) {
        throw ParameterError("a path batch needs at least one path, one step and one dimension");
    }
    if (!(horizon > 0.0)) {
        throw ParameterError("horizon must be > 0");
    }
}

std::span<const double> PathBatch::state(std::size_t j, std::size_t n) const {
    return {states_.data() + (j * (steps_ + 1) + n) * dim_, dim_};
}

std::span<double> PathBatch::state(std::size_t j, std::size_t n) {
    return {states_.data() + (j * (steps_ + 1) + n) * dim_, dim_};
}

std::span<const double> PathBatch::increment(std::size_t j, std::size_t n) const {
    return {brownian_.data() + (j * steps_ + n) * dim_, dim_};
}

std::span<double> PathBatch::increment(std::size_t j, std::size_t n) {
    return {brownian_.data() + (j * steps_ + n) * dim_, dim_};
}

std::span<const JumpRecord> PathBatch::jumps_in_step(std::size_t j, std::size_t n) const {
    const std::size_t* off = jump_offsets_.data() + j * (steps_ + 1);
    return std::span<const JumpRecord>(jumps_[j]).subspan(off[n], off[n + 1] - off[n]);
}

std::size_t PathBatch::jump_count(std::size_t j, std::size_t n) const {
    const std::size_t* off = jump_offsets_.data() + j * (steps_ + 1);
    return off[n + 1] - off[n];
}

std::size_t PathBatch::total_jumps() const {
    std::size_t total = 0;
    for (const auto& js : jumps_) {
        total += js.size();
    }
    return total;
}

void PathBatch::set_jumps(std::size_t j, std::vector<JumpRecord> jumps) {
    std::size_t* off = jump_offsets_.data() + j * (steps_ + 1);
    std::fill(off, off + steps_ + 1, 0);
    // Count per interval, then prefix-sum into offsets.
    for (const auto& jump : jumps) {
        if (!(jump.time > 0.0 && jump.time <= horizon_)) {
            throw ParameterError("jump time outside (0, T]");
        }
        ++off[jump_interval(jump.time, horizon_, steps_) + 1];
    }
    for (std::size_t n = 0; n < steps_; ++n) {
        off[n + 1] += off[n];
    }
    jumps_[j] = std::move(jumps);
}

std::vector<double> PathBatch::terminal_states() const {
    std::vector<double> out(paths_ * dim_);
    for (std::size_t j = 0; j < paths_; ++j) {
        const auto x = state(j, steps_);
        std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(j * dim_));
    }
    return out;
}

namespace {

void simulate_trajectory(const ProblemSpec& problem, PathBatch& batch, std::size_t j, const BatchStream& stream) {
    const std::size_t d = batch.dim();
    const std::size_t steps = batch.steps();
    const double dt = batch.dt();
    Rng rng = stream.factory.stream(stream.purpose, stream.iteration, j);

    std::vector<JumpRecord> jumps;
    for (double t : sample_jump_times(problem.intensity, batch.horizon(), rng)) {
        jumps.push_back({t, sample_jump_size(problem.law, rng)});
    }
    batch.set_jumps(j, std::move(jumps));

    std::normal_distribution<double> normal(0.0, std::sqrt(dt));
    for (std::size_t n = 0; n < steps; ++n) {
        for (double& w : batch.increment(j, n)) {
            w = normal(rng);
        }
    }

    std::vector<double> drift(d), diffusion(d), comp(d), jump(d);
    auto x0 = batch.state(j, 0);
    std::copy(problem.initial_point.begin(), problem.initial_point.end(), x0.begin());
    for (std::size_t n = 0; n < steps; ++n) {
        const auto x = batch.state(j, n);
        auto next = batch.state(j, n + 1);
        problem.drift(x, drift);
        problem.apply_diffusion(x, batch.increment(j, n), diffusion);
        problem.compensator(x, comp);
        for (std::size_t k = 0; k < d; ++k) {
            next[k] = x[k] + drift[k] * dt + diffusion[k] - dt * comp[k];
        }
        for (const auto& z : batch.jumps_in_step(j, n)) {
            problem.jump_coefficient(x, z.size, jump);
            for (std::size_t k = 0; k < d; ++k) {
                next[k] += jump[k];
            }
        }
        for (double v : next) {
            if (!std::isfinite(v)) {
                throw SimulationDivergedError(j, n + 1);
            }
        }
    }
}

}  // namespace

PathBatch simulate_batch(const ProblemSpec& problem, std::size_t paths, std::size_t steps, const BatchStream& stream,
                         unsigned threads) {
    if (problem.initial_point.size() != problem.dim) {
        throw ParameterError("initial point has the wrong dimension");
    }
    if (problem.law.dimension() != 1 && problem.law.dimension() != problem.dim) {
        throw ParameterError("jump law dimension does not match the problem");
    }
    PathBatch batch(paths, steps, problem.dim, problem.horizon);
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(paths)));
    if (threads == 1) {
        for (std::size_t j = 0; j < paths; ++j) {
            simulate_trajectory(problem, batch, j, stream);
        }
        return batch;
    }

    std::vector<std::exception_ptr> failures(threads);
    {
        std::vector<std::jthread> workers;
        const std::size_t chunk = (paths + threads - 1) / threads;
        for (unsigned w = 0; w < threads; ++w) {
            workers.emplace_back([&, w] {
                const std::size_t begin = w * chunk;
                const std::size_t end = std::min(paths, begin + chunk);
                try {
                    for (std::size_t j = begin; j < end; ++j) {
                        simulate_trajectory(problem, batch, j, stream);
                    }
                } catch (...) {
                    failures[w] = std::current_exception();
                }
            });
        }
    }
    // Lowest failing chunk wins, which is the failure a sequential run would hit first.
    for (const auto& failure : failures) {
        if (failure) {
            std::rethrow_exception(failure);
        }
    }
    return batch;
}

}  // namespace levytd
