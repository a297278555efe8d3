#pragma once

#include "levytd/autodiff.hpp"
#include "levytd/problem_spec.hpp"
#include "levytd/stochastic.hpp"
#include "levytd/trainer.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace levytd::testing {

/// b = 0, σ = 0, λ = 0, f = 0, g = x₀.
inline ProblemSpec zero_dynamics(std::size_t dim = 1) {
    ProblemSpec p;
    p.name = "zero_dynamics";
    p.dim = dim;
    p.initial_point.assign(dim, 0.7);
    p.intensity = 0.0;
    p.law = JumpLaw::normal(0.0, 1.0);
    p.drift = [](std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
    p.isotropic_diffusion = 0.0;
    p.jump_coefficient = [](std::span<const double>, std::span<const double> z, std::span<double> out) {
        std::copy(z.begin(), z.end(), out.begin());
    };
    p.compensator = [](std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
    p.driver = [](double, std::span<const double>, double, std::span<const double>) { return 0.0; };
    p.terminal = [](std::span<const double> x) { return x[0]; };
    p.terminal_gradient = [](std::span<const double>, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
        out[0] = 1.0;
    };
    p.exact = [](double, std::span<const double> x) { return x[0]; };
    return p;
}

/// Exact (u, U, ∇u) for the 1-D problems with u = x and G(x,z) = x(e^z − 1).
inline SolutionModel linear_oracle(double intensity, double exp_moment) {
    SolutionModel m;
    m.value = [](double, std::span<const double> x, std::size_t rows) {
        return std::vector<double>(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(rows));
    };
    m.nonlocal = [=](double, std::span<const double> x, std::size_t rows) {
        std::vector<double> out(rows);
        for (std::size_t j = 0; j < rows; ++j) {
            out[j] = x[j] * intensity * exp_moment;
        }
        return out;
    };
    m.gradient = [](double, std::span<const double>, std::size_t rows) { return std::vector<double>(rows, 1.0); };
    return m;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

inline double variance_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) {
        s += (x - m) * (x - m);
    }
    return s / static_cast<double>(v.size() - 1);
}

/// |a − b| relative to the larger magnitude, or 0 when both differ by less than `floor`.
inline double relative_gap(double a, double b, double floor = 1e-8) {
    const double gap = std::abs(a - b);
    if (gap < floor) {
        return 0.0;
    }
    return gap / std::max(std::abs(a), std::abs(b));
}

using GraphBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Largest relative gap between reverse-mode gradients and central differences of step h
/// over every entry of every input.
inline double max_fd_gap(const GraphBuilder& build, const std::vector<Tensor>& inputs, double h = 1e-5) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) {
        leaves.push_back(tape.leaf(t, true));
    }
    const Gradients grads = tape.backward(build(tape, leaves));

    auto evaluate = [&](const std::vector<Tensor>& values) {
        Tape t;
        std::vector<Var> vs;
        for (const auto& v : values) {
            vs.push_back(t.leaf(v, false));
        }
        return build(t, vs).value().item();
    };
    double worst = 0.0;
    std::vector<Tensor> probe = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t e = 0; e < inputs[i].size(); ++e) {
            const double x0 = inputs[i][e];
            probe[i][e] = x0 + h;
            const double up = evaluate(probe);
            probe[i][e] = x0 - h;
            const double down = evaluate(probe);
            probe[i][e] = x0;
            const double fd = (up - down) / (2.0 * h);
            worst = std::max(worst, relative_gap(grads.of(leaves[i])[e], fd));
        }
    }
    return worst;
}

inline constexpr double kPi = 3.14159265358979323846;

// Direct quadrature of ∫(e^z − 1)φ(z)dz, written against the densities rather than JumpLaw::integrate.
inline double exp_moment_by_quadrature(const JumpLaw& law) {
    using boost::math::quadrature::gauss_kronrod;
    const auto& v = law.variant();
    if (const auto* n = std::get_if<JumpLaw::Normal>(&v)) {
        auto f = [&](double z) {
            const double u = (z - n->mean) / n->stddev;
            return std::expm1(z) * std::exp(-0.5 * u * u) / (n->stddev * std::sqrt(2.0 * kPi));
        };
        return gauss_kronrod<double, 61>::integrate(f, n->mean - 20 * n->stddev, n->mean + 20 * n->stddev, 15, 1e-14);
    }
    if (const auto* u = std::get_if<JumpLaw::Uniform>(&v)) {
        auto f = [&](double z) { return std::expm1(z) / (2.0 * u->half_width); };
        return gauss_kronrod<double, 61>::integrate(f, -u->half_width, u->half_width, 15, 1e-14);
    }
    if (const auto* e = std::get_if<JumpLaw::Exponential>(&v)) {
        boost::math::quadrature::exp_sinh<double> integrator;
        auto f = [&](double z) { return e->rate * (std::exp((1.0 - e->rate) * z) - std::exp(-e->rate * z)); };
        return integrator.integrate(f, 0.0, std::numeric_limits<double>::infinity());
    }
    const auto& b = std::get<JumpLaw::Bernoulli>(v);
    return b.p_low * std::expm1(b.low) + (1.0 - b.p_low) * std::expm1(b.high);
}

}  // namespace levytd::testing
