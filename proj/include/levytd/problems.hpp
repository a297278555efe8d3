#pragma once

#include "levytd/jump_law.hpp"
#include "levytd/problem_spec.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace levytd {

/// 1-D pure-jump PIDE with G(x,z) = x(e^z − 1), Normal jumps and exact solution u = x.
ProblemSpec pure_jump_1d(double intensity = 0.3, double jump_mean = 0.4, double jump_stddev = 0.25);

/// 1-D PIDE with drift εx, diffusion θ, G(x,z) = x(e^z − 1), source εx and exact solution u = x.
ProblemSpec robustness_1d(double epsilon, double theta, double intensity, const JumpLaw& law);

/// d-dimensional PIDE with drift (ε/2)x, diffusion θI, additive constant jumps (c, …, c),
/// terminal ‖x‖²/d and exact solution u = ‖x‖²/d. Starts at ξ = (1, …, 1).
ProblemSpec highdim(std::size_t dim, double epsilon, double theta, double intensity, double jump);

/// Names accepted by the experiment runner.
std::vector<std::string> problem_names();

/// ∫ (u(t, x + G(x,z)) − u(t, x)) ν(dz) by quadrature over the jump law.
double nonlocal_term(const ProblemSpec& problem, const SpaceTimeField& u, double t, std::span<const double> x);

/// Pointwise PIDE residual of a candidate solution u at (t, x), using central
/// differences of step `h` in t and x and quadrature over the jump law.
double pide_residual(const ProblemSpec& problem, const SpaceTimeField& u, double t, std::span<const double> x,
                     double h = 1e-3);

}  // namespace levytd
