#include "levytd/problems.hpp"

#include "levytd/errors.hpp"
#include "levytd/stochastic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace levytd {

bool ProblemSpec::has_diffusion() const {
    if (isotropic_diffusion) {
        return *isotropic_diffusion != 0.0;
    }
    return static_cast<bool>(diffusion);
}

void ProblemSpec::apply_diffusion(std::span<const double> x, std::span<const double> v, std::span<double> out) const {
    if (isotropic_diffusion) {
        const double s = *isotropic_diffusion;
        for (std::size_t k = 0; k < dim; ++k) {
            out[k] = s * v[k];
        }
        return;
    }
    const std::vector<double> sigma = diffusion_matrix(x);
    for (std::size_t r = 0; r < dim; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
            acc += sigma[r * dim + c] * v[c];
        }
        out[r] = acc;
    }
}

void ProblemSpec::apply_diffusion_transpose(std::span<const double> x, std::span<const double> v,
                                            std::span<double> out) const {
    if (isotropic_diffusion) {
        apply_diffusion(x, v, out);
        return;
    }
    const std::vector<double> sigma = diffusion_matrix(x);
    for (std::size_t c = 0; c < dim; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < dim; ++r) {
            acc += sigma[r * dim + c] * v[r];
        }
        out[c] = acc;
    }
}

std::vector<double> ProblemSpec::diffusion_matrix(std::span<const double> x) const {
    std::vector<double> sigma(dim * dim, 0.0);
    if (isotropic_diffusion) {
        for (std::size_t k = 0; k < dim; ++k) {
            sigma[k * dim + k] = *isotropic_diffusion;
        }
    } else if (diffusion) {
        diffusion(x, sigma);
    }
    return sigma;
}

double ProblemSpec::exact_initial_value() const {
    if (!exact) {
        throw ParameterError("problem '" + name + "' has no exact solution");
    }
    return exact(0.0, initial_point);
}

namespace {

/// G(x,z) = x(e^z − 1) coordinatewise, with compensator λ·x·(E[e^Z] − 1).
void use_multiplicative_jumps(ProblemSpec& p) {
    if (!p.law.is_scalar()) {
        throw UnsupportedLawError("multiplicative jumps need a scalar jump law");
    }
    const double rate = p.intensity * compensator_exp_moment(p.law);
    p.jump_coefficient = [](std::span<const double> x, std::span<const double> z, std::span<double> out) {
        const double factor = std::expm1(z[0]);
        for (std::size_t k = 0; k < x.size(); ++k) {
            out[k] = x[k] * factor;
        }
    };
    p.compensator = [rate](std::span<const double> x, std::span<double> out) {
        for (std::size_t k = 0; k < x.size(); ++k) {
            out[k] = rate * x[k];
        }
    };
}

/// G(x,z) = z, with compensator λ·E[Z].
void use_additive_jumps(ProblemSpec& p) {
    std::vector<double> mean = compensator_mean(p.law);
    for (double& m : mean) {
        m *= p.intensity;
    }
    if (mean.size() == 1 && p.dim > 1) {
        mean.assign(p.dim, mean[0]);
    }
    p.jump_coefficient = [](std::span<const double> x, std::span<const double> z, std::span<double> out) {
        for (std::size_t k = 0; k < x.size(); ++k) {
            out[k] = z.size() == 1 ? z[0] : z[k];
        }
    };
    p.compensator = [mean](std::span<const double>, std::span<double> out) {
        std::copy(mean.begin(), mean.end(), out.begin());
    };
}

void check_intensity(double intensity) {
    if (!(intensity >= 0.0) || !std::isfinite(intensity)) {
        throw ParameterError("jump intensity must be a finite value >= 0");
    }
}

double squared_norm(std::span<const double> x) { return std::inner_product(x.begin(), x.end(), x.begin(), 0.0); }

}  // namespace

ProblemSpec pure_jump_1d(double intensity, double jump_mean, double jump_stddev) {
    check_intensity(intensity);
    ProblemSpec p;
    p.name = "pure_jump_1d";
    p.dim = 1;
    p.horizon = 1.0;
    p.initial_point = {1.0};
    p.intensity = intensity;
    p.law = JumpLaw::normal(jump_mean, jump_stddev);
    p.drift = [](std::span<const double>, std::span<double> out) { out[0] = 0.0; };
    p.isotropic_diffusion = 0.0;
    use_multiplicative_jumps(p);
    p.driver = [](double, std::span<const double>, double, std::span<const double>) { return 0.0; };
    p.terminal = [](std::span<const double> x) { return x[0]; };
    p.terminal_gradient = [](std::span<const double>, std::span<double> out) { out[0] = 1.0; };
    p.exact = [](double, std::span<const double> x) { return x[0]; };
    return p;
}

ProblemSpec robustness_1d(double epsilon, double theta, double intensity, const JumpLaw& law) {
    check_intensity(intensity);
    if (!law.is_scalar()) {
        throw UnsupportedLawError("robustness_1d needs a scalar jump law");
    }
    ProblemSpec p;
    p.name = "robustness_1d";
    p.dim = 1;
    p.horizon = 1.0;
    p.initial_point = {1.0};
    p.intensity = intensity;
    p.law = law;
    p.drift = [epsilon](std::span<const double> x, std::span<double> out) { out[0] = epsilon * x[0]; };
    p.isotropic_diffusion = theta;
    use_multiplicative_jumps(p);
    p.driver = [epsilon](double, std::span<const double> x, double, std::span<const double>) {
        return -epsilon * x[0];
    };
    p.terminal = [](std::span<const double> x) { return x[0]; };
    p.terminal_gradient = [](std::span<const double>, std::span<double> out) { out[0] = 1.0; };
    p.exact = [](double, std::span<const double> x) { return x[0]; };
    return p;
}

ProblemSpec highdim(std::size_t dim, double epsilon, double theta, double intensity, double jump) {
    if (dim < 1) {
        throw ParameterError("highdim needs dimension >= 1");
    }
    check_intensity(intensity);
    ProblemSpec p;
    p.name = "highdim";
    p.dim = dim;
    p.horizon = 1.0;
    p.initial_point.assign(dim, 1.0);
    p.intensity = intensity;
    p.law = JumpLaw::constant_vector(jump, dim);
    p.drift = [epsilon](std::span<const double> x, std::span<double> out) {
        for (std::size_t k = 0; k < x.size(); ++k) {
            out[k] = 0.5 * epsilon * x[k];
        }
    };
    p.isotropic_diffusion = theta;
    use_additive_jumps(p);
    const double d = static_cast<double>(dim);
    const double constant = intensity * jump * jump + theta * theta;
    p.driver = [=](double, std::span<const double> x, double, std::span<const double>) {
        return -(constant + epsilon / d * squared_norm(x));
    };
    p.terminal = [d](std::span<const double> x) { return squared_norm(x) / d; };
    p.terminal_gradient = [d](std::span<const double> x, std::span<double> out) {
        for (std::size_t k = 0; k < x.size(); ++k) {
            out[k] = 2.0 * x[k] / d;
        }
    };
    p.exact = [d](double, std::span<const double> x) { return squared_norm(x) / d; };
    return p;
}

std::vector<std::string> problem_names() { return {"pure_jump_1d", "robustness_1d", "highdim"}; }

double nonlocal_term(const ProblemSpec& problem, const SpaceTimeField& u, double t, std::span<const double> x) {
    const std::size_t d = problem.dim;
    const double base = u(t, x);
    std::vector<double> shifted(d), jump(d);
    const double integral = problem.law.integrate([&](std::span<const double> z) {
        problem.jump_coefficient(x, z, jump);
        for (std::size_t k = 0; k < d; ++k) {
            shifted[k] = x[k] + jump[k];
        }
        return u(t, shifted) - base;
    });
    return problem.intensity * integral;
}

double pide_residual(const ProblemSpec& problem, const SpaceTimeField& u, double t, std::span<const double> x,
                     double h) {
    const std::size_t d = problem.dim;
    std::vector<double> xp(x.begin(), x.end());
    const double center = u(t, x);

    const double du_dt = (u(t + h, x) - u(t - h, x)) / (2.0 * h);

    std::vector<double> grad(d);
    for (std::size_t k = 0; k < d; ++k) {
        xp[k] = x[k] + h;
        const double up = u(t, xp);
        xp[k] = x[k] - h;
        const double down = u(t, xp);
        xp[k] = x[k];
        grad[k] = (up - down) / (2.0 * h);
    }

    // ½ Tr(σσᵀ H) with a = σσᵀ; off-diagonal second differences only where a is non-zero.
    const std::vector<double> sigma = problem.diffusion_matrix(x);
    double diffusion_term = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            double a = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                a += sigma[i * d + k] * sigma[j * d + k];
            }
            if (a == 0.0) {
                continue;
            }
            double hess = 0.0;
            if (i == j) {
                xp[i] = x[i] + h;
                const double up = u(t, xp);
                xp[i] = x[i] - h;
                const double down = u(t, xp);
                xp[i] = x[i];
                hess = (up - 2.0 * center + down) / (h * h);
            } else {
                auto eval = [&](double si, double sj) {
                    xp[i] = x[i] + si * h;
                    xp[j] = x[j] + sj * h;
                    const double v = u(t, xp);
                    xp[i] = x[i];
                    xp[j] = x[j];
                    return v;
                };
                hess = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * h * h);
            }
            diffusion_term += 0.5 * a * hess;
        }
    }

    std::vector<double> drift(d);
    problem.drift(x, drift);
    const double transport = std::inner_product(drift.begin(), drift.end(), grad.begin(), 0.0);

    std::vector<double> shifted(d), jump(d);
    const double jump_term = problem.intensity * problem.law.integrate([&](std::span<const double> z) {
        problem.jump_coefficient(x, z, jump);
        for (std::size_t k = 0; k < d; ++k) {
            shifted[k] = x[k] + jump[k];
        }
        return u(t, shifted) - center - std::inner_product(jump.begin(), jump.end(), grad.begin(), 0.0);
    });

    std::vector<double> w(d);
    problem.apply_diffusion_transpose(x, grad, w);
    const double source = problem.driver(t, x, center, w);

    return du_dt + transport + diffusion_term + jump_term + source;
}

}  // namespace levytd
