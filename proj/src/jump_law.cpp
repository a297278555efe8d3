#include "levytd/jump_law.hpp"

#include "levytd/errors.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <array>
#include <cmath>
#include <limits>
#include <random>

namespace levytd {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double gauss_kronrod(const std::function<double(double)>& f, double a, double b) {
    using boost::math::quadrature::gauss_kronrod;
    double error = 0.0;
    return gauss_kronrod<double, 61>::integrate(f, a, b, 10, 1e-14, &error);
}

}  // namespace

JumpLaw JumpLaw::normal(double mean, double stddev) {
    if (!(stddev > 0.0) || !std::isfinite(mean) || !std::isfinite(stddev)) {
        throw ParameterError("normal jump law requires a finite stddev > 0");
    }
    return JumpLaw(Normal{mean, stddev});
}

JumpLaw JumpLaw::uniform(double half_width) {
    if (!(half_width > 0.0) || !std::isfinite(half_width)) {
        throw ParameterError("uniform jump law requires half-width > 0");
    }
    return JumpLaw(Uniform{half_width});
}

JumpLaw JumpLaw::exponential(double rate) {
    if (!(rate > 0.0) || !std::isfinite(rate)) {
        throw ParameterError("exponential jump law requires rate > 0");
    }
    return JumpLaw(Exponential{rate});
}

JumpLaw JumpLaw::bernoulli(double low, double high, double p_low) {
    if (!(p_low >= 0.0 && p_low <= 1.0) || !std::isfinite(low) || !std::isfinite(high)) {
        throw ParameterError("bernoulli jump law requires 0 <= p <= 1 and finite atoms");
    }
    return JumpLaw(Bernoulli{low, high, p_low});
}

JumpLaw JumpLaw::constant_vector(double value, std::size_t dim) {
    if (dim < 1 || !std::isfinite(value)) {
        throw ParameterError("constant jump law requires dimension >= 1 and a finite value");
    }
    return JumpLaw(ConstantVector{value, dim});
}

JumpLaw JumpLaw::from_name(const std::string& name, std::span<const double> params, std::size_t dim) {
    auto expect = [&](std::size_t n) {
        if (params.size() != n) {
            throw ParameterError("jump law '" + name + "' expects " + std::to_string(n) + " parameter(s), got " +
                                 std::to_string(params.size()));
        }
    };
    if (name == "normal") {
        expect(2);
        return normal(params[0], params[1]);
    }
    if (name == "uniform") {
        expect(1);
        return uniform(params[0]);
    }
    if (name == "exponential") {
        expect(1);
        return exponential(params[0]);
    }
    if (name == "bernoulli") {
        expect(3);
        return bernoulli(params[0], params[1], params[2]);
    }
    if (name == "constant") {
        expect(1);
        return constant_vector(params[0], dim);
    }
    throw ParameterError("unknown jump law '" + name + "'");
}

std::string JumpLaw::name() const {
    return std::visit(Overloaded{
                          [](const Normal&) { return std::string("normal"); },
                          [](const Uniform&) { return std::string("uniform"); },
                          [](const Exponential&) { return std::string("exponential"); },
                          [](const Bernoulli&) { return std::string("bernoulli"); },
                          [](const ConstantVector&) { return std::string("constant"); },
                      },
                      law_);
}

std::vector<double> JumpLaw::parameters() const {
    return std::visit(Overloaded{
                          [](const Normal& l) { return std::vector<double>{l.mean, l.stddev}; },
                          [](const Uniform& l) { return std::vector<double>{l.half_width}; },
                          [](const Exponential& l) { return std::vector<double>{l.rate}; },
                          [](const Bernoulli& l) { return std::vector<double>{l.low, l.high, l.p_low}; },
                          [](const ConstantVector& l) { return std::vector<double>{l.value}; },
                      },
                      law_);
}

std::size_t JumpLaw::dimension() const noexcept {
    if (const auto* c = std::get_if<ConstantVector>(&law_)) {
        return c->dim;
    }
    return 1;
}

std::vector<double> JumpLaw::sample(Rng& rng) const {
    std::vector<double> out(dimension());
    sample_into(rng, out);
    return out;
}

void JumpLaw::sample_into(Rng& rng, std::span<double> out) const {
    std::visit(Overloaded{
                   [&](const Normal& l) { out[0] = std::normal_distribution<double>(l.mean, l.stddev)(rng); },
                   [&](const Uniform& l) {
                       out[0] = std::uniform_real_distribution<double>(-l.half_width, l.half_width)(rng);
                   },
                   [&](const Exponential& l) { out[0] = std::exponential_distribution<double>(l.rate)(rng); },
                   [&](const Bernoulli& l) {
                       out[0] = std::bernoulli_distribution(l.p_low)(rng) ? l.low : l.high;
                   },
                   [&](const ConstantVector& l) {
                       for (auto& v : out) {
                           v = l.value;
                       }
                   },
               },
               law_);
}

double JumpLaw::integrate(const std::function<double(std::span<const double>)>& h) const {
    auto scalar = [&h](double z) {
        const std::array<double, 1> point{z};
        return h(point);
    };
    return std::visit(
        Overloaded{
            [&](const Normal& l) {
                // Mass outside ±14σ is below 1e-44.
                const double lo = l.mean - 14.0 * l.stddev;
                const double hi = l.mean + 14.0 * l.stddev;
                const double norm = 1.0 / (std::sqrt(2.0 * M_PI) * l.stddev);
                return gauss_kronrod(
                    [&](double z) {
                        const double u = (z - l.mean) / l.stddev;
                        return scalar(z) * norm * std::exp(-0.5 * u * u);
                    },
                    lo, hi);
            },
            [&](const Uniform& l) {
                return gauss_kronrod(scalar, -l.half_width, l.half_width) / (2.0 * l.half_width);
            },
            [&](const Exponential& l) {
                boost::math::quadrature::exp_sinh<double> integrator;
                return integrator.integrate(
                    [&](double z) {
                        const double density = l.rate * std::exp(-l.rate * z);
                        return density == 0.0 ? 0.0 : scalar(z) * density;
                    },
                    0.0,
                                            std::numeric_limits<double>::infinity(), 1e-14);
            },
            [&](const Bernoulli& l) { return l.p_low * scalar(l.low) + (1.0 - l.p_low) * scalar(l.high); },
            [&](const ConstantVector& l) {
                const std::vector<double> point(l.dim, l.value);
                return h(point);
            },
        },
        law_);
}

}  // namespace levytd
