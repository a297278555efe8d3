#pragma once

#include "levytd/random.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace levytd {

/// Jump-size distribution φ of a compound Poisson process.
///
/// Four scalar laws plus a d-dimensional point mass. Construct through the
/// named factories, which validate parameters.
class JumpLaw {
public:
    struct Normal {
        double mean;
        double stddev;
    };
    struct Uniform {
        double half_width;
    };
    struct Exponential {
        double rate;
    };
    /// Takes `low` with probability `p_low`, `high` otherwise.
    struct Bernoulli {
        double low;
        double high;
        double p_low;
    };
    struct ConstantVector {
        double value;
        std::size_t dim;
    };

    using Variant = std::variant<Normal, Uniform, Exponential, Bernoulli, ConstantVector>;

    static JumpLaw normal(double mean, double stddev);
    static JumpLaw uniform(double half_width);
    static JumpLaw exponential(double rate);
    static JumpLaw bernoulli(double low, double high, double p_low);
    static JumpLaw constant_vector(double value, std::size_t dim);

    /// Builds a law from a CLI-style name ("normal", "uniform", "exponential",
    /// "bernoulli", "constant") and its positional parameters. `dim` is only
    /// used by "constant".
    static JumpLaw from_name(const std::string& name, std::span<const double> params, std::size_t dim = 1);

    const Variant& variant() const noexcept { return law_; }
    std::string name() const;
    std::vector<double> parameters() const;

    /// Dimension of a sample: 1 for scalar laws, d for ConstantVector.
    std::size_t dimension() const noexcept;
    bool is_scalar() const noexcept { return !std::holds_alternative<ConstantVector>(law_); }

    std::vector<double> sample(Rng& rng) const;
    /// Writes one sample into `out` (size dimension()).
    void sample_into(Rng& rng, std::span<double> out) const;

    /// ∫ h(z) φ(dz) by adaptive quadrature (exact finite sums for atomic laws).
    double integrate(const std::function<double(std::span<const double>)>& h) const;

private:
    explicit JumpLaw(Variant law) : law_(law) {}
    Variant law_;
};

}  // namespace levytd
