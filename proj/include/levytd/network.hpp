#pragma once

#include "levytd/autodiff.hpp"
#include "levytd/random.hpp"
#include "levytd/tensor.hpp"

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace levytd {

struct NetConfig {
    /// d + 1: time plus the spatial coordinates.
    std::size_t input_dim = 2;
    std::size_t width = 25;
    std::size_t blocks = 5;

    /// Width 25 for one spatial dimension, d + 10 otherwise.
    static NetConfig for_dimension(std::size_t d);

    std::size_t spatial_dim() const noexcept { return input_dim - 1; }
    void validate() const;

    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Residual network (t, x) ↦ (N1, N2) ∈ ℝ².
///
///   a¹ = W_lift·(t, x) + b_lift
///   a ← tanh(W₂·tanh(W₁·a + b₁) + b₂) + a        (once per block)
///   out = W_head·a + b_head
///
/// N1 approximates u(t, x); N2 approximates ∫(u(t, x + G(x,z)) − u(t, x)) ν(dz).
class Net {
public:
    explicit Net(NetConfig config);

    const NetConfig& config() const noexcept { return config_; }

    std::vector<Tensor>& parameters() noexcept { return params_; }
    const std::vector<Tensor>& parameters() const noexcept { return params_; }
    const std::vector<std::string>& parameter_names() const noexcept { return names_; }
    std::size_t parameter_count() const noexcept;

    // Indices into parameters().
    static constexpr std::size_t kLiftWeight = 0;
    static constexpr std::size_t kLiftBias = 1;
    std::size_t block_weight(std::size_t block, std::size_t layer) const noexcept { return 2 + 4 * block + 2 * layer; }
    std::size_t block_bias(std::size_t block, std::size_t layer) const noexcept { return 3 + 4 * block + 2 * layer; }
    std::size_t head_weight() const noexcept { return 2 + 4 * config_.blocks; }
    std::size_t head_bias() const noexcept { return 3 + 4 * config_.blocks; }

    friend bool operator==(const Net&, const Net&) = default;

private:
    NetConfig config_;
    std::vector<Tensor> params_;
    std::vector<std::string> names_;
};

/// Weights ~ U(−1/√fan_in, 1/√fan_in); biases zero.
Net init_net(const NetConfig& config, Rng& rng);

/// Parameter leaves of one network bound to a tape.
struct BoundNet {
    const Net* net = nullptr;
    std::vector<Var> params;
};

BoundNet bind(Tape& tape, const Net& net, bool requires_grad = true);

/// Intermediate nodes of one batched forward pass, kept for the input-gradient graph.
struct NetGraph {
    Var input;
    Var output;  ///< rows × 2
    std::vector<Var> hidden;       ///< tanh(W₁a + b₁) per block
    std::vector<Var> block_out;    ///< tanh(W₂h + b₂) per block
};

/// `input` is rows × (d+1) with time in column 0.
NetGraph build_forward(const BoundNet& net, Var input);

/// ∂N1/∂input (rows × (d+1)) recorded as ordinary tape operations, so it can
/// itself be differentiated with respect to the parameters.
Var build_input_gradient(const BoundNet& net, const NetGraph& graph);

/// Row-major rows × (d+1) input matrix from a common time and a batch of points.
Tensor make_input(double t, std::span<const double> x, std::size_t rows, std::size_t dim);

struct NetOutputs {
    std::vector<double> n1;
    std::vector<double> n2;
};

/// Evaluates both outputs at (t, x_j) for a row-major batch x of `rows` points.
NetOutputs forward(const Net& net, double t, std::span<const double> x, std::size_t rows);

/// ∇ₓN1(t, x_j) per row (rows × d, row-major), computed by a reverse pass with
/// the input marked as requiring gradients.
std::vector<double> grad_x_n1(const Net& net, double t, std::span<const double> x, std::size_t rows);

void save_checkpoint(const Net& net, std::ostream& out);
Net load_checkpoint(std::istream& in);
void save_checkpoint(const Net& net, const std::string& path);
Net load_checkpoint(const std::string& path);

}  // namespace levytd
