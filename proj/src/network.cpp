#include "levytd/network.hpp"

#include "levytd/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace levytd {

namespace {

constexpr const char* kCheckpointHeader = "levytd-ckpt-v1";

}  // namespace

NetConfig NetConfig::for_dimension(std::size_t d) {
    NetConfig config;
    config.input_dim = d + 1;
    config.width = d == 1 ? 25 : d + 10;
    config.blocks = 5;
    return config;
}

void NetConfig::validate() const {
    if (input_dim < 2) {
        throw ParameterError("network input must hold time and at least one spatial coordinate");
    }
    if (width < 1 || blocks < 1) {
        throw ParameterError("network width and block count must be >= 1");
    }
}

Net::Net(NetConfig config) : config_(config) {
    config_.validate();
    const std::size_t w = config_.width;
    params_.emplace_back(std::vector<std::size_t>{w, config_.input_dim});
    params_.emplace_back(std::vector<std::size_t>{w});
    names_ = {"lift.weight", "lift.bias"};
    for (std::size_t b = 0; b < config_.blocks; ++b) {
        for (std::size_t layer = 0; layer < 2; ++layer) {
            params_.emplace_back(std::vector<std::size_t>{w, w});
            params_.emplace_back(std::vector<std::size_t>{w});
            const std::string prefix = "block" + std::to_string(b) + ".linear" + std::to_string(layer);
            names_.push_back(prefix + ".weight");
            names_.push_back(prefix + ".bias");
        }
    }
    params_.emplace_back(std::vector<std::size_t>{2, w});
    params_.emplace_back(std::vector<std::size_t>{2});
    names_.push_back("head.weight");
    names_.push_back("head.bias");
}

std::size_t Net::parameter_count() const noexcept {
    std::size_t total = 0;
    for (const auto& p : params_) {
        total += p.size();
    }
    return total;
}

Net init_net(const NetConfig& config, Rng& rng) {
    Net net(config);
    for (auto& p : net.parameters()) {
        if (p.rank() != 2) {
            continue;
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(p.cols()));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : p.data()) {
            v = dist(rng);
        }
    }
    return net;
}

BoundNet bind(Tape& tape, const Net& net, bool requires_grad) {
    BoundNet bound;
    bound.net = &net;
    bound.params.reserve(net.parameters().size());
    for (const auto& p : net.parameters()) {
        bound.params.push_back(tape.leaf(p, requires_grad));
    }
    return bound;
}

NetGraph build_forward(const BoundNet& bound, Var input) {
    const Net& net = *bound.net;
    const auto& p = bound.params;
    if (input.value().rank() != 2 || input.value().cols() != net.config().input_dim) {
        throw DimensionError("network input must be rows x " + std::to_string(net.config().input_dim) + ", got " +
                             input.value().shape_string());
    }
    NetGraph graph;
    graph.input = input;
    Var a = affine(p[Net::kLiftWeight], input, p[Net::kLiftBias]);
    for (std::size_t b = 0; b < net.config().blocks; ++b) {
        Var h = tanh(affine(p[net.block_weight(b, 0)], a, p[net.block_bias(b, 0)]));
        Var o = tanh(affine(p[net.block_weight(b, 1)], h, p[net.block_bias(b, 1)]));
        graph.hidden.push_back(h);
        graph.block_out.push_back(o);
        a = add(o, a);
    }
    graph.output = affine(p[net.head_weight()], a, p[net.head_bias()]);
    return graph;
}

Var build_input_gradient(const BoundNet& bound, const NetGraph& graph) {
    const Net& net = *bound.net;
    const auto& p = bound.params;
    const std::size_t rows = graph.input.value().rows();
    // Adjoint of the trunk output for the first head row.
    Var g = repeat_rows(slice_rows(p[net.head_weight()], 0, 1), rows);
    for (std::size_t b = net.config().blocks; b-- > 0;) {
        Var dq = tanh_backprop(g, graph.block_out[b]);
        Var dh = matmul(dq, p[net.block_weight(b, 1)]);
        Var dp = tanh_backprop(dh, graph.hidden[b]);
        g = add(g, matmul(dp, p[net.block_weight(b, 0)]));
    }
    return matmul(g, p[Net::kLiftWeight]);
}

Tensor make_input(double t, std::span<const double> x, std::size_t rows, std::size_t dim) {
    if (x.size() != rows * dim) {
        throw DimensionError("batch of " + std::to_string(rows) + " points in dimension " + std::to_string(dim) +
                             " needs " + std::to_string(rows * dim) + " values, got " + std::to_string(x.size()));
    }
    Tensor in({rows, dim + 1});
    for (std::size_t r = 0; r < rows; ++r) {
        in.at(r, 0) = t;
        for (std::size_t k = 0; k < dim; ++k) {
            in.at(r, k + 1) = x[r * dim + k];
        }
    }
    return in;
}

NetOutputs forward(const Net& net, double t, std::span<const double> x, std::size_t rows) {
    Tape tape;
    const BoundNet bound = bind(tape, net, false);
    const Var input = tape.constant(make_input(t, x, rows, net.config().spatial_dim()));
    const Tensor& out = build_forward(bound, input).output.value();
    NetOutputs result;
    result.n1.resize(rows);
    result.n2.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        result.n1[r] = out.at(r, 0);
        result.n2[r] = out.at(r, 1);
    }
    return result;
}

std::vector<double> grad_x_n1(const Net& net, double t, std::span<const double> x, std::size_t rows) {
    const std::size_t d = net.config().spatial_dim();
    Tape tape;
    const BoundNet bound = bind(tape, net, false);
    const Var input = tape.leaf(make_input(t, x, rows, d), true);
    const NetGraph graph = build_forward(bound, input);
    // Rows are independent, so one pass over Σ_j N1_j yields every row's gradient.
    const Gradients grads = tape.backward(sum(slice_cols(graph.output, 0, 1)));
    const Tensor& g = grads.of(input);
    std::vector<double> out(rows * d);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < d; ++k) {
            out[r * d + k] = g.at(r, k + 1);
        }
    }
    return out;
}

void save_checkpoint(const Net& net, std::ostream& out) {
    const auto& c = net.config();
    out << kCheckpointHeader << '\n';
    out << "config " << c.input_dim << ' ' << c.width << ' ' << c.blocks << '\n';
    char buf[32];
    for (std::size_t i = 0; i < net.parameters().size(); ++i) {
        const Tensor& p = net.parameters()[i];
        out << "tensor " << net.parameter_names()[i] << ' ' << p.rank();
        for (std::size_t s : p.shape()) {
            out << ' ' << s;
        }
        out << '\n';
        for (std::size_t k = 0; k < p.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", p[k]);
            out << (k == 0 ? "" : " ") << buf;
        }
        out << '\n';
    }
}

Net load_checkpoint(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointHeader) {
        throw ParameterError("not a levytd checkpoint (missing '" + std::string(kCheckpointHeader) + "' header)");
    }
    std::string tag;
    NetConfig config;
    if (!(in >> tag >> config.input_dim >> config.width >> config.blocks) || tag != "config") {
        throw ParameterError("checkpoint: malformed config line");
    }
    Net net(config);
    for (std::size_t i = 0; i < net.parameters().size(); ++i) {
        std::string name;
        std::size_t rank = 0;
        if (!(in >> tag >> name >> rank) || tag != "tensor") {
            throw ParameterError("checkpoint: malformed tensor record " + std::to_string(i));
        }
        std::vector<std::size_t> shape(rank);
        for (auto& s : shape) {
            in >> s;
        }
        Tensor& p = net.parameters()[i];
        if (name != net.parameter_names()[i] || shape != p.shape()) {
            throw ParameterError("checkpoint: tensor '" + name + "' does not match the architecture");
        }
        for (double& v : p.data()) {
            std::string token;
            in >> token;
            v = std::strtod(token.c_str(), nullptr);
        }
        if (!in) {
            throw ParameterError("checkpoint: truncated values for '" + name + "'");
        }
    }
    return net;
}

void save_checkpoint(const Net& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw ParameterError("cannot write checkpoint " + path);
    }
    save_checkpoint(net, out);
}

Net load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParameterError("cannot read checkpoint " + path);
    }
    return load_checkpoint(in);
}

}  // namespace levytd
