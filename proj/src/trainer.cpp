#include "levytd/trainer.hpp"

#include "levytd/errors.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace levytd {

double scheduled_lr(const AdamOptions& adam, std::size_t update_count) {
    const std::size_t drops = adam.drop_every == 0 ? 0 : update_count / adam.drop_every;
    return adam.lr0 / std::pow(adam.drop_factor, static_cast<double>(drops));
}

void TrainOptions::validate() const {
    if (paths < 1 || steps < 1) {
        throw ConfigError("need at least one path and one time step");
    }
    if (td_step < 1 || steps % td_step != 0) {
        throw ConfigError("td_step " + std::to_string(td_step) + " must divide the number of steps " +
                          std::to_string(steps));
    }
    if (!(adam.lr0 > 0.0) || !(adam.drop_factor > 0.0)) {
        throw ConfigError("learning rate and drop factor must be > 0");
    }
    if (log_every < 1) {
        throw ConfigError("log_every must be >= 1");
    }
}

SolutionModel net_model(const Net& net) {
    SolutionModel model;
    model.value = [&net](double t, std::span<const double> x, std::size_t rows) { return forward(net, t, x, rows).n1; };
    model.nonlocal = [&net](double t, std::span<const double> x, std::size_t rows) {
        return forward(net, t, x, rows).n2;
    };
    model.gradient = [&net](double t, std::span<const double> x, std::size_t rows) {
        return grad_x_n1(net, t, x, rows);
    };
    return model;
}

namespace {

// Every step allocates and frees the same large tape buffers. glibc would otherwise
// serve them with fresh mmaps or trim the heap between steps, paying page faults each time.
void keep_tape_buffers_in_heap() {
#ifdef __GLIBC__
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)once;
#endif
}


std::vector<double> gather_states(const PathBatch& batch, std::size_t n) {
    const std::size_t d = batch.dim();
    std::vector<double> out(batch.paths() * d);
    for (std::size_t j = 0; j < batch.paths(); ++j) {
        const auto x = batch.state(j, n);
        std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(j * d));
    }
    return out;
}

/// Post-jump points x_n + G(x_n, z_i) for every jump in (t_n, t_{n+1}], grouped by
/// trajectory; offsets[j]..offsets[j+1] index trajectory j's rows.
struct JumpTargets {
    std::vector<double> points;
    std::vector<std::size_t> offsets;
    std::vector<double> counts;

    std::size_t rows() const { return offsets.back(); }
};

JumpTargets jump_targets(const ProblemSpec& problem, const PathBatch& batch, std::size_t n) {
    const std::size_t d = batch.dim();
    JumpTargets out;
    out.offsets.reserve(batch.paths() + 1);
    out.offsets.push_back(0);
    out.counts.reserve(batch.paths());
    std::vector<double> shift(d);
    for (std::size_t j = 0; j < batch.paths(); ++j) {
        const auto x = batch.state(j, n);
        const auto jumps = batch.jumps_in_step(j, n);
        for (const auto& z : jumps) {
            problem.jump_coefficient(x, z.size, shift);
            for (std::size_t k = 0; k < d; ++k) {
                out.points.push_back(x[k] + shift[k]);
            }
        }
        out.offsets.push_back(out.offsets.back() + jumps.size());
        out.counts.push_back(static_cast<double>(jumps.size()));
    }
    return out;
}

/// σ(x_n)ΔW_n per trajectory, M × d.
std::vector<double> diffused_increments(const ProblemSpec& problem, const PathBatch& batch, std::size_t n) {
    const std::size_t d = batch.dim();
    std::vector<double> out(batch.paths() * d);
    for (std::size_t j = 0; j < batch.paths(); ++j) {
        problem.apply_diffusion(batch.state(j, n), batch.increment(j, n),
                                std::span<double>(out).subspan(j * d, d));
    }
    return out;
}

/// −f(t_n, x, N1, σᵀ∇N1)·Δt per trajectory.
std::vector<double> source_increments(const ProblemSpec& problem, const PathBatch& batch, std::size_t n,
                                      std::span<const double> values, std::span<const double> gradients) {
    const std::size_t d = batch.dim();
    const double t = batch.time(n);
    std::vector<double> out(batch.paths());
    std::vector<double> w(d, 0.0);
    for (std::size_t j = 0; j < batch.paths(); ++j) {
        const auto x = batch.state(j, n);
        if (!gradients.empty()) {
            problem.apply_diffusion_transpose(x, gradients.subspan(j * d, d), w);
        }
        out[j] = -problem.driver(t, x, values[j], w) * batch.dt();
    }
    return out;
}

}  // namespace

std::vector<double> td_error(const SolutionModel& model, const ProblemSpec& problem, const PathBatch& batch,
                             std::size_t n, std::size_t k) {
    if (k < 1 || n + k > batch.steps()) {
        throw ContractError("TD window exceeds the time grid");
    }
    const std::size_t paths = batch.paths();
    const std::size_t d = batch.dim();
    const double dt = batch.dt();
    std::vector<double> td(paths, 0.0);

    for (std::size_t m = n; m < n + k; ++m) {
        const double t = batch.time(m);
        const std::vector<double> x = gather_states(batch, m);
        const std::vector<double> values = model.value(t, x, paths);
        const std::vector<double> nonlocal = model.nonlocal(t, x, paths);
        const std::vector<double> grads = model.gradient(t, x, paths);
        const std::vector<double> sdw = diffused_increments(problem, batch, m);
        const std::vector<double> source = source_increments(problem, batch, m, values, grads);
        const JumpTargets targets = jump_targets(problem, batch, m);
        const std::vector<double> jump_values =
            targets.rows() > 0 ? model.value(t, targets.points, targets.rows()) : std::vector<double>{};

        for (std::size_t j = 0; j < paths; ++j) {
            double jump_sum = 0.0;
            for (std::size_t i = targets.offsets[j]; i < targets.offsets[j + 1]; ++i) {
                jump_sum += jump_values[i] - values[j];
            }
            double martingale = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                martingale += grads[j * d + c] * sdw[j * d + c];
            }
            td[j] += source[j] + martingale + jump_sum - dt * nonlocal[j];
            if (m == n) {
                td[j] += values[j];
            }
        }
    }
    const std::vector<double> next = model.value(batch.time(n + k), gather_states(batch, n + k), paths);
    for (std::size_t j = 0; j < paths; ++j) {
        td[j] -= next[j];
    }
    return td;
}

double loss1(std::span<const double> td_errors) {
    if (td_errors.empty()) {
        return 0.0;
    }
    double acc = 0.0;
    for (double e : td_errors) {
        acc += e * e;
    }
    return acc / static_cast<double>(td_errors.size());
}

double loss2(const SolutionModel& model, const ProblemSpec& problem, std::span<const double> terminal_buffer,
             std::size_t steps) {
    const std::size_t d = problem.dim;
    const std::size_t rows = terminal_buffer.size() / d;
    const std::vector<double> values = model.value(problem.horizon, terminal_buffer, rows);
    double acc = 0.0;
    for (std::size_t j = 0; j < rows; ++j) {
        const double diff = values[j] - problem.terminal(terminal_buffer.subspan(j * d, d));
        acc += diff * diff;
    }
    return acc / (static_cast<double>(steps) * static_cast<double>(rows));
}

double loss3(const SolutionModel& model, const ProblemSpec& problem, std::span<const double> terminal_buffer,
             std::size_t steps) {
    const std::size_t d = problem.dim;
    const std::size_t rows = terminal_buffer.size() / d;
    const std::vector<double> grads = model.gradient(problem.horizon, terminal_buffer, rows);
    std::vector<double> target(d);
    double acc = 0.0;
    for (std::size_t j = 0; j < rows; ++j) {
        problem.terminal_gradient(terminal_buffer.subspan(j * d, d), target);
        for (std::size_t c = 0; c < d; ++c) {
            const double diff = grads[j * d + c] - target[c];
            acc += diff * diff;
        }
    }
    return acc / (static_cast<double>(steps) * static_cast<double>(rows));
}

double loss4(const SolutionModel& model, const ProblemSpec& problem, const PathBatch& batch, std::size_t n) {
    const std::size_t paths = batch.paths();
    const double t = batch.time(n);
    const std::vector<double> x = gather_states(batch, n);
    const std::vector<double> values = model.value(t, x, paths);
    const std::vector<double> nonlocal = model.nonlocal(t, x, paths);
    const JumpTargets targets = jump_targets(problem, batch, n);
    const std::vector<double> jump_values =
        targets.rows() > 0 ? model.value(t, targets.points, targets.rows()) : std::vector<double>{};
    double acc = 0.0;
    for (std::size_t j = 0; j < paths; ++j) {
        for (std::size_t i = targets.offsets[j]; i < targets.offsets[j + 1]; ++i) {
            acc += jump_values[i] - values[j];
        }
        acc -= batch.dt() * nonlocal[j];
    }
    return std::abs(acc / static_cast<double>(paths));
}

LossBreakdown StepLoss::values() const {
    LossBreakdown out;
    out.loss1 = loss1.value().item();
    out.loss2 = loss2.value().item();
    out.loss3 = loss3.value().item();
    out.loss4 = loss4.value().item();
    out.total = total.value().item();
    return out;
}

namespace {

Tensor column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor::matrix(n, 1, std::move(values));
}

/// Row-major input block (t, x_j) for a batch of points.
void append_rows(std::vector<double>& rows, double t, std::span<const double> points, std::size_t dim) {
    for (std::size_t r = 0; r < points.size() / dim; ++r) {
        rows.push_back(t);
        rows.insert(rows.end(), points.begin() + static_cast<std::ptrdiff_t>(r * dim),
                    points.begin() + static_cast<std::ptrdiff_t>((r + 1) * dim));
    }
}

}  // namespace

StepLoss build_step_loss(const BoundNet& net, const ProblemSpec& problem, const PathBatch& batch,
                         std::span<const double> terminal_buffer, std::size_t n, std::size_t k,
                         bool stop_gradient_target, bool detach_jump_target) {
    if (k < 1 || n + k > batch.steps()) {
        throw ContractError("TD window exceeds the time grid");
    }
    Tape& tape = *net.params.front().tape();
    const std::size_t paths = batch.paths();
    const std::size_t d = batch.dim();
    const std::size_t width = d + 1;
    const double dt = batch.dt();
    const double inv_paths = 1.0 / static_cast<double>(paths);
    const bool diffusion = problem.has_diffusion();
    if (terminal_buffer.size() != paths * d) {
        throw DimensionError("terminal buffer must hold " + std::to_string(paths) + " states");
    }

    // Rows that need ∇ₓN1 go through `with_grad`; the rest through `plain`.
    std::vector<double> with_grad, plain;
    std::vector<std::size_t> state_offset(k);
    for (std::size_t i = 0; i < k; ++i) {
        auto& target = diffusion ? with_grad : plain;
        state_offset[i] = target.size() / width;
        append_rows(target, batch.time(n + i), gather_states(batch, n + i), d);
    }
    const std::size_t terminal_offset = with_grad.size() / width;
    append_rows(with_grad, problem.horizon, terminal_buffer, d);

    const std::vector<double> next_states = gather_states(batch, n + k);
    std::size_t next_offset = 0;
    if (!stop_gradient_target) {
        next_offset = plain.size() / width;
        append_rows(plain, batch.time(n + k), next_states, d);
    }
    std::vector<JumpTargets> targets;
    std::vector<std::size_t> jump_offset(k);
    for (std::size_t i = 0; i < k; ++i) {
        targets.push_back(jump_targets(problem, batch, n + i));
        jump_offset[i] = plain.size() / width;
        append_rows(plain, batch.time(n + i), targets.back().points, d);
    }

    const std::size_t grad_rows = with_grad.size() / width;
    const NetGraph graph_g = build_forward(net, tape.constant(Tensor::matrix(grad_rows, width, std::move(with_grad))));
    const Var n1_g = slice_cols(graph_g.output, 0, 1);
    const Var n2_g = slice_cols(graph_g.output, 1, 2);
    const Var input_grad = build_input_gradient(net, graph_g);

    Var n1_p, n2_p;
    const std::size_t plain_rows = plain.size() / width;
    if (plain_rows > 0) {
        const NetGraph graph_p = build_forward(net, tape.constant(Tensor::matrix(plain_rows, width, std::move(plain))));
        n1_p = slice_cols(graph_p.output, 0, 1);
        n2_p = slice_cols(graph_p.output, 1, 2);
    }

    const Var& state_n1_src = diffusion ? n1_g : n1_p;
    const Var& state_n2_src = diffusion ? n2_g : n2_p;

    Var next_n1;
    if (stop_gradient_target) {
        next_n1 = tape.constant(column(forward(*net.net, batch.time(n + k), next_states, paths).n1));
    } else {
        next_n1 = slice_rows(n1_p, next_offset, next_offset + paths);
    }

    Var td = sub(slice_rows(state_n1_src, state_offset[0], state_offset[0] + paths), next_n1);
    Var martingale_total;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t m = n + i;
        const Var n1_m = slice_rows(state_n1_src, state_offset[i], state_offset[i] + paths);
        const Var n2_m = slice_rows(state_n2_src, state_offset[i], state_offset[i] + paths);

        const Var drift_part = scale(n2_m, -dt);
        Var compensated = drift_part;
        Var martingale = drift_part;
        const JumpTargets& jt = targets[i];
        if (jt.rows() > 0) {
            const Var landed = segment_sum(slice_rows(n1_p, jump_offset[i], jump_offset[i] + jt.rows()), jt.offsets);
            const Var jump_sum = sub(landed, mul(tape.constant(column(jt.counts)), n1_m));
            compensated = add(jump_sum, drift_part);
            martingale = add(detach_jump_target ? tape.constant(jump_sum.value()) : jump_sum, drift_part);
        }
        const Var loss4_m = abs(scale(sum(martingale), inv_paths));
        martingale_total = i == 0 ? loss4_m : add(martingale_total, loss4_m);
        td = add(td, compensated);

        std::vector<double> grads_m;
        if (diffusion) {
            const Var grad_m = slice_cols(slice_rows(input_grad, state_offset[i], state_offset[i] + paths), 1, width);
            const Var sdw = tape.constant(Tensor::matrix(paths, d, diffused_increments(problem, batch, m)));
            td = add(td, row_sum(mul(grad_m, sdw)));
            grads_m.assign(grad_m.value().data().begin(), grad_m.value().data().end());
        }
        const Tensor& n1_values = n1_m.value();
        td = add(td, tape.constant(column(source_increments(problem, batch, m, n1_values.data(), grads_m))));
    }

    const double terminal_weight = static_cast<double>(k) / (static_cast<double>(batch.steps()) * paths);
    std::vector<double> g_values(paths), g_grads(paths * d);
    for (std::size_t j = 0; j < paths; ++j) {
        const auto x = terminal_buffer.subspan(j * d, d);
        g_values[j] = problem.terminal(x);
        problem.terminal_gradient(x, std::span<double>(g_grads).subspan(j * d, d));
    }
    const Var terminal_n1 = slice_rows(n1_g, terminal_offset, terminal_offset + paths);
    const Var terminal_grad = slice_cols(slice_rows(input_grad, terminal_offset, terminal_offset + paths), 1, width);

    StepLoss out;
    out.td = td;
    out.loss1 = scale(sum_squares(td), inv_paths);
    out.loss2 = scale(sum_squares(sub(terminal_n1, tape.constant(column(std::move(g_values))))), terminal_weight);
    out.loss3 = scale(sum_squares(sub(terminal_grad, tape.constant(Tensor::matrix(paths, d, std::move(g_grads))))),
                      terminal_weight);
    out.loss4 = martingale_total;
    out.total = add(add(add(out.loss1, out.loss2), out.loss3), out.loss4);
    return out;
}

TrainState initial_state(const ProblemSpec& problem, const TrainOptions& options) {
    options.validate();
    const StreamFactory streams(options.seed);
    const NetConfig config = options.net.value_or(NetConfig::for_dimension(problem.dim));
    if (config.spatial_dim() != problem.dim) {
        throw ConfigError("network input dimension does not match the problem");
    }
    Rng init_rng = streams.stream(StreamPurpose::kNetworkInit);
    TrainState state{init_net(config, init_rng), {}, {}, 0, 0.0, {}, -1, 0};
    for (const auto& p : state.net.parameters()) {
        state.adam_m.emplace_back(p.shape(), 0.0);
        state.adam_v.emplace_back(p.shape(), 0.0);
    }
    state.lr = scheduled_lr(options.adam, 0);
    const PathBatch warmup =
        simulate_batch(problem, options.paths, options.steps, {streams, StreamPurpose::kInitialBuffer, 0}, options.threads);
    state.terminal_buffer = warmup.terminal_states();
    return state;
}

void adam_step(TrainState& state, std::span<const Tensor> gradients, const AdamOptions& adam) {
    auto& params = state.net.parameters();
    if (gradients.size() != params.size()) {
        throw DimensionError("adam_step: got " + std::to_string(gradients.size()) + " gradients for " +
                             std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (gradients[i].shape() != params[i].shape()) {
            throw DimensionError("adam_step: gradient shape " + gradients[i].shape_string() + " does not match " +
                                 state.net.parameter_names()[i] + " " + params[i].shape_string());
        }
        if (!gradients[i].all_finite()) {
            throw TrainingDivergedError(state.update_count,
                                        "non-finite gradient for " + state.net.parameter_names()[i]);
        }
    }
    state.lr = scheduled_lr(adam, state.update_count);
    const double step = static_cast<double>(state.update_count + 1);
    const double correction1 = 1.0 - std::pow(adam.beta1, step);
    const double correction2 = 1.0 - std::pow(adam.beta2, step);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].data();
        auto m = state.adam_m[i].data();
        auto v = state.adam_v[i].data();
        const auto g = gradients[i].data();
        for (std::size_t e = 0; e < p.size(); ++e) {
            m[e] = adam.beta1 * m[e] + (1.0 - adam.beta1) * g[e];
            v[e] = adam.beta2 * v[e] + (1.0 - adam.beta2) * g[e] * g[e];
            const double m_hat = m[e] / correction1;
            const double v_hat = v[e] / correction2;
            p[e] -= state.lr * m_hat / (std::sqrt(v_hat) + adam.epsilon);
        }
    }
    ++state.update_count;
}

double y0_estimate(const Net& net, const ProblemSpec& problem) {
    return forward(net, 0.0, problem.initial_point, 1).n1[0];
}

TrainResult train(const ProblemSpec& problem, const TrainOptions& options, TrainState state,
                  const TrainObserver& observer) {
    options.validate();
    keep_tape_buffers_in_heap();
    if (state.terminal_buffer.size() != options.paths * problem.dim) {
        throw ConfigError("terminal buffer does not match the number of paths");
    }
    std::vector<MetricRecord> metrics;
    const auto started = std::chrono::steady_clock::now();
    const StreamFactory streams(options.seed);
    const double exact = problem.has_exact() ? problem.exact_initial_value() : std::numeric_limits<double>::quiet_NaN();
    const std::size_t k = options.td_step;

    LossBreakdown last_loss;
    std::size_t last_logged = std::numeric_limits<std::size_t>::max();
    auto log_metric = [&](std::size_t iteration) {
        MetricRecord record;
        record.iteration = iteration;
        record.update = state.update_count;
        record.y0_estimate = y0_estimate(state.net, problem);
        record.y0_rel_error = std::abs(record.y0_estimate - exact) / std::abs(exact);
        record.loss = last_loss;
        record.lr = scheduled_lr(options.adam, state.update_count);
        record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        last_logged = state.update_count;
        metrics.push_back(record);
        if (observer.on_metric) {
            observer.on_metric(record);
        }
    };

    std::vector<Tensor> grads(state.net.parameters().size());
    for (std::size_t it = 0; it < options.iterations; ++it) {
        const std::size_t iteration = state.iterations_done;
        const PathBatch batch =
            simulate_batch(problem, options.paths, options.steps, {streams, StreamPurpose::kTraining, iteration},
                           options.threads);
        for (std::size_t n = 0; n < options.steps; n += k) {
            if (n + k == options.steps) {
                state.terminal_buffer = batch.terminal_states();
                state.buffer_version = static_cast<std::int64_t>(iteration);
            }
            Tape tape;
            const BoundNet bound = bind(tape, state.net);
            const StepLoss loss =
                build_step_loss(bound, problem, batch, state.terminal_buffer, n, k, options.stop_gradient_target,
                                options.detach_jump_target);
            last_loss = loss.values();
            if (!std::isfinite(last_loss.total)) {
                throw TrainingDivergedError(state.update_count, "non-finite loss");
            }
            if (state.update_count % options.log_every == 0) {
                log_metric(iteration);
            }
            const Gradients g = tape.backward(loss.total);
            for (std::size_t i = 0; i < grads.size(); ++i) {
                grads[i] = g.of(bound.params[i]);
            }
            adam_step(state, grads, options.adam);
            if (observer.on_step) {
                observer.on_step({iteration, n, k, state.update_count, state.buffer_version, last_loss});
            }
        }
        ++state.iterations_done;
    }
    if (options.iterations > 0 && last_logged != state.update_count) {
        log_metric(state.iterations_done - 1);
    }
    return {std::move(state), std::move(metrics)};
}

}  // namespace levytd
