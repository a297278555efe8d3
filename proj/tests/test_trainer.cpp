#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "levytd/errors.hpp"
#include "levytd/problems.hpp"
#include "levytd/trainer.hpp"
#include "support.hpp"

#include <cmath>

using namespace levytd;
using levytd::testing::linear_oracle;
using levytd::testing::mean_of;
using levytd::testing::relative_gap;
using levytd::testing::variance_of;

namespace {

PathBatch sample(const ProblemSpec& p, std::size_t paths, std::size_t steps, std::uint64_t seed = 2023) {
    return simulate_batch(p, paths, steps, {StreamFactory(seed), StreamPurpose::kTest, 0});
}

Net small_net(std::size_t d, std::uint64_t seed, std::size_t width = 6, std::size_t blocks = 2) {
    Rng rng = StreamFactory(seed).stream(StreamPurpose::kNetworkInit);
    Net net = init_net({d + 1, width, blocks}, rng);
    Rng jitter = StreamFactory(seed).stream(StreamPurpose::kTest, 1);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (auto& p : net.parameters()) {
        for (auto& v : p.storage()) {
            v += u(jitter);
        }
    }
    return net;
}

TrainOptions quick_options(std::size_t paths, std::size_t steps, std::size_t iterations, std::size_t k = 1) {
    TrainOptions o;
    o.paths = paths;
    o.steps = steps;
    o.iterations = iterations;
    o.td_step = k;
    o.net = NetConfig{2, 6, 2};
    return o;
}

SolutionModel constant_model(double n1, double n2) {
    SolutionModel m;
    m.value = [=](double, std::span<const double>, std::size_t rows) { return std::vector<double>(rows, n1); };
    m.nonlocal = [=](double, std::span<const double>, std::size_t rows) { return std::vector<double>(rows, n2); };
    m.gradient = [](double, std::span<const double> x, std::size_t) { return std::vector<double>(x.size(), 0.0); };
    return m;
}

}  // namespace

TEST_CASE("exact solution gives zero TD error") {
    const double exp_moment = std::exp(0.4 + 0.5 * 0.25 * 0.25) - 1.0;
    SUBCASE("pure jump") {
        const ProblemSpec p = pure_jump_1d(0.3, 0.4, 0.25);
        const PathBatch batch = sample(p, 2000, 50);
        const SolutionModel oracle = linear_oracle(0.3, exp_moment);
        double worst = 0.0;
        for (std::size_t n = 0; n < 50; ++n) {
            for (double e : td_error(oracle, p, batch, n)) {
                worst = std::max(worst, std::abs(e));
            }
        }
        CHECK(worst < 1e-12);
        CHECK(batch.total_jumps() > 400);
    }
    SUBCASE("drift, diffusion and k-step windows") {
        const ProblemSpec p = robustness_1d(0.25, 0.4, 1.2, JumpLaw::normal(0.4, 0.25));
        const PathBatch batch = sample(p, 500, 60);
        const SolutionModel oracle = linear_oracle(1.2, exp_moment);
        for (std::size_t k : {1u, 2u, 3u, 6u}) {
            double worst = 0.0;
            for (std::size_t n = 0; n < 60; n += k) {
                for (double e : td_error(oracle, p, batch, n, k)) {
                    worst = std::max(worst, std::abs(e));
                }
            }
            CHECK(worst < 1e-12);
        }
    }
}

TEST_CASE("zero dynamics reduce the TD error to a difference of N1") {
    const ProblemSpec p = levytd::testing::zero_dynamics(2);
    Net net = small_net(2, 3);
    const PathBatch batch = sample(p, 5, 10);
    auto check_steps = [&](bool n2_silenced) {
        const SolutionModel model = net_model(net);
        for (std::size_t n = 0; n < 10; ++n) {
            const auto td = td_error(model, p, batch, n);
            const NetOutputs here = forward(net, batch.time(n), p.initial_point, 1);
            const double next = forward(net, batch.time(n + 1), p.initial_point, 1).n1[0];
            // The −Δt·N2 term survives λ = 0 unless the N2 head is silenced.
            const double expected = here.n1[0] - next - batch.dt() * here.n2[0];
            if (n2_silenced) {
                CHECK(here.n2[0] == 0.0);
            }
            for (double e : td) {
                CHECK(e == doctest::Approx(expected).epsilon(1e-13));
            }
        }
    };
    check_steps(false);
    Tensor& head = net.parameters()[net.head_weight()];
    for (std::size_t c = 0; c < head.cols(); ++c) {
        head.at(1, c) = 0.0;
    }
    net.parameters()[net.head_bias()][1] = 0.0;
    check_steps(true);
}

TEST_CASE("loss1 is the mean square") {
    const std::vector<double> td = {1.0, -2.0, 3.0};
    CHECK(loss1(td) == doctest::Approx(14.0 / 3.0));
}

TEST_CASE("loss4") {
    ProblemSpec p = levytd::testing::zero_dynamics(1);
    const PathBatch batch = sample(p, 7, 10);
    SUBCASE("no jumps and zero N2") {
        CHECK(loss4(constant_model(0.5, 0.0), p, batch, 3) == 0.0);
    }
    SUBCASE("constant N2 without jumps") {
        CHECK(loss4(constant_model(0.5, -2.5), p, batch, 3) == doctest::Approx(0.1 * 2.5).epsilon(1e-14));
    }
    SUBCASE("exact N1 and N2 on the pure-jump problem") {
        const ProblemSpec pj = pure_jump_1d(0.3, 0.4, 0.25);
        const std::size_t m = 100000;
        const PathBatch big = simulate_batch(pj, m, 50, {StreamFactory(9), StreamPurpose::kTest, 0}, 4);
        const double exp_moment = std::exp(0.4 + 0.5 * 0.25 * 0.25) - 1.0;
        const SolutionModel oracle = linear_oracle(0.3, exp_moment);
        const std::size_t n = 17;
        std::vector<double> increments(m);
        for (std::size_t j = 0; j < m; ++j) {
            const double x = big.state(j, n)[0];
            double s = -big.dt() * 0.3 * exp_moment * x;
            for (const auto& jump : big.jumps_in_step(j, n)) {
                s += x * std::expm1(jump.size[0]);
            }
            increments[j] = s;
        }
        const double se = std::sqrt(variance_of(increments) / static_cast<double>(m));
        CHECK(loss4(oracle, pj, big, n) == doctest::Approx(std::abs(mean_of(increments))).epsilon(1e-12));
        CHECK(loss4(oracle, pj, big, n) < 3.0 * se);
    }
}

TEST_CASE("terminal losses vanish for the exact solution") {
    const ProblemSpec p = pure_jump_1d();
    const PathBatch batch = sample(p, 300, 50);
    const auto buffer = batch.terminal_states();
    const SolutionModel oracle = linear_oracle(0.3, 0.5);
    CHECK(loss2(oracle, p, buffer, 50) == 0.0);
    CHECK(loss3(oracle, p, buffer, 50) == 0.0);
    CHECK(loss2(constant_model(0.0, 0.0), p, buffer, 50) ==
          doctest::Approx([&] {
              double s = 0.0;
              for (double x : buffer) {
                  s += x * x;
              }
              return s / 300.0 / 50.0;
          }()));
    CHECK(loss3(constant_model(0.0, 0.0), p, buffer, 50) == doctest::Approx(1.0 / 50.0));
}

TEST_CASE("taped loss matches the plain evaluation") {
    struct Case {
        ProblemSpec problem;
        std::size_t k;
    };
    std::vector<Case> cases;
    cases.push_back({pure_jump_1d(1.5, 0.4, 0.25), 1});
    cases.push_back({robustness_1d(0.25, 0.4, 1.2, JumpLaw::bernoulli(-0.2, 0.4, 0.7)), 1});
    cases.push_back({robustness_1d(0.25, 0.4, 1.2, JumpLaw::uniform(0.4)), 3});
    cases.push_back({highdim(3, 0.2, 0.3, 0.9, 0.1), 2});
    for (const auto& c : cases) {
        const ProblemSpec& p = c.problem;
        CAPTURE(p.name);
        CAPTURE(c.k);
        const std::size_t steps = 6;
        const PathBatch batch = sample(p, 40, steps);
        const auto buffer = sample(p, 40, steps, 77).terminal_states();
        const Net net = small_net(p.dim, 5);
        const SolutionModel model = net_model(net);
        for (std::size_t n = 0; n < steps; n += c.k) {
            Tape tape;
            const StepLoss taped = build_step_loss(bind(tape, net), p, batch, buffer, n, c.k);
            const LossBreakdown v = taped.values();
            const auto td = td_error(model, p, batch, n, c.k);
            for (std::size_t j = 0; j < td.size(); ++j) {
                CHECK(taped.td.value()[j] == doctest::Approx(td[j]).epsilon(1e-11));
            }
            double l4 = 0.0;
            for (std::size_t m = n; m < n + c.k; ++m) {
                l4 += loss4(model, p, batch, m);
            }
            const double kf = static_cast<double>(c.k);
            CHECK(v.loss1 == doctest::Approx(loss1(td)).epsilon(1e-11));
            CHECK(v.loss2 == doctest::Approx(kf * loss2(model, p, buffer, steps)).epsilon(1e-11));
            CHECK(v.loss3 == doctest::Approx(kf * loss3(model, p, buffer, steps)).epsilon(1e-11));
            CHECK(v.loss4 == doctest::Approx(l4).epsilon(1e-11));
            CHECK(v.total == doctest::Approx(v.loss1 + v.loss2 + v.loss3 + v.loss4).epsilon(1e-14));
            CHECK(v.loss1 >= 0.0);
            CHECK(v.loss2 >= 0.0);
            CHECK(v.loss3 >= 0.0);
            CHECK(v.loss4 >= 0.0);
        }
    }
}

TEST_CASE("loss gradients match central differences in the parameters") {
    std::vector<ProblemSpec> problems = {robustness_1d(0.25, 0.4, 1.2, JumpLaw::normal(0.4, 0.25)),
                                         highdim(2, 0.2, 0.3, 0.9, 0.1)};
    for (const auto& p : problems) {
        CAPTURE(p.name);
        const PathBatch batch = sample(p, 8, 4);
        const auto buffer = sample(p, 8, 4, 78).terminal_states();
        Net net = small_net(p.dim, 6, 4, 1);
        auto build = [&](Tape&, const std::vector<Var>& params) {
            return build_step_loss(BoundNet{&net, params}, p, batch, buffer, 2, 2).total;
        };
        CHECK(levytd::testing::max_fd_gap(build, net.parameters()) < 1e-5);
    }
}

TEST_CASE("stop-gradient target changes gradients but not values") {
    const ProblemSpec p = robustness_1d(0.25, 0.4, 1.2, JumpLaw::normal(0.4, 0.25));
    const PathBatch batch = sample(p, 16, 4);
    const auto buffer = batch.terminal_states();
    const Net net = small_net(1, 8);
    Tape a;
    Tape b;
    const BoundNet ba = bind(a, net);
    const BoundNet bb = bind(b, net);
    const StepLoss la = build_step_loss(ba, p, batch, buffer, 1, 1, false);
    const StepLoss lb = build_step_loss(bb, p, batch, buffer, 1, 1, true);
    CHECK(la.values().total == doctest::Approx(lb.values().total).epsilon(1e-14));
    const Tensor ga = a.backward(la.total).of(ba.params[0]);
    const Tensor gb = b.backward(lb.total).of(bb.params[0]);
    CHECK_FALSE(ga == gb);
}

TEST_CASE("detached jump target only changes the Loss4 gradient") {
    const ProblemSpec p = robustness_1d(0.25, 0.4, 1.2, JumpLaw::normal(0.4, 0.25));
    const PathBatch batch = sample(p, 16, 4);
    const auto buffer = batch.terminal_states();
    const Net net = small_net(1, 8);
    REQUIRE(batch.total_jumps() > 0);
    Tape a;
    Tape b;
    const BoundNet ba = bind(a, net);
    const BoundNet bb = bind(b, net);
    const StepLoss la = build_step_loss(ba, p, batch, buffer, 0, 4, false, false);
    const StepLoss lb = build_step_loss(bb, p, batch, buffer, 0, 4, false, true);
    const LossBreakdown va = la.values();
    const LossBreakdown vb = lb.values();
    CHECK(va.total == vb.total);
    CHECK(va.loss4 == vb.loss4);
    CHECK(la.td.value() == lb.td.value());
    const Tensor g1a = a.backward(la.loss1).of(ba.params[0]);
    const Tensor g1b = b.backward(lb.loss1).of(bb.params[0]);
    CHECK(g1a == g1b);
    const Tensor g4a = a.backward(la.loss4).of(ba.params[0]);
    const Tensor g4b = b.backward(lb.loss4).of(bb.params[0]);
    CHECK_FALSE(g4a == g4b);
}

TEST_CASE("adam") {
    const ProblemSpec p = pure_jump_1d();
    TrainOptions o = quick_options(4, 2, 1);
    TrainState state = initial_state(p, o);
    const std::vector<Tensor> before = state.net.parameters();
    auto filled = [&](double v) {
        std::vector<Tensor> g;
        for (const auto& t : before) {
            g.emplace_back(t.shape(), v);
        }
        return g;
    };

    SUBCASE("first step with unit gradient moves every parameter by about -lr") {
        adam_step(state, filled(1.0), o.adam);
        CHECK(state.update_count == 1);
        CHECK(state.lr == 5e-5);
        for (std::size_t i = 0; i < before.size(); ++i) {
            for (std::size_t e = 0; e < before[i].size(); ++e) {
                const double moved = state.net.parameters()[i][e] - before[i][e];
                CHECK(moved == doctest::Approx(-5e-5 / (1.0 + 1e-8)).epsilon(1e-9));
            }
        }
    }
    SUBCASE("zero gradient leaves parameters unchanged and moments decay") {
        adam_step(state, filled(1.0), o.adam);
        const std::vector<Tensor> after_one = state.net.parameters();
        const double m1 = state.adam_m[0][0];
        adam_step(state, filled(0.0), o.adam);
        CHECK(state.adam_m[0][0] == doctest::Approx(0.9 * m1));
        for (std::size_t i = 0; i < before.size(); ++i) {
            for (std::size_t e = 0; e < before[i].size(); ++e) {
                // m̂ stays positive after one unit step, so the parameter keeps moving.
                CHECK(state.net.parameters()[i][e] < after_one[i][e]);
            }
        }
        TrainState fresh = initial_state(p, o);
        adam_step(fresh, filled(0.0), o.adam);
        CHECK(fresh.net.parameters() == before);
    }
    SUBCASE("non-finite gradient is a divergence") {
        auto g = filled(0.0);
        g[3][0] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(adam_step(state, g, o.adam), TrainingDivergedError);
    }
    SUBCASE("shape mismatch") {
        auto g = filled(0.0);
        g[0] = Tensor({1});
        CHECK_THROWS_AS(adam_step(state, g, o.adam), DimensionError);
    }
    SUBCASE("schedule crosses 5000 updates") {
        state.update_count = 4999;
        adam_step(state, filled(0.0), o.adam);
        CHECK(state.lr == 5e-5);
        adam_step(state, filled(0.0), o.adam);
        CHECK(state.lr == doctest::Approx(1e-5).epsilon(1e-15));
    }
}

TEST_CASE("learning-rate schedule") {
    const AdamOptions adam;
    CHECK(scheduled_lr(adam, 0) == 5e-5);
    CHECK(scheduled_lr(adam, 4999) == 5e-5);
    CHECK(scheduled_lr(adam, 5000) == 5e-5 / 5.0);
    CHECK(scheduled_lr(adam, 10000) == 5e-5 / 25.0);
    CHECK(scheduled_lr(adam, 19999) == 5e-5 / 125.0);
}

TEST_CASE("optimizer step count is iterations * N / k") {
    const ProblemSpec p = robustness_1d(0.25, 0.4, 0.3, JumpLaw::normal(0.4, 0.25));
    for (std::size_t k = 1; k <= 6; ++k) {
        CAPTURE(k);
        const TrainOptions o = quick_options(4, 60, 2, k);
        std::size_t events = 0;
        TrainObserver obs;
        obs.on_step = [&](const StepEvent& e) {
            ++events;
            CHECK(e.td_step == k);
            CHECK(e.first_step % k == 0);
        };
        const TrainResult r = train(p, o, initial_state(p, o), obs);
        CHECK(r.state.update_count == 2 * 60 / k);
        CHECK(events == 2 * 60 / k);
        CHECK(r.state.iterations_done == 2);
    }
    const TrainOptions one = quick_options(4, 60, 1, 2);
    CHECK(train(p, one, initial_state(p, one)).state.update_count == 30);
    CHECK_THROWS_AS(quick_options(4, 60, 1, 7).validate(), ConfigError);
}

TEST_CASE("terminal buffer lags by one iteration until the last step") {
    const ProblemSpec p = pure_jump_1d();
    for (std::size_t k : {1u, 2u}) {
        const TrainOptions o = quick_options(8, 6, 3, k);
        TrainState start = initial_state(p, o);
        CHECK(start.buffer_version == -1);
        CHECK(start.terminal_buffer.size() == 8);
        std::vector<StepEvent> events;
        TrainObserver obs;
        obs.on_step = [&](const StepEvent& e) { events.push_back(e); };
        (void)train(p, o, std::move(start), obs);
        REQUIRE(events.size() == 3 * 6 / k);
        for (const auto& e : events) {
            const bool last = e.first_step + k == 6;
            const std::int64_t expected = last ? static_cast<std::int64_t>(e.iteration)
                                               : static_cast<std::int64_t>(e.iteration) - 1;
            CHECK(e.buffer_version == expected);
        }
    }
}

TEST_CASE("zero iterations return the state untouched") {
    const ProblemSpec p = pure_jump_1d();
    TrainOptions o = quick_options(8, 5, 0);
    const TrainState start = initial_state(p, o);
    const TrainResult r = train(p, o, start);
    CHECK(r.metrics.empty());
    CHECK(r.state.net == start.net);
    CHECK(r.state.update_count == 0);
    CHECK(r.state.terminal_buffer == start.terminal_buffer);
}

TEST_CASE("metric cadence and determinism") {
    const ProblemSpec p = highdim(3, 0.0, 0.3, 0.3, 0.1);
    TrainOptions o = quick_options(16, 20, 2);
    o.net = NetConfig{4, 5, 2};
    o.log_every = 10;
    const TrainResult a = train(p, o, initial_state(p, o));
    std::vector<std::size_t> updates;
    for (const auto& m : a.metrics) {
        updates.push_back(m.update);
        CHECK(m.lr == 5e-5);
        CHECK(m.y0_rel_error == doctest::Approx(std::abs(m.y0_estimate - 1.0)).epsilon(1e-12));
    }
    CHECK(updates == std::vector<std::size_t>{0, 10, 20, 30, 40});

    o.threads = 3;
    const TrainResult b = train(p, o, initial_state(p, o));
    CHECK(a.state.net == b.state.net);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
        CHECK(a.metrics[i].y0_estimate == b.metrics[i].y0_estimate);
        CHECK(a.metrics[i].loss.total == b.metrics[i].loss.total);
    }
}

TEST_CASE("continuing training equals one longer run") {
    const ProblemSpec p = pure_jump_1d();
    const TrainOptions two = quick_options(8, 5, 2);
    const TrainOptions one = quick_options(8, 5, 1);
    const TrainResult whole = train(p, two, initial_state(p, two));
    const TrainResult half = train(p, one, initial_state(p, one));
    const TrainResult rest = train(p, one, half.state);
    CHECK(rest.state.net == whole.state.net);
    CHECK(rest.state.update_count == 10);
}

TEST_CASE("non-finite loss aborts training") {
    ProblemSpec p = levytd::testing::zero_dynamics(1);
    p.terminal = [](std::span<const double>) { return std::numeric_limits<double>::infinity(); };
    const TrainOptions o = quick_options(4, 3, 1);
    CHECK_THROWS_AS(train(p, o, initial_state(p, o)), TrainingDivergedError);
}
