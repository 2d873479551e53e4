#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "flexicrime/context.hpp"
#include "flexicrime/errors.hpp"
#include "flexicrime/point_process.hpp"
#include "flexicrime/synth.hpp"
#include "test_helpers.hpp"

using namespace flexicrime;
using testutil::make_fixture;

namespace {

void zero_process(ProcessParams& p) {
    p.for_each_trainable([](ParamBlock& b) { std::fill(b.w.begin(), b.w.end(), 0.0); });
}

// jump gates saturated shut: h passes through events untouched
void carry_through_jumps(ProcessParams& p) {
    p.psi_t.for_each_block([](ParamBlock& b) { std::fill(b.w.begin(), b.w.end(), 0.0); });
    std::fill(p.psi_t.bz.w.begin(), p.psi_t.bz.w.end(), -45.0);
}

PackedSequence make_packed(std::vector<double> tods, std::vector<std::pair<double, double>> xy,
                           int day_span, int type_count = 1) {
    PackedSequence seq;
    seq.target_type = 0;
    seq.day_span = day_span;
    for (size_t i = 0; i < tods.size(); ++i) {
        PackedEvent e;
        e.tod = tods[i];
        e.day = static_cast<int>(i) % day_span;
        e.type = static_cast<int>(i) % type_count;
        e.grid_id = 0;
        e.x = xy[i].first;
        e.y = xy[i].second;
        e.orig_index = static_cast<int>(i);
        seq.events.push_back(e);
        if (e.type == 0) seq.target_positions.push_back(static_cast<int>(i));
    }
    return seq;
}

std::vector<std::vector<double>> zero_contexts(const PackedSequence& seq, int dim) {
    return std::vector<std::vector<double>>(seq.events.size(), std::vector<double>(dim, 0.0));
}

double std_gauss_log(double x, double y) {
    return -std::log(2.0 * std::numbers::pi) - 0.5 * (x * x + y * y);
}

} // namespace

TEST_CASE("evolve_hidden: identity, constant drift, exponential oracle") {
    auto fx = make_fixture();
    Model& m = fx.model;
    ProcessParams& proc = m.theta1[0];

    SUBCASE("zero dynamics leave the state unchanged") {
        zero_process(proc);
        ad::Tape t;
        Binder b1(t, false);
        std::vector<double> h0(static_cast<size_t>(proc.hidden_dim), 0.7);
        auto dayf = m.day_features(2);
        auto res = evolve_hidden(b1, proc, t.constant(h0), 0.1, 0.9, dayf, 10);
        for (double v : t.value(res.h_end)) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
    }

    SUBCASE("zero-width span returns the input state") {
        ad::Tape t;
        Binder b1(t, false);
        std::vector<double> h0(static_cast<size_t>(proc.hidden_dim), -0.3);
        auto dayf = m.day_features(0);
        auto res = evolve_hidden(b1, proc, t.constant(h0), 0.4, 0.4, dayf, 10);
        CHECK(res.nodes.size() == 1);
        for (double v : t.value(res.h_end)) CHECK(v == -0.3);
    }

    SUBCASE("constant vector field integrates exactly") {
        RunConfig cfg = testutil::small_config();
        cfg.point_process.dynamics_hidden = 0; // affine dynamics
        auto fx2 = make_fixture(cfg);
        ProcessParams& p2 = fx2.model.theta1[0];
        zero_process(p2);
        // f_t = b, constant
        for (size_t i = 0; i < p2.f_t.b1.w.size(); ++i)
            p2.f_t.b1.w[i] = 0.25 * (static_cast<double>(i) + 1.0);
        ad::Tape t;
        Binder b1(t, false);
        std::vector<double> h0(static_cast<size_t>(p2.hidden_dim), 1.0);
        auto dayf = fx2.model.day_features(0);
        auto res = evolve_hidden(b1, p2, t.constant(h0), 0.2, 0.6, dayf, 7);
        auto v = t.value(res.h_end);
        for (size_t i = 0; i < v.size(); ++i)
            CHECK(v[i] == doctest::Approx(1.0 + 0.4 * 0.25 * (static_cast<double>(i) + 1.0)));
    }

    SUBCASE("scalar linear dynamics track the closed-form exponential") {
        RunConfig cfg = testutil::small_config();
        cfg.point_process.hidden_dim = 1;
        cfg.point_process.dynamics_hidden = 0;
        auto fx2 = make_fixture(cfg);
        ProcessParams& p2 = fx2.model.theta1[0];
        zero_process(p2);
        // f_t input layout: [tau, h, day features]; put slope a on the h column
        double a = 1.0;
        p2.f_t.w1.w[1] = a;
        ad::Tape t;
        Binder b1(t, false);
        double h0 = 2.0;
        auto dayf = fx2.model.day_features(0);
        auto res = evolve_hidden(b1, p2, t.constant({&h0, 1}), 0.0, 0.1, dayf, 20);
        double expect = h0 * std::exp(a * 0.1);
        CHECK(std::abs(t.value0(res.h_end) - expect) / expect < 1e-6);
    }

    SUBCASE("reversed bounds are rejected") {
        ad::Tape t;
        Binder b1(t, false);
        std::vector<double> h0(static_cast<size_t>(proc.hidden_dim), 0.0);
        auto dayf = m.day_features(0);
        CHECK_THROWS_AS(evolve_hidden(b1, proc, t.constant(h0), 0.5, 0.4, dayf, 5),
                        std::invalid_argument);
    }
}

TEST_CASE("jump_hidden: carry-through saturation, shape, type sensitivity") {
    auto fx = make_fixture();
    Model& m = fx.model;
    ProcessParams& proc = m.theta1[0];

    PackedEvent ev;
    ev.tod = 0.33;
    ev.day = 4;
    ev.type = 1;
    ev.grid_id = 2;

    SUBCASE("saturated update gate preserves the state bit-for-bit") {
        Model m2 = m;
        carry_through_jumps(m2.theta1[0]);
        ad::Tape t;
        Binder b0(t, false), b1(t, false);
        std::vector<double> h(static_cast<size_t>(proc.hidden_dim));
        Rng rng(3);
        for (double& v : h) v = rng.uniform(-1, 1);
        ad::Var hv = t.constant(h);
        ad::Var out = jump_hidden(b0, b1, m2, m2.theta1[0], ev, hv);
        auto v = t.value(out);
        for (size_t i = 0; i < h.size(); ++i) CHECK(v[i] == h[i]);
    }

    SUBCASE("output dimension equals the hidden dimension") {
        ad::Tape t;
        Binder b0(t, false), b1(t, false);
        std::vector<double> h(static_cast<size_t>(proc.hidden_dim), 0.1);
        ad::Var out = jump_hidden(b0, b1, m, proc, ev, t.constant(h));
        CHECK(out.size == proc.hidden_dim);
    }

    SUBCASE("different event types move the state differently") {
        ad::Tape t;
        Binder b0(t, false), b1(t, false);
        std::vector<double> h(static_cast<size_t>(proc.hidden_dim), 0.1);
        PackedEvent ev2 = ev;
        ev2.type = 0;
        auto a = t.value(jump_hidden(b0, b1, m, proc, ev, t.constant(h)));
        std::vector<double> av(a.begin(), a.end());
        auto b = t.value(jump_hidden(b0, b1, m, proc, ev2, t.constant(h)));
        double diff = 0.0;
        for (size_t i = 0; i < av.size(); ++i) diff += std::abs(av[i] - b[i]);
        CHECK(diff > 1e-9);
    }
}

TEST_CASE("temporal intensity: positive, softplus zero point, continuous") {
    auto fx = make_fixture();
    ProcessParams& proc = fx.model.theta1[0];
    Rng rng(8);
    for (int i = 0; i < 20; ++i) {
        std::vector<double> h(static_cast<size_t>(proc.hidden_dim));
        for (double& v : h) v = rng.uniform(-5, 5);
        CHECK(temporal_intensity_value(proc, h) > 0.0);
    }

    ProcessParams zero = proc;
    std::fill(zero.lam_w.w.begin(), zero.lam_w.w.end(), 0.0);
    zero.lam_b.w[0] = 0.0;
    std::vector<double> h(static_cast<size_t>(proc.hidden_dim), 3.0);
    CHECK(temporal_intensity_value(zero, h) == doctest::Approx(std::log(2.0)));

    // continuity in h
    std::vector<double> h2 = h;
    h2[0] += 1e-8;
    CHECK(std::abs(temporal_intensity_value(proc, h) - temporal_intensity_value(proc, h2)) < 1e-6);
}

TEST_CASE("coupling jump: identity at zero, exact inverse, log-determinant") {
    auto fx = make_fixture();
    Model& m = fx.model;
    ProcessParams proc = m.theta1[0];

    ad::Tape t;
    Binder b1(t, false);
    std::vector<double> cond_v(static_cast<size_t>(1 + proc.hidden_dim + proc.cc_dim), 0.4);
    double s_v[2] = {0.8, -1.1};

    SUBCASE("zero parameters make the jump the identity with zero log-det") {
        zero_process(proc);
        ad::Var cond = t.constant(cond_v);
        ad::Var s = t.constant(s_v);
        ad::Var fwd = coupling_forward(b1, proc, s, cond);
        CHECK(t.value(fwd)[0] == doctest::Approx(0.8));
        CHECK(t.value(fwd)[1] == doctest::Approx(-1.1));
        auto [inv, logdet] = coupling_inverse(b1, proc, s, cond);
        CHECK(t.value0(logdet) == 0.0);
        CHECK(t.value(inv)[0] == doctest::Approx(0.8));
    }

    SUBCASE("inverse undoes forward for random parameters") {
        ad::Var cond = t.constant(cond_v);
        ad::Var s = t.constant(s_v);
        ad::Var fwd = coupling_forward(b1, proc, s, cond);
        auto [back, logdet] = coupling_inverse(b1, proc, fwd, cond);
        CHECK(t.value(back)[0] == doctest::Approx(0.8).epsilon(1e-12));
        CHECK(t.value(back)[1] == doctest::Approx(-1.1).epsilon(1e-12));
        CHECK(std::isfinite(t.value0(logdet)));
    }
}

TEST_CASE("spatial log density: gaussian base cases and identity jumps") {
    RunConfig cfg = testutil::small_config();
    cfg.point_process.hidden_dim = 4;
    auto fx = make_fixture(cfg);
    Model& m = fx.model;
    ProcessParams& proc = m.theta1[0];
    zero_process(proc);

    SUBCASE("no events, frozen flow: exact standard gaussian") {
        PackedSequence seq = make_packed({}, {}, 1);
        auto cc = zero_contexts(seq, m.cfg.encoding.dim);
        ad::Tape t;
        Binder b0(t, false), b1(t, false);
        PathBuildResult path = build_hidden_path(b0, b1, m, proc, seq, 0, 0,
                                                 t.constant(proc.h0.w), 0.0, 1.0, 10);
        HiddenAccess hidden(t, seq, 10);
        hidden.attach_live(path);
        ad::Var lp = spatial_log_density_var(b1, proc, seq, hidden, cc, 0.7, 0.0, 0.0, 10, 0);
        CHECK(t.value0(lp) == doctest::Approx(-std::log(2.0 * std::numbers::pi)));
        ad::Var lp2 = spatial_log_density_var(b1, proc, seq, hidden, cc, 0.7, 1.0, -1.0, 10, 0);
        CHECK(t.value0(lp2) == doctest::Approx(std_gauss_log(1.0, -1.0)));
    }

    SUBCASE("identity jumps contribute exactly zero") {
        PackedSequence seq = make_packed({0.3, 0.6}, {{0.1, 0.2}, {-0.4, 0.5}}, 1);
        auto cc = zero_contexts(seq, m.cfg.encoding.dim);
        ad::Tape t;
        Binder b0(t, false), b1(t, false);
        PathBuildResult path = build_hidden_path(b0, b1, m, proc, seq, 0, 2,
                                                 t.constant(proc.h0.w), 0.0, 1.0, 10);
        HiddenAccess hidden(t, seq, 10);
        hidden.attach_live(path);
        ad::Var lp = spatial_log_density_var(b1, proc, seq, hidden, cc, 0.9, 0.3, -0.7, 10, 0);
        CHECK(t.value0(lp) == doctest::Approx(std_gauss_log(0.3, -0.7)));
    }
}

TEST_CASE("spatial density normalizes under quadrature on a 3-event history") {
    RunConfig cfg = testutil::small_config();
    cfg.point_process.hidden_dim = 4;
    cfg.point_process.dynamics_hidden = 4;
    cfg.point_process.coupling_hidden = 4;
    cfg.point_process.solver_steps = 10;
    cfg.point_process.init_scale = 0.3; // visible transport, still stable
    auto fx = make_fixture(cfg);
    Model& m = fx.model;

    PackedSequence seq = make_packed({0.25, 0.5, 0.75}, {{0.4, -0.2}, {-0.6, 0.1}, {0.2, 0.9}}, 1);
    auto cc = zero_contexts(seq, m.cfg.encoding.dim);
    FrozenProcess frozen(m, 0, seq, cc);

    double tau_bar = 0.9;
    auto density = [&](double x, double y) {
        return std::exp(frozen.spatial_log_density(tau_bar, x, y));
    };
    double mass = quadrature_integral(density, -6, 6, -6, 6, 150);
    CHECK(mass == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("affine flow and jumps match the closed-form gaussian pushforward") {
    RunConfig cfg = testutil::small_config();
    cfg.point_process.hidden_dim = 4;
    cfg.point_process.dynamics_hidden = 0;  // affine f_s
    cfg.point_process.coupling_hidden = 0;  // affine conditioners
    cfg.point_process.solver_steps = 20;
    auto fx = make_fixture(cfg);
    Model& m = fx.model;
    ProcessParams& proc = m.theta1[0];
    zero_process(proc);

    // ds/dtau = A s + c with A over the s columns of the affine f_s
    const double A[2][2] = {{0.3, 0.1}, {-0.2, -0.15}};
    const double c[2] = {0.05, -0.1};
    int in = proc.f_s.in; // [tau, x, y, h...]
    proc.f_s.w1.w[0 * in + 1] = A[0][0];
    proc.f_s.w1.w[0 * in + 2] = A[0][1];
    proc.f_s.w1.w[1 * in + 1] = A[1][0];
    proc.f_s.w1.w[1 * in + 2] = A[1][1];
    proc.f_s.b1.w = {c[0], c[1]};

    // jump: diagonal affine, independent of state and conditioning
    proc.couple_cond.b1.w = {0.15, 0.3};   // a2_raw, shift2
    proc.couple_coord.b1.w = {-0.1, -0.2}; // a1_raw, shift1
    double a2 = 2.0 * std::tanh(0.15), b2 = 0.3;
    double a1 = 2.0 * std::tanh(-0.1), b1c = -0.2;

    std::vector<double> jump_times = {0.3, 0.7};
    PackedSequence seq = make_packed(jump_times, {{0.0, 0.0}, {0.0, 0.0}}, 1);
    auto cc = zero_contexts(seq, m.cfg.encoding.dim);
    FrozenProcess frozen(m, 0, seq, cc);

    // independent oracle: propagate mean and covariance with fine RK4
    double mean[2] = {0.0, 0.0};
    double cov[2][2] = {{1.0, 0.0}, {0.0, 1.0}};
    auto flow_to = [&](double from, double to) {
        int steps = 4000;
        double dt = (to - from) / steps;
        for (int s = 0; s < steps; ++s) {
            // midpoint-free classical RK4 on (mean, cov)
            auto deriv = [&](const double mn[2], const double cv[2][2], double dmn[2],
                             double dcv[2][2]) {
                dmn[0] = A[0][0] * mn[0] + A[0][1] * mn[1] + c[0];
                dmn[1] = A[1][0] * mn[0] + A[1][1] * mn[1] + c[1];
                for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 2; ++j)
                        dcv[i][j] = A[i][0] * cv[0][j] + A[i][1] * cv[1][j] +
                                    cv[i][0] * A[j][0] + cv[i][1] * A[j][1];
            };
            double k1m[2], k1c[2][2], k2m[2], k2c[2][2], k3m[2], k3c[2][2], k4m[2], k4c[2][2];
            double tm[2], tc[2][2];
            deriv(mean, cov, k1m, k1c);
            for (int i = 0; i < 2; ++i) tm[i] = mean[i] + 0.5 * dt * k1m[i];
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) tc[i][j] = cov[i][j] + 0.5 * dt * k1c[i][j];
            deriv(tm, tc, k2m, k2c);
            for (int i = 0; i < 2; ++i) tm[i] = mean[i] + 0.5 * dt * k2m[i];
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) tc[i][j] = cov[i][j] + 0.5 * dt * k2c[i][j];
            deriv(tm, tc, k3m, k3c);
            for (int i = 0; i < 2; ++i) tm[i] = mean[i] + dt * k3m[i];
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) tc[i][j] = cov[i][j] + dt * k3c[i][j];
            deriv(tm, tc, k4m, k4c);
            for (int i = 0; i < 2; ++i)
                mean[i] += dt / 6.0 * (k1m[i] + 2 * k2m[i] + 2 * k3m[i] + k4m[i]);
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    cov[i][j] += dt / 6.0 * (k1c[i][j] + 2 * k2c[i][j] + 2 * k3c[i][j] + k4c[i][j]);
        }
    };
    double tau_bar = 0.9, prev = 0.0;
    for (double tj : jump_times) {
        flow_to(prev, tj);
        double d1 = std::exp(a1), d2 = std::exp(a2);
        mean[0] = d1 * mean[0] + b1c;
        mean[1] = d2 * mean[1] + b2;
        cov[0][0] *= d1 * d1;
        cov[0][1] *= d1 * d2;
        cov[1][0] *= d1 * d2;
        cov[1][1] *= d2 * d2;
        prev = tj;
    }
    flow_to(prev, tau_bar);

    double det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    auto closed_form = [&](double x, double y) {
        double dx = x - mean[0], dy = y - mean[1];
        double quad = (cov[1][1] * dx * dx - 2.0 * cov[0][1] * dx * dy + cov[0][0] * dy * dy) / det;
        return -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * quad;
    };

    for (auto [x, y] : {std::pair{0.0, 0.0}, {0.5, -0.3}, {-1.0, 1.0}}) {
        double got = frozen.spatial_log_density(tau_bar, x, y);
        CHECK(std::abs(got - closed_form(x, y)) < 1e-3);
    }
}

TEST_CASE("log likelihood: empty targets, homogeneous closed form, additivity") {
    RunConfig cfg = testutil::small_config();
    cfg.point_process.hidden_dim = 4;
    auto fx = make_fixture(cfg);
    Model& m = fx.model;
    ProcessParams& proc = m.theta1[0];
    zero_process(proc);
    carry_through_jumps(proc);

    SUBCASE("no target events: pure survival term over the day span") {
        PackedSequence seq = make_packed({}, {}, 3);
        auto cc = zero_contexts(seq, m.cfg.encoding.dim);
        double ll = log_likelihood_value(m, 0, seq, cc);
        CHECK(ll == doctest::Approx(-3.0 * std::log(2.0)).epsilon(1e-9));
    }

    SUBCASE("constant intensity and standard-gaussian locations reproduce the formula") {
        std::vector<std::pair<double, double>> xy = {{0.4, -0.2}, {-0.6, 0.1}, {0.2, 0.9}};
        PackedSequence seq = make_packed({0.2, 0.5, 0.8}, xy, 2);
        auto cc = zero_contexts(seq, m.cfg.encoding.dim);
        double expect = 3.0 * std::log(std::log(2.0)) - 2.0 * std::log(2.0);
        for (auto [x, y] : xy) expect += std_gauss_log(x, y);
        CHECK(log_likelihood_value(m, 0, seq, cc) == doctest::Approx(expect).epsilon(1e-9));
    }

    SUBCASE("one more event adds exactly log lambda at its time") {
        PackedSequence seq2 = make_packed({0.2, 0.5}, {{0.1, 0.1}, {0.2, 0.2}}, 1);
        PackedSequence seq3 =
            make_packed({0.2, 0.5, 0.9}, {{0.1, 0.1}, {0.2, 0.2}, {0.3, 0.3}}, 1);
        auto cc2 = zero_contexts(seq2, m.cfg.encoding.dim);
        auto cc3 = zero_contexts(seq3, m.cfg.encoding.dim);
        ad::Tape t2;
        Binder a0(t2, false), a1(t2, false);
        auto p2 = log_likelihood_var(a0, a1, m, proc, seq2, cc2, 10, 0);
        ad::Tape t3;
        Binder b0(t3, false), b1(t3, false);
        auto p3 = log_likelihood_var(b0, b1, m, proc, seq3, cc3, 10, 0);
        double diff = t3.value0(p3.event_sum) - t2.value0(p2.event_sum);
        CHECK(diff == doctest::Approx(std::log(std::log(2.0))).epsilon(1e-12));
    }
}

TEST_CASE("log likelihood gradient passes the finite-difference suite") {
    RunConfig cfg = testutil::small_config();
    cfg.encoding.dim = 8;
    cfg.encoding.target_dim = 8;
    cfg.point_process.hidden_dim = 3;
    cfg.point_process.dynamics_hidden = 3;
    cfg.point_process.coupling_hidden = 3;
    cfg.point_process.solver_steps = 5;
    auto fx = make_fixture(cfg);
    Model& m = fx.model;

    PackedSequence seq =
        make_packed({0.2, 0.55, 0.8}, {{0.4, -0.2}, {-0.6, 0.1}, {0.2, 0.9}}, 2, 2);
    Rng ccr(4);
    std::vector<std::vector<double>> cc(seq.events.size(),
                                        std::vector<double>(m.cfg.encoding.dim));
    for (auto& v : cc)
        for (double& x : v) x = ccr.uniform(-1, 1);

    BlockSet set = m.blocks_theta1(0);
    std::vector<double> theta;
    set.snapshot(theta);

    auto eval = [&](std::span<const double> th) {
        std::vector<double> saved;
        set.snapshot(saved);
        set.restore(th);
        double v = log_likelihood_value(m, 0, seq, cc);
        set.restore(saved);
        return v;
    };

    ad::Tape tape;
    Binder b0(tape, false), b1(tape, true);
    auto parts = log_likelihood_var(b0, b1, m, m.theta1[0], seq, cc, 5, 0);
    tape.backward(parts.total);
    std::vector<double> analytic(set.total, 0.0);
    b1.collect(set.offsets, analytic);

    CHECK(finite_diff_max_rel_error(eval, theta, analytic, 1e-5) < 1e-3);
}

TEST_CASE("train_mle: likelihood improves and empty data is rejected") {
    RunConfig cfg = testutil::small_config();
    cfg.point_process.hidden_dim = 4;
    cfg.point_process.dynamics_hidden = 4;
    cfg.point_process.coupling_hidden = 4;
    cfg.point_process.solver_steps = 4;

    GeneratorSpec gen;
    gen.kind = GeneratorSpec::Kind::poisson;
    gen.rate_per_day = 10.0;
    gen.days = 8;
    gen.seed = 21;
    gen.bbox = testutil::small_bbox();
    auto fx = make_fixture(cfg, gen);
    Model& m = fx.model;

    PackedSequence seq = pack_events(fx.ds, 0, m.scaler);
    auto cc = event_conditioning_contexts(m, fx.hist, seq, 5);

    MleOptions opt;
    opt.epochs = 8;
    opt.lr = 0.01;
    opt.chunk_events = 40;
    opt.steps = 4;
    opt.max_jumps = 4;
    auto trace = train_mle(m, 0, seq, cc, opt);
    REQUIRE(trace.size() == 8);
    CHECK(trace.back() <= trace.front());

    SUBCASE("no target events raises an empty-dataset error") {
        PackedSequence empty = make_packed({}, {}, 1);
        CHECK_THROWS_AS(train_mle(m, 0, empty, zero_contexts(empty, m.cfg.encoding.dim), opt),
                        DataError);
    }
}

TEST_CASE("evolving feature: zero encoder, shape, trained discrimination") {
    RunConfig cfg = testutil::small_config();
    cfg.point_process.hidden_dim = 6;
    cfg.point_process.dynamics_hidden = 6;
    cfg.point_process.coupling_hidden = 6;
    cfg.point_process.solver_steps = 4;

    GeneratorSpec gen;
    gen.kind = GeneratorSpec::Kind::planted;
    gen.days = 10;
    gen.seed = 31;
    gen.bbox = testutil::small_bbox();
    gen.rate_per_day = 0.5;
    gen.types = {"theft"};
    ClusterSpec cl;
    cl.lat = 40.712;
    cl.lon = -74.012;
    cl.radius_km = 0.35;
    cl.type = "theft";
    cl.rate_per_day = 8.0;
    gen.clusters = {cl};
    auto fx = make_fixture(cfg, gen);
    Model& m = fx.model;

    SUBCASE("zero encoder parameters give the zero vector") {
        Model z = m;
        z.theta2.evolve.for_each_block([](ParamBlock& b) {
            std::fill(b.w.begin(), b.w.end(), 0.0);
        });
        EvolvingInputs in;
        in.log_risk = -1.3;
        in.h.assign(static_cast<size_t>(cfg.point_process.hidden_dim), 0.4);
        in.day = 3;
        ad::Tape t;
        Binder b2(t, false);
        ad::Var v = evolving_feature_var(b2, z, in, 0.25, 0.01);
        CHECK(v.size == cfg.encoding.dim);
        for (double x : t.value(v)) CHECK(x == 0.0);
    }

    SUBCASE("after MLE, risk is higher in the planted cluster than far away") {
        PackedSequence seq = pack_events(fx.ds, 0, m.scaler);
        auto cc = event_conditioning_contexts(m, fx.hist, seq, 5);
        MleOptions opt;
        opt.epochs = 20;
        opt.lr = 0.004;
        opt.chunk_events = 48;
        opt.steps = 4;
        opt.max_jumps = 6;
        auto refresh = [&](int epoch) {
            return event_conditioning_contexts(m, fx.hist, seq, mix_seed(5, 0x5CE, epoch));
        };
        train_mle(m, 0, seq, cc, opt, refresh);

        FrozenProcess frozen(m, 0, seq, cc);
        auto [hx, hy] = m.scaler.to_std(cl.lat, cl.lon);
        auto [lx, ly] = m.scaler.to_std(40.739, -73.981); // far corner
        double hot = frozen.log_risk(0.5, hx, hy);
        double cold = frozen.log_risk(0.5, lx, ly);
        CHECK(hot > cold);

        // evolving features at the two sites differ
        int hot_cell = map_to_grid(m.grid, cl.lat, cl.lon);
        int cold_cell = map_to_grid(m.grid, 40.739, -73.981);
        EvolvingInputs a = evolving_inputs(frozen, m, hot_cell, fx.ds.day_first() + 5.5);
        EvolvingInputs b = evolving_inputs(frozen, m, cold_cell, fx.ds.day_first() + 5.5);
        ad::Tape t;
        Binder b2(t, false);
        auto va = t.value(evolving_feature_var(b2, m, a, 0.25, m.cell_area_std()));
        std::vector<double> vav(va.begin(), va.end());
        auto vb = t.value(evolving_feature_var(b2, m, b, 0.25, m.cell_area_std()));
        double diff = 0.0;
        for (size_t i = 0; i < vav.size(); ++i) diff += std::abs(vav[i] - vb[i]);
        CHECK(diff > 1e-9);
    }
}
