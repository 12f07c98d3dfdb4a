#include <doctest.h>

#include <cmath>

#include "oracle_helpers.hpp"
#include "winq/corpus.hpp"
#include "winq/eval.hpp"
#include "winq/landscape.hpp"
#include "winq/model.hpp"
#include "winq/rng.hpp"

using namespace winq;
using testing::rel_err;

namespace {

ModelConfig small_mlp() {
    ModelConfig c;
    c.family = ModelFamily::Mlp;
    c.d_model = 8;
    c.mlp_hidden = 16;
    c.vocab = 8;
    c.context_length = 4;
    c.batch_size = 4;
    return c;
}

}  // namespace

TEST_SUITE("landscape") {

TEST_CASE("prox step closed form") {
    std::vector<double> v{1.0, -2.0, 0.5};

    ProxParams none{0.1, 0.0, {0.0, 0.0, 0.0}};
    CHECK(prox_step(v, none) == v);  // gamma = 0 returns V exactly

    ProxParams half{0.1, 10.0, {2.0, 2.0, 2.0}};
    CHECK(half.alpha() == doctest::Approx(0.5).epsilon(1e-15));
    std::vector<double> w = prox_step(v, half);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(w[i] == doctest::Approx(0.5 * v[i] + 0.5 * 2.0).epsilon(1e-14));

    ProxParams inf{1.0, 1e12, {3.0, 3.0, 3.0}};
    std::vector<double> q = prox_step(v, inf);
    for (double x : q) CHECK(rel_err(x, 3.0) <= 1e-10);

    CHECK_THROWS_AS(prox_step(v, ProxParams{0.0, 1.0, {0, 0, 0}}), ArgumentError);
    CHECK_THROWS_AS(prox_step(v, ProxParams{0.1, 1.0, {0, 0}}), ArgumentError);
}

TEST_CASE("alpha-gamma map and its inverse") {
    CHECK(alpha_gamma_map(0.1, 0.0) == 0.0);
    CHECK(alpha_gamma_map(0.1, 10.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(gamma_from_alpha(0.1, 1.0), ArgumentError);
    CHECK_THROWS_AS(alpha_gamma_map(0.0, 1.0), ArgumentError);

    SplitRng rng(2, "roundtrip");
    for (int i = 0; i < 1000; ++i) {
        double eta = 1e-4 + rng.uniform01() * 2.0;
        double gamma = rng.uniform01() * 50.0;
        double alpha = alpha_gamma_map(eta, gamma);
        double back = gamma_from_alpha(eta, alpha);
        if (gamma == 0.0)
            CHECK(back == 0.0);
        else
            CHECK(std::fabs(back - gamma) <= 1e-12 * gamma);
    }
}

TEST_CASE("prox equals interpolation coordinatewise") {
    SplitRng rng(3, "prox-eq");

    SUBCASE("alpha = 0 leaves the weights untouched") {
        std::vector<double> w(16);
        for (auto& x : w) x = rng.normal();
        QuantGrid grid = make_grid(w, {16}, {QuantKind::SymmetricMinMax, 3});
        ProxEquivalenceReport rep = verify_prox_equivalence(w, grid, 0.5, 0.0);
        CHECK(rep.max_deviation == 0.0);
        CHECK(rep.ok);
    }

    SUBCASE("hand-checked instance") {
        // V = 0.5, q = 1.0, eta = 0.1, alpha = 0.4 -> both routes give 0.7.
        ProxParams p{0.1, gamma_from_alpha(0.1, 0.4), {1.0}};
        std::vector<double> w = prox_step({0.5}, p);
        CHECK(std::fabs(w[0] - 0.7) <= 1e-15);
        CHECK(std::fabs((1.0 - 0.4) * 0.5 + 0.4 * 1.0 - 0.7) <= 1e-15);
    }

    SUBCASE("random instances at scale") {
        std::vector<double> w(10000);
        for (auto& x : w) x = rng.normal();
        QuantGrid grid = make_grid(w, {10000}, {QuantKind::SymmetricMinMax, 2});
        for (int rep = 0; rep < 5; ++rep) {
            double eta = 0.01 + rng.uniform01();
            double alpha = 0.999 * rng.uniform01();
            ProxEquivalenceReport r = verify_prox_equivalence(w, grid, eta, alpha);
            CHECK(r.ok);
            CHECK(r.max_deviation <= 1e-12);
            CHECK(r.cell_crossings == 0);
        }
    }
}

TEST_CASE("interpolation never crosses a cell boundary") {
    SplitRng rng(4, "cells");
    std::vector<double> w(4096);
    for (auto& x : w) x = rng.normal();
    QuantGrid grid = make_grid(w, {4096}, {QuantKind::SymmetricMinMax, 3});
    std::vector<double> q = quantize(w, grid);
    for (double alpha : {0.1, 0.4, 0.8, 1.0}) {
        std::vector<double> wa(w.size());
        for (std::size_t i = 0; i < w.size(); ++i)
            wa[i] = (1.0 - alpha) * w[i] + alpha * q[i];
        std::vector<double> qa = quantize(wa, grid);
        CHECK(qa == q);
    }
}

TEST_CASE("hessian shift identity on the quadratic") {
    // L = 1/2 W' A W with A = diag(1,2); adding (gamma/2)||W - q||^2 with
    // gamma = 3 shifts the spectrum to {4, 5}.
    ComputationGraph g;
    ParamVector p;
    p.add("w", {2}, true);
    p.slice("w")[0] = 0.4;
    p.slice("w")[1] = -0.9;
    int wrow = g.reshape(g.param("w", {2}), {1, 2});
    int aw = g.matmul(wrow, g.constant({2, 2}, {1.0, 0.0, 0.0, 2.0}));
    g.set_output(g.scale(g.sum(g.mul(wrow, aw)), 0.5));

    QuantLayout empty;  // 16-bit view: L_Q = L
    HessianShiftReport rep = verify_hessian_shift(g, p, {}, empty, 3.0);
    CHECK(rep.ok);
    CHECK(rep.max_penalty_off_diag <= 1e-10);
    CHECK(rep.max_penalty_diag_err <= 1e-10);

    LinOp base = ste_hessian_operator(g, p, {}, empty);
    DenseHessianResult dense = dense_hessian_oracle(base);
    CHECK(dense.eigenvalues[0] + 3.0 == doctest::Approx(4.0).epsilon(1e-10));
    CHECK(dense.eigenvalues[1] + 3.0 == doctest::Approx(5.0).epsilon(1e-10));

    HessianShiftReport zero = verify_hessian_shift(g, p, {}, empty, 0.0);
    CHECK(zero.ok);
    CHECK(zero.max_eigen_shift_err <= 1e-10);
}

TEST_CASE("hessian shift identity on a small quantized mlp") {
    BuiltModel m = build_model(small_mlp(), 6);
    SyntheticCorpus corpus = generate_corpus(7, 8, 2000, 4);
    BatchSampler s(corpus, 4, 4, 8);
    Batch batch = s.next();
    ParamVector params = m.params;
    QuantLayout layout = QuantLayout::attach(params, 2);
    HessianShiftReport rep = verify_hessian_shift(m.graph, params, batch, layout, 0.5);
    CHECK(rep.ok);
    CHECK(rep.max_eigen_shift_err <= 1e-7);
}

TEST_CASE("curvature sweep basics") {
    BuiltModel m = build_model(small_mlp(), 10);
    SyntheticCorpus corpus = generate_corpus(11, 8, 2000, 4);
    BatchSampler s(corpus, 4, 4, 12);
    Batch batch = s.next();
    ParamVector params = m.params;
    QuantLayout layout = QuantLayout::attach(params, 2);

    SpectrumConfig slq;
    slq.probes = 8;
    slq.lanczos_steps = 12;
    slq.seed = 5;

    SUBCASE("rows are sorted and the default grid has six entries") {
        SweepResult r = interpolation_curvature_sweep(m.graph, params, batch, layout,
                                                      {1.0, 0.0, 0.4}, slq);
        REQUIRE(r.rows.size() == 3);
        CHECK(r.rows[0].alpha == 0.0);
        CHECK(r.rows[1].alpha == 0.4);
        CHECK(r.rows[2].alpha == 1.0);

        SweepResult d = interpolation_curvature_sweep(
            m.graph, params, batch, layout, {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}, slq);
        CHECK(d.rows.size() == 6);
    }

    SUBCASE("alpha=0 equals the spectrum of the unmodified point") {
        SweepResult r =
            interpolation_curvature_sweep(m.graph, params, batch, layout, {0.0}, slq);
        LinOp op = hessian_operator(m.graph, params, batch);
        SpectrumEstimate est = slq_estimate(op, slq.probes, slq.lanczos_steps, slq.seed);
        SpectrumStats st = spectrum_stats(est, slq.tau);
        CHECK(r.rows[0].max_abs_theta == st.max_abs);
        CHECK(r.rows[0].near_zero_mass == st.near_zero_mass);
    }

    SUBCASE("frozen grids keep the quantized loss constant across alpha") {
        SweepResult r = interpolation_curvature_sweep(m.graph, params, batch, layout,
                                                      {0.0, 0.5, 1.0}, slq);
        CHECK(std::fabs(r.rows[1].loss - r.rows[0].loss) <= 1e-12);
        CHECK(std::fabs(r.rows[2].loss - r.rows[0].loss) <= 1e-12);
        // alpha=1 sits exactly at Q(W): idempotence keeps the loss in place.
        EffectiveQuant eq = quantize_params(params, layout, false);
        double qloss = forward_eval(m.graph, eq.eff, batch);
        CHECK(std::fabs(r.rows[2].loss - qloss) <= 1e-12);
    }

    SUBCASE("sweep is deterministic") {
        SweepResult a =
            interpolation_curvature_sweep(m.graph, params, batch, layout, {0.0, 0.6}, slq);
        SweepResult b =
            interpolation_curvature_sweep(m.graph, params, batch, layout, {0.0, 0.6}, slq);
        REQUIRE(a.rows.size() == b.rows.size());
        for (std::size_t i = 0; i < a.rows.size(); ++i) {
            CHECK(a.rows[i].max_abs_theta == b.rows[i].max_abs_theta);
            CHECK(a.rows[i].near_zero_mass == b.rows[i].near_zero_mass);
            CHECK(a.rows[i].loss == b.rows[i].loss);
        }
    }

    SUBCASE("refit mode reports the loss drift") {
        SweepResult r = interpolation_curvature_sweep(m.graph, params, batch, layout,
                                                      {0.0, 0.5}, slq, /*refit_grids=*/true);
        CHECK(r.refit_grids);
        CHECK(std::isfinite(r.rows[1].loss));
    }

    SUBCASE("alphas outside [0,1] are rejected") {
        CHECK_THROWS_AS(interpolation_curvature_sweep(m.graph, params, batch, layout,
                                                      {0.0, 1.2}, slq),
                        ArgumentError);
    }
}

}  // TEST_SUITE
