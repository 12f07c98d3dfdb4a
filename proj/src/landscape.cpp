#include "winq/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <Eigen/Dense>

#include "winq/errors.hpp"
#include "winq/eval.hpp"

namespace winq {

std::vector<double> prox_step(const std::vector<double>& v, const ProxParams& p) {
    if (p.eta <= 0.0) throw ArgumentError("prox_step: eta must be positive");
    if (p.gamma < 0.0) throw ArgumentError("prox_step: gamma must be >= 0");
    if (p.q.size() != v.size()) throw ArgumentError("prox_step: length mismatch");
    double shrink = 1.0 / (1.0 + p.eta * p.gamma);
    double alpha = p.eta * p.gamma * shrink;
    std::vector<double> w(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = shrink * v[i] + alpha * p.q[i];
    return w;
}

double alpha_gamma_map(double eta, double gamma) {
    if (eta <= 0.0) throw ArgumentError("alpha_gamma_map: eta must be positive");
    if (gamma < 0.0) throw ArgumentError("alpha_gamma_map: gamma must be >= 0");
    return eta * gamma / (1.0 + eta * gamma);
}

double gamma_from_alpha(double eta, double alpha) {
    if (eta <= 0.0) throw ArgumentError("gamma_from_alpha: eta must be positive");
    if (alpha < 0.0 || alpha >= 1.0)
        throw ArgumentError("gamma_from_alpha: alpha must lie in [0,1); alpha=1 needs "
                            "infinite regularization");
    return alpha / (eta * (1.0 - alpha));
}

ProxEquivalenceReport verify_prox_equivalence(const std::vector<double>& w, const QuantGrid& grid,
                                              double eta, double alpha) {
    ProxEquivalenceReport rep;
    ProxParams p;
    p.eta = eta;
    p.gamma = gamma_from_alpha(eta, alpha);
    p.q = quantize(w, grid);
    std::vector<double> via_prox = prox_step(w, p);

    std::vector<double> via_interp(w.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        via_interp[i] = (1.0 - alpha) * w[i] + alpha * p.q[i];

    for (std::size_t i = 0; i < w.size(); ++i)
        rep.max_deviation = std::max(rep.max_deviation, std::fabs(via_prox[i] - via_interp[i]));

    // Cell stability: interpolation moves toward the cell's grid point, so an
    // interior coordinate must still quantize to the same value.
    std::vector<double> q_after = quantize(via_interp, grid);
    for (std::size_t i = 0; i < w.size(); ++i)
        if (q_after[i] != p.q[i]) ++rep.cell_crossings;

    rep.ok = rep.max_deviation <= 1e-12;
    return rep;
}

HessianShiftReport verify_hessian_shift(const ComputationGraph& graph, const ParamVector& params,
                                        const Batch& batch, const QuantLayout& layout,
                                        double gamma) {
    LinOp op = ste_hessian_operator(graph, params, batch, layout);
    if (op.dim > 2000)
        throw ArgumentError("verify_hessian_shift: model too large for the dense oracle (" +
                            std::to_string(op.dim) + " params)");

    std::size_t n = op.dim;
    EffectiveQuant eq = quantize_params(params, layout, false);
    const std::vector<double>& w = params.data();
    const std::vector<double>& q = eq.eff.data();  // quantization target, frozen

    // Penalty gradient is analytic; its dense Hessian comes from central
    // differences, independent of the operator under test.
    auto penalty_grad = [&](const std::vector<double>& x) {
        std::vector<double> g(n);
        for (std::size_t i = 0; i < n; ++i) g[i] = gamma * (x[i] - q[i]);
        return g;
    };
    double eps = 1e-5 * (1.0 + inf_norm(w));
    std::vector<double> P(n * n, 0.0);
    std::vector<double> x = w;
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = w[i] + eps;
        std::vector<double> gp = penalty_grad(x);
        x[i] = w[i] - eps;
        std::vector<double> gm = penalty_grad(x);
        x[i] = w[i];
        for (std::size_t r = 0; r < n; ++r) P[r * n + i] = (gp[r] - gm[r]) / (2.0 * eps);
    }

    HessianShiftReport rep;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            if (r == c)
                rep.max_penalty_diag_err =
                    std::max(rep.max_penalty_diag_err, std::fabs(P[r * n + c] - gamma));
            else
                rep.max_penalty_off_diag =
                    std::max(rep.max_penalty_off_diag, std::fabs(P[r * n + c]));
        }

    DenseHessianResult base = dense_hessian_oracle(op);
    Eigen::MatrixXd M(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c)
            M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                base.matrix[r * n + c] + 0.5 * (P[r * n + c] + P[c * n + r]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    if (es.info() != Eigen::Success)
        throw NumericalError("verify_hessian_shift: eigendecomposition failed");

    for (std::size_t i = 0; i < n; ++i)
        rep.max_eigen_shift_err =
            std::max(rep.max_eigen_shift_err,
                     std::fabs(es.eigenvalues()(static_cast<Eigen::Index>(i)) -
                               (base.eigenvalues[i] + gamma)));

    rep.ok = rep.max_penalty_diag_err <= 1e-8 && rep.max_penalty_off_diag <= 1e-8 &&
             rep.max_eigen_shift_err <= 1e-7;
    return rep;
}

SweepResult interpolation_curvature_sweep(const ComputationGraph& graph,
                                          const ParamVector& params, const Batch& batch,
                                          const QuantLayout& layout,
                                          std::vector<double> alpha_grid,
                                          const SpectrumConfig& slq_cfg, bool refit_grids) {
    for (double a : alpha_grid)
        if (a < 0.0 || a > 1.0)
            throw ArgumentError("interpolation_curvature_sweep: alpha outside [0,1]");
    std::sort(alpha_grid.begin(), alpha_grid.end());
    slq_cfg.validate();

    // Grids frozen at W: the interpolation target q = Q(W) stays fixed.
    auto grids = layout.grids_at(params);
    SweepResult out;
    out.slq = slq_cfg;
    out.refit_grids = refit_grids;

    EvalOptions fp;  // quantized loss is evaluated through effective params
    for (double alpha : alpha_grid) {
        ParamVector wa = params;
        std::vector<double> q;
        for (std::size_t t = 0; t < layout.tensor_entry.size(); ++t) {
            const auto& e = params.entry(layout.tensor_entry[t]);
            auto slice = wa.slice(e);
            q.resize(slice.size());
            quantize(slice, grids[t], q);
            for (std::size_t i = 0; i < slice.size(); ++i)
                slice[i] = (1.0 - alpha) * slice[i] + alpha * q[i];
        }

        // Loss of the quantized model at W_alpha.
        double loss;
        if (refit_grids) {
            EffectiveQuant eq = quantize_params(wa, layout, false);
            loss = forward_eval(graph, eq.eff, batch, fp);
        } else {
            ParamVector eff = wa;
            for (std::size_t t = 0; t < layout.tensor_entry.size(); ++t) {
                const auto& e = params.entry(layout.tensor_entry[t]);
                quantize(wa.slice(e), grids[t], eff.slice(e));
            }
            loss = forward_eval(graph, eff, batch, fp);
        }

        // Curvature at the interpolated point itself (quantizer as identity).
        LinOp op = hessian_operator(graph, wa, batch);
        if (slq_cfg.subset != "all") op = masked_operator(std::move(op), subset_mask(wa, slq_cfg.subset));
        SpectrumEstimate est = slq_estimate(op, slq_cfg.probes, slq_cfg.lanczos_steps,
                                            slq_cfg.seed);
        SpectrumStats stats = spectrum_stats(est, slq_cfg.tau);

        out.rows.push_back({alpha, stats.max_abs, stats.near_zero_mass, loss});
    }
    return out;
}

void write_sweep_csv(const SweepResult& sweep, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot open for writing: " + path);
    std::fputs("alpha,max_abs_theta,near_zero_mass,loss\n", f);
    for (const auto& r : sweep.rows)
        std::fprintf(f, "%.17g,%.17g,%.17g,%.17g\n", r.alpha, r.max_abs_theta, r.near_zero_mass,
                     r.loss);
    std::fclose(f);
}

}  // namespace winq
