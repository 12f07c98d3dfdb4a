#include "winq/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include <Eigen/Dense>

#include "winq/errors.hpp"
#include "winq/eval.hpp"
#include "winq/hadamard.hpp"
#include "winq/rng.hpp"

namespace winq {

LinOp hessian_operator(const ComputationGraph& graph, const ParamVector& params,
                       const Batch& batch) {
    auto p = std::make_shared<ParamVector>(params);
    LinOp op;
    op.dim = params.size();
    op.provenance = "hessian";
    op.apply = [&graph, p, batch](const double* v, double* out) {
        std::span<const double> vs(v, p->size());
        std::vector<double> hv = hvp(graph, *p, batch, vs);
        std::copy(hv.begin(), hv.end(), out);
    };
    return op;
}

LinOp ste_hessian_operator(const ComputationGraph& graph, const ParamVector& params,
                           const Batch& batch, const QuantLayout& layout, bool hadamard) {
    // Evaluation point: effective quantized parameters, expressed in latent
    // coordinates (H^T Q(H W) on the Hadamard path).
    EffectiveQuant eq = quantize_params(params, layout, hadamard);
    if (hadamard)
        for (std::size_t t = 0; t < layout.tensor_entry.size(); ++t) {
            const auto& e = params.entry(layout.tensor_entry[t]);
            fwht_weight(eq.eff.slice(e), e.shape);
        }
    auto point = std::make_shared<ParamVector>(std::move(eq.eff));

    // dQ/da columns for learnable steps (the standard learnable-step rule,
    // with the cell assignment frozen at the current weights).
    struct StepColumn {
        std::size_t tensor_offset;
        std::size_t tensor_length;
        std::size_t step_offset;
        std::vector<double> dq_da;
        Shape shape;
    };
    auto columns = std::make_shared<std::vector<StepColumn>>();
    bool rotated = hadamard;
    for (std::size_t t = 0; t < layout.tensor_entry.size(); ++t) {
        if (!layout.specs[t].learnable()) continue;
        const auto& e = params.entry(layout.tensor_entry[t]);
        const auto& grid = eq.grids[t];
        const auto& latent = eq.pre_quant[t];
        StepColumn col;
        col.tensor_offset = e.offset;
        col.tensor_length = e.length;
        col.step_offset = params.entry(static_cast<std::size_t>(layout.step_entry[t])).offset;
        col.shape = e.shape;
        col.dq_da.resize(e.length);
        double a = grid.a[0], b = grid.b[0];
        for (std::size_t i = 0; i < e.length; ++i) {
            double z = (latent[i] - b) / a;
            bool in = z >= grid.v_neg && z <= grid.v_pos;
            double zc = std::clamp(z, static_cast<double>(grid.v_neg),
                                   static_cast<double>(grid.v_pos));
            col.dq_da[i] = round_even(zc) - (in ? z : 0.0);
        }
        columns->push_back(std::move(col));
    }

    LinOp op;
    op.dim = params.size();
    op.provenance = std::string("ste_hessian") + (hadamard ? "+hadamard" : "");
    op.apply = [&graph, point, batch, columns, rotated](const double* v, double* out) {
        std::size_t n = point->size();
        // u = J v: weight block is identity, step entries fan out along dQ/da
        // (on the Hadamard path the column lives in the rotated domain, and
        // the weight block is H^T Q' H = identity under STE).
        std::vector<double> u(v, v + n);
        for (const auto& col : *columns) {
            double vs = v[col.step_offset];
            u[col.step_offset] = 0.0;
            if (vs != 0.0) {
                if (rotated) {
                    std::vector<double> add(col.dq_da);
                    for (auto& x : add) x *= vs;
                    fwht_weight(add, col.shape);  // back to latent coordinates
                    for (std::size_t i = 0; i < col.tensor_length; ++i)
                        u[col.tensor_offset + i] += add[i];
                } else {
                    for (std::size_t i = 0; i < col.tensor_length; ++i)
                        u[col.tensor_offset + i] += col.dq_da[i] * vs;
                }
            }
        }
        std::vector<double> hu = hvp(graph, *point, batch, u);
        // out = J^T (H u)
        std::copy(hu.begin(), hu.end(), out);
        for (const auto& col : *columns) {
            double s = 0.0;
            if (rotated) {
                std::vector<double> rot(hu.begin() + static_cast<std::ptrdiff_t>(col.tensor_offset),
                                        hu.begin() + static_cast<std::ptrdiff_t>(
                                                         col.tensor_offset + col.tensor_length));
                fwht_weight(rot, col.shape);
                for (std::size_t i = 0; i < col.tensor_length; ++i) s += col.dq_da[i] * rot[i];
            } else {
                for (std::size_t i = 0; i < col.tensor_length; ++i)
                    s += col.dq_da[i] * hu[col.tensor_offset + i];
            }
            out[col.step_offset] = s;
        }
    };
    return op;
}

LinOp masked_operator(LinOp op, std::vector<unsigned char> mask) {
    if (mask.size() != op.dim) throw ArgumentError("masked_operator: mask length mismatch");
    auto inner = std::make_shared<LinOp>(std::move(op));
    auto m = std::make_shared<std::vector<unsigned char>>(std::move(mask));
    LinOp out;
    out.dim = inner->dim;
    out.provenance = inner->provenance + "+mask";
    out.apply = [inner, m](const double* v, double* res) {
        std::vector<double> u(inner->dim, 0.0);
        for (std::size_t i = 0; i < inner->dim; ++i) u[i] = (*m)[i] ? v[i] : 0.0;
        std::vector<double> w(inner->dim, 0.0);
        inner->apply(u.data(), w.data());
        for (std::size_t i = 0; i < inner->dim; ++i) res[i] = (*m)[i] ? w[i] : 0.0;
    };
    return out;
}

std::vector<unsigned char> subset_mask(const ParamVector& params, const std::string& subset) {
    std::vector<unsigned char> mask(params.size(), 0);
    for (const auto& e : params.entries()) {
        bool on = false;
        if (subset == "all")
            on = true;
        else if (subset == "quantized")
            on = e.quantized || e.step_size;
        else if (subset == "embedding")
            on = e.name == "tok_emb" || e.name == "pos_emb";
        else
            throw ConfigError("unknown parameter subset: " + subset);
        if (on)
            std::fill(mask.begin() + static_cast<std::ptrdiff_t>(e.offset),
                      mask.begin() + static_cast<std::ptrdiff_t>(e.offset + e.length),
                      static_cast<unsigned char>(1));
    }
    return mask;
}

TridiagonalMatrix lanczos_tridiagonalize(const LinOp& op, const std::vector<double>& probe,
                                         int k) {
    if (k < 1) throw ArgumentError("lanczos: k must be >= 1");
    if (probe.size() != op.dim) throw ArgumentError("lanczos: probe length mismatch");
    double pn = l2_norm(probe);
    if (pn == 0.0) throw ArgumentError("lanczos: zero probe");
    if (std::fabs(pn - 1.0) > 1e-12) throw ArgumentError("lanczos: probe must be unit norm");

    constexpr double kBreakdown = 1e-10;
    std::size_t n = op.dim;
    TridiagonalMatrix T;
    std::vector<std::vector<double>> basis;  // kept for full reorthogonalization
    basis.push_back(probe);

    std::vector<double> z(n, 0.0);
    double beta_prev = 0.0;
    for (int i = 0; i < k; ++i) {
        const std::vector<double>& q = basis.back();
        op.apply(q.data(), z.data());
        if (i > 0) {
            const std::vector<double>& qm = basis[basis.size() - 2];
            for (std::size_t j = 0; j < n; ++j) z[j] -= beta_prev * qm[j];
        }
        double alpha = dot(q, z);
        T.diag.push_back(alpha);
        T.effective_rank = i + 1;
        if (i + 1 == k) break;

        for (std::size_t j = 0; j < n; ++j) z[j] -= alpha * q[j];
        // Full reorthogonalization keeps Ritz values from duplicating.
        for (const auto& b : basis) {
            double c = dot(b, z);
            for (std::size_t j = 0; j < n; ++j) z[j] -= c * b[j];
        }
        double beta = l2_norm(z);
        if (beta < kBreakdown) break;  // invariant subspace found
        T.off.push_back(beta);
        beta_prev = beta;
        std::vector<double> qn(n);
        for (std::size_t j = 0; j < n; ++j) qn[j] = z[j] / beta;
        basis.push_back(std::move(qn));
    }
    return T;
}

SpectrumEstimate slq_estimate(const LinOp& op, int m, int k, std::uint64_t seed) {
    if (m < 1 || k < 1) throw ArgumentError("slq_estimate: m and k must be >= 1");
    SpectrumEstimate est;
    est.probes = m;
    est.lanczos_steps = k;
    est.seed = seed;
    est.provenance = op.provenance;

    double inv_m = 1.0 / static_cast<double>(m);
    for (int j = 0; j < m; ++j) {
        // Per-probe substream: probes are independent and order-insensitive.
        SplitRng rng(seed, "slq-probe", static_cast<std::uint64_t>(j));
        std::vector<double> probe(op.dim);
        for (auto& x : probe) x = rng.rademacher();
        double nrm = l2_norm(probe);
        for (auto& x : probe) x /= nrm;

        TridiagonalMatrix T = lanczos_tridiagonalize(op, probe, k);
        int r = T.effective_rank;
        Eigen::MatrixXd tm = Eigen::MatrixXd::Zero(r, r);
        for (int i = 0; i < r; ++i) tm(i, i) = T.diag[static_cast<std::size_t>(i)];
        for (int i = 0; i + 1 < r; ++i) {
            tm(i, i + 1) = T.off[static_cast<std::size_t>(i)];
            tm(i + 1, i) = T.off[static_cast<std::size_t>(i)];
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tm);
        if (es.info() != Eigen::Success)
            throw NumericalError("slq_estimate: tridiagonal eigendecomposition failed");
        for (int i = 0; i < r; ++i) {
            double w = es.eigenvectors()(0, i);
            est.nodes.push_back({es.eigenvalues()(i), w * w * inv_m});
        }
    }
    return est;
}

SpectrumStats spectrum_stats(const SpectrumEstimate& estimate, double tau) {
    if (tau <= 0.0) throw ArgumentError("spectrum_stats: tau must be positive");
    if (estimate.nodes.empty()) throw ArgumentError("spectrum_stats: empty estimate");
    SpectrumStats s;
    s.tau = tau;
    for (const auto& n : estimate.nodes) {
        if (n.weight > 0.0) s.max_abs = std::max(s.max_abs, std::fabs(n.theta));
        if (std::fabs(n.theta) <= tau)
            s.near_zero_mass += n.weight;
        else if (n.theta < 0.0)
            s.negative_mass += n.weight;
        else
            s.positive_mass += n.weight;
    }
    return s;
}

double spectral_moment(const SpectrumEstimate& estimate, int p) {
    double s = 0.0;
    for (const auto& n : estimate.nodes) s += n.weight * std::pow(n.theta, p);
    return s;
}

DenseHessianResult dense_hessian_oracle(const LinOp& op) {
    if (op.dim > 2000)
        throw ArgumentError("dense_hessian_oracle: refusing " + std::to_string(op.dim) +
                            " parameters (limit 2000)");
    std::size_t n = op.dim;
    std::vector<double> H(n * n, 0.0);
    std::vector<double> e(n, 0.0), col(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        e[i] = 1.0;
        op.apply(e.data(), col.data());
        e[i] = 0.0;
        for (std::size_t r = 0; r < n; ++r) H[r * n + i] = col[r];
    }

    double max_abs = 0.0, max_asym = 0.0;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            max_abs = std::max(max_abs, std::fabs(H[r * n + c]));
            max_asym = std::max(max_asym, std::fabs(H[r * n + c] - H[c * n + r]));
        }

    DenseHessianResult res;
    res.asymmetry = max_abs > 0.0 ? max_asym / max_abs : 0.0;
    res.matrix.resize(n * n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c)
            res.matrix[r * n + c] = 0.5 * (H[r * n + c] + H[c * n + r]);

    Eigen::Map<const Eigen::MatrixXd> M(res.matrix.data(), static_cast<Eigen::Index>(n),
                                        static_cast<Eigen::Index>(n));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    if (es.info() != Eigen::Success)
        throw NumericalError("dense_hessian_oracle: eigendecomposition failed");
    res.eigenvalues.assign(es.eigenvalues().data(), es.eigenvalues().data() + n);
    return res;
}

SaddleDiagnostic saddle_diagnostic(const std::vector<double>& grad, const ParamVector& params,
                                   const SpectrumStats& stats, double epsilon, double tau) {
    (void)tau;  // the stats were already thresholded at their own tau
    SaddleDiagnostic d;
    d.grad_rel_norm = l2_norm(grad) / std::max(l2_norm(params.data()), 1e-300);
    if (d.grad_rel_norm > epsilon)
        d.cls = StationaryClass::NotStationary;
    else if (stats.negative_mass > 0.0)
        d.cls = StationaryClass::ApproxStrictSaddle;
    else
        d.cls = StationaryClass::ApproxLocalMinimumRegion;
    return d;
}

const char* stationary_class_name(StationaryClass c) {
    switch (c) {
        case StationaryClass::NotStationary: return "not-stationary";
        case StationaryClass::ApproxStrictSaddle: return "approx-strict-saddle";
        case StationaryClass::ApproxLocalMinimumRegion: return "approx-local-minimum-region";
    }
    return "?";
}

void write_spectrum_csv(const SpectrumEstimate& estimate, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot open for writing: " + path);
    std::fputs("theta,weight\n", f);
    for (const auto& n : estimate.nodes)
        std::fprintf(f, "%.17g,%.17g\n", n.theta, n.weight);
    std::fclose(f);
}

SpectrumEstimate read_spectrum_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "theta,weight")
        throw IoError("bad spectrum CSV header in " + path);
    SpectrumEstimate est;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::size_t comma = line.find(',');
        if (comma == std::string::npos) throw IoError("bad spectrum CSV row: " + line);
        est.nodes.push_back(
            {std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
    }
    return est;
}

}  // namespace winq
