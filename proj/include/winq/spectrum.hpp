#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "winq/graph.hpp"
#include "winq/model.hpp"
#include "winq/train.hpp"

namespace winq {

// Matrix-free symmetric operator.
struct LinOp {
    std::size_t dim = 0;
    std::function<void(const double*, double*)> apply;
    std::string provenance;

    std::vector<double> operator()(const std::vector<double>& v) const {
        std::vector<double> out(dim, 0.0);
        apply(v.data(), out.data());
        return out;
    }
};

// Hessian of the loss under the straight-through convention: quantizers
// differentiate as the identity, so the weight block is the exact Hessian of
// the full-precision loss at the quantized point Q(W). Learnable step sizes
// enter through their chain-rule Jacobian column dQ/da, giving the symmetric
// operator J^T H J on the extended parameter space.
LinOp ste_hessian_operator(const ComputationGraph& graph, const ParamVector& params,
                           const Batch& batch, const QuantLayout& layout, bool hadamard = false);

// Plain full-precision Hessian at the given point (the quantizer treated as
// identity both in differentiation and evaluation).
LinOp hessian_operator(const ComputationGraph& graph, const ParamVector& params,
                       const Batch& batch);

// Restriction of `op` to the coordinates where mask[i] != 0 (embed by zero,
// apply, project). Used for parameter-subset spectra.
LinOp masked_operator(LinOp op, std::vector<unsigned char> mask);

// Subset masks: "all", "quantized" (quantized tensors + their step sizes),
// "embedding".
std::vector<unsigned char> subset_mask(const ParamVector& params, const std::string& subset);

struct TridiagonalMatrix {
    std::vector<double> diag;      // alpha_1..alpha_k
    std::vector<double> off;       // beta_1..beta_{k-1}
    int effective_rank = 0;        // truncation point on breakdown
};

// Lanczos recurrence with full reorthogonalization; beta < 1e-10 truncates.
TridiagonalMatrix lanczos_tridiagonalize(const LinOp& op, const std::vector<double>& probe,
                                         int k);

struct SpectrumEstimate {
    struct Node {
        double theta;
        double weight;
    };
    std::vector<Node> nodes;  // all probes aggregated; weights sum to 1
    int probes = 0;           // m
    int lanczos_steps = 0;    // k
    std::uint64_t seed = 0;
    std::string provenance;
};

// Stochastic Lanczos Quadrature: m normalized Rademacher probes, per-probe
// nodes (theta_i, w_i) from the tridiagonal eigendecomposition with
// w_i = (first eigenvector component)^2, aggregated with uniform 1/m probe
// weighting. Discrete output, no kernel smoothing.
SpectrumEstimate slq_estimate(const LinOp& op, int m, int k, std::uint64_t seed);

struct SpectrumStats {
    double max_abs = 0.0;        // max |theta| over nodes with weight > 0
    double near_zero_mass = 0.0; // total weight with |theta| <= tau
    double negative_mass = 0.0;  // weight with theta < -tau
    double positive_mass = 0.0;  // weight with theta > tau
    double tau = 1e-3;
};

SpectrumStats spectrum_stats(const SpectrumEstimate& estimate, double tau);

// Moments sum_i w_i theta_i^p of the discrete estimate.
double spectral_moment(const SpectrumEstimate& estimate, int p);

// Dense eigendecomposition oracle: builds the operator column-by-column,
// symmetrizes, and solves. Refuses above 2000 parameters.
struct DenseHessianResult {
    std::vector<double> eigenvalues;  // ascending
    double asymmetry = 0.0;           // ||H - H^T||_inf / ||H||_inf before symmetrization
    std::vector<double> matrix;       // symmetrized, row-major dim x dim
};
DenseHessianResult dense_hessian_oracle(const LinOp& op);

enum class StationaryClass { NotStationary, ApproxStrictSaddle, ApproxLocalMinimumRegion };

struct SaddleDiagnostic {
    double grad_rel_norm = 0.0;
    StationaryClass cls = StationaryClass::NotStationary;
};

// Relative gradient norm against epsilon, then the sign structure of the
// spectrum beyond tau decides saddle vs local-minimum region.
SaddleDiagnostic saddle_diagnostic(const std::vector<double>& grad,
                                   const ParamVector& params, const SpectrumStats& stats,
                                   double epsilon, double tau);
const char* stationary_class_name(StationaryClass c);

// CSV with header "theta,weight", one row per node.
void write_spectrum_csv(const SpectrumEstimate& estimate, const std::string& path);
SpectrumEstimate read_spectrum_csv(const std::string& path);

}  // namespace winq
