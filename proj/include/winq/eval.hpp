#pragma once

#include <functional>
#include <span>
#include <vector>

#include "winq/graph.hpp"
#include "winq/param_vector.hpp"

namespace winq {

// Runtime evaluation switches. The defaults give the plain full-precision
// loss. Activation quantization and the Hadamard rotation of activations
// attach to matmul nodes flagged quantized_weight; both only act in ordinary
// (double) evaluation, never on the exact-differentiation path.
struct EvalOptions {
    int activation_bits = 16;
    bool hadamard = false;
    bool check_finite = true;
};

double forward_eval(const ComputationGraph& graph, const ParamVector& params, const Batch& batch,
                    const EvalOptions& opts = {});

struct GradResult {
    double loss = 0.0;
    std::vector<double> grad;  // aligned with the ParamVector layout
};

GradResult backward_grad(const ComputationGraph& graph, const ParamVector& params,
                         const Batch& batch, const EvalOptions& opts = {});

// Exact H*v of the full-precision loss at `params`, by propagating a forward
// tangent seeded with v through both the forward and the reverse pass.
std::vector<double> hvp(const ComputationGraph& graph, const ParamVector& params,
                        const Batch& batch, std::span<const double> v);

// Independent check: central finite difference of analytic gradients,
// (grad(W + eps v) - grad(W - eps v)) / (2 eps). eps <= 0 picks
// sqrt(machine-eps) * (1 + ||W||_inf).
std::vector<double> hvp_fd(const ComputationGraph& graph, const ParamVector& params,
                           const Batch& batch, std::span<const double> v, double eps = 0.0);

// Central-difference gradient of an arbitrary scalar function.
std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& fn,
                                     const std::vector<double>& x, double eps);

}  // namespace winq
