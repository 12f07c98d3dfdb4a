#pragma once

#include <string>
#include <vector>

#include "winq/config.hpp"
#include "winq/spectrum.hpp"
#include "winq/train.hpp"

namespace winq {

struct ProxParams {
    double eta = 0.0;              // learning rate, > 0
    double gamma = 0.0;            // regularization strength, >= 0
    std::vector<double> q;         // quantization target

    double alpha() const { return eta * gamma / (1.0 + eta * gamma); }
};

// Closed-form minimizer of R(W) + ||W - V||^2 / (2 eta) with
// R(W) = (gamma/2) ||W - q||^2:  W = V / (1 + eta gamma) + alpha q.
std::vector<double> prox_step(const std::vector<double>& v, const ProxParams& p);

double alpha_gamma_map(double eta, double gamma);     // alpha = eta gamma / (1 + eta gamma)
double gamma_from_alpha(double eta, double alpha);    // inverse; alpha = 1 is rejected

struct ProxEquivalenceReport {
    double max_deviation = 0.0;        // ||prox - interpolation||_inf
    std::size_t cell_crossings = 0;    // coordinates leaving their quantization cell
    bool ok = false;                   // max_deviation <= 1e-12
};

// Checks prox_step(W, gamma(alpha)) against (1-alpha) W + alpha Q(W) with
// q = Q(W) under a fixed grid, and verifies the cell-stability precondition.
ProxEquivalenceReport verify_prox_equivalence(const std::vector<double>& w, const QuantGrid& grid,
                                              double eta, double alpha);

struct HessianShiftReport {
    double max_penalty_off_diag = 0.0;  // penalty Hessian off-diagonal magnitude
    double max_penalty_diag_err = 0.0;  // |penalty diag - gamma|
    double max_eigen_shift_err = 0.0;   // |eig(H + P) - (eig(H) + gamma)|
    bool ok = false;
};

// Dense check of the regularized objective's curvature: the penalty Hessian
// (finite differences of its analytic gradient) must equal gamma I, and the
// spectrum of H + penalty must be the spectrum of H shifted by gamma.
HessianShiftReport verify_hessian_shift(const ComputationGraph& graph, const ParamVector& params,
                                        const Batch& batch, const QuantLayout& layout,
                                        double gamma);

struct SweepResult {
    struct Row {
        double alpha;
        double max_abs_theta;
        double near_zero_mass;
        double loss;  // quantized loss at the interpolated point
    };
    std::vector<Row> rows;     // sorted ascending in alpha
    SpectrumConfig slq;
    bool refit_grids = false;  // second mode: grids recomputed at W_alpha
};

// For each alpha: W_alpha = (1-alpha) W + alpha Q(W) with grids frozen at W;
// SLQ on the loss Hessian at the interpolated point; quantized loss at
// W_alpha. With refit_grids the grids are re-fit at W_alpha and the recorded
// loss shows the drift instead of staying constant.
SweepResult interpolation_curvature_sweep(const ComputationGraph& graph,
                                          const ParamVector& params, const Batch& batch,
                                          const QuantLayout& layout,
                                          std::vector<double> alpha_grid,
                                          const SpectrumConfig& slq_cfg,
                                          bool refit_grids = false);

// CSV header "alpha,max_abs_theta,near_zero_mass,loss".
void write_sweep_csv(const SweepResult& sweep, const std::string& path);

}  // namespace winq
