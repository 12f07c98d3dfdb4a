#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "winq/adamw.hpp"
#include "winq/corpus.hpp"
#include "winq/model.hpp"
#include "winq/quant.hpp"

namespace winq {

struct TrainConfig {
    int steps = 1000;           // T
    double eta = 1e-3;          // learning rate
    int reinit_interval = 250;  // K
    double alpha = 0.4;         // interpolation scalar
    double sigma = 1e-3;        // noise standard deviation
    int weight_bits = 2;        // 16 = full precision
    int activation_bits = 16;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t seed_init = 1;
    std::uint64_t seed_data = 2;
    std::uint64_t seed_noise = 3;
    bool hadamard = false;
    int warmup_steps = 0;        // 0 = constant learning rate
    int pretrain_steps = 2000;   // full-precision steps before quantized training
    double grad_clip_norm = 0.0; // 0 = off
    bool decay_step_sizes = false;
    bool ste_passthrough_everywhere = false;

    void validate() const;
    // sigma == 0 and (alpha == 0 or K > T) is the exact STE baseline
    bool is_ste_baseline() const {
        return sigma == 0.0 && (alpha == 0.0 || reinit_interval > steps);
    }
    AdamWConfig adamw(double lr_now) const {
        return {lr_now, beta1, beta2, eps_adam, weight_decay};
    }
    double lr_at(int step_index) const {  // 0-based
        if (warmup_steps <= 0) return eta;
        double f = static_cast<double>(step_index + 1) / static_cast<double>(warmup_steps);
        return eta * std::min(1.0, f);
    }
};

// Quantizer assignment for every quantization-flagged tensor. Learnable-step
// quantizers own a scalar step-size parameter appended to the ParamVector
// (named "<tensor>.step"), updated by the optimizer alongside the weights.
struct QuantLayout {
    std::vector<std::size_t> tensor_entry;   // index into ParamVector entries
    std::vector<QuantizerSpec> specs;
    std::vector<std::ptrdiff_t> step_entry;  // ParamVector entry of the step, or -1

    // Assigns default_weight_spec(weight_bits) to each quantized tensor and
    // initializes learnable steps from the symmetric min-max formula at the
    // current weights. weight_bits == 16 yields an empty layout.
    static QuantLayout attach(ParamVector& params, int weight_bits);
    static QuantLayout attach(ParamVector& params, const QuantizerSpec& spec);

    bool empty() const { return tensor_entry.empty(); }
    std::vector<double> step_values(const ParamVector& params) const;
    // Current grids at the given latent weights (learnable grids come from
    // the step parameters, min-max grids are fit to the weights).
    std::vector<QuantGrid> grids_at(const ParamVector& params, bool rotated = false) const;
};

// Effective (quantized) parameters plus everything the STE backward needs.
struct EffectiveQuant {
    ParamVector eff;
    std::vector<QuantGrid> grids;
    // Latent values the quantizer saw, per quantized tensor (rotated when the
    // Hadamard path is active; includes injected noise when present).
    std::vector<std::vector<double>> pre_quant;
};

// noise, when present, is a full-length vector added to quantized weight
// tensors only (zeros elsewhere are ignored).
EffectiveQuant quantize_params(const ParamVector& params, const QuantLayout& layout,
                               bool hadamard, const std::vector<double>* noise = nullptr);

// Maps d(loss)/d(effective params) to the latent gradient: STE clip masking
// per quantized tensor, the learnable-step chain rule into step entries, and
// H^T on the Hadamard path. Non-quantized coordinates pass through.
std::vector<double> ste_latent_gradient(const std::vector<double>& grad_eff,
                                        const ParamVector& params, const QuantLayout& layout,
                                        const EffectiveQuant& eq, bool hadamard,
                                        bool passthrough_everywhere = false);

// W <- (1 - alpha) W + alpha Q(W) on quantized tensors; grids frozen at the
// current weights; step parameters and non-quantized tensors untouched.
void reinit_interpolate(ParamVector& params, double alpha, const QuantLayout& layout);

struct StepRecord {
    int step = 0;  // 1-based
    double loss = 0.0;
    double grad_rel_norm = 0.0;
    double quant_err_rel = 0.0;
    double lr = 0.0;
    std::string event;  // "" or "reinit"
};

struct RunMetrics {
    std::vector<StepRecord> records;
    double initial_loss = 0.0;
    bool diverged = false;
    int diverged_at = -1;
};

struct TrainHooks {
    using Fn = std::function<void(const ParamVector&, const OptimizerState&, const QuantLayout&,
                                  int step)>;
    Fn before_reinit;
    Fn after_reinit;
};

struct TrainResult {
    ParamVector params;
    OptimizerState opt;
    QuantLayout layout;
    RunMetrics metrics;
};

TrainResult winq_train(const BuiltModel& model, const SyntheticCorpus& corpus,
                       const TrainConfig& config, const TrainHooks* hooks = nullptr);

// Algorithm variant with the Hadamard transform on weights and activations.
TrainResult winq_train_hadamard(const BuiltModel& model, const SyntheticCorpus& corpus,
                                const TrainConfig& config, const TrainHooks* hooks = nullptr);

// First 1-based step whose trailing-mean smoothed loss reaches the target.
std::optional<int> steps_to_loss(const RunMetrics& metrics, double target_loss, int window = 100);
std::vector<double> smoothed_loss(const RunMetrics& metrics, int window = 100);

}  // namespace winq
