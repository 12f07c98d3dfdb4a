#pragma once

#include <span>
#include <string>
#include <vector>

#include "winq/param_vector.hpp"
#include "winq/tensor.hpp"

namespace winq {

enum class QuantKind {
    SymmetricMinMax,
    AsymmetricMinMax,
    LearnableStep,
    Binary,   // sign(W) * mean|W|, two levels
    Ternary,  // levels {-a, 0, +a} with a = max|W|
};

enum class Granularity { PerTensor, PerOutputChannel };

const char* quant_kind_name(QuantKind k);
QuantKind quant_kind_from_name(const std::string& s);

struct QuantizerSpec {
    QuantKind kind = QuantKind::SymmetricMinMax;
    int bits = 4;  // binary forces 1; ternary represents 3 levels ("1.58-bit")
    Granularity granularity = Granularity::PerTensor;

    void validate() const;
    bool learnable() const { return kind == QuantKind::LearnableStep; }
};

// Default desk assignment per weight bit-width: 1 -> binary,
// 2..4 -> learnable step, everything else min-max. 16 means no quantization.
QuantizerSpec default_weight_spec(int bits);

// Realized grid. Per-tensor grids hold one (a, b); per-output-channel grids
// hold one pair per column of a [k, n] weight.
struct QuantGrid {
    QuantKind kind = QuantKind::SymmetricMinMax;
    std::vector<double> a;  // scale(s), > 0 (epsilon-floored)
    std::vector<double> b;  // bias(es)
    int v_neg = 0;
    int v_pos = 0;
    bool learnable = false;
    bool degenerate = false;  // scale hit the epsilon floor
    int channels = 1;         // 1 for per-tensor
};

inline constexpr double kScaleFloor = 1e-12;

// Round half to even, the fixed platform-independent tie rule.
inline double round_even(double x) { return std::nearbyint(x); }

QuantGrid make_grid(std::span<const double> w, const Shape& shape, const QuantizerSpec& spec);

// Grid for a learnable-step quantizer whose scale lives in the optimizer.
QuantGrid grid_from_step(double step, const QuantizerSpec& spec);

void quantize(std::span<const double> w, const QuantGrid& grid, std::span<double> out);
std::vector<double> quantize(std::span<const double> w, const QuantGrid& grid);

// Straight-through backward: upstream passes where (w-b)/a lies inside the
// clip range, zero outside. When `step_grad` is non-null the learnable-step
// chain rule dL/da is accumulated there (one entry per channel).
void ste_backward(std::span<const double> upstream, std::span<const double> w,
                  const QuantGrid& grid, std::span<double> grad_out,
                  std::vector<double>* step_grad = nullptr,
                  bool passthrough_everywhere = false);

// Per-tensor symmetric activation quantization. bits must be 4, 8 or 16;
// 16 is the identity. `mask` (if non-null) receives the in-range STE mask.
void quantize_activations(std::span<const double> x, int bits, std::span<double> out,
                          std::vector<unsigned char>* mask = nullptr);

// ||Q(W) - W||_2 / ||W||_2 over the concatenation of all quantized tensors.
double relative_quant_error(const ParamVector& params,
                            const std::vector<QuantizerSpec>& specs_per_quantized_tensor);
double relative_quant_error_with_grids(const ParamVector& params,
                                       const std::vector<QuantGrid>& grids_per_quantized_tensor);

}  // namespace winq
