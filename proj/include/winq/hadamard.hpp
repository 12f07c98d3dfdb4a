#pragma once

#include <span>
#include <vector>

#include "winq/param_vector.hpp"
#include "winq/quant.hpp"

namespace winq {

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place normalized fast Walsh-Hadamard transform of a contiguous block.
// The normalized H is symmetric orthogonal, so this is its own inverse.
void fwht_block(std::span<double> x);

// Strided variant: n elements at x[first + i*stride]. Used to transform the
// columns of a row-major [k, n] weight without copying.
void fwht_strided(double* x, int n, std::size_t stride);

// Per-layer block structure of the block-diagonal rotation.
struct HadamardContext {
    std::vector<int> block_dims;

    static HadamardContext from_dims(std::vector<int> dims);
    // One block per quantization-flagged tensor; block dim = leading dim of
    // the weight (the contraction axis of x @ W).
    static HadamardContext from_params(const ParamVector& params);

    std::size_t total_dim() const;
    // ||H x|| == ||x|| and H(Hx) == x on sampled vectors, to <= 1e-12.
    bool self_check(std::uint64_t seed = 0) const;
};

// Blockwise transform of a flat vector partitioned by ctx.block_dims.
std::vector<double> fwht(std::span<const double> x, const HadamardContext& ctx);

// Rotate a [k, n] weight by its k x k block: W -> H W (each column transformed).
void fwht_weight(std::span<double> w, const Shape& shape);

// Transform each row of a [..., d] tensor (activations entering a rotated matmul).
void fwht_rows(std::span<double> x, int d);

// W' = H^T ((1-alpha) H W + alpha Q(H W)) for one weight tensor.
// The grid is formed on the rotated weights.
void hadamard_reinit_tensor(std::span<double> w, const Shape& shape, double alpha,
                            const QuantizerSpec& spec);
// Same, but with a fixed grid (learnable-step scales are not re-fit).
void hadamard_reinit_tensor_with_grid(std::span<double> w, const Shape& shape, double alpha,
                                      const QuantGrid& grid);

// Applies the rotated-domain re-initialization to every quantized tensor.
void hadamard_reinit(ParamVector& params, double alpha, const std::vector<QuantizerSpec>& specs,
                     const std::vector<double>* steps = nullptr);

}  // namespace winq
