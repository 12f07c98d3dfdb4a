#include "winq/hadamard.hpp"

#include <cmath>

#include "winq/errors.hpp"
#include "winq/rng.hpp"

namespace winq {

void fwht_strided(double* x, int n, std::size_t stride) {
    if (!is_power_of_two(n)) throw ConfigError("fwht: dimension must be a power of two");
    for (int h = 1; h < n; h <<= 1) {
        for (int i = 0; i < n; i += h << 1) {
            for (int j = i; j < i + h; ++j) {
                double u = x[static_cast<std::size_t>(j) * stride];
                double v = x[static_cast<std::size_t>(j + h) * stride];
                x[static_cast<std::size_t>(j) * stride] = u + v;
                x[static_cast<std::size_t>(j + h) * stride] = u - v;
            }
        }
    }
    double norm = 1.0 / std::sqrt(static_cast<double>(n));
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i) * stride] *= norm;
}

void fwht_block(std::span<double> x) {
    fwht_strided(x.data(), static_cast<int>(x.size()), 1);
}

HadamardContext HadamardContext::from_dims(std::vector<int> dims) {
    for (int d : dims)
        if (!is_power_of_two(d))
            throw ConfigError("hadamard block dimension " + std::to_string(d) +
                              " is not a power of two");
    return {std::move(dims)};
}

HadamardContext HadamardContext::from_params(const ParamVector& params) {
    std::vector<int> dims;
    for (const auto& e : params.entries()) {
        if (!e.quantized) continue;
        if (e.shape.size() != 2)
            throw ConfigError("hadamard rotation expects 2-D quantized weights, got " +
                              shape_str(e.shape) + " for " + e.name);
        dims.push_back(e.shape[0]);
    }
    return from_dims(std::move(dims));
}

std::size_t HadamardContext::total_dim() const {
    std::size_t n = 0;
    for (int d : block_dims) n += static_cast<std::size_t>(d);
    return n;
}

bool HadamardContext::self_check(std::uint64_t seed) const {
    SplitRng rng(seed, "hadamard-self-check");
    std::vector<double> x(total_dim());
    for (auto& v : x) v = rng.normal();
    std::vector<double> y = fwht(x, *this);
    double nx = l2_norm(x), ny = l2_norm(y);
    if (std::fabs(nx - ny) > 1e-12 * std::max(1.0, nx)) return false;
    std::vector<double> z = fwht(y, *this);
    for (std::size_t i = 0; i < x.size(); ++i)
        if (std::fabs(z[i] - x[i]) > 1e-12 * std::max(1.0, std::fabs(x[i]))) return false;
    return true;
}

std::vector<double> fwht(std::span<const double> x, const HadamardContext& ctx) {
    if (x.size() != ctx.total_dim())
        throw ArgumentError("fwht: input length " + std::to_string(x.size()) +
                            " does not match context dim " + std::to_string(ctx.total_dim()));
    std::vector<double> out(x.begin(), x.end());
    std::size_t off = 0;
    for (int d : ctx.block_dims) {
        fwht_strided(out.data() + off, d, 1);
        off += static_cast<std::size_t>(d);
    }
    return out;
}

void fwht_weight(std::span<double> w, const Shape& shape) {
    if (shape.size() != 2) throw ConfigError("fwht_weight: expects a 2-D weight");
    int k = shape[0], n = shape[1];
    for (int j = 0; j < n; ++j)
        fwht_strided(w.data() + j, k, static_cast<std::size_t>(n));
}

void fwht_rows(std::span<double> x, int d) {
    if (d <= 0 || x.size() % static_cast<std::size_t>(d) != 0)
        throw ArgumentError("fwht_rows: length not divisible by row dim");
    for (std::size_t off = 0; off < x.size(); off += static_cast<std::size_t>(d))
        fwht_strided(x.data() + off, d, 1);
}

void hadamard_reinit_tensor_with_grid(std::span<double> w, const Shape& shape, double alpha,
                                      const QuantGrid& grid) {
    if (alpha < 0.0 || alpha > 1.0) throw ArgumentError("hadamard_reinit: alpha outside [0,1]");
    fwht_weight(w, shape);  // rotated domain
    std::vector<double> q(w.size());
    quantize(w, grid, q);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (1.0 - alpha) * w[i] + alpha * q[i];
    fwht_weight(w, shape);  // back: H is an involution
}

void hadamard_reinit_tensor(std::span<double> w, const Shape& shape, double alpha,
                            const QuantizerSpec& spec) {
    if (alpha < 0.0 || alpha > 1.0) throw ArgumentError("hadamard_reinit: alpha outside [0,1]");
    fwht_weight(w, shape);
    QuantGrid grid = make_grid(w, shape, spec);
    std::vector<double> q(w.size());
    quantize(w, grid, q);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (1.0 - alpha) * w[i] + alpha * q[i];
    fwht_weight(w, shape);
}

void hadamard_reinit(ParamVector& params, double alpha, const std::vector<QuantizerSpec>& specs,
                     const std::vector<double>* steps) {
    std::size_t qi = 0;
    for (const auto& e : params.entries()) {
        if (!e.quantized) continue;
        if (qi >= specs.size()) throw ArgumentError("hadamard_reinit: missing spec");
        const QuantizerSpec& spec = specs[qi];
        auto w = params.slice(e);
        if (spec.learnable()) {
            if (!steps || qi >= steps->size())
                throw ArgumentError("hadamard_reinit: learnable spec without step value");
            hadamard_reinit_tensor_with_grid(w, e.shape, alpha, grid_from_step((*steps)[qi], spec));
        } else {
            hadamard_reinit_tensor(w, e.shape, alpha, spec);
        }
        ++qi;
    }
}

}  // namespace winq
