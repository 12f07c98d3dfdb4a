#include "winq/quant.hpp"

#include <algorithm>
#include <cmath>

#include "winq/errors.hpp"

namespace winq {

const char* quant_kind_name(QuantKind k) {
    switch (k) {
        case QuantKind::SymmetricMinMax: return "symmetric_minmax";
        case QuantKind::AsymmetricMinMax: return "asymmetric_minmax";
        case QuantKind::LearnableStep: return "learnable_step";
        case QuantKind::Binary: return "binary";
        case QuantKind::Ternary: return "ternary";
    }
    return "?";
}

QuantKind quant_kind_from_name(const std::string& s) {
    if (s == "symmetric_minmax") return QuantKind::SymmetricMinMax;
    if (s == "asymmetric_minmax") return QuantKind::AsymmetricMinMax;
    if (s == "learnable_step") return QuantKind::LearnableStep;
    if (s == "binary") return QuantKind::Binary;
    if (s == "ternary") return QuantKind::Ternary;
    throw ConfigError("unknown quantizer kind: " + s);
}

void QuantizerSpec::validate() const {
    switch (kind) {
        case QuantKind::Binary:
            if (bits != 1) throw ConfigError("binary quantizer requires bits=1");
            break;
        case QuantKind::Ternary:
            if (bits != 2) throw ConfigError("ternary quantizer is stored as bits=2");
            break;
        case QuantKind::SymmetricMinMax:
        case QuantKind::AsymmetricMinMax:
        case QuantKind::LearnableStep:
            if (bits < 2) throw ConfigError(std::string(quant_kind_name(kind)) +
                                            " requires bits >= 2");
            break;
    }
}

QuantizerSpec default_weight_spec(int bits) {
    QuantizerSpec s;
    if (bits == 1) {
        s.kind = QuantKind::Binary;
        s.bits = 1;
    } else if (bits >= 2 && bits <= 4) {
        s.kind = QuantKind::LearnableStep;
        s.bits = bits;
    } else if (bits < 16) {
        s.kind = QuantKind::SymmetricMinMax;
        s.bits = bits;
    } else {
        throw ConfigError("no weight quantizer for bits=" + std::to_string(bits));
    }
    return s;
}

namespace {

void clip_bounds(const QuantizerSpec& spec, int& v_neg, int& v_pos) {
    switch (spec.kind) {
        case QuantKind::SymmetricMinMax:
        case QuantKind::LearnableStep:
            v_neg = -(1 << (spec.bits - 1));
            v_pos = (1 << (spec.bits - 1)) - 1;
            break;
        case QuantKind::AsymmetricMinMax:
            v_neg = 0;
            v_pos = (1 << spec.bits) - 1;
            break;
        case QuantKind::Binary:
        case QuantKind::Ternary:
            v_neg = -1;
            v_pos = 1;
            break;
    }
}

struct ChannelView {
    std::size_t count;   // elements per channel
    std::size_t stride;  // distance between consecutive elements of a channel
    std::size_t first;   // offset of the channel's first element
};

// Output channels are the columns of a row-major [k, n] weight.
ChannelView channel_view(std::size_t n_total, int channels, int c) {
    if (channels == 1) return {n_total, 1, 0};
    std::size_t nc = static_cast<std::size_t>(channels);
    return {n_total / nc, nc, static_cast<std::size_t>(c)};
}

double symmetric_scale(double max_abs, int bits) {
    return max_abs / static_cast<double>((1 << (bits - 1)) - 1);
}

}  // namespace

QuantGrid make_grid(std::span<const double> w, const Shape& shape, const QuantizerSpec& spec) {
    spec.validate();
    if (w.empty()) throw ArgumentError("make_grid: empty tensor");

    int channels = 1;
    if (spec.granularity == Granularity::PerOutputChannel) {
        if (shape.size() != 2)
            throw ConfigError("per-output-channel granularity needs a 2-D weight");
        channels = shape[1];
    }

    QuantGrid g;
    g.kind = spec.kind;
    g.learnable = spec.learnable();
    g.channels = channels;
    clip_bounds(spec, g.v_neg, g.v_pos);
    g.a.resize(static_cast<std::size_t>(channels));
    g.b.assign(static_cast<std::size_t>(channels), 0.0);

    for (int c = 0; c < channels; ++c) {
        ChannelView cv = channel_view(w.size(), channels, c);
        double lo = w[cv.first], hi = w[cv.first], max_abs = 0.0, sum_abs = 0.0;
        for (std::size_t i = 0; i < cv.count; ++i) {
            double x = w[cv.first + i * cv.stride];
            lo = std::min(lo, x);
            hi = std::max(hi, x);
            max_abs = std::max(max_abs, std::fabs(x));
            sum_abs += std::fabs(x);
        }
        double a = 0.0;
        switch (spec.kind) {
            case QuantKind::SymmetricMinMax:
            case QuantKind::LearnableStep:
                a = symmetric_scale(max_abs, spec.bits);
                break;
            case QuantKind::AsymmetricMinMax:
                a = (hi - lo) / static_cast<double>((1 << spec.bits) - 1);
                g.b[static_cast<std::size_t>(c)] = lo;
                break;
            case QuantKind::Binary:
                a = sum_abs / static_cast<double>(cv.count);
                break;
            case QuantKind::Ternary:
                a = max_abs;
                break;
        }
        if (a <= 0.0) {
            a = kScaleFloor;
            g.degenerate = true;
        }
        g.a[static_cast<std::size_t>(c)] = a;
    }
    return g;
}

QuantGrid grid_from_step(double step, const QuantizerSpec& spec) {
    spec.validate();
    QuantGrid g;
    g.kind = spec.kind;
    g.learnable = spec.learnable();
    g.channels = 1;
    clip_bounds(spec, g.v_neg, g.v_pos);
    double a = step;
    if (a < kScaleFloor) {
        a = kScaleFloor;
        g.degenerate = true;
    }
    g.a = {a};
    g.b = {0.0};
    return g;
}

void quantize(std::span<const double> w, const QuantGrid& grid, std::span<double> out) {
    if (w.size() != out.size()) throw ArgumentError("quantize: size mismatch");
    for (int c = 0; c < grid.channels; ++c) {
        ChannelView cv = channel_view(w.size(), grid.channels, c);
        double a = grid.a[static_cast<std::size_t>(c)];
        double b = grid.b[static_cast<std::size_t>(c)];
        if (grid.kind == QuantKind::Binary) {
            for (std::size_t i = 0; i < cv.count; ++i) {
                std::size_t j = cv.first + i * cv.stride;
                out[j] = w[j] < 0.0 ? -a : a;  // sign(0) = +1
            }
            continue;
        }
        for (std::size_t i = 0; i < cv.count; ++i) {
            std::size_t j = cv.first + i * cv.stride;
            double z = (w[j] - b) / a;
            z = std::clamp(z, static_cast<double>(grid.v_neg), static_cast<double>(grid.v_pos));
            out[j] = a * round_even(z) + b;
        }
    }
}

std::vector<double> quantize(std::span<const double> w, const QuantGrid& grid) {
    std::vector<double> out(w.size());
    quantize(w, grid, out);
    return out;
}

void ste_backward(std::span<const double> upstream, std::span<const double> w,
                  const QuantGrid& grid, std::span<double> grad_out,
                  std::vector<double>* step_grad, bool passthrough_everywhere) {
    if (upstream.size() != w.size() || grad_out.size() != w.size())
        throw ArgumentError("ste_backward: size mismatch");
    if (step_grad) step_grad->assign(static_cast<std::size_t>(grid.channels), 0.0);

    for (int c = 0; c < grid.channels; ++c) {
        ChannelView cv = channel_view(w.size(), grid.channels, c);
        double a = grid.a[static_cast<std::size_t>(c)];
        double b = grid.b[static_cast<std::size_t>(c)];
        double sg = 0.0;
        for (std::size_t i = 0; i < cv.count; ++i) {
            std::size_t j = cv.first + i * cv.stride;
            double z = (w[j] - b) / a;
            bool in_range = z >= static_cast<double>(grid.v_neg) &&
                            z <= static_cast<double>(grid.v_pos);
            grad_out[j] = (in_range || passthrough_everywhere) ? upstream[j] : 0.0;
            if (step_grad) {
                double zc = std::clamp(z, static_cast<double>(grid.v_neg),
                                       static_cast<double>(grid.v_pos));
                sg += upstream[j] * (round_even(zc) - (in_range ? z : 0.0));
            }
        }
        if (step_grad) (*step_grad)[static_cast<std::size_t>(c)] = sg;
    }
}

void quantize_activations(std::span<const double> x, int bits, std::span<double> out,
                          std::vector<unsigned char>* mask) {
    if (bits != 4 && bits != 8 && bits != 16)
        throw ConfigError("activation bits must be 4, 8 or 16, got " + std::to_string(bits));
    if (x.size() != out.size()) throw ArgumentError("quantize_activations: size mismatch");
    if (mask) mask->assign(x.size(), 1);
    if (bits == 16) {
        std::copy(x.begin(), x.end(), out.begin());
        return;
    }

    double lo = x[0], hi = x[0], max_abs = 0.0;
    for (double v : x) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        max_abs = std::max(max_abs, std::fabs(v));
    }
    // Zero-range input: quantization preserves a constant tensor exactly.
    if (lo == hi) {
        std::copy(x.begin(), x.end(), out.begin());
        return;
    }

    int v_neg = -(1 << (bits - 1));
    int v_pos = (1 << (bits - 1)) - 1;
    double a = max_abs / static_cast<double>(v_pos);
    if (a <= 0.0) a = kScaleFloor;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double z = x[i] / a;
        bool in_range = z >= static_cast<double>(v_neg) && z <= static_cast<double>(v_pos);
        if (mask) (*mask)[i] = in_range ? 1 : 0;
        z = std::clamp(z, static_cast<double>(v_neg), static_cast<double>(v_pos));
        out[i] = a * round_even(z);
    }
}

double relative_quant_error_with_grids(const ParamVector& params,
                                       const std::vector<QuantGrid>& grids) {
    double err2 = 0.0, norm2 = 0.0;
    std::size_t gi = 0;
    std::vector<double> q;
    for (const auto& e : params.entries()) {
        if (!e.quantized) continue;
        if (gi >= grids.size()) throw ArgumentError("relative_quant_error: missing grid");
        auto w = params.slice(e);
        q.resize(w.size());
        quantize(w, grids[gi++], q);
        for (std::size_t i = 0; i < w.size(); ++i) {
            double d = q[i] - w[i];
            err2 += d * d;
            norm2 += w[i] * w[i];
        }
    }
    if (norm2 == 0.0) return 0.0;
    return std::sqrt(err2 / norm2);
}

double relative_quant_error(const ParamVector& params, const std::vector<QuantizerSpec>& specs) {
    std::vector<QuantGrid> grids;
    std::size_t si = 0;
    for (const auto& e : params.entries()) {
        if (!e.quantized) continue;
        if (si >= specs.size()) throw ArgumentError("relative_quant_error: missing spec");
        grids.push_back(make_grid(params.slice(e), e.shape, specs[si++]));
    }
    return relative_quant_error_with_grids(params, grids);
}

}  // namespace winq
