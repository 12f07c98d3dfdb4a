#include "winq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "winq/dual.hpp"
#include "winq/errors.hpp"
#include "winq/hadamard.hpp"
#include "winq/quant.hpp"

namespace winq {

namespace {

using std::erf;
using std::exp;
using std::log;
using std::sqrt;

constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

template <typename T>
struct Workspace {
    std::vector<std::vector<T>> val;
    std::vector<std::vector<T>> adj;
    std::vector<std::vector<T>> aux;                 // quantized matmul: effective lhs
    std::vector<std::vector<unsigned char>> mask;    // activation STE mask
};

// Folds [..., m, k] into row-count for 2-D kernels.
std::size_t fold_rows(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) n *= static_cast<std::size_t>(s[i]);
    return n;
}

template <typename T>
void matmul_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m,
                std::size_t k, std::size_t n) {
    // c[m,n] += a[m,k] * b[k,n]
    for (std::size_t i = 0; i < m; ++i) {
        const T* __restrict ar = a + i * k;
        T* __restrict cr = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            T av = ar[p];
            const T* __restrict br = b + p * n;
            for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

template <typename T>
void matmul_at_b(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m,
                 std::size_t k, std::size_t n) {
    // c[k,n] += a^T[k,m] * b[m,n], a is [m,k]
    for (std::size_t i = 0; i < m; ++i) {
        const T* __restrict ar = a + i * k;
        const T* __restrict br = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            T av = ar[p];
            T* __restrict cr = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

template <typename T>
void matmul_a_bt(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m,
                 std::size_t n, std::size_t k) {
    // c[m,k] += a[m,n] * b^T[n,k], b is [k,n]
    for (std::size_t i = 0; i < m; ++i) {
        const T* __restrict ar = a + i * n;
        T* __restrict cr = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T* __restrict br = b + p * n;
            T s{};
            for (std::size_t j = 0; j < n; ++j) s += ar[j] * br[j];
            cr[p] += s;
        }
    }
}

const std::vector<int>& token_values(const Batch& batch, const Node& node) {
    const auto& f = batch.find(node.name);
    if (f.shape != node.shape)
        throw ConfigError("batch field '" + node.name + "' has shape " + shape_str(f.shape) +
                          ", graph expects " + shape_str(node.shape));
    return f.values;
}

// Strided FWHT over rows of the last dim, in T arithmetic (linear op).
template <typename T>
void fwht_rows_t(std::vector<T>& x, int d) {
    for (std::size_t off = 0; off < x.size(); off += static_cast<std::size_t>(d)) {
        for (int h = 1; h < d; h <<= 1) {
            for (int i = 0; i < d; i += h << 1) {
                for (int j = i; j < i + h; ++j) {
                    T u = x[off + static_cast<std::size_t>(j)];
                    T v = x[off + static_cast<std::size_t>(j + h)];
                    x[off + static_cast<std::size_t>(j)] = u + v;
                    x[off + static_cast<std::size_t>(j + h)] = u - v;
                }
            }
        }
        T norm{1.0 / std::sqrt(static_cast<double>(d))};
        for (int i = 0; i < d; ++i) x[off + static_cast<std::size_t>(i)] *= norm;
    }
}

template <typename T>
void forward_node(const ComputationGraph& g, int id, const T* pdata, const ParamVector& layout,
                  const Batch& batch, const EvalOptions& opts, Workspace<T>& ws) {
    const Node& nd = g.node(id);
    std::vector<T>& out = ws.val[static_cast<std::size_t>(id)];
    out.assign(shape_numel(nd.shape), T{});

    switch (nd.kind) {
        case OpKind::Param: {
            const auto& e = layout.find(nd.name);
            if (e.shape != nd.shape)
                throw ConfigError("parameter '" + nd.name + "' bound with shape " +
                                  shape_str(e.shape) + ", graph expects " + shape_str(nd.shape));
            const T* src = pdata + e.offset;
            std::copy(src, src + e.length, out.begin());
            break;
        }
        case OpKind::Const: {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = T{nd.cdata[i]};
            break;
        }
        case OpKind::Tokens:
            out.clear();  // integer data lives in the batch
            break;
        case OpKind::Embed: {
            const auto& table = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            const Node& tnode = g.node(nd.inputs[0]);
            int vocab = tnode.shape[0], d = tnode.shape[1];
            const auto& ids = token_values(batch, g.node(nd.inputs[1]));
            for (std::size_t r = 0; r < ids.size(); ++r) {
                int t = ids[r];
                if (t < 0 || t >= vocab)
                    throw ConfigError("embed: token id " + std::to_string(t) + " out of range");
                std::copy(table.begin() + t * d, table.begin() + (t + 1) * d,
                          out.begin() + r * static_cast<std::size_t>(d));
            }
            break;
        }
        case OpKind::MatMul: {
            const Node& xn = g.node(nd.inputs[0]);
            const auto& w = ws.val[static_cast<std::size_t>(nd.inputs[1])];
            std::size_t m = fold_rows(xn.shape);
            std::size_t k = static_cast<std::size_t>(xn.shape.back());
            std::size_t n = static_cast<std::size_t>(nd.shape.back());
            const std::vector<T>& x = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            const T* lhs = x.data();
            if constexpr (std::is_same_v<T, double>) {
                bool rotate = opts.hadamard && nd.quantized_weight;
                bool qact = nd.quantized_weight && opts.activation_bits < 16;
                if (rotate || qact) {
                    auto& xe = ws.aux[static_cast<std::size_t>(id)];
                    xe = x;
                    if (rotate) fwht_rows_t(xe, static_cast<int>(k));
                    if (qact)
                        quantize_activations(xe, opts.activation_bits, xe,
                                             &ws.mask[static_cast<std::size_t>(id)]);
                    lhs = xe.data();
                }
            }
            matmul_acc(lhs, w.data(), out.data(), m, k, n);
            break;
        }
        case OpKind::BatchedMatMul: {
            const Node& an = g.node(nd.inputs[0]);
            const Node& bn = g.node(nd.inputs[1]);
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            const auto& b = ws.val[static_cast<std::size_t>(nd.inputs[1])];
            std::size_t m = static_cast<std::size_t>(an.shape[an.shape.size() - 2]);
            std::size_t k = static_cast<std::size_t>(an.shape.back());
            std::size_t n = static_cast<std::size_t>(nd.shape.back());
            std::size_t batches = fold_rows(an.shape) / m;
            std::size_t bstride = nd.transpose_rhs ? n * k : k * n;
            for (std::size_t q = 0; q < batches; ++q) {
                const T* ap = a.data() + q * m * k;
                const T* bp = b.data() + q * bstride;
                T* cp = out.data() + q * m * n;
                if (nd.transpose_rhs)
                    matmul_a_bt(ap, bp, cp, m, k, n);  // c[m,n] = a[m,k] * b^T, b is [n,k]
                else
                    matmul_acc(ap, bp, cp, m, k, n);
            }
            break;
        }
        case OpKind::Add: {
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            const auto& b = ws.val[static_cast<std::size_t>(nd.inputs[1])];
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i % b.size()];
            break;
        }
        case OpKind::Mul: {
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            const auto& b = ws.val[static_cast<std::size_t>(nd.inputs[1])];
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
            break;
        }
        case OpKind::Scale: {
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            T c{nd.scale};
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
            break;
        }
        case OpKind::Sum: {
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            T s{};
            for (const T& v : a) s += v;
            out[0] = s;
            break;
        }
        case OpKind::Gelu: {
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            for (std::size_t i = 0; i < out.size(); ++i) {
                T x = a[i];
                out[i] = x * T{0.5} * (T{1.0} + erf(x * T{kInvSqrt2}));
            }
            break;
        }
        case OpKind::Softmax: {
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            std::size_t d = static_cast<std::size_t>(nd.shape.back());
            std::size_t rows = out.size() / d;
            for (std::size_t r = 0; r < rows; ++r) {
                const T* x = a.data() + r * d;
                T* y = out.data() + r * d;
                std::size_t valid = nd.causal ? (r % d) + 1 : d;
                std::size_t arg = 0;
                for (std::size_t j = 1; j < valid; ++j)
                    if (value_of(x[j]) > value_of(x[arg])) arg = j;
                T m = x[arg];
                T s{};
                for (std::size_t j = 0; j < valid; ++j) {
                    y[j] = exp(x[j] - m);
                    s += y[j];
                }
                T inv = T{1.0} / s;
                for (std::size_t j = 0; j < valid; ++j) y[j] *= inv;
                for (std::size_t j = valid; j < d; ++j) y[j] = T{};
            }
            break;
        }
        case OpKind::LayerNorm: {
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            const auto& gain = ws.val[static_cast<std::size_t>(nd.inputs[1])];
            const auto& bias = ws.val[static_cast<std::size_t>(nd.inputs[2])];
            std::size_t d = static_cast<std::size_t>(nd.shape.back());
            std::size_t rows = out.size() / d;
            T invd{1.0 / static_cast<double>(d)};
            for (std::size_t r = 0; r < rows; ++r) {
                const T* x = a.data() + r * d;
                T* y = out.data() + r * d;
                T mu{};
                for (std::size_t j = 0; j < d; ++j) mu += x[j];
                mu *= invd;
                T var{};
                for (std::size_t j = 0; j < d; ++j) {
                    T c = x[j] - mu;
                    var += c * c;
                }
                var *= invd;
                T rstd = T{1.0} / sqrt(var + T{nd.eps});
                for (std::size_t j = 0; j < d; ++j)
                    y[j] = (x[j] - mu) * rstd * gain[j] + bias[j];
            }
            break;
        }
        case OpKind::CrossEntropy: {
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            const Node& ln = g.node(nd.inputs[0]);
            const auto& tgt = token_values(batch, g.node(nd.inputs[1]));
            std::size_t v = static_cast<std::size_t>(ln.shape.back());
            std::size_t rows = a.size() / v;
            T total{};
            for (std::size_t r = 0; r < rows; ++r) {
                const T* x = a.data() + r * v;
                int t = tgt[r];
                if (t < 0 || t >= static_cast<int>(v))
                    throw ConfigError("cross_entropy: target out of range");
                std::size_t arg = 0;
                for (std::size_t j = 1; j < v; ++j)
                    if (value_of(x[j]) > value_of(x[arg])) arg = j;
                T m = x[arg];
                T s{};
                for (std::size_t j = 0; j < v; ++j) s += exp(x[j] - m);
                total += m + log(s) - x[static_cast<std::size_t>(t)];
            }
            out[0] = total * T{1.0 / static_cast<double>(rows)};
            break;
        }
        case OpKind::Reshape: {
            out = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            break;
        }
        case OpKind::Permute: {
            const Node& an = g.node(nd.inputs[0]);
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            std::size_t rank = nd.perm.size();
            std::vector<std::size_t> in_strides(rank, 1), out_dims(rank);
            for (std::size_t i = rank - 1; i > 0; --i)
                in_strides[i - 1] =
                    in_strides[i] * static_cast<std::size_t>(an.shape[i]);
            for (std::size_t i = 0; i < rank; ++i)
                out_dims[i] = static_cast<std::size_t>(nd.shape[i]);
            std::vector<std::size_t> coord(rank, 0);
            for (std::size_t o = 0; o < out.size(); ++o) {
                std::size_t src = 0;
                for (std::size_t i = 0; i < rank; ++i)
                    src += coord[i] * in_strides[static_cast<std::size_t>(nd.perm[i])];
                out[o] = a[src];
                for (std::size_t i = rank; i-- > 0;) {
                    if (++coord[i] < out_dims[i]) break;
                    coord[i] = 0;
                }
            }
            break;
        }
    }

    if constexpr (std::is_same_v<T, double>) {
        if (opts.check_finite) {
            for (double x : out)
                if (!std::isfinite(x))
                    throw NumericalError("non-finite value in node " + std::to_string(id) + " (" +
                                         op_kind_name(nd.kind) + ")");
        }
    }
}

template <typename T>
void backward_node(const ComputationGraph& g, int id, const ParamVector& layout,
                   const Batch& batch, const EvalOptions& opts, Workspace<T>& ws) {
    const Node& nd = g.node(id);
    const std::vector<T>& dy = ws.adj[static_cast<std::size_t>(id)];
    if (dy.empty()) return;  // node does not influence the output

    auto adj = [&](int input) -> std::vector<T>& {
        auto& buf = ws.adj[static_cast<std::size_t>(input)];
        if (buf.empty()) buf.assign(shape_numel(g.node(input).shape), T{});
        return buf;
    };

    switch (nd.kind) {
        case OpKind::Param:
        case OpKind::Const:
        case OpKind::Tokens:
            break;
        case OpKind::Embed: {
            auto& dtable = adj(nd.inputs[0]);
            const Node& tnode = g.node(nd.inputs[0]);
            int d = tnode.shape[1];
            const auto& ids = token_values(batch, g.node(nd.inputs[1]));
            for (std::size_t r = 0; r < ids.size(); ++r) {
                T* dst = dtable.data() + static_cast<std::size_t>(ids[r]) * d;
                const T* src = dy.data() + r * static_cast<std::size_t>(d);
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
            break;
        }
        case OpKind::MatMul: {
            const Node& xn = g.node(nd.inputs[0]);
            std::size_t m = fold_rows(xn.shape);
            std::size_t k = static_cast<std::size_t>(xn.shape.back());
            std::size_t n = static_cast<std::size_t>(nd.shape.back());
            const auto& w = ws.val[static_cast<std::size_t>(nd.inputs[1])];
            const auto& xe_aux = ws.aux[static_cast<std::size_t>(id)];
            const T* lhs = xe_aux.empty()
                               ? ws.val[static_cast<std::size_t>(nd.inputs[0])].data()
                               : xe_aux.data();
            auto& dw = adj(nd.inputs[1]);
            matmul_at_b(lhs, dy.data(), dw.data(), m, k, n);
            auto& dx = adj(nd.inputs[0]);
            if constexpr (std::is_same_v<T, double>) {
                bool rotate = opts.hadamard && nd.quantized_weight;
                bool qact = nd.quantized_weight && opts.activation_bits < 16;
                if (rotate || qact) {
                    std::vector<T> dxe(m * k, T{});
                    matmul_a_bt(dy.data(), w.data(), dxe.data(), m, n, k);
                    if (qact) {
                        const auto& msk = ws.mask[static_cast<std::size_t>(id)];
                        for (std::size_t i = 0; i < dxe.size(); ++i)
                            if (!msk[i]) dxe[i] = T{};
                    }
                    if (rotate) fwht_rows_t(dxe, static_cast<int>(k));
                    for (std::size_t i = 0; i < dxe.size(); ++i) dx[i] += dxe[i];
                    break;
                }
            }
            matmul_a_bt(dy.data(), w.data(), dx.data(), m, n, k);
            break;
        }
        case OpKind::BatchedMatMul: {
            const Node& an = g.node(nd.inputs[0]);
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            const auto& b = ws.val[static_cast<std::size_t>(nd.inputs[1])];
            auto& da = adj(nd.inputs[0]);
            auto& db = adj(nd.inputs[1]);
            std::size_t m = static_cast<std::size_t>(an.shape[an.shape.size() - 2]);
            std::size_t k = static_cast<std::size_t>(an.shape.back());
            std::size_t n = static_cast<std::size_t>(nd.shape.back());
            std::size_t batches = fold_rows(an.shape) / m;
            std::size_t bstride = nd.transpose_rhs ? n * k : k * n;
            for (std::size_t q = 0; q < batches; ++q) {
                const T* ap = a.data() + q * m * k;
                const T* bp = b.data() + q * bstride;
                const T* dyp = dy.data() + q * m * n;
                T* dap = da.data() + q * m * k;
                T* dbp = db.data() + q * bstride;
                if (nd.transpose_rhs) {
                    // y = a * b^T  (b is [n, k])
                    matmul_acc(dyp, bp, dap, m, n, k);      // da += dy[m,n] * b[n,k]
                    matmul_at_b(dyp, ap, dbp, m, n, k);     // db += dy^T[n,m] * a[m,k]
                } else {
                    matmul_a_bt(dyp, bp, dap, m, n, k);     // da += dy[m,n] * b^T
                    matmul_at_b(ap, dyp, dbp, m, k, n);     // db += a^T * dy
                }
            }
            break;
        }
        case OpKind::Add: {
            auto& da = adj(nd.inputs[0]);
            auto& db = adj(nd.inputs[1]);
            for (std::size_t i = 0; i < dy.size(); ++i) {
                da[i] += dy[i];
                db[i % db.size()] += dy[i];
            }
            break;
        }
        case OpKind::Mul: {
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            const auto& b = ws.val[static_cast<std::size_t>(nd.inputs[1])];
            auto& da = adj(nd.inputs[0]);
            auto& db = adj(nd.inputs[1]);
            for (std::size_t i = 0; i < dy.size(); ++i) {
                da[i] += dy[i] * b[i];
                db[i] += dy[i] * a[i];
            }
            break;
        }
        case OpKind::Scale: {
            auto& da = adj(nd.inputs[0]);
            T c{nd.scale};
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * c;
            break;
        }
        case OpKind::Sum: {
            auto& da = adj(nd.inputs[0]);
            for (auto& v : da) v += dy[0];
            break;
        }
        case OpKind::Gelu: {
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            auto& da = adj(nd.inputs[0]);
            for (std::size_t i = 0; i < dy.size(); ++i) {
                T x = a[i];
                T cdf = T{0.5} * (T{1.0} + erf(x * T{kInvSqrt2}));
                T pdf = T{kInvSqrt2Pi} * exp(x * x * T{-0.5});
                da[i] += dy[i] * (cdf + x * pdf);
            }
            break;
        }
        case OpKind::Softmax: {
            const auto& y = ws.val[static_cast<std::size_t>(id)];
            auto& da = adj(nd.inputs[0]);
            std::size_t d = static_cast<std::size_t>(nd.shape.back());
            std::size_t rows = y.size() / d;
            for (std::size_t r = 0; r < rows; ++r) {
                const T* yr = y.data() + r * d;
                const T* dyr = dy.data() + r * d;
                T* dar = da.data() + r * d;
                std::size_t valid = nd.causal ? (r % d) + 1 : d;
                T dot{};
                for (std::size_t j = 0; j < valid; ++j) dot += dyr[j] * yr[j];
                for (std::size_t j = 0; j < valid; ++j) dar[j] += yr[j] * (dyr[j] - dot);
            }
            break;
        }
        case OpKind::LayerNorm: {
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            const auto& gain = ws.val[static_cast<std::size_t>(nd.inputs[1])];
            auto& dx = adj(nd.inputs[0]);
            auto& dg = adj(nd.inputs[1]);
            auto& db = adj(nd.inputs[2]);
            std::size_t d = static_cast<std::size_t>(nd.shape.back());
            std::size_t rows = a.size() / d;
            T invd{1.0 / static_cast<double>(d)};
            for (std::size_t r = 0; r < rows; ++r) {
                const T* x = a.data() + r * d;
                const T* dyr = dy.data() + r * d;
                T* dxr = dx.data() + r * d;
                T mu{};
                for (std::size_t j = 0; j < d; ++j) mu += x[j];
                mu *= invd;
                T var{};
                for (std::size_t j = 0; j < d; ++j) {
                    T c = x[j] - mu;
                    var += c * c;
                }
                var *= invd;
                T rstd = T{1.0} / sqrt(var + T{nd.eps});
                T sum_dxh{}, sum_dxh_xh{};
                for (std::size_t j = 0; j < d; ++j) {
                    T xh = (x[j] - mu) * rstd;
                    T dxh = dyr[j] * gain[j];
                    dg[j] += dyr[j] * xh;
                    db[j] += dyr[j];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh;
                }
                sum_dxh *= invd;
                sum_dxh_xh *= invd;
                for (std::size_t j = 0; j < d; ++j) {
                    T xh = (x[j] - mu) * rstd;
                    T dxh = dyr[j] * gain[j];
                    dxr[j] += rstd * (dxh - sum_dxh - xh * sum_dxh_xh);
                }
            }
            break;
        }
        case OpKind::CrossEntropy: {
            const auto& a = ws.val[static_cast<std::size_t>(nd.inputs[0])];
            const Node& ln = g.node(nd.inputs[0]);
            const auto& tgt = token_values(batch, g.node(nd.inputs[1]));
            auto& da = adj(nd.inputs[0]);
            std::size_t v = static_cast<std::size_t>(ln.shape.back());
            std::size_t rows = a.size() / v;
            T u = dy[0] * T{1.0 / static_cast<double>(rows)};
            for (std::size_t r = 0; r < rows; ++r) {
                const T* x = a.data() + r * v;
                T* dar = da.data() + r * v;
                std::size_t arg = 0;
                for (std::size_t j = 1; j < v; ++j)
                    if (value_of(x[j]) > value_of(x[arg])) arg = j;
                T m = x[arg];
                T s{};
                for (std::size_t j = 0; j < v; ++j) s += exp(x[j] - m);
                T inv = T{1.0} / s;
                for (std::size_t j = 0; j < v; ++j) dar[j] += u * exp(x[j] - m) * inv;
                dar[static_cast<std::size_t>(tgt[r])] -= u;
            }
            break;
        }
        case OpKind::Reshape: {
            auto& da = adj(nd.inputs[0]);
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
            break;
        }
        case OpKind::Permute: {
            const Node& an = g.node(nd.inputs[0]);
            auto& da = adj(nd.inputs[0]);
            std::size_t rank = nd.perm.size();
            std::vector<std::size_t> in_strides(rank, 1), out_dims(rank);
            for (std::size_t i = rank - 1; i > 0; --i)
                in_strides[i - 1] = in_strides[i] * static_cast<std::size_t>(an.shape[i]);
            for (std::size_t i = 0; i < rank; ++i)
                out_dims[i] = static_cast<std::size_t>(nd.shape[i]);
            std::vector<std::size_t> coord(rank, 0);
            for (std::size_t o = 0; o < dy.size(); ++o) {
                std::size_t src = 0;
                for (std::size_t i = 0; i < rank; ++i)
                    src += coord[i] * in_strides[static_cast<std::size_t>(nd.perm[i])];
                da[src] += dy[o];
                for (std::size_t i = rank; i-- > 0;) {
                    if (++coord[i] < out_dims[i]) break;
                    coord[i] = 0;
                }
            }
            break;
        }
    }
}

template <typename T>
T run_forward(const ComputationGraph& g, const T* pdata, const ParamVector& layout,
              const Batch& batch, const EvalOptions& opts, Workspace<T>& ws) {
    if (g.output() < 0) throw ConfigError("graph has no output node");
    std::size_t n = static_cast<std::size_t>(g.size());
    ws.val.resize(n);
    ws.aux.assign(n, {});
    ws.mask.assign(n, {});
    for (int id = 0; id < g.size(); ++id) forward_node(g, id, pdata, layout, batch, opts, ws);
    return ws.val[static_cast<std::size_t>(g.output())][0];
}

template <typename T>
void run_backward(const ComputationGraph& g, const ParamVector& layout, const Batch& batch,
                  const EvalOptions& opts, Workspace<T>& ws, T* grad_out) {
    std::size_t n = static_cast<std::size_t>(g.size());
    ws.adj.assign(n, {});
    ws.adj[static_cast<std::size_t>(g.output())].assign(1, T{1.0});
    for (int id = g.size() - 1; id >= 0; --id) backward_node(g, id, layout, batch, opts, ws);
    for (int id = 0; id < g.size(); ++id) {
        const Node& nd = g.node(id);
        if (nd.kind != OpKind::Param) continue;
        const auto& a = ws.adj[static_cast<std::size_t>(id)];
        const auto& e = layout.find(nd.name);
        if (a.empty()) continue;
        T* dst = grad_out + e.offset;
        for (std::size_t i = 0; i < e.length; ++i) dst[i] += a[i];
    }
}

}  // namespace

double forward_eval(const ComputationGraph& graph, const ParamVector& params, const Batch& batch,
                    const EvalOptions& opts) {
    Workspace<double> ws;
    double loss = run_forward(graph, params.data().data(), params, batch, opts, ws);
    return loss;
}

GradResult backward_grad(const ComputationGraph& graph, const ParamVector& params,
                         const Batch& batch, const EvalOptions& opts) {
    Workspace<double> ws;
    GradResult r;
    r.loss = run_forward(graph, params.data().data(), params, batch, opts, ws);
    r.grad.assign(params.size(), 0.0);
    run_backward(graph, params, batch, opts, ws, r.grad.data());
    return r;
}

std::vector<double> hvp(const ComputationGraph& graph, const ParamVector& params,
                        const Batch& batch, std::span<const double> v) {
    if (v.size() != params.size()) throw ArgumentError("hvp: direction length mismatch");
    EvalOptions exact;  // full precision; quantizers differentiate as identity
    std::vector<Dual> p(params.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = Dual(params.data()[i], v[i]);
    Workspace<Dual> ws;
    run_forward(graph, p.data(), params, batch, exact, ws);
    std::vector<Dual> grad(params.size());
    run_backward(graph, params, batch, exact, ws, grad.data());
    std::vector<double> out(params.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = grad[i].t;
    return out;
}

std::vector<double> hvp_fd(const ComputationGraph& graph, const ParamVector& params,
                           const Batch& batch, std::span<const double> v, double eps) {
    if (v.size() != params.size()) throw ArgumentError("hvp_fd: direction length mismatch");
    if (eps <= 0.0)
        eps = std::sqrt(2.220446049250313e-16) * (1.0 + inf_norm(params.data()));
    ParamVector shifted = params;
    EvalOptions exact;
    for (std::size_t i = 0; i < v.size(); ++i) shifted.data()[i] = params.data()[i] + eps * v[i];
    GradResult plus = backward_grad(graph, shifted, batch, exact);
    for (std::size_t i = 0; i < v.size(); ++i) shifted.data()[i] = params.data()[i] - eps * v[i];
    GradResult minus = backward_grad(graph, shifted, batch, exact);
    std::vector<double> out(params.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (plus.grad[i] - minus.grad[i]) / (2.0 * eps);
    return out;
}

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& fn,
                                     const std::vector<double>& x, double eps) {
    if (eps <= 0.0) throw ArgumentError("finite_diff_grad: eps must be positive");
    std::vector<double> g(x.size());
    std::vector<double> y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = x[i] + eps;
        double fp = fn(y);
        y[i] = x[i] - eps;
        double fm = fn(y);
        y[i] = x[i];
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

}  // namespace winq
