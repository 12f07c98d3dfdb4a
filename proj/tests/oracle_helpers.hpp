#pragma once

// Test-only oracles, kept independent of the evaluation paths they check.

#include <cmath>
#include <map>
#include <vector>

#include "winq/graph.hpp"
#include "winq/param_vector.hpp"

namespace winq::testing {

// Second, deliberately naive interpreter of a computation graph. Evaluates
// node by node with straightforward loops; shares nothing with the library
// evaluator beyond the graph structure itself.
inline double naive_interpret(const ComputationGraph& g, const ParamVector& params,
                              const Batch& batch) {
    std::vector<std::vector<double>> vals(static_cast<std::size_t>(g.size()));
    auto numel = [](const Shape& s) { return shape_numel(s); };

    for (int id = 0; id < g.size(); ++id) {
        const Node& nd = g.node(id);
        std::vector<double>& out = vals[static_cast<std::size_t>(id)];
        out.resize(numel(nd.shape), 0.0);
        auto in = [&](int i) -> const std::vector<double>& {
            return vals[static_cast<std::size_t>(nd.inputs[static_cast<std::size_t>(i)])];
        };
        switch (nd.kind) {
            case OpKind::Param: {
                auto s = params.slice(nd.name);
                out.assign(s.begin(), s.end());
                break;
            }
            case OpKind::Const:
                out = nd.cdata;
                break;
            case OpKind::Tokens:
                out.clear();
                break;
            case OpKind::Embed: {
                const auto& ids = batch.find(g.node(nd.inputs[1]).name).values;
                int d = g.node(nd.inputs[0]).shape[1];
                for (std::size_t r = 0; r < ids.size(); ++r)
                    for (int j = 0; j < d; ++j)
                        out[r * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)] =
                            in(0)[static_cast<std::size_t>(ids[r] * d + j)];
                break;
            }
            case OpKind::MatMul: {
                const Shape& xs = g.node(nd.inputs[0]).shape;
                std::size_t k = static_cast<std::size_t>(xs.back());
                std::size_t n = static_cast<std::size_t>(nd.shape.back());
                std::size_t m = numel(xs) / k;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        double s = 0.0;
                        for (std::size_t p = 0; p < k; ++p)
                            s += in(0)[i * k + p] * in(1)[p * n + j];
                        out[i * n + j] = s;
                    }
                break;
            }
            case OpKind::BatchedMatMul: {
                const Shape& as = g.node(nd.inputs[0]).shape;
                std::size_t m = static_cast<std::size_t>(as[as.size() - 2]);
                std::size_t k = static_cast<std::size_t>(as.back());
                std::size_t n = static_cast<std::size_t>(nd.shape.back());
                std::size_t batches = numel(as) / (m * k);
                std::size_t bs = nd.transpose_rhs ? n * k : k * n;
                for (std::size_t q = 0; q < batches; ++q)
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) {
                            double s = 0.0;
                            for (std::size_t p = 0; p < k; ++p) {
                                double b = nd.transpose_rhs ? in(1)[q * bs + j * k + p]
                                                            : in(1)[q * bs + p * n + j];
                                s += in(0)[q * m * k + i * k + p] * b;
                            }
                            out[q * m * n + i * n + j] = s;
                        }
                break;
            }
            case OpKind::Add:
                for (std::size_t i = 0; i < out.size(); ++i)
                    out[i] = in(0)[i] + in(1)[i % in(1).size()];
                break;
            case OpKind::Mul:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = in(0)[i] * in(1)[i];
                break;
            case OpKind::Scale:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = in(0)[i] * nd.scale;
                break;
            case OpKind::Sum: {
                double s = 0.0;
                for (double v : in(0)) s += v;
                out[0] = s;
                break;
            }
            case OpKind::Gelu:
                for (std::size_t i = 0; i < out.size(); ++i) {
                    double x = in(0)[i];
                    out[i] = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
                }
                break;
            case OpKind::Softmax: {
                std::size_t d = static_cast<std::size_t>(nd.shape.back());
                std::size_t rows = out.size() / d;
                for (std::size_t r = 0; r < rows; ++r) {
                    std::size_t valid = nd.causal ? (r % d) + 1 : d;
                    double m = in(0)[r * d];
                    for (std::size_t j = 1; j < valid; ++j)
                        m = std::max(m, in(0)[r * d + j]);
                    double s = 0.0;
                    for (std::size_t j = 0; j < valid; ++j) s += std::exp(in(0)[r * d + j] - m);
                    for (std::size_t j = 0; j < valid; ++j)
                        out[r * d + j] = std::exp(in(0)[r * d + j] - m) / s;
                }
                break;
            }
            case OpKind::LayerNorm: {
                std::size_t d = static_cast<std::size_t>(nd.shape.back());
                std::size_t rows = out.size() / d;
                for (std::size_t r = 0; r < rows; ++r) {
                    double mu = 0.0;
                    for (std::size_t j = 0; j < d; ++j) mu += in(0)[r * d + j];
                    mu /= static_cast<double>(d);
                    double var = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        double c = in(0)[r * d + j] - mu;
                        var += c * c;
                    }
                    var /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j)
                        out[r * d + j] =
                            (in(0)[r * d + j] - mu) / std::sqrt(var + nd.eps) * in(1)[j] +
                            in(2)[j];
                }
                break;
            }
            case OpKind::CrossEntropy: {
                const auto& tgt = batch.find(g.node(nd.inputs[1]).name).values;
                std::size_t v = static_cast<std::size_t>(g.node(nd.inputs[0]).shape.back());
                std::size_t rows = in(0).size() / v;
                double total = 0.0;
                for (std::size_t r = 0; r < rows; ++r) {
                    double m = in(0)[r * v];
                    for (std::size_t j = 1; j < v; ++j) m = std::max(m, in(0)[r * v + j]);
                    double s = 0.0;
                    for (std::size_t j = 0; j < v; ++j) s += std::exp(in(0)[r * v + j] - m);
                    total += m + std::log(s) - in(0)[r * v + static_cast<std::size_t>(tgt[r])];
                }
                out[0] = total / static_cast<double>(rows);
                break;
            }
            case OpKind::Reshape:
                out = in(0);
                break;
            case OpKind::Permute: {
                const Shape& as = g.node(nd.inputs[0]).shape;
                std::size_t rank = nd.perm.size();
                std::vector<std::size_t> istr(rank, 1);
                for (std::size_t i = rank - 1; i > 0; --i)
                    istr[i - 1] = istr[i] * static_cast<std::size_t>(as[i]);
                std::vector<std::size_t> coord(rank, 0);
                for (std::size_t o = 0; o < out.size(); ++o) {
                    std::size_t src = 0;
                    for (std::size_t i = 0; i < rank; ++i)
                        src += coord[i] * istr[static_cast<std::size_t>(nd.perm[i])];
                    out[o] = in(0)[src];
                    for (std::size_t i = rank; i-- > 0;) {
                        if (++coord[i] < static_cast<std::size_t>(nd.shape[i])) break;
                        coord[i] = 0;
                    }
                }
                break;
            }
        }
    }
    return vals[static_cast<std::size_t>(g.output())][0];
}

inline double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({1e-6, std::fabs(a), std::fabs(b)});
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
    return m;
}

}  // namespace winq::testing
