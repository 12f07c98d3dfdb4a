#include "winq/graph.hpp"

#include <algorithm>

namespace winq {

const char* op_kind_name(OpKind k) {
    switch (k) {
        case OpKind::Param: return "param";
        case OpKind::Const: return "const";
        case OpKind::Tokens: return "tokens";
        case OpKind::Embed: return "embed";
        case OpKind::MatMul: return "matmul";
        case OpKind::BatchedMatMul: return "batched_matmul";
        case OpKind::Add: return "add";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Sum: return "sum";
        case OpKind::Gelu: return "gelu";
        case OpKind::Softmax: return "softmax";
        case OpKind::LayerNorm: return "layer_norm";
        case OpKind::CrossEntropy: return "cross_entropy";
        case OpKind::Reshape: return "reshape";
        case OpKind::Permute: return "permute";
    }
    return "?";
}

int ComputationGraph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

const Node& ComputationGraph::in(int id) const {
    if (id < 0 || id >= size()) throw ConfigError("graph: input node id out of range");
    return nodes_[static_cast<std::size_t>(id)];
}

int ComputationGraph::param(const std::string& name, Shape shape) {
    Node n;
    n.kind = OpKind::Param;
    n.name = name;
    n.shape = std::move(shape);
    return push(std::move(n));
}

int ComputationGraph::constant(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size()) throw ConfigError("graph: const shape/data mismatch");
    Node n;
    n.kind = OpKind::Const;
    n.shape = std::move(shape);
    n.cdata = std::move(data);
    return push(std::move(n));
}

int ComputationGraph::tokens(const std::string& name, Shape shape) {
    Node n;
    n.kind = OpKind::Tokens;
    n.name = name;
    n.shape = std::move(shape);
    return push(std::move(n));
}

int ComputationGraph::embed(int table, int ids) {
    const Node& t = in(table);
    const Node& i = in(ids);
    if (t.shape.size() != 2) throw ConfigError("embed: table must be 2-D");
    if (i.kind != OpKind::Tokens) throw ConfigError("embed: ids must be a tokens node");
    Node n;
    n.kind = OpKind::Embed;
    n.inputs = {table, ids};
    n.shape = i.shape;
    n.shape.push_back(t.shape[1]);
    return push(std::move(n));
}

int ComputationGraph::matmul(int x, int w, bool quantized_weight) {
    const Node& a = in(x);
    const Node& b = in(w);
    if (b.shape.size() != 2) throw ConfigError("matmul: weight must be 2-D");
    if (a.shape.empty() || a.shape.back() != b.shape[0])
        throw ConfigError("matmul: inner dims disagree, " + shape_str(a.shape) + " x " +
                          shape_str(b.shape));
    Node n;
    n.kind = OpKind::MatMul;
    n.inputs = {x, w};
    n.shape = a.shape;
    n.shape.back() = b.shape[1];
    n.quantized_weight = quantized_weight;
    return push(std::move(n));
}

int ComputationGraph::batched_matmul(int x, int y, bool transpose_rhs) {
    const Node& a = in(x);
    const Node& b = in(y);
    if (a.shape.size() < 2 || b.shape.size() != a.shape.size())
        throw ConfigError("batched_matmul: rank mismatch");
    for (std::size_t i = 0; i + 2 < a.shape.size(); ++i)
        if (a.shape[i] != b.shape[i]) throw ConfigError("batched_matmul: batch dims disagree");
    int m = a.shape[a.shape.size() - 2];
    int k = a.shape.back();
    int bk = transpose_rhs ? b.shape.back() : b.shape[b.shape.size() - 2];
    int bn = transpose_rhs ? b.shape[b.shape.size() - 2] : b.shape.back();
    if (k != bk) throw ConfigError("batched_matmul: inner dims disagree");
    Node n;
    n.kind = OpKind::BatchedMatMul;
    n.inputs = {x, y};
    n.shape = a.shape;
    n.shape[n.shape.size() - 2] = m;
    n.shape.back() = bn;
    n.transpose_rhs = transpose_rhs;
    return push(std::move(n));
}

int ComputationGraph::add(int x, int y) {
    const Node& a = in(x);
    const Node& b = in(y);
    bool same = a.shape == b.shape;
    bool suffix = b.shape.size() < a.shape.size() &&
                  std::equal(b.shape.begin(), b.shape.end(), a.shape.end() - b.shape.size());
    if (!same && !suffix)
        throw ConfigError("add: rhs shape " + shape_str(b.shape) +
                          " is neither equal to nor a suffix of " + shape_str(a.shape));
    Node n;
    n.kind = OpKind::Add;
    n.inputs = {x, y};
    n.shape = a.shape;
    return push(std::move(n));
}

int ComputationGraph::mul(int x, int y) {
    if (in(x).shape != in(y).shape) throw ConfigError("mul: shapes disagree");
    Node n;
    n.kind = OpKind::Mul;
    n.inputs = {x, y};
    n.shape = in(x).shape;
    return push(std::move(n));
}

int ComputationGraph::scale(int x, double c) {
    Node n;
    n.kind = OpKind::Scale;
    n.inputs = {x};
    n.shape = in(x).shape;
    n.scale = c;
    return push(std::move(n));
}

int ComputationGraph::sum(int x) {
    Node n;
    n.kind = OpKind::Sum;
    n.inputs = {x};
    n.shape = {1};
    return push(std::move(n));
}

int ComputationGraph::gelu(int x) {
    Node n;
    n.kind = OpKind::Gelu;
    n.inputs = {x};
    n.shape = in(x).shape;
    return push(std::move(n));
}

int ComputationGraph::softmax(int x, bool causal) {
    const Node& a = in(x);
    if (a.shape.empty()) throw ConfigError("softmax: needs at least one axis");
    if (causal && (a.shape.size() < 2 || a.shape[a.shape.size() - 2] != a.shape.back()))
        throw ConfigError("softmax: causal mask needs square trailing dims");
    Node n;
    n.kind = OpKind::Softmax;
    n.inputs = {x};
    n.shape = a.shape;
    n.causal = causal;
    return push(std::move(n));
}

int ComputationGraph::layer_norm(int x, int gain, int bias, double eps) {
    const Node& a = in(x);
    int d = a.shape.back();
    if (in(gain).shape != Shape{d} || in(bias).shape != Shape{d})
        throw ConfigError("layer_norm: gain/bias must have shape [last_dim]");
    Node n;
    n.kind = OpKind::LayerNorm;
    n.inputs = {x, gain, bias};
    n.shape = a.shape;
    n.eps = eps;
    return push(std::move(n));
}

int ComputationGraph::cross_entropy(int logits, int targets) {
    const Node& a = in(logits);
    const Node& t = in(targets);
    if (t.kind != OpKind::Tokens) throw ConfigError("cross_entropy: targets must be tokens");
    if (a.shape.size() != t.shape.size() + 1 ||
        !std::equal(t.shape.begin(), t.shape.end(), a.shape.begin()))
        throw ConfigError("cross_entropy: logits shape " + shape_str(a.shape) +
                          " does not extend targets shape " + shape_str(t.shape));
    Node n;
    n.kind = OpKind::CrossEntropy;
    n.inputs = {logits, targets};
    n.shape = {1};
    return push(std::move(n));
}

int ComputationGraph::reshape(int x, Shape new_shape) {
    if (shape_numel(new_shape) != shape_numel(in(x).shape))
        throw ConfigError("reshape: element count changes");
    Node n;
    n.kind = OpKind::Reshape;
    n.inputs = {x};
    n.shape = std::move(new_shape);
    return push(std::move(n));
}

int ComputationGraph::permute(int x, std::vector<int> perm) {
    const Node& a = in(x);
    if (perm.size() != a.shape.size()) throw ConfigError("permute: rank mismatch");
    std::vector<int> seen(perm.size(), 0);
    Shape out(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        int p = perm[i];
        if (p < 0 || p >= static_cast<int>(perm.size()) || seen[p]++)
            throw ConfigError("permute: invalid permutation");
        out[i] = a.shape[static_cast<std::size_t>(p)];
    }
    Node n;
    n.kind = OpKind::Permute;
    n.inputs = {x};
    n.shape = std::move(out);
    n.perm = std::move(perm);
    return push(std::move(n));
}

void ComputationGraph::set_output(int node) {
    const Node& n = in(node);
    if (shape_numel(n.shape) != 1) throw ConfigError("graph output must be scalar");
    output_ = node;
}

}  // namespace winq
