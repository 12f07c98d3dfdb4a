#pragma once

#include <string>
#include <vector>

#include "winq/tensor.hpp"

namespace winq {

enum class OpKind {
    Param,         // leaf bound to a ParamVector slice by name
    Const,         // leaf with embedded data
    Tokens,        // leaf bound to integer token data from the batch by name
    Embed,         // row gather: (table, tokens) -> [tokens..., d]
    MatMul,        // [..., m, k] x [k, n], weight on the right
    BatchedMatMul, // [..., m, k] x [..., k, n] (optional transpose of rhs)
    Add,           // equal shapes, or rhs broadcast over leading dims
    Mul,           // elementwise, equal shapes
    Scale,         // multiply by a fixed constant
    Sum,           // sum of all elements -> scalar
    Gelu,          // exact erf form
    Softmax,       // over last dim; optional causal mask on [..., L, L]
    LayerNorm,     // (x, gain, bias) over last dim
    CrossEntropy,  // (logits [..., V], targets) -> scalar mean
    Reshape,       // same data, new shape
    Permute,       // axis permutation
};

const char* op_kind_name(OpKind k);

struct Node {
    OpKind kind;
    std::vector<int> inputs;
    Shape shape;

    std::string name;           // Param / Tokens binding
    std::vector<double> cdata;  // Const payload
    double scale = 1.0;         // Scale factor
    bool causal = false;        // Softmax causal mask
    bool transpose_rhs = false; // BatchedMatMul
    double eps = 1e-5;          // LayerNorm
    std::vector<int> perm;      // Permute
    // MatMul with a quantization-flagged weight: activation quantization and
    // the optional Hadamard rotation of incoming activations attach here.
    bool quantized_weight = false;
};

// Static, acyclic, single-scalar-output computation graph. Node ids are
// topologically ordered by construction; shapes are checked as nodes are added.
class ComputationGraph {
public:
    int param(const std::string& name, Shape shape);
    int constant(Shape shape, std::vector<double> data);
    int tokens(const std::string& name, Shape shape);
    int embed(int table, int ids);
    int matmul(int x, int w, bool quantized_weight = false);
    int batched_matmul(int a, int b, bool transpose_rhs = false);
    int add(int a, int b);
    int mul(int a, int b);
    int scale(int x, double c);
    int sum(int x);
    int gelu(int x);
    int softmax(int x, bool causal = false);
    int layer_norm(int x, int gain, int bias, double eps = 1e-5);
    int cross_entropy(int logits, int targets);

    int reshape(int x, Shape new_shape);
    int permute(int x, std::vector<int> perm);

    void set_output(int node);
    int output() const { return output_; }

    const std::vector<Node>& nodes() const { return nodes_; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    int size() const { return static_cast<int>(nodes_.size()); }

private:
    int push(Node n);
    const Node& in(int id) const;

    std::vector<Node> nodes_;
    int output_ = -1;
};

// Integer token matrices bound to Tokens leaves by name, plus anything the
// loss needs (targets). Values must be < vocab of the consuming embed/CE node.
struct Batch {
    struct TokenField {
        std::string name;
        Shape shape;
        std::vector<int> values;
    };
    std::vector<TokenField> fields;

    void set(const std::string& name, Shape shape, std::vector<int> values) {
        for (auto& f : fields)
            if (f.name == name) {
                f.shape = std::move(shape);
                f.values = std::move(values);
                return;
            }
        fields.push_back({name, std::move(shape), std::move(values)});
    }
    const TokenField& find(const std::string& name) const {
        for (auto& f : fields)
            if (f.name == name) return f;
        throw ConfigError("batch is missing token field: " + name);
    }
};

}  // namespace winq
