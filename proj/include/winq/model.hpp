#pragma once

#include <cstdint>
#include <string>

#include "winq/eval.hpp"
#include "winq/graph.hpp"
#include "winq/param_vector.hpp"

namespace winq {

enum class ModelFamily { TinyTransformer, Mlp };

struct ModelConfig {
    ModelFamily family = ModelFamily::TinyTransformer;
    int layers = 2;
    int d_model = 32;       // power of two (Hadamard compatibility)
    int heads = 4;
    int vocab = 64;
    int context_length = 64;
    int batch_size = 32;    // graphs carry static shapes, so this is baked in
    int mlp_hidden = 16;    // Mlp family only

    void validate() const;
    std::size_t param_count() const;  // closed form, checked against build_model
};

struct BuiltModel {
    ComputationGraph graph;
    ParamVector params;
};

// Deterministic standard initialization: N(0, 0.02^2) weights, zeros for
// biases/normalization offsets, ones for normalization gains. Embedding and
// normalization parameters are excluded from weight quantization.
BuiltModel build_model(const ModelConfig& config, std::uint64_t seed);

// Same network with a different number of batch rows (e.g. the fixed Hessian
// batch). Parameters bind by name, so a BuiltModel's params work unchanged.
ComputationGraph build_graph(const ModelConfig& config, int batch_size);

// Mean next-token cross-entropy with the given evaluation options. A 16-bit
// configuration reduces to the plain full-precision loss.
double batch_loss(const BuiltModel& model, const ParamVector& params, const Batch& batch,
                  const EvalOptions& opts = {});

ModelFamily model_family_from_name(const std::string& s);
const char* model_family_name(ModelFamily f);

}  // namespace winq
