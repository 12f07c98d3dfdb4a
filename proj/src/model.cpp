#include "winq/model.hpp"

#include <cmath>

#include "winq/errors.hpp"
#include "winq/hadamard.hpp"
#include "winq/rng.hpp"

namespace winq {

ModelFamily model_family_from_name(const std::string& s) {
    if (s == "tiny_transformer") return ModelFamily::TinyTransformer;
    if (s == "mlp") return ModelFamily::Mlp;
    throw ConfigError("unknown model family: " + s);
}

const char* model_family_name(ModelFamily f) {
    return f == ModelFamily::TinyTransformer ? "tiny_transformer" : "mlp";
}

void ModelConfig::validate() const {
    if (vocab < 2) throw ConfigError("model: vocab must be >= 2");
    if (context_length < 1) throw ConfigError("model: context_length must be >= 1");
    if (batch_size < 1) throw ConfigError("model: batch_size must be >= 1");
    if (family == ModelFamily::TinyTransformer) {
        if (layers < 1) throw ConfigError("model: layers must be >= 1");
        if (!is_power_of_two(d_model))
            throw ConfigError("model: d_model must be a power of two, got " +
                              std::to_string(d_model));
        if (heads < 1 || d_model % heads != 0)
            throw ConfigError("model: d_model must be divisible by heads");
    } else {
        if (!is_power_of_two(d_model) || !is_power_of_two(mlp_hidden))
            throw ConfigError("model: mlp dims must be powers of two");
    }
}

std::size_t ModelConfig::param_count() const {
    std::size_t v = static_cast<std::size_t>(vocab);
    std::size_t d = static_cast<std::size_t>(d_model);
    if (family == ModelFamily::Mlp) {
        std::size_t h = static_cast<std::size_t>(mlp_hidden);
        return v * d + d * h + h * v;  // embedding, hidden, head
    }
    std::size_t ctx = static_cast<std::size_t>(context_length);
    std::size_t per_layer = 12 * d * d + 4 * d;  // qkvo + mlp(4x) + two layer norms
    return v * d + ctx * d + static_cast<std::size_t>(layers) * per_layer + 2 * d + d * v;
}

namespace {

void init_gaussian(ParamVector& p, const std::string& name, SplitRng& rng, double std_dev) {
    for (double& x : p.slice(name)) x = std_dev * rng.normal();
}

void init_const(ParamVector& p, const std::string& name, double value) {
    for (double& x : p.slice(name)) x = value;
}

ParamVector transformer_params(const ModelConfig& cfg, std::uint64_t seed) {
    int d = cfg.d_model, L = cfg.context_length, V = cfg.vocab;
    ParamVector p;
    p.add("tok_emb", {V, d}, false);
    p.add("pos_emb", {L, d}, false);
    for (int l = 0; l < cfg.layers; ++l) {
        std::string pre = "layer" + std::to_string(l) + ".";
        p.add(pre + "ln1.gain", {d}, false);
        p.add(pre + "ln1.bias", {d}, false);
        p.add(pre + "wq", {d, d}, true);
        p.add(pre + "wk", {d, d}, true);
        p.add(pre + "wv", {d, d}, true);
        p.add(pre + "wo", {d, d}, true);
        p.add(pre + "ln2.gain", {d}, false);
        p.add(pre + "ln2.bias", {d}, false);
        p.add(pre + "mlp.w1", {d, 4 * d}, true);
        p.add(pre + "mlp.w2", {4 * d, d}, true);
    }
    p.add("final_ln.gain", {d}, false);
    p.add("final_ln.bias", {d}, false);
    p.add("head", {d, V}, true);

    SplitRng rng(seed, "init");
    init_gaussian(p, "tok_emb", rng, 0.02);
    init_gaussian(p, "pos_emb", rng, 0.02);
    for (int l = 0; l < cfg.layers; ++l) {
        std::string pre = "layer" + std::to_string(l) + ".";
        init_const(p, pre + "ln1.gain", 1.0);
        init_gaussian(p, pre + "wq", rng, 0.02);
        init_gaussian(p, pre + "wk", rng, 0.02);
        init_gaussian(p, pre + "wv", rng, 0.02);
        init_gaussian(p, pre + "wo", rng, 0.02);
        init_const(p, pre + "ln2.gain", 1.0);
        init_gaussian(p, pre + "mlp.w1", rng, 0.02);
        init_gaussian(p, pre + "mlp.w2", rng, 0.02);
    }
    init_const(p, "final_ln.gain", 1.0);
    init_gaussian(p, "head", rng, 0.02);
    return p;
}

ComputationGraph transformer_graph(const ModelConfig& cfg, int batch_size) {
    int d = cfg.d_model, h = cfg.heads, dh = d / h;
    int L = cfg.context_length, V = cfg.vocab, B = batch_size;
    ComputationGraph g;

    int tok_emb = g.param("tok_emb", {V, d});
    int pos_emb = g.param("pos_emb", {L, d});
    int inputs = g.tokens("tokens.input", {B, L});
    int targets = g.tokens("tokens.target", {B, L});

    int x = g.add(g.embed(tok_emb, inputs), pos_emb);  // pos broadcast over batch
    for (int l = 0; l < cfg.layers; ++l) {
        std::string pre = "layer" + std::to_string(l) + ".";
        int ln1 = g.layer_norm(x, g.param(pre + "ln1.gain", {d}), g.param(pre + "ln1.bias", {d}));
        auto split_heads = [&](int lin) {
            return g.permute(g.reshape(lin, {B, L, h, dh}), {0, 2, 1, 3});  // [B,h,L,dh]
        };
        int q = split_heads(g.matmul(ln1, g.param(pre + "wq", {d, d}), true));
        int k = split_heads(g.matmul(ln1, g.param(pre + "wk", {d, d}), true));
        int v = split_heads(g.matmul(ln1, g.param(pre + "wv", {d, d}), true));
        int scores = g.scale(g.batched_matmul(q, k, /*transpose_rhs=*/true),
                             1.0 / std::sqrt(static_cast<double>(dh)));
        int probs = g.softmax(scores, /*causal=*/true);
        int ctx = g.batched_matmul(probs, v);  // [B,h,L,dh]
        int merged = g.reshape(g.permute(ctx, {0, 2, 1, 3}), {B, L, d});
        int att = g.matmul(merged, g.param(pre + "wo", {d, d}), true);
        x = g.add(att, x);
        int ln2 = g.layer_norm(x, g.param(pre + "ln2.gain", {d}), g.param(pre + "ln2.bias", {d}));
        int mid = g.gelu(g.matmul(ln2, g.param(pre + "mlp.w1", {d, 4 * d}), true));
        int out = g.matmul(mid, g.param(pre + "mlp.w2", {4 * d, d}), true);
        x = g.add(out, x);
    }
    int fin = g.layer_norm(x, g.param("final_ln.gain", {d}), g.param("final_ln.bias", {d}));
    int logits = g.matmul(fin, g.param("head", {d, V}), true);
    g.set_output(g.cross_entropy(logits, targets));
    return g;
}

ParamVector mlp_params(const ModelConfig& cfg, std::uint64_t seed) {
    int d = cfg.d_model, hid = cfg.mlp_hidden, V = cfg.vocab;
    ParamVector p;
    p.add("tok_emb", {V, d}, false);
    p.add("w1", {d, hid}, true);
    p.add("head", {hid, V}, true);

    SplitRng rng(seed, "init");
    init_gaussian(p, "tok_emb", rng, 0.02);
    init_gaussian(p, "w1", rng, 0.02);
    init_gaussian(p, "head", rng, 0.02);
    return p;
}

ComputationGraph mlp_graph(const ModelConfig& cfg, int batch_size) {
    int d = cfg.d_model, hid = cfg.mlp_hidden, V = cfg.vocab;
    int B = batch_size, L = cfg.context_length;
    ComputationGraph g;
    int tok_emb = g.param("tok_emb", {V, d});
    int inputs = g.tokens("tokens.input", {B, L});
    int targets = g.tokens("tokens.target", {B, L});
    int x = g.embed(tok_emb, inputs);
    int mid = g.gelu(g.matmul(x, g.param("w1", {d, hid}), true));
    int logits = g.matmul(mid, g.param("head", {hid, V}), true);
    g.set_output(g.cross_entropy(logits, targets));
    return g;
}

}  // namespace

ComputationGraph build_graph(const ModelConfig& config, int batch_size) {
    config.validate();
    return config.family == ModelFamily::TinyTransformer ? transformer_graph(config, batch_size)
                                                         : mlp_graph(config, batch_size);
}

BuiltModel build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    BuiltModel m;
    if (config.family == ModelFamily::TinyTransformer) {
        m.params = transformer_params(config, seed);
        m.graph = transformer_graph(config, config.batch_size);
    } else {
        m.params = mlp_params(config, seed);
        m.graph = mlp_graph(config, config.batch_size);
    }
    return m;
}

double batch_loss(const BuiltModel& model, const ParamVector& params, const Batch& batch,
                  const EvalOptions& opts) {
    return forward_eval(model.graph, params, batch, opts);
}

}  // namespace winq
