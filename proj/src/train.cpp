#include "winq/train.hpp"

#include <algorithm>
#include <cmath>

#include "winq/errors.hpp"
#include "winq/hadamard.hpp"
#include "winq/rng.hpp"

namespace winq {

void TrainConfig::validate() const {
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (eta <= 0.0) throw ConfigError("train: eta must be positive");
    if (reinit_interval < 1) throw ConfigError("train: reinit_interval must be >= 1");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("train: alpha must lie in [0,1]");
    if (sigma < 0.0) throw ConfigError("train: sigma must be >= 0");
    if (pretrain_steps < 0) throw ConfigError("train: pretrain_steps must be >= 0");
    if (weight_bits != 16) (void)default_weight_spec(weight_bits);
    if (activation_bits != 4 && activation_bits != 8 && activation_bits != 16)
        throw ConfigError("train: activation_bits must be 4, 8 or 16");
}

QuantLayout QuantLayout::attach(ParamVector& params, int weight_bits) {
    if (weight_bits == 16) return {};
    return attach(params, default_weight_spec(weight_bits));
}

QuantLayout QuantLayout::attach(ParamVector& params, const QuantizerSpec& spec) {
    spec.validate();
    QuantLayout lay;
    std::size_t n = params.entry_count();
    for (std::size_t i = 0; i < n; ++i) {
        if (!params.entry(i).quantized) continue;
        lay.tensor_entry.push_back(i);
        lay.specs.push_back(spec);
        lay.step_entry.push_back(-1);
    }
    if (spec.learnable()) {
        for (std::size_t t = 0; t < lay.tensor_entry.size(); ++t) {
            const auto& e = params.entry(lay.tensor_entry[t]);
            QuantGrid init = make_grid(params.slice(e), e.shape,
                                       {QuantKind::SymmetricMinMax, spec.bits, spec.granularity});
            std::size_t idx = params.add(e.name + ".step", {1}, false, /*step_size=*/true);
            params.slice(params.entry(idx))[0] = init.a[0];
            lay.step_entry[t] = static_cast<std::ptrdiff_t>(idx);
        }
    }
    return lay;
}

std::vector<double> QuantLayout::step_values(const ParamVector& params) const {
    std::vector<double> out(tensor_entry.size(), 0.0);
    for (std::size_t t = 0; t < tensor_entry.size(); ++t)
        if (step_entry[t] >= 0)
            out[t] = params.slice(params.entry(static_cast<std::size_t>(step_entry[t])))[0];
    return out;
}

std::vector<QuantGrid> QuantLayout::grids_at(const ParamVector& params, bool rotated) const {
    std::vector<QuantGrid> grids;
    grids.reserve(tensor_entry.size());
    std::vector<double> rot;
    for (std::size_t t = 0; t < tensor_entry.size(); ++t) {
        const auto& e = params.entry(tensor_entry[t]);
        if (specs[t].learnable()) {
            double s = params.slice(params.entry(static_cast<std::size_t>(step_entry[t])))[0];
            grids.push_back(grid_from_step(s, specs[t]));
        } else if (rotated) {
            auto w = params.slice(e);
            rot.assign(w.begin(), w.end());
            fwht_weight(rot, e.shape);
            grids.push_back(make_grid(rot, e.shape, specs[t]));
        } else {
            grids.push_back(make_grid(params.slice(e), e.shape, specs[t]));
        }
    }
    return grids;
}

EffectiveQuant quantize_params(const ParamVector& params, const QuantLayout& layout,
                               bool hadamard, const std::vector<double>* noise) {
    EffectiveQuant eq;
    eq.eff = params;
    eq.grids.reserve(layout.tensor_entry.size());
    eq.pre_quant.resize(layout.tensor_entry.size());
    for (std::size_t t = 0; t < layout.tensor_entry.size(); ++t) {
        const auto& e = params.entry(layout.tensor_entry[t]);
        auto& latent = eq.pre_quant[t];
        auto src = params.slice(e);
        latent.assign(src.begin(), src.end());
        if (noise)
            for (std::size_t i = 0; i < latent.size(); ++i) latent[i] += (*noise)[e.offset + i];
        if (hadamard) fwht_weight(latent, e.shape);
        QuantGrid grid;
        if (layout.specs[t].learnable()) {
            double s =
                params.slice(params.entry(static_cast<std::size_t>(layout.step_entry[t])))[0];
            grid = grid_from_step(s, layout.specs[t]);
        } else {
            grid = make_grid(latent, e.shape, layout.specs[t]);
        }
        quantize(latent, grid, eq.eff.slice(e));
        eq.grids.push_back(std::move(grid));
    }
    return eq;
}

std::vector<double> ste_latent_gradient(const std::vector<double>& grad_eff,
                                        const ParamVector& params, const QuantLayout& layout,
                                        const EffectiveQuant& eq, bool hadamard,
                                        bool passthrough_everywhere) {
    if (grad_eff.size() != params.size())
        throw ArgumentError("ste_latent_gradient: gradient length mismatch");
    std::vector<double> g = grad_eff;
    std::vector<double> step_grad;
    for (std::size_t t = 0; t < layout.tensor_entry.size(); ++t) {
        const auto& e = params.entry(layout.tensor_entry[t]);
        std::span<const double> up(grad_eff.data() + e.offset, e.length);
        std::span<double> out(g.data() + e.offset, e.length);
        bool learnable = layout.specs[t].learnable();
        ste_backward(up, eq.pre_quant[t], eq.grids[t], out, learnable ? &step_grad : nullptr,
                     passthrough_everywhere);
        if (hadamard) fwht_weight(out, e.shape);  // H^T, H is symmetric
        if (learnable)
            g[params.entry(static_cast<std::size_t>(layout.step_entry[t])).offset] = step_grad[0];
    }
    return g;
}

void reinit_interpolate(ParamVector& params, double alpha, const QuantLayout& layout) {
    if (alpha < 0.0 || alpha > 1.0) throw ArgumentError("reinit_interpolate: alpha outside [0,1]");
    if (alpha == 0.0) return;
    auto grids = layout.grids_at(params);
    std::vector<double> q;
    for (std::size_t t = 0; t < layout.tensor_entry.size(); ++t) {
        const auto& e = params.entry(layout.tensor_entry[t]);
        auto w = params.slice(e);
        q.resize(w.size());
        quantize(w, grids[t], q);
        for (std::size_t i = 0; i < w.size(); ++i)
            w[i] = (1.0 - alpha) * w[i] + alpha * q[i];
    }
}

namespace {

double latent_quant_error(const ParamVector& params, const QuantLayout& layout, bool hadamard) {
    // Relative quantization error of the unperturbed latent weights under the
    // current grids (rotated-domain error on the Hadamard path; H preserves
    // both norms).
    double err2 = 0.0, norm2 = 0.0;
    std::vector<double> latent, q;
    auto grids = layout.grids_at(params, hadamard);
    for (std::size_t t = 0; t < layout.tensor_entry.size(); ++t) {
        const auto& e = params.entry(layout.tensor_entry[t]);
        auto src = params.slice(e);
        latent.assign(src.begin(), src.end());
        if (hadamard) fwht_weight(latent, e.shape);
        q.resize(latent.size());
        quantize(latent, grids[t], q);
        for (std::size_t i = 0; i < latent.size(); ++i) {
            double d = q[i] - latent[i];
            err2 += d * d;
            norm2 += latent[i] * latent[i];
        }
    }
    return norm2 == 0.0 ? 0.0 : std::sqrt(err2 / norm2);
}

TrainResult run_train(const BuiltModel& model, const SyntheticCorpus& corpus,
                      const TrainConfig& cfg, const TrainHooks* hooks) {
    cfg.validate();

    TrainResult res;
    res.params = model.params;
    ParamVector& params = res.params;

    // Context/batch geometry comes from the graph's token leaf.
    int context = 0, batch_rows = 0;
    for (const auto& nd : model.graph.nodes())
        if (nd.kind == OpKind::Tokens && nd.name == "tokens.input") {
            batch_rows = nd.shape[0];
            context = nd.shape.back();
        }
    if (context == 0) throw ConfigError("winq_train: graph has no tokens.input leaf");

    BatchSampler sampler(corpus, context, batch_rows, cfg.seed_data);

    // Full-precision warm start, fresh optimizer afterwards.
    if (cfg.pretrain_steps > 0) {
        OptimizerState pre_opt(params.size());
        EvalOptions fp;
        for (int i = 0; i < cfg.pretrain_steps; ++i) {
            Batch b = sampler.next();
            GradResult gr = backward_grad(model.graph, params, b, fp);
            adamw_step(pre_opt, params.data(), gr.grad, cfg.adamw(cfg.eta));
        }
    }

    res.layout = QuantLayout::attach(params, cfg.weight_bits);
    const QuantLayout& layout = res.layout;
    res.opt.reset(params.size());
    OptimizerState& opt = res.opt;

    std::vector<unsigned char> decay_mask;
    if (!cfg.decay_step_sizes) {
        decay_mask.assign(params.size(), 1);
        for (const auto& e : params.entries())
            if (e.step_size)
                std::fill(decay_mask.begin() + static_cast<std::ptrdiff_t>(e.offset),
                          decay_mask.begin() + static_cast<std::ptrdiff_t>(e.offset + e.length),
                          static_cast<unsigned char>(0));
    }

    EvalOptions opts;
    opts.activation_bits = cfg.activation_bits;
    opts.hadamard = cfg.hadamard;

    SplitRng noise_rng(cfg.seed_noise, "noise");
    std::vector<double> noise;
    RunMetrics& metrics = res.metrics;
    metrics.records.reserve(static_cast<std::size_t>(cfg.steps));
    int over_count = 0;

    for (int i = 0; i < cfg.steps; ++i) {
        Batch batch = sampler.next();

        const std::vector<double>* noise_ptr = nullptr;
        if (cfg.sigma > 0.0 && !layout.empty()) {
            noise.assign(params.size(), 0.0);
            for (std::size_t t = 0; t < layout.tensor_entry.size(); ++t) {
                const auto& e = params.entry(layout.tensor_entry[t]);
                for (std::size_t j = 0; j < e.length; ++j)
                    noise[e.offset + j] = cfg.sigma * noise_rng.normal();
            }
            noise_ptr = &noise;
        }

        EffectiveQuant eq = quantize_params(params, layout, cfg.hadamard, noise_ptr);
        GradResult gr = backward_grad(model.graph, eq.eff, batch, opts);
        std::vector<double> g = ste_latent_gradient(gr.grad, params, layout, eq, cfg.hadamard,
                                                    cfg.ste_passthrough_everywhere);

        // Logged loss is the unperturbed quantized loss.
        double loss = gr.loss;
        if (noise_ptr) {
            EffectiveQuant clean = quantize_params(params, layout, cfg.hadamard, nullptr);
            loss = forward_eval(model.graph, clean.eff, batch, opts);
        }

        StepRecord rec;
        rec.step = i + 1;
        rec.loss = loss;
        rec.grad_rel_norm = l2_norm(g) / std::max(l2_norm(params.data()), 1e-300);
        rec.quant_err_rel = layout.empty() ? 0.0 : latent_quant_error(params, layout, cfg.hadamard);
        rec.lr = cfg.lr_at(i);

        if (cfg.grad_clip_norm > 0.0) {
            double n = l2_norm(g);
            if (n > cfg.grad_clip_norm)
                for (double& x : g) x *= cfg.grad_clip_norm / n;
        }

        adamw_step(opt, params.data(), g, cfg.adamw(rec.lr), decay_mask);

        if ((i + 1) % cfg.reinit_interval == 0 && cfg.alpha > 0.0 && !layout.empty()) {
            if (hooks && hooks->before_reinit) hooks->before_reinit(params, opt, layout, i + 1);
            if (cfg.hadamard) {
                auto steps = layout.step_values(params);
                hadamard_reinit(params, cfg.alpha, layout.specs, &steps);
            } else {
                reinit_interpolate(params, cfg.alpha, layout);
            }
            rec.event = "reinit";
            if (hooks && hooks->after_reinit) hooks->after_reinit(params, opt, layout, i + 1);
        }

        metrics.records.push_back(std::move(rec));
        if (i == 0) metrics.initial_loss = loss;

        if (loss > 10.0 * metrics.initial_loss) {
            if (++over_count >= 100) {
                metrics.diverged = true;
                metrics.diverged_at = i + 1;
                break;
            }
        } else {
            over_count = 0;
        }
    }
    return res;
}

}  // namespace

TrainResult winq_train(const BuiltModel& model, const SyntheticCorpus& corpus,
                       const TrainConfig& config, const TrainHooks* hooks) {
    if (config.hadamard)
        throw ConfigError("winq_train: config has hadamard=true, use winq_train_hadamard");
    return run_train(model, corpus, config, hooks);
}

TrainResult winq_train_hadamard(const BuiltModel& model, const SyntheticCorpus& corpus,
                                const TrainConfig& config, const TrainHooks* hooks) {
    TrainConfig cfg = config;
    cfg.hadamard = true;
    return run_train(model, corpus, cfg, hooks);
}

std::vector<double> smoothed_loss(const RunMetrics& metrics, int window) {
    if (window < 1) throw ArgumentError("smoothed_loss: window must be >= 1");
    std::vector<double> out(metrics.records.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < metrics.records.size(); ++i) {
        acc += metrics.records[i].loss;
        if (i >= static_cast<std::size_t>(window))
            acc -= metrics.records[i - static_cast<std::size_t>(window)].loss;
        std::size_t n = std::min<std::size_t>(i + 1, static_cast<std::size_t>(window));
        out[i] = acc / static_cast<double>(n);
    }
    return out;
}

std::optional<int> steps_to_loss(const RunMetrics& metrics, double target_loss, int window) {
    if (!std::isfinite(target_loss)) throw ArgumentError("steps_to_loss: target must be finite");
    std::vector<double> s = smoothed_loss(metrics, window);
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i] <= target_loss) return static_cast<int>(i) + 1;
    return std::nullopt;
}

}  // namespace winq
