#include "winq/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "winq/checkpoint.hpp"
#include "winq/corpus.hpp"
#include "winq/errors.hpp"
#include "winq/eval.hpp"
#include "winq/hadamard.hpp"
#include "winq/landscape.hpp"
#include "winq/model.hpp"
#include "winq/rng.hpp"
#include "winq/spectrum.hpp"

namespace winq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const std::string& config_text, const std::vector<std::string>& outputs,
                    json extra = json::object()) {
    json m;
    m["format"] = "winq-manifest-1";
    m["version"] = kVersionString;
    m["command"] = command;
    m["config_text"] = config_text;
    m["config_digest"] = digest_hex(fnv1a64(config_text));
    json outs = json::array();
    for (const auto& name : outputs) {
        outs.push_back({{"path", name}, {"digest", digest_hex(file_digest(out_dir + "/" + name))}});
    }
    m["outputs"] = outs;
    for (auto& [k, v] : extra.items()) m[k] = v;
    write_text(out_dir + "/manifest.json", m.dump(2) + "\n");
}

SyntheticCorpus corpus_for(const ExperimentConfig& cfg) {
    return generate_corpus(cfg.train.seed_data, cfg.model.vocab, cfg.corpus_length,
                           cfg.corpus_branch);
}

TrainResult run_training(const ExperimentConfig& cfg) {
    BuiltModel model = build_model(cfg.model, cfg.train.seed_init);
    SyntheticCorpus corpus = corpus_for(cfg);
    return cfg.train.hadamard ? winq_train_hadamard(model, corpus, cfg.train)
                              : winq_train(model, corpus, cfg.train);
}

// Fixed Hessian batch + matching graph for a checkpoint.
struct SpectrumSetup {
    ComputationGraph graph;
    Batch batch;
};

SpectrumSetup spectrum_setup(const Checkpoint& ckpt, const SpectrumConfig& spec,
                             std::size_t corpus_length, int corpus_branch) {
    SyntheticCorpus corpus = generate_corpus(ckpt.train.seed_data, ckpt.model.vocab,
                                             corpus_length, corpus_branch);
    BatchSampler sampler(corpus, ckpt.model.context_length, 1, ckpt.train.seed_data);
    Batch batch = sampler.fixed_batch(spec.tokens, spec.seed);
    int rows = batch.find("tokens.input").shape[0];
    SpectrumSetup s{build_graph(ckpt.model, rows), std::move(batch)};
    return s;
}

json stats_record(const SpectrumStats& st, const SpectrumConfig& cfg) {
    return {{"max_abs", st.max_abs},
            {"near_zero_mass", st.near_zero_mass},
            {"negative_mass", st.negative_mass},
            {"positive_mass", st.positive_mass},
            {"tau", st.tau},
            {"m", cfg.probes},
            {"k", cfg.lanczos_steps},
            {"seed", cfg.seed},
            {"subset", cfg.subset}};
}

}  // namespace

void write_metrics_jsonl(const RunMetrics& metrics, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    for (const auto& r : metrics.records) {
        json j = {{"step", r.step},
                  {"loss", r.loss},
                  {"grad_rel_norm", r.grad_rel_norm},
                  {"quant_err_rel", r.quant_err_rel},
                  {"lr", r.lr},
                  {"event", r.event}};
        f << j.dump() << "\n";
    }
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const SeedOverride& seeds) {
    KeyValueConfig kv = KeyValueConfig::parse_file(config_path);
    ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
    seeds.apply(cfg.train);
    fs::create_directories(out_dir);

    TrainResult res = run_training(cfg);
    write_metrics_jsonl(res.metrics, out_dir + "/metrics.jsonl");

    Checkpoint ckpt;
    ckpt.model = cfg.model;
    ckpt.train = cfg.train;
    ckpt.params = std::move(res.params);
    ckpt.opt = std::move(res.opt);
    save_checkpoint(ckpt, out_dir + "/checkpoint.winq");

    json extra = {{"param_count", ckpt.params.size()},
                  {"seeds",
                   {{"init", cfg.train.seed_init},
                    {"data", cfg.train.seed_data},
                    {"noise", cfg.train.seed_noise}}},
                  {"diverged", res.metrics.diverged}};
    if (res.metrics.diverged) extra["diverged_at"] = res.metrics.diverged_at;
    write_manifest(out_dir, "train", kv.text(), {"metrics.jsonl", "checkpoint.winq"}, extra);

    if (res.metrics.diverged) {
        std::fprintf(stderr, "training diverged at step %d (loss > 10x initial for 100 steps)\n",
                     res.metrics.diverged_at);
        return kStatusDiverged;
    }
    return kStatusOk;
}

int cmd_spectrum(const std::string& checkpoint_path, const std::string& config_path,
                 const std::string& out_dir, std::optional<std::uint64_t> seed_override,
                 std::optional<double> tau_override) {
    KeyValueConfig kv = KeyValueConfig::parse_file(config_path);
    ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
    if (seed_override) cfg.spectrum.seed = *seed_override;
    if (tau_override) cfg.spectrum.tau = *tau_override;
    cfg.spectrum.validate();

    Checkpoint ckpt;
    try {
        ckpt = load_checkpoint(checkpoint_path);
    } catch (const IoError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kStatusBadCheckpoint;
    }
    fs::create_directories(out_dir);

    SpectrumSetup setup = spectrum_setup(ckpt, cfg.spectrum, cfg.corpus_length, cfg.corpus_branch);
    QuantLayout layout = ckpt.layout();
    LinOp op = ste_hessian_operator(setup.graph, ckpt.params, setup.batch, layout,
                                    ckpt.train.hadamard);
    if (cfg.spectrum.subset != "all")
        op = masked_operator(std::move(op), subset_mask(ckpt.params, cfg.spectrum.subset));

    SpectrumEstimate est = slq_estimate(op, cfg.spectrum.probes, cfg.spectrum.lanczos_steps,
                                        cfg.spectrum.seed);
    SpectrumStats st = spectrum_stats(est, cfg.spectrum.tau);

    write_spectrum_csv(est, out_dir + "/spectrum.csv");
    write_text(out_dir + "/stats.json", stats_record(st, cfg.spectrum).dump(2) + "\n");
    write_manifest(out_dir, "spectrum", kv.text(), {"spectrum.csv", "stats.json"},
                   {{"checkpoint", checkpoint_path}});
    return kStatusOk;
}

int cmd_sweep(const std::string& checkpoint_path, const std::string& config_path,
              const std::string& out_dir, std::vector<double> alphas, bool refit_grids) {
    KeyValueConfig kv = KeyValueConfig::parse_file(config_path);
    ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
    if (alphas.empty()) alphas = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};

    Checkpoint ckpt;
    try {
        ckpt = load_checkpoint(checkpoint_path);
    } catch (const IoError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kStatusBadCheckpoint;
    }
    fs::create_directories(out_dir);

    SpectrumSetup setup = spectrum_setup(ckpt, cfg.spectrum, cfg.corpus_length, cfg.corpus_branch);
    QuantLayout layout = ckpt.layout();
    SweepResult sweep = interpolation_curvature_sweep(setup.graph, ckpt.params, setup.batch,
                                                      layout, std::move(alphas), cfg.spectrum,
                                                      refit_grids);
    write_sweep_csv(sweep, out_dir + "/sweep.csv");
    write_manifest(out_dir, "sweep", kv.text(), {"sweep.csv"},
                   {{"checkpoint", checkpoint_path}, {"refit_grids", refit_grids}});
    return kStatusOk;
}

int cmd_compare(const std::string& config_baseline, const std::string& config_winq,
                const std::string& out_dir, std::optional<double> target_loss) {
    KeyValueConfig kv_a = KeyValueConfig::parse_file(config_baseline);
    KeyValueConfig kv_b = KeyValueConfig::parse_file(config_winq);
    ExperimentConfig a = ExperimentConfig::from_kv(kv_a);
    ExperimentConfig b = ExperimentConfig::from_kv(kv_b);

    if (to_json(a.model) != to_json(b.model))
        throw ConfigError("cmd_compare: model configs differ; comparison would be unfair");
    if (a.train.seed_init != b.train.seed_init || a.train.seed_data != b.train.seed_data)
        throw ConfigError("cmd_compare: init/data seeds differ; comparison would be unfair");
    json ta = to_json(a.train), tb = to_json(b.train);
    for (const char* key : {"sigma", "alpha", "reinit_interval"}) {
        ta.erase(key);
        tb.erase(key);
    }
    if (ta != tb)
        throw ConfigError(
            "cmd_compare: configs may differ only in sigma, alpha and reinit_interval");

    fs::create_directories(out_dir);
    TrainResult base = run_training(a);
    TrainResult winq = run_training(b);

    std::vector<double> smooth_base = smoothed_loss(base.metrics);
    std::vector<double> smooth_winq = smoothed_loss(winq.metrics);
    double target = target_loss ? *target_loss : smooth_base.back();

    std::optional<int> steps_base = steps_to_loss(base.metrics, target);
    std::optional<int> steps_winq = steps_to_loss(winq.metrics, target);

    json rec;
    rec["target_loss"] = target;
    rec["target_source"] = target_loss ? "explicit" : "baseline_final_smoothed";
    rec["baseline"] = {{"steps_to_target", steps_base ? json(*steps_base) : json(nullptr)},
                       {"reached", steps_base.has_value()},
                       {"final_smoothed_loss", smooth_base.back()},
                       {"total_steps", a.train.steps}};
    rec["winq"] = {{"steps_to_target", steps_winq ? json(*steps_winq) : json(nullptr)},
                   {"reached", steps_winq.has_value()},
                   {"final_smoothed_loss", smooth_winq.back()},
                   {"total_steps", b.train.steps}};
    if (steps_base && steps_winq)
        rec["speedup"] = static_cast<double>(*steps_base) / static_cast<double>(*steps_winq);
    else
        rec["speedup"] = nullptr;

    write_metrics_jsonl(base.metrics, out_dir + "/metrics_baseline.jsonl");
    write_metrics_jsonl(winq.metrics, out_dir + "/metrics_winq.jsonl");
    write_text(out_dir + "/comparison.json", rec.dump(2) + "\n");
    write_manifest(out_dir, "compare", kv_a.text() + "\n---\n" + kv_b.text(),
                   {"metrics_baseline.jsonl", "metrics_winq.jsonl", "comparison.json"});

    std::printf("baseline steps: %s, treatment steps: %s, speedup: %s\n",
                steps_base ? std::to_string(*steps_base).c_str() : "unreached",
                steps_winq ? std::to_string(*steps_winq).c_str() : "unreached",
                rec["speedup"].is_null() ? "undefined" : rec["speedup"].dump().c_str());
    return kStatusOk;
}

// ---------------------------------------------------------------------------
// cmd_verify: the invariant suite.
// ---------------------------------------------------------------------------

namespace {

double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({1e-6, std::fabs(a), std::fabs(b)});
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
    return m;
}

ModelConfig verify_transformer_config() {
    ModelConfig c;
    c.family = ModelFamily::TinyTransformer;
    c.layers = 1;
    c.d_model = 8;
    c.heads = 2;
    c.vocab = 8;
    c.context_length = 8;
    c.batch_size = 2;
    return c;
}

ModelConfig verify_mlp_config() {
    ModelConfig c;
    c.family = ModelFamily::Mlp;
    c.d_model = 8;
    c.mlp_hidden = 16;
    c.vocab = 8;
    c.context_length = 4;
    c.batch_size = 4;
    return c;
}

struct Fixture {
    BuiltModel model;
    SyntheticCorpus corpus;
    Batch batch;
};

Fixture make_fixture(const ModelConfig& cfg, std::uint64_t seed) {
    Fixture f{build_model(cfg, seed), generate_corpus(seed + 17, cfg.vocab, 4000, 4), {}};
    BatchSampler sampler(f.corpus, cfg.context_length, cfg.batch_size, seed + 23);
    f.batch = sampler.next();
    return f;
}

using CheckFn = std::function<std::string()>;  // empty = pass, else detail

std::string check_gradient() {
    for (auto cfg : {verify_transformer_config(), verify_mlp_config()}) {
        Fixture f = make_fixture(cfg, 11);
        GradResult gr = backward_grad(f.model.graph, f.model.params, f.batch);
        ParamVector probe = f.model.params;
        auto fn = [&](const std::vector<double>& x) {
            probe.data() = x;
            return forward_eval(f.model.graph, probe, f.batch);
        };
        std::vector<double> fd = finite_diff_grad(fn, f.model.params.data(), 1e-5);
        double e = max_rel_err(gr.grad, fd);
        if (e > 1e-4)
            return std::string(model_family_name(cfg.family)) + " gradient error " +
                   std::to_string(e);
    }
    return {};
}

std::string check_hvp_symmetry() {
    Fixture f = make_fixture(verify_mlp_config(), 5);
    SplitRng rng(99, "verify-hvp");
    std::size_t n = f.model.params.size();
    std::vector<double> u(n), v(n);
    for (auto& x : u) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    std::vector<double> hu = hvp(f.model.graph, f.model.params, f.batch, u);
    std::vector<double> hv = hvp(f.model.graph, f.model.params, f.batch, v);
    double scale = std::max({1.0, l2_norm(hu) / l2_norm(u), l2_norm(hv) / l2_norm(v)});
    double gap = std::fabs(dot(v, hu) - dot(u, hv));
    double bound = 1e-8 * l2_norm(u) * l2_norm(v) * scale;
    if (gap > bound) return "asymmetry " + std::to_string(gap) + " > " + std::to_string(bound);
    return {};
}

std::string check_hvp_vs_dense() {
    Fixture f = make_fixture(verify_mlp_config(), 7);
    LinOp op = hessian_operator(f.model.graph, f.model.params, f.batch);
    DenseHessianResult dense = dense_hessian_oracle(op);
    std::size_t n = op.dim;
    SplitRng rng(3, "verify-dense");
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    std::vector<double> hv = hvp(f.model.graph, f.model.params, f.batch, v);
    std::vector<double> ref(n, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) ref[r] += dense.matrix[r * n + c] * v[c];
    double e = 0.0;
    double hn = std::max(l2_norm(hv), 1e-12);
    for (std::size_t i = 0; i < n; ++i) e = std::max(e, std::fabs(hv[i] - ref[i]) / hn);
    if (e > 1e-6) return "hvp vs dense error " + std::to_string(e);
    if (dense.asymmetry > 1e-6) return "asymmetry " + std::to_string(dense.asymmetry);
    return {};
}

std::string check_hvp_fd_consistency() {
    Fixture f = make_fixture(verify_mlp_config(), 13);
    std::size_t n = f.model.params.size();
    SplitRng rng(4, "verify-fd");
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    double nv = l2_norm(v);
    for (auto& x : v) x /= nv;
    std::vector<double> exact = hvp(f.model.graph, f.model.params, f.batch, v);
    std::vector<double> approx = hvp_fd(f.model.graph, f.model.params, f.batch, v, 1e-4);
    double num = 0.0;
    for (std::size_t i = 0; i < n; ++i) num += (exact[i] - approx[i]) * (exact[i] - approx[i]);
    double e = std::sqrt(num) / std::max(l2_norm(exact), 1e-12);
    if (e > 1e-4) return "hvp vs fd-of-gradients error " + std::to_string(e);
    return {};
}

std::string check_slq_exact_cases() {
    LinOp ident{8, [](const double* v, double* o) { std::copy(v, v + 8, o); }, "identity"};
    SpectrumEstimate est = slq_estimate(ident, 4, 4, 1);
    double mass = 0.0;
    for (auto& nd : est.nodes) {
        if (nd.weight > 0 && std::fabs(nd.theta - 1.0) > 1e-12)
            return "identity node off by " + std::to_string(nd.theta - 1.0);
        mass += nd.weight;
    }
    if (std::fabs(mass - 1.0) > 1e-9) return "identity mass " + std::to_string(mass);
    LinOp zero{8, [](const double*, double* o) { std::fill(o, o + 8, 0.0); }, "zero"};
    est = slq_estimate(zero, 4, 4, 2);
    SpectrumStats st = spectrum_stats(est, 1e-6);
    if (st.near_zero_mass < 1.0 - 1e-9) return "zero operator near-zero mass " +
                                               std::to_string(st.near_zero_mass);
    return {};
}

std::string check_slq_vs_oracle() {
    constexpr int d = 120;
    std::vector<double> diag(d);
    for (int i = 0; i < d; ++i) diag[static_cast<std::size_t>(i)] = -2.0 + 5.0 * i / (d - 1.0);
    LinOp op{static_cast<std::size_t>(d),
             [diag](const double* v, double* o) {
                 for (int i = 0; i < d; ++i)
                     o[static_cast<std::size_t>(i)] = diag[static_cast<std::size_t>(i)] *
                                                      v[static_cast<std::size_t>(i)];
             },
             "diag"};
    SpectrumEstimate est = slq_estimate(op, 50, 30, 12);
    for (int p = 1; p <= 3; ++p) {
        double truth = 0.0;
        for (double x : diag) truth += std::pow(x, p) / d;
        double got = spectral_moment(est, p);
        if (rel_err(got, truth) > 0.05)
            return "moment p=" + std::to_string(p) + " error " +
                   std::to_string(rel_err(got, truth));
    }
    SpectrumStats st = spectrum_stats(est, 1e-3);
    if (rel_err(st.max_abs, 3.0) > 0.05) return "max_abs error " + std::to_string(st.max_abs);
    return {};
}

std::string check_quantizer_contracts() {
    SplitRng rng(21, "verify-quant");
    std::vector<QuantizerSpec> specs = {
        {QuantKind::SymmetricMinMax, 2}, {QuantKind::SymmetricMinMax, 4},
        {QuantKind::AsymmetricMinMax, 3}, {QuantKind::LearnableStep, 3},
        {QuantKind::Binary, 1},          {QuantKind::Ternary, 2}};
    for (const auto& spec : specs) {
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<double> w(64);
            for (auto& x : w) x = rng.normal();
            QuantGrid grid = make_grid(w, {8, 8}, spec);
            std::vector<double> q = quantize(w, grid);
            std::vector<double> qq = quantize(q, grid);
            if (qq != q) return std::string("idempotence failed for ") + quant_kind_name(spec.kind);
            std::set<double> levels(q.begin(), q.end());
            if (levels.size() > (1u << spec.bits))
                return std::string("level count ") + std::to_string(levels.size()) + " for " +
                       quant_kind_name(spec.kind);
            double lo = grid.a[0] * grid.v_neg + grid.b[0];
            double hi = grid.a[0] * grid.v_pos + grid.b[0];
            for (double x : q)
                if (x < lo || x > hi) return "range violation";
        }
    }
    return {};
}

std::string check_ste_on_grid() {
    Fixture f = make_fixture(verify_mlp_config(), 31);
    ParamVector params = f.model.params;
    QuantLayout layout = QuantLayout::attach(params, 3);
    // Snap quantized tensors onto their grids; grids are stable at on-grid
    // points because the abs-max coordinate is itself representable.
    for (std::size_t t = 0; t < layout.tensor_entry.size(); ++t) {
        const auto& e = params.entry(layout.tensor_entry[t]);
        auto grids = layout.grids_at(params);
        auto w = params.slice(e);
        std::vector<double> q = quantize(w, grids[t]);
        std::copy(q.begin(), q.end(), w.begin());
    }
    EffectiveQuant eq = quantize_params(params, layout, false);
    GradResult quant_grad = backward_grad(f.model.graph, eq.eff, f.batch);
    std::vector<double> latent =
        ste_latent_gradient(quant_grad.grad, params, layout, eq, false);
    GradResult full = backward_grad(f.model.graph, params, f.batch);
    // Compare on weight coordinates (step entries exist only on the STE side).
    for (const auto& e : params.entries()) {
        if (e.step_size) continue;
        for (std::size_t i = e.offset; i < e.offset + e.length; ++i)
            if (rel_err(latent[i], full.grad[i]) > 1e-10 &&
                std::fabs(latent[i] - full.grad[i]) > 1e-12)
                return "on-grid STE gradient mismatch at " + e.name;
    }
    return {};
}

std::string check_hadamard_involution() {
    SplitRng rng(8, "verify-hadamard");
    HadamardContext ctx = HadamardContext::from_dims({1, 2, 8, 32});
    std::vector<double> x(ctx.total_dim());
    for (auto& v : x) v = rng.normal();
    std::vector<double> y = fwht(x, ctx);
    if (rel_err(l2_norm(y), l2_norm(x)) > 1e-12) return "norm not preserved";
    std::vector<double> z = fwht(y, ctx);
    for (std::size_t i = 0; i < x.size(); ++i)
        if (std::fabs(z[i] - x[i]) > 1e-12) return "involution failed";
    return {};
}

std::string check_hadamard_dense() {
    SplitRng rng(9, "verify-hadamard-dense");
    for (int d : {1, 2, 4, 8, 16, 32}) {
        // Explicit normalized Hadamard by Sylvester doubling.
        std::vector<double> H(static_cast<std::size_t>(d) * d, 1.0);
        for (int h = 1; h < d; h <<= 1)
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < h; ++c) {
                    double v = H[static_cast<std::size_t>(r) * d + c];
                    H[static_cast<std::size_t>(r) * d + (c + h)] = v;
                    H[static_cast<std::size_t>(r + h) * d + c] = v;
                    H[static_cast<std::size_t>(r + h) * d + (c + h)] = -v;
                }
        double norm = 1.0 / std::sqrt(static_cast<double>(d));
        std::vector<double> x(static_cast<std::size_t>(d));
        for (auto& v : x) v = rng.normal();
        std::vector<double> ref(static_cast<std::size_t>(d), 0.0);
        for (int r = 0; r < d; ++r)
            for (int c = 0; c < d; ++c)
                ref[static_cast<std::size_t>(r)] +=
                    norm * H[static_cast<std::size_t>(r) * d + c] * x[static_cast<std::size_t>(c)];
        std::vector<double> got = x;
        fwht_block(got);
        for (int i = 0; i < d; ++i)
            if (std::fabs(got[static_cast<std::size_t>(i)] - ref[static_cast<std::size_t>(i)]) >
                1e-12)
                return "fwht vs dense mismatch at d=" + std::to_string(d);
    }
    return {};
}

std::string check_prox_identity() {
    SplitRng rng(41, "verify-prox");
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> w(32);
        for (auto& x : w) x = rng.normal();
        QuantGrid grid = make_grid(w, {32}, {QuantKind::SymmetricMinMax, 3});
        double eta = 0.01 + rng.uniform01();
        double alpha = 0.999 * rng.uniform01();
        ProxEquivalenceReport rep2 = verify_prox_equivalence(w, grid, eta, alpha);
        if (!rep2.ok) return "prox deviation " + std::to_string(rep2.max_deviation);
    }
    return {};
}

std::string check_alpha_gamma_roundtrip() {
    SplitRng rng(42, "verify-roundtrip");
    for (int rep = 0; rep < 1000; ++rep) {
        double eta = 1e-4 + rng.uniform01();
        double gamma = rng.uniform01() * 100.0;
        double back = gamma_from_alpha(eta, alpha_gamma_map(eta, gamma));
        if (gamma > 0 && rel_err(back, gamma) > 1e-12)
            return "roundtrip error " + std::to_string(rel_err(back, gamma));
        if (gamma == 0 && back != 0) return "gamma=0 roundtrip";
    }
    return {};
}

std::string check_hessian_shift() {
    Fixture f = make_fixture(verify_mlp_config(), 55);
    ParamVector params = f.model.params;
    QuantLayout layout = QuantLayout::attach(params, 2);
    HessianShiftReport rep =
        verify_hessian_shift(f.model.graph, params, f.batch, layout, 0.5);
    if (!rep.ok)
        return "diag err " + std::to_string(rep.max_penalty_diag_err) + ", eig err " +
               std::to_string(rep.max_eigen_shift_err);
    return {};
}

std::string check_reinit_contraction() {
    Fixture f = make_fixture(verify_transformer_config(), 77);
    ParamVector params = f.model.params;
    QuantLayout layout = QuantLayout::attach(params, 2);
    auto grids = layout.grids_at(params);  // frozen
    auto dist = [&](const ParamVector& p) {
        double s = 0.0;
        std::vector<double> q;
        for (std::size_t t = 0; t < layout.tensor_entry.size(); ++t) {
            const auto& e = p.entry(layout.tensor_entry[t]);
            auto w = p.slice(e);
            q.resize(w.size());
            quantize(w, grids[t], q);
            for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] - q[i]) * (w[i] - q[i]);
        }
        return std::sqrt(s);
    };
    double before = dist(params);
    double alpha = 0.4;
    reinit_interpolate(params, alpha, layout);
    double after = dist(params);
    if (rel_err(after, (1.0 - alpha) * before) > 1e-10)
        return "contraction " + std::to_string(after / before) + " expected " +
               std::to_string(1.0 - alpha);
    return {};
}

TrainConfig short_train_config(int steps, double sigma, double alpha) {
    TrainConfig t;
    t.steps = steps;
    t.eta = 1e-3;
    t.reinit_interval = std::max(1, steps / 4);
    t.alpha = alpha;
    t.sigma = sigma;
    t.weight_bits = 2;
    t.pretrain_steps = 0;
    return t;
}

// Minimal straight-through loop used as the reduction reference.
ParamVector reference_ste_loop(const BuiltModel& model, const SyntheticCorpus& corpus,
                               const TrainConfig& cfg) {
    ParamVector params = model.params;
    QuantLayout layout = QuantLayout::attach(params, cfg.weight_bits);
    int context = 0, rows = 0;
    for (const auto& nd : model.graph.nodes())
        if (nd.kind == OpKind::Tokens && nd.name == "tokens.input") {
            rows = nd.shape[0];
            context = nd.shape.back();
        }
    BatchSampler sampler(corpus, context, rows, cfg.seed_data);
    OptimizerState opt(params.size());
    std::vector<unsigned char> decay(params.size(), 1);
    for (const auto& e : params.entries())
        if (e.step_size)
            std::fill(decay.begin() + static_cast<std::ptrdiff_t>(e.offset),
                      decay.begin() + static_cast<std::ptrdiff_t>(e.offset + e.length),
                      static_cast<unsigned char>(0));
    EvalOptions opts;
    opts.activation_bits = cfg.activation_bits;
    for (int i = 0; i < cfg.steps; ++i) {
        Batch b = sampler.next();
        EffectiveQuant eq = quantize_params(params, layout, false);
        GradResult gr = backward_grad(model.graph, eq.eff, b, opts);
        std::vector<double> g = ste_latent_gradient(gr.grad, params, layout, eq, false);
        adamw_step(opt, params.data(), g, cfg.adamw(cfg.lr_at(i)), decay);
    }
    return params;
}

std::string check_baseline_reduction() {
    ModelConfig mc = verify_transformer_config();
    BuiltModel model = build_model(mc, 3);
    SyntheticCorpus corpus = generate_corpus(2, mc.vocab, 4000, 4);
    TrainConfig cfg = short_train_config(150, 0.0, 0.0);
    TrainResult res = winq_train(model, corpus, cfg);
    ParamVector ref = reference_ste_loop(model, corpus, cfg);
    if (res.params.data() != ref.data()) return "trajectories differ";
    return {};
}

std::string check_optimizer_state_across_reinit() {
    ModelConfig mc = verify_transformer_config();
    BuiltModel model = build_model(mc, 3);
    SyntheticCorpus corpus = generate_corpus(2, mc.vocab, 4000, 4);
    TrainConfig cfg = short_train_config(40, 0.0, 0.4);
    cfg.reinit_interval = 20;
    std::vector<std::vector<double>> before_m, after_m, before_v, after_v;
    std::vector<std::int64_t> before_t, after_t;
    TrainHooks hooks;
    hooks.before_reinit = [&](const ParamVector&, const OptimizerState& o, const QuantLayout&,
                              int) {
        before_m.push_back(o.m);
        before_v.push_back(o.v);
        before_t.push_back(o.step);
    };
    hooks.after_reinit = [&](const ParamVector&, const OptimizerState& o, const QuantLayout&,
                             int) {
        after_m.push_back(o.m);
        after_v.push_back(o.v);
        after_t.push_back(o.step);
    };
    winq_train(model, corpus, cfg, &hooks);
    if (before_m.empty()) return "no reinit events observed";
    if (before_m != after_m || before_v != after_v || before_t != after_t)
        return "optimizer state changed across a reinit";
    return {};
}

std::string check_rng_stream_separation() {
    ModelConfig mc = verify_transformer_config();
    BuiltModel model = build_model(mc, 3);
    SyntheticCorpus corpus = generate_corpus(2, mc.vocab, 4000, 4);
    TrainConfig cfg = short_train_config(60, 0.0, 0.0);
    cfg.seed_noise = 1;
    TrainResult a = winq_train(model, corpus, cfg);
    cfg.seed_noise = 999;
    TrainResult b = winq_train(model, corpus, cfg);
    if (a.params.data() != b.params.data()) return "noise seed leaked into sigma=0 run";
    return {};
}

std::string check_checkpoint_roundtrip() {
    ModelConfig mc = verify_mlp_config();
    BuiltModel model = build_model(mc, 3);
    Checkpoint ck;
    ck.model = mc;
    ck.train = short_train_config(10, 0.0, 0.0);
    ck.params = model.params;
    ck.opt = OptimizerState(model.params.size());
    SplitRng rng(5, "verify-ckpt");
    for (auto& x : ck.opt.m) x = rng.normal();
    for (auto& x : ck.opt.v) x = std::fabs(rng.normal());
    ck.opt.step = 12345;
    std::string path = (fs::temp_directory_path() / "winq_verify_ckpt.winq").string();
    save_checkpoint(ck, path);
    Checkpoint back = load_checkpoint(path);
    fs::remove(path);
    if (back.params.data() != ck.params.data() || back.opt.m != ck.opt.m ||
        back.opt.v != ck.opt.v || back.opt.step != ck.opt.step)
        return "round trip not bit-exact";
    return {};
}

}  // namespace

int cmd_verify() {
    std::vector<std::pair<const char*, CheckFn>> checks = {
        {"gradient_check", check_gradient},
        {"hvp_symmetry", check_hvp_symmetry},
        {"hvp_vs_dense_oracle", check_hvp_vs_dense},
        {"hvp_fd_consistency", check_hvp_fd_consistency},
        {"slq_exact_cases", check_slq_exact_cases},
        {"slq_vs_dense_oracle", check_slq_vs_oracle},
        {"quantizer_contracts", check_quantizer_contracts},
        {"ste_on_grid_gradient", check_ste_on_grid},
        {"hadamard_involution", check_hadamard_involution},
        {"hadamard_dense_equivalence", check_hadamard_dense},
        {"prox_interpolation_identity", check_prox_identity},
        {"alpha_gamma_roundtrip", check_alpha_gamma_roundtrip},
        {"hessian_shift_identity", check_hessian_shift},
        {"reinit_contraction", check_reinit_contraction},
        {"baseline_reduction", check_baseline_reduction},
        {"optimizer_state_across_reinit", check_optimizer_state_across_reinit},
        {"rng_stream_separation", check_rng_stream_separation},
        {"checkpoint_roundtrip", check_checkpoint_roundtrip},
    };
    int failures = 0;
    for (auto& [name, fn] : checks) {
        std::string detail;
        try {
            detail = fn();
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        if (detail.empty()) {
            std::printf("PASS %s\n", name);
        } else {
            std::printf("FAIL %s: %s\n", name, detail.c_str());
            ++failures;
        }
    }
    std::printf("%d/%zu invariants passed\n", static_cast<int>(checks.size()) - failures,
                checks.size());
    return failures == 0 ? kStatusOk : kStatusError;
}

}  // namespace winq
