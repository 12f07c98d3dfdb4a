#include "winq/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "winq/errors.hpp"
#include "winq/rng.hpp"

namespace winq {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_string(const std::string& text) {
    KeyValueConfig kv;
    kv.text_ = text;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        std::string full = section.empty() ? key : section + "." + key;
        kv.values_[full] = value;
    }
    return kv;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str());
}

const std::string& KeyValueConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config is missing required key \"" + key + "\"");
    return it->second;
}

std::string KeyValueConfig::get_or(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key) const {
    const std::string& s = get(key);
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key \"" + key + "\" is not a number: " + s);
    }
}

double KeyValueConfig::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

int KeyValueConfig::get_int_or(const std::string& key, int fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = get(key);
    try {
        std::size_t pos = 0;
        int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key \"" + key + "\" is not an integer: " + s);
    }
}

std::uint64_t KeyValueConfig::get_u64_or(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = get(key);
    try {
        std::size_t pos = 0;
        std::uint64_t v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key \"" + key + "\" is not an integer: " + s);
    }
}

bool KeyValueConfig::get_bool_or(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = get(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config key \"" + key + "\" is not a boolean: " + s);
}

void SpectrumConfig::validate() const {
    if (probes < 1 || lanczos_steps < 1)
        throw ConfigError("spectrum: probes and lanczos_steps must be >= 1");
    if (tau <= 0.0) throw ConfigError("spectrum: tau must be positive");
    if (subset != "all" && subset != "quantized" && subset != "embedding")
        throw ConfigError("spectrum: subset must be all, quantized or embedding");
}

ExperimentConfig ExperimentConfig::from_kv(const KeyValueConfig& kv) {
    ExperimentConfig c;

    c.model.family = model_family_from_name(kv.get_or("model.family", "tiny_transformer"));
    c.model.layers = kv.get_int_or("model.layers", 2);
    c.model.d_model = kv.get_int_or("model.d_model", 32);
    c.model.heads = kv.get_int_or("model.heads", 4);
    c.model.vocab = kv.get_int_or("model.vocab", 64);
    c.model.context_length = kv.get_int_or("model.context_length", 64);
    c.model.batch_size = kv.get_int_or("model.batch_size", 32);
    c.model.mlp_hidden = kv.get_int_or("model.mlp_hidden", 16);

    c.train.eta = kv.get_double("train.eta");
    c.train.steps = static_cast<int>(kv.get_double("train.steps"));
    c.train.weight_bits = static_cast<int>(kv.get_double("train.weight_bits"));
    c.train.reinit_interval = kv.get_int_or("train.reinit_interval",
                                            std::max(1, c.train.steps / 4));
    c.train.alpha = kv.get_double_or("train.alpha", 0.4);
    c.train.sigma = kv.get_double_or("train.sigma", 1e-3);
    c.train.activation_bits = kv.get_int_or("train.activation_bits", 16);
    c.train.beta1 = kv.get_double_or("train.beta1", 0.9);
    c.train.beta2 = kv.get_double_or("train.beta2", 0.999);
    c.train.eps_adam = kv.get_double_or("train.eps_adam", 1e-8);
    c.train.weight_decay = kv.get_double_or("train.weight_decay", 0.0);
    c.train.seed_init = kv.get_u64_or("seeds.init", 1);
    c.train.seed_data = kv.get_u64_or("seeds.data", 2);
    c.train.seed_noise = kv.get_u64_or("seeds.noise", 3);
    c.train.hadamard = kv.get_bool_or("train.hadamard", false);
    c.train.warmup_steps = kv.get_int_or("train.warmup_steps", 0);
    c.train.pretrain_steps = kv.get_int_or("train.pretrain_steps", 2000);
    c.train.grad_clip_norm = kv.get_double_or("train.grad_clip_norm", 0.0);
    c.train.decay_step_sizes = kv.get_bool_or("train.decay_step_sizes", false);
    c.train.ste_passthrough_everywhere =
        kv.get_bool_or("train.ste_passthrough_everywhere", false);

    c.spectrum.probes = kv.get_int_or("spectrum.probes", 50);
    c.spectrum.lanczos_steps = kv.get_int_or("spectrum.lanczos_steps", 40);
    c.spectrum.tau = kv.get_double_or("spectrum.tau", 1e-3);
    c.spectrum.tokens = static_cast<std::size_t>(kv.get_int_or("spectrum.tokens", 4096));
    c.spectrum.seed = kv.get_u64_or("spectrum.seed", 7);
    c.spectrum.subset = kv.get_or("spectrum.subset", "all");

    c.corpus_length = static_cast<std::size_t>(kv.get_int_or("corpus.length", 100000));
    c.corpus_branch = kv.get_int_or("corpus.branch", 4);

    c.model.validate();
    c.train.validate();
    c.spectrum.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    return from_kv(KeyValueConfig::parse_file(path));
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"family", model_family_name(c.family)},
            {"layers", c.layers},
            {"d_model", c.d_model},
            {"heads", c.heads},
            {"vocab", c.vocab},
            {"context_length", c.context_length},
            {"batch_size", c.batch_size},
            {"mlp_hidden", c.mlp_hidden}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.family = model_family_from_name(j.at("family").get<std::string>());
    c.layers = j.at("layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.heads = j.at("heads").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.context_length = j.at("context_length").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    return c;
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"steps", c.steps},
            {"eta", c.eta},
            {"reinit_interval", c.reinit_interval},
            {"alpha", c.alpha},
            {"sigma", c.sigma},
            {"weight_bits", c.weight_bits},
            {"activation_bits", c.activation_bits},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps_adam", c.eps_adam},
            {"weight_decay", c.weight_decay},
            {"seed_init", c.seed_init},
            {"seed_data", c.seed_data},
            {"seed_noise", c.seed_noise},
            {"hadamard", c.hadamard},
            {"warmup_steps", c.warmup_steps},
            {"pretrain_steps", c.pretrain_steps},
            {"grad_clip_norm", c.grad_clip_norm},
            {"decay_step_sizes", c.decay_step_sizes},
            {"ste_passthrough_everywhere", c.ste_passthrough_everywhere}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.steps = j.at("steps").get<int>();
    c.eta = j.at("eta").get<double>();
    c.reinit_interval = j.at("reinit_interval").get<int>();
    c.alpha = j.at("alpha").get<double>();
    c.sigma = j.at("sigma").get<double>();
    c.weight_bits = j.at("weight_bits").get<int>();
    c.activation_bits = j.at("activation_bits").get<int>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps_adam = j.at("eps_adam").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.seed_init = j.at("seed_init").get<std::uint64_t>();
    c.seed_data = j.at("seed_data").get<std::uint64_t>();
    c.seed_noise = j.at("seed_noise").get<std::uint64_t>();
    c.hadamard = j.at("hadamard").get<bool>();
    c.warmup_steps = j.at("warmup_steps").get<int>();
    c.pretrain_steps = j.at("pretrain_steps").get<int>();
    c.grad_clip_norm = j.at("grad_clip_norm").get<double>();
    c.decay_step_sizes = j.at("decay_step_sizes").get<bool>();
    c.ste_passthrough_everywhere = j.at("ste_passthrough_everywhere").get<bool>();
    return c;
}

nlohmann::json to_json(const SpectrumConfig& c) {
    return {{"probes", c.probes},      {"lanczos_steps", c.lanczos_steps},
            {"tau", c.tau},            {"tokens", c.tokens},
            {"seed", c.seed},          {"subset", c.subset}};
}

SpectrumConfig spectrum_config_from_json(const nlohmann::json& j) {
    SpectrumConfig c;
    c.probes = j.at("probes").get<int>();
    c.lanczos_steps = j.at("lanczos_steps").get<int>();
    c.tau = j.at("tau").get<double>();
    c.tokens = j.at("tokens").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.subset = j.at("subset").get<std::string>();
    return c;
}

std::uint64_t file_digest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for digest: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    std::string bytes = ss.str();
    return fnv1a64_bytes(bytes.data(), bytes.size());
}

std::string digest_hex(std::uint64_t d) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d));
    return buf;
}

}  // namespace winq
