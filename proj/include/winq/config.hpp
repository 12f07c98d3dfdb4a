#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "winq/model.hpp"
#include "winq/train.hpp"

namespace winq {

// Flat INI-style key-value configuration: [section] headers, key = value
// lines, '#' or ';' comments. Keys are addressed as "section.key".
class KeyValueConfig {
public:
    static KeyValueConfig parse_file(const std::string& path);
    static KeyValueConfig parse_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& get(const std::string& key) const;  // ConfigError naming the key
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    int get_int_or(const std::string& key, int fallback) const;
    std::uint64_t get_u64_or(const std::string& key, std::uint64_t fallback) const;
    bool get_bool_or(const std::string& key, bool fallback) const;

    const std::string& text() const { return text_; }
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    std::string text_;
};

struct SpectrumConfig {
    int probes = 50;         // m
    int lanczos_steps = 40;  // k
    double tau = 1e-3;
    std::size_t tokens = 4096;  // fixed Hessian batch size
    std::uint64_t seed = 7;
    std::string subset = "all";  // all | quantized | embedding

    void validate() const;
};

struct ExperimentConfig {
    ModelConfig model;
    TrainConfig train;
    SpectrumConfig spectrum;
    std::size_t corpus_length = 100000;
    int corpus_branch = 4;

    // Required keys: train.eta, train.steps, train.weight_bits.
    static ExperimentConfig from_kv(const KeyValueConfig& kv);
    static ExperimentConfig from_file(const std::string& path);
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const SpectrumConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
SpectrumConfig spectrum_config_from_json(const nlohmann::json& j);

std::uint64_t file_digest(const std::string& path);
std::string digest_hex(std::uint64_t digest);

}  // namespace winq
