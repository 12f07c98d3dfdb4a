#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "winq/checkpoint.hpp"
#include "winq/config.hpp"
#include "winq/experiment.hpp"

using namespace winq;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << text;
}

const char* kTinyConfig = R"(
# toy run
[model]
family = tiny_transformer
layers = 1
d_model = 8
heads = 2
vocab = 8
context_length = 8
batch_size = 2

[train]
eta = 1e-3
steps = 40
weight_bits = 2
pretrain_steps = 0
alpha = 0.4
sigma = 0

[seeds]
init = 1
data = 2
noise = 3

[corpus]
length = 4000
)";

struct TempDir {
    fs::path path;
    TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_SUITE("config_io") {

TEST_CASE("key-value parsing with sections and comments") {
    KeyValueConfig kv = KeyValueConfig::parse_string(
        "top = 1\n[sec]\n# comment\nkey = hello world \n; also comment\nnum=2.5\n");
    CHECK(kv.get("top") == "1");
    CHECK(kv.get("sec.key") == "hello world");
    CHECK(kv.get_double("sec.num") == 2.5);
    CHECK(kv.get_or("sec.absent", "dflt") == "dflt");
    CHECK_THROWS_AS(KeyValueConfig::parse_string("[oops\nk=v\n"), ConfigError);
    CHECK_THROWS_AS(KeyValueConfig::parse_string("justaline\n"), ConfigError);
}

TEST_CASE("missing required key is reported by name") {
    KeyValueConfig kv = KeyValueConfig::parse_string("[train]\nsteps = 10\nweight_bits = 2\n");
    try {
        ExperimentConfig::from_kv(kv);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("eta") != std::string::npos);
    }
}

TEST_CASE("defaults follow the desk-run conventions") {
    KeyValueConfig kv = KeyValueConfig::parse_string(
        "[train]\neta = 1e-3\nsteps = 1000\nweight_bits = 2\n");
    ExperimentConfig c = ExperimentConfig::from_kv(kv);
    CHECK(c.train.reinit_interval == 250);  // K = T/4
    CHECK(c.train.alpha == 0.4);
    CHECK(c.train.sigma == 1e-3);
    CHECK(c.train.activation_bits == 16);
    CHECK(c.train.pretrain_steps == 2000);
    CHECK(c.model.context_length == 64);
    CHECK(c.model.batch_size == 32);
    CHECK(c.spectrum.probes == 50);
    CHECK(c.spectrum.lanczos_steps == 40);
    CHECK(c.spectrum.tau == 1e-3);
}

TEST_CASE("config json round-trips") {
    KeyValueConfig kv = KeyValueConfig::parse_string(kTinyConfig);
    ExperimentConfig c = ExperimentConfig::from_kv(kv);
    TrainConfig t2 = train_config_from_json(to_json(c.train));
    CHECK(to_json(t2) == to_json(c.train));
    ModelConfig m2 = model_config_from_json(to_json(c.model));
    CHECK(to_json(m2) == to_json(c.model));
    SpectrumConfig s2 = spectrum_config_from_json(to_json(c.spectrum));
    CHECK(to_json(s2) == to_json(c.spectrum));
}

TEST_CASE("cmd_train writes metrics, checkpoint and manifest; reruns are byte-identical") {
    TempDir dir("winq_cfg_test");
    spit(dir.file("cfg.ini"), kTinyConfig);
    REQUIRE(cmd_train(dir.file("cfg.ini"), dir.file("run1")) == kStatusOk);
    REQUIRE(cmd_train(dir.file("cfg.ini"), dir.file("run2")) == kStatusOk);
    CHECK(slurp(dir.file("run1") + "/metrics.jsonl") == slurp(dir.file("run2") + "/metrics.jsonl"));
    CHECK(slurp(dir.file("run1") + "/checkpoint.winq") ==
          slurp(dir.file("run2") + "/checkpoint.winq"));

    // Reinit events: floor(T / K) of them, at multiples of K.
    std::istringstream lines(slurp(dir.file("run1") + "/metrics.jsonl"));
    std::string line;
    int count = 0, reinits = 0;
    while (std::getline(lines, line)) {
        auto j = nlohmann::json::parse(line);
        ++count;
        if (j.at("event") == "reinit") {
            ++reinits;
            CHECK(j.at("step").get<int>() % 10 == 0);  // K defaults to T/4 = 10
        }
    }
    CHECK(count == 40);
    CHECK(reinits == 4);
}

TEST_CASE("manifest-driven rerun reproduces output digests") {
    TempDir dir("winq_manifest_test");
    spit(dir.file("cfg.ini"), kTinyConfig);
    REQUIRE(cmd_train(dir.file("cfg.ini"), dir.file("a")) == kStatusOk);
    auto manifest = nlohmann::json::parse(slurp(dir.file("a") + "/manifest.json"));
    spit(dir.file("replay.ini"), manifest.at("config_text").get<std::string>());
    REQUIRE(cmd_train(dir.file("replay.ini"), dir.file("b")) == kStatusOk);
    auto manifest_b = nlohmann::json::parse(slurp(dir.file("b") + "/manifest.json"));
    CHECK(manifest.at("outputs") == manifest_b.at("outputs"));
    CHECK(manifest.at("config_digest") == manifest_b.at("config_digest"));

    // Digests actually match the files on disk.
    for (const auto& out : manifest.at("outputs")) {
        std::string path = dir.file("a") + "/" + out.at("path").get<std::string>();
        CHECK(digest_hex(file_digest(path)) == out.at("digest").get<std::string>());
    }
}

TEST_CASE("cmd_spectrum rejects corrupt checkpoints with status 3") {
    TempDir dir("winq_corrupt_test");
    spit(dir.file("cfg.ini"), kTinyConfig);
    REQUIRE(cmd_train(dir.file("cfg.ini"), dir.file("run")) == kStatusOk);
    std::string ckpt = dir.file("run") + "/checkpoint.winq";
    std::string bytes = slurp(ckpt);
    bytes[bytes.size() / 2] ^= 0x01;
    spit(ckpt, bytes);
    CHECK(cmd_spectrum(ckpt, dir.file("cfg.ini"), dir.file("spec")) == kStatusBadCheckpoint);
}

TEST_CASE("cmd_spectrum emits a normalized csv and stats") {
    TempDir dir("winq_spec_cmd_test");
    std::string cfg = std::string(kTinyConfig) +
                      "\n[spectrum]\nprobes = 6\nlanczos_steps = 10\ntokens = 64\n";
    spit(dir.file("cfg.ini"), cfg);
    REQUIRE(cmd_train(dir.file("cfg.ini"), dir.file("run")) == kStatusOk);
    REQUIRE(cmd_spectrum(dir.file("run") + "/checkpoint.winq", dir.file("cfg.ini"),
                         dir.file("spec")) == kStatusOk);
    std::string csv = slurp(dir.file("spec") + "/spectrum.csv");
    CHECK(csv.rfind("theta,weight\n", 0) == 0);
    auto stats = nlohmann::json::parse(slurp(dir.file("spec") + "/stats.json"));
    double total = stats.at("near_zero_mass").get<double>() +
                   stats.at("negative_mass").get<double>() +
                   stats.at("positive_mass").get<double>();
    CHECK(std::fabs(total - 1.0) <= 1e-9);

    // Determinism: a second identical invocation produces identical bytes.
    REQUIRE(cmd_spectrum(dir.file("run") + "/checkpoint.winq", dir.file("cfg.ini"),
                         dir.file("spec2")) == kStatusOk);
    CHECK(slurp(dir.file("spec") + "/spectrum.csv") == slurp(dir.file("spec2") + "/spectrum.csv"));
}

TEST_CASE("cmd_sweep sorts alphas and emits the fixed header") {
    TempDir dir("winq_sweep_cmd_test");
    std::string cfg = std::string(kTinyConfig) +
                      "\n[spectrum]\nprobes = 4\nlanczos_steps = 8\ntokens = 64\n";
    spit(dir.file("cfg.ini"), cfg);
    REQUIRE(cmd_train(dir.file("cfg.ini"), dir.file("run")) == kStatusOk);
    REQUIRE(cmd_sweep(dir.file("run") + "/checkpoint.winq", dir.file("cfg.ini"),
                      dir.file("sweep"), {1.0, 0.0}) == kStatusOk);
    std::string csv = slurp(dir.file("sweep") + "/sweep.csv");
    CHECK(csv.rfind("alpha,max_abs_theta,near_zero_mass,loss\n", 0) == 0);
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    std::getline(lines, line);
    CHECK(line.rfind("0,", 0) == 0);
    std::getline(lines, line);
    CHECK(line.rfind("1,", 0) == 0);
    CHECK_FALSE(std::getline(lines, line));
}

TEST_CASE("cmd_compare of a config against itself reports ratio 1") {
    TempDir dir("winq_compare_test");
    spit(dir.file("cfg.ini"), kTinyConfig);
    REQUIRE(cmd_compare(dir.file("cfg.ini"), dir.file("cfg.ini"), dir.str()) == kStatusOk);
    auto rec = nlohmann::json::parse(slurp(dir.file("comparison.json")));
    CHECK(rec.at("speedup").get<double>() == 1.0);
    CHECK(rec.at("baseline").at("steps_to_target") == rec.at("winq").at("steps_to_target"));
}

TEST_CASE("cmd_compare refuses unfair comparisons") {
    TempDir dir("winq_compare_refuse");
    spit(dir.file("a.ini"), kTinyConfig);
    std::string changed_seed(kTinyConfig);
    auto pos = changed_seed.find("data = 2");
    changed_seed.replace(pos, 8, "data = 9");
    spit(dir.file("b.ini"), changed_seed);
    CHECK_THROWS_AS(cmd_compare(dir.file("a.ini"), dir.file("b.ini"), dir.str()), ConfigError);

    std::string changed_eta(kTinyConfig);
    pos = changed_eta.find("eta = 1e-3");
    changed_eta.replace(pos, 10, "eta = 2e-3");
    spit(dir.file("c.ini"), changed_eta);
    CHECK_THROWS_AS(cmd_compare(dir.file("a.ini"), dir.file("c.ini"), dir.str()), ConfigError);

    // Differing only in sigma/alpha/K is allowed.
    std::string winq_arm(kTinyConfig);
    pos = winq_arm.find("sigma = 0");
    winq_arm.replace(pos, 9, "sigma = 0.001");
    spit(dir.file("d.ini"), winq_arm);
    CHECK(cmd_compare(dir.file("a.ini"), dir.file("d.ini"), dir.str()) == kStatusOk);
}

TEST_CASE("target below both minima reports unreached on both sides") {
    TempDir dir("winq_compare_unreached");
    spit(dir.file("cfg.ini"), kTinyConfig);
    REQUIRE(cmd_compare(dir.file("cfg.ini"), dir.file("cfg.ini"), dir.str(), 1e-8) == kStatusOk);
    auto rec = nlohmann::json::parse(slurp(dir.file("comparison.json")));
    CHECK_FALSE(rec.at("baseline").at("reached").get<bool>());
    CHECK_FALSE(rec.at("winq").at("reached").get<bool>());
    CHECK(rec.at("speedup").is_null());
}

TEST_CASE("file digests are stable and hex-formatted") {
    TempDir dir("winq_digest_test");
    spit(dir.file("x"), "hello");
    std::uint64_t d1 = file_digest(dir.file("x"));
    std::uint64_t d2 = file_digest(dir.file("x"));
    CHECK(d1 == d2);
    CHECK(digest_hex(d1).size() == 16);
    spit(dir.file("x"), "hello!");
    CHECK(file_digest(dir.file("x")) != d1);
}

}  // TEST_SUITE
