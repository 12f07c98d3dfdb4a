#include "winq/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "winq/config.hpp"
#include "winq/errors.hpp"
#include "winq/rng.hpp"

namespace winq {

namespace {

constexpr char kMagic[8] = {'W', 'I', 'N', 'Q', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}

template <typename T>
void put_pod(std::string& out, T v) {
    put_bytes(out, &v, sizeof v);
}

void put_array(std::string& out, const std::string& name, const std::vector<double>& data) {
    put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put_pod<std::uint64_t>(out, static_cast<std::uint64_t>(data.size()));
    put_bytes(out, data.data(), data.size() * sizeof(double));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void take(void* dst, std::size_t n) {
        if (pos + n > buf.size()) throw IoError("checkpoint truncated");
        std::memcpy(dst, buf.data() + pos, n);
        pos += n;
    }
    template <typename T>
    T pod() {
        T v;
        take(&v, sizeof v);
        return v;
    }
    std::string str(std::size_t n) {
        if (pos + n > buf.size()) throw IoError("checkpoint truncated");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

QuantLayout Checkpoint::layout() const {
    QuantLayout lay;
    if (train.weight_bits == 16) return lay;
    QuantizerSpec spec = default_weight_spec(train.weight_bits);
    for (std::size_t i = 0; i < params.entry_count(); ++i) {
        const auto& e = params.entry(i);
        if (!e.quantized) continue;
        lay.tensor_entry.push_back(i);
        lay.specs.push_back(spec);
        lay.step_entry.push_back(spec.learnable() ? static_cast<std::ptrdiff_t>(
                                                        params.index_of(e.name + ".step"))
                                                  : -1);
    }
    return lay;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : ckpt.params.entries())
        entries.push_back({{"name", e.name},
                           {"shape", e.shape},
                           {"quantized", e.quantized},
                           {"step_size", e.step_size}});
    nlohmann::json meta = {{"model", to_json(ckpt.model)},
                           {"train", to_json(ckpt.train)},
                           {"opt_step", ckpt.opt.step},
                           {"entries", entries}};
    std::string meta_text = meta.dump();

    std::string out;
    put_bytes(out, kMagic, 8);
    put_pod<std::uint32_t>(out, kVersion);
    put_pod<std::uint64_t>(out, meta_text.size());
    put_bytes(out, meta_text.data(), meta_text.size());
    put_pod<std::uint32_t>(out, 3);
    put_array(out, "params", ckpt.params.data());
    put_array(out, "opt.m", ckpt.opt.m);
    put_array(out, "opt.v", ckpt.opt.v);
    put_pod<std::uint64_t>(out, fnv1a64_bytes(out.data(), out.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    std::string buf = ss.str();
    if (buf.size() < 8 + 4 + 8 + 8) throw IoError("checkpoint too small: " + path);

    std::uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
    std::uint64_t actual = fnv1a64_bytes(buf.data(), buf.size() - 8);
    if (stored != actual) throw IoError("checkpoint digest mismatch: " + path);

    Reader r{buf};
    char magic[8];
    r.take(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) throw IoError("bad checkpoint magic: " + path);
    std::uint32_t version = r.pod<std::uint32_t>();
    if (version != kVersion)
        throw IoError("unsupported checkpoint format version " + std::to_string(version));

    std::uint64_t meta_len = r.pod<std::uint64_t>();
    nlohmann::json meta = nlohmann::json::parse(r.str(meta_len));

    Checkpoint out;
    out.model = model_config_from_json(meta.at("model"));
    out.train = train_config_from_json(meta.at("train"));
    for (const auto& je : meta.at("entries")) {
        Shape shape = je.at("shape").get<Shape>();
        out.params.add(je.at("name").get<std::string>(), shape, je.at("quantized").get<bool>(),
                       je.at("step_size").get<bool>());
    }

    std::uint32_t arrays = r.pod<std::uint32_t>();
    if (arrays != 3) throw IoError("unexpected checkpoint array count");
    auto read_array = [&](const std::string& want, std::vector<double>& dst) {
        std::uint32_t nl = r.pod<std::uint32_t>();
        std::string name = r.str(nl);
        if (name != want) throw IoError("unexpected checkpoint array: " + name);
        std::uint64_t count = r.pod<std::uint64_t>();
        dst.resize(count);
        r.take(dst.data(), count * sizeof(double));
    };
    read_array("params", out.params.data());
    if (out.params.data().size() !=
        (out.params.entry_count()
             ? out.params.entry(out.params.entry_count() - 1).offset +
                   out.params.entry(out.params.entry_count() - 1).length
             : 0))
        throw IoError("checkpoint params length does not match entry table");
    read_array("opt.m", out.opt.m);
    read_array("opt.v", out.opt.v);
    out.opt.step = meta.at("opt_step").get<std::int64_t>();
    return out;
}

}  // namespace winq
