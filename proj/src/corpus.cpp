#include "winq/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "winq/errors.hpp"
#include "winq/rng.hpp"

namespace winq {

SyntheticCorpus generate_corpus(std::uint64_t seed, int vocab, std::size_t length, int branch,
                                bool uniform_transitions) {
    if (vocab < 2) throw ArgumentError("generate_corpus: vocab must be >= 2");
    if (length < 3) throw ArgumentError("generate_corpus: length too small");
    branch = std::min(branch, vocab);
    if (branch < 1) throw ArgumentError("generate_corpus: branch must be >= 1");

    SyntheticCorpus c;
    c.seed = seed;
    c.vocab = vocab;

    SplitRng table_rng(seed, "corpus-table");
    int states = vocab * vocab;
    c.succ.resize(static_cast<std::size_t>(states));
    c.prob.resize(static_cast<std::size_t>(states));
    std::vector<int> perm(static_cast<std::size_t>(vocab));
    for (int s = 0; s < states; ++s) {
        auto& succ = c.succ[static_cast<std::size_t>(s)];
        auto& prob = c.prob[static_cast<std::size_t>(s)];
        if (uniform_transitions) {
            succ.resize(static_cast<std::size_t>(vocab));
            for (int t = 0; t < vocab; ++t) succ[static_cast<std::size_t>(t)] = t;
            prob.assign(static_cast<std::size_t>(vocab), 1.0 / vocab);
            continue;
        }
        // Fisher-Yates prefix picks `branch` distinct successors; geometric
        // weights keep the marginal token distribution visibly non-uniform.
        for (int t = 0; t < vocab; ++t) perm[static_cast<std::size_t>(t)] = t;
        for (int i = 0; i < branch; ++i) {
            std::size_t j = static_cast<std::size_t>(i) +
                            table_rng.below(static_cast<std::uint64_t>(vocab - i));
            std::swap(perm[static_cast<std::size_t>(i)], perm[j]);
        }
        succ.assign(perm.begin(), perm.begin() + branch);
        prob.resize(static_cast<std::size_t>(branch));
        double total = 0.0;
        for (int i = 0; i < branch; ++i) {
            double w = std::pow(0.5, i) * (0.5 + table_rng.uniform01());
            prob[static_cast<std::size_t>(i)] = w;
            total += w;
        }
        for (auto& p : prob) p /= total;
    }

    SplitRng walk_rng(seed, "corpus-walk");
    c.stream.resize(length);
    c.stream[0] = static_cast<int>(walk_rng.below(static_cast<std::uint64_t>(vocab)));
    c.stream[1] = static_cast<int>(walk_rng.below(static_cast<std::uint64_t>(vocab)));
    for (std::size_t i = 2; i < length; ++i) {
        int s = c.state_of(c.stream[i - 2], c.stream[i - 1]);
        const auto& succ = c.succ[static_cast<std::size_t>(s)];
        const auto& prob = c.prob[static_cast<std::size_t>(s)];
        double u = walk_rng.uniform01();
        double acc = 0.0;
        int chosen = succ.back();
        for (std::size_t j = 0; j < succ.size(); ++j) {
            acc += prob[j];
            if (u <= acc) {
                chosen = succ[j];
                break;
            }
        }
        c.stream[i] = chosen;
    }
    return c;
}

double corpus_entropy_rate(const SyntheticCorpus& c) {
    double nll = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 2; i < c.stream.size(); ++i) {
        int s = c.state_of(c.stream[i - 2], c.stream[i - 1]);
        const auto& succ = c.succ[static_cast<std::size_t>(s)];
        const auto& prob = c.prob[static_cast<std::size_t>(s)];
        for (std::size_t j = 0; j < succ.size(); ++j) {
            if (succ[j] == c.stream[i]) {
                nll -= std::log(prob[j]);
                ++n;
                break;
            }
        }
    }
    return n ? nll / static_cast<double>(n) : 0.0;
}

double corpus_unigram_entropy(const SyntheticCorpus& c) {
    std::vector<double> counts(static_cast<std::size_t>(c.vocab), 0.0);
    for (int t : c.stream) counts[static_cast<std::size_t>(t)] += 1.0;
    double h = 0.0;
    double n = static_cast<double>(c.stream.size());
    for (double k : counts) {
        if (k == 0.0) continue;
        double p = k / n;
        h -= p * std::log(p);
    }
    return h;
}

namespace {
constexpr char kTokenMagic[8] = {'W', 'I', 'N', 'Q', 'T', 'O', 'K', 'S'};
}

void write_token_dump(const SyntheticCorpus& corpus, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path);
    std::uint16_t version = 1;
    std::uint16_t vocab = static_cast<std::uint16_t>(corpus.vocab);
    std::uint32_t length = static_cast<std::uint32_t>(corpus.stream.size());
    std::fwrite(kTokenMagic, 1, 8, f);
    std::fwrite(&version, 2, 1, f);
    std::fwrite(&vocab, 2, 1, f);
    std::fwrite(&length, 4, 1, f);
    for (int t : corpus.stream) {
        std::uint32_t v = static_cast<std::uint32_t>(t);
        std::fwrite(&v, 4, 1, f);
    }
    std::fclose(f);
}

std::vector<int> read_token_dump(const std::string& path, int* vocab_out) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open: " + path);
    char magic[8];
    std::uint16_t version = 0, vocab = 0;
    std::uint32_t length = 0;
    if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, kTokenMagic, 8) != 0) {
        std::fclose(f);
        throw IoError("bad token dump magic in " + path);
    }
    std::fread(&version, 2, 1, f);
    std::fread(&vocab, 2, 1, f);
    std::fread(&length, 4, 1, f);
    if (version != 1) {
        std::fclose(f);
        throw IoError("unsupported token dump version " + std::to_string(version));
    }
    std::vector<int> out(length);
    for (auto& t : out) {
        std::uint32_t v = 0;
        if (std::fread(&v, 4, 1, f) != 1) {
            std::fclose(f);
            throw IoError("truncated token dump: " + path);
        }
        t = static_cast<int>(v);
    }
    std::fclose(f);
    return out;
}

BatchSampler::BatchSampler(const SyntheticCorpus& corpus, int context, int batch_size,
                           std::uint64_t data_seed)
    : corpus_(corpus), context_(context), batch_(batch_size), data_seed_(data_seed) {
    train_end_ = corpus.stream.size() * 9 / 10;
    std::size_t need = static_cast<std::size_t>(context) + 1;
    if (train_end_ < need || corpus.stream.size() - train_end_ < need)
        throw ConfigError("corpus too short for context length " + std::to_string(context));
}

Batch BatchSampler::make(const std::vector<std::size_t>& starts) const {
    int b = static_cast<int>(starts.size());
    std::vector<int> inputs(static_cast<std::size_t>(b) * context_);
    std::vector<int> targets(static_cast<std::size_t>(b) * context_);
    for (int i = 0; i < b; ++i) {
        std::size_t s = starts[static_cast<std::size_t>(i)];
        for (int t = 0; t < context_; ++t) {
            inputs[static_cast<std::size_t>(i * context_ + t)] = corpus_.stream[s + t];
            targets[static_cast<std::size_t>(i * context_ + t)] = corpus_.stream[s + t + 1];
        }
    }
    Batch out;
    out.set("tokens.input", {b, context_}, std::move(inputs));
    out.set("tokens.target", {b, context_}, std::move(targets));
    return out;
}

Batch BatchSampler::next() {
    SplitRng rng(data_seed_, "sampler", draws_++);
    std::size_t lim = train_end_ - static_cast<std::size_t>(context_);
    std::vector<std::size_t> starts(static_cast<std::size_t>(batch_));
    for (auto& s : starts) s = rng.below(lim);
    return make(starts);
}

Batch BatchSampler::eval_batch(std::uint64_t k) {
    SplitRng rng(data_seed_, "sampler-eval", k);
    std::size_t lim = corpus_.stream.size() - train_end_ - static_cast<std::size_t>(context_);
    std::vector<std::size_t> starts(static_cast<std::size_t>(batch_));
    for (auto& s : starts) s = train_end_ + rng.below(lim);
    return make(starts);
}

Batch BatchSampler::fixed_batch(std::size_t tokens, std::uint64_t stream_seed) const {
    SplitRng rng(data_seed_ ^ stream_seed, "sampler-fixed");
    std::size_t rows = std::max<std::size_t>(1, tokens / static_cast<std::size_t>(context_));
    std::size_t lim = train_end_ - static_cast<std::size_t>(context_);
    std::vector<std::size_t> starts(rows);
    for (auto& s : starts) s = rng.below(lim);
    return make(starts);
}

}  // namespace winq
