#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "winq/graph.hpp"

namespace winq {

// Deterministic synthetic token stream from an order-2 Markov chain with a
// seed-derived sparse transition table. Stands in for a text corpus.
struct SyntheticCorpus {
    std::uint64_t seed = 0;
    int vocab = 0;
    int order = 2;
    std::vector<int> stream;

    // Transition table: for state (t1, t2), `succ[state]` lists the allowed
    // next tokens and `prob[state]` their probabilities (rows sum to 1).
    std::vector<std::vector<int>> succ;
    std::vector<std::vector<double>> prob;

    int state_of(int t1, int t2) const { return t1 * vocab + t2; }
};

// branch: successors per state (clamped to vocab). uniform_transitions forces
// equal probabilities over all vocab tokens in every state (used by tests to
// pin the chain's entropy rate at ln(vocab)).
SyntheticCorpus generate_corpus(std::uint64_t seed, int vocab, std::size_t length,
                                int branch = 4, bool uniform_transitions = false);

// Mean negative log-likelihood of the stream under the generating table
// (the optimal predictor's cross-entropy).
double corpus_entropy_rate(const SyntheticCorpus& corpus);

// Empirical unigram entropy of the stream.
double corpus_unigram_entropy(const SyntheticCorpus& corpus);

// Binary token dump: 16-byte header (magic "WINQTOKS", u16 version, u16 vocab,
// u32 length), then little-endian u32 tokens.
void write_token_dump(const SyntheticCorpus& corpus, const std::string& path);
std::vector<int> read_token_dump(const std::string& path, int* vocab_out = nullptr);

// Deterministic batch sampler. Training windows come from the first 90% of
// the stream, evaluation windows from the rest; the two regions never overlap.
class BatchSampler {
public:
    BatchSampler(const SyntheticCorpus& corpus, int context, int batch_size,
                 std::uint64_t data_seed);

    Batch next();                       // advances the training stream
    Batch eval_batch(std::uint64_t k);  // k-th deterministic eval batch
    // Fixed batch for Hessian estimation: `tokens` total tokens drawn from the
    // training region on a dedicated substream.
    Batch fixed_batch(std::size_t tokens, std::uint64_t stream_seed) const;

    std::size_t train_end() const { return train_end_; }

private:
    Batch make(const std::vector<std::size_t>& starts) const;

    const SyntheticCorpus& corpus_;
    int context_;
    int batch_;
    std::size_t train_end_;
    std::uint64_t data_seed_;
    std::uint64_t draws_ = 0;
};

}  // namespace winq
