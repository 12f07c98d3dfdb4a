#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "winq/corpus.hpp"
#include "winq/eval.hpp"
#include "winq/model.hpp"
#include "winq/rng.hpp"

using namespace winq;

TEST_SUITE("corpus_model") {

TEST_CASE("corpus generation is deterministic") {
    SyntheticCorpus a = generate_corpus(1, 64, 100000);
    SyntheticCorpus b = generate_corpus(1, 64, 100000);
    CHECK(a.stream == b.stream);
    SyntheticCorpus c = generate_corpus(2, 64, 100000);
    CHECK(a.stream != c.stream);
}

TEST_CASE("uniform binary chain has entropy rate ln 2") {
    SyntheticCorpus c = generate_corpus(3, 2, 50000, 2, /*uniform_transitions=*/true);
    CHECK(corpus_entropy_rate(c) == doctest::Approx(std::log(2.0)).epsilon(0.02));
}

TEST_CASE("empirical transitions match the generating table in total variation") {
    SyntheticCorpus c = generate_corpus(5, 16, 100000);
    // Counting oracle: empirical conditional next-token distribution per
    // state, compared against the table, weighted by state visit frequency.
    int states = c.vocab * c.vocab;
    std::vector<std::vector<double>> counts(static_cast<std::size_t>(states),
                                            std::vector<double>(c.vocab, 0.0));
    std::vector<double> visits(static_cast<std::size_t>(states), 0.0);
    for (std::size_t i = 2; i < c.stream.size(); ++i) {
        int s = c.state_of(c.stream[i - 2], c.stream[i - 1]);
        counts[static_cast<std::size_t>(s)][static_cast<std::size_t>(c.stream[i])] += 1.0;
        visits[static_cast<std::size_t>(s)] += 1.0;
    }
    double total = static_cast<double>(c.stream.size() - 2);
    double tv = 0.0;
    for (int s = 0; s < states; ++s) {
        if (visits[static_cast<std::size_t>(s)] == 0.0) continue;
        std::vector<double> table(static_cast<std::size_t>(c.vocab), 0.0);
        for (std::size_t j = 0; j < c.succ[static_cast<std::size_t>(s)].size(); ++j)
            table[static_cast<std::size_t>(c.succ[static_cast<std::size_t>(s)][j])] =
                c.prob[static_cast<std::size_t>(s)][j];
        double d = 0.0;
        for (int t = 0; t < c.vocab; ++t)
            d += std::fabs(counts[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)] /
                               visits[static_cast<std::size_t>(s)] -
                           table[static_cast<std::size_t>(t)]);
        tv += (visits[static_cast<std::size_t>(s)] / total) * 0.5 * d;
    }
    CHECK(tv <= 0.05);
}

TEST_CASE("unigram entropy sits strictly below ln(vocab)") {
    for (std::uint64_t seed : {1ull, 9ull, 44ull}) {
        SyntheticCorpus c = generate_corpus(seed, 32, 100000);
        CHECK(corpus_unigram_entropy(c) < std::log(32.0) - 0.01);
    }
}

TEST_CASE("invalid corpus sizes are rejected") {
    CHECK_THROWS_AS(generate_corpus(1, 1, 1000), ArgumentError);
    CHECK_THROWS_AS(generate_corpus(1, 8, 2), ArgumentError);
    CHECK_THROWS_AS(generate_corpus(1, 8, 1000, 0), ArgumentError);
}

TEST_CASE("token dump round-trips") {
    SyntheticCorpus c = generate_corpus(7, 16, 5000);
    auto path = (std::filesystem::temp_directory_path() / "winq_tokens.bin").string();
    write_token_dump(c, path);
    int vocab = 0;
    std::vector<int> back = read_token_dump(path, &vocab);
    std::filesystem::remove(path);
    CHECK(back == c.stream);
    CHECK(vocab == 16);
}

TEST_CASE("model construction is deterministic and counts match the closed form") {
    ModelConfig cfg;
    cfg.family = ModelFamily::TinyTransformer;
    cfg.layers = 2;
    cfg.d_model = 64;
    cfg.heads = 4;
    cfg.vocab = 64;
    cfg.context_length = 64;
    cfg.batch_size = 4;
    BuiltModel a = build_model(cfg, 123);
    BuiltModel b = build_model(cfg, 123);
    CHECK(a.params.data() == b.params.data());

    // vocab*d + ctx*d + layers*(12 d^2 + 4 d) + 2 d + d*vocab
    std::size_t expect = 64 * 64 + 64 * 64 + 2 * (12 * 64 * 64 + 4 * 64) + 2 * 64 + 64 * 64;
    CHECK(cfg.param_count() == expect);
    CHECK(a.params.size() == expect);

    ModelConfig mlp;
    mlp.family = ModelFamily::Mlp;
    mlp.d_model = 8;
    mlp.mlp_hidden = 16;
    mlp.vocab = 8;
    BuiltModel c = build_model(mlp, 4);
    CHECK(c.params.size() == mlp.param_count());
}

TEST_CASE("embeddings and norms are excluded from quantization") {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.vocab = 16;
    cfg.context_length = 8;
    cfg.batch_size = 2;
    BuiltModel m = build_model(cfg, 1);
    for (const auto& e : m.params.entries()) {
        bool is_weight = e.shape.size() == 2 && e.name != "tok_emb" && e.name != "pos_emb";
        CHECK(e.quantized == is_weight);
    }
}

TEST_CASE("initial loss is near the uniform-predictor bound") {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.vocab = 32;
    cfg.context_length = 16;
    cfg.batch_size = 8;
    BuiltModel m = build_model(cfg, 5);
    SyntheticCorpus corpus = generate_corpus(2, cfg.vocab, 10000);
    BatchSampler s(corpus, cfg.context_length, cfg.batch_size, 3);
    double loss = batch_loss(m, m.params, s.next());
    CHECK(loss > std::log(32.0) - 1.0);
    CHECK(loss < std::log(32.0) + 1.0);
}

TEST_CASE("zeroed output head gives exactly the uniform loss") {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.vocab = 16;
    cfg.context_length = 8;
    cfg.batch_size = 4;
    BuiltModel m = build_model(cfg, 6);
    for (double& x : m.params.slice("head")) x = 0.0;
    SyntheticCorpus corpus = generate_corpus(3, cfg.vocab, 10000);
    BatchSampler s(corpus, cfg.context_length, cfg.batch_size, 4);
    double loss = batch_loss(m, m.params, s.next());
    CHECK(std::fabs(loss - std::log(16.0)) <= 1e-9);
}

TEST_CASE("invalid model configs are rejected") {
    ModelConfig c;
    c.d_model = 48;  // not a power of two
    CHECK_THROWS_AS(build_model(c, 1), ConfigError);
    c.d_model = 32;
    c.heads = 5;
    CHECK_THROWS_AS(build_model(c, 1), ConfigError);
}

TEST_CASE("train and eval windows never overlap") {
    SyntheticCorpus corpus = generate_corpus(11, 16, 20000);
    BatchSampler s(corpus, 16, 8, 9);
    std::size_t boundary = s.train_end();
    CHECK(boundary == 18000);
    // The samplers draw window starts below train_end - context (training)
    // and at/after train_end (evaluation); replay the streams and check.
    for (std::uint64_t k = 0; k < 200; ++k) {
        SplitRng rng(9, "sampler", k);
        for (int i = 0; i < 8; ++i) {
            std::size_t start = rng.below(boundary - 16);
            CHECK(start + 17 <= boundary);
        }
        SplitRng erng(9, "sampler-eval", k);
        for (int i = 0; i < 8; ++i) {
            std::size_t start = boundary + erng.below(corpus.stream.size() - boundary - 16);
            CHECK(start >= boundary);
            CHECK(start + 17 <= corpus.stream.size());
        }
    }
    // Batches actually use those streams.
    Batch t = s.next();
    Batch e = s.eval_batch(0);
    CHECK(t.find("tokens.input").shape == Shape{8, 16});
    CHECK(e.find("tokens.input").shape == Shape{8, 16});
}

TEST_CASE("targets are inputs shifted by one") {
    SyntheticCorpus corpus = generate_corpus(13, 16, 20000);
    BatchSampler s(corpus, 8, 4, 2);
    Batch b = s.next();
    const auto& in = b.find("tokens.input").values;
    const auto& tg = b.find("tokens.target").values;
    for (int row = 0; row < 4; ++row)
        for (int t = 0; t + 1 < 8; ++t)
            CHECK(tg[static_cast<std::size_t>(row * 8 + t)] ==
                  in[static_cast<std::size_t>(row * 8 + t + 1)]);
}

TEST_CASE("16-bit quantized loss equals the plain loss bit-for-bit") {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.vocab = 16;
    cfg.context_length = 8;
    cfg.batch_size = 4;
    SyntheticCorpus corpus = generate_corpus(4, cfg.vocab, 10000);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        BuiltModel m = build_model(cfg, seed);
        BatchSampler s(corpus, cfg.context_length, cfg.batch_size, seed);
        Batch b = s.next();
        EvalOptions plain;
        EvalOptions q16;
        q16.activation_bits = 16;
        CHECK(batch_loss(m, m.params, b, plain) == batch_loss(m, m.params, b, q16));
    }
}

}  // TEST_SUITE
