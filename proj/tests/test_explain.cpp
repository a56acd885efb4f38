#include <gtest/gtest.h>

#include <regex>

#include "veracity/veracity.hpp"

using namespace veracity;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.vocab_size = 30;
    c.max_len = 8;
    c.dim = 8;
    c.heads = 2;
    c.key_dim = 4;
    c.ff_dim = 8;
    c.head_hidden = 4;
    return c;
}

EncodedExample example(std::vector<TokenId> real, std::size_t max_len = 8) {
    EncodedExample ex;
    ex.ids.assign(max_len, Vocabulary::pad_id);
    ex.mask.assign(max_len, 0);
    for (std::size_t i = 0; i < real.size(); ++i) {
        ex.ids[i] = real[i];
        ex.mask[i] = 1;
        ex.words.push_back("w" + std::to_string(real[i]));
    }
    return ex;
}

Model infer_model(std::uint64_t seed) {
    auto m = Model::build(tiny(), seed);
    m.set_mode(Mode::infer);
    return m;
}

SaliencyMap map_of(std::vector<double> scores) {
    SaliencyMap m;
    for (std::size_t i = 0; i < scores.size(); ++i) m.word_scores.push_back({"t" + std::to_string(i), scores[i]});
    return m;
}

}  // namespace

TEST(Saliency, SingleTokenGetsAllMass) {
    const auto m = infer_model(1);
    const auto s = saliency(m, example({5}));
    ASSERT_EQ(s.word_scores.size(), 1u);
    EXPECT_EQ(s.word_scores[0].score, 1.0);
}

TEST(Saliency, DistributionOverRealTokens) {
    Rng rng(2);
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        const auto m = infer_model(seed);
        std::vector<TokenId> ids(1 + rng.index(8));
        for (auto& id : ids) id = static_cast<TokenId>(1 + rng.index(29));
        const auto ex = example(ids);
        const auto s = saliency(m, ex);
        ASSERT_EQ(s.word_scores.size(), ids.size());
        double total = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            EXPECT_GE(s.word_scores[i].score, 0.0);
            EXPECT_EQ(s.word_scores[i].word, ex.words[i]);
            total += s.word_scores[i].score;
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
        EXPECT_EQ(s.predicted_label == Label::deceptive, s.deceptive_probability >= 0.5);
        EXPECT_GE(s.predicted_probability, 0.5);
    }
}

TEST(Saliency, DeterministicAndInferOnly) {
    const auto m = infer_model(3);
    const auto ex = example({4, 9, 2, 7});
    const auto a = saliency(m, ex), b = saliency(m, ex);
    for (std::size_t i = 0; i < a.word_scores.size(); ++i) EXPECT_EQ(a.word_scores[i].score, b.word_scores[i].score);
    auto t = Model::build(tiny(), 3);
    t.set_mode(Mode::train);
    EXPECT_THROW(saliency(t, ex), ValidationError);
}

TEST(Saliency, ZeroGradientIsDegenerateUniform) {
    auto m = infer_model(4);
    for (auto name : {"head.output.weight", "head.output.bias"}) {
        auto d = m.parameter(name).mutable_data();
        std::fill(d.begin(), d.end(), 0.0f);
    }
    const auto s = saliency(m, example({1, 2, 3, 4}));
    EXPECT_TRUE(s.degenerate);
    for (const auto& w : s.word_scores) EXPECT_EQ(w.score, 0.25);
}

TEST(Saliency, CapturedGradientMatchesFiniteDifferences) {
    // The embedding output at position t is token row + position row t, so a
    // derivative with respect to position row t is one with respect to the
    // embedding output at t.
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto m = infer_model(seed).cast<double>();
        const auto ex = example({3, 11, 3, 20, 6});
        ForwardOptions opts;
        opts.tap_embedding = true;
        ActivationTrace<double> trace;
        const auto p = m.forward_example(ex, opts, nullptr, &trace);
        backward(p);
        const auto grad = trace.embedding_gradient();

        auto probe = m;
        auto pos = probe.parameter("embedding.position").mutable_data();
        const double h = 1e-6;
        for (std::size_t i = 0; i < 5 * 8; ++i) {
            const double x0 = pos[i];
            pos[i] = x0 + h;
            const double up = probe.forward_example(ex, {}, nullptr, nullptr).item();
            pos[i] = x0 - h;
            const double down = probe.forward_example(ex, {}, nullptr, nullptr).item();
            pos[i] = x0;
            EXPECT_NEAR(grad[i], (up - down) / (2 * h), 1e-8) << "seed " << seed << " index " << i;
        }
        for (std::size_t i = 5 * 8; i < grad.size(); ++i) EXPECT_EQ(grad[i], 0.0);
    }
}

TEST(Saliency, LinearMapClosedForm) {
    // p = sigmoid(sum(h * W)); dp/dh = p (1 - p) W.
    Rng rng(5);
    std::vector<double> table(6 * 3), w(4 * 3);
    for (auto& v : table) v = rng.normal();
    for (auto& v : w) v = rng.normal();
    const Tensor64 emb({6, 3}, table);
    const std::vector<int> ids{2, 5, 2, 1};
    auto h = embedding(emb, std::span<const int>(ids));
    h.set_requires_grad(true);
    const auto p = sigmoid(sum(mul(h, Tensor64({4, 3}, w))));
    backward(p);
    const double pv = p.item();
    const auto g = h.grad();
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], pv * (1 - pv) * w[i], 1e-12);
}

TEST(Saliency, RepeatedTokenInSumModelScoresEqually) {
    // embedding -> sum -> logit: every position's gradient is the same vector.
    Rng rng(6);
    std::vector<double> table(5 * 4);
    for (auto& v : table) v = rng.normal();
    const std::vector<int> ids{3, 1, 3};
    auto h = embedding(Tensor64({5, 4}, table), std::span<const int>(ids));
    h.set_requires_grad(true);
    const auto pooled = mean(h, 0);
    backward(sigmoid(sum(mul(pooled, Tensor64({4}, {0.5, -1, 2, 0.1})))));
    const auto raw = token_gradient_norms<double>(h.grad(), 4, 3);
    bool degenerate = false;
    const auto scores = l1_normalize(raw, degenerate);
    EXPECT_FALSE(degenerate);
    EXPECT_NEAR(scores[0], scores[2], 1e-6);
}

TEST(Saliency, FragmentsSumIntoWords) {
    const std::vector<double> tokens{0.1, 0.2, 0.3, 0.4};
    const std::vector<std::size_t> word_of{0, 0, 1, 2};
    const auto words = aggregate_fragments(tokens, word_of);
    ASSERT_EQ(words.size(), 3u);
    EXPECT_NEAR(words[0], 0.3, 1e-15);
    EXPECT_EQ(words[2], 0.4);
    EXPECT_THROW(aggregate_fragments(tokens, std::vector<std::size_t>{0, 1}), ShapeError);
    EXPECT_THROW(aggregate_fragments(tokens, std::vector<std::size_t>{1, 0, 2, 3}), ValidationError);
}

TEST(TopK, Fixtures) {
    const auto a = top_k(map_of({0.5, 0.3, 0.2}), 1);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_EQ(a[0].position, 0u);
    const auto ties = top_k(map_of({0.25, 0.25, 0.25, 0.25}), 2);
    EXPECT_EQ(ties[0].position, 0u);
    EXPECT_EQ(ties[1].position, 1u);
    EXPECT_EQ(top_k(map_of({0.6, 0.4}), 10).size(), 2u);
    EXPECT_THROW(top_k(map_of({1.0}), 0), ValidationError);
}

TEST(TopK, IsPrefixOfSortedList) {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s(1 + rng.index(12));
        for (auto& v : s) v = static_cast<double>(rng.index(4));
        const auto map = map_of(s);
        const auto full = top_k(map, s.size());
        for (std::size_t i = 1; i < full.size(); ++i) {
            EXPECT_GE(full[i - 1].score, full[i].score);
            if (full[i - 1].score == full[i].score) {
                EXPECT_LT(full[i - 1].position, full[i].position);
            }
        }
        const std::size_t k = 1 + rng.index(s.size());
        const auto part = top_k(map, k);
        for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(part[i].position, full[i].position);
    }
}

TEST(Attention, ShapeAndRows) {
    ModelConfig c = tiny();
    c.max_len = 12;
    const auto m = Model::build(c, 8);
    ActivationTrace<float> trace;
    const auto ex = example({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 12);
    m.forward_example(ex, {}, nullptr, &trace);
    const auto rec = attention_maps(trace, std::span<const std::uint8_t>(ex.mask));
    EXPECT_EQ(rec.layers, 1u);
    EXPECT_EQ(rec.heads, 2u);
    EXPECT_EQ(rec.length, 10u);
    EXPECT_EQ(rec.maps[0][1].size(), 100u);
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t r = 0; r < 10; ++r) {
            double total = 0;
            for (std::size_t col = 0; col < 10; ++col) total += rec.at(0, h, r, col);
            EXPECT_NEAR(total, 1.0, 1e-6);
        }
}

TEST(Attention, UniformAndErrors) {
    ActivationTrace<float> trace;
    trace.attention = {{Tensor::full({4, 4}, 0.25f)}};
    const std::vector<std::uint8_t> mask{1, 1, 1, 0};
    const auto rec = attention_maps(trace, mask);
    for (double v : rec.maps[0][0]) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
    EXPECT_THROW(attention_maps(trace, std::vector<std::uint8_t>{0, 0, 0, 0}), ValidationError);
}

TEST(Highlight, MarksTopKWords) {
    EncodedExample ex;
    ex.words = {"I", "was", "<home>", "honestly"};
    auto map = map_of({0.1, 0.2, 0.3, 0.4});
    for (std::size_t i = 0; i < 4; ++i) map.word_scores[i].word = ex.words[i];
    EXPECT_EQ(render_highlight(ex, map, 1), "I was &lt;home&gt; <mark data-score=\"0.4000\">honestly</mark>");
    const auto all = render_highlight(ex, map, 4);
    EXPECT_EQ(std::count(all.begin(), all.end(), '<') - 0, 4 * 2);  // every word wrapped; the escaped word adds none
    const std::string stripped = std::regex_replace(render_highlight(ex, map, 2), std::regex("<[^>]+>"), "");
    EXPECT_EQ(stripped, "I was &lt;home&gt; honestly");
    EXPECT_THROW(render_highlight(ex, map_of({1.0}), 1), ValidationError);
}
