// SPDX-License-Identifier: Apache-2.0
#pragma once

// Gradient saliency over the embedding output and attention export.
//
// Saliency runs in two steps: the forward pass records the embedding
// output as a gradient sink, then the probability of the predicted class is
// backpropagated to it. Each token's raw score is the L1 norm of its
// gradient row; scores are divided by their total so they sum to one.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "veracity/error.hpp"
#include "veracity/model.hpp"
#include "veracity/tensor.hpp"
#include "veracity/tokenizer.hpp"

namespace veracity {

struct WordScore {
    std::string word;
    double score = 0.0;
};

struct SaliencyMap {
    std::vector<WordScore> word_scores;  // one per non-pad position, in order
    Label predicted_label = Label::truthful;
    double deceptive_probability = 0.0;  // P(deceptive | text)
    double predicted_probability = 0.0;  // probability of predicted_label
    bool degenerate = false;             // all raw gradients were zero; scores are uniform
};

/// Divides raw non-negative scores by their sum. An all-zero input yields
/// the uniform distribution and sets degenerate.
inline std::vector<double> l1_normalize(std::span<const double> raw, bool& degenerate) {
    double total = 0.0;
    for (double v : raw) total += v;
    std::vector<double> out(raw.size());
    degenerate = !(total > 0.0) || !std::isfinite(total);
    for (std::size_t i = 0; i < raw.size(); ++i)
        out[i] = degenerate ? 1.0 / static_cast<double>(raw.size()) : raw[i] / total;
    return out;
}

/// Sums token-level scores into the words they came from; word_of_token[i]
/// is the word index of token i. Word-level tokenization makes this the
/// identity, but subword tokenizers split words into fragments.
inline std::vector<double> aggregate_fragments(std::span<const double> token_scores,
                                               std::span<const std::size_t> word_of_token) {
    if (token_scores.size() != word_of_token.size())
        throw ShapeError("aggregate_fragments: token score and mapping lengths differ");
    std::size_t words = 0;
    for (std::size_t i = 0; i < word_of_token.size(); ++i) {
        if (i > 0 && word_of_token[i] < word_of_token[i - 1])
            throw ValidationError("aggregate_fragments: word indices must be non-decreasing");
        words = std::max(words, word_of_token[i] + 1);
    }
    std::vector<double> out(words, 0.0);
    for (std::size_t i = 0; i < token_scores.size(); ++i) out[word_of_token[i]] += token_scores[i];
    return out;
}

/// Per-token L1 norms of the embedding gradient over the first `length` rows.
template <typename T>
std::vector<double> token_gradient_norms(std::span<const T> gradient, std::size_t dim, std::size_t length) {
    if (gradient.size() < length * dim) throw ShapeError("token_gradient_norms: gradient too short");
    std::vector<double> out(length, 0.0);
    for (std::size_t i = 0; i < length; ++i)
        for (std::size_t j = 0; j < dim; ++j) out[i] += std::abs(static_cast<double>(gradient[i * dim + j]));
    return out;
}

template <typename T>
SaliencyMap saliency(const BasicModel<T>& model, const EncodedExample& example) {
    if (model.mode() != Mode::infer) throw ValidationError("saliency requires an infer-mode model");
    ForwardOptions opts;
    opts.tap_embedding = true;
    ActivationTrace<T> trace;
    const auto p = model.forward_example(example, opts, nullptr, &trace);
    const double prob = static_cast<double>(p.item());

    SaliencyMap map;
    map.deceptive_probability = prob;
    map.predicted_label = prob >= 0.5 ? Label::deceptive : Label::truthful;
    map.predicted_probability = prob >= 0.5 ? prob : 1.0 - prob;

    const auto target = map.predicted_label == Label::deceptive ? p : add_scalar(scale(p, T(-1)), T(1));
    backward(target);
    const auto grad = trace.embedding_gradient();
    const auto raw = token_gradient_norms<T>(grad, model.config().dim, trace.length);
    const auto scores = l1_normalize(raw, map.degenerate);
    for (std::size_t i = 0; i < trace.length; ++i) map.word_scores.push_back({example.words.at(i), scores[i]});
    return map;
}

struct RankedToken {
    std::size_t position = 0;
    std::string word;
    double score = 0.0;
};

/// The k highest-scoring tokens (k clamped to the token count), by
/// descending score with earlier positions first among equals.
inline std::vector<RankedToken> top_k(const SaliencyMap& map, std::size_t k) {
    if (k < 1) throw ValidationError("top_k: k must be at least 1");
    std::vector<RankedToken> all;
    for (std::size_t i = 0; i < map.word_scores.size(); ++i)
        all.push_back({i, map.word_scores[i].word, map.word_scores[i].score});
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    all.resize(std::min(k, all.size()));
    return all;
}

/// Attention restricted to real tokens: maps[layer][head] is a length x
/// length row-major matrix whose rows are renormalized to sum to one.
struct AttentionRecord {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t length = 0;
    std::vector<std::vector<std::vector<double>>> maps;

    double at(std::size_t layer, std::size_t head, std::size_t row, std::size_t col) const {
        return maps.at(layer).at(head).at(row * length + col);
    }
};

template <typename T>
AttentionRecord attention_maps(const ActivationTrace<T>& trace, std::span<const std::uint8_t> mask) {
    std::size_t length = 0;
    while (length < mask.size() && mask[length]) ++length;
    if (length == 0) throw ValidationError("attention_maps: no real tokens");
    if (trace.attention.empty()) throw ValidationError("attention_maps: trace holds no attention");
    AttentionRecord rec;
    rec.layers = trace.attention.size();
    rec.heads = trace.attention.front().size();
    rec.length = length;
    for (const auto& layer : trace.attention) {
        auto& out_layer = rec.maps.emplace_back();
        for (const auto& weights : layer) {
            const std::size_t L = weights.dim(1);
            if (length > L) throw ShapeError("attention_maps: mask longer than attention matrix");
            auto w = weights.data();
            auto& m = out_layer.emplace_back(length * length);
            for (std::size_t r = 0; r < length; ++r) {
                double total = 0.0;
                for (std::size_t c = 0; c < length; ++c) total += static_cast<double>(w[r * L + c]);
                for (std::size_t c = 0; c < length; ++c)
                    m[r * length + c] = total > 0.0 ? static_cast<double>(w[r * L + c]) / total : 1.0 / static_cast<double>(length);
            }
        }
    }
    return rec;
}

namespace detail {

inline std::string escape_html(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

}  // namespace detail

/// The example's words separated by spaces, with the top-k wrapped as
/// <mark data-score="0.1234">word</mark>. Words are HTML-escaped.
inline std::string render_highlight(const EncodedExample& example, const SaliencyMap& map, std::size_t k) {
    if (example.words.size() != map.word_scores.size())
        throw ValidationError("render_highlight: example and saliency map disagree on token count");
    std::vector<bool> marked(map.word_scores.size(), false);
    for (const auto& t : top_k(map, k)) marked[t.position] = true;
    std::string out;
    for (std::size_t i = 0; i < example.words.size(); ++i) {
        if (i) out.push_back(' ');
        const std::string word = detail::escape_html(example.words[i]);
        if (marked[i]) {
            char score[32];
            std::snprintf(score, sizeof score, "%.4f", map.word_scores[i].score);
            out += "<mark data-score=\"" + std::string(score) + "\">" + word + "</mark>";
        } else {
            out += word;
        }
    }
    return out;
}

}  // namespace veracity
