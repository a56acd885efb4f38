// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <cctype>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "veracity/corpus.hpp"
#include "veracity/error.hpp"

namespace veracity {

using TokenId = std::int32_t;

/// A word-level token: the original surface form plus its lowercase key.
struct Token {
    std::string surface;
    std::string key;
};

/// Splits on whitespace, then separates every punctuation character into its
/// own token. Letters, digits, apostrophes and non-ASCII bytes form words.
/// Keys are ASCII-lowercased.
inline std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> out;
    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        out.push_back({word, detail::lowercase(word)});
        word.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
        } else if (detail::is_word_char(c)) {
            word.push_back(ch);
        } else {
            flush();
            out.push_back({std::string(1, ch), std::string(1, ch)});
        }
    }
    flush();
    return out;
}

class Vocabulary {
   public:
    static constexpr TokenId pad_id = 0;
    static constexpr TokenId unk_id = 1;
    static constexpr std::string_view pad_token = "[PAD]";
    static constexpr std::string_view unk_token = "[UNK]";

    Vocabulary() : id_to_token_{std::string(pad_token), std::string(unk_token)} {}

    /// Builds from an ordered token list whose first two entries are the
    /// reserved tokens.
    static Vocabulary from_tokens(std::vector<std::string> tokens) {
        if (tokens.size() < 2 || tokens[0] != pad_token || tokens[1] != unk_token)
            throw ValidationError("vocabulary must start with " + std::string(pad_token) + " and " +
                                  std::string(unk_token));
        Vocabulary v;
        v.id_to_token_ = std::move(tokens);
        for (std::size_t i = 2; i < v.id_to_token_.size(); ++i) {
            if (!v.token_to_id_.emplace(v.id_to_token_[i], static_cast<TokenId>(i)).second)
                throw ValidationError("duplicate vocabulary token '" + v.id_to_token_[i] + "'");
        }
        return v;
    }

    TokenId id(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? unk_id : it->second;
    }

    const std::string& token(TokenId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
            throw ValidationError("token id " + std::to_string(id) + " out of range");
        return id_to_token_[static_cast<std::size_t>(id)];
    }

    std::size_t size() const { return id_to_token_.size(); }
    const std::vector<std::string>& tokens() const { return id_to_token_; }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.id_to_token_ == b.id_to_token_; }

   private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, TokenId> token_to_id_;
};

/// Frequency-ranked vocabulary (ties broken lexicographically) holding at
/// most max_size entries including the two reserved ones.
inline Vocabulary build_vocab(const Corpus& corpus, std::size_t max_size, std::size_t min_freq = 1) {
    if (corpus.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");
    if (max_size < 3) throw ValidationError("vocabulary max_size must be at least 3");
    std::map<std::string, std::size_t> freq;
    for (const auto& s : corpus.statements) {
        for (const auto& t : tokenize(s.text)) ++freq[t.key];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (auto& [tok, n] : freq) {
        if (n >= min_freq && tok != Vocabulary::pad_token && tok != Vocabulary::unk_token) ranked.emplace_back(tok, n);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > max_size - 2) ranked.resize(max_size - 2);

    std::vector<std::string> tokens{std::string(Vocabulary::pad_token), std::string(Vocabulary::unk_token)};
    for (auto& [tok, n] : ranked) tokens.push_back(std::move(tok));
    return Vocabulary::from_tokens(std::move(tokens));
}

/// One token per line; the line index is the id.
inline void write_vocab(std::ostream& out, const Vocabulary& vocab) {
    for (const auto& t : vocab.tokens()) out << t << '\n';
}

inline Vocabulary read_vocab(std::istream& in) {
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return Vocabulary::from_tokens(std::move(tokens));
}

struct EncodedExample {
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> mask;  // 1 for real tokens, a prefix
    std::vector<std::string> words;  // surface form per real token
    std::optional<Label> label;

    std::size_t length() const { return words.size(); }
};

/// Head-truncates to max_len and right-pads with pad_id.
inline EncodedExample encode(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
    if (max_len < 1) throw ValidationError("max_len must be at least 1");
    auto tokens = tokenize(text);
    if (tokens.empty()) throw ValidationError("text has no tokens");
    if (tokens.size() > max_len) tokens.resize(max_len);
    EncodedExample ex;
    ex.ids.assign(max_len, Vocabulary::pad_id);
    ex.mask.assign(max_len, 0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        ex.ids[i] = vocab.id(tokens[i].key);
        ex.mask[i] = 1;
        ex.words.push_back(std::move(tokens[i].surface));
    }
    return ex;
}

inline EncodedExample encode(const Statement& s, const Vocabulary& vocab, std::size_t max_len) {
    auto ex = encode(s.text, vocab, max_len);
    ex.label = s.label;
    return ex;
}

inline std::vector<EncodedExample> encode_all(const Corpus& corpus, const Vocabulary& vocab, std::size_t max_len) {
    std::vector<EncodedExample> out;
    out.reserve(corpus.size());
    for (const auto& s : corpus.statements) out.push_back(encode(s, vocab, max_len));
    return out;
}

/// Token strings of the non-pad positions.
inline std::vector<std::string> decode(const EncodedExample& ex, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ex.ids.size() && ex.mask[i]; ++i) out.push_back(vocab.token(ex.ids[i]));
    return out;
}

}  // namespace veracity
