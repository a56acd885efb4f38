// SPDX-License-Identifier: Apache-2.0
#pragma once

// Statement corpora in the ID,Text,GT layout: CSV ingest and export,
// transcript cleaning, train/test splitting, label-balance measurement
// and a synthetic generator for desk-scale experiments.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "veracity/error.hpp"
#include "veracity/random.hpp"

namespace veracity {

/// Ground truth for a statement. Deceptive is the positive class.
enum class Label : int { truthful = 0, deceptive = 1 };

inline Label label_from_int(long long v) {
    if (v != 0 && v != 1) throw ValidationError("label must be 0 or 1, got " + std::to_string(v));
    return static_cast<Label>(v);
}

inline int to_int(Label l) { return static_cast<int>(l); }

struct Statement {
    std::uint64_t id = 0;
    std::string text;
    Label label = Label::truthful;

    friend bool operator==(const Statement&, const Statement&) = default;
};

struct Corpus {
    std::vector<Statement> statements;
    std::string provenance;

    std::size_t size() const { return statements.size(); }
    bool empty() const { return statements.empty(); }

    std::vector<int> labels() const {
        std::vector<int> out;
        out.reserve(statements.size());
        for (const auto& s : statements) out.push_back(to_int(s.label));
        return out;
    }

    /// Non-empty, ids positive and distinct, no empty text.
    bool is_valid() const {
        if (statements.empty()) return false;
        std::set<std::uint64_t> seen;
        for (const auto& s : statements) {
            if (s.id == 0 || s.text.empty() || !seen.insert(s.id).second) return false;
        }
        return true;
    }

    void validate() const {
        if (statements.empty()) throw ValidationError("corpus is empty");
        std::set<std::uint64_t> seen;
        for (const auto& s : statements) {
            if (s.id == 0) throw ValidationError("statement ids must be positive");
            if (s.text.empty()) throw ValidationError("statement " + std::to_string(s.id) + " has empty text");
            if (!seen.insert(s.id).second) throw ValidationError("duplicate statement id " + std::to_string(s.id));
        }
    }

    friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// Header names of the three required columns.
struct ColumnLayout {
    std::string id = "ID";
    std::string text = "Text";
    std::string label = "GT";
    char delimiter = ',';
};

namespace detail {

struct CsvRecord {
    std::vector<std::string> fields;
    std::size_t line = 0;  // 1-based line where the record starts
};

// RFC 4180 reader: quoted fields may hold delimiters, doubled quotes and
// newlines. Returns nullopt at end of input.
inline std::optional<CsvRecord> read_record(std::istream& in, char delim, std::size_t& line) {
    if (in.peek() == std::char_traits<char>::eof()) return std::nullopt;
    CsvRecord rec;
    rec.line = line;
    std::string field;
    bool quoted = false;
    bool was_quoted = false;
    for (;;) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) {
            if (quoted) throw ValidationError("line " + std::to_string(rec.line) + ": unterminated quoted field");
            rec.fields.push_back(std::move(field));
            return rec;
        }
        const char ch = static_cast<char>(c);
        if (quoted) {
            if (ch == '"') {
                if (in.peek() == '"') {
                    in.get();
                    field.push_back('"');
                } else {
                    quoted = false;
                }
            } else {
                if (ch == '\n') ++line;
                field.push_back(ch);
            }
            continue;
        }
        if (ch == '"') {
            if (!field.empty() || was_quoted)
                throw ValidationError("line " + std::to_string(line) + ": stray quote inside unquoted field");
            quoted = true;
            was_quoted = true;
        } else if (ch == delim) {
            rec.fields.push_back(std::move(field));
            field.clear();
            was_quoted = false;
        } else if (ch == '\r' && in.peek() == '\n') {
            // folded into the following newline
        } else if (ch == '\n') {
            ++line;
            rec.fields.push_back(std::move(field));
            return rec;
        } else {
            if (was_quoted)
                throw ValidationError("line " + std::to_string(line) + ": characters after closing quote");
            field.push_back(ch);
        }
    }
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline long long parse_integer(const std::string& raw, std::size_t line, const char* what) {
    const std::string s = trim(raw);
    if (s.empty()) throw ValidationError("line " + std::to_string(line) + ": empty " + what);
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &pos);
    } catch (const std::exception&) {
        throw ValidationError("line " + std::to_string(line) + ": " + what + " is not an integer: '" + s + "'");
    }
    if (pos != s.size())
        throw ValidationError("line " + std::to_string(line) + ": " + what + " is not an integer: '" + s + "'");
    return v;
}

inline std::string lowercase(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace detail

/// Parses a delimiter-separated table whose header names the id, text and
/// label columns. Extra columns are ignored. Blank lines are skipped.
/// An input with only a header yields an empty (and therefore invalid)
/// corpus rather than an error.
inline Corpus parse_corpus(std::istream& in, const ColumnLayout& layout = {}) {
    std::size_t line = 1;
    auto header = detail::read_record(in, layout.delimiter, line);
    if (!header) throw ValidationError("line 1: missing header row");

    auto column = [&](const std::string& name) {
        for (std::size_t i = 0; i < header->fields.size(); ++i) {
            std::string h = detail::trim(header->fields[i]);
            if (i == 0 && h.rfind("\xEF\xBB\xBF", 0) == 0) h.erase(0, 3);  // UTF-8 BOM
            if (h == name) return i;
        }
        throw ValidationError("line 1: header has no '" + name + "' column");
    };
    const std::size_t id_col = column(layout.id);
    const std::size_t text_col = column(layout.text);
    const std::size_t label_col = column(layout.label);
    const std::size_t needed = std::max({id_col, text_col, label_col}) + 1;

    Corpus corpus;
    while (auto rec = detail::read_record(in, layout.delimiter, line)) {
        if (rec->fields.size() == 1 && detail::trim(rec->fields[0]).empty()) continue;
        if (rec->fields.size() < needed)
            throw ValidationError("line " + std::to_string(rec->line) + ": expected at least " +
                                  std::to_string(needed) + " fields, found " +
                                  std::to_string(rec->fields.size()));
        const long long id = detail::parse_integer(rec->fields[id_col], rec->line, "ID");
        if (id <= 0) throw ValidationError("line " + std::to_string(rec->line) + ": ID must be positive");
        const long long gt = detail::parse_integer(rec->fields[label_col], rec->line, "GT");
        if (gt != 0 && gt != 1)
            throw ValidationError("line " + std::to_string(rec->line) + ": GT must be 0 or 1, got " +
                                  std::to_string(gt));
        corpus.statements.push_back(
            {static_cast<std::uint64_t>(id), rec->fields[text_col], static_cast<Label>(gt)});
    }
    return corpus;
}

inline Corpus parse_corpus(std::string_view text, const ColumnLayout& layout = {}) {
    std::istringstream in{std::string(text)};
    return parse_corpus(in, layout);
}

/// Writes the ID,Text,GT layout. Text is always quoted so parse_corpus
/// reproduces it exactly.
inline void write_corpus(std::ostream& out, const Corpus& corpus, const ColumnLayout& layout = {}) {
    const char d = layout.delimiter;
    out << layout.id << d << layout.text << d << layout.label << '\n';
    for (const auto& s : corpus.statements) {
        out << s.id << d << '"';
        for (char c : s.text) {
            if (c == '"') out << '"';
            out << c;
        }
        out << '"' << d << to_int(s.label) << '\n';
    }
}

inline std::string serialize_corpus(const Corpus& corpus, const ColumnLayout& layout = {}) {
    std::ostringstream out;
    write_corpus(out, corpus, layout);
    return out.str();
}

struct CleaningRules {
    std::set<std::string> filler_lexicon{"uhm", "um", "err", "erm", "uh"};
    std::vector<std::pair<char, char>> annotation_delimiters{{'(', ')'}, {'[', ']'}};
    std::vector<std::string> interviewer_prefixes{"INTERVIEWER:", "INTERVIEWER :", "Q:"};

    void validate() const {
        if (filler_lexicon.empty()) throw ValidationError("filler lexicon must not be empty");
        for (const auto& f : filler_lexicon) {
            if (f.empty() || f != detail::lowercase(f))
                throw ValidationError("filler lexicon entries must be non-empty lowercase tokens");
        }
        for (auto [open, close] : annotation_delimiters) {
            if (open == close || open == '\0' || close == '\0')
                throw ValidationError("annotation delimiters must be distinct opening/closing characters");
        }
        for (const auto& p : interviewer_prefixes) {
            if (p.empty()) throw ValidationError("interviewer prefixes must be non-empty");
        }
    }
};

namespace detail {

// Removes every matched open/close span (outermost first) for one pair.
// Unmatched delimiters stay in place.
inline std::string strip_spans(const std::string& s, char open, char close) {
    std::vector<std::pair<std::size_t, std::size_t>> matched;
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == open) {
            stack.push_back(i);
        } else if (s[i] == close && !stack.empty()) {
            matched.emplace_back(stack.back(), i);
            stack.pop_back();
        }
    }
    if (matched.empty()) return s;
    // Keep only outermost spans; an unmatched opener never swallows text.
    std::sort(matched.begin(), matched.end());
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (auto span : matched) {
        if (spans.empty() || span.first > spans.back().second) spans.push_back(span);
    }
    std::string out;
    out.reserve(s.size());
    std::size_t pos = 0;
    for (auto [b, e] : spans) {
        out.append(s, pos, b - pos);
        out.push_back(' ');
        pos = e + 1;
    }
    out.append(s, pos, std::string::npos);
    return out;
}

inline bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80 || c == '\''; }

inline std::string strip_punct(std::string_view w) {
    std::size_t b = 0, e = w.size();
    while (b < e && !is_word_char(static_cast<unsigned char>(w[b]))) ++b;
    while (e > b && !is_word_char(static_cast<unsigned char>(w[e - 1]))) --e;
    return std::string(w.substr(b, e - b));
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) != std::tolower(static_cast<unsigned char>(prefix[i])))
            return false;
    }
    return true;
}

inline std::string clean_once(const std::string& raw, const CleaningRules& rules) {
    std::string text = raw;
    for (auto [open, close] : rules.annotation_delimiters) text = strip_spans(text, open, close);

    std::string out;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        std::istringstream words(line);
        std::string word;
        std::string kept;
        while (words >> word) {
            const std::string bare = lowercase(strip_punct(word));
            if (!bare.empty() && rules.filler_lexicon.count(bare)) continue;
            if (!kept.empty()) kept.push_back(' ');
            kept += word;
        }
        bool interviewer = false;
        for (const auto& p : rules.interviewer_prefixes) interviewer = interviewer || starts_with_ci(kept, p);
        if (interviewer || kept.empty()) continue;
        if (!out.empty()) out.push_back(' ');
        out += kept;
    }
    return out;
}

}  // namespace detail

/// Strips annotation spans, filler words and interviewer lines, then
/// collapses whitespace. Applied to a fixed point, so cleaning is
/// idempotent. Throws DegenerateInputError when nothing survives.
inline std::string clean_transcript(const std::string& raw, const CleaningRules& rules = {}) {
    rules.validate();
    std::string current = detail::clean_once(raw, rules);
    for (;;) {
        std::string next = detail::clean_once(current, rules);
        if (next == current) break;
        current = std::move(next);
    }
    if (current.empty()) throw DegenerateInputError("statement is empty after cleaning");
    return current;
}

/// Number of statements assigned to the training part.
inline std::size_t train_count(std::size_t n, double train_fraction) {
    return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
}

/// Seeded shuffle, then the first floor(fraction * N) statements train and
/// the remainder test.
inline std::pair<Corpus, Corpus> split(const Corpus& corpus, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ValidationError("train fraction must lie strictly between 0 and 1");
    if (corpus.empty()) throw ValidationError("cannot split an empty corpus");
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    shuffle(order, rng);

    const std::size_t n_train = train_count(corpus.size(), train_fraction);
    std::pair<Corpus, Corpus> parts;
    parts.first.provenance = corpus.provenance + " [train split]";
    parts.second.provenance = corpus.provenance + " [test split]";
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_train ? parts.first : parts.second).statements.push_back(corpus.statements[order[i]]);
    }
    return parts;
}

/// 1 - sum of squared class proportions; 0.5 for a perfectly balanced
/// binary set.
inline double gini_index(const std::vector<int>& labels) {
    if (labels.empty()) throw ValidationError("gini index of an empty label list");
    std::size_t pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw ValidationError("labels must be 0 or 1");
        pos += static_cast<std::size_t>(l);
    }
    const double p = static_cast<double>(pos) / static_cast<double>(labels.size());
    return 1.0 - (p * p + (1.0 - p) * (1.0 - p));
}

struct SignalWords {
    std::vector<std::string> truthful;
    std::vector<std::string> deceptive;
};

inline SignalWords default_signal_words() {
    return {{"remember", "noticed", "drove", "receipt", "saw", "parked"},
            {"honestly", "swear", "alibi", "never", "believe", "trust"}};
}

inline std::vector<std::string> default_noise_vocab() {
    return {"the",     "a",      "i",       "was",     "went",    "to",     "we",      "and",
            "then",    "after",  "before",  "shop",    "friend",  "house",  "evening", "morning",
            "sunday",  "monday", "car",     "street",  "walked",  "home",   "with",    "my",
            "brother", "sister", "it",      "on",      "that",    "day",    "there",   "at",
            "around",  "about",  "ten",     "o'clock", "station", "bus",    "stayed",  "for",
            "an",      "hour",   "dinner",  "phone",   "called",  "back",   "office",  "later",
            "park",    "near",   "road",    "quite",   "busy",    "people", "outside", "inside",
            "weekend", "coffee", "cathedral", "sang",  "met",     "left"};
}

/// Statement shape for synth_corpus: inclusive ranges for the number of
/// noise words and planted signal words per statement.
struct SynthShape {
    std::size_t min_noise = 4, max_noise = 8;
    std::size_t min_signal = 2, max_signal = 3;

    void validate() const {
        if (min_noise > max_noise) throw ValidationError("synth: min_noise exceeds max_noise");
        if (min_signal < 1) throw ValidationError("synth: at least one signal word per statement");
        if (min_signal > max_signal) throw ValidationError("synth: min_signal exceeds max_signal");
    }
};

/// Balanced synthetic corpus: every statement is seeded noise text with
/// signal words of its own class planted at random positions.
inline Corpus synth_corpus(std::size_t n, const SignalWords& signal, const std::vector<std::string>& noise_vocab,
                           std::uint64_t seed, const SynthShape& shape = {}) {
    if (n == 0) throw ValidationError("synthetic corpus size must be positive");
    shape.validate();
    if (signal.truthful.empty() || signal.deceptive.empty())
        throw ValidationError("signal word sets must be non-empty");
    if (noise_vocab.empty()) throw ValidationError("noise vocabulary must be non-empty");
    std::set<std::string> truthful(signal.truthful.begin(), signal.truthful.end());
    std::set<std::string> all_signal = truthful;
    for (const auto& w : signal.deceptive) {
        if (truthful.count(w)) throw ValidationError("signal word '" + w + "' appears in both classes");
        all_signal.insert(w);
    }
    for (const auto& w : noise_vocab) {
        if (all_signal.count(w)) throw ValidationError("noise word '" + w + "' is also a signal word");
    }

    Rng rng(seed);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
    shuffle(labels, rng);

    Corpus corpus;
    corpus.provenance = "synthetic (n=" + std::to_string(n) + ", seed=" + std::to_string(seed) + ")";
    for (std::size_t i = 0; i < n; ++i) {
        const auto& planted = labels[i] == 1 ? signal.deceptive : signal.truthful;
        const std::size_t length = shape.min_noise + rng.index(shape.max_noise - shape.min_noise + 1);
        std::vector<std::string> words;
        for (std::size_t k = 0; k < length; ++k) words.push_back(noise_vocab[rng.index(noise_vocab.size())]);
        const std::size_t n_signal = shape.min_signal + rng.index(shape.max_signal - shape.min_signal + 1);
        for (std::size_t k = 0; k < n_signal; ++k) {
            const auto& w = planted[rng.index(planted.size())];
            words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.index(words.size() + 1)), w);
        }
        std::string text;
        if (words.empty()) words.push_back(planted.front());
        for (const auto& w : words) {
            if (!text.empty()) text.push_back(' ');
            text += w;
        }
        text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
        text.push_back('.');
        corpus.statements.push_back({i + 1, std::move(text), static_cast<Label>(labels[i])});
    }
    return corpus;
}

}  // namespace veracity
