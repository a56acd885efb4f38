// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint layout, all integers little-endian:
//
//   "VDCK"                       4-byte magic
//   u32 version                  currently 1
//   u32 n, n bytes               UTF-8 JSON config block (model config,
//                                vocabulary, cleaning rules, optional
//                                evaluation report)
//   u32 tensor count
//   per tensor:
//     u32 name length, name bytes
//     u32 rank, rank x u64 dims
//     prod(dims) x f32 data

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "veracity/corpus.hpp"
#include "veracity/error.hpp"
#include "veracity/metrics.hpp"
#include "veracity/model.hpp"
#include "veracity/tokenizer.hpp"

namespace veracity {

inline constexpr std::array<char, 4> kCheckpointMagic{'V', 'D', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public IoError {
   public:
    enum class Kind { bad_magic, version_mismatch, truncated_payload, missing_tensor, malformed };

    CheckpointError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
    Kind kind() const { return kind_; }

   private:
    Kind kind_;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"variant", to_string(c.variant)},
         {"vocab_size", c.vocab_size},
         {"max_len", c.max_len},
         {"dim", c.dim},
         {"heads", c.heads},
         {"key_dim", c.key_dim},
         {"ff_dim", c.ff_dim},
         {"layers", c.layers},
         {"dropout", c.dropout},
         {"attention_dropout", c.attention_dropout},
         {"head_dropout", c.head_dropout},
         {"head_hidden", c.head_hidden},
         {"layer_norm_eps", c.layer_norm_eps}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.variant = architecture_from_string(j.at("variant").get<std::string>());
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.dim = j.at("dim").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.key_dim = j.at("key_dim").get<std::size_t>();
    c.ff_dim = j.at("ff_dim").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.attention_dropout = j.at("attention_dropout").get<double>();
    c.head_dropout = j.at("head_dropout").get<double>();
    c.head_hidden = j.at("head_hidden").get<std::size_t>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
}

inline void to_json(nlohmann::json& j, const CleaningRules& r) {
    nlohmann::json delims = nlohmann::json::array();
    for (auto [open, close] : r.annotation_delimiters) delims.push_back(std::string{open, close});
    j = {{"filler_lexicon", r.filler_lexicon},
         {"annotation_delimiters", delims},
         {"interviewer_prefixes", r.interviewer_prefixes}};
}

inline void from_json(const nlohmann::json& j, CleaningRules& r) {
    r.filler_lexicon = j.at("filler_lexicon").get<std::set<std::string>>();
    r.annotation_delimiters.clear();
    for (const auto& d : j.at("annotation_delimiters")) {
        const auto pair = d.get<std::string>();
        if (pair.size() != 2) throw ValidationError("annotation delimiter entries must be two characters");
        r.annotation_delimiters.emplace_back(pair[0], pair[1]);
    }
    r.interviewer_prefixes = j.at("interviewer_prefixes").get<std::vector<std::string>>();
}

/// Everything a service needs to classify: weights, vocabulary, the
/// cleaning rules used at training time, and the last evaluation.
struct Checkpoint {
    Model model;
    Vocabulary vocab;
    CleaningRules cleaning;
    std::optional<MetricsReport> evaluation;
};

/// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline nlohmann::json config_block(const ModelConfig& config, const Vocabulary& vocab, const CleaningRules& cleaning,
                                   const std::optional<MetricsReport>& evaluation) {
    nlohmann::json j = {{"model", config}, {"vocabulary", vocab.tokens()}, {"cleaning", cleaning}};
    if (evaluation) j["evaluation"] = *evaluation;
    return j;
}

/// Digest of the model configuration, vocabulary and cleaning rules.
inline std::string config_digest(const ModelConfig& config, const Vocabulary& vocab, const CleaningRules& cleaning) {
    return fnv1a_hex(config_block(config, vocab, cleaning, std::nullopt).dump());
}

namespace detail {

class ByteWriter {
   public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    template <typename U>
    void le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
    std::string take() { return std::move(buf_); }

   private:
    std::string buf_;
};

class ByteReader {
   public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::string_view bytes(std::size_t n, const char* what) {
        if (n > data_.size() - pos_)
            throw CheckpointError(CheckpointError::Kind::truncated_payload,
                                  std::string("checkpoint truncated while reading ") + what);
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    template <typename U>
    U le(const char* what) {
        auto b = bytes(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(b[i])) << (8 * i);
        return v;
    }
    bool done() const { return pos_ == data_.size(); }
    std::size_t remaining() const { return data_.size() - pos_; }

   private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Model& model, const Vocabulary& vocab, const CleaningRules& cleaning = {},
                                        const std::optional<MetricsReport>& evaluation = std::nullopt) {
    if (vocab.size() != model.config().vocab_size)
        throw ValidationError("vocabulary has " + std::to_string(vocab.size()) + " tokens but the model expects " +
                              std::to_string(model.config().vocab_size));
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
    w.le<std::uint32_t>(kCheckpointVersion);
    const std::string config = config_block(model.config(), vocab, cleaning, evaluation).dump();
    w.le<std::uint32_t>(static_cast<std::uint32_t>(config.size()));
    w.bytes(config.data(), config.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(model.parameters().size()));
    for (const auto& p : model.parameters()) {
        w.le<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
        w.bytes(p.name.data(), p.name.size());
        w.le<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
        for (auto d : p.value.shape()) w.le<std::uint64_t>(d);
        for (float v : p.value.data()) w.f32(v);
    }
    return w.take();
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
    using Kind = CheckpointError::Kind;
    detail::ByteReader r(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) != 0)
        throw CheckpointError(Kind::bad_magic, "not a checkpoint: bad magic");
    r.bytes(4, "magic");
    const auto version = r.le<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw CheckpointError(Kind::version_mismatch, "checkpoint version " + std::to_string(version) +
                                                          " is not supported (expected " +
                                                          std::to_string(kCheckpointVersion) + ")");
    const auto config_len = r.le<std::uint32_t>("config length");
    const auto config_text = r.bytes(config_len, "config block");

    ModelConfig model_config;
    Vocabulary vocab;
    CleaningRules cleaning;
    std::optional<MetricsReport> evaluation;
    try {
        const auto config = nlohmann::json::parse(config_text);
        model_config = config.at("model").get<ModelConfig>();
        model_config.validate();
        vocab = Vocabulary::from_tokens(config.at("vocabulary").get<std::vector<std::string>>());
        cleaning = config.at("cleaning").get<CleaningRules>();
        cleaning.validate();
        if (config.contains("evaluation")) evaluation = config.at("evaluation").get<MetricsReport>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(Kind::malformed, std::string("checkpoint config block: ") + e.what());
    } catch (const ValidationError& e) {
        throw CheckpointError(Kind::malformed, std::string("checkpoint config block: ") + e.what());
    }
    if (vocab.size() != model_config.vocab_size)
        throw CheckpointError(Kind::malformed, "checkpoint vocabulary size disagrees with model config");
    Checkpoint ck{Model::skeleton(model_config), std::move(vocab), std::move(cleaning), std::move(evaluation)};

    const auto count = r.le<std::uint32_t>("tensor count");
    std::set<std::string> seen;
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = r.le<std::uint32_t>("tensor name length");
        const std::string name(r.bytes(name_len, "tensor name"));
        const auto rank = r.le<std::uint32_t>("tensor rank");
        if (rank > 8) throw CheckpointError(Kind::malformed, "tensor '" + name + "' has implausible rank");
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::size_t>(r.le<std::uint64_t>("tensor dims")));
        if (!ck.model.has_parameter(name))
            throw CheckpointError(Kind::malformed, "unexpected tensor '" + name + "'");
        if (!seen.insert(name).second) throw CheckpointError(Kind::malformed, "duplicate tensor '" + name + "'");
        auto& target = ck.model.parameter(name);
        if (target.shape() != shape)
            throw CheckpointError(Kind::malformed, "tensor '" + name + "' has shape " + to_string(shape) +
                                                       ", config implies " + to_string(target.shape()));
        const std::size_t n = numel(shape);
        if (n > r.remaining() / 4)
            throw CheckpointError(Kind::truncated_payload, "checkpoint truncated inside tensor '" + name + "'");
        auto data = r.bytes(n * 4, "tensor data");
        auto out = target.mutable_data();
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t bits = 0;
            for (std::size_t b = 0; b < 4; ++b)
                bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[i * 4 + b])) << (8 * b);
            out[i] = std::bit_cast<float>(bits);
        }
    }
    for (const auto& p : ck.model.parameters())
        if (!seen.count(p.name)) throw CheckpointError(Kind::missing_tensor, "checkpoint lacks tensor '" + p.name + "'");
    if (!r.done()) throw CheckpointError(Kind::malformed, "trailing bytes after tensor table");
    ck.model.set_mode(Mode::infer);
    return ck;
}

inline void save_checkpoint(const Model& model, const Vocabulary& vocab, const std::filesystem::path& path,
                            const CleaningRules& cleaning = {}, const std::optional<MetricsReport>& evaluation = std::nullopt) {
    const std::string bytes = serialize_checkpoint(model, vocab, cleaning, evaluation);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace veracity
