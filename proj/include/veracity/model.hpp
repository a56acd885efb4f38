// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "veracity/error.hpp"
#include "veracity/random.hpp"
#include "veracity/tensor.hpp"
#include "veracity/tokenizer.hpp"

namespace veracity {

enum class Architecture { custom, distil };

inline const char* to_string(Architecture a) { return a == Architecture::custom ? "custom" : "distil"; }

inline Architecture architecture_from_string(const std::string& s) {
    if (s == "custom") return Architecture::custom;
    if (s == "distil") return Architecture::distil;
    throw ValidationError("unknown architecture '" + s + "' (expected custom or distil)");
}

/// Hyperparameters of either encoder variant. Attention projects dim into
/// heads * key_dim and back, so the projection width need not equal dim.
struct ModelConfig {
    Architecture variant = Architecture::custom;
    std::size_t vocab_size = 6788;
    std::size_t max_len = 200;
    std::size_t dim = 32;
    std::size_t heads = 2;
    std::size_t key_dim = 32;
    std::size_t ff_dim = 32;
    std::size_t layers = 1;
    double dropout = 0.1;            // residual branches (and embeddings for distil)
    double attention_dropout = 0.0;  // attention probabilities
    double head_dropout = 0.1;       // before each classifier dense layer
    std::size_t head_hidden = 16;
    double layer_norm_eps = 1e-6;

    /// One block of dim 32 over a 6788-token vocabulary and 200 positions.
    static ModelConfig custom_defaults() { return {}; }

    /// Six 768-wide blocks, 12 heads, 3072 hidden, GELU throughout.
    static ModelConfig distil_defaults() {
        ModelConfig c;
        c.variant = Architecture::distil;
        c.vocab_size = 30522;
        c.max_len = 512;
        c.dim = 768;
        c.heads = 12;
        c.key_dim = 64;
        c.ff_dim = 3072;
        c.layers = 6;
        c.dropout = 0.1;
        c.attention_dropout = 0.1;
        c.head_dropout = 0.2;
        c.head_hidden = 768;
        c.layer_norm_eps = 1e-12;
        return c;
    }

    static ModelConfig defaults(Architecture a) { return a == Architecture::custom ? custom_defaults() : distil_defaults(); }

    void validate() const {
        auto positive = [](std::size_t v, const char* name) {
            if (v < 1) throw ValidationError(std::string("model config: ") + name + " must be at least 1");
        };
        positive(vocab_size, "vocab_size");
        positive(max_len, "max_len");
        positive(dim, "dim");
        positive(heads, "heads");
        positive(key_dim, "key_dim");
        positive(ff_dim, "ff_dim");
        positive(layers, "layers");
        positive(head_hidden, "head_hidden");
        for (auto [v, name] : {std::pair{dropout, "dropout"}, std::pair{attention_dropout, "attention_dropout"},
                               std::pair{head_dropout, "head_dropout"}}) {
            if (!(v >= 0.0 && v < 1.0)) throw ValidationError(std::string("model config: ") + name + " must lie in [0, 1)");
        }
        if (!(layer_norm_eps > 0.0)) throw ValidationError("model config: layer_norm_eps must be positive");
        if (variant == Architecture::custom && layers != 1)
            throw ValidationError("model config: the custom architecture has exactly one block");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerCount {
    std::string layer;
    std::size_t params = 0;
};

struct ParamCount {
    std::vector<LayerCount> layers;
    std::size_t total = 0;

    std::size_t of(const std::string& layer) const {
        for (const auto& l : layers)
            if (l.layer == layer) return l.params;
        throw ValidationError("no layer named '" + layer + "'");
    }
};

namespace detail {

inline std::string block_group(const ModelConfig& c, std::size_t i) {
    return c.layers == 1 ? "Transformer Block" : "Transformer Block " + std::to_string(i + 1);
}

}  // namespace detail

inline constexpr const char* kEmbeddingGroup = "Token and Position Embedding";
inline constexpr const char* kHiddenDenseGroup = "Dense 2";
inline constexpr const char* kOutputDenseGroup = "Dense 3";

/// Parameter counts straight from the configuration, grouped like a layer
/// summary table. Independent of any built model.
inline ParamCount param_count(const ModelConfig& c) {
    c.validate();
    const std::size_t proj = c.heads * c.key_dim;
    ParamCount pc;
    std::size_t emb = (c.vocab_size + c.max_len) * c.dim;
    if (c.variant == Architecture::distil) emb += 2 * c.dim;
    pc.layers.push_back({kEmbeddingGroup, emb});
    const std::size_t attention = 3 * (c.dim * proj + proj) + (proj * c.dim + c.dim);
    const std::size_t ffn = (c.dim * c.ff_dim + c.ff_dim) + (c.ff_dim * c.dim + c.dim);
    const std::size_t norms = 2 * 2 * c.dim;
    for (std::size_t i = 0; i < c.layers; ++i) pc.layers.push_back({detail::block_group(c, i), attention + ffn + norms});
    pc.layers.push_back({kHiddenDenseGroup, c.dim * c.head_hidden + c.head_hidden});
    pc.layers.push_back({kOutputDenseGroup, c.head_hidden + 1});
    for (const auto& l : pc.layers) pc.total += l.params;
    return pc;
}

template <typename T>
struct Parameter {
    std::string name;
    std::string group;  // layer-summary row this parameter belongs to
    BasicTensor<T> value;
    bool decay = true;  // false for biases and layer-norm parameters
};

enum class Mode { train, infer };

/// Captured activations of one example.
template <typename T>
struct ActivationTrace {
    /// attention[layer][head] is an L x L row-stochastic matrix.
    std::vector<std::vector<BasicTensor<T>>> attention;
    /// Summed token + position embeddings, L x dim.
    BasicTensor<T> embedding_output;
    /// Number of real (non-pad) positions.
    std::size_t length = 0;

    /// d(differentiated scalar)/d(embedding_output), zeros before backward.
    std::vector<T> embedding_gradient() const { return embedding_output.grad(); }
};

struct ForwardOptions {
    bool training = false;      // enables dropout
    bool track_params = false;  // record parameter gradients
    bool tap_embedding = false; // record gradients at the embedding output
};

template <typename T>
class BasicModel {
   public:
    static BasicModel build(const ModelConfig& config, std::uint64_t seed) {
        config.validate();
        BasicModel m(config);
        Rng rng(seed);
        m.init(rng);
        return m;
    }

    const ModelConfig& config() const { return config_; }
    Mode mode() const { return mode_; }
    void set_mode(Mode m) { mode_ = m; }

    std::vector<Parameter<T>>& parameters() { return params_; }
    const std::vector<Parameter<T>>& parameters() const { return params_; }

    BasicTensor<T>& parameter(const std::string& name) { return params_.at(index(name)).value; }
    const BasicTensor<T>& parameter(const std::string& name) const { return params_.at(index(name)).value; }

    bool has_parameter(const std::string& name) const { return index_.count(name) != 0; }

    /// Counts read off the built parameter shapes.
    ParamCount param_count() const {
        ParamCount pc;
        for (const auto& p : params_) {
            auto it = std::find_if(pc.layers.begin(), pc.layers.end(), [&](const auto& l) { return l.layer == p.group; });
            if (it == pc.layers.end()) {
                pc.layers.push_back({p.group, 0});
                it = std::prev(pc.layers.end());
            }
            it->params += p.value.size();
            pc.total += p.value.size();
        }
        return pc;
    }

    void zero_grad() {
        for (auto& p : params_) p.value.zero_grad();
    }

    template <typename U>
    BasicModel<U> cast() const {
        BasicModel<U> out = BasicModel<U>::skeleton(config_);
        for (std::size_t i = 0; i < params_.size(); ++i)
            out.parameters()[i].value = BasicTensor<U>(params_[i].value.shape(),
                                                       std::vector<U>(params_[i].value.data().begin(),
                                                                      params_[i].value.data().end()),
                                                       true);
        out.set_mode(mode_);
        return out;
    }

    /// Model with every parameter allocated and zeroed; used by loaders
    /// that fill values afterwards.
    static BasicModel skeleton(const ModelConfig& config) {
        config.validate();
        BasicModel m(config);
        m.allocate();
        return m;
    }

    /// Probability of the deceptive class for one example as a graph node,
    /// optionally filling trace. rng is required when options.training.
    BasicTensor<T> forward_example(const EncodedExample& ex, const ForwardOptions& options, Rng* rng,
                                   ActivationTrace<T>* trace) const {
        const auto& c = config_;
        const std::size_t L = ex.ids.size();
        if (L == 0 || L > c.max_len)
            throw ValidationError("sequence length " + std::to_string(L) + " outside [1, " + std::to_string(c.max_len) + "]");
        if (ex.mask.size() != L) throw ValidationError("mask length differs from id length");
        std::size_t real = 0;
        while (real < L && ex.mask[real]) ++real;
        for (std::size_t i = real; i < L; ++i)
            if (ex.mask[i]) throw ValidationError("mask must be a prefix of ones");
        if (real == 0) throw ValidationError("example has no real tokens");
        for (TokenId id : ex.ids)
            if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size)
                throw ValidationError("token id " + std::to_string(id) + " outside vocabulary of " +
                                      std::to_string(c.vocab_size));
        if (options.training && rng == nullptr) throw ValidationError("training-mode forward needs a random generator");
        Rng dummy(0);
        Rng& r = rng ? *rng : dummy;
        const bool train = options.training;

        auto P = [&](const std::string& name) {
            const auto& t = params_[index(name)].value;
            return options.track_params ? t : t.detached();
        };

        BasicTensor<T> tokens = embedding(P("embedding.token"), std::span<const TokenId>(ex.ids));
        BasicTensor<T> positions = slice(P("embedding.position"), 0, 0, L);
        BasicTensor<T> h = add(tokens, positions);
        if (c.variant == Architecture::distil)
            h = layer_norm(h, P("embedding.norm.gain"), P("embedding.norm.bias"), static_cast<T>(c.layer_norm_eps));
        if (options.tap_embedding && !h.requires_grad()) h.set_requires_grad(true);
        if (trace) {
            trace->embedding_output = h;
            trace->length = real;
            trace->attention.assign(c.layers, {});
        }
        if (c.variant == Architecture::distil) h = dropout(h, c.dropout, train, r);

        std::vector<T> bias_values(L, T(0));
        for (std::size_t i = real; i < L; ++i) bias_values[i] = T(-1e9);
        const BasicTensor<T> key_bias(Shape{L}, std::move(bias_values));
        const T score_scale = T(1) / std::sqrt(static_cast<T>(c.key_dim));
        const T eps = static_cast<T>(c.layer_norm_eps);

        for (std::size_t layer = 0; layer < c.layers; ++layer) {
            const std::string b = "block" + std::to_string(layer) + ".";
            auto project = [&](const std::string& name) {
                return add(matmul(h, P(b + name + ".weight")), P(b + name + ".bias"));
            };
            const auto q = project("attention.query");
            const auto k = project("attention.key");
            const auto v = project("attention.value");
            std::vector<BasicTensor<T>> contexts;
            for (std::size_t head = 0; head < c.heads; ++head) {
                const std::size_t off = head * c.key_dim;
                const auto qh = slice(q, 1, off, c.key_dim);
                const auto kh = slice(k, 1, off, c.key_dim);
                const auto vh = slice(v, 1, off, c.key_dim);
                auto weights = softmax_rows(add(scale(matmul(qh, transpose(kh)), score_scale), key_bias));
                if (trace) trace->attention[layer].push_back(weights);
                weights = dropout(weights, c.attention_dropout, train, r);
                contexts.push_back(matmul(weights, vh));
            }
            const auto context = c.heads == 1 ? contexts.front() : concat(contexts, 1);
            const auto attended = add(matmul(context, P(b + "attention.output.weight")), P(b + "attention.output.bias"));
            h = layer_norm(add(h, dropout(attended, c.dropout, train, r)), P(b + "norm1.gain"), P(b + "norm1.bias"), eps);
            const auto inner = gelu(add(matmul(h, P(b + "ffn.inner.weight")), P(b + "ffn.inner.bias")));
            const auto outer = add(matmul(inner, P(b + "ffn.outer.weight")), P(b + "ffn.outer.bias"));
            h = layer_norm(add(h, dropout(outer, c.dropout, train, r)), P(b + "norm2.gain"), P(b + "norm2.bias"), eps);
        }

        auto pooled = reshape(mean(slice(h, 0, 0, real), 0), {1, c.dim});
        pooled = dropout(pooled, c.head_dropout, train, r);
        auto hidden = gelu(add(matmul(pooled, P("head.hidden.weight")), P("head.hidden.bias")));
        hidden = dropout(hidden, c.head_dropout, train, r);
        const auto logit = add(matmul(hidden, P("head.output.weight")), P("head.output.bias"));
        return sigmoid(reshape(logit, {1}));
    }

   private:
    template <typename>
    friend class BasicModel;

    explicit BasicModel(ModelConfig config) : config_(std::move(config)) {}

    std::size_t index(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("model has no parameter '" + name + "'");
        return it->second;
    }

    void add_param(std::string name, std::string group, Shape shape, bool decay) {
        index_[name] = params_.size();
        params_.push_back({std::move(name), std::move(group), BasicTensor<T>::zeros(std::move(shape), true), decay});
    }

    void allocate() {
        const auto& c = config_;
        const std::size_t proj = c.heads * c.key_dim;
        add_param("embedding.token", kEmbeddingGroup, {c.vocab_size, c.dim}, true);
        add_param("embedding.position", kEmbeddingGroup, {c.max_len, c.dim}, true);
        if (c.variant == Architecture::distil) {
            add_param("embedding.norm.gain", kEmbeddingGroup, {c.dim}, false);
            add_param("embedding.norm.bias", kEmbeddingGroup, {c.dim}, false);
        }
        for (std::size_t i = 0; i < c.layers; ++i) {
            const std::string b = "block" + std::to_string(i) + ".";
            const std::string g = detail::block_group(c, i);
            for (const char* name : {"query", "key", "value"}) {
                add_param(b + "attention." + name + ".weight", g, {c.dim, proj}, true);
                add_param(b + "attention." + name + ".bias", g, {proj}, false);
            }
            add_param(b + "attention.output.weight", g, {proj, c.dim}, true);
            add_param(b + "attention.output.bias", g, {c.dim}, false);
            add_param(b + "norm1.gain", g, {c.dim}, false);
            add_param(b + "norm1.bias", g, {c.dim}, false);
            add_param(b + "ffn.inner.weight", g, {c.dim, c.ff_dim}, true);
            add_param(b + "ffn.inner.bias", g, {c.ff_dim}, false);
            add_param(b + "ffn.outer.weight", g, {c.ff_dim, c.dim}, true);
            add_param(b + "ffn.outer.bias", g, {c.dim}, false);
            add_param(b + "norm2.gain", g, {c.dim}, false);
            add_param(b + "norm2.bias", g, {c.dim}, false);
        }
        add_param("head.hidden.weight", kHiddenDenseGroup, {c.dim, c.head_hidden}, true);
        add_param("head.hidden.bias", kHiddenDenseGroup, {c.head_hidden}, false);
        add_param("head.output.weight", kOutputDenseGroup, {c.head_hidden, 1}, true);
        add_param("head.output.bias", kOutputDenseGroup, {1}, false);
    }

    // Truncated normal (sigma 0.02) weights, zero biases, unit gains.
    void init(Rng& rng) {
        allocate();
        for (auto& p : params_) {
            auto values = p.value.mutable_data();
            const bool is_gain = p.name.ends_with(".gain");
            const bool is_bias = p.name.ends_with(".bias");
            for (auto& v : values) v = is_gain ? T(1) : is_bias ? T(0) : static_cast<T>(rng.truncated_normal(0.02));
        }
    }

    ModelConfig config_;
    Mode mode_ = Mode::infer;
    std::vector<Parameter<T>> params_;
    std::map<std::string, std::size_t> index_;
};

using Model = BasicModel<float>;

template <typename T>
struct ForwardResult {
    std::vector<double> probabilities;  // P(deceptive) per example
    std::vector<ActivationTrace<T>> traces;
};

/// Batch forward in the model's current mode. Infer mode is deterministic
/// and never touches parameter gradients; train mode needs rng for dropout.
template <typename T>
ForwardResult<T> forward(const BasicModel<T>& model, std::span<const EncodedExample> batch, Rng* rng = nullptr) {
    ForwardResult<T> out;
    ForwardOptions opts;
    opts.training = model.mode() == Mode::train;
    for (const auto& ex : batch) {
        ActivationTrace<T> trace;
        const auto p = model.forward_example(ex, opts, rng, &trace);
        out.probabilities.push_back(static_cast<double>(p.item()));
        out.traces.push_back(std::move(trace));
    }
    return out;
}

template <typename T>
ForwardResult<T> forward(const BasicModel<T>& model, const std::vector<EncodedExample>& batch, Rng* rng = nullptr) {
    return forward(model, std::span<const EncodedExample>(batch), rng);
}

/// Infer-mode probabilities only.
template <typename T>
std::vector<double> predict(const BasicModel<T>& model, std::span<const EncodedExample> batch) {
    std::vector<double> out;
    out.reserve(batch.size());
    for (const auto& ex : batch) out.push_back(static_cast<double>(model.forward_example(ex, {}, nullptr, nullptr).item()));
    return out;
}

}  // namespace veracity
