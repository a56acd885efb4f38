// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "veracity/error.hpp"
#include "veracity/model.hpp"
#include "veracity/random.hpp"
#include "veracity/tensor.hpp"
#include "veracity/tokenizer.hpp"

namespace veracity {

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy over probabilities clamped to
/// [1e-7, 1 - 1e-7]. Inside the clamp range the gradient flows to the
/// probabilities; outside it is zero.
template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& probabilities, std::span<const int> labels) {
    if (probabilities.size() != labels.size())
        throw ShapeError("bce_loss: " + std::to_string(probabilities.size()) + " probabilities vs " +
                         std::to_string(labels.size()) + " labels");
    if (labels.empty()) throw ShapeError("bce_loss: empty batch");
    const std::size_t n = labels.size();
    const T lo = static_cast<T>(kProbabilityClamp);
    const T hi = T(1) - lo;
    auto p = probabilities.data();
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ValidationError("bce_loss: labels must be 0 or 1");
        const T q = std::clamp(p[i], lo, hi);
        total -= labels[i] ? std::log(q) : std::log(T(1) - q);
    }
    std::vector<int> y(labels.begin(), labels.end());
    const T inv_n = T(1) / static_cast<T>(n);
    return BasicTensor<T>::from_op("bce", {1}, {total * inv_n}, {probabilities}, [y, lo, hi, inv_n](auto& self) {
        auto& parent = *self.parents[0];
        auto& g = parent.grad_buffer();
        const auto& pv = *parent.data;
        for (std::size_t i = 0; i < y.size(); ++i) {
            const T q = pv[i];
            if (q < lo || q > hi) continue;
            const T d = y[i] ? -T(1) / q : T(1) / (T(1) - q);
            g[i] += self.grad[0] * d * inv_n;
        }
    });
}

template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& probabilities, const std::vector<int>& labels) {
    return bce_loss(probabilities, std::span<const int>(labels));
}

struct TrainConfig {
    double learning_rate = 2e-4;
    std::size_t batch_size = 4;
    double weight_decay = 0.01;
    std::size_t accumulation_steps = 2;
    std::size_t epochs = 5;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            throw ValidationError("train config: learning_rate must be positive");
        if (batch_size < 1) throw ValidationError("train config: batch_size must be at least 1");
        if (accumulation_steps < 1) throw ValidationError("train config: accumulation_steps must be at least 1");
        if (epochs < 1) throw ValidationError("train config: epochs must be at least 1");
        if (!(weight_decay >= 0.0)) throw ValidationError("train config: weight_decay must be non-negative");
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
            throw ValidationError("train config: Adam betas must lie in [0, 1)");
        if (!(adam_epsilon > 0.0)) throw ValidationError("train config: adam_epsilon must be positive");
    }
};

/// First and second moment estimates, one pair per parameter.
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> first;
    std::vector<std::vector<T>> second;
    std::size_t step = 0;
};

/// One AdamW update over every parameter from its accumulated gradient:
/// bias-corrected Adam step, then decoupled decay w -= lr * wd * w on
/// parameters flagged for decay. step is the 1-based update count.
template <typename T>
void adamw_step(std::vector<Parameter<T>>& params, AdamState<T>& state, const TrainConfig& config, std::size_t step) {
    if (step < 1) throw ValidationError("adamw_step: step must be at least 1");
    if (state.first.empty()) {
        for (const auto& p : params) {
            state.first.emplace_back(p.value.size(), T(0));
            state.second.emplace_back(p.value.size(), T(0));
        }
    }
    if (state.first.size() != params.size()) throw ShapeError("adamw_step: optimizer state does not match parameters");
    for (const auto& p : params) {
        if (!p.value.has_grad()) continue;
        for (T g : p.value.grad())
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
    const double b1 = config.adam_beta1, b2 = config.adam_beta2;
    const T correction1 = static_cast<T>(1.0 - std::pow(b1, static_cast<double>(step)));
    const T correction2 = static_cast<T>(1.0 - std::pow(b2, static_cast<double>(step)));
    const T lr = static_cast<T>(config.learning_rate);
    const T eps = static_cast<T>(config.adam_epsilon);
    const T decay_factor = static_cast<T>(1.0 - config.learning_rate * config.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (p.value.size() != state.first[i].size()) throw ShapeError("adamw_step: state shape mismatch for " + p.name);
        auto w = p.value.mutable_data();
        auto& m = state.first[i];
        auto& v = state.second[i];
        const std::vector<T> g = p.value.grad();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = static_cast<T>(b1) * m[j] + static_cast<T>(1.0 - b1) * g[j];
            v[j] = static_cast<T>(b2) * v[j] + static_cast<T>(1.0 - b2) * g[j] * g[j];
            const T m_hat = m[j] / correction1;
            const T v_hat = v[j] / correction2;
            w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
        if (p.decay && config.weight_decay != 0.0)
            for (auto& x : w) x *= decay_factor;
    }
    state.step = step;
}

struct EpochRecord {
    std::size_t epoch = 0;        // 1-based
    std::size_t step = 0;         // optimizer steps taken so far
    double mean_loss = 0.0;       // over this epoch's micro-batches
    double train_accuracy = 0.0;
    std::optional<double> eval_accuracy;
};

struct TrainHistory {
    std::vector<double> step_losses;  // mean unscaled micro-batch loss per optimizer step
    std::vector<EpochRecord> epochs;

    /// Epoch (1-based) with the highest eval accuracy; earliest wins ties.
    std::optional<std::size_t> best_eval_epoch() const {
        std::optional<std::size_t> best;
        double best_acc = -1.0;
        for (const auto& e : epochs) {
            if (e.eval_accuracy && *e.eval_accuracy > best_acc) {
                best_acc = *e.eval_accuracy;
                best = e.epoch;
            }
        }
        return best;
    }
};

/// Integer labels of encoded examples; all must be labelled.
inline std::vector<int> labels_of(std::span<const EncodedExample> data) {
    std::vector<int> out;
    out.reserve(data.size());
    for (const auto& ex : data) {
        if (!ex.label) throw ValidationError("example is unlabelled");
        out.push_back(to_int(*ex.label));
    }
    return out;
}

/// Infer-mode accuracy at threshold 0.5.
template <typename T>
double accuracy(const BasicModel<T>& model, std::span<const EncodedExample> data) {
    if (data.empty()) return 0.0;
    const auto probs = predict(model, data);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!data[i].label) throw ValidationError("accuracy needs labelled examples");
        hits += static_cast<std::size_t>((probs[i] >= 0.5) == (*data[i].label == Label::deceptive));
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Loss of one micro-batch as a graph rooted at the parameters.
template <typename T>
BasicTensor<T> batch_loss(const BasicModel<T>& model, std::span<const EncodedExample> batch, bool training, Rng& rng) {
    std::vector<BasicTensor<T>> probs;
    std::vector<int> labels;
    ForwardOptions opts;
    opts.training = training;
    opts.track_params = true;
    for (const auto& ex : batch) {
        if (!ex.label) throw ValidationError("training examples must be labelled");
        probs.push_back(model.forward_example(ex, opts, &rng, nullptr));
        labels.push_back(to_int(*ex.label));
    }
    return bce_loss(concat(probs, 0), labels);
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch AdamW training. Each epoch reshuffles with a seeded generator,
/// scales every micro-batch loss by 1/accumulation_steps, and steps after
/// each group of accumulation_steps micro-batches (a trailing partial group
/// also steps). Accuracies are measured in infer mode after each epoch.
template <typename T>
TrainHistory train(BasicModel<T>& model, std::span<const EncodedExample> train_set, std::span<const EncodedExample> eval_set,
                   const TrainConfig& config, const EpochCallback& on_epoch = {}) {
    config.validate();
    if (train_set.empty()) throw ValidationError("training set is empty");
    Rng shuffle_rng(config.seed);
    Rng dropout_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
    AdamState<T> state;
    TrainHistory history;
    std::size_t step = 0;
    const T micro_scale = T(1) / static_cast<T>(config.accumulation_steps);

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle(order, shuffle_rng);
        model.set_mode(Mode::train);
        model.zero_grad();
        double epoch_loss = 0.0;
        std::size_t epoch_batches = 0;
        double group_loss = 0.0;
        std::size_t group_batches = 0;

        auto take_step = [&] {
            ++step;
            adamw_step(model.parameters(), state, config, step);
            model.zero_grad();
            history.step_losses.push_back(group_loss / static_cast<double>(group_batches));
            group_loss = 0.0;
            group_batches = 0;
        };

        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            std::vector<EncodedExample> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i)
                batch.push_back(train_set[order[i]]);
            const auto loss = batch_loss(model, std::span<const EncodedExample>(batch), true, dropout_rng);
            const double value = static_cast<double>(loss.item());
            if (!std::isfinite(value))
                throw NumericError("non-finite loss at optimizer step " + std::to_string(step + 1) + " (epoch " +
                                   std::to_string(epoch) + ")");
            backward(scale(loss, micro_scale));
            epoch_loss += value;
            ++epoch_batches;
            group_loss += value;
            if (++group_batches == config.accumulation_steps) take_step();
        }
        if (group_batches > 0) take_step();

        model.set_mode(Mode::infer);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.step = step;
        rec.mean_loss = epoch_loss / static_cast<double>(epoch_batches);
        rec.train_accuracy = accuracy(model, train_set);
        if (!eval_set.empty()) rec.eval_accuracy = accuracy(model, eval_set);
        history.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return history;
}

template <typename T>
TrainHistory train(BasicModel<T>& model, const std::vector<EncodedExample>& train_set,
                   const std::vector<EncodedExample>& eval_set, const TrainConfig& config, const EpochCallback& on_epoch = {}) {
    return train(model, std::span<const EncodedExample>(train_set), std::span<const EncodedExample>(eval_set), config,
                 on_epoch);
}

}  // namespace veracity
