// SPDX-License-Identifier: Apache-2.0
#pragma once

// Classification service: the clean -> encode -> forward -> saliency ->
// top-k pipeline behind a JSON API.
//
//   GET  /health      {"status":"ok"}
//   GET  /model/info  config digest, model config, last evaluation
//   POST /classify    {"text", "top_k", "include_attention"}

#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>

// httplib's default backlog of 5 refuses bursts of concurrent clients.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 512
#endif
#include <httplib.h>
#include <json.hpp>

#include "veracity/checkpoint.hpp"
#include "veracity/corpus.hpp"
#include "veracity/explain.hpp"
#include "veracity/model.hpp"
#include "veracity/tokenizer.hpp"

namespace veracity {

/// Carries the HTTP status the failure maps to.
class ServiceError : public std::runtime_error {
   public:
    ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
    int status() const { return status_; }

   private:
    int status_;
};

struct ClassifyRequest {
    std::string text;
    std::size_t top_k = 5;
    bool include_attention = false;
};

inline ClassifyRequest parse_classify_request(const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        throw ServiceError(400, std::string("request body is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ServiceError(400, "request body must be a JSON object");
    ClassifyRequest req;
    if (!j.contains("text") || !j["text"].is_string()) throw ServiceError(400, "'text' must be a string");
    req.text = j["text"].get<std::string>();
    if (j.contains("top_k")) {
        const auto& k = j["top_k"];
        if (!k.is_number_integer()) throw ServiceError(400, "'top_k' must be an integer");
        if (k.get<long long>() < 1) throw ServiceError(400, "'top_k' must be at least 1");
        req.top_k = k.get<std::size_t>();
    }
    if (j.contains("include_attention")) {
        if (!j["include_attention"].is_boolean()) throw ServiceError(400, "'include_attention' must be a boolean");
        req.include_attention = j["include_attention"].get<bool>();
    }
    return req;
}

inline nlohmann::json to_json(const AttentionRecord& rec, const std::vector<std::string>& words) {
    return {{"layers", rec.layers}, {"heads", rec.heads}, {"tokens", words}, {"maps", rec.maps}};
}

/// A loaded checkpoint plus its digest. Immutable once published.
struct ServedModel {
    Checkpoint checkpoint;
    std::string digest;

    explicit ServedModel(Checkpoint ck)
        : checkpoint(std::move(ck)),
          digest(config_digest(checkpoint.model.config(), checkpoint.vocab, checkpoint.cleaning)) {
        checkpoint.model.set_mode(Mode::infer);
    }
};

inline nlohmann::json model_summary(const ServedModel& served) {
    return {{"digest", served.digest},
            {"variant", to_string(served.checkpoint.model.config().variant)},
            {"parameters", served.checkpoint.model.param_count().total}};
}

/// Runs the full pipeline against one frozen model.
inline nlohmann::json classify(const ServedModel& served, const ClassifyRequest& req) {
    if (req.top_k < 1) throw ServiceError(400, "'top_k' must be at least 1");
    const auto& ck = served.checkpoint;
    std::string text;
    try {
        text = clean_transcript(req.text, ck.cleaning);
    } catch (const DegenerateInputError&) {
        throw ServiceError(400, "'text' is empty after removing fillers, annotations and interviewer lines");
    }
    EncodedExample ex;
    try {
        ex = encode(text, ck.vocab, ck.model.config().max_len);
    } catch (const ValidationError& e) {
        throw ServiceError(400, std::string("cannot encode 'text': ") + e.what());
    }
    const auto map = saliency(ck.model, ex);
    const auto top = top_k(map, req.top_k);
    std::vector<bool> highlighted(map.word_scores.size(), false);
    for (const auto& t : top) highlighted[t.position] = true;

    nlohmann::json tokens = nlohmann::json::array();
    for (std::size_t i = 0; i < map.word_scores.size(); ++i)
        tokens.push_back({{"word", map.word_scores[i].word},
                          {"saliency", map.word_scores[i].score},
                          {"highlighted", static_cast<bool>(highlighted[i])}});

    nlohmann::json resp = {{"label", map.predicted_label == Label::deceptive ? "deceptive" : "truthful"},
                           {"probability", map.deceptive_probability},
                           {"tokens", tokens},
                           {"model_info", model_summary(served)}};
    if (map.degenerate) resp["saliency_degenerate"] = true;
    if (req.include_attention) {
        ActivationTrace<float> trace;
        ck.model.forward_example(ex, {}, nullptr, &trace);
        resp["attention"] = to_json(attention_maps(trace, std::span<const std::uint8_t>(ex.mask)), ex.words);
    }
    return resp;
}

/// Holds the published model. Readers take a shared snapshot, so a
/// replacement never exposes a half-loaded model to in-flight requests.
class ClassifierService {
   public:
    ClassifierService() = default;
    explicit ClassifierService(Checkpoint ck) { publish(std::move(ck)); }

    void publish(Checkpoint ck) {
        auto next = std::make_shared<const ServedModel>(std::move(ck));
        std::lock_guard lock(mutex_);
        current_ = std::move(next);
    }

    std::shared_ptr<const ServedModel> snapshot() const {
        std::lock_guard lock(mutex_);
        return current_;
    }

    nlohmann::json health() const { return {{"status", "ok"}}; }

    nlohmann::json model_info() const {
        const auto served = snapshot();
        if (!served) throw ServiceError(503, "no model loaded");
        const auto& ck = served->checkpoint;
        nlohmann::json info = model_summary(*served);
        info["config"] = ck.model.config();
        info["vocabulary_size"] = ck.vocab.size();
        info["metrics"] = ck.evaluation ? nlohmann::json(*ck.evaluation) : nlohmann::json(nullptr);
        return info;
    }

    nlohmann::json classify(const std::string& body) const {
        const auto served = snapshot();
        if (!served) throw ServiceError(503, "no model loaded");
        return veracity::classify(*served, parse_classify_request(body));
    }

    /// Registers the three routes on an httplib server.
    void mount(httplib::Server& server) const {
        auto reply = [](httplib::Response& res, int status, const nlohmann::json& body) {
            res.status = status;
            res.set_header("Access-Control-Allow-Origin", "*");
            res.set_content(body.dump(), "application/json");
        };
        auto guarded = [reply](httplib::Response& res, auto&& produce) {
            try {
                reply(res, 200, produce());
            } catch (const ServiceError& e) {
                reply(res, e.status(), {{"error", e.what()}});
            } catch (const std::exception& e) {
                reply(res, 500, {{"error", e.what()}});
            }
        };
        server.Get("/health", [this, guarded](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] { return health(); });
        });
        server.Get("/model/info", [this, guarded](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] { return model_info(); });
        });
        server.Post("/classify", [this, guarded](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { return classify(req.body); });
        });
        server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
            res.set_header("Access-Control-Allow-Origin", "*");
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
            res.status = 204;
        });
    }

   private:
    mutable std::mutex mutex_;
    std::shared_ptr<const ServedModel> current_;
};

}  // namespace veracity
