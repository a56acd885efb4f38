// SPDX-License-Identifier: Apache-2.0
//
// Operator CLI: synth, train, eval, explain, serve.
// Exit codes: 0 success, 1 validation error, 2 I/O error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "veracity/veracity.hpp"

namespace {

using namespace veracity;

Corpus read_corpus_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus '" + path + "'");
    Corpus corpus = parse_corpus(in);
    corpus.provenance = path;
    corpus.validate();
    return corpus;
}

/// Cleans every statement with the given rules; statements that clean to
/// nothing are reported and rejected.
Corpus cleaned(const Corpus& corpus, const CleaningRules& rules) {
    Corpus out = corpus;
    for (auto& s : out.statements) {
        try {
            s.text = clean_transcript(s.text, rules);
        } catch (const DegenerateInputError&) {
            throw ValidationError("statement " + std::to_string(s.id) + " is empty after cleaning");
        }
    }
    return out;
}

struct TrainArgs {
    std::string corpus, arch = "custom", out;
    std::uint64_t seed = 42;
    std::size_t epochs = 5, batch = 4, accum = 2;
    double lr = 2e-4, weight_decay = 0.01;
    std::size_t max_len = 0, vocab_size = 0;
    double train_fraction = 0.7;
};

int run_train(const TrainArgs& a) {
    const CleaningRules rules;
    const Corpus corpus = cleaned(read_corpus_file(a.corpus), rules);
    const auto [train_part, test_part] = split(corpus, a.train_fraction, a.seed);

    ModelConfig config = ModelConfig::defaults(architecture_from_string(a.arch));
    if (a.max_len) config.max_len = a.max_len;
    if (a.vocab_size) config.vocab_size = a.vocab_size;
    const Vocabulary vocab = build_vocab(train_part, config.vocab_size);
    config.vocab_size = vocab.size();

    const auto train_set = encode_all(train_part, vocab, config.max_len);
    const auto test_set = encode_all(test_part, vocab, config.max_len);

    Model model = Model::build(config, a.seed);
    TrainConfig tc;
    tc.learning_rate = a.lr;
    tc.batch_size = a.batch;
    tc.accumulation_steps = a.accum;
    tc.weight_decay = a.weight_decay;
    tc.epochs = a.epochs;
    tc.seed = a.seed;

    std::cout << "epoch,step,loss,train_acc,eval_acc\n";
    const auto history = train(model, train_set, test_set, tc, [](const EpochRecord& r) {
        std::printf("%zu,%zu,%.6f,%.4f,%s\n", r.epoch, r.step, r.mean_loss, r.train_accuracy,
                    r.eval_accuracy ? std::to_string(*r.eval_accuracy).c_str() : "");
        std::fflush(stdout);
    });

    std::optional<MetricsReport> report;
    if (!test_set.empty()) {
        report = evaluate(predict(model, std::span<const EncodedExample>(test_set)), labels_of(test_set));
        const auto best = history.best_eval_epoch();
        std::cerr << "held-out (final epoch): accuracy " << report->accuracy << ", f1 " << report->f1 << ", roc_auc "
                  << report->roc_auc << "\n";
        if (best) std::cerr << "best held-out accuracy at epoch " << *best << "\n";
    }
    save_checkpoint(model, vocab, a.out, rules, report);
    std::cerr << "wrote " << a.out << " (" << model.param_count().total << " parameters)\n";
    return 0;
}

int run_eval(const std::string& corpus_path, const std::string& ckpt_path, const std::string& report_path) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const Corpus corpus = cleaned(read_corpus_file(corpus_path), ck.cleaning);
    const auto data = encode_all(corpus, ck.vocab, ck.model.config().max_len);
    const auto report = evaluate(predict(ck.model, std::span<const EncodedExample>(data)), labels_of(data));
    std::ofstream out(report_path);
    if (!out) throw IoError("cannot open report '" + report_path + "' for writing");
    out << nlohmann::json(report).dump(2) << '\n';
    if (!out) throw IoError("failed writing report '" + report_path + "'");
    std::cout << nlohmann::json(report).dump() << '\n';
    return 0;
}

int run_explain(const std::string& ckpt_path, const std::string& text, std::size_t k, bool attention) {
    if (k < 1) throw ValidationError("--top-k must be at least 1");
    const ServedModel served(load_checkpoint(ckpt_path));
    ClassifyRequest req{text, k, attention};
    nlohmann::json resp;
    try {
        resp = classify(served, req);
    } catch (const ServiceError& e) {
        throw ValidationError(e.what());
    }
    const auto& ck = served.checkpoint;
    const auto ex = encode(clean_transcript(text, ck.cleaning), ck.vocab, ck.model.config().max_len);
    resp["markup"] = render_highlight(ex, saliency(ck.model, ex), k);
    std::cout << resp.dump(2) << '\n';
    return 0;
}

int run_serve(const std::string& ckpt_path, const std::string& addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos) throw ValidationError("--addr must be HOST:PORT");
    const std::string host = addr.substr(0, colon);
    int port = 0;
    try {
        port = std::stoi(addr.substr(colon + 1));
    } catch (const std::exception&) {
        throw ValidationError("--addr has an invalid port");
    }
    if (port <= 0 || port > 65535) throw ValidationError("--addr has an invalid port");

    ClassifierService service(load_checkpoint(ckpt_path));
    httplib::Server server;
    service.mount(server);
    std::cerr << "serving " << service.snapshot()->digest << " on http://" << host << ':' << port << "\n";
    if (!server.listen(host, port)) throw IoError("cannot listen on " + addr);
    return 0;
}

int run_synth(std::size_t n, std::uint64_t seed, const std::string& out_path) {
    const Corpus corpus = synth_corpus(n, default_signal_words(), default_noise_vocab(), seed);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + out_path + "' for writing");
    write_corpus(out, corpus);
    if (!out) throw IoError("failed writing '" + out_path + "'");
    std::cerr << "wrote " << corpus.size() << " statements (gini " << gini_index(corpus.labels()) << ") to "
              << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deception classification with gradient saliency explanations"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "train a model on an ID,Text,GT corpus");
    train_cmd->add_option("--corpus", ta.corpus, "input CSV")->required();
    train_cmd->add_option("--arch", ta.arch, "custom or distil")->check(CLI::IsMember({"custom", "distil"}));
    train_cmd->add_option("--out", ta.out, "checkpoint path")->required();
    train_cmd->add_option("--seed", ta.seed);
    train_cmd->add_option("--epochs", ta.epochs);
    train_cmd->add_option("--lr", ta.lr);
    train_cmd->add_option("--batch", ta.batch);
    train_cmd->add_option("--accum", ta.accum);
    train_cmd->add_option("--weight-decay", ta.weight_decay);
    train_cmd->add_option("--max-len", ta.max_len, "sequence length (architecture default if unset)");
    train_cmd->add_option("--vocab-size", ta.vocab_size, "vocabulary cap (architecture default if unset)");
    train_cmd->add_option("--train-fraction", ta.train_fraction);

    std::string corpus_path, ckpt_path, report_path, text, addr;
    std::size_t top_k = 5, n = 200;
    std::uint64_t seed = 42;
    bool attention = false;

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
    eval_cmd->add_option("--corpus", corpus_path)->required();
    eval_cmd->add_option("--ckpt", ckpt_path)->required();
    eval_cmd->add_option("--report", report_path, "JSON report path")->required();

    auto* explain_cmd = app.add_subcommand("explain", "classify one statement and explain it");
    explain_cmd->add_option("--ckpt", ckpt_path)->required();
    explain_cmd->add_option("--text", text)->required();
    explain_cmd->add_option("--top-k", top_k);
    explain_cmd->add_flag("--attention", attention, "include per-layer attention maps");

    auto* serve_cmd = app.add_subcommand("serve", "run the HTTP classification service");
    serve_cmd->add_option("--ckpt", ckpt_path)->required();
    serve_cmd->add_option("--addr", addr, "HOST:PORT")->default_val("127.0.0.1:8080");

    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic signal-word corpus");
    synth_cmd->add_option("--n", n);
    synth_cmd->add_option("--seed", seed);
    synth_cmd->add_option("--out", corpus_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*train_cmd) return run_train(ta);
        if (*eval_cmd) return run_eval(corpus_path, ckpt_path, report_path);
        if (*explain_cmd) return run_explain(ckpt_path, text, top_k, attention);
        if (*serve_cmd) return run_serve(ckpt_path, addr);
        if (*synth_cmd) return run_synth(n, seed, corpus_path);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
