#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"

using namespace veracity;

namespace {

using Scores = std::vector<double>;
using Labels = std::vector<int>;

double auc(const Scores& s, const Labels& y) { return roc_auc(s, y); }
double ap(const Scores& s, const Labels& y) { return average_precision(s, y); }

}  // namespace

TEST(Confusion, Fixtures) {
    EXPECT_EQ(confusion(Scores{0.9, 0.2}, Labels{1, 0}), (ConfusionMatrix{1, 0, 0, 1}));
    EXPECT_EQ(confusion(Scores{0.5}, Labels{0}).fp, 1u);
    const auto cm = confusion(Scores{0.9, 0.9, 0.9, 0.2, 0.2}, Labels{1, 1, 0, 1, 0});
    EXPECT_EQ(cm, (ConfusionMatrix{2, 1, 1, 1}));
    EXPECT_EQ(cm.total(), 5u);
    EXPECT_THROW(confusion(Scores{0.1}, Labels{1, 0}), ValidationError);
    EXPECT_THROW(confusion(Scores{}, Labels{}), ValidationError);
    EXPECT_THROW(confusion(Scores{0.1}, Labels{2}), ValidationError);
}

TEST(Prf, HandComputedFixture) {
    const auto s = prf_accuracy({2, 1, 1, 1});
    EXPECT_EQ(s.precision, 2.0 / 3.0);
    EXPECT_EQ(s.recall, 2.0 / 3.0);
    EXPECT_EQ(s.accuracy, 3.0 / 5.0);
    EXPECT_EQ(s.f1, 2.0 * (2.0 / 3.0) * (2.0 / 3.0) / (4.0 / 3.0));
    EXPECT_NEAR(s.f1, 2.0 / 3.0, 1e-15);
}

TEST(Prf, PerfectClassifier) {
    const auto s = prf_accuracy({5, 0, 0, 7});
    EXPECT_EQ(s.precision, 1.0);
    EXPECT_EQ(s.recall, 1.0);
    EXPECT_EQ(s.accuracy, 1.0);
    EXPECT_EQ(s.f1, 1.0);
}

TEST(Prf, HarmonicMeanOfReportedPrecisionRecall) {
    const double p = 0.9006, r = 0.8265;
    EXPECT_NEAR(2 * p * r / (p + r), 0.8620, 5e-5);
}

TEST(Prf, DegenerateDenominatorsAreFlagged) {
    const auto none_predicted = prf_accuracy({0, 0, 3, 2});
    EXPECT_TRUE(none_predicted.precision_degenerate);
    EXPECT_EQ(none_predicted.precision, 0.0);
    EXPECT_FALSE(none_predicted.recall_degenerate);
    const auto no_positives = prf_accuracy({0, 2, 0, 3});
    EXPECT_TRUE(no_positives.recall_degenerate);
    EXPECT_EQ(no_positives.f1, 0.0);
}

TEST(RocAuc, Fixtures) {
    EXPECT_EQ(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
    EXPECT_EQ(auc({0.3, 0.3, 0.3, 0.3}, {0, 1, 0, 1}), 0.5);
    EXPECT_EQ(auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), 0.75);
    EXPECT_THROW(auc({0.1, 0.2}, {1, 1}), ValidationError);
    EXPECT_THROW(auc({0.1, 0.2}, {0, 0}), ValidationError);
}

TEST(RocAuc, MonotoneTransformAndLabelFlip) {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Scores s(30);
        Labels y(30);
        for (std::size_t i = 0; i < 30; ++i) {
            s[i] = rng.uniform();
            y[i] = static_cast<int>(i % 2);
        }
        Scores t(30);
        for (std::size_t i = 0; i < 30; ++i) t[i] = std::exp(3 * s[i]) - 7;
        EXPECT_EQ(auc(s, y), auc(t, y));
        Labels flipped(30);
        for (std::size_t i = 0; i < 30; ++i) flipped[i] = 1 - y[i];
        EXPECT_NEAR(auc(s, y) + auc(s, flipped), 1.0, 1e-15);
    }
}

TEST(AveragePrecision, Fixtures) {
    EXPECT_EQ(ap({0.9, 0.8, 0.1}, {1, 1, 0}), 1.0);
    EXPECT_EQ(ap({0.9, 0.1}, {0, 1}), 0.5);
    EXPECT_NEAR(ap({0.9, 0.8, 0.7}, {1, 0, 1}), 1.0 * 0.5 + (2.0 / 3.0) * 0.5, 1e-15);
    EXPECT_THROW(ap({0.9, 0.1}, {0, 0}), ValidationError);
}

TEST(Oracles, RankMetricsMatchBruteForce) {
    Rng rng(12);
    std::size_t checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.index(49);
        Scores s(n);
        Labels y(n);
        const bool coarse = trial % 3 == 0;  // many ties
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = coarse ? static_cast<double>(rng.index(5)) / 4.0 : rng.uniform();
            y[i] = rng.uniform() < 0.5;
        }
        y[0] = 1;
        y[1] = 0;
        EXPECT_NEAR(auc(s, y), oracle::pairwise_auc(s, y), 1e-12);
        EXPECT_NEAR(ap(s, y), oracle::sweep_ap(s, y), 1e-12);
        ++checked;
    }
    EXPECT_EQ(checked, 1000u);
}

TEST(Evaluate, ReportIsConsistent) {
    const Scores s{0.9, 0.9, 0.9, 0.2, 0.2};
    const Labels y{1, 1, 0, 1, 0};
    const auto r = evaluate(s, y);
    EXPECT_EQ(r.confusion, (ConfusionMatrix{2, 1, 1, 1}));
    EXPECT_NEAR(r.f1, 2 * r.precision * r.recall / (r.precision + r.recall), 1e-12);
    EXPECT_EQ(r.accuracy, 3.0 / 5.0);
    EXPECT_EQ(r.roc_auc, oracle::pairwise_auc(s, y));
    // Negative class: tp'=1 fp'=1 fn'=1 -> F1 1/2; macro = (2/3 + 1/2) / 2.
    EXPECT_NEAR(r.macro_f1, (2.0 / 3.0 + 0.5) / 2, 1e-15);
    for (double v : {r.precision, r.recall, r.accuracy, r.f1, r.roc_auc, r.average_precision}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Evaluate, SingleClassDoesNotThrow) {
    const auto r = evaluate(Scores{0.1, 0.7}, Labels{0, 0});
    EXPECT_FALSE(r.roc_auc_defined);
    EXPECT_FALSE(r.average_precision_defined);
    EXPECT_TRUE(r.recall_degenerate);
}

TEST(Evaluate, JsonUsesFixedKeysAndRoundTrips) {
    const auto r = evaluate(Scores{0.9, 0.4, 0.6, 0.1}, Labels{1, 1, 0, 0});
    const nlohmann::json j = r;
    for (const char* key : {"precision", "recall", "accuracy", "f1", "roc_auc", "average_precision", "confusion"})
        EXPECT_TRUE(j.contains(key)) << key;
    for (const char* key : {"tp", "fp", "fn", "tn"}) EXPECT_TRUE(j["confusion"].contains(key)) << key;
    const auto back = j.get<MetricsReport>();
    EXPECT_EQ(back.confusion, r.confusion);
    EXPECT_EQ(back.roc_auc, r.roc_auc);
    EXPECT_EQ(back.macro_f1, r.macro_f1);
}
