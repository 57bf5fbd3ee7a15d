#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "histoseq/evaluation.hpp"
#include "histoseq/synthetic.hpp"

using namespace histoseq;

namespace {

ConfusionMatrix from_rows(std::vector<std::vector<long long>> rows) {
    ConfusionMatrix cm(static_cast<int>(rows.size()));
    cm.counts = std::move(rows);
    return cm;
}

struct Tally {
    long long tp = 0, fn = 0, fp = 0, tn = 0;
};

Tally tally(const std::vector<int>& preds, const std::vector<int>& labels, int c) {
    Tally t;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool actual = labels[i] == c, predicted = preds[i] == c;
        if (actual && predicted) ++t.tp;
        else if (actual) ++t.fn;
        else if (predicted) ++t.fp;
        else ++t.tn;
    }
    return t;
}

std::vector<int> labels_with(std::vector<int> counts) {
    std::vector<int> out;
    for (std::size_t c = 0; c < counts.size(); ++c)
        for (int i = 0; i < counts[c]; ++i) out.push_back(static_cast<int>(c));
    return out;
}

}  // namespace

TEST(ConfusionMatrix, PerfectPredictions) {
    const std::vector<int> v{0, 1, 2};
    EXPECT_EQ(confusion_matrix(v, v, 3), from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
}

TEST(ConfusionMatrix, EmptyInputs) {
    const auto cm = confusion_matrix(std::vector<int>{}, std::vector<int>{}, 3);
    EXPECT_EQ(cm, ConfusionMatrix(3));
    EXPECT_EQ(cm.total(), 0);
}

TEST(ConfusionMatrix, MatchesTally) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> cls(0, 3);
    std::vector<int> p(200), l(200);
    for (int i = 0; i < 200; ++i) {
        p[i] = cls(rng);
        l[i] = cls(rng);
    }
    const auto cm = confusion_matrix(p, l, 4);
    for (int t = 0; t < 4; ++t)
        for (int q = 0; q < 4; ++q) {
            long long n = 0;
            for (int i = 0; i < 200; ++i) n += l[i] == t && p[i] == q;
            EXPECT_EQ(cm.counts[t][q], n);
        }
}

TEST(ConfusionMatrix, RejectsBadInput) {
    EXPECT_THROW(confusion_matrix(std::vector<int>{0, 3}, std::vector<int>{0, 1}, 3), ValidationError);
    EXPECT_THROW(confusion_matrix(std::vector<int>{0}, std::vector<int>{0, 1}, 3), ValidationError);
}

TEST(Metrics, SensitivityFromCounts) {
    // Class 0 with TP = 9, FN = 1.
    EXPECT_DOUBLE_EQ(*sensitivity(from_rows({{9, 1}, {0, 0}}), 0), 0.9);
}

TEST(Metrics, SpecificityFromCounts) {
    // Class 0 with TN = 45, FP = 5.
    EXPECT_DOUBLE_EQ(*specificity(from_rows({{0, 0}, {5, 45}}), 0), 0.9);
}

TEST(Metrics, ThreeClassHandTally) {
    const auto cm = from_rows({{8, 1, 1}, {0, 9, 1}, {1, 0, 9}});
    EXPECT_DOUBLE_EQ(*accuracy(cm), 26.0 / 30.0);
    EXPECT_DOUBLE_EQ(*sensitivity(cm, 0), 0.8);
    EXPECT_DOUBLE_EQ(*specificity(cm, 0), 19.0 / 20.0);
}

TEST(Metrics, UndefinedIsMarkedNotZero) {
    const auto cm = from_rows({{3, 0}, {0, 0}});
    EXPECT_FALSE(sensitivity(cm, 1).has_value());
    EXPECT_FALSE(accuracy(ConfusionMatrix(2)).has_value());
    EXPECT_TRUE(EvalReport::from(cm).to_json()["sensitivity"][1].is_null());
}

TEST(Metrics, OneVsRestIdentities) {
    std::mt19937_64 rng(2);
    for (int C : {2, 3, 4}) {
        std::uniform_int_distribution<int> cls(0, C - 1);
        std::vector<int> p(300), l(300);
        for (int i = 0; i < 300; ++i) {
            p[i] = cls(rng);
            l[i] = cls(rng);
        }
        const auto cm = confusion_matrix(p, l, C);
        int correct = 0;
        for (int i = 0; i < 300; ++i) correct += p[i] == l[i];
        EXPECT_DOUBLE_EQ(*accuracy(cm), correct / 300.0);
        for (int c = 0; c < C; ++c) {
            const Tally t = tally(p, l, c);
            EXPECT_EQ(cm.true_positive(c) + cm.false_negative(c), cm.row_sum(c));
            EXPECT_EQ(cm.true_negative(c) + cm.false_positive(c), cm.total() - cm.row_sum(c));
            EXPECT_EQ(cm.true_positive(c), t.tp);
            EXPECT_EQ(cm.false_negative(c), t.fn);
            EXPECT_EQ(cm.false_positive(c), t.fp);
            EXPECT_EQ(cm.true_negative(c), t.tn);
        }
    }
}

TEST(Split, KFoldOf400) {
    const auto labels = labels_with({100, 100, 100, 100});
    const auto plan = k_fold(labels, {}, 10, 7);
    EXPECT_TRUE(plan.stratified);
    for (int f = 0; f < 10; ++f) {
        EXPECT_EQ(plan.members(f).size(), 40u);
        for (int c = 0; c < 4; ++c) {
            int n = 0;
            for (auto i : plan.members(f)) n += labels[i] == c;
            EXPECT_EQ(n, 10);
        }
    }
}

TEST(Split, TenItemsTenFoldsIsLeaveOneOut) {
    const auto plan = k_fold(labels_with({5, 5}), {}, 10, 3);
    EXPECT_FALSE(plan.warnings.empty());
    for (int f = 0; f < 10; ++f) EXPECT_EQ(plan.members(f).size(), 1u);
}

TEST(Split, SameSeedSamePlan) {
    const auto labels = labels_with({13, 9, 21});
    EXPECT_EQ(k_fold(labels, {}, 5, 11).assignment, k_fold(labels, {}, 5, 11).assignment);
    EXPECT_EQ(split(labels, {}, {}, 11).assignment, split(labels, {}, {}, 11).assignment);
    EXPECT_NE(k_fold(labels, {}, 5, 11).assignment, k_fold(labels, {}, 5, 12).assignment);
}

TEST(Split, FoldsPartitionAndBalance) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 40; ++trial) {
        std::uniform_int_distribution<int> count(0, 15);
        const auto labels = labels_with({count(rng) + 2, count(rng), count(rng) + 1});
        const int k = 2 + trial % 5;
        if (labels.size() < static_cast<std::size_t>(k)) continue;
        const auto plan = k_fold(labels, {}, k, static_cast<std::uint64_t>(trial));
        std::size_t lo = labels.size(), hi = 0, total = 0;
        std::set<std::size_t> seen;
        for (int f = 0; f < k; ++f) {
            const auto m = plan.members(f);
            lo = std::min(lo, m.size());
            hi = std::max(hi, m.size());
            total += m.size();
            seen.insert(m.begin(), m.end());
        }
        EXPECT_EQ(total, labels.size());
        EXPECT_EQ(seen.size(), labels.size());
        EXPECT_LE(hi - lo, 1u);
    }
}

TEST(Split, HoldoutRatiosPerClass) {
    const auto labels = labels_with({100, 60, 40});
    const auto plan = split(labels, {}, {}, 5);
    EXPECT_TRUE(plan.stratified);
    EXPECT_EQ(plan.members(Subset::train).size(), 140u);
    EXPECT_EQ(plan.members(Subset::validation).size(), 30u);
    EXPECT_EQ(plan.members(Subset::test).size(), 30u);
}

TEST(Split, EmptyClassFallsBackWithWarning) {
    const auto plan = split(labels_with({10, 0, 10}), {}, {}, 5, 3);
    EXPECT_FALSE(plan.stratified);
    EXPECT_EQ(plan.warnings.size(), 1u);
    EXPECT_EQ(plan.assignment.size(), 20u);
}

TEST(Split, RejectsBadArguments) {
    EXPECT_THROW(k_fold(labels_with({2, 2}), {}, 5, 1), ValidationError);
    EXPECT_THROW(split(labels_with({2, 2}), {}, SplitRatios{0.5, 0.5, 0.5}, 1), ValidationError);
}

TEST(MajorityVote, Examples) {
    EXPECT_EQ(majority_vote(std::vector<int>{0, 0, 1}), 0);
    EXPECT_EQ(majority_vote(std::vector<int>{0, 1}, std::vector<double>{0.6, 0.9}), 1);
    EXPECT_EQ(majority_vote(std::vector<int>{2, 2, 2, 2}), 2);
}

TEST(MajorityVote, TieWithoutConfidenceGoesToLowestClass) {
    EXPECT_EQ(majority_vote(std::vector<int>{3, 1, 3, 1}), 1);
}

TEST(MajorityVote, PermutationInvariant) {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> cls(0, 3);
    std::uniform_real_distribution<double> conf(0.2, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> p(7);
        std::vector<double> c(7);
        for (int i = 0; i < 7; ++i) {
            p[i] = cls(rng);
            c[i] = conf(rng);
        }
        const int expected = majority_vote(p, c);
        std::vector<std::size_t> idx(7);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<int> p2;
        std::vector<double> c2;
        for (auto i : idx) {
            p2.push_back(p[i]);
            c2.push_back(c[i]);
        }
        EXPECT_EQ(majority_vote(p2, c2), expected);
    }
}

TEST(MajorityVote, EmptyRejected) { EXPECT_THROW(majority_vote(std::vector<int>{}), ValidationError); }

TEST(Aggregate, IdenticalFoldsHaveZeroStandardError) {
    const auto r = EvalReport::from(from_rows({{4, 1}, {1, 4}}));
    const auto agg = aggregate({r, r, r});
    EXPECT_DOUBLE_EQ(*agg.accuracy.mean, 0.8);
    EXPECT_DOUBLE_EQ(*agg.accuracy.std_error, 0.0);
}

TEST(Aggregate, MeanAndStandardError) {
    const auto a = EvalReport::from(from_rows({{5, 0}, {0, 5}}));
    const auto b = EvalReport::from(from_rows({{3, 2}, {2, 3}}));
    const auto agg = aggregate({a, b});
    EXPECT_DOUBLE_EQ(*agg.accuracy.mean, 0.8);
    // Sample std of {1.0, 0.6} is 0.2828...; divided by sqrt(2) gives 0.2.
    EXPECT_NEAR(*agg.accuracy.std_error, 0.2, 1e-12);
}

TEST(Aggregate, SingleFoldHasNoStandardError) {
    const auto agg = aggregate({EvalReport::from(from_rows({{1, 0}, {0, 1}}))});
    EXPECT_FALSE(agg.accuracy.std_error.has_value());
    EXPECT_NE(format_table(agg, std::vector<std::string>{"a", "b"}).find("100.00"), std::string::npos);
}

TEST(CrossValidate, TwoFoldsOnSeparableData) {
    synthetic::SequenceSpec spec;
    spec.classes = 2;
    spec.per_class = 16;
    spec.dim = 12;
    spec.min_length = 4;
    spec.max_length = 12;
    spec.seed = 21;
    const auto data = synthetic::centroid_sequences(spec);
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::adam;
    cfg.learning_rate = 1e-2;
    cfg.max_epochs = 12;
    cfg.dropout_rate = 0.0;
    const auto rep = cross_validate<float>(data, 2, ModelSpec{8, true}, cfg, 2, 5);
    ASSERT_EQ(rep.folds.size(), 2u);
    for (const auto& f : rep.folds) EXPECT_GE(*f.accuracy, 0.95);
    EXPECT_DOUBLE_EQ(*rep.accuracy.mean, (*rep.folds[0].accuracy + *rep.folds[1].accuracy) / 2.0);
    const auto again = cross_validate<float>(data, 2, ModelSpec{8, true}, cfg, 2, 5);
    EXPECT_EQ(rep.to_json().dump(), again.to_json().dump());
}
