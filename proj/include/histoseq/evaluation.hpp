#pragma once

// Confusion-matrix metrics, dataset splits, k-fold cross-validation and the
// patch-level majority-vote baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "histoseq/features.hpp"
#include "histoseq/lstm.hpp"
#include "histoseq/training.hpp"
#include "json.hpp"

namespace histoseq {

/// counts[true][predicted].
struct ConfusionMatrix {
    int classes = 0;
    std::vector<std::vector<long long>> counts;

    explicit ConfusionMatrix(int c = 0) : classes(c), counts(static_cast<std::size_t>(c), std::vector<long long>(static_cast<std::size_t>(c), 0)) {}

    long long total() const {
        long long n = 0;
        for (const auto& row : counts) n = std::accumulate(row.begin(), row.end(), n);
        return n;
    }
    long long row_sum(int t) const {
        return std::accumulate(counts[t].begin(), counts[t].end(), 0LL);
    }
    long long col_sum(int p) const {
        long long n = 0;
        for (const auto& row : counts) n += row[p];
        return n;
    }
    long long true_positive(int c) const { return counts[c][c]; }
    long long false_negative(int c) const { return row_sum(c) - counts[c][c]; }
    long long false_positive(int c) const { return col_sum(c) - counts[c][c]; }
    long long true_negative(int c) const { return total() - row_sum(c) - false_positive(c); }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels, int classes) {
    if (predictions.size() != labels.size()) throw ValidationError("predictions and labels differ in length");
    if (classes < 1) throw ValidationError("class count must be positive");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int t = labels[i], p = predictions[i];
        if (t < 0 || t >= classes || p < 0 || p >= classes) {
            throw ValidationError("class index out of range at position " + std::to_string(i));
        }
        ++cm.counts[t][p];
    }
    return cm;
}

/// nullopt marks an undefined metric (zero denominator).
inline std::optional<double> sensitivity(const ConfusionMatrix& cm, int c) {
    const long long den = cm.true_positive(c) + cm.false_negative(c);
    if (den == 0) return std::nullopt;
    return static_cast<double>(cm.true_positive(c)) / static_cast<double>(den);
}

inline std::optional<double> specificity(const ConfusionMatrix& cm, int c) {
    const long long den = cm.true_negative(c) + cm.false_positive(c);
    if (den == 0) return std::nullopt;
    return static_cast<double>(cm.true_negative(c)) / static_cast<double>(den);
}

inline std::optional<double> accuracy(const ConfusionMatrix& cm) {
    const long long n = cm.total();
    if (n == 0) return std::nullopt;
    long long diag = 0;
    for (int c = 0; c < cm.classes; ++c) diag += cm.counts[c][c];
    return static_cast<double>(diag) / static_cast<double>(n);
}

namespace detail {
inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
}  // namespace detail

struct EvalReport {
    std::optional<int> fold_id;
    ConfusionMatrix cm;
    std::optional<double> accuracy;
    std::vector<std::optional<double>> sensitivity;
    std::vector<std::optional<double>> specificity;

    static EvalReport from(const ConfusionMatrix& cm, std::optional<int> fold = std::nullopt) {
        EvalReport r;
        r.fold_id = fold;
        r.cm = cm;
        r.accuracy = histoseq::accuracy(cm);
        for (int c = 0; c < cm.classes; ++c) {
            r.sensitivity.push_back(histoseq::sensitivity(cm, c));
            r.specificity.push_back(histoseq::specificity(cm, c));
        }
        return r;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["fold"] = fold_id ? nlohmann::json(*fold_id) : nlohmann::json(nullptr);
        j["confusion_matrix"] = cm.counts;
        j["accuracy"] = detail::opt_json(accuracy);
        j["sensitivity"] = nlohmann::json::array();
        j["specificity"] = nlohmann::json::array();
        for (std::size_t c = 0; c < sensitivity.size(); ++c) {
            j["sensitivity"].push_back(detail::opt_json(sensitivity[c]));
            j["specificity"].push_back(detail::opt_json(specificity[c]));
        }
        return j;
    }
};

/// Mean and standard error (sample std / sqrt(n)) over the defined values.
struct MetricSummary {
    std::optional<double> mean;
    std::optional<double> std_error;
    int count = 0;

    static MetricSummary of(std::span<const std::optional<double>> values) {
        std::vector<double> v;
        for (const auto& x : values)
            if (x) v.push_back(*x);
        MetricSummary s;
        s.count = static_cast<int>(v.size());
        if (v.empty()) return s;
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        s.mean = mean;
        if (v.size() >= 2) {
            // Shifted by the first value so identical inputs give exactly 0.
            double sum = 0.0, sq = 0.0;
            for (double x : v) {
                sum += x - v.front();
                sq += (x - v.front()) * (x - v.front());
            }
            const double n = static_cast<double>(v.size());
            const double ss = std::max(0.0, sq - sum * sum / n);
            s.std_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
        }
        return s;
    }

    nlohmann::json to_json() const {
        return {{"mean", detail::opt_json(mean)}, {"std_error", detail::opt_json(std_error)}, {"n", count}};
    }
};

enum class Subset { train = 0, validation = 1, test = 2 };

struct SplitPlan {
    std::vector<std::string> region_ids;
    /// Subset index for hold-out plans, fold index for k-fold plans.
    std::vector<int> assignment;
    int parts = 0;
    std::uint64_t seed = 0;
    bool stratified = false;
    std::vector<std::string> warnings;

    std::vector<std::size_t> members(int part) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] == part) out.push_back(i);
        return out;
    }
    std::vector<std::size_t> members(Subset s) const { return members(static_cast<int>(s)); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["parts"] = parts;
        j["seed"] = seed;
        j["stratified"] = stratified;
        j["warnings"] = warnings;
        j["assignment"] = nlohmann::json::object();
        for (std::size_t i = 0; i < region_ids.size(); ++i) j["assignment"][region_ids[i]] = assignment[i];
        return j;
    }
};

struct SplitRatios {
    double train = 0.70;
    double validation = 0.15;
    double test = 0.15;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> class_groups(std::span<const int> labels, int classes) {
    std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes) throw ValidationError("label out of range in split");
        groups[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    return groups;
}

inline int infer_classes(std::span<const int> labels) {
    int c = 0;
    for (int l : labels) c = std::max(c, l + 1);
    return c;
}

inline std::vector<std::string> ids_or_index(std::span<const std::string> ids, std::size_t n) {
    if (ids.size() == n) return {ids.begin(), ids.end()};
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(std::to_string(i));
    return out;
}

}  // namespace detail

/// Seeded shuffle then contiguous train/validation/test partition, per class
/// when every class is populated.
inline SplitPlan split(std::span<const int> labels, std::span<const std::string> ids, SplitRatios ratios,
                       std::uint64_t seed, int classes = 0) {
    if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
        throw ValidationError("split ratios must be non-negative and sum to 1");
    }
    if (classes <= 0) classes = detail::infer_classes(labels);
    SplitPlan plan;
    plan.region_ids = detail::ids_or_index(ids, labels.size());
    plan.assignment.assign(labels.size(), 0);
    plan.parts = 3;
    plan.seed = seed;
    std::mt19937_64 rng(seed);

    auto assign = [&](std::vector<std::size_t> items) {
        std::shuffle(items.begin(), items.end(), rng);
        const auto n = static_cast<double>(items.size());
        const auto n_train = static_cast<std::size_t>(std::llround(n * ratios.train));
        const auto n_val = std::min(items.size() - std::min(items.size(), n_train),
                                    static_cast<std::size_t>(std::llround(n * ratios.validation)));
        for (std::size_t k = 0; k < items.size(); ++k) {
            plan.assignment[items[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
        }
    };

    const auto groups = detail::class_groups(labels, classes);
    plan.stratified = std::all_of(groups.begin(), groups.end(), [](const auto& g) { return !g.empty(); });
    if (plan.stratified) {
        for (const auto& g : groups) assign(g);
    } else {
        plan.warnings.emplace_back("a class has zero members; split is not stratified");
        std::vector<std::size_t> all(labels.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        assign(all);
    }
    return plan;
}

/// k folds whose sizes differ by at most one. Stratified (class-ordered
/// round-robin after per-class shuffles) when every class has >= k members.
inline SplitPlan k_fold(std::span<const int> labels, std::span<const std::string> ids, int k, std::uint64_t seed,
                        int classes = 0) {
    if (k < 1) throw ValidationError("k must be >= 1");
    if (labels.size() < static_cast<std::size_t>(k)) {
        throw ValidationError("dataset of " + std::to_string(labels.size()) + " items cannot form " + std::to_string(k) + " folds");
    }
    if (classes <= 0) classes = detail::infer_classes(labels);
    SplitPlan plan;
    plan.region_ids = detail::ids_or_index(ids, labels.size());
    plan.assignment.assign(labels.size(), 0);
    plan.parts = k;
    plan.seed = seed;
    std::mt19937_64 rng(seed);

    auto groups = detail::class_groups(labels, classes);
    plan.stratified = std::all_of(groups.begin(), groups.end(),
                                  [k](const auto& g) { return g.size() >= static_cast<std::size_t>(k); });
    if (plan.stratified) {
        std::size_t j = 0;
        for (auto& g : groups) {
            std::shuffle(g.begin(), g.end(), rng);
            for (std::size_t idx : g) plan.assignment[idx] = static_cast<int>(j++ % static_cast<std::size_t>(k));
        }
    } else {
        plan.warnings.emplace_back("a class has fewer than k members; folds are not stratified");
        std::vector<std::size_t> all(labels.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::shuffle(all.begin(), all.end(), rng);
        const std::size_t n = all.size(), base = n / static_cast<std::size_t>(k), extra = n % static_cast<std::size_t>(k);
        std::size_t pos = 0;
        for (int f = 0; f < k; ++f) {
            const std::size_t size = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
            for (std::size_t i = 0; i < size; ++i) plan.assignment[all[pos++]] = f;
        }
    }
    return plan;
}

inline std::vector<int> labels_of(std::span<const FeatureSequence> data) {
    std::vector<int> out;
    for (const auto& s : data) out.push_back(s.label);
    return out;
}

inline std::vector<std::string> ids_of(std::span<const FeatureSequence> data) {
    std::vector<std::string> out;
    for (const auto& s : data) out.push_back(s.region_id);
    return out;
}

inline std::vector<FeatureSequence> gather(std::span<const FeatureSequence> data, std::span<const std::size_t> idx) {
    std::vector<FeatureSequence> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(data[i]);
    return out;
}

/// Modal class. Ties go to the class with the larger summed confidence when
/// confidences are given, then to the lowest index.
inline int majority_vote(std::span<const int> predictions, std::span<const double> confidences = {}) {
    if (predictions.empty()) throw ValidationError("majority vote over zero predictions");
    if (!confidences.empty() && confidences.size() != predictions.size()) {
        throw ValidationError("confidences must align with predictions");
    }
    std::map<int, std::pair<long long, double>> tally;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        auto& [count, mass] = tally[predictions[i]];
        ++count;
        if (!confidences.empty()) mass += confidences[i];
    }
    int best = tally.begin()->first;
    auto best_score = tally.begin()->second;
    for (const auto& [cls, score] : tally) {
        if (score.first > best_score.first || (score.first == best_score.first && score.second > best_score.second)) {
            best = cls;
            best_score = score;
        }
    }
    return best;
}

template <typename T>
EvalReport evaluate_model(const BiLstmModel<T>& model, std::span<const FeatureSequence> data,
                          std::optional<int> fold = std::nullopt) {
    std::vector<int> preds, labels;
    for (const auto& s : data) {
        preds.push_back(predict(model, s));
        labels.push_back(s.label);
    }
    return EvalReport::from(confusion_matrix(preds, labels, model.classes()), fold);
}

struct ModelSpec {
    int hidden = 2000;
    bool bidirectional = true;
};

struct CrossValidationReport {
    std::vector<EvalReport> folds;
    std::vector<TrainHistory> histories;
    MetricSummary accuracy;
    std::vector<MetricSummary> sensitivity;
    std::vector<MetricSummary> specificity;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["folds"] = nlohmann::json::array();
        for (std::size_t f = 0; f < folds.size(); ++f) {
            auto fj = folds[f].to_json();
            if (f < histories.size()) {
                fj["epochs_run"] = histories[f].epochs.size();
                fj["best_epoch"] = histories[f].best_epoch;
                fj["stop_reason"] = std::string(to_string(histories[f].stop_reason));
            }
            j["folds"].push_back(fj);
        }
        j["aggregate"]["accuracy"] = accuracy.to_json();
        j["aggregate"]["sensitivity"] = nlohmann::json::array();
        j["aggregate"]["specificity"] = nlohmann::json::array();
        for (std::size_t c = 0; c < sensitivity.size(); ++c) {
            j["aggregate"]["sensitivity"].push_back(sensitivity[c].to_json());
            j["aggregate"]["specificity"].push_back(specificity[c].to_json());
        }
        j["warnings"] = warnings;
        return j;
    }
};

inline CrossValidationReport aggregate(std::vector<EvalReport> folds) {
    CrossValidationReport rep;
    std::vector<std::optional<double>> acc;
    for (const auto& f : folds) acc.push_back(f.accuracy);
    rep.accuracy = MetricSummary::of(acc);
    const std::size_t classes = folds.empty() ? 0 : folds.front().sensitivity.size();
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<std::optional<double>> se, sp;
        for (const auto& f : folds) {
            se.push_back(f.sensitivity[c]);
            sp.push_back(f.specificity[c]);
        }
        rep.sensitivity.push_back(MetricSummary::of(se));
        rep.specificity.push_back(MetricSummary::of(sp));
    }
    rep.folds = std::move(folds);
    return rep;
}

/// One independent training per fold, seeded with seed + fold index. Each
/// fold's training portion is split 85/15 again to drive validation patience.
template <typename T = float>
CrossValidationReport cross_validate(std::span<const FeatureSequence> data, int classes, const ModelSpec& spec,
                                     const TrainConfig& config, int k, std::uint64_t seed) {
    if (data.empty()) throw ValidationError("cross-validation needs a non-empty dataset");
    const auto labels = labels_of(data);
    const auto ids = ids_of(data);
    const SplitPlan plan = k_fold(labels, ids, k, seed, classes);

    std::vector<EvalReport> reports;
    std::vector<TrainHistory> histories;
    for (int f = 0; f < k; ++f) {
        const std::uint64_t fold_seed = seed + static_cast<std::uint64_t>(f);
        std::vector<std::size_t> rest, test_idx = plan.members(f);
        for (std::size_t i = 0; i < data.size(); ++i)
            if (plan.assignment[i] != f) rest.push_back(i);
        const auto pool = gather(data, rest);

        const auto pool_labels = labels_of(pool);
        const auto pool_ids = ids_of(pool);
        const SplitPlan inner = split(pool_labels, pool_ids, SplitRatios{0.85, 0.15, 0.0}, fold_seed, classes);
        const auto train_set = gather(pool, inner.members(Subset::train));
        const auto val_set = gather(pool, inner.members(Subset::validation));

        TrainConfig cfg = config;
        cfg.seed = fold_seed;
        const ModelShape shape{static_cast<int>(data.front().dim()), spec.hidden, classes, spec.bidirectional};
        auto result = train(BiLstmModel<T>::initialized(shape, fold_seed), train_set, val_set, cfg);
        const auto test_set = gather(data, test_idx);
        reports.push_back(evaluate_model(result.model, test_set, f));
        histories.push_back(std::move(result.history));
    }
    CrossValidationReport rep = aggregate(std::move(reports));
    rep.histories = std::move(histories);
    rep.warnings = plan.warnings;
    return rep;
}

/// Plain-text Se./Sp. table, one row per class plus overall accuracy.
inline std::string format_table(const CrossValidationReport& rep, std::span<const std::string> class_names) {
    auto cell = [](const MetricSummary& m) {
        std::ostringstream os;
        if (!m.mean) return std::string("n/a");
        os << std::fixed << std::setprecision(2) << 100.0 * *m.mean;
        if (m.std_error) os << " +/- " << std::setprecision(2) << 100.0 * *m.std_error;
        return os.str();
    };
    std::ostringstream os;
    os << std::left << std::setw(20) << "Class" << std::setw(20) << "Se. (%)" << "Sp. (%)" << '\n';
    for (std::size_t c = 0; c < rep.sensitivity.size(); ++c) {
        const std::string name = c < class_names.size() ? class_names[c] : "class " + std::to_string(c);
        os << std::setw(20) << name << std::setw(20) << cell(rep.sensitivity[c]) << cell(rep.specificity[c]) << '\n';
    }
    os << std::setw(20) << "Accuracy (%)" << cell(rep.accuracy) << '\n';
    return os.str();
}

}  // namespace histoseq
