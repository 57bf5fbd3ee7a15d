#pragma once

// Example-at-a-time training with validation patience, plus the
// finite-difference gradient check for the hand-written BPTT.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "histoseq/lstm.hpp"
#include "histoseq/optimizer.hpp"

namespace histoseq {

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::rmsprop;
    double learning_rate = 1e-4;
    double momentum = 0.90;
    double squared_grad_decay = 0.99;
    double grad_decay = 0.90;
    double epsilon = 1e-8;
    int max_epochs = 30;
    std::optional<int> patience = 5;
    double dropout_rate = 0.5;
    std::uint64_t seed = 0;
    double clip_norm = 0.0;

    OptimizerSettings optimizer_settings() const {
        return {optimizer, learning_rate, momentum, squared_grad_decay, grad_decay, epsilon, clip_norm};
    }

    /// Collects every problem instead of stopping at the first.
    std::vector<std::string> validate() const {
        std::vector<std::string> errs;
        if (!(learning_rate > 0.0)) errs.emplace_back("learning_rate must be > 0");
        if (max_epochs < 1) errs.emplace_back("max_epochs must be >= 1");
        if (patience && *patience < 1) errs.emplace_back("patience must be >= 1 when set");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) errs.emplace_back("dropout_rate must be in [0, 1)");
        if (!(momentum >= 0.0 && momentum < 1.0)) errs.emplace_back("momentum must be in [0, 1)");
        if (!(squared_grad_decay >= 0.0 && squared_grad_decay < 1.0)) errs.emplace_back("squared_grad_decay must be in [0, 1)");
        if (!(grad_decay >= 0.0 && grad_decay < 1.0)) errs.emplace_back("grad_decay must be in [0, 1)");
        if (!(epsilon > 0.0)) errs.emplace_back("epsilon must be > 0");
        if (clip_norm < 0.0) errs.emplace_back("clip_norm must be >= 0");
        return errs;
    }
};

enum class StopReason { max_epochs, patience };

inline std::string_view to_string(StopReason r) { return r == StopReason::patience ? "patience" : "max_epochs"; }

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    std::optional<double> val_loss;
    std::optional<double> val_accuracy;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    StopReason stop_reason = StopReason::max_epochs;
    int best_epoch = 0;

    friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

/// Counts epochs whose validation loss is >= the best seen; resets on strict
/// improvement. Training stops once the count reaches `patience`.
class EarlyStopping {
public:
    explicit EarlyStopping(std::optional<int> patience) : patience_(patience) {}

    /// Returns true when `loss` is a new best.
    bool update(int epoch, double loss) {
        if (loss < best_loss_) {
            best_loss_ = loss;
            best_epoch_ = epoch;
            stale_ = 0;
            return true;
        }
        ++stale_;
        return false;
    }

    bool should_stop() const noexcept { return patience_ && stale_ >= *patience_; }
    int best_epoch() const noexcept { return best_epoch_; }
    double best_loss() const noexcept { return best_loss_; }
    int stale_count() const noexcept { return stale_; }

private:
    std::optional<int> patience_;
    double best_loss_ = std::numeric_limits<double>::infinity();
    int best_epoch_ = 0;
    int stale_ = 0;
};

struct EvalSummary {
    double mean_loss = 0.0;
    double accuracy = 0.0;
};

template <typename T>
EvalSummary evaluate_set(const BiLstmModel<T>& model, std::span<const FeatureSequence> data) {
    EvalSummary s;
    if (data.empty()) return s;
    int correct = 0;
    for (const auto& seq : data) {
        const auto fwd = bilstm_forward(model, seq, false);
        s.mean_loss += static_cast<double>(cross_entropy_from_logits(fwd.states.logits, seq.label));
        Eigen::Index k = 0;
        fwd.states.logits.maxCoeff(&k);
        correct += static_cast<int>(k) == seq.label;
    }
    s.mean_loss /= static_cast<double>(data.size());
    s.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return s;
}

template <typename T>
struct TrainHooks {
    /// Replaces the computed validation loss (epoch is 1-based).
    std::function<double(const BiLstmModel<T>&, int epoch)> validation_loss;
    std::function<void(int epoch, const BiLstmModel<T>&)> on_epoch_end;
};

template <typename T>
struct TrainResult {
    BiLstmModel<T> model;
    TrainHistory history;
};

/// One optimizer step per example, reshuffled each epoch. Returns the
/// parameters of the best validation epoch (or the last epoch when there is
/// no validation signal).
template <typename T>
TrainResult<T> train(BiLstmModel<T> model, std::span<const FeatureSequence> train_set,
                     std::span<const FeatureSequence> val_set, const TrainConfig& config,
                     const TrainHooks<T>& hooks = {}) {
    if (train_set.empty()) throw ValidationError("training set is empty");
    if (auto errs = config.validate(); !errs.empty()) {
        std::string msg = "invalid training config:";
        for (auto& e : errs) msg += "\n  " + e;
        throw ValidationError(msg);
    }
    for (const auto* set : {&train_set, &val_set}) {
        for (const auto& s : *set) {
            if (s.dim() != model.input_size()) {
                throw ValidationError("region '" + s.region_id + "' has D=" + std::to_string(s.dim()) +
                                      ", model expects " + std::to_string(model.input_size()));
            }
            if (s.label < 0 || s.label >= model.classes()) {
                throw ValidationError("region '" + s.region_id + "' has an out-of-range label");
            }
        }
    }
    model.dropout_rate = config.dropout_rate;

    std::mt19937_64 rng(config.seed);
    Optimizer opt(config.optimizer_settings(), static_cast<std::size_t>(parameter_count(model)));
    EarlyStopping stopper(config.patience);
    const bool validating = !val_set.empty() || static_cast<bool>(hooks.validation_loss);

    TrainResult<T> result;
    result.model = model;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t idx : order) {
            const FeatureSequence& seq = train_set[idx];
            const Mat<T> x = seq.features.template cast<T>();
            const auto fwd = bilstm_forward(model, x, true, &rng);
            const auto g = compute_gradients(model, x, seq.label, fwd);
            loss_sum += static_cast<double>(g.loss);
            opt.step(model, g.grads);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_set.size());
        if (!std::isfinite(rec.train_loss)) throw NumericFault("training loss became non-finite");

        if (validating) {
            if (!val_set.empty()) {
                const EvalSummary ev = evaluate_set(model, val_set);
                rec.val_loss = ev.mean_loss;
                rec.val_accuracy = ev.accuracy;
            }
            if (hooks.validation_loss) rec.val_loss = hooks.validation_loss(model, epoch);
            if (stopper.update(epoch, *rec.val_loss)) {
                result.model = model;
                result.history.best_epoch = epoch;
            }
        } else {
            result.model = model;
            result.history.best_epoch = epoch;
        }
        result.history.epochs.push_back(rec);
        if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model);
        if (validating && stopper.should_stop()) {
            result.history.stop_reason = StopReason::patience;
            break;
        }
    }
    return result;
}

struct GradientCheckReport {
    double max_relative_error = 0.0;
    std::string worst_tensor;
    Eigen::Index worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Compares BPTT against central differences over every parameter entry,
/// dropout disabled. Relative error = |a - n| / max(|a|, |n|, 1e-12).
inline GradientCheckReport gradient_check(const BiLstmModel<double>& model, const FeatureSequence& seq, int label,
                                          double step = 1e-5) {
    BiLstmModel<double> probe = model;
    probe.dropout_rate = 0.0;
    const auto fwd = bilstm_forward(probe, seq.features, false);
    const auto analytic = compute_gradients(probe, seq.features, label, fwd);

    auto loss_at = [&]() {
        return cross_entropy_from_logits(bilstm_forward(probe, seq.features, false).states.logits, label);
    };

    std::vector<std::pair<std::string, Eigen::Map<Eigen::VectorXd>>> params;
    std::vector<std::pair<std::string, Eigen::Map<const Eigen::VectorXd>>> grads;
    for_each_tensor(probe, [&](std::string_view name, auto& t) {
        params.emplace_back(std::string(name), Eigen::Map<Eigen::VectorXd>(t.data(), t.size()));
    });
    for_each_tensor(analytic.grads, [&](std::string_view name, const auto& t) {
        grads.emplace_back(std::string(name), Eigen::Map<const Eigen::VectorXd>(t.data(), t.size()));
    });

    GradientCheckReport rep;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k].second;
        const auto& g = grads[k].second;
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const double saved = p(i);
            p(i) = saved + step;
            const double up = loss_at();
            p(i) = saved - step;
            const double down = loss_at();
            p(i) = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = g(i);
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
            if (err > rep.max_relative_error || rep.worst_tensor.empty()) {
                rep = {err, params[k].first, i, a, numeric};
            }
        }
    }
    return rep;
}

}  // namespace histoseq
