#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "histoseq/lstm.hpp"

namespace histoseq {

enum class OptimizerKind { sgdm, rmsprop, adam };

inline std::string_view to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgdm: return "sgdm";
        case OptimizerKind::rmsprop: return "rmsprop";
        case OptimizerKind::adam: return "adam";
    }
    return "?";
}

inline std::optional<OptimizerKind> parse_optimizer(std::string_view s) {
    if (s == "sgdm" || s == "SGDM") return OptimizerKind::sgdm;
    if (s == "rmsprop" || s == "RMSprop") return OptimizerKind::rmsprop;
    if (s == "adam" || s == "ADAM") return OptimizerKind::adam;
    return std::nullopt;
}

struct OptimizerSettings {
    OptimizerKind kind = OptimizerKind::rmsprop;
    double learning_rate = 1e-4;
    double momentum = 0.90;
    double squared_grad_decay = 0.99;
    double grad_decay = 0.90;
    double epsilon = 1e-8;
    /// Global L2 norm cap on the gradient; 0 disables clipping.
    double clip_norm = 0.0;
};

/// SGDM:    v <- mu v - lr g;                theta <- theta + v
/// RMSprop: s <- rho s + (1-rho) g^2;       theta <- theta - lr g / (sqrt(s) + eps)
/// ADAM:    m, v moments with bias correction; theta <- theta - lr m^ / (sqrt(v^) + eps)
class Optimizer {
public:
    Optimizer(OptimizerSettings settings, std::size_t parameter_count)
        : settings_(settings), first_(parameter_count, 0.0), second_(parameter_count, 0.0) {}

    const OptimizerSettings& settings() const noexcept { return settings_; }
    long long steps() const noexcept { return steps_; }

    /// Flat update; `params` and `grads` cover the whole parameter vector.
    template <typename T>
    void step(std::span<T> params, std::span<const T> grads) {
        if (params.size() != first_.size() || grads.size() != first_.size()) {
            throw ValidationError("optimizer state does not match parameter count");
        }
        ++steps_;
        begin_step();
        apply(params, grads, 0, clip_scale(grads));
    }

    template <typename T>
    void step(BiLstmModel<T>& model, const BiLstmModel<T>& grads) {
        std::vector<std::span<T>> ps;
        std::vector<std::span<const T>> gs;
        for_each_tensor(model, [&ps](std::string_view, auto& t) { ps.emplace_back(t.data(), static_cast<std::size_t>(t.size())); });
        for_each_tensor(grads, [&gs](std::string_view, const auto& t) {
            gs.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
        });
        std::size_t total = 0;
        for (auto& p : ps) total += p.size();
        if (total != first_.size() || ps.size() != gs.size()) {
            throw ValidationError("optimizer state does not match model parameter count");
        }
        double sq = 0.0;
        for (auto& g : gs)
            for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
        const double scale = clip_from_norm(std::sqrt(sq));

        ++steps_;
        begin_step();
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ps.size(); ++k) {
            apply(ps[k], gs[k], offset, scale);
            offset += ps[k].size();
        }
    }

private:
    template <typename T>
    double clip_scale(std::span<const T> grads) const {
        double sq = 0.0;
        for (T v : grads) sq += static_cast<double>(v) * static_cast<double>(v);
        return clip_from_norm(std::sqrt(sq));
    }

    double clip_from_norm(double norm) const {
        if (settings_.clip_norm > 0.0 && norm > settings_.clip_norm) return settings_.clip_norm / norm;
        return 1.0;
    }

    void begin_step() {
        if (settings_.kind == OptimizerKind::adam) {
            bias1_ = 1.0 - std::pow(settings_.grad_decay, static_cast<double>(steps_));
            bias2_ = 1.0 - std::pow(settings_.squared_grad_decay, static_cast<double>(steps_));
        }
    }

    template <typename T>
    void apply(std::span<T> params, std::span<const T> grads, std::size_t offset, double scale) {
        const double lr = settings_.learning_rate;
        const double eps = settings_.epsilon;
        for (std::size_t k = 0; k < params.size(); ++k) {
            const double g = static_cast<double>(grads[k]) * scale;
            double& a = first_[offset + k];
            double& b = second_[offset + k];
            double theta = static_cast<double>(params[k]);
            switch (settings_.kind) {
                case OptimizerKind::sgdm:
                    a = settings_.momentum * a - lr * g;
                    theta += a;
                    break;
                case OptimizerKind::rmsprop:
                    b = settings_.squared_grad_decay * b + (1.0 - settings_.squared_grad_decay) * g * g;
                    theta -= lr * g / (std::sqrt(b) + eps);
                    break;
                case OptimizerKind::adam: {
                    a = settings_.grad_decay * a + (1.0 - settings_.grad_decay) * g;
                    b = settings_.squared_grad_decay * b + (1.0 - settings_.squared_grad_decay) * g * g;
                    const double m_hat = a / bias1_;
                    const double v_hat = b / bias2_;
                    theta -= lr * m_hat / (std::sqrt(v_hat) + eps);
                    break;
                }
            }
            params[k] = static_cast<T>(theta);
        }
    }

    OptimizerSettings settings_;
    std::vector<double> first_;
    std::vector<double> second_;
    long long steps_ = 0;
    double bias1_ = 1.0;
    double bias2_ = 1.0;
};

}  // namespace histoseq
