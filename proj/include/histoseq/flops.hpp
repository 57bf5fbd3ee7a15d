#pragma once

// Closed-form learnable-parameter accounting for the BiLSTM head. Following
// the reference convention the total is reported as "FLOPs" and is not scaled
// by sequence length.

#include <cstdint>
#include <ostream>
#include <string>

#include "histoseq/core.hpp"
#include "json.hpp"

namespace histoseq {

struct FlopsReport {
    std::int64_t input_size = 0;    // I
    std::int64_t hidden = 0;        // H, per direction
    std::int64_t total_hidden = 0;  // M = 2H
    std::int64_t output_dim = 0;    // K = M / 2
    std::int64_t classes = 0;
    std::int64_t recurrent_params = 0;    // W = 4 M ((I + 1) + K)
    std::int64_t dense_params = 0;        // F = classes * M (weights only)
    std::int64_t dense_params_with_bias = 0;
    std::int64_t total = 0;               // W + F
    std::int64_t total_with_bias = 0;

    nlohmann::json to_json() const {
        return {{"I", input_size},
                {"H", hidden},
                {"M", total_hidden},
                {"K", output_dim},
                {"classes", classes},
                {"W", recurrent_params},
                {"F", dense_params},
                {"F_with_bias", dense_params_with_bias},
                {"total", total},
                {"total_with_bias", total_with_bias},
                {"unit", "learnable parameters (reported as FLOPs)"}};
    }
};

inline FlopsReport bilstm_flops(std::int64_t input_size, std::int64_t hidden, std::int64_t classes) {
    if (input_size < 1 || hidden < 1 || classes < 1) {
        throw ValidationError("input size, hidden units and classes must all be >= 1");
    }
    FlopsReport r;
    r.input_size = input_size;
    r.hidden = hidden;
    r.classes = classes;
    r.total_hidden = 2 * hidden;
    r.output_dim = r.total_hidden / 2;
    r.recurrent_params = 4 * r.total_hidden * ((input_size + 1) + r.output_dim);
    r.dense_params = classes * r.total_hidden;
    r.dense_params_with_bias = r.dense_params + classes;
    r.total = r.recurrent_params + r.dense_params;
    r.total_with_bias = r.recurrent_params + r.dense_params_with_bias;
    return r;
}

inline std::ostream& operator<<(std::ostream& os, const FlopsReport& r) {
    auto line = [&os](const char* name, std::int64_t v) {
        std::string label = name;
        label.resize(36, ' ');
        os << label << v << '\n';
    };
    line("input size (I)", r.input_size);
    line("hidden units per direction (H)", r.hidden);
    line("total hidden units (M)", r.total_hidden);
    line("output dimensions (K)", r.output_dim);
    line("classes", r.classes);
    line("BiLSTM parameters (W)", r.recurrent_params);
    line("dense weights (F)", r.dense_params);
    line("dense weights + bias", r.dense_params_with_bias);
    line("total W + F", r.total);
    line("total incl. dense bias", r.total_with_bias);
    return os;
}

}  // namespace histoseq
