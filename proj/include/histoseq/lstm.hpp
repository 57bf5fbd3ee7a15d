#pragma once

// Single-layer bidirectional LSTM, sequence-to-one, with hand-written
// backpropagation through time. Templated on the scalar so training can run
// in float while gradient checks run in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <span>
#include <string_view>
#include <type_traits>

#include <Eigen/Dense>

#include "histoseq/core.hpp"
#include "histoseq/features.hpp"

namespace histoseq {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Row-block order inside the stacked gate matrices.
enum class Gate { input = 0, forget = 1, cell = 2, output = 3 };

inline std::string_view gate_name(Gate g) {
    switch (g) {
        case Gate::input: return "input";
        case Gate::forget: return "forget";
        case Gate::cell: return "cell candidate";
        case Gate::output: return "output";
    }
    return "?";
}

/// Gate weights stacked as [input; forget; cell; output]: W is 4H x D,
/// U is 4H x H, b is 4H.
template <typename T>
struct LstmCellParams {
    Mat<T> W;
    Mat<T> U;
    Vec<T> b;

    static LstmCellParams zeros(int input_size, int hidden) {
        return {Mat<T>::Zero(4 * hidden, input_size), Mat<T>::Zero(4 * hidden, hidden), Vec<T>::Zero(4 * hidden)};
    }

    int hidden() const noexcept { return static_cast<int>(U.cols()); }
    int input_size() const noexcept { return static_cast<int>(W.cols()); }

    auto W_gate(Gate g) { return W.middleRows(static_cast<int>(g) * hidden(), hidden()); }
    auto U_gate(Gate g) { return U.middleRows(static_cast<int>(g) * hidden(), hidden()); }
    auto b_gate(Gate g) { return b.segment(static_cast<int>(g) * hidden(), hidden()); }
    auto W_gate(Gate g) const { return W.middleRows(static_cast<int>(g) * hidden(), hidden()); }
    auto U_gate(Gate g) const { return U.middleRows(static_cast<int>(g) * hidden(), hidden()); }
    auto b_gate(Gate g) const { return b.segment(static_cast<int>(g) * hidden(), hidden()); }

    template <typename U2>
    LstmCellParams<U2> cast() const {
        return {W.template cast<U2>(), U.template cast<U2>(), b.template cast<U2>()};
    }
};

namespace detail {

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& v, Gate g) {
    if (!v.allFinite()) throw NumericFault("non-finite activation in " + std::string(gate_name(g)) + " gate");
}

}  // namespace detail

template <typename T>
struct CellState {
    Vec<T> h;
    Vec<T> c;
};

/// One LSTM step with sigmoid gates and tanh candidate/output.
template <typename T>
CellState<T> lstm_cell_step(const LstmCellParams<T>& p, const Vec<T>& x, const Vec<T>& h_prev, const Vec<T>& c_prev) {
    const int H = p.hidden();
    if (x.size() != p.input_size() || h_prev.size() != H || c_prev.size() != H) {
        throw ValidationError("lstm_cell_step: shape mismatch");
    }
    const Vec<T> a = p.W * x + p.U * h_prev + p.b;
    const Vec<T> i = a.segment(0, H).unaryExpr(&detail::sigmoid<T>);
    const Vec<T> f = a.segment(H, H).unaryExpr(&detail::sigmoid<T>);
    const Vec<T> g = a.segment(2 * H, H).array().tanh();
    const Vec<T> o = a.segment(3 * H, H).unaryExpr(&detail::sigmoid<T>);
    detail::require_finite(i, Gate::input);
    detail::require_finite(f, Gate::forget);
    detail::require_finite(g, Gate::cell);
    detail::require_finite(o, Gate::output);
    CellState<T> out;
    out.c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
    out.h = o.cwiseProduct(out.c.array().tanh().matrix());
    return out;
}

/// Activations of one cell over a whole sequence, in the order it consumed
/// the columns. Column s+1 of h/c is the state after step s; column 0 is zero.
template <typename T>
struct CellTrace {
    Mat<T> gates;  // 4H x n, post-activation [i; f; g; o]
    Mat<T> h;      // H x (n+1)
    Mat<T> c;      // H x (n+1)
    bool reversed = false;

    Vec<T> final_h() const { return h.col(h.cols() - 1); }
};

template <typename T>
CellTrace<T> run_cell(const LstmCellParams<T>& p, const Mat<T>& x, bool reversed) {
    const int H = p.hidden();
    const Eigen::Index n = x.cols();
    CellTrace<T> tr;
    tr.reversed = reversed;
    tr.gates.resize(4 * H, n);
    tr.h = Mat<T>::Zero(H, n + 1);
    tr.c = Mat<T>::Zero(H, n + 1);
    // Input projections for every step at once.
    const Mat<T> wx = p.W * x;
    Vec<T> a(4 * H);
    for (Eigen::Index s = 0; s < n; ++s) {
        const Eigen::Index t = reversed ? n - 1 - s : s;
        a.noalias() = wx.col(t) + p.b;
        a.noalias() += p.U * tr.h.col(s);
        auto gs = tr.gates.col(s);
        for (int k = 0; k < H; ++k) {
            gs(k) = detail::sigmoid(a(k));
            gs(H + k) = detail::sigmoid(a(H + k));
            gs(2 * H + k) = std::tanh(a(2 * H + k));
            gs(3 * H + k) = detail::sigmoid(a(3 * H + k));
        }
        if (!gs.allFinite()) {
            for (Gate g : {Gate::input, Gate::forget, Gate::cell, Gate::output})
                detail::require_finite(gs.segment(static_cast<int>(g) * H, H), g);
        }
        tr.c.col(s + 1) = gs.segment(H, H).cwiseProduct(tr.c.col(s)) + gs.segment(0, H).cwiseProduct(gs.segment(2 * H, H));
        tr.h.col(s + 1) = gs.segment(3 * H, H).cwiseProduct(tr.c.col(s + 1).array().tanh().matrix());
    }
    return tr;
}

struct ModelShape {
    int input_size = 1;
    int hidden = 1;
    int classes = 2;
    bool bidirectional = true;
};

/// Sequence classifier: forward/backward cells, concatenated final states V,
/// dropout on V, dense head, softmax.
template <typename T>
struct BiLstmModel {
    LstmCellParams<T> forward;
    LstmCellParams<T> backward;  // empty when unidirectional
    Mat<T> dense_W;              // C x |V|
    Vec<T> dense_b;              // C
    double dropout_rate = 0.0;
    bool bidirectional = true;

    int input_size() const noexcept { return forward.input_size(); }
    int hidden() const noexcept { return forward.hidden(); }
    int classes() const noexcept { return static_cast<int>(dense_b.size()); }
    int combined_size() const noexcept { return bidirectional ? 2 * hidden() : hidden(); }
    ModelShape shape() const { return {input_size(), hidden(), classes(), bidirectional}; }

    static BiLstmModel zeros(const ModelShape& s) {
        if (s.input_size < 1 || s.hidden < 1 || s.classes < 2) {
            throw ValidationError("model needs input size >= 1, hidden >= 1, classes >= 2");
        }
        BiLstmModel m;
        m.bidirectional = s.bidirectional;
        m.forward = LstmCellParams<T>::zeros(s.input_size, s.hidden);
        if (s.bidirectional) m.backward = LstmCellParams<T>::zeros(s.input_size, s.hidden);
        m.dense_W = Mat<T>::Zero(s.classes, s.bidirectional ? 2 * s.hidden : s.hidden);
        m.dense_b = Vec<T>::Zero(s.classes);
        return m;
    }

    /// Glorot-uniform weights, zero biases except forget gate = 1.
    static BiLstmModel initialized(const ModelShape& s, std::uint64_t seed) {
        BiLstmModel m = zeros(s);
        std::mt19937_64 rng(seed);
        auto fill = [&rng](auto& mat, double fan_in, double fan_out) {
            std::uniform_real_distribution<double> dist(-1.0, 1.0);
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            for (Eigen::Index k = 0; k < mat.size(); ++k) mat.data()[k] = static_cast<T>(limit * dist(rng));
        };
        auto init_cell = [&](LstmCellParams<T>& c) {
            fill(c.W, s.input_size, s.hidden);
            fill(c.U, s.hidden, s.hidden);
            c.b_gate(Gate::forget).setOnes();
        };
        init_cell(m.forward);
        if (s.bidirectional) init_cell(m.backward);
        fill(m.dense_W, static_cast<double>(m.combined_size()), s.classes);
        return m;
    }

    template <typename U2>
    BiLstmModel<U2> cast() const {
        BiLstmModel<U2> m;
        m.forward = forward.template cast<U2>();
        m.backward = backward.template cast<U2>();
        m.dense_W = dense_W.template cast<U2>();
        m.dense_b = dense_b.template cast<U2>();
        m.dropout_rate = dropout_rate;
        m.bidirectional = bidirectional;
        return m;
    }
};

/// Visit every learnable tensor with its stable name.
template <typename Model, typename F>
void for_each_tensor(Model& m, F&& f) {
    f("forward.W", m.forward.W);
    f("forward.U", m.forward.U);
    f("forward.b", m.forward.b);
    if (m.bidirectional) {
        f("backward.W", m.backward.W);
        f("backward.U", m.backward.U);
        f("backward.b", m.backward.b);
    }
    f("dense.W", m.dense_W);
    f("dense.b", m.dense_b);
}

template <typename T>
long long parameter_count(const BiLstmModel<T>& m) {
    long long n = 0;
    for_each_tensor(m, [&n](std::string_view, const auto& t) { n += t.size(); });
    return n;
}

template <typename T>
struct SequenceStates {
    CellTrace<T> fwd;
    CellTrace<T> bwd;
    Vec<T> V;             // before dropout
    Vec<T> dropout_mask;  // per-entry multiplier (0 or 1/(1-p)); ones at inference
    Vec<T> logits;
};

template <typename T>
struct ForwardResult {
    Vec<T> probs;
    SequenceStates<T> states;
};

template <typename T>
Vec<T> softmax(const Vec<T>& logits) {
    const T mx = logits.maxCoeff();
    Vec<T> e = (logits.array() - mx).exp().matrix();
    return e / e.sum();
}

/// -log softmax(logits)[label] via log-sum-exp.
template <typename T>
T cross_entropy_from_logits(const Vec<T>& logits, int label) {
    const T mx = logits.maxCoeff();
    const T lse = mx + std::log((logits.array() - mx).exp().sum());
    return lse - logits(label);
}

/// -log p[label], with p clamped at 1e-300.
inline double cross_entropy(std::span<const double> probs, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) throw ValidationError("label out of range");
    return -std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-300));
}

template <typename T>
ForwardResult<T> bilstm_forward(const BiLstmModel<T>& model, const Mat<T>& x, bool training,
                                std::mt19937_64* rng = nullptr) {
    if (x.rows() != model.input_size()) {
        throw ValidationError("sequence dimension " + std::to_string(x.rows()) + " does not match model input size " +
                              std::to_string(model.input_size()));
    }
    if (x.cols() < 1) throw ValidationError("sequence must contain at least one column");
    const int H = model.hidden();
    ForwardResult<T> out;
    auto& st = out.states;
    st.fwd = run_cell(model.forward, x, false);
    st.V.resize(model.combined_size());
    st.V.head(H) = st.fwd.final_h();
    if (model.bidirectional) {
        st.bwd = run_cell(model.backward, x, true);
        st.V.tail(H) = st.bwd.final_h();
    }
    st.dropout_mask = Vec<T>::Ones(st.V.size());
    if (training && model.dropout_rate > 0.0) {
        if (rng == nullptr) throw ValidationError("training-mode forward pass needs a random source");
        std::bernoulli_distribution keep(1.0 - model.dropout_rate);
        const T scale = static_cast<T>(1.0 / (1.0 - model.dropout_rate));
        for (Eigen::Index k = 0; k < st.V.size(); ++k) st.dropout_mask(k) = keep(*rng) ? scale : T(0);
    }
    st.logits = model.dense_W * st.V.cwiseProduct(st.dropout_mask) + model.dense_b;
    out.probs = softmax(st.logits);
    return out;
}

template <typename T>
ForwardResult<T> bilstm_forward(const BiLstmModel<T>& model, const FeatureSequence& seq, bool training,
                                std::mt19937_64* rng = nullptr) {
    if constexpr (std::is_same_v<T, double>) {
        return bilstm_forward(model, seq.features, training, rng);
    } else {
        return bilstm_forward(model, Mat<T>(seq.features.template cast<T>()), training, rng);
    }
}

template <typename T>
struct Gradients {
    BiLstmModel<T> grads;  // same shapes as the model
    T loss = T(0);
};

namespace detail {

/// BPTT through one cell given dL/dh at its final step.
template <typename T>
void backprop_cell(const LstmCellParams<T>& p, const CellTrace<T>& tr, const Mat<T>& x, Vec<T> dh,
                   LstmCellParams<T>& g) {
    const int H = p.hidden();
    const Eigen::Index n = tr.gates.cols();
    Vec<T> dc = Vec<T>::Zero(H);
    Vec<T> da(4 * H);
    for (Eigen::Index s = n - 1; s >= 0; --s) {
        const Eigen::Index t = tr.reversed ? n - 1 - s : s;
        const auto gs = tr.gates.col(s);
        const auto i = gs.segment(0, H).array();
        const auto f = gs.segment(H, H).array();
        const auto cand = gs.segment(2 * H, H).array();
        const auto o = gs.segment(3 * H, H).array();
        const Vec<T> tc = tr.c.col(s + 1).array().tanh();
        dc.array() += dh.array() * o * (T(1) - tc.array().square());
        da.segment(0, H) = (dc.array() * cand * i * (T(1) - i)).matrix();
        da.segment(H, H) = (dc.array() * tr.c.col(s).array() * f * (T(1) - f)).matrix();
        da.segment(2 * H, H) = (dc.array() * i * (T(1) - cand.square())).matrix();
        da.segment(3 * H, H) = (dh.array() * tc.array() * o * (T(1) - o)).matrix();
        g.W.noalias() += da * x.col(t).transpose();
        g.U.noalias() += da * tr.h.col(s).transpose();
        g.b += da;
        dh.noalias() = p.U.transpose() * da;
        dc = (dc.array() * f).matrix();
    }
}

}  // namespace detail

/// Full BPTT gradients of the cross-entropy at the final combined state.
/// Uses the dropout mask recorded in `fwd`.
template <typename T>
Gradients<T> compute_gradients(const BiLstmModel<T>& model, const Mat<T>& x, int label,
                               const ForwardResult<T>& fwd) {
    if (label < 0 || label >= model.classes()) throw ValidationError("label out of range");
    const auto& st = fwd.states;
    const int H = model.hidden();
    Gradients<T> out;
    out.grads = BiLstmModel<T>::zeros(model.shape());
    out.grads.dropout_rate = model.dropout_rate;
    out.loss = cross_entropy_from_logits(st.logits, label);

    Vec<T> dlogits = fwd.probs;
    dlogits(label) -= T(1);
    const Vec<T> v_drop = st.V.cwiseProduct(st.dropout_mask);
    out.grads.dense_W.noalias() = dlogits * v_drop.transpose();
    out.grads.dense_b = dlogits;
    const Vec<T> dV = (model.dense_W.transpose() * dlogits).cwiseProduct(st.dropout_mask);

    detail::backprop_cell(model.forward, st.fwd, x, Vec<T>(dV.head(H)), out.grads.forward);
    if (model.bidirectional) detail::backprop_cell(model.backward, st.bwd, x, Vec<T>(dV.tail(H)), out.grads.backward);

    bool finite = true;
    for_each_tensor(out.grads, [&finite](std::string_view, const auto& t) { finite = finite && t.allFinite(); });
    if (!finite || !std::isfinite(static_cast<double>(out.loss))) throw NumericFault("non-finite gradient");
    return out;
}

template <typename T>
Gradients<T> compute_gradients(const BiLstmModel<T>& model, const FeatureSequence& seq, int label,
                               const ForwardResult<T>& fwd) {
    if constexpr (std::is_same_v<T, double>) {
        return compute_gradients(model, seq.features, label, fwd);
    } else {
        return compute_gradients(model, Mat<T>(seq.features.template cast<T>()), label, fwd);
    }
}

/// Inference-mode class probabilities.
template <typename T>
Vec<T> predict_proba(const BiLstmModel<T>& model, const FeatureSequence& seq) {
    return bilstm_forward(model, seq, false).probs;
}

template <typename T>
int predict(const BiLstmModel<T>& model, const FeatureSequence& seq) {
    Eigen::Index k = 0;
    bilstm_forward(model, seq, false).states.logits.maxCoeff(&k);
    return static_cast<int>(k);
}

}  // namespace histoseq
