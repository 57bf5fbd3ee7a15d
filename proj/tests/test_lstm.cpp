#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "histoseq/training.hpp"

using namespace histoseq;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
    return m;
}

BiLstmModel<double> random_model(ModelShape shape, std::mt19937_64& rng) {
    auto m = BiLstmModel<double>::zeros(shape);
    for_each_tensor(m, [&rng](std::string_view, auto& t) {
        std::uniform_real_distribution<double> u(-0.8, 0.8);
        for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = u(rng);
    });
    return m;
}

FeatureSequence sequence(Eigen::MatrixXd x, int label = 0) {
    FeatureSequence s;
    s.features = std::move(x);
    s.label = label;
    return s;
}

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST(LstmCellStep, ZeroParametersGiveZeroState) {
    const auto p = LstmCellParams<double>::zeros(3, 2);
    const auto out = lstm_cell_step(p, Vec<double>(Vec<double>::Constant(3, 4.0)), Vec<double>(Vec<double>::Zero(2)),
                                    Vec<double>(Vec<double>::Zero(2)));
    EXPECT_EQ(out.h, Vec<double>::Zero(2));
    EXPECT_EQ(out.c, Vec<double>::Zero(2));
}

TEST(LstmCellStep, SaturatedForgetGateKeepsMemory) {
    std::mt19937_64 rng(1);
    auto p = LstmCellParams<double>::zeros(3, 2);
    p.b_gate(Gate::forget).setConstant(60.0);
    p.b_gate(Gate::input).setConstant(-60.0);
    p.W = random_matrix(8, 3, rng, 0.1);
    p.W.middleRows(0, 4).setZero();
    const Vec<double> c_prev = Vec<double>(random_matrix(2, 1, rng));
    const auto out = lstm_cell_step(p, Vec<double>(random_matrix(3, 1, rng)), Vec<double>(random_matrix(2, 1, rng)), c_prev);
    EXPECT_NEAR((out.c - c_prev).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(LstmCellStep, MatchesScalarFormulas) {
    std::mt19937_64 rng(2);
    const int D = 3, H = 2;
    LstmCellParams<double> p{random_matrix(4 * H, D, rng), random_matrix(4 * H, H, rng), Vec<double>(random_matrix(4 * H, 1, rng))};
    const Vec<double> x = Vec<double>(random_matrix(D, 1, rng));
    const Vec<double> h0 = Vec<double>(random_matrix(H, 1, rng));
    const Vec<double> c0 = Vec<double>(random_matrix(H, 1, rng));
    const auto out = lstm_cell_step(p, x, h0, c0);
    for (int j = 0; j < H; ++j) {
        double pre[4];
        for (int g = 0; g < 4; ++g) {
            const int row = g * H + j;
            double s = p.b(row);
            for (int d = 0; d < D; ++d) s += p.W(row, d) * x(d);
            for (int k = 0; k < H; ++k) s += p.U(row, k) * h0(k);
            pre[g] = s;
        }
        const double i = sig(pre[0]), f = sig(pre[1]), g = std::tanh(pre[2]), o = sig(pre[3]);
        const double c = f * c0(j) + i * g;
        EXPECT_NEAR(out.c(j), c, 1e-12);
        EXPECT_NEAR(out.h(j), o * std::tanh(c), 1e-12);
    }
}

TEST(LstmCellStep, NonFiniteActivationNamesGate) {
    auto p = LstmCellParams<double>::zeros(1, 1);
    p.b(2) = std::numeric_limits<double>::quiet_NaN();
    try {
        lstm_cell_step(p, Vec<double>(Vec<double>::Zero(1)), Vec<double>(Vec<double>::Zero(1)), Vec<double>(Vec<double>::Zero(1)));
        FAIL();
    } catch (const NumericFault& e) {
        EXPECT_NE(std::string(e.what()).find("cell"), std::string::npos) << e.what();
        EXPECT_EQ(e.exit_code(), 3);
    }
}

TEST(BiLstmForward, ZeroDenseGivesUniform) {
    std::mt19937_64 rng(3);
    auto m = random_model({4, 3, 3, true}, rng);
    m.dense_W.setZero();
    m.dense_b.setZero();
    const auto r = bilstm_forward(m, Mat<double>(random_matrix(4, 5, rng)), false);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.probs(c), 1.0 / 3.0, 1e-15);
}

TEST(BiLstmForward, SingleColumnSequence) {
    std::mt19937_64 rng(4);
    const auto m = random_model({4, 3, 2, true}, rng);
    const auto r = bilstm_forward(m, Mat<double>(random_matrix(4, 1, rng)), false);
    EXPECT_EQ(r.states.fwd.h.cols(), 2);
    EXPECT_EQ(r.states.bwd.h.cols(), 2);
    EXPECT_EQ(r.states.V.size(), 6);
    EXPECT_NEAR(r.probs.sum(), 1.0, 1e-12);
}

TEST(BiLstmForward, ReversalSymmetry) {
    std::mt19937_64 rng(5);
    const int H = 3;
    const auto m = random_model({4, H, 3, true}, rng);
    auto swapped = m;
    std::swap(swapped.forward, swapped.backward);
    swapped.dense_W.leftCols(H) = m.dense_W.rightCols(H);
    swapped.dense_W.rightCols(H) = m.dense_W.leftCols(H);
    const Eigen::MatrixXd x = random_matrix(4, 6, rng);
    const Eigen::MatrixXd rev = x.rowwise().reverse();
    const auto a = bilstm_forward(m, Mat<double>(x), false).probs;
    const auto b = bilstm_forward(swapped, Mat<double>(rev), false).probs;
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BiLstmForward, BackwardStateSeesFirstColumnLast) {
    std::mt19937_64 rng(6);
    const auto m = random_model({3, 2, 2, true}, rng);
    const Eigen::MatrixXd x = random_matrix(3, 4, rng);
    const auto r = bilstm_forward(m, Mat<double>(x), false);
    Vec<double> h = Vec<double>::Zero(2), c = Vec<double>::Zero(2);
    for (int t = 3; t >= 0; --t) {
        const auto s = lstm_cell_step(m.backward, Vec<double>(x.col(t)), h, c);
        h = s.h;
        c = s.c;
    }
    EXPECT_LT((r.states.V.tail(2) - h).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(BiLstmForward, DimensionMismatchRejected) {
    std::mt19937_64 rng(7);
    const auto m = random_model({4, 2, 2, true}, rng);
    EXPECT_THROW(bilstm_forward(m, Mat<double>(random_matrix(5, 3, rng)), false), ValidationError);
}

TEST(BiLstmForward, SoftmaxIsASimplex) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = random_model({5, 3, 4, trial % 2 == 0}, rng);
        const auto p = bilstm_forward(m, Mat<double>(random_matrix(5, 1 + trial % 9, rng, 3.0)), false).probs;
        EXPECT_NEAR(p.sum(), 1.0, 1e-9);
        EXPECT_GT(p.minCoeff(), 0.0);
        EXPECT_LT(p.maxCoeff(), 1.0);
    }
}

TEST(BiLstmForward, InferenceIsDropoutFree) {
    std::mt19937_64 rng(9);
    auto m = BiLstmModel<float>::initialized({6, 4, 3, true}, 9);
    m.dropout_rate = 0.5;
    FeatureSequence s = sequence(random_matrix(6, 7, rng));
    const auto a = predict_proba(m, s);
    const auto b = predict_proba(m, s);
    EXPECT_EQ(a, b);
}

TEST(BiLstmForward, TrainingDropoutIsInverted) {
    std::mt19937_64 rng(10);
    auto m = random_model({3, 4, 2, true}, rng);
    m.dropout_rate = 0.25;
    std::mt19937_64 drng(1);
    const auto r = bilstm_forward(m, Mat<double>(random_matrix(3, 3, rng)), true, &drng);
    for (Eigen::Index k = 0; k < r.states.dropout_mask.size(); ++k) {
        const double v = r.states.dropout_mask(k);
        EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
    }
}

TEST(BiLstmForward, ArgmaxInvariantUnderLogitShift) {
    std::mt19937_64 rng(11);
    auto m = random_model({3, 2, 4, true}, rng);
    const FeatureSequence s = sequence(random_matrix(3, 5, rng));
    const int before = predict(m, s);
    m.dense_b.array() += 17.0;
    EXPECT_EQ(predict(m, s), before);
}

TEST(CrossEntropy, Examples) {
    const std::vector<double> uniform{1.0 / 3, 1.0 / 3, 1.0 / 3};
    EXPECT_NEAR(cross_entropy(uniform, 2), std::log(3.0), 1e-12);
    const std::vector<double> certain{0.0, 1.0};
    EXPECT_EQ(cross_entropy(certain, 1), 0.0);
    const std::vector<double> p{0.7, 0.2, 0.1};
    EXPECT_NEAR(cross_entropy(p, 0), 0.35667494393873245, 1e-12);
    EXPECT_TRUE(std::isfinite(cross_entropy(certain, 0)));
}

TEST(CrossEntropy, StableFromLogits) {
    Vec<double> logits(3);
    logits << 1000.0, 0.0, -1000.0;
    EXPECT_NEAR(cross_entropy_from_logits(logits, 0), 0.0, 1e-12);
    EXPECT_NEAR(cross_entropy_from_logits(logits, 1), 1000.0, 1e-9);
}

TEST(Gradients, ZeroAtSaturatedCorrectPrediction) {
    std::mt19937_64 rng(12);
    auto m = random_model({3, 2, 2, true}, rng);
    m.dense_W.setZero();
    m.dense_b << 200.0, -200.0;
    const Mat<double> x = random_matrix(3, 4, rng);
    const auto g = compute_gradients(m, x, 0, bilstm_forward(m, x, false));
    for_each_tensor(g.grads, [](std::string_view name, const auto& t) {
        EXPECT_LT(t.cwiseAbs().maxCoeff(), 1e-100) << name;
    });
    EXPECT_LT(g.loss, 1e-100);
}

TEST(Gradients, DenseGradientIsOuterProduct) {
    std::mt19937_64 rng(13);
    const auto m = random_model({3, 2, 3, true}, rng);
    const Mat<double> x = random_matrix(3, 4, rng);
    const auto fwd = bilstm_forward(m, x, false);
    const auto g = compute_gradients(m, x, 1, fwd);
    Vec<double> delta = fwd.probs;
    delta(1) -= 1.0;
    EXPECT_LT((g.grads.dense_W - delta * fwd.states.V.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((g.grads.dense_b - delta).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GradientCheck, TinyModel) {
    std::mt19937_64 rng(14);
    const auto m = random_model({3, 2, 2, true}, rng);
    const auto rep = gradient_check(m, sequence(random_matrix(3, 4, rng)), 1);
    EXPECT_LT(rep.max_relative_error, 1e-5) << rep.worst_tensor << "[" << rep.worst_index << "]";
}

TEST(GradientCheck, UnidirectionalModel) {
    std::mt19937_64 rng(15);
    const auto m = random_model({4, 3, 3, false}, rng);
    const auto rep = gradient_check(m, sequence(random_matrix(4, 5, rng)), 2);
    EXPECT_LT(rep.max_relative_error, 1e-5) << rep.worst_tensor;
}

TEST(GradientCheck, ZeroModel) {
    const auto m = BiLstmModel<double>::zeros({3, 2, 3, true});
    std::mt19937_64 rng(16);
    const auto rep = gradient_check(m, sequence(random_matrix(3, 3, rng)), 0);
    EXPECT_LT(rep.max_relative_error, 1e-9);
}

TEST(GradientCheck, ErrorShrinksWithStep) {
    std::mt19937_64 rng(17);
    const auto m = random_model({3, 2, 2, true}, rng);
    const auto s = sequence(random_matrix(3, 4, rng));
    EXPECT_GT(gradient_check(m, s, 0, 1e-3).max_relative_error, gradient_check(m, s, 0, 1e-5).max_relative_error);
}

TEST(Unidirectional, DenseWidthAndParameterCount) {
    const auto m = BiLstmModel<float>::zeros({1024, 2000, 3, false});
    EXPECT_EQ(m.dense_W.cols(), 2000);
    const long long I = 96, H = 8, C = 4;
    const auto small = BiLstmModel<float>::zeros({96, 8, 4, false});
    EXPECT_EQ(parameter_count(small), 4 * H * ((I + 1) + H) + C * H + C);
}

TEST(Initialization, GlorotBoundsAndForgetBias) {
    const auto m = BiLstmModel<double>::initialized({10, 6, 3, true}, 42);
    const double limit = std::sqrt(6.0 / 16.0);
    EXPECT_LE(m.forward.W.cwiseAbs().maxCoeff(), limit);
    EXPECT_EQ(m.forward.b_gate(Gate::forget), Vec<double>::Ones(6));
    EXPECT_EQ(m.backward.b_gate(Gate::input), Vec<double>::Zero(6));
    const auto again = BiLstmModel<double>::initialized({10, 6, 3, true}, 42);
    EXPECT_EQ(m.forward.U, again.forward.U);
    EXPECT_EQ(m.dense_W, again.dense_W);
}

TEST(Model, RejectsBadShapes) {
    EXPECT_THROW(BiLstmModel<float>::zeros({0, 2, 2, true}), ValidationError);
    EXPECT_THROW(BiLstmModel<float>::zeros({2, 2, 1, true}), ValidationError);
}
