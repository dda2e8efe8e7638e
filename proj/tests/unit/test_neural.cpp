#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "bess/neural.hpp"

using namespace bess::nn;

namespace {

Layer layer(MatrixXd w, VectorXd b, Activation a) { return Layer{std::move(w), std::move(b), a}; }

NetworkParams random_net(Rng& rng, int depth, int max_width) {
    std::uniform_int_distribution<int> width(1, max_width);
    std::normal_distribution<double> n(0.0, 0.7);
    const Activation acts[] = {Activation::linear, Activation::relu, Activation::tanh};
    std::uniform_int_distribution<int> pick(0, 2);
    NetworkParams net;
    int in = width(rng);
    for (int l = 0; l < depth; ++l) {
        const int out = width(rng);
        MatrixXd w(out, in);
        VectorXd b(out);
        for (auto& x : w.reshaped()) x = n(rng);
        for (auto& x : b) x = n(rng);
        net.layers.push_back(layer(w, b, acts[pick(rng)]));
        in = out;
    }
    return net;
}

/// Independent straight-line evaluation with scalar loops.
VectorXd reference_forward(const NetworkParams& net, const VectorXd& x) {
    std::vector<double> a(x.data(), x.data() + x.size());
    for (const auto& L : net.layers) {
        std::vector<double> z(static_cast<std::size_t>(L.weight.rows()));
        for (Eigen::Index i = 0; i < L.weight.rows(); ++i) {
            double s = L.bias[i];
            for (Eigen::Index j = 0; j < L.weight.cols(); ++j) s += L.weight(i, j) * a[static_cast<std::size_t>(j)];
            switch (L.activation) {
                case Activation::linear: break;
                case Activation::relu: s = s > 0 ? s : 0; break;
                case Activation::tanh: s = std::tanh(s); break;
            }
            z[static_cast<std::size_t>(i)] = s;
        }
        a = z;
    }
    return Eigen::Map<VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
}

bool grad_close(double analytic, double numeric) {
    return std::abs(analytic - numeric) <= std::max(1e-6 * std::max(std::abs(analytic), std::abs(numeric)), 1e-8);
}

}  // namespace

TEST(Forward, IdentityLinearLayer) {
    NetworkParams net;
    net.layers.push_back(layer(MatrixXd::Identity(2, 2), VectorXd::Zero(2), Activation::linear));
    EXPECT_EQ(forward(net, VectorXd{{1.0, 2.0}}), (VectorXd{{1.0, 2.0}}));
}

TEST(Forward, ReluKillsNegative) {
    NetworkParams net;
    net.layers.push_back(layer(MatrixXd::Constant(1, 1, -1.0), VectorXd::Zero(1), Activation::relu));
    EXPECT_EQ(forward(net, VectorXd::Constant(1, 3.0))[0], 0.0);
}

TEST(Forward, MatchesIndependentEvaluation) {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const auto net = random_net(rng, 3, 12);
        VectorXd x = VectorXd::Random(net.input_size());
        const VectorXd y = forward(net, x), r = reference_forward(net, x);
        for (Eigen::Index i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], r[i], 1e-12);
    }
}

TEST(Forward, BatchMatchesSingle) {
    Rng rng(2);
    const auto net = random_net(rng, 3, 8);
    MatrixXd xs = MatrixXd::Random(net.input_size(), 5);
    const MatrixXd ys = forward_batch(net, xs);
    for (int c = 0; c < 5; ++c) EXPECT_TRUE(ys.col(c).isApprox(forward(net, xs.col(c)), 1e-14));
}

TEST(Forward, ShapeMismatch) {
    Rng rng(3);
    const std::vector<int> hidden{4};
    const auto net = make_mlp(3, hidden, 2, Activation::relu, Activation::tanh, {}, rng);
    EXPECT_THROW(forward(net, VectorXd::Zero(2)), ShapeMismatch);
    NetworkParams broken = net;
    broken.layers[1].weight = MatrixXd::Zero(2, 5);
    EXPECT_THROW(broken.validate(), ShapeMismatch);
}

TEST(MakeMlp, OrthogonalRowsAndTanhBound) {
    Rng rng(4);
    const std::vector<int> hidden{16, 16};
    const auto net = make_mlp(4, hidden, 2, Activation::relu, Activation::tanh, {std::numbers::sqrt2, 0.01}, rng);
    const MatrixXd& w = net.layers[1].weight;
    EXPECT_TRUE((w * w.transpose()).isApprox(2.0 * MatrixXd::Identity(16, 16), 1e-10));
    EXPECT_LT(net.layers[2].weight.norm(), 0.05);
    for (int i = 0; i < 100; ++i) {
        const VectorXd y = forward(net, 50.0 * VectorXd::Random(4));
        EXPECT_LT(y.cwiseAbs().maxCoeff(), 1.0);
    }
    EXPECT_EQ(net.parameter_count(), 4u * 16 + 16 + 16 * 16 + 16 + 16 * 2 + 2);
}

TEST(Backward, LinearLayerOuterProduct) {
    NetworkParams net;
    net.layers.push_back(layer(MatrixXd{{1, 2}, {3, 4}}, VectorXd::Zero(2), Activation::linear));
    const VectorXd x{{5.0, 7.0}}, up{{1.0, -2.0}};
    const auto g = backward(net, x, up);
    EXPECT_TRUE(g.weight[0].isApprox(up * x.transpose()));
    EXPECT_TRUE(g.bias[0].isApprox(up));
    EXPECT_TRUE(g.input.isApprox(net.layers[0].weight.transpose() * up));
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
    Rng rng(5);
    const auto net = random_net(rng, 3, 8);
    const auto g = backward(net, VectorXd::Random(net.input_size()), VectorXd::Zero(net.output_size()));
    EXPECT_EQ(g.squared_norm(), 0.0);
}

TEST(Backward, FiniteDifferences) {
    Rng rng(6);
    constexpr double h = 1e-5;
    for (int trial = 0; trial < 30; ++trial) {
        auto net = random_net(rng, 1 + trial % 3, 16);
        const VectorXd x = VectorXd::Random(net.input_size());
        const VectorXd up = VectorXd::Random(net.output_size());
        const auto g = backward(net, x, up);
        const auto loss = [&] { return up.dot(forward(net, x)); };
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            auto& W = net.layers[l].weight;
            for (Eigen::Index k = 0; k < W.size(); ++k) {
                double& p = W.data()[k];
                const double keep = p;
                p = keep + h;
                const double fp = loss();
                p = keep - h;
                const double fm = loss();
                p = keep;
                EXPECT_PRED2(grad_close, g.weight[l].data()[k], (fp - fm) / (2 * h)) << "layer " << l << " w" << k;
            }
        }
    }
}

TEST(BackwardBatch, SumsPerSampleGradients) {
    Rng rng(7);
    const auto net = random_net(rng, 3, 8);
    const MatrixXd xs = MatrixXd::Random(net.input_size(), 4);
    const MatrixXd ups = MatrixXd::Random(net.output_size(), 4);
    ForwardCache cache;
    forward_batch(net, xs, &cache);
    const auto gb = backward_batch(net, cache, ups);
    auto sum = Gradients::zeros_like(net);
    for (int c = 0; c < 4; ++c) {
        const auto g = backward(net, xs.col(c), ups.col(c));
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            sum.weight[l] += g.weight[l];
            sum.bias[l] += g.bias[l];
        }
    }
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        EXPECT_TRUE(gb.weight[l].isApprox(sum.weight[l], 1e-12));
        EXPECT_TRUE(gb.bias[l].isApprox(sum.bias[l], 1e-12));
    }
}

TEST(GaussianLogprob, PeakDensity) {
    const GaussianPolicyHead head{VectorXd{{0.3, -0.2}}, VectorXd::Zero(2)};
    const double a[] = {0.3, -0.2};
    EXPECT_NEAR(gaussian_logprob(head, a), -std::log(2 * std::numbers::pi), 1e-14);
}

TEST(GaussianLogprob, StandardNormalAtOne) {
    const GaussianPolicyHead head{VectorXd::Zero(1), VectorXd::Zero(1)};
    const double a[] = {1.0};
    EXPECT_NEAR(gaussian_logprob(head, a), -1.4189385332046727, 1e-14);
}

TEST(GaussianLogprob, DoublingStdAtMean) {
    GaussianPolicyHead head{VectorXd{{0.1, 0.5}}, VectorXd{{-0.3, 0.2}}};
    const double a[] = {0.1, 0.5};
    const double before = gaussian_logprob(head, a);
    head.log_std.array() += std::log(2.0);
    EXPECT_NEAR(before - gaussian_logprob(head, a), 2 * std::log(2.0), 1e-14);
}

TEST(GaussianLogprob, ActiveMaskSelectsDimensions) {
    const GaussianPolicyHead head{VectorXd::Zero(2), VectorXd::Zero(2)};
    const double a[] = {1.0, 0.0};
    const std::uint8_t only_first[] = {1, 0};
    EXPECT_NEAR(gaussian_logprob(head, a, only_first), -1.4189385332046727, 1e-14);
    EXPECT_NEAR(gaussian_entropy(VectorXd::Zero(2), only_first), 0.5 * std::log(2 * std::numbers::pi * std::numbers::e),
                1e-14);
}

TEST(GaussianPolicyHead, ClampLogStd) {
    GaussianPolicyHead head{VectorXd::Zero(2), VectorXd{{-9.0, 4.0}}};
    head.clamp_log_std();
    EXPECT_DOUBLE_EQ(head.log_std[0], kLogStdMin);
    EXPECT_DOUBLE_EQ(head.log_std[1], kLogStdMax);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    NetworkParams net;
    net.layers.push_back(layer(MatrixXd::Constant(1, 1, 2.0), VectorXd::Zero(1), Activation::linear));
    auto opt = OptimizerState::for_network(net, {0.1});
    auto g = Gradients::zeros_like(net);
    g.weight[0](0, 0) = 1.0;
    adam_step(opt, net, g);
    EXPECT_NEAR(net.layers[0].weight(0, 0), 2.0 - 0.1, 1e-8);
    EXPECT_EQ(opt.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
    Rng rng(8);
    auto net = random_net(rng, 2, 6);
    const auto before = net;
    auto opt = OptimizerState::for_network(net, {});
    adam_step(opt, net, Gradients::zeros_like(net));
    for (std::size_t l = 0; l < net.layers.size(); ++l) EXPECT_EQ(net.layers[l].weight, before.layers[l].weight);
}

TEST(Adam, DeterministicAndExtraParameters) {
    Rng rng(9);
    const auto start = random_net(rng, 2, 6);
    auto run = [&] {
        auto net = start;
        auto opt = OptimizerState::for_network(net, {}, 2);
        VectorXd extra = VectorXd::Zero(2), eg{{1.0, -1.0}};
        Rng r(1);
        for (int i = 0; i < 5; ++i) {
            auto g = backward(net, VectorXd::Random(net.input_size()), VectorXd::Ones(net.output_size()));
            adam_step(opt, net, g, &extra, &eg);
        }
        return std::pair{net, extra};
    };
    std::srand(1);
    const auto a = run();
    std::srand(1);
    const auto b = run();
    EXPECT_EQ(a.first.layers[0].weight, b.first.layers[0].weight);
    EXPECT_EQ(a.second, b.second);
    EXPECT_LT(a.second[0], 0.0);
}

TEST(Adam, ShapeMismatch) {
    Rng rng(10);
    auto net = random_net(rng, 2, 6);
    auto opt = OptimizerState::for_network(net, {});
    auto g = Gradients::zeros_like(net);
    g.weight[0] = MatrixXd::Zero(1, 1);
    if (net.layers[0].weight.size() != 1) EXPECT_THROW(adam_step(opt, net, g), ShapeMismatch);
}

TEST(Serialization, NetworkAndOptimizerRoundTrip) {
    Rng rng(11);
    const auto net = random_net(rng, 3, 7);
    const auto opt = OptimizerState::for_network(net, {1e-3}, 2);
    std::stringstream buf;
    write_network(buf, net);
    write_optimizer(buf, opt);
    write_vector(buf, VectorXd{{1.5, -2.5}});
    const auto back = read_network(buf);
    const auto opt2 = read_optimizer(buf);
    ASSERT_TRUE(back.same_shape(net));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        EXPECT_EQ(back.layers[l].weight, net.layers[l].weight);
        EXPECT_EQ(back.layers[l].activation, net.layers[l].activation);
    }
    EXPECT_TRUE(opt2.matches(net, 2));
    EXPECT_EQ(read_vector(buf), (VectorXd{{1.5, -2.5}}));
}
