#include <gtest/gtest.h>

#include <cmath>

#include "flood/nn.hpp"
#include "flood/surrogate.hpp"
#include "gradcheck.hpp"

using namespace flood;
using namespace flood::nn;
using testing_util::random_tensor;


// ---------------------------------------------------------------------------
// Conv examples
// ---------------------------------------------------------------------------

TEST(Conv, IdentityKernelCopiesInput) {
    Rng rng(1);
    Tensor<double> x = random_tensor({2, 3, 5, 4}, rng);
    Tensor<double> w({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) w.values[c * 3 + c] = 1.0;
    const Tensor<double> y = conv_forward(x, w, Tensor<double>({3}), 1, 0);
    EXPECT_EQ(y.shape, x.shape);
    EXPECT_EQ(y.values, x.values);
}

TEST(Conv, OnesKernelOnConstantField) {
    const double c = 0.75;
    Tensor<double> x({1, 1, 6, 7}, c);
    Tensor<double> w({1, 1, 3, 3}, 1.0);
    const Tensor<double> y = conv_forward(x, w, Tensor<double>({1}), 1, 1);
    ASSERT_EQ(y.shape, (Shape{1, 1, 6, 7}));
    for (int i = 1; i < 5; ++i)
        for (int j = 1; j < 6; ++j) EXPECT_DOUBLE_EQ(y.values[i * 7 + j], 9 * c);
    EXPECT_DOUBLE_EQ(y.values[0], 4 * c);      // corner sees 2 x 2
    EXPECT_DOUBLE_EQ(y.values[3], 6 * c);      // top edge sees 2 x 3
}

TEST(Conv, StrideAndPaddingGeometry) {
    Tensor<double> x({1, 2, 9, 9}, 1.0);
    Tensor<double> w({4, 2, 3, 3}, 1.0);
    EXPECT_EQ(conv_forward(x, w, Tensor<double>({4}), 2, 1).shape, (Shape{1, 4, 5, 5}));
    EXPECT_EQ(conv_forward(x, w, Tensor<double>({4}), 1, 0).shape, (Shape{1, 4, 7, 7}));
}

TEST(Conv, ShapeMismatchRejected) {
    Tensor<double> x({1, 2, 5, 5});
    EXPECT_THROW(conv_forward(x, Tensor<double>({1, 3, 3, 3}), Tensor<double>({1}), 1, 1), Error);
    EXPECT_THROW(conv_forward(x, Tensor<double>({1, 2, 3, 3}), Tensor<double>({2}), 1, 1), Error);
    EXPECT_THROW(conv_forward(x, Tensor<double>({1, 2, 9, 9}), Tensor<double>({1}), 1, 0), Error);
}

TEST(Conv, BackwardMatchesFiniteDifferences) {
    // The functional form on a random 5 x 5 input.
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const int ci = 1 + static_cast<int>(rng.index(3)), co = 1 + static_cast<int>(rng.index(3));
        const int k = 1 + static_cast<int>(rng.index(3)), s = 1 + static_cast<int>(rng.index(2));
        const int p = static_cast<int>(rng.index(static_cast<std::uint64_t>(k)));
        Tensor<double> x = random_tensor({2, ci, 5, 5}, rng), w = random_tensor({co, ci, k, k}, rng), b = random_tensor({co}, rng);
        const Tensor<double> y = conv_forward(x, w, b, s, p);
        const Tensor<double> r = random_tensor(y.shape, rng);
        const ConvGrads<double> g = conv_backward(x, w, r, s, p);
        auto loss = [&] {
            const Tensor<double> out = conv_forward(x, w, b, s, p);
            double l = 0;
            for (std::size_t i = 0; i < out.size(); ++i) l += r.values[i] * out.values[i];
            return l;
        };
        EXPECT_LT(testing_util::relative_error(g.input.values, testing_util::numeric_gradient(x.values, loss)), 1e-4);
        EXPECT_LT(testing_util::relative_error(g.weights.values, testing_util::numeric_gradient(w.values, loss)), 1e-4);
        EXPECT_LT(testing_util::relative_error(g.bias.values, testing_util::numeric_gradient(b.values, loss)), 1e-4);
    }
}

// ---------------------------------------------------------------------------
// Per-layer gradient checks, 20 random instances per kind
// ---------------------------------------------------------------------------

namespace {


void check_kind(LayerKind kind, std::uint64_t seed, bool training = true) {
    Rng rng(seed);
    for (int trial = 0; trial < 20; ++trial) {
        SCOPED_TRACE(std::string(layer_kind_name(kind)) + " trial " + std::to_string(trial));
        const auto result = testing_util::check_random_layer(kind, seed, trial, rng, training);
        EXPECT_LT(result.input, 1e-4);
        EXPECT_LT(result.params, 1e-4);
    }
}

}  // namespace

TEST(GradCheck, Conv) { check_kind(LayerKind::conv, 10); }
TEST(GradCheck, ConvTranspose) { check_kind(LayerKind::conv_transpose, 11); }
TEST(GradCheck, PRelu) { check_kind(LayerKind::prelu, 12); }
TEST(GradCheck, BatchNormTraining) { check_kind(LayerKind::batch_norm, 13, true); }
TEST(GradCheck, BatchNormInference) { check_kind(LayerKind::batch_norm, 14, false); }
TEST(GradCheck, ResidualBlock) { check_kind(LayerKind::residual_block, 15); }
TEST(GradCheck, Sigmoid) { check_kind(LayerKind::sigmoid, 16); }

TEST(GradCheck, ShiftedConvPath) {
    // Few output channels and stride 1 take the shifted-plane path; compare with the
    // functional im2col form and check gradients.
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const int ci = 1 + static_cast<int>(rng.index(5)), co = 1 + static_cast<int>(rng.index(3));
        const int k = 2 + static_cast<int>(rng.index(2)), p = static_cast<int>(rng.index(static_cast<std::uint64_t>(k)));
        const LayerSpec spec{LayerKind::conv, ci, co, k, 1, p};
        auto layer = make_layer<double>(spec);
        Rng init(trial);
        layer->initialize(init);
        Tensor<double> x = random_tensor({2, ci, 6, 5}, rng);
        const Tensor<double> y = layer->forward(x, true);
        const auto params = layer->parameters();
        const Tensor<double> ref = conv_forward(x, *params[0], *params[1], 1, p);
        ASSERT_EQ(y.shape, ref.shape);
        EXPECT_LT(testing_util::relative_error(y.values, ref.values), 1e-12);
        const auto result = testing_util::check_layer(*layer, x, rng, true);
        EXPECT_LT(result.input, 1e-4);
        EXPECT_LT(result.params, 1e-4);
    }
}

TEST(GradCheck, PatchDiscriminator) {
    Rng rng(18);
    NetworkConfig cfg = NetworkConfig::patch_discriminator(8);
    Network<double> d(cfg);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<double> cand = random_tensor({2, 3, 8, 8}, rng), cond = random_tensor({2, 5, 8, 8}, rng);
        const Tensor<double> y = surrogate::patch_discriminator_forward(d, cand, cond, true);
        const Tensor<double> r = random_tensor(y.shape, rng);
        // Backward through the sigmoid by hand, then the network.
        Tensor<double> gl(y.shape);
        for (std::size_t k = 0; k < y.size(); ++k) gl.values[k] = r.values[k] * y.values[k] * (1 - y.values[k]);
        d.zero_grad();
        const Tensor<double> gin = d.backward(gl);
        std::vector<double> analytic;
        const std::size_t plane = 64;
        for (int n = 0; n < 2; ++n)
            for (std::size_t k = 0; k < 3 * plane; ++k) analytic.push_back(gin.values[n * 8 * plane + k]);
        auto loss = [&] {
            const Tensor<double> out = surrogate::patch_discriminator_forward(d, cand, cond, true);
            double l = 0;
            for (std::size_t i = 0; i < out.size(); ++i) l += r.values[i] * out.values[i];
            return l;
        };
        EXPECT_LT(testing_util::relative_error(analytic, testing_util::numeric_gradient(cand.values, loss)), 1e-4) << trial;
    }
}

// ---------------------------------------------------------------------------
// Activation and normalization examples
// ---------------------------------------------------------------------------

TEST(PRelu, Examples) {
    Tensor<double> x({1, 1, 1, 2}, std::vector<double>{-2.0, 3.0});
    const Tensor<double> y = prelu(x, std::vector<double>{0.25});
    EXPECT_DOUBLE_EQ(y.values[0], -0.5);
    EXPECT_DOUBLE_EQ(y.values[1], 3.0);
}

TEST(BatchNorm, TrainingOutputIsStandardized) {
    Rng rng(3);
    Tensor<double> x({4, 3, 5, 6});
    for (std::size_t k = 0; k < x.size(); ++k) x.values[k] = 3.0 + 2.0 * rng.normal() + static_cast<double>(k % 3);
    std::vector<double> scale(3, 1.0), shift(3, 0.0), rm(3, 0.0), rv(3, 1.0);
    const Tensor<double> y = batch_norm(x, scale, shift, rm, rv, true);
    for (int c = 0; c < 3; ++c) {
        double s = 0, ss = 0;
        int count = 0;
        for (int n = 0; n < 4; ++n)
            for (int k = 0; k < 30; ++k) {
                const double v = y.values[(n * 3 + c) * 30 + k];
                s += v;
                ss += v * v;
                ++count;
            }
        const double mean = s / count, var = ss / count - mean * mean;
        EXPECT_NEAR(mean, 0.0, 1e-5);
        EXPECT_NEAR(var, 1.0, 1e-5);
    }
    for (double m : rm) EXPECT_NE(m, 0.0);
}

TEST(BatchNorm, InferenceUsesRunningStatistics) {
    Tensor<double> x({1, 1, 1, 2}, std::vector<double>{1.0, 3.0});
    std::vector<double> scale{2.0}, shift{0.5}, rm{1.0}, rv{4.0};
    const Tensor<double> y = batch_norm(x, scale, shift, rm, rv, false);
    EXPECT_NEAR(y.values[0], 0.5, 1e-12);
    EXPECT_NEAR(y.values[1], 2.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 0.5, 1e-12);
    EXPECT_DOUBLE_EQ(rm[0], 1.0);
    EXPECT_DOUBLE_EQ(rv[0], 4.0);
}

TEST(Sigmoid, RangeAndSymmetry) {
    Tensor<double> x({1, 1, 1, 5}, std::vector<double>{-800.0, -1.0, 0.0, 1.0, 800.0});
    const Tensor<double> y = sigmoid(x);
    EXPECT_DOUBLE_EQ(y.values[2], 0.5);
    EXPECT_NEAR(y.values[1] + y.values[3], 1.0, 1e-15);
    EXPECT_GE(y.values[0], 0.0);
    EXPECT_LE(y.values[4], 1.0);
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

TEST(Network, ZeroInputThroughZeroedLastLayerIsZero) {
    Network<float> net(NetworkConfig::desk());
    net.zero_last_layer();
    const Tensor<float> y = net.forward(Tensor<float>({2, 5, 16, 16}), false);
    for (float v : y.values) EXPECT_EQ(v, 0.0f);
}

TEST(Network, BatchOfTwoEqualsTwoBatchesOfOne) {
    Network<float> net(NetworkConfig::desk());
    Rng rng(4);
    Tensor<float> a({1, 5, 16, 16}), b({1, 5, 16, 16});
    for (float& v : a.values) v = static_cast<float>(rng.normal());
    for (float& v : b.values) v = static_cast<float>(rng.normal());
    // Give the running statistics non-trivial values first.
    for (int k = 0; k < 3; ++k) net.forward(a, true);
    Tensor<float> ab({2, 5, 16, 16});
    std::copy(a.values.begin(), a.values.end(), ab.values.begin());
    std::copy(b.values.begin(), b.values.end(), ab.values.begin() + static_cast<std::ptrdiff_t>(a.size()));
    const Tensor<float> yab = net.forward(ab, false), ya = net.forward(a, false), yb = net.forward(b, false);
    for (std::size_t k = 0; k < ya.size(); ++k) {
        EXPECT_FLOAT_EQ(yab.values[k], ya.values[k]);
        EXPECT_FLOAT_EQ(yab.values[ya.size() + k], yb.values[k]);
    }
}

TEST(Network, OutputShapeAcrossGrids) {
    Network<float> net(NetworkConfig::desk());
    for (auto [h, w] : {std::pair{4, 4}, {8, 8}, {16, 12}, {32, 32}, {64, 64}, {20, 36}}) {
        for (int batch : {1, 3}) {
            const Tensor<float> y = net.forward(Tensor<float>({batch, 5, h, w}), false);
            EXPECT_EQ(y.shape, (Shape{batch, 3, h, w}));
        }
    }
    EXPECT_THROW(net.forward(Tensor<float>({1, 5, 10, 10}), false), Error);  // not divisible by 4
    EXPECT_THROW(net.forward(Tensor<float>({1, 4, 16, 16}), false), Error);
}

TEST(Network, FullTableOn100Grid) {
    const NetworkConfig cfg = NetworkConfig::full();
    EXPECT_EQ(cfg.output_shape(100, 100), (Shape{3, 100, 100}));
    int convs = 0;
    for (const LayerSpec& l : cfg.layers) {
        if (l.kind == LayerKind::conv || l.kind == LayerKind::conv_transpose) ++convs;
        if (l.kind == LayerKind::residual_block) convs += 2;
    }
    EXPECT_EQ(convs, 17);
    EXPECT_NE(cfg.output_shape(64, 64), (Shape{3, 64, 64}));
}

TEST(Network, ParameterCountMatchesClosedForm) {
    for (const NetworkConfig& cfg : {NetworkConfig::desk(), NetworkConfig::full(), NetworkConfig::patch_discriminator(8)}) {
        Network<float> net(cfg);
        EXPECT_EQ(net.parameter_count(), cfg.parameter_count());
    }
    // Desk by hand: conv(5,16,3) bn prelu conv(16,64,4) bn prelu res64 res64 convT(64,32,4) bn prelu conv(32,3,3).
    const std::size_t res = 2 * (64 * 64 * 9 + 64) + 2 * 128 + 2 * 64;
    const std::size_t expect = (5 * 16 * 9 + 16) + 32 + 16 + (16 * 64 * 16 + 64) + 128 + 64 + 2 * res + (64 * 32 * 16 + 32) + 64 +
                               32 + (32 * 3 * 9 + 3);
    EXPECT_EQ(NetworkConfig::desk().parameter_count(), expect);
}

TEST(Network, ChannelChainingChecked) {
    NetworkConfig cfg;
    cfg.layers = {{LayerKind::conv, 5, 8, 3, 1, 1}, {LayerKind::conv, 4, 3, 3, 1, 1}};
    EXPECT_THROW(Network<float>{cfg}, Error);
    cfg.layers = {{LayerKind::conv, 5, 8, 3, 1, 1}, {LayerKind::conv, 8, 2, 3, 1, 1}};
    EXPECT_THROW(Network<float>{cfg}, Error);
    cfg.layers = {{LayerKind::residual_block, 5, 5, 3, 1, 0}};
    EXPECT_THROW(layer_parameter_count(cfg.layers[0]), Error);
}

TEST(Network, ConfigTextRoundTrip) {
    for (const NetworkConfig& cfg : {NetworkConfig::desk(), NetworkConfig::full(), NetworkConfig::patch_discriminator(8)}) {
        const NetworkConfig back = NetworkConfig::parse(cfg.to_text());
        EXPECT_EQ(back.layers, cfg.layers);
        EXPECT_EQ(back.state_skip, cfg.state_skip);
        EXPECT_EQ(back.input_channels, cfg.input_channels);
        EXPECT_EQ(back.output_channels, cfg.output_channels);
        EXPECT_EQ(back.param_seed, cfg.param_seed);
    }
    EXPECT_THROW(NetworkConfig::parse("conv 5 3 3 1\n"), Error);
    EXPECT_THROW(NetworkConfig::parse("dense 5 3 1 1 0\n"), Error);
    EXPECT_THROW(NetworkConfig::parse("option colour 1\nconv 5 3 1 1 0\n"), Error);
    EXPECT_THROW(NetworkConfig::parse("# nothing\n"), Error);
}

TEST(Network, InitializationIsSeeded) {
    NetworkConfig cfg = NetworkConfig::desk();
    Network<float> a(cfg), b(cfg);
    cfg.param_seed += 1;
    Network<float> c(cfg);
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    EXPECT_EQ(pa[0]->values, pb[0]->values);
    EXPECT_NE(pa[0]->values, pc[0]->values);
    // He-uniform bound for the first conv: sqrt(6 / (5 * 9)).
    const double bound = std::sqrt(6.0 / 45.0);
    for (float v : pa[0]->values) EXPECT_LE(std::abs(v), bound);
}

TEST(Network, InferenceIsPure) {
    Network<float> net(NetworkConfig::desk());
    Tensor<float> x({1, 5, 8, 8});
    Rng rng(9);
    for (float& v : x.values) v = static_cast<float>(rng.normal());
    const Tensor<float> y1 = net.forward(x, false), y2 = net.forward(x, false);
    EXPECT_EQ(y1.values, y2.values);
}

TEST(Network, RepeatedBackwardIsBitIdentical) {
    // Buffers land at different addresses on each pass; reductions must not care.
    for (const NetworkConfig& cfg : {NetworkConfig::desk(), NetworkConfig::patch_discriminator(8)}) {
        Network<float> net(cfg);
        Rng rng(10);
        Tensor<float> x({4, cfg.input_channels, 16, 16});
        for (float& v : x.values) v = static_cast<float>(rng.normal());
        std::vector<std::vector<float>> first;
        for (int pass = 0; pass < 3; ++pass) {
            std::vector<float> pad(static_cast<std::size_t>(pass) * 3 + 1);  // shift the heap
            net.zero_grad();
            const Tensor<float> y = net.forward(x, true);
            Tensor<float> g(y.shape);
            for (std::size_t k = 0; k < g.size(); ++k) g.values[k] = static_cast<float>(std::sin(0.1 * static_cast<double>(k)));
            net.backward(g);
            std::size_t i = 0;
            for (Tensor<float>* p : net.parameters()) {
                if (pass == 0) first.push_back(p->grad);
                else EXPECT_EQ(p->grad, first[i]) << "pass " << pass << " tensor " << i;
                ++i;
            }
        }
    }
}

TEST(Network, StateSkipAddsInputState) {
    NetworkConfig cfg = NetworkConfig::desk();
    Network<float> net(cfg);
    net.zero_last_layer();
    Tensor<float> x({1, 5, 8, 8});
    Rng rng(10);
    for (float& v : x.values) v = static_cast<float>(rng.normal());
    const Tensor<float> y = net.forward(x, false);
    for (std::size_t k = 0; k < y.size(); ++k) EXPECT_EQ(y.values[k], x.values[k]);
}

// ---------------------------------------------------------------------------
// Optimizers and schedules
// ---------------------------------------------------------------------------

TEST(Schedule, Values) {
    EXPECT_DOUBLE_EQ(scheduled_lr(Schedule::fixed, 1e-3, 7, 10), 1e-3);
    EXPECT_DOUBLE_EQ(scheduled_lr(Schedule::inverse_sqrt, 1e-3, 4, 10), 0.5e-3);
    EXPECT_DOUBLE_EQ(scheduled_lr(Schedule::periodic, 1e-3, 1, 4), 1e-3);
    EXPECT_NEAR(scheduled_lr(Schedule::periodic, 1e-3, 3, 4), 0.5e-3, 1e-15);
    EXPECT_DOUBLE_EQ(scheduled_lr(Schedule::periodic, 1e-3, 5, 4), 1e-3);
    EXPECT_THROW(scheduled_lr(Schedule::fixed, 1e-3, 0, 4), Error);
    EXPECT_THROW(parse_schedule("cosine"), Error);
    EXPECT_THROW(parse_optimizer("lbfgs"), Error);
}

TEST(Optimizer, EachKindReducesAQuadratic) {
    for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::rmsprop}) {
        Tensor<float> p({3}, std::vector<float>{1.0f, -2.0f, 0.5f});
        p.track_grad();
        Optimizer opt(kind, {&p}, 0.01);
        auto f = [&] { return p.values[0] * p.values[0] + p.values[1] * p.values[1] + p.values[2] * p.values[2]; };
        const float before = f();
        for (int k = 0; k < 50; ++k) {
            for (int i = 0; i < 3; ++i) p.grad[i] = 2 * p.values[i];
            opt.step();
        }
        EXPECT_LT(f(), before) << static_cast<int>(kind);
    }
}
