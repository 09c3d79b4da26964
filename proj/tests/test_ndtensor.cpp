#include <gtest/gtest.h>

#include <random>

#include "nstrokes/adam.hpp"
#include "nstrokes/gradcheck.hpp"
#include "nstrokes/ops.hpp"
#include "oracles.hpp"

using namespace nstrokes;

namespace {

Tensor conv_via_tape(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  Tape t;
  Var out = ops::conv2d(t, t.constant(x), t.constant(w), t.constant(b), stride);
  return t.value(out);
}

}  // namespace

TEST(Conv2d, MatchesDirectOracleOnSmallInput) {
  std::mt19937_64 rng(1);
  Tensor x = oracle::random_tensor({2, 5, 5}, rng);
  Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
  Tensor b = oracle::random_tensor({3}, rng);
  Tensor y = conv_via_tape(x, w, b, 1);
  ASSERT_EQ(y.shape(), (Shape{3, 5, 5}));
  EXPECT_LT(oracle::max_abs_diff(y, oracle::conv2d(x, w, b, 1, 1)), 1e-5);
}

TEST(Conv2d, StrideTwoMatchesOracleAndRoundsUp) {
  std::mt19937_64 rng(2);
  for (int h : {5, 6, 7, 8}) {
    Tensor x = oracle::random_tensor({3, h, h + 1}, rng);
    Tensor w = oracle::random_tensor({4, 3, 3, 3}, rng);
    Tensor b = oracle::random_tensor({4}, rng);
    Tensor y = conv_via_tape(x, w, b, 2);
    EXPECT_EQ(y.dim(1), (h + 1) / 2);
    EXPECT_EQ(y.dim(2), (h + 2) / 2);
    EXPECT_LT(oracle::max_abs_diff(y, oracle::conv2d(x, w, b, 2, 1)), 1e-5);
  }
}

TEST(Conv2d, PointwiseIdentity) {
  std::mt19937_64 rng(3);
  Tensor x = oracle::random_tensor({1, 6, 4}, rng);
  Tensor w({1, 1, 1, 1}, 1.0f);
  Tensor b({1}, 0.0f);
  EXPECT_EQ(conv_via_tape(x, w, b, 1), x);
}

TEST(Conv2d, FullResolutionFirstLayerShape) {
  Tensor x({9, 768, 768}, 0.1f);
  Tensor w({10, 9, 7, 7}, 0.01f);
  Tensor b({10}, 0.0f);
  Tensor y = conv_via_tape(x, w, b, 1);
  EXPECT_EQ(y.shape(), (Shape{10, 768, 768}));
  // Interior pixel sees the full kernel: 9*49 taps of 0.1*0.01.
  EXPECT_NEAR(y.at(3, 400, 400), 9 * 49 * 0.001f, 1e-4);
}

TEST(Conv2d, RejectsBadShapes) {
  Tape t;
  Var x = t.constant(Tensor({2, 4, 4}));
  EXPECT_THROW(ops::conv2d(t, x, t.constant(Tensor({3, 2, 3, 1})), Var{}, 1), ShapeError);
  EXPECT_THROW(ops::conv2d(t, x, t.constant(Tensor({3, 5, 3, 3})), Var{}, 1), ShapeError);
}

TEST(ConvTranspose2d, DoublesSizeAndMatchesScatterOracle) {
  std::mt19937_64 rng(4);
  Tensor x = oracle::random_tensor({3, 4, 5}, rng);
  Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
  Tensor b = oracle::random_tensor({2}, rng);
  Tape t;
  Tensor y = t.value(ops::conv_transpose2d(t, t.constant(x), t.constant(w), t.constant(b)));
  ASSERT_EQ(y.shape(), (Shape{2, 8, 10}));
  EXPECT_LT(oracle::max_abs_diff(y, oracle::conv_transpose2d(x, w, b)), 1e-5);
}

TEST(Conv1d, ShapeIdentityAndOracle) {
  std::mt19937_64 rng(5);
  {
    Tape t;
    Var y = ops::conv1d(t, t.constant(Tensor({45, 11}, 0.5f)), t.constant(Tensor({40, 45, 3}, 0.01f)),
                        t.constant(Tensor({40})));
    EXPECT_EQ(t.value(y).shape(), (Shape{40, 11}));
  }
  {
    Tensor x = oracle::random_tensor({2, 6}, rng);
    Tensor w({2, 2, 3}, 0.0f);
    w[(0 * 2 + 0) * 3 + 1] = 1.0f;
    w[(1 * 2 + 1) * 3 + 1] = 1.0f;
    Tape t;
    EXPECT_EQ(t.value(ops::conv1d(t, t.constant(x), t.constant(w), t.constant(Tensor({2})))), x);
  }
  {
    Tensor x = oracle::random_tensor({4, 7}, rng);
    Tensor w = oracle::random_tensor({5, 4, 3}, rng);
    Tensor b = oracle::random_tensor({5}, rng);
    Tape t;
    Tensor y = t.value(ops::conv1d(t, t.constant(x), t.constant(w), t.constant(b)));
    EXPECT_LT(oracle::max_abs_diff(y, oracle::conv1d(x, w, b)), 1e-5);
  }
  {
    Tape t;
    EXPECT_THROW(ops::conv1d(t, t.constant(Tensor({4, 0})), t.constant(Tensor({5, 4, 3})), Var{}), ShapeError);
  }
}

TEST(InstanceNorm, NormalizesEachChannel) {
  std::mt19937_64 rng(6);
  Tensor x = oracle::random_tensor({3, 8, 8}, rng, -3.0f, 5.0f);
  Tape t;
  Tensor y = t.value(ops::instance_norm(t, t.constant(x), t.constant(Tensor({3}, 1.0f)), t.constant(Tensor({3}, 0.0f))));
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (int i = 0; i < 64; ++i) mean += y[c * 64 + i];
    mean /= 64;
    for (int i = 0; i < 64; ++i) var += (y[c * 64 + i] - mean) * (y[c * 64 + i] - mean);
    var /= 64;
    EXPECT_LT(std::abs(mean), 1e-5);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(InstanceNorm, ConstantChannelGivesBeta) {
  Tape t;
  Tensor beta({2});
  beta[0] = 0.25f;
  beta[1] = -1.5f;
  Tensor y = t.value(ops::instance_norm(t, t.constant(Tensor({2, 3, 3}, 7.0f)), t.constant(Tensor({2}, 1.0f)),
                                         t.constant(beta)));
  for (int i = 0; i < 9; ++i) {
    EXPECT_NEAR(y[i], 0.25f, 1e-6);
    EXPECT_NEAR(y[9 + i], -1.5f, 1e-6);
  }
}

TEST(InstanceNorm, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  Tensor x = oracle::random_tensor({3, 4, 4}, rng);
  Tensor gamma = oracle::random_tensor({3}, rng, 0.5f, 1.5f);
  Tensor beta = oracle::random_tensor({3}, rng);
  Tensor* params[] = {&x, &gamma, &beta};
  const double err = gradcheck(
      [](Tape& t, std::span<const Var> v) {
        return ops::mean_squared_to(t, ops::instance_norm(t, v[0], v[1], v[2]), 0.3f);
      },
      params);
  EXPECT_LT(err, 1e-3);
}

TEST(Activation, ScalarValues) {
  Tensor x({4});
  x[0] = -2.0f;
  x[1] = 3.0f;
  x[2] = 0.0f;
  x[3] = -1.0f;
  Tape t;
  Var v = t.constant(x);
  const Tensor r = t.value(ops::relu(t, v));
  EXPECT_EQ(r[0], 0.0f);
  EXPECT_EQ(r[1], 3.0f);
  EXPECT_EQ(t.value(ops::sigmoid(t, v))[2], 0.5f);
  EXPECT_FLOAT_EQ(t.value(ops::leaky_relu(t, v, 0.2f))[3], -0.2f);
}

TEST(Activation, ReluSubgradientAtZeroIsZero) {
  Tensor x({1}, 0.0f);
  Tape t;
  Var p = t.parameter(x);
  t.backward(ops::relu(t, p));
  EXPECT_EQ(x.grad()[0], 0.0f);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (float g : {-3.0f, 0.01f, 250.0f}) {
    Tensor p({1}, 1.0f);
    p.grad()[0] = g;
    AdamState st;
    adam_step(p, st);
    EXPECT_NEAR(std::abs(p[0] - 1.0f), 2e-4, 1e-6);
    EXPECT_EQ(st.step_count, 1u);
    EXPECT_EQ(p.grad()[0], g);
  }
}

TEST(Adam, ZeroGradientLeavesParameter) {
  Tensor p({5}, 0.7f);
  p.grad();
  AdamState st;
  adam_step(p, st);
  for (float v : p.values()) EXPECT_EQ(v, 0.7f);
}

TEST(Adam, MatchesScriptedTrace) {
  Tensor p({1}, 0.0f);
  AdamState st;
  oracle::ScalarAdam ref{2e-4, 0.5, 0.999, 1e-8};
  double expected = 0.0;
  for (double g : {0.5, -1.25, 2.0}) {
    p.grad()[0] = static_cast<float>(g);
    adam_step(p, st);
    expected = ref.step(expected, g);
    EXPECT_LT(std::abs(p[0] - expected), 1e-10);
  }
  EXPECT_EQ(st.step_count, 3u);
}

TEST(Adam, MissingGradientThrows) {
  Tensor p({2});
  AdamState st;
  EXPECT_THROW(adam_step(p, st), NumericalError);
}

TEST(Adam, DeterministicBitForBit) {
  std::mt19937_64 rng(8);
  Tensor a = oracle::random_tensor({64}, rng);
  Tensor g = oracle::random_tensor({64}, rng);
  Tensor b = a;
  a.grad() = g.storage();
  b.grad() = g.storage();
  AdamState sa, sb;
  for (int i = 0; i < 3; ++i) {
    adam_step(a, sa);
    adam_step(b, sb);
  }
  EXPECT_EQ(a.storage(), b.storage());
  EXPECT_EQ(sa, sb);
}

TEST(GradCheck, LinearLayerIsExact) {
  std::mt19937_64 rng(9);
  Tensor x = oracle::random_tensor({3, 1, 1}, rng);
  Tensor w = oracle::random_tensor({2, 3, 1, 1}, rng);
  Tensor b = oracle::random_tensor({2}, rng);
  // Target sits just above every output so the L1 loss stays linear and small.
  Tensor target = conv_via_tape(x, w, b, 1);
  for (auto& v : target.values()) v += 0.25f;
  Tensor* params[] = {&x, &w, &b};
  const double err = gradcheck(
      [&](Tape& t, std::span<const Var> v) { return ops::l1_loss(t, ops::conv2d(t, v[0], v[1], v[2], 1), target); },
      params);
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, ConvNormReluStack) {
  std::mt19937_64 rng(10);
  int attempts = 0;
  for (;;) {
    ASSERT_LT(++attempts, 200);
    Tensor x = oracle::random_tensor({2, 5, 5}, rng);
    Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
    Tensor b = oracle::random_tensor({3}, rng);
    Tensor gamma({3}, 1.0f), beta({3}, 0.1f);
    // Resample until no pre-activation sits near the relu kink.
    Tape probe;
    Tensor pre = probe.value(ops::instance_norm(
        probe, ops::conv2d(probe, probe.constant(x), probe.constant(w), probe.constant(b), 1),
        probe.constant(gamma), probe.constant(beta)));
    bool near_kink = false;
    for (float v : pre.values()) near_kink |= std::abs(v) < 0.05f;
    if (near_kink) continue;
    Tensor* params[] = {&x, &w, &b, &gamma, &beta};
    const double err = gradcheck(
        [](Tape& t, std::span<const Var> v) {
          Var y = ops::relu(t, ops::instance_norm(t, ops::conv2d(t, v[0], v[1], v[2], 1), v[3], v[4]));
          return ops::mean_squared_to(t, y, 0.2f);
        },
        params, {.step = 1e-3});
    EXPECT_LT(err, 1e-2);
    break;
  }
}

class OpGradCheck : public ::testing::TestWithParam<int> {};

TEST_P(OpGradCheck, EveryDifferentiableOp) {
  std::mt19937_64 rng(100 + GetParam());
  auto loss = [](Tape& t, Var y) { return ops::mean_squared_to(t, y, 0.1f); };
  auto check = [&](std::vector<Tensor> inputs, auto&& f) {
    std::vector<Tensor*> ptrs;
    for (auto& in : inputs) ptrs.push_back(&in);
    return gradcheck([&](Tape& t, std::span<const Var> v) { return loss(t, f(t, v)); }, ptrs);
  };
  const int h = 3 + GetParam() % 4;
  EXPECT_LT(check({oracle::random_tensor({2, h, h + 1}, rng), oracle::random_tensor({3, 2, 3, 3}, rng),
                   oracle::random_tensor({3}, rng)},
                  [](Tape& t, std::span<const Var> v) { return ops::conv2d(t, v[0], v[1], v[2], 2); }),
            1e-2);
  EXPECT_LT(check({oracle::random_tensor({2, h, h}, rng), oracle::random_tensor({2, 3, 3, 3}, rng),
                   oracle::random_tensor({3}, rng)},
                  [](Tape& t, std::span<const Var> v) { return ops::conv_transpose2d(t, v[0], v[1], v[2]); }),
            1e-2);
  EXPECT_LT(check({oracle::random_tensor({3, h + 2}, rng), oracle::random_tensor({2, 3, 3}, rng),
                   oracle::random_tensor({2}, rng)},
                  [](Tape& t, std::span<const Var> v) { return ops::conv1d(t, v[0], v[1], v[2]); }),
            1e-2);
  EXPECT_LT(check({oracle::random_tensor({2, 4, 4}, rng, 0.3f, 1.0f)},
                  [](Tape& t, std::span<const Var> v) { return ops::sigmoid(t, v[0]); }),
            1e-2);
  EXPECT_LT(check({oracle::random_tensor({2, 4, 4}, rng, 0.2f, 1.0f)},
                  [](Tape& t, std::span<const Var> v) { return ops::leaky_relu(t, ops::add_scalar(t, v[0], -1.5f)); }),
            1e-2);
  EXPECT_LT(check({oracle::random_tensor({4, 5}, rng), oracle::random_tensor({4, 5}, rng)},
                  [](Tape& t, std::span<const Var> v) {
                    Var s = ops::average(t, v[0], v[1]);
                    return ops::concat_rows(t, ops::slice_rows(t, s, 1, 2), ops::add(t, v[0], v[1]));
                  }),
            1e-2);
  EXPECT_LT(check({oracle::random_tensor({3, 4, 4}, rng)},
                  [](Tape& t, std::span<const Var> v) { return ops::gather_pixels(t, v[0], {0, 5, 5, 15}); }),
            1e-2);
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, OpGradCheck, ::testing::Range(0, 4));

TEST(Tape, NonFiniteValuesAreRejected) {
  Tensor x({2}, 1.0f);
  x[1] = std::numeric_limits<float>::infinity();
  Tape t;
  EXPECT_THROW(ops::relu(t, t.constant(x)), NumericalError);
}

TEST(Tape, ParameterGradientsAccumulateAcrossTapes) {
  Tensor p({1}, 2.0f);
  p.grad();
  for (int i = 0; i < 3; ++i) {
    Tape t;
    t.backward(ops::mean_squared_to(t, t.parameter(p), 0.0f));
  }
  EXPECT_FLOAT_EQ(p.grad()[0], 12.0f);
}
