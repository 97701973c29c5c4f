#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck_suite.hpp"
#include "inrsynth/nncore.hpp"

using namespace inrsynth;
using namespace inrsynth::nn;

TEST(SineForward, ScalarOracle) {
  Mat<double> W(1, 1);
  W << 0.1;
  Vec<double> b(1), x(1);
  b << 0.0;
  x << 0.2;
  EXPECT_NEAR(sine_forward<double>(x, W, b, 30.0)(0), 0.564642, 1e-6);
  EXPECT_NEAR(sine_forward<double>(x, W, b, 30.0)(0), std::sin(0.6), 1e-15);
}

TEST(SineForward, ZeroWeightsGiveZero) {
  Rng rng(1);
  const Vec<double> x = gradsuite::random_mat(5, 1, rng);
  const auto y = sine_forward<double>(x, Mat<double>::Zero(4, 5), Vec<double>::Zero(4), 30.0);
  EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SineForward, RangeAndShapeErrors) {
  Rng rng(2);
  const Mat<double> W = gradsuite::random_mat(6, 3, rng, -5, 5);
  const Vec<double> b = gradsuite::random_mat(6, 1, rng);
  const Vec<double> x = gradsuite::random_mat(3, 1, rng);
  const auto y = sine_forward<double>(x, W, b, 30.0);
  EXPECT_LE(y.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_THROW(sine_forward<double>(Vec<double>::Zero(2), W, b, 30.0), InvalidArgument);
}

TEST(Bce, Examples) {
  EXPECT_NEAR(bce(1.0, 1.0), -std::log(1.0 - kBceEps), 1e-15);
  EXPECT_NEAR(bce(0.5, 1.0), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce(0.5, 0.0), 0.693147, 1e-6);
  EXPECT_NEAR(bce(0.0, 1.0), 16.1181, 1e-4);
  EXPECT_NEAR(bce(0.0, 1.0), -std::log(kBceEps), 1e-12);
}

TEST(Bce, NonNegative) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) EXPECT_GE(bce(rng.uniform(), double(rng.below(2))), 0.0);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(4);
  Sequential<double> net;
  net.add(gradsuite::random_linear(3, 5, rng));
  net.add(Sine<double>(30.0));
  net.add(gradsuite::random_linear(5, 2, rng));
  net.zero_grad();
  const Mat<double> y = net.forward(gradsuite::random_mat(3, 4, rng), Mode::kTrain);
  net.backward(Mat<double>::Zero(y.rows(), y.cols()));
  for (auto& p : net.params()) EXPECT_EQ(p.grad->cwiseAbs().maxCoeff(), 0.0) << p.name;
}

TEST(Backward, LinearL2HandOracle) {
  // W = [[1, 2], [3, 4]], b = [0.5, -1], x = [1, -1], t = [0, 1]
  // y = Wx + b = [-0.5, -2]; r = y - t = [-0.5, -3]
  // dL/dW = r x^T = [[-0.5, 0.5], [-3, 3]]; dL/db = r
  Linear<double> l(2, 2);
  l.W << 1, 2, 3, 4;
  l.b << 0.5, -1;
  Mat<double> x(2, 1), t(2, 1), g;
  x << 1, -1;
  t << 0, 1;
  const double loss = l2_loss<double>(l.forward(x, Mode::kTrain), t, &g);
  EXPECT_DOUBLE_EQ(loss, 0.5 * (0.25 + 9.0));
  l.backward(g);
  Mat<double> dW(2, 2);
  dW << -0.5, 0.5, -3, 3;
  EXPECT_EQ(l.dW, dW);
  EXPECT_DOUBLE_EQ(l.db(0, 0), -0.5);
  EXPECT_DOUBLE_EQ(l.db(1, 0), -3.0);
}

TEST(Backward, WithoutForwardIsStateError) {
  const Mat<double> g = Mat<double>::Ones(2, 1);
  EXPECT_THROW(Linear<double>(2, 2).backward(g), StateError);
  EXPECT_THROW(Sine<double>(30).backward(g), StateError);
  EXPECT_THROW(Relu<double>().backward(g), StateError);
  EXPECT_THROW(Sigmoid<double>().backward(g), StateError);
  EXPECT_THROW(BatchNorm<double>(2).backward(g), StateError);
  EXPECT_THROW(MaxPoolSet<double>().backward(g), StateError);
}

TEST(LayerSpec, Validation) {
  EXPECT_NO_THROW(validate(LayerSpec{LayerKind::kSine, 3, 4, 30.0}));
  EXPECT_THROW(validate(LayerSpec{LayerKind::kLinear, 0, 4}), InvalidArgument);
  EXPECT_THROW(validate(LayerSpec{LayerKind::kSine, 3, 4, 0.0}), InvalidArgument);
  EXPECT_THROW(Linear<double>(3, 0), InvalidArgument);
}

TEST(GradCheck, IdentityNetworkL2) {
  Linear<double> l(3, 3);
  l.W.setIdentity();
  Rng rng(5);
  const Mat<double> x = gradsuite::random_mat(3, 4, rng), t = gradsuite::random_mat(3, 4, rng);
  std::vector<ParamRef<double>> params;
  l.collect("", params);
  const auto r = grad_check(params,
                            [&] {
                              l.dW.setZero();
                              l.db.setZero();
                              Mat<double> g;
                              const double loss = l2_loss<double>(l.forward(x, Mode::kTrain), t, &g);
                              l.backward(g);
                              return loss;
                            },
                            1e-6);
  EXPECT_TRUE(r.pass) << r.max_rel_error;
}

TEST(GradCheck, CorruptedGradientFails) {
  Rng rng(6);
  Linear<double> l = gradsuite::random_linear(3, 2, rng);
  const Mat<double> x = gradsuite::random_mat(3, 4, rng), t = gradsuite::random_mat(2, 4, rng);
  std::vector<ParamRef<double>> params;
  l.collect("", params);
  const auto r = grad_check(params,
                            [&] {
                              l.dW.setZero();
                              l.db.setZero();
                              Mat<double> g;
                              const double loss = l2_loss<double>(l.forward(x, Mode::kTrain), t, &g);
                              l.backward(g * 1.1);
                              return loss;
                            },
                            1e-4);
  EXPECT_FALSE(r.pass);
  EXPECT_GT(r.max_rel_error, 0.05);
}

TEST(GradCheck, NonFiniteLossIsNumericError) {
  Mat<double> w = Mat<double>::Ones(1, 1), g = Mat<double>::Zero(1, 1);
  EXPECT_THROW(grad_check({{"w", &w, &g}}, [] { return std::nan(""); }, 1e-4), NumericError);
}

class GradSuite : public ::testing::TestWithParam<std::string> {};

TEST_P(GradSuite, TwentySeedsAtTolerance) {
  for (const auto& [name, fn] : gradsuite::scenarios()) {
    if (name != GetParam()) continue;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto o = fn(seed, 1e-4);
      EXPECT_TRUE(o.report.pass) << o.scenario << " seed " << seed << " max rel " << o.report.max_rel_error;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, GradSuite,
                         ::testing::Values("linear", "sine", "relu", "sigmoid", "batchnorm", "maxpool_set",
                                           "composite_loss", "diffusion_eps_mse", "autoencoder"));

TEST(Adam, ZeroGradientIsFixedPoint) {
  Rng rng(7);
  Mat<float> w = gradsuite::random_mat(3, 3, rng).cast<float>(), g = Mat<float>::Zero(3, 3);
  const Mat<float> w0 = w;
  OptState<float> st;
  std::vector<ParamRef<float>> p{{"w", &w, &g}};
  for (int i = 0; i < 5; ++i) adam_step(p, st);
  EXPECT_EQ(w, w0);
  // ... also after moments have been built up.
  g.setOnes();
  adam_step(p, st);
  const Mat<float> w1 = w;
  g.setZero();
  adam_step(p, st);
  EXPECT_EQ(w, w1);
}

TEST(Adam, FirstStepMagnitudeIsLr) {
  Mat<double> w = Mat<double>::Zero(1, 1), g = Mat<double>::Ones(1, 1);
  OptState<double> st;
  st.config.lr = 1e-3;
  adam_step<double>({{"w", &w, &g}}, st);
  EXPECT_NEAR(w(0, 0), -1e-3, 1e-3 * 1e-6);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, DeterministicAndNamesNonFiniteParameter) {
  auto run = [] {
    Rng rng(8);
    Mat<float> w = gradsuite::random_mat(4, 2, rng).cast<float>(), g(4, 2);
    OptState<float> st;
    for (int i = 0; i < 10; ++i) {
      g = gradsuite::random_mat(4, 2, rng).cast<float>();
      adam_step<float>({{"w", &w, &g}}, st);
    }
    return w;
  };
  EXPECT_EQ(run(), run());
  Mat<float> w = Mat<float>::Zero(2, 2), g = Mat<float>::Zero(2, 2);
  g(1, 0) = std::numeric_limits<float>::infinity();
  OptState<float> st;
  try {
    adam_step<float>({{"enc.l0.W", &w, &g}}, st);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("enc.l0.W"), std::string::npos);
  }
}

TEST(MaxPoolSet, Examples) {
  Mat<double> one(1, 3);
  one << 1, -2, 3;
  EXPECT_EQ(maxpool_set<double>(one), one.row(0).transpose());
  Mat<double> two(2, 2);
  two << 1, 0, 0, 1;
  EXPECT_EQ(maxpool_set<double>(two), (Vec<double>(2) << 1, 1).finished());
  EXPECT_THROW(maxpool_set<double>(Mat<double>(0, 2)), InvalidArgument);
}

TEST(MaxPoolSet, PermutationInvariant) {
  Rng rng(9);
  const Mat<double> rows = gradsuite::random_mat(7, 4, rng);
  const Vec<double> base = maxpool_set<double>(rows);
  for (int trial = 0; trial < 10; ++trial) {
    const auto perm = rng.sample_without_replacement(7, 7);
    Mat<double> p(7, 4);
    for (int i = 0; i < 7; ++i) p.row(i) = rows.row(perm[std::size_t(i)]);
    EXPECT_EQ(maxpool_set<double>(p), base);
  }
}

TEST(BatchNorm, TrainModeNormalizesBatch) {
  Rng rng(10);
  BatchNorm<double> bn(4);
  const Mat<double> x = gradsuite::random_mat(4, 50, rng, -3, 7);
  const Mat<double> y = bn.forward(x, Mode::kTrain);
  for (int f = 0; f < 4; ++f) {
    const double mean = y.row(f).mean();
    const double var = (y.row(f).array() - mean).square().mean();
    EXPECT_NEAR(mean, 0.0, 1e-5);
    EXPECT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(BatchNorm, EvalModeIsFrozenAffine) {
  Rng rng(11);
  BatchNorm<double> bn(3);
  bn.running_mean << 0.5, -1, 2;
  bn.running_var << 4, 1, 0.25;
  bn.gamma << 2, 1, 0.5;
  bn.beta << 0, 1, -1;
  const Mat<double> x = gradsuite::random_mat(3, 5, rng);
  const Mat<double> y1 = bn.forward(x, Mode::kEval), y2 = bn.forward(x, Mode::kEval);
  EXPECT_EQ(y1, y2);
  for (int j = 0; j < 5; ++j)
    EXPECT_NEAR(y1(0, j), 2.0 * (x(0, j) - 0.5) / std::sqrt(4.0 + 1e-5), 1e-12);
  // Eval mode does not touch the running statistics.
  EXPECT_EQ(bn.running_mean(1, 0), -1.0);
}

TEST(Sequential, CastPreservesOutputs) {
  Rng rng(12);
  Sequential<double> net;
  net.add(gradsuite::random_linear(3, 4, rng));
  net.add(Sine<double>(30.0));
  net.add(gradsuite::random_linear(4, 2, rng));
  auto f = net.cast<float>();
  const Mat<double> x = gradsuite::random_mat(3, 6, rng);
  const Mat<double> a = net.forward(x, Mode::kEval);
  const Mat<float> b = f.forward(x.cast<float>(), Mode::kEval);
  EXPECT_LT((a - b.cast<double>()).cwiseAbs().maxCoeff(), 1e-4);
}
