#include <gtest/gtest.h>

#include <numeric>

#include "eslab/synthesis.hpp"
#include "testutil.hpp"

using namespace eslab;

namespace {

double ce_against(const Network& f_s, const Tensor& x, const PredictionVector& y) {
  Tensor target({1, static_cast<int64_t>(y.size())}, std::vector<double>(y.begin(), y.end()));
  return softmax_cross_entropy(f_s.forward(x), target).item();
}

std::vector<double> flat_params(const Network& net) {
  std::vector<double> out;
  for (const auto& p : net.params()) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

}  // namespace

TEST(Dirichlet, DegenerateSimplexAndValidation) {
  EXPECT_EQ(sample_dirichlet({1, {2.5}}, 3), (PredictionVector{1.0}));
  EXPECT_THROW(sample_dirichlet({3, {1.0, 1.0}}, 3), std::invalid_argument);
  EXPECT_THROW(sample_dirichlet({2, {1.0, 0.0}}, 3), std::domain_error);
  EXPECT_THROW(sample_dirichlet({2, {1.0, -0.5}}, 3), std::domain_error);
}

TEST(Dirichlet, AlwaysOnSimplex) {
  Rng meta(1);
  for (int trial = 0; trial < 300; ++trial) {
    const int64_t k = 2 + meta.uniform_int(0, 10);
    auto alpha = draw_alpha(k, static_cast<uint64_t>(trial));
    auto y = sample_dirichlet({k, alpha}, static_cast<uint64_t>(trial) + 7919);
    double sum = 0.0;
    for (double v : y) {
      EXPECT_GT(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Dirichlet, HighConcentrationHugsUniform) {
  DirichletSpec spec{10, std::vector<double>(10, 1000.0)};
  int within = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto y = sample_dirichlet(spec, static_cast<uint64_t>(i));
    bool ok = true;
    for (double v : y) ok = ok && std::abs(v - 0.1) <= 0.02;
    within += ok;
  }
  EXPECT_GE(static_cast<double>(within) / draws, 0.99);
}

TEST(DrawAlpha, PositiveDeterministicAndHalfNormalMean) {
  auto a = draw_alpha(16, 9);
  auto b = draw_alpha(16, 9);
  EXPECT_EQ(a, b);
  EXPECT_NE(draw_alpha(16, 10), a);
  for (double v : a) EXPECT_GE(v, 1e-3);
  // empirical mean over 10k draws vs E|N(0,1)| = sqrt(2/pi)
  auto big = draw_alpha(10000, 123);
  double mean = std::accumulate(big.begin(), big.end(), 0.0) / static_cast<double>(big.size());
  EXPECT_NEAR(mean, std::sqrt(2.0 / 3.14159265358979323846), 0.02);
}

TEST(OptSyn, ZeroIterationsReturnsInitUnchanged) {
  Network f_s = make_model("mlp-small", {6}, 3, 4);
  PredictionVector y = {0.2, 0.5, 0.3};
  Tensor a = opt_syn_sample(f_s, y, 0, 0.01, 11);
  Tensor b = opt_syn_sample(f_s, y, 0, 0.01, 11);
  EXPECT_EQ(a.shape(), (Shape{1, 6}));
  EXPECT_EQ(a.data(), b.data());
  Tensor c = opt_syn_sample(f_s, y, 5, 0.01, 11);
  EXPECT_NE(c.data(), a.data());
  // loose sanity on the N(0,1) init
  double mean = std::accumulate(a.data().begin(), a.data().end(), 0.0) / 6.0;
  EXPECT_LT(std::abs(mean), 2.0);
}

TEST(OptSyn, StationaryTargetLeavesLossAtFloor) {
  Network f_s = make_model("mlp-small", {6}, 3, 4);
  Tensor init = opt_syn_sample(f_s, {0.2, 0.5, 0.3}, 0, 0.01, 21);
  Tensor probs = softmax_rows(f_s.forward(init));
  PredictionVector y(probs.data().begin(), probs.data().end());
  const double initial_ce = ce_against(f_s, init, y);
  Tensor out = opt_syn_sample(f_s, y, 30, 0.01, 21);
  EXPECT_NEAR(ce_against(f_s, out, y), initial_ce, 1e-6);
}

TEST(OptSyn, LinearLogisticDescentReachesConfidentTarget) {
  Network f_s({2}, {LayerSpec::dense(2, 2)}, 2, 0);
  f_s.params()[0].data() = {1.0, 0.0, 0.0, 1.0};  // identity weights
  f_s.params()[1].data() = {0.0, 0.0};
  Tensor out = opt_syn_sample(f_s, {1.0, 0.0}, 50, 0.1, 5);
  EXPECT_LT(ce_against(f_s, out, {1.0, 0.0}), 0.05);
}

TEST(OptSyn, NeverWorseThanInit) {
  Network f_s = make_model("mlp-small", {8}, 4, 7);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto alpha = draw_alpha(4, seed);
    auto y = sample_dirichlet({4, alpha}, seed + 100);
    Tensor init = opt_syn_sample(f_s, y, 0, 0.01, seed);
    Tensor out = opt_syn_sample(f_s, y, 30, 0.01, seed);
    EXPECT_LE(ce_against(f_s, out, y), ce_against(f_s, init, y) + 1e-12);
  }
}

TEST(OptSyn, TargetLengthMismatchThrows) {
  Network f_s = make_model("mlp-small", {6}, 3, 4);
  EXPECT_THROW(opt_syn_sample(f_s, {0.5, 0.5}, 5, 0.01, 1), std::invalid_argument);
}

TEST(OptSyn, NonFiniteModelFailsAfterRetries) {
  Network f_s = make_model("mlp-small", {6}, 3, 4);
  // poison the output bias; NaN in earlier layers would be eaten by relu
  f_s.params().back().data()[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(opt_syn_sample(f_s, {0.2, 0.5, 0.3}, 5, 0.01, 1), SynthesisError);
}

TEST(OptSynEpoch, DistinctSamplesDeterministicPool) {
  Network f_s = make_model("mlp-small", {6}, 3, 4);
  auto pool = opt_syn_epoch(f_s, 3, 10, 0.01, 77, 5);
  EXPECT_EQ(pool.inputs.shape(), (Shape{3, 6}));
  EXPECT_EQ(pool.epoch_tag, 5);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) {
      double d2 = 0.0;
      for (int c = 0; c < 6; ++c) {
        double diff = pool.inputs.data()[i * 6 + c] - pool.inputs.data()[j * 6 + c];
        d2 += diff * diff;
      }
      EXPECT_GT(d2, 0.0);
    }
  auto again = opt_syn_epoch(f_s, 3, 10, 0.01, 77, 5);
  EXPECT_EQ(again.inputs.data(), pool.inputs.data());
  EXPECT_THROW(opt_syn_epoch(f_s, 0, 10, 0.01, 77), std::invalid_argument);
}

TEST(OptSynEpoch, SampleIDependsOnlyOnSeedAndIndex) {
  Network f_s = make_model("mlp-small", {6}, 3, 4);
  auto small = opt_syn_epoch(f_s, 3, 8, 0.01, 42);
  auto large = opt_syn_epoch(f_s, 13, 8, 0.01, 42);
  for (int i = 0; i < 3 * 6; ++i) EXPECT_EQ(small.inputs.data()[i], large.inputs.data()[i]);
}

TEST(OptSynEpoch, BeatsNoiseOnItsOwnTargets) {
  Network f_s = make_model("mlp-small", {8}, 4, 7);
  const int64_t s = 16;
  auto inits = opt_syn_epoch(f_s, s, 0, 0.01, 99);
  auto pool = opt_syn_epoch(f_s, s, 30, 0.01, 99);
  double ce_init = 0.0, ce_opt = 0.0;
  for (int64_t i = 0; i < s; ++i) {
    auto alpha = draw_alpha(4, opt_syn_alpha_seed(99, i));
    auto y = sample_dirichlet({4, alpha}, opt_syn_target_seed(99, i));
    ce_init += ce_against(f_s, take_rows(inits.inputs, {i}), y);
    ce_opt += ce_against(f_s, take_rows(pool.inputs, {i}), y);
  }
  EXPECT_LT(ce_opt, ce_init);
}

TEST(OptSynEpoch, SubstituteParamsUntouched) {
  Network f_s = make_model("mlp-small", {6}, 3, 4);
  auto before = flat_params(f_s);
  opt_syn_epoch(f_s, 4, 10, 0.01, 3);
  EXPECT_EQ(flat_params(f_s), before);
  for (const auto& p : f_s.params()) EXPECT_TRUE(p.requires_grad());
}

TEST(NoiseEpoch, DeterministicPool) {
  auto a = noise_epoch({1, 8, 8}, 5, 4, 2);
  auto b = noise_epoch({1, 8, 8}, 5, 4, 2);
  EXPECT_EQ(a.inputs.shape(), (Shape{5, 1, 8, 8}));
  EXPECT_EQ(a.inputs.data(), b.inputs.data());
  EXPECT_EQ(a.epoch_tag, 2);
  EXPECT_NE(noise_epoch({1, 8, 8}, 5, 5, 2).inputs.data(), a.inputs.data());
}

TEST(ModeSeeking, EqualLatentsGiveZero) {
  GeneratorNetwork g(4, 3, {5}, 8, 7);
  Rng rng(1);
  Tensor z = Tensor::randn({3, 4}, rng);
  Tensor l = one_hot(std::vector<int>{0, 1, 2}, 3);
  EXPECT_DOUBLE_EQ(mode_seeking_loss(g, z, z, l).item(), 0.0);
}

TEST(ModeSeeking, ConstantGeneratorHitsTheClamp) {
  GeneratorNetwork g(4, 3, {5}, 8, 7);
  for (auto& p : g.params())
    for (double& v : p.data()) v = 0.0;
  Rng rng(2);
  Tensor z1 = Tensor::randn({2, 4}, rng);
  Tensor z2 = Tensor::randn({2, 4}, rng);
  Tensor l = one_hot(std::vector<int>{0, 2}, 3);
  Tensor dz = row_l2_distance(z1, z2);
  const double want = (dz.data()[0] + dz.data()[1]) / 1e-8;
  EXPECT_NEAR(mode_seeking_loss(g, z1, z2, l).item() / want, 1.0, 1e-12);
}

TEST(ModeSeeking, GradientMatchesFiniteDifferences) {
  GeneratorNetwork g(3, 2, {4}, 5, 11);
  Rng rng(3);
  Tensor z1 = Tensor::randn({2, 3}, rng);
  Tensor z2 = Tensor::randn({2, 3}, rng);
  Tensor l = one_hot(std::vector<int>{0, 1}, 2);
  Tape tape;
  TapeScope scope(tape);
  Tensor loss = mode_seeking_loss(g, z1, z2, l);
  tape.backward(loss);
  auto forward = [&] { return mode_seeking_loss(g, z1, z2, l).item(); };
  for (auto& p : g.params()) {
    auto fd = testutil::fd_grad(p, forward);
    EXPECT_TRUE(testutil::close_rel(p.grad(), fd, 1e-3))
        << "max rel err " << testutil::max_rel_err(p.grad(), fd);
  }
}

TEST(DnnSyn, LambdaZeroReducesToClassificationLoss) {
  GeneratorNetwork g(4, 3, {6}, 8, 7);
  Network f_s = make_model("mlp-small", {6}, 3, 4);
  Rng rng(5);
  Tensor z1 = Tensor::randn({4, 4}, rng);
  Tensor z2 = Tensor::randn({4, 4}, rng);
  Tensor l = one_hot(std::vector<int>{0, 1, 2, 0}, 3);
  const double expect = softmax_cross_entropy(f_s.forward(g.generate(z1, l)), l).item();
  GeneratorNetwork g2 = g.clone();
  Adam opt(g2.params(), 0.001);
  EXPECT_DOUBLE_EQ(dnn_syn_step(g2, f_s, z1, z2, l, 0.0, opt), expect);
}

TEST(DnnSyn, SubstituteFrozenGeneratorMoves) {
  GeneratorNetwork g(4, 3, {6}, 8, 7);
  Network f_s = make_model("mlp-small", {6}, 3, 4);
  auto fs_before = flat_params(f_s);
  std::vector<double> g_before;
  for (auto& p : g.params()) g_before.insert(g_before.end(), p.data().begin(), p.data().end());
  Rng rng(6);
  Tensor z1 = Tensor::randn({4, 4}, rng);
  Tensor z2 = Tensor::randn({4, 4}, rng);
  Tensor l = one_hot(std::vector<int>{0, 1, 2, 0}, 3);
  Adam opt(g.params(), 0.001);
  dnn_syn_step(g, f_s, z1, z2, l, 1.0, opt);
  EXPECT_EQ(flat_params(f_s), fs_before);
  std::vector<double> g_after;
  for (auto& p : g.params()) g_after.insert(g_after.end(), p.data().begin(), p.data().end());
  EXPECT_NE(g_after, g_before);
}

TEST(DnnSyn, LossFallsOverTwoHundredSteps) {
  GeneratorNetwork g(8, 4, {8}, 32, 13);
  Network f_s = make_model("mlp-small", {8}, 4, 14);
  Rng rng(7);
  Tensor z1 = Tensor::randn({8, 8}, rng);
  Tensor z2 = Tensor::randn({8, 8}, rng);
  Tensor l = one_hot(std::vector<int>{0, 1, 2, 3, 0, 1, 2, 3}, 4);
  Adam opt(g.params(), 0.002);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 200; ++i) {
    last = dnn_syn_step(g, f_s, z1, z2, l, 1.0, opt);
    if (i == 0) first = last;
  }
  EXPECT_LT(last, first * 0.9);
}

TEST(DnnSyn, NonFiniteLossAborts) {
  GeneratorNetwork g(4, 3, {6}, 8, 7);
  Network f_s = make_model("mlp-small", {6}, 3, 4);
  f_s.params().back().data()[0] = std::numeric_limits<double>::quiet_NaN();
  Rng rng(8);
  Tensor z1 = Tensor::randn({2, 4}, rng);
  Tensor z2 = Tensor::randn({2, 4}, rng);
  Tensor l = one_hot(std::vector<int>{0, 1}, 3);
  Adam opt(g.params(), 0.001);
  EXPECT_THROW(dnn_syn_step(g, f_s, z1, z2, l, 1.0, opt), SynthesisError);
}

TEST(Augment, DeterministicUnderSeed) {
  Rng rng(9);
  Tensor x = Tensor::randn({4, 1, 8, 8}, rng);
  Tensor a = augment(x, 33);
  Tensor b = augment(x, 33);
  EXPECT_EQ(a.data(), b.data());
  EXPECT_NE(augment(x, 34).data(), a.data());
  EXPECT_THROW(augment(Tensor::zeros({2, 3, 4}), 1), std::invalid_argument);
}

TEST(Augment, ForcedFlipIsAnInvolution) {
  Rng rng(10);
  Tensor x = Tensor::randn({3, 2, 4, 4}, rng);
  AugmentOptions opt;
  opt.force_flip = true;
  opt.force_shift = 0;
  opt.noise_sigma = 0.0;
  Tensor once = augment(x, 1, opt);
  EXPECT_NE(once.data(), x.data());
  Tensor twice = augment(once, 2, opt);
  EXPECT_EQ(twice.data(), x.data());
}

TEST(Augment, ShiftFillsWithZeros) {
  Tensor x({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  AugmentOptions opt;
  opt.force_flip = false;
  opt.noise_sigma = 0.0;
  opt.force_shift = 1;
  EXPECT_EQ(augment(x, 1, opt).data(), (std::vector<double>{0, 1, 2, 3, 0, 5, 6, 7}));
  opt.force_shift = -1;
  EXPECT_EQ(augment(x, 1, opt).data(), (std::vector<double>{2, 3, 4, 0, 6, 7, 8, 0}));
  opt.force_shift = 0;
  opt.force_flip = true;
  EXPECT_EQ(augment(x, 1, opt).data(), (std::vector<double>{4, 3, 2, 1, 8, 7, 6, 5}));
}

TEST(Augment, VectorDataGetsNoiseOnly) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  AugmentOptions opt;
  opt.noise_sigma = 0.0;
  opt.force_flip = true;  // ignored for vector data
  EXPECT_EQ(augment(x, 1, opt).data(), x.data());
}

TEST(Augment, NoiseMagnitudeMatchesHalfNormal) {
  Tensor x = Tensor::zeros({10000, 1});
  Tensor noisy = augment(x, 55);
  double mean_abs = 0.0;
  for (double v : noisy.data()) mean_abs += std::abs(v);
  mean_abs /= 10000.0;
  const double want = 0.05 * std::sqrt(2.0 / 3.14159265358979323846);
  EXPECT_NEAR(mean_abs / want, 1.0, 0.05);
}
