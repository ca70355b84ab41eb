#include <gtest/gtest.h>

#include <cmath>

#include "eslab/metrics.hpp"
#include "eslab/synthesis.hpp"
#include "eslab/train.hpp"

using namespace eslab;

namespace {

// random PSD covariance via M^T M
GaussianSummary random_summary(int64_t d, uint64_t seed, double mean_scale = 1.0) {
  Rng rng(seed);
  GaussianSummary g;
  g.mu.resize(static_cast<size_t>(d));
  for (auto& m : g.mu) m = mean_scale * rng.normal();
  std::vector<double> m(static_cast<size_t>(d * d));
  for (auto& v : m) v = rng.normal();
  g.sigma.assign(static_cast<size_t>(d * d), 0.0);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < d; ++k)
        acc += m[static_cast<size_t>(k * d + i)] * m[static_cast<size_t>(k * d + j)];
      g.sigma[static_cast<size_t>(i * d + j)] = acc;
    }
  return g;
}

}  // namespace

TEST(Jacobi, ReconstructsASymmetricMatrix) {
  const int64_t d = 32;
  Rng rng(7);
  std::vector<double> a(static_cast<size_t>(d * d));
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = i; j < d; ++j) {
      const double v = rng.normal();
      a[static_cast<size_t>(i * d + j)] = v;
      a[static_cast<size_t>(j * d + i)] = v;
    }
  std::vector<double> eigvals, v;
  detail::jacobi_eigen(a, d, eigvals, v);
  // A v_e == lambda_e v_e for every eigenpair
  double worst = 0.0;
  for (int64_t e = 0; e < d; ++e) {
    for (int64_t i = 0; i < d; ++i) {
      double av = 0.0;
      for (int64_t j = 0; j < d; ++j)
        av += a[static_cast<size_t>(i * d + j)] * v[static_cast<size_t>(j * d + e)];
      worst = std::max(worst,
                       std::abs(av - eigvals[static_cast<size_t>(e)] * v[static_cast<size_t>(i * d + e)]));
    }
  }
  EXPECT_LT(worst, 1e-8);
  // eigenvector columns are orthonormal
  for (int64_t e1 = 0; e1 < d; ++e1)
    for (int64_t e2 = e1; e2 < d; ++e2) {
      double dot = 0.0;
      for (int64_t i = 0; i < d; ++i)
        dot += v[static_cast<size_t>(i * d + e1)] * v[static_cast<size_t>(i * d + e2)];
      EXPECT_NEAR(dot, e1 == e2 ? 1.0 : 0.0, 1e-9);
    }
}

TEST(InceptionScore, UniformRowsScoreExactlyOne) {
  Tensor probs = Tensor::full({6, 10}, 0.1);
  EXPECT_DOUBLE_EQ(inception_score_rows(probs), 1.0);
}

TEST(InceptionScore, OneHotPerClassScoresExactlyK) {
  const int64_t k = 10;
  std::vector<double> rows(static_cast<size_t>(k * k), 0.0);
  for (int64_t i = 0; i < k; ++i) rows[static_cast<size_t>(i * k + i)] = 1.0;
  EXPECT_NEAR(inception_score_rows(Tensor({k, k}, std::move(rows))), 10.0, 1e-9);
}

TEST(InceptionScore, MatchesDirectSummation) {
  Tensor probs({3, 2}, {0.9, 0.1, 0.8, 0.2, 0.1, 0.9});
  const double m0 = (0.9 + 0.8 + 0.1) / 3.0, m1 = (0.1 + 0.2 + 0.9) / 3.0;
  const double kl1 = 0.9 * std::log(0.9 / m0) + 0.1 * std::log(0.1 / m1);
  const double kl2 = 0.8 * std::log(0.8 / m0) + 0.2 * std::log(0.2 / m1);
  const double kl3 = 0.1 * std::log(0.1 / m0) + 0.9 * std::log(0.9 / m1);
  EXPECT_NEAR(inception_score_rows(probs), std::exp((kl1 + kl2 + kl3) / 3.0), 1e-9);
}

TEST(InceptionScore, StaysWithinAnalyticBounds) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const int64_t n = 17, k = 6;
    std::vector<double> rows;
    DirichletSpec spec{k, std::vector<double>(static_cast<size_t>(k), 0.5)};
    for (int64_t i = 0; i < n; ++i) {
      auto p = sample_dirichlet(spec, mix_seed(seed, static_cast<uint64_t>(i)));
      rows.insert(rows.end(), p.begin(), p.end());
    }
    const double is = inception_score_rows(Tensor({n, k}, std::move(rows)));
    EXPECT_GE(is, 1.0 - 1e-9);
    EXPECT_LE(is, static_cast<double>(k) + 1e-9);
  }
}

TEST(InceptionScore, ZeroedHeadModelIsPerfectlyUniform) {
  Network net = make_model("mlp-small", {8}, 5, 3);
  for (size_t i = net.params().size() - 2; i < net.params().size(); ++i)
    for (auto& w : net.params()[i].data()) w = 0.0;
  Rng rng(4);
  Tensor x = Tensor::randn({12, 8}, rng);
  EXPECT_DOUBLE_EQ(inception_score(net, x), 1.0);
  EXPECT_THROW(inception_score(net, Tensor::randn({1, 8}, rng)), std::invalid_argument);
}

TEST(GaussianSummary, TwoPointHandArithmetic) {
  Tensor f({2, 2}, {0.0, 0.0, 2.0, 4.0});
  auto g = gaussian_summary(f);
  EXPECT_DOUBLE_EQ(g.mu[0], 1.0);
  EXPECT_DOUBLE_EQ(g.mu[1], 2.0);
  // centered rows are (-1,-2) and (1,2); with 1/(n-1) the covariance is
  // [[2,4],[4,8]]
  EXPECT_DOUBLE_EQ(g.sigma[0], 2.0);
  EXPECT_DOUBLE_EQ(g.sigma[1], 4.0);
  EXPECT_DOUBLE_EQ(g.sigma[2], 4.0);
  EXPECT_DOUBLE_EQ(g.sigma[3], 8.0);
}

TEST(GaussianSummary, ConstantFeaturesHaveZeroCovariance) {
  auto g = gaussian_summary(Tensor::full({5, 3}, 2.5));
  for (double m : g.mu) EXPECT_DOUBLE_EQ(m, 2.5);
  for (double s : g.sigma) EXPECT_DOUBLE_EQ(s, 0.0);
}

TEST(GaussianSummary, SymmetricAndRejectsTinyInputs) {
  Rng rng(11);
  auto g = gaussian_summary(Tensor::randn({40, 6}, rng));
  for (int64_t r = 0; r < 6; ++r)
    for (int64_t c = 0; c < 6; ++c)
      EXPECT_DOUBLE_EQ(g.sigma[static_cast<size_t>(r * 6 + c)],
                       g.sigma[static_cast<size_t>(c * 6 + r)]);
  EXPECT_THROW(gaussian_summary(Tensor::randn({1, 6}, rng)), std::invalid_argument);
}

TEST(Fid, IdenticalSummariesScoreZero) {
  for (uint64_t seed : {1u, 2u, 3u}) {
    auto g = random_summary(8, seed);
    EXPECT_NEAR(fid(g, g), 0.0, 1e-6);
  }
}

TEST(Fid, PureMeanShiftEqualsSquaredDistance) {
  auto a = random_summary(5, 9);
  GaussianSummary b = a;
  std::vector<double> v = {0.5, -1.5, 2.0, 0.0, 1.0};
  double expect = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    b.mu[i] += v[i];
    expect += v[i] * v[i];
  }
  EXPECT_NEAR(fid(a, b), expect, 1e-8);
}

TEST(Fid, DiagonalClosedForm) {
  GaussianSummary a{{0.0, 0.0}, {1.0, 0.0, 0.0, 4.0}};
  GaussianSummary b{{0.0, 0.0}, {9.0, 0.0, 0.0, 1.0}};
  // (1 + 9 - 2*3) + (4 + 1 - 2*2) = 5
  EXPECT_NEAR(fid(a, b), 5.0, 1e-6);
}

TEST(Fid, SymmetricAndNonNegative) {
  for (uint64_t seed = 0; seed < 6; ++seed) {
    auto a = random_summary(7, seed * 2 + 1);
    auto b = random_summary(7, seed * 2 + 2, 2.0);
    const double ab = fid(a, b), ba = fid(b, a);
    EXPECT_NEAR(ab, ba, 1e-6);
    EXPECT_GE(ab, -1e-6);
  }
  EXPECT_THROW(fid(random_summary(3, 1), random_summary(4, 1)), std::invalid_argument);
}

TEST(Features, TapIsTheInputToTheFinalDenseLayer) {
  Network net = make_model("mlp-small", {16}, 4, 5);
  auto fx = feature_extractor(net);
  Rng rng(6);
  Tensor x = Tensor::randn({10, 16}, rng);
  Tensor f = extract_features(fx, x);
  EXPECT_EQ(f.shape(), (Shape{10, 64}));
  Tensor manual = net.forward_features(x, net.last_dense_layer());
  EXPECT_EQ(f.data(), manual.data());

  Network cnn = make_model("cnn-small", {1, 8, 8}, 3, 5);
  Tensor fc = extract_features(feature_extractor(cnn), Tensor::randn({4, 1, 8, 8}, rng));
  EXPECT_EQ(fc.shape(), (Shape{4, 32}));
}

TEST(Agreement, SelfAgreementIsPerfect) {
  Network a = make_model("mlp-small", {8}, 4, 1);
  Network b = make_model("mlp-small", {8}, 4, 2);
  Rng rng(3);
  Tensor x = Tensor::randn({50, 8}, rng);
  EXPECT_DOUBLE_EQ(agreement(a, a, x), 1.0);
  EXPECT_LE(agreement(a, b, x), 1.0);
}

TEST(Direction, TrainedPoolBeatsNoiseOnBothMetrics) {
  // distill toward a confident victim, then compare a substitute-optimized
  // pool against raw noise through the victim's features
  auto ds = gen_blobs(4, 16, 400, 0.25, 31);
  auto [train, test] = split_dataset(ds, 80, 31);
  Network victim = make_model("mlp-small", {16}, 4, 31);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.lr = 3e-3;
  cfg.seed = 31;
  train_supervised(victim, train, test, cfg);

  auto fx = feature_extractor(victim);
  auto real = gaussian_summary(extract_features(fx, train.inputs));

  Rng rng(8);
  Tensor noise = Tensor::randn({128, 16}, rng);
  const double is_noise = inception_score(victim, noise);
  const double fid_noise = fid(real, gaussian_summary(extract_features(fx, noise)));

  const double is_real = inception_score(victim, train.inputs);
  const double fid_real = fid(real, gaussian_summary(extract_features(fx, train.inputs)));
  EXPECT_GT(is_real, is_noise);
  EXPECT_LT(fid_real, fid_noise);
  EXPECT_NEAR(fid_real, 0.0, 1e-6);
}
