#pragma once

#include <cmath>
#include <vector>

#include "eslab/dataset.hpp"
#include "eslab/network.hpp"
#include "eslab/tensor.hpp"

namespace eslab {

namespace detail {
constexpr int64_t kEvalBatch = 256;

// forward in batches without tape recording
template <typename Fn>
void for_each_batch(int64_t n, int64_t batch, Fn&& fn) {
  for (int64_t start = 0; start < n; start += batch) {
    const int64_t count = std::min(batch, n - start);
    std::vector<int64_t> idx(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = start + i;
    fn(idx);
  }
}

// Cyclic Jacobi eigendecomposition of a symmetric d x d matrix (row-major).
// On return `a` holds garbage, `eigvals` the eigenvalues, and `v` the
// eigenvectors as columns: A = V diag(eigvals) V^T. Deterministic, no
// external dependencies; plenty fast for the d <= 256 feature widths here.
inline void jacobi_eigen(std::vector<double> a, int64_t d, std::vector<double>& eigvals,
                         std::vector<double>& v) {
  v.assign(static_cast<size_t>(d * d), 0.0);
  for (int64_t i = 0; i < d; ++i) v[static_cast<size_t>(i * d + i)] = 1.0;
  auto at = [&](int64_t r, int64_t c) -> double& { return a[static_cast<size_t>(r * d + c)]; };
  auto vt = [&](int64_t r, int64_t c) -> double& { return v[static_cast<size_t>(r * d + c)]; };

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int64_t p = 0; p < d; ++p)
      for (int64_t q = p + 1; q < d; ++q) off += std::abs(at(p, q));
    if (off == 0.0) break;

    for (int64_t p = 0; p < d - 1; ++p) {
      for (int64_t q = p + 1; q < d; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        at(p, p) -= t * apq;
        at(q, q) += t * apq;
        at(p, q) = 0.0;
        at(q, p) = 0.0;
        for (int64_t k = 0; k < d; ++k) {
          if (k == p || k == q) continue;
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
          at(p, k) = at(k, p);
          at(q, k) = at(k, q);
        }
        for (int64_t k = 0; k < d; ++k) {
          const double vkp = vt(k, p), vkq = vt(k, q);
          vt(k, p) = c * vkp - s * vkq;
          vt(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  eigvals.resize(static_cast<size_t>(d));
  for (int64_t i = 0; i < d; ++i) eigvals[static_cast<size_t>(i)] = at(i, i);
}

inline std::vector<double> mat_mul(const std::vector<double>& a, const std::vector<double>& b,
                                   int64_t d) {
  std::vector<double> out(static_cast<size_t>(d * d), 0.0);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t k = 0; k < d; ++k) {
      const double aik = a[static_cast<size_t>(i * d + k)];
      if (aik == 0.0) continue;
      for (int64_t j = 0; j < d; ++j)
        out[static_cast<size_t>(i * d + j)] += aik * b[static_cast<size_t>(k * d + j)];
    }
  return out;
}

// Symmetric PSD square root: V diag(sqrt(max(lambda, 0))) V^T. Small
// negative eigenvalues (numerical noise on PSD inputs) clamp to zero.
inline std::vector<double> sym_sqrt(const std::vector<double>& a, int64_t d) {
  std::vector<double> eigvals, v;
  jacobi_eigen(a, d, eigvals, v);
  std::vector<double> out(static_cast<size_t>(d * d), 0.0);
  for (int64_t e = 0; e < d; ++e) {
    const double root = std::sqrt(std::max(eigvals[static_cast<size_t>(e)], 0.0));
    if (root == 0.0) continue;
    for (int64_t i = 0; i < d; ++i) {
      const double vie = v[static_cast<size_t>(i * d + e)] * root;
      if (vie == 0.0) continue;
      for (int64_t j = 0; j < d; ++j)
        out[static_cast<size_t>(i * d + j)] += vie * v[static_cast<size_t>(j * d + e)];
    }
  }
  return out;
}
}  // namespace detail

/// Argmax predictions for a whole dataset (batched, no tape).
inline std::vector<int> predict(const Network& net, const Tensor& inputs) {
  std::vector<int> out;
  out.reserve(static_cast<size_t>(inputs.dim(0)));
  detail::for_each_batch(inputs.dim(0), detail::kEvalBatch, [&](const std::vector<int64_t>& idx) {
    auto preds = argmax_rows(net.forward(take_rows(inputs, idx)));
    out.insert(out.end(), preds.begin(), preds.end());
  });
  return out;
}

/// Fraction of samples whose argmax prediction equals the hard label.
/// Ties inside a row resolve to the lower class index.
inline double accuracy(const Network& net, const LabeledDataset& ds) {
  if (ds.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
  auto preds = predict(net, ds.inputs);
  int64_t hits = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == ds.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

/// Fraction of inputs on which two models pick the same argmax.
inline double agreement(const Network& a, const Network& b, const Tensor& inputs) {
  if (inputs.dim(0) == 0) throw std::invalid_argument("agreement: empty input");
  auto pa = predict(a, inputs);
  auto pb = predict(b, inputs);
  int64_t hits = 0;
  for (size_t i = 0; i < pa.size(); ++i)
    if (pa[i] == pb[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pa.size());
}

/// Feature tap: activations entering the model's final dense layer, one
/// fixed-length vector per sample.
struct FeatureExtract {
  Network network;  // aliases the source model's parameters
  size_t tap_point = 0;
};

inline FeatureExtract feature_extractor(const Network& net) {
  return FeatureExtract{net, net.last_dense_layer()};
}

inline Tensor extract_features(const FeatureExtract& fx, const Tensor& samples) {
  if (samples.dim(0) == 0) throw std::invalid_argument("extract_features: empty input");
  std::vector<double> rows;
  int64_t width = 0;
  detail::for_each_batch(samples.dim(0), detail::kEvalBatch, [&](const std::vector<int64_t>& idx) {
    Tensor f = fx.network.forward_features(take_rows(samples, idx), fx.tap_point);
    width = f.dim(1);
    rows.insert(rows.end(), f.data().begin(), f.data().end());
  });
  return Tensor({samples.dim(0), width}, std::move(rows));
}

/// exp of the mean per-row KL divergence between each probability row and
/// the marginal (row mean). Probabilities are clamped at 1e-12 inside the
/// logs only; zero entries contribute zero. Always within [1, K].
inline double inception_score_rows(const Tensor& probs) {
  if (probs.rank() != 2) throw std::invalid_argument("inception_score: expects [n,K] rows");
  const int64_t n = probs.dim(0), k = probs.dim(1);
  if (n < 2) throw std::invalid_argument("inception_score: need at least 2 samples");
  std::vector<double> marginal(static_cast<size_t>(k), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j)
      marginal[static_cast<size_t>(j)] += probs.data()[static_cast<size_t>(i * k + j)];
  for (auto& m : marginal) m /= static_cast<double>(n);

  double mean_kl = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double kl = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double p = probs.data()[static_cast<size_t>(i * k + j)];
      if (p <= 0.0) continue;
      kl += p * (std::log(std::max(p, 1e-12)) - std::log(std::max(marginal[static_cast<size_t>(j)], 1e-12)));
    }
    mean_kl += kl;
  }
  return std::exp(mean_kl / static_cast<double>(n));
}

/// Inception Score with the victim standing in for Inception-V3: the
/// model's own softmax outputs are the conditional distribution p(y|x).
inline double inception_score(const Network& model, const Tensor& samples) {
  if (samples.dim(0) < 2) throw std::invalid_argument("inception_score: need at least 2 samples");
  std::vector<double> rows;
  detail::for_each_batch(samples.dim(0), detail::kEvalBatch, [&](const std::vector<int64_t>& idx) {
    Tensor p = softmax_rows(model.forward(take_rows(samples, idx)));
    rows.insert(rows.end(), p.data().begin(), p.data().end());
  });
  return inception_score_rows(Tensor({samples.dim(0), model.class_count()}, std::move(rows)));
}

/// Mean and sample covariance (1/(n-1), symmetrized) of an [n,d] feature
/// matrix, treated as a Gaussian fit.
struct GaussianSummary {
  std::vector<double> mu;
  std::vector<double> sigma;  // row-major d x d, symmetric
  int64_t dim() const { return static_cast<int64_t>(mu.size()); }
};

inline GaussianSummary gaussian_summary(const Tensor& features) {
  if (features.rank() != 2) throw std::invalid_argument("gaussian_summary: expects [n,d]");
  const int64_t n = features.dim(0), d = features.dim(1);
  if (n < 2) throw std::invalid_argument("gaussian_summary: need at least 2 rows");
  GaussianSummary g;
  g.mu.assign(static_cast<size_t>(d), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      g.mu[static_cast<size_t>(j)] += features.data()[static_cast<size_t>(i * d + j)];
  for (auto& m : g.mu) m /= static_cast<double>(n);

  g.sigma.assign(static_cast<size_t>(d * d), 0.0);
  std::vector<double> centered(static_cast<size_t>(d));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j)
      centered[static_cast<size_t>(j)] =
          features.data()[static_cast<size_t>(i * d + j)] - g.mu[static_cast<size_t>(j)];
    for (int64_t r = 0; r < d; ++r) {
      if (centered[static_cast<size_t>(r)] == 0.0) continue;
      for (int64_t c = 0; c < d; ++c)
        g.sigma[static_cast<size_t>(r * d + c)] +=
            centered[static_cast<size_t>(r)] * centered[static_cast<size_t>(c)];
    }
  }
  for (auto& s : g.sigma) s /= static_cast<double>(n - 1);
  for (int64_t r = 0; r < d; ++r)
    for (int64_t c = r + 1; c < d; ++c) {
      const double avg = 0.5 * (g.sigma[static_cast<size_t>(r * d + c)] +
                                g.sigma[static_cast<size_t>(c * d + r)]);
      g.sigma[static_cast<size_t>(r * d + c)] = avg;
      g.sigma[static_cast<size_t>(c * d + r)] = avg;
    }
  return g;
}

/// Frechet distance between two Gaussian fits:
///   ||mu_a - mu_b||^2 + Tr(Sigma_a) + Tr(Sigma_b) - 2 Tr((Sigma_a Sigma_b)^{1/2})
/// The cross term uses the congruence form Tr((sqrt(Sigma_a) Sigma_b
/// sqrt(Sigma_a))^{1/2}) so everything stays symmetric; eigenvalues that
/// dip slightly negative from rounding clamp to zero.
inline double fid(const GaussianSummary& a, const GaussianSummary& b) {
  const int64_t d = a.dim();
  if (b.dim() != d) throw std::invalid_argument("fid: dimension mismatch");
  double mean_sq = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    const double diff = a.mu[static_cast<size_t>(i)] - b.mu[static_cast<size_t>(i)];
    mean_sq += diff * diff;
  }
  double tr_a = 0.0, tr_b = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    tr_a += a.sigma[static_cast<size_t>(i * d + i)];
    tr_b += b.sigma[static_cast<size_t>(i * d + i)];
  }

  const auto root_a = detail::sym_sqrt(a.sigma, d);
  auto inner = detail::mat_mul(detail::mat_mul(root_a, b.sigma, d), root_a, d);
  for (int64_t r = 0; r < d; ++r)
    for (int64_t c = r + 1; c < d; ++c) {
      const double avg = 0.5 * (inner[static_cast<size_t>(r * d + c)] +
                                inner[static_cast<size_t>(c * d + r)]);
      inner[static_cast<size_t>(r * d + c)] = avg;
      inner[static_cast<size_t>(c * d + r)] = avg;
    }
  std::vector<double> eigvals, v;
  detail::jacobi_eigen(std::move(inner), d, eigvals, v);
  double tr_cross = 0.0;
  for (double e : eigvals) tr_cross += std::sqrt(std::max(e, 0.0));

  return mean_sq + tr_a + tr_b - 2.0 * tr_cross;
}

}  // namespace eslab
