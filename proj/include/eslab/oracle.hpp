#pragma once

#include <cmath>
#include <functional>
#include <mutex>
#include <optional>
#include <vector>

#include "eslab/common.hpp"
#include "eslab/network.hpp"
#include "eslab/tensor.hpp"

namespace eslab {

struct DefenseConfig {
  std::optional<int> rounding_decimals;  // r >= 0, half away from zero
  std::optional<int> topk;               // keep K' largest entries
  bool detection_enabled = false;
};

/// Rounds each entry to r decimals, half away from zero. No
/// renormalization: the served vector is exactly the rounded one.
inline PredictionVector round_prediction(const PredictionVector& y, int r) {
  if (r < 0) throw std::invalid_argument("round_prediction: r must be >= 0");
  const double scale = std::pow(10.0, r);
  PredictionVector out(y.size());
  for (size_t i = 0; i < y.size(); ++i) out[i] = std::round(y[i] * scale) / scale;
  return out;
}

/// Keeps the K' largest entries and zeroes the rest. Ties go to the lower
/// class index.
inline PredictionVector topk_prediction(const PredictionVector& y, int kprime) {
  const int k = static_cast<int>(y.size());
  if (kprime < 1 || kprime > k)
    throw std::invalid_argument("topk_prediction: K' must be in [1, K]");
  std::vector<int> idx(y.size());
  for (int i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return y[static_cast<size_t>(a)] > y[static_cast<size_t>(b)];
  });
  PredictionVector out(y.size(), 0.0);
  for (int i = 0; i < kprime; ++i) {
    int j = idx[static_cast<size_t>(i)];
    out[static_cast<size_t>(j)] = y[static_cast<size_t>(j)];
  }
  return out;
}

/// Adversary-side reconstruction of a top-K' response: the missing mass is
/// spread equally over the zeroed classes, so the result sums to 1.
inline PredictionVector fillup_topk(const PredictionVector& y, int kprime) {
  const int k = static_cast<int>(y.size());
  if (kprime < 1 || kprime > k) throw std::invalid_argument("fillup_topk: K' must be in [1, K]");
  double kept = 0.0;
  int zeros = 0;
  for (double v : y) {
    kept += v;
    if (v == 0.0) ++zeros;
  }
  if (kept > 1.0 + 1e-6) throw std::domain_error("fillup_topk: kept mass exceeds 1");
  if (zeros == 0) return y;
  const double fill = std::max(0.0, 1.0 - kept) / zeros;
  PredictionVector out = y;
  for (double& v : out)
    if (v == 0.0) v = fill;
  return out;
}

/// Fixed defense order: top-K first, then rounding.
inline PredictionVector apply_defenses(const PredictionVector& y, const DefenseConfig& d) {
  PredictionVector out = y;
  if (d.topk) out = topk_prediction(out, *d.topk);
  if (d.rounding_decimals) out = round_prediction(out, *d.rounding_decimals);
  return out;
}

inline double estimate_cost(int64_t query_count, double price_per_1k) {
  return static_cast<double>(query_count) / 1000.0 * price_per_1k;
}

/// The MLaaS boundary. Answers batches with defended probability vectors,
/// counts every served sample, and refuses batches that would cross the
/// budget (leaving the counter untouched). Thread safe: calls are
/// serialized, so detector ingestion sees arrival order.
class OracleSession {
 public:
  using DetectionHook = std::function<void(const Tensor& x, const std::vector<int>& victim_class)>;

  explicit OracleSession(Network victim, DefenseConfig defense = {},
                         std::optional<int64_t> budget = {}, double price_per_1k = 0.25)
      : victim_(std::move(victim)),
        defense_(defense),
        budget_(budget),
        price_per_1k_(price_per_1k) {
    if (budget_ && *budget_ < 0) throw std::invalid_argument("oracle: negative budget");
  }

  /// Defended predictions for a batch. Counts n queries or throws
  /// BudgetExhaustedError without counting any.
  std::vector<PredictionVector> query(const Tensor& x) {
    std::lock_guard<std::mutex> lock(mu_);
    const int64_t n = check_and_count(x);
    Tensor probs = raw_probs(x);
    const int64_t k = victim_.class_count();
    std::vector<PredictionVector> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      PredictionVector row(probs.data().begin() + i * k, probs.data().begin() + (i + 1) * k);
      out.push_back(apply_defenses(row, defense_));
    }
    if (defense_.detection_enabled && detection_hook_) detection_hook_(x, argmax_rows(probs));
    return out;
  }

  /// Same as query() but packed as a [n, K] tensor.
  Tensor query_tensor(const Tensor& x) {
    auto rows = query(x);
    const int64_t k = victim_.class_count();
    std::vector<double> flat;
    flat.reserve(rows.size() * static_cast<size_t>(k));
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor({static_cast<int64_t>(rows.size()), k}, std::move(flat));
  }

  int64_t query_count() const {
    std::lock_guard<std::mutex> lock(mu_);
    return query_count_;
  }
  std::optional<int64_t> budget() const { return budget_; }
  double price_per_1k() const { return price_per_1k_; }
  double estimate_cost() const { return eslab::estimate_cost(query_count(), price_per_1k_); }

  const Network& victim() const { return victim_; }
  const DefenseConfig& defense() const { return defense_; }
  void set_detection_hook(DetectionHook hook) { detection_hook_ = std::move(hook); }

 private:
  int64_t check_and_count(const Tensor& x) {
    if (x.rank() < 2 || x.dim(0) <= 0)
      throw std::invalid_argument("oracle query: expected a non-empty batch");
    const int64_t n = x.dim(0);
    if (budget_ && query_count_ + n > *budget_)
      throw BudgetExhaustedError("query budget exhausted: " + std::to_string(query_count_) +
                                 " used of " + std::to_string(*budget_) + ", batch of " +
                                 std::to_string(n) + " refused");
    // validate shape before counting so refused batches cost nothing
    Shape sample(x.shape().begin() + 1, x.shape().end());
    if (sample != victim_.input_shape())
      throw std::invalid_argument("oracle query: batch shape " + shape_str(x.shape()) +
                                  " does not match victim input " +
                                  shape_str(victim_.input_shape()));
    query_count_ += n;
    return n;
  }

  Tensor raw_probs(const Tensor& x) const {
    ParamFreeze freeze(victim_);  // never tape-recorded, params never touched
    return softmax_rows(victim_.forward(x));
  }

  Network victim_;
  DefenseConfig defense_;
  std::optional<int64_t> budget_;
  double price_per_1k_ = 0.25;
  int64_t query_count_ = 0;
  DetectionHook detection_hook_;
  mutable std::mutex mu_;
};

}  // namespace eslab
