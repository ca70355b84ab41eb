#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "eslab/tensor.hpp"

namespace eslab {

namespace detail {

// Acklam's rational approximation to the standard normal quantile
// function, good to ~1.2e-9 relative error over (0,1).
inline double inv_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("inv_normal_cdf: p must be in (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > phigh) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5, r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace detail

/// Shapiro-Francia style normality statistic: squared correlation between
/// the sorted sample and Blom-scored Gaussian quantiles. 1 for perfectly
/// Gaussian-shaped data; degenerate (zero-variance) samples score 0.
inline double evaluate_normality(std::vector<double> xs) {
  const size_t n = xs.size();
  if (n < 3) throw std::invalid_argument("evaluate_normality: need at least 3 values");
  std::sort(xs.begin(), xs.end());
  double mean = 0.0;
  for (double v : xs) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : xs) ss += (v - mean) * (v - mean);
  if (ss <= 0.0) return 0.0;

  double cross = 0.0, mm = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double m = detail::inv_normal_cdf((static_cast<double>(i + 1) - 0.375) /
                                            (static_cast<double>(n) + 0.25));
    cross += m * xs[i];
    mm += m * m;
  }
  return (cross * cross) / (mm * ss);
}

struct DetectorConfig {
  double delta = 0.9;        // flag when normality drops below this
  int64_t min_history = 30;  // distances required before evaluation counts
};

struct DetectionVerdict {
  bool indeterminate = true;  // too little history to judge
  bool flagged = false;
  double normality = std::numeric_limits<double>::quiet_NaN();
};

/// Query-distribution anomaly detector in the spirit of PRADA: tracks the
/// l2 distance from each query to the nearest previously accepted query of
/// the same predicted class, and flags a client whose distance history
/// stops looking Gaussian. The published method leaves its bookkeeping
/// constants unstated, so the acceptance rule here (keep a query when its
/// distance exceeds that class's mean minus one stddev) is this library's
/// own reconstruction.
class Detector {
 public:
  explicit Detector(int64_t class_count, DetectorConfig cfg = {})
      : cfg_(cfg), classes_(static_cast<size_t>(class_count)) {
    if (class_count < 1) throw std::invalid_argument("detector: need at least one class");
    if (!(cfg.delta > 0.0 && cfg.delta < 1.0))
      throw std::invalid_argument("detector: delta must be in (0,1)");
  }

  /// Feed one query and the class the victim assigned it.
  void ingest(const std::vector<double>& x, int predicted_class) {
    auto& cls = classes_.at(static_cast<size_t>(predicted_class));
    if (cls.accepted.empty()) {  // first of its class: keep it, record nothing
      cls.accepted.push_back(x);
      return;
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& kept : cls.accepted) {
      if (kept.size() != x.size()) throw std::invalid_argument("detector: query width changed");
      double d2 = 0.0;
      for (size_t i = 0; i < x.size(); ++i) {
        const double diff = x[i] - kept[i];
        d2 += diff * diff;
      }
      best = std::min(best, std::sqrt(d2));
    }
    // accept when the distance clears mean - stddev of this class's past
    // distances; with fewer than two on record, accept unconditionally
    bool accept = true;
    if (cls.count >= 2) {
      const double mean = cls.sum / static_cast<double>(cls.count);
      const double var =
          std::max(0.0, cls.sum_sq / static_cast<double>(cls.count) - mean * mean);
      accept = best > mean - std::sqrt(var);
    }
    history_.push_back(best);
    cls.sum += best;
    cls.sum_sq += best * best;
    cls.count += 1;
    if (accept) cls.accepted.push_back(x);
  }

  void ingest_rows(const Tensor& rows, const std::vector<int>& predicted) {
    if (rows.dim(0) != static_cast<int64_t>(predicted.size()))
      throw std::invalid_argument("detector: one class per row");
    const Tensor flat = flatten(rows);
    const int64_t d = flat.dim(1);
    for (int64_t i = 0; i < flat.dim(0); ++i) {
      std::vector<double> x(flat.data().begin() + i * d, flat.data().begin() + (i + 1) * d);
      ingest(x, predicted[static_cast<size_t>(i)]);
    }
  }

  /// Judge the distance history; the flag is sticky once raised.
  DetectionVerdict evaluate() {
    DetectionVerdict v;
    if (static_cast<int64_t>(history_.size()) < cfg_.min_history) {
      v.flagged = flagged_;  // a past flag never clears
      return v;
    }
    v.indeterminate = false;
    v.normality = evaluate_normality(history_);
    if (v.normality < cfg_.delta) flagged_ = true;
    v.flagged = flagged_;
    return v;
  }

  bool flagged() const { return flagged_; }
  const std::vector<double>& distances() const { return history_; }
  int64_t accepted_count(int cls) const {
    return static_cast<int64_t>(classes_.at(static_cast<size_t>(cls)).accepted.size());
  }
  int64_t queries_seen() const {
    int64_t n = 0;
    for (const auto& c : classes_) n += c.count + (c.accepted.empty() ? 0 : 1);
    return n;
  }
  void reset() {
    for (auto& c : classes_) c = {};
    history_.clear();
    flagged_ = false;
  }

 private:
  struct ClassState {
    std::vector<std::vector<double>> accepted;
    double sum = 0.0;
    double sum_sq = 0.0;
    int64_t count = 0;  // recorded distances for this class
  };
  DetectorConfig cfg_;
  std::vector<ClassState> classes_;
  std::vector<double> history_;
  bool flagged_ = false;
};

struct DetectionReport {
  int64_t queries = 0;
  double seconds = 0.0;
  double queries_per_second = 0.0;
  DetectionVerdict verdict;
  int64_t first_flag_query = -1;  // -1 when never flagged
};

/// Replay a recorded query stream through a detector in arrival order,
/// evaluating every `eval_every` queries and at the end. An undefined
/// tensor stands for an empty stream.
inline DetectionReport replay_attack_stream(Detector& detector, const Tensor& queries,
                                            const std::vector<int>& predicted,
                                            int64_t eval_every = 256) {
  const int64_t n = queries.defined() ? queries.dim(0) : 0;
  if (n != static_cast<int64_t>(predicted.size()))
    throw std::invalid_argument("replay: one class per query");
  if (eval_every < 1) throw std::invalid_argument("replay: eval_every must be positive");
  DetectionReport report;
  report.queries = n;
  const auto start = std::chrono::steady_clock::now();
  const Tensor flat = n == 0 ? Tensor() : flatten(queries);
  const int64_t d = n == 0 ? 0 : flat.dim(1);
  for (int64_t i = 0; i < report.queries; ++i) {
    std::vector<double> x(flat.data().begin() + i * d, flat.data().begin() + (i + 1) * d);
    detector.ingest(x, predicted[static_cast<size_t>(i)]);
    if ((i + 1) % eval_every == 0) {
      auto v = detector.evaluate();
      if (v.flagged && report.first_flag_query < 0) report.first_flag_query = i + 1;
    }
  }
  report.verdict = detector.evaluate();
  if (report.verdict.flagged && report.first_flag_query < 0)
    report.first_flag_query = report.queries;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.queries_per_second =
      report.seconds > 0.0 ? static_cast<double>(report.queries) / report.seconds : 0.0;
  return report;
}

}  // namespace eslab
