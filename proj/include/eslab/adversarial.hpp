#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "eslab/metrics.hpp"
#include "eslab/network.hpp"
#include "eslab/oracle.hpp"

namespace eslab {

struct PgdConfig {
  double epsilon = 0.1;    // l-inf radius around each input
  double step_size = 0.01;
  int iterations = 40;
  double clip_min = -1.0;  // valid input range
  double clip_max = 1.0;
  bool random_start = false;  // default starts at x itself
  uint64_t random_start_seed = 0;

  void validate() const {
    if (epsilon < 0.0) throw std::invalid_argument("pgd: epsilon must be >= 0");
    if (iterations < 0) throw std::invalid_argument("pgd: iterations must be >= 0");
    if (!(clip_min < clip_max)) throw std::invalid_argument("pgd: clip_min must be < clip_max");
  }
};

/// Untargeted l-inf PGD: ascend the cross-entropy of the true label by
/// signed input gradients, projecting onto the epsilon ball around x and
/// the valid input box after every step. Gradients flow through the
/// inputs only; model parameters stay off the tape.
inline Tensor pgd_attack(const Network& model, const Tensor& x, const std::vector<int>& labels,
                         const PgdConfig& cfg) {
  cfg.validate();
  if (x.dim(0) != static_cast<int64_t>(labels.size()))
    throw std::invalid_argument("pgd: one label per input row");
  Tensor targets = one_hot(labels, model.class_count());
  Tensor adv = x.clone();
  if (cfg.random_start && cfg.epsilon > 0.0) {
    Rng rng(cfg.random_start_seed);
    for (auto& v : adv.data()) v += rng.uniform(-cfg.epsilon, cfg.epsilon);
  }
  auto project = [&] {
    for (size_t i = 0; i < adv.data().size(); ++i) {
      const double lo = std::max(x.data()[i] - cfg.epsilon, cfg.clip_min);
      const double hi = std::min(x.data()[i] + cfg.epsilon, cfg.clip_max);
      adv.data()[i] = std::min(std::max(adv.data()[i], lo), hi);
    }
  };
  project();

  ParamFreeze freeze(model);
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    Tensor xt = adv.clone().set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = softmax_cross_entropy(model.forward(xt), targets);
    tape.backward(loss);
    const std::vector<double>& g = xt.grad();
    for (size_t i = 0; i < adv.data().size(); ++i) {
      const double gi = g[i];
      adv.data()[i] += cfg.step_size * (gi > 0.0 ? 1.0 : gi < 0.0 ? -1.0 : 0.0);
    }
    project();
  }
  return adv;
}

/// Untargeted success: among the samples the model classified correctly
/// before perturbation, the fraction whose adversarial argmax differs from
/// the true label. No originally-correct samples means nothing to attack,
/// reported as 0.
inline double attack_success_rate(const Network& model, const Tensor& x, const Tensor& adv,
                                  const std::vector<int>& labels) {
  if (x.dim(0) != adv.dim(0) || x.dim(0) != static_cast<int64_t>(labels.size()))
    throw std::invalid_argument("attack_success_rate: mismatched rows");
  auto before = predict(model, x);
  auto after = predict(model, adv);
  int64_t base = 0, flipped = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (before[i] != labels[i]) continue;
    ++base;
    if (after[i] != labels[i]) ++flipped;
  }
  return base == 0 ? 0.0 : static_cast<double>(flipped) / static_cast<double>(base);
}

struct TransferReport {
  double white_sub = 0.0;     // success on the substitute that crafted them
  double black_victim = 0.0;  // transfer success on the victim, via the oracle
  int64_t crafted = 0;
};

/// Craft adversarial examples white-box on the substitute, then measure
/// how many transfer to the victim behind the oracle. Victim-side argmax
/// comes from the defended answers, so active defenses shape the
/// black-box rate. Oracle budget applies to both evaluation passes.
inline TransferReport transfer_eval(const Network& substitute, OracleSession& oracle,
                                    const LabeledDataset& test, const PgdConfig& cfg) {
  if (test.size() == 0) throw std::invalid_argument("transfer_eval: empty test set");
  Tensor adv = pgd_attack(substitute, test.inputs, test.labels, cfg);

  TransferReport report;
  report.crafted = test.size();
  report.white_sub = attack_success_rate(substitute, test.inputs, adv, test.labels);

  auto before = argmax_rows(oracle.query_tensor(test.inputs));
  auto after = argmax_rows(oracle.query_tensor(adv));
  int64_t base = 0, flipped = 0;
  for (size_t i = 0; i < before.size(); ++i) {
    if (before[i] != test.labels[i]) continue;
    ++base;
    if (after[i] != test.labels[i]) ++flipped;
  }
  report.black_victim = base == 0 ? 0.0 : static_cast<double>(flipped) / static_cast<double>(base);
  return report;
}

}  // namespace eslab
