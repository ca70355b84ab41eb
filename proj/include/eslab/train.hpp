#pragma once

#include <limits>
#include <numeric>
#include <vector>

#include "eslab/dataset.hpp"
#include "eslab/metrics.hpp"
#include "eslab/network.hpp"
#include "eslab/optim.hpp"

namespace eslab {

struct TrainConfig {
  int epochs = 30;
  int64_t batch = 64;
  double lr = 1e-3;
  uint64_t seed = 0;
};

struct TrainReport {
  double best_test_accuracy = 0.0;
  double final_test_accuracy = 0.0;
  std::vector<double> epoch_loss;  // mean cross entropy per epoch
};

/// Supervised cross-entropy training with Adam. Tracks test accuracy per
/// epoch and leaves the highest-test-accuracy parameters in `net` on
/// return; accuracy ties go to the epoch with the lower training loss, so
/// a saturated run keeps its most converged snapshot.
inline TrainReport train_supervised(Network& net, const LabeledDataset& train,
                                    const LabeledDataset& test, const TrainConfig& cfg) {
  if (train.size() == 0) throw std::invalid_argument("train_supervised: empty training set");
  TrainReport report;
  Adam opt(net.params(), cfg.lr);
  Tensor targets = one_hot(train.labels, net.class_count());
  std::vector<int64_t> order(static_cast<size_t>(train.size()));
  std::iota(order.begin(), order.end(), 0);
  Network best;
  double best_loss = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, 0x7e0000 + static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start < train.size(); start += cfg.batch) {
      const int64_t count = std::min<int64_t>(cfg.batch, train.size() - start);
      std::vector<int64_t> idx(order.begin() + start, order.begin() + start + count);
      Tape tape;
      TapeScope scope(tape);
      Tensor loss = softmax_cross_entropy(net.forward(take_rows(train.inputs, idx)),
                                          take_rows(targets, idx));
      loss_sum += loss.item();
      ++batches;
      tape.backward(loss);
      opt.step();
    }
    const double epoch_loss = loss_sum / static_cast<double>(batches);
    report.epoch_loss.push_back(epoch_loss);
    const double acc = accuracy(net, test);
    if (acc > report.best_test_accuracy ||
        (acc == report.best_test_accuracy && epoch_loss < best_loss)) {
      report.best_test_accuracy = acc;
      best_loss = epoch_loss;
      best = net.clone();
    }
  }
  report.final_test_accuracy = accuracy(net, test);
  if (best.defined()) net.load_params_from(best);
  return report;
}

}  // namespace eslab
