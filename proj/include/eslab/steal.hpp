#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <vector>

#include "eslab/dataset.hpp"
#include "eslab/metrics.hpp"
#include "eslab/network.hpp"
#include "eslab/optim.hpp"
#include "eslab/oracle.hpp"
#include "eslab/synthesis.hpp"

namespace eslab {

struct StealConfig {
  int64_t stealing_epochs = 50;  // N: outer query/train/synthesize rounds
  int train_epochs = 10;         // M: substitute training epochs per round
  SynthesisConfig synthesis;
  double kd_lr = 1e-3;
  int64_t kd_batch = 64;
  uint64_t seed = 0;
  bool augment_enabled = false;        // augmented copies inherit labels, cost no queries
  AugmentOptions augment_options;
  bool replay_all = false;             // train on the union of all labeled pools
  std::optional<int> fillup_k;         // reconstruct top-K' answers before training

  void validate() const {
    if (stealing_epochs < 1) throw std::invalid_argument("steal: N must be >= 1");
    if (train_epochs < 1) throw std::invalid_argument("steal: M must be >= 1");
    synthesis.validate();
  }
};

struct StealEpochRecord {
  int64_t epoch = 0;       // t, 1-based
  double kd_loss = 0.0;    // mean distillation loss after the round's training
  double accuracy = std::numeric_limits<double>::quiet_NaN();  // only with a test set
  int64_t queries = 0;     // cumulative oracle count after the round
  double seconds = 0.0;
};

struct StealTrace {
  std::vector<StealEpochRecord> records;
  bool budget_exhausted = false;  // run stopped early, records are partial
  int64_t best_epoch = -1;        // only with a test set
  double best_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct StealResult {
  Network model;       // substitute after the last completed round
  Network best_model;  // highest test accuracy round (with a test set)
  StealTrace trace;
  SoftDataset first_pool;  // the initial Gaussian pool, labeled
  SoftDataset last_pool;   // the final synthesized pool (inputs only)
};

// Seed derivations, public so equivalence tests can replay the exact run.
inline uint64_t steal_noise_seed(uint64_t seed, int64_t t) {
  return mix_seed(seed, 0xd000 + static_cast<uint64_t>(t));
}
inline uint64_t steal_estep_seed(uint64_t seed, int64_t t) {
  return mix_seed(seed, 0xe000 + static_cast<uint64_t>(t));
}
inline uint64_t steal_augment_seed(uint64_t seed, int64_t t) {
  return mix_seed(seed, 0xa000 + static_cast<uint64_t>(t));
}
inline uint64_t steal_synthesis_seed(uint64_t seed, int64_t t) {
  return mix_seed(seed, 0x5000 + static_cast<uint64_t>(t));
}

/// Attacker-side repair of defended answers: negatives clamp to 0 and each
/// row is renormalized to sum 1; a row with no mass at all (say, rounded
/// to all zeros) becomes uniform.
inline Tensor normalize_prediction_rows(const Tensor& rows) {
  if (rows.rank() != 2) throw std::invalid_argument("normalize_prediction_rows: expects [n,K]");
  const int64_t n = rows.dim(0), k = rows.dim(1);
  std::vector<double> out(rows.data());
  for (int64_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      double& v = out[static_cast<size_t>(i * k + j)];
      if (v < 0.0) v = 0.0;
      sum += v;
    }
    if (sum <= 1e-12) {
      for (int64_t j = 0; j < k; ++j) out[static_cast<size_t>(i * k + j)] = 1.0 / static_cast<double>(k);
    } else {
      for (int64_t j = 0; j < k; ++j) out[static_cast<size_t>(i * k + j)] /= sum;
    }
  }
  return Tensor(rows.shape(), std::move(out));
}

/// fillup_topk applied per row of a [n,K] tensor.
inline Tensor fillup_rows(const Tensor& rows, int kprime) {
  const int64_t n = rows.dim(0), k = rows.dim(1);
  std::vector<double> out;
  out.reserve(rows.data().size());
  for (int64_t i = 0; i < n; ++i) {
    PredictionVector row(rows.data().begin() + i * k, rows.data().begin() + (i + 1) * k);
    auto filled = fillup_topk(row, kprime);
    out.insert(out.end(), filled.begin(), filled.end());
  }
  return Tensor(rows.shape(), std::move(out));
}

struct EStepReport {
  double initial_loss = 0.0;  // mean CE over the pool before training
  double final_loss = 0.0;    // and after
};

/// Knowledge distillation on an already-labeled pool: M epochs of
/// minibatch Adam on mean CE(f_s(x), y). Labels must be on the simplex
/// (run the oracle answers through fill-up/normalization first).
inline EStepReport e_step(Network& f_s, const SoftDataset& d_syn, int m_epochs, double lr,
                          int64_t batch, uint64_t seed) {
  if (d_syn.size() == 0) throw std::invalid_argument("e_step: empty pool");
  if (!d_syn.soft_labels.defined()) throw std::logic_error("e_step: pool has no labels yet");
  if (m_epochs < 0) throw std::invalid_argument("e_step: M must be non-negative");
  if (batch <= 0) throw std::invalid_argument("e_step: batch must be positive");
  d_syn.validate();

  auto eval_loss = [&] {
    double total = 0.0;
    int64_t batches = 0;
    detail::for_each_batch(d_syn.size(), detail::kEvalBatch, [&](const std::vector<int64_t>& idx) {
      total += softmax_cross_entropy(f_s.forward(take_rows(d_syn.inputs, idx)),
                                     take_rows(d_syn.soft_labels, idx))
                   .item() *
               static_cast<double>(idx.size());
      batches += static_cast<int64_t>(idx.size());
    });
    return total / static_cast<double>(batches);
  };

  EStepReport report;
  report.initial_loss = eval_loss();
  Adam opt(f_s.params(), lr);
  std::vector<int64_t> order(static_cast<size_t>(d_syn.size()));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < m_epochs; ++epoch) {
    Rng rng(mix_seed(seed, 0xe57e9 + static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    for (int64_t start = 0; start < d_syn.size(); start += batch) {
      const int64_t count = std::min<int64_t>(batch, d_syn.size() - start);
      std::vector<int64_t> idx(order.begin() + start, order.begin() + start + count);
      Tape tape;
      TapeScope scope(tape);
      Tensor loss = softmax_cross_entropy(f_s.forward(take_rows(d_syn.inputs, idx)),
                                          take_rows(d_syn.soft_labels, idx));
      if (!std::isfinite(loss.item()))
        throw std::runtime_error("e_step: non-finite distillation loss at epoch " +
                                 std::to_string(epoch));
      tape.backward(loss);
      opt.step();
    }
  }
  report.final_loss = m_epochs == 0 ? report.initial_loss : eval_loss();
  return report;
}

/// Carries the generator between stealing epochs (DNN-SYN persists G by
/// default; a config flag re-initializes it each epoch).
struct SynthesisState {
  GeneratorNetwork generator;
};

/// One S-step: a fresh pool of S unlabeled inputs from the configured
/// synthesizer.
inline SoftDataset s_step(const Network& f_s, const SynthesisConfig& cfg, uint64_t seed,
                          int64_t epoch_tag, SynthesisState* state = nullptr) {
  cfg.validate();
  switch (cfg.mode) {
    case SynthesisMode::opt_syn:
      return opt_syn_epoch(f_s, cfg.samples_per_epoch, cfg.opt_iterations, cfg.synth_lr, seed,
                           epoch_tag);
    case SynthesisMode::random_noise:
      return noise_epoch(f_s.input_shape(), cfg.samples_per_epoch, seed, epoch_tag);
    case SynthesisMode::dnn_syn: {
      SynthesisState local;
      SynthesisState& st = state ? *state : local;
      if (!st.generator.defined() || cfg.reinit_generator)
        st.generator = GeneratorNetwork(cfg.latent_dim, f_s.class_count(), f_s.input_shape(),
                                        cfg.generator_hidden, mix_seed(seed, 0x6e40));
      Rng rng(mix_seed(seed, 0x6e41));
      Adam opt(st.generator.params(), cfg.synth_lr);
      const int64_t b = cfg.generator_batch;
      for (int step = 0; step < cfg.generator_steps; ++step) {
        Tensor z1 = Tensor::randn({b, cfg.latent_dim}, rng);
        Tensor z2 = Tensor::randn({b, cfg.latent_dim}, rng);
        std::vector<int> labels(static_cast<size_t>(b));
        for (auto& l : labels) l = static_cast<int>(rng.uniform_int(0, f_s.class_count() - 1));
        dnn_syn_step(st.generator, f_s, z1, z2, one_hot(labels, f_s.class_count()), cfg.lambda_ms,
                     opt);
      }
      Tensor z = Tensor::randn({cfg.samples_per_epoch, cfg.latent_dim}, rng);
      std::vector<int> labels(static_cast<size_t>(cfg.samples_per_epoch));
      for (auto& l : labels) l = static_cast<int>(rng.uniform_int(0, f_s.class_count() - 1));
      SoftDataset out;
      out.inputs = st.generator.generate(z, one_hot(labels, f_s.class_count()));
      out.epoch_tag = epoch_tag;
      return out;
    }
  }
  throw std::logic_error("unknown synthesis mode");
}

namespace detail {

template <class Oracle>
Tensor label_pool(Oracle& oracle, const Tensor& inputs, const std::optional<int>& fillup_k) {
  Tensor answers = oracle.query_tensor(inputs);
  if (fillup_k) answers = fillup_rows(answers, *fillup_k);
  return normalize_prediction_rows(answers);
}

}  // namespace detail

/// The full iterative attack: label the current pool through the oracle,
/// distill the substitute on it, synthesize the next pool from the updated
/// substitute, repeat N times. Budget exhaustion stops the loop and leaves
/// a partial trace with the flag set instead of throwing. The oracle only
/// needs query_tensor() and query_count(), so a remote session works too.
template <class Oracle>
StealResult run_es_attack(Oracle& oracle, Network substitute, const StealConfig& cfg,
                          const LabeledDataset* test = nullptr) {
  cfg.validate();
  StealResult result;
  Network f_s = std::move(substitute);
  SynthesisState synth_state;
  SoftDataset pool = noise_epoch(f_s.input_shape(), cfg.synthesis.samples_per_epoch,
                                 steal_noise_seed(cfg.seed, 0), 0);
  std::vector<SoftDataset> history;
  for (int64_t t = 1; t <= cfg.stealing_epochs; ++t) {
    const auto start = std::chrono::steady_clock::now();
    try {
      pool.soft_labels = detail::label_pool(oracle, pool.inputs, cfg.fillup_k);
    } catch (const BudgetExhaustedError&) {
      result.trace.budget_exhausted = true;
      break;
    }
    if (t == 1) result.first_pool = pool;

    SoftDataset train_set = pool;
    if (cfg.augment_enabled) {
      Tensor copies = augment(pool.inputs, steal_augment_seed(cfg.seed, t), cfg.augment_options);
      train_set.inputs = concat_rows(pool.inputs, copies);
      train_set.soft_labels = concat_rows(pool.soft_labels, pool.soft_labels);
    }
    if (cfg.replay_all) {
      history.push_back(train_set);
      SoftDataset all = history.front();
      for (size_t i = 1; i < history.size(); ++i) {
        all.inputs = concat_rows(all.inputs, history[i].inputs);
        all.soft_labels = concat_rows(all.soft_labels, history[i].soft_labels);
      }
      train_set = all;
    }

    auto report = e_step(f_s, train_set, cfg.train_epochs, cfg.kd_lr, cfg.kd_batch,
                         steal_estep_seed(cfg.seed, t));

    StealEpochRecord rec;
    rec.epoch = t;
    rec.kd_loss = report.final_loss;
    rec.queries = oracle.query_count();
    if (test) {
      rec.accuracy = accuracy(f_s, *test);
      if (result.trace.best_epoch < 0 || rec.accuracy > result.trace.best_accuracy) {
        result.trace.best_accuracy = rec.accuracy;
        result.trace.best_epoch = t;
        result.best_model = f_s.clone();
      }
    }

    // synthesize the next pool from the freshly trained substitute; the
    // last round's pool is kept for synthetic-quality metrics
    pool = s_step(f_s, cfg.synthesis, steal_synthesis_seed(cfg.seed, t), t, &synth_state);

    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.trace.records.push_back(rec);
  }
  result.last_pool = pool;
  result.model = std::move(f_s);
  return result;
}

/// One line per completed round: epoch, kd_loss, accuracy, queries, seconds.
inline void save_trace_csv(const StealTrace& trace, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "epoch,kd_loss,accuracy,queries,seconds\n";
  for (const auto& r : trace.records)
    os << r.epoch << ',' << format_double(r.kd_loss) << ',' << format_double(r.accuracy) << ','
       << r.queries << ',' << format_double(r.seconds) << '\n';
  if (!os) throw std::runtime_error("write failed: " + path);
}

enum class BaselineKind { random, auxiliary };

struct BaselineConfig {
  int64_t pool_size = 256;  // random source only
  int64_t epochs = 50;      // trace records, M training epochs each
  int train_epochs = 10;
  double kd_lr = 1e-3;
  int64_t kd_batch = 64;
  uint64_t seed = 0;
};

/// Baseline attacks: one fixed query set (Gaussian noise or an auxiliary
/// dataset's inputs), labeled once, then distilled for the same total
/// training budget as the ES run it is compared against.
template <class Oracle>
StealResult baseline_steal(Oracle& oracle, Network substitute, BaselineKind kind,
                           const BaselineConfig& cfg, const LabeledDataset* test = nullptr,
                           const Tensor& aux_inputs = Tensor()) {
  if (cfg.epochs < 0 || cfg.train_epochs < 0)
    throw std::invalid_argument("baseline: epoch counts must be non-negative");
  StealResult result;
  Network f_s = std::move(substitute);
  SoftDataset pool;
  if (kind == BaselineKind::auxiliary) {
    if (!aux_inputs.defined())
      throw std::invalid_argument("baseline: auxiliary source needs an input set");
    pool.inputs = aux_inputs;
  } else {
    pool = noise_epoch(f_s.input_shape(), cfg.pool_size, steal_noise_seed(cfg.seed, 0), 0);
  }
  bool labeled = false;
  if (cfg.epochs > 0) {
    try {
      pool.soft_labels = detail::label_pool(oracle, pool.inputs, std::nullopt);
      labeled = true;
    } catch (const BudgetExhaustedError&) {
      result.trace.budget_exhausted = true;
    }
  }
  if (labeled) {
    result.first_pool = pool;
    for (int64_t t = 1; t <= cfg.epochs; ++t) {
      const auto start = std::chrono::steady_clock::now();
      auto report = e_step(f_s, pool, cfg.train_epochs, cfg.kd_lr, cfg.kd_batch,
                           steal_estep_seed(cfg.seed, t));
      StealEpochRecord rec;
      rec.epoch = t;
      rec.kd_loss = report.final_loss;
      rec.queries = oracle.query_count();
      if (test) {
        rec.accuracy = accuracy(f_s, *test);
        if (result.trace.best_epoch < 0 || rec.accuracy > result.trace.best_accuracy) {
          result.trace.best_accuracy = rec.accuracy;
          result.trace.best_epoch = t;
          result.best_model = f_s.clone();
        }
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.trace.records.push_back(rec);
    }
  }
  result.last_pool = pool;
  result.model = std::move(f_s);
  return result;
}

}  // namespace eslab
