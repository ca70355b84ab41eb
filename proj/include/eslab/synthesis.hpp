#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "eslab/common.hpp"
#include "eslab/dataset.hpp"
#include "eslab/network.hpp"
#include "eslab/optim.hpp"
#include "eslab/tensor.hpp"

namespace eslab {

struct DirichletSpec {
  int64_t k = 0;
  std::vector<double> alpha;

  void validate() const {
    if (k < 1 || static_cast<int64_t>(alpha.size()) != k)
      throw std::invalid_argument("dirichlet: alpha length must equal K");
    for (double a : alpha)
      if (!(a > 0.0)) throw std::domain_error("dirichlet: concentrations must be positive");
  }
};

enum class SynthesisMode { opt_syn, dnn_syn, random_noise };

struct SynthesisConfig {
  int64_t samples_per_epoch = 256;  // S
  int opt_iterations = 30;          // per-sample optimization steps
  double synth_lr = 0.01;
  double lambda_ms = 1.0;           // mode-seeking weight
  SynthesisMode mode = SynthesisMode::opt_syn;

  // generator settings (dnn_syn only)
  int64_t latent_dim = 16;
  int64_t generator_hidden = 128;
  int generator_steps = 50;          // generator updates per stealing epoch
  int64_t generator_batch = 64;
  bool reinit_generator = false;     // fresh G each stealing epoch

  void validate() const {
    if (samples_per_epoch <= 0) throw std::invalid_argument("synthesis: S must be positive");
    if (opt_iterations < 0) throw std::invalid_argument("synthesis: m must be non-negative");
    if (!(synth_lr > 0.0)) throw std::invalid_argument("synthesis: lr must be positive");
    if (lambda_ms < 0.0) throw std::invalid_argument("synthesis: lambda must be non-negative");
  }
};

/// Draws from Dirichlet(alpha) as normalized independent Gamma(alpha_i, 1)
/// variates. Always strictly positive and summing to 1.
inline PredictionVector sample_dirichlet(const DirichletSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  PredictionVector y(static_cast<size_t>(spec.k));
  double sum = 0.0;
  for (int64_t i = 0; i < spec.k; ++i) {
    // tiny concentrations underflow the gamma sampler; keep entries positive
    double g = std::max(rng.gamma(spec.alpha[static_cast<size_t>(i)], 1.0), 1e-300);
    y[static_cast<size_t>(i)] = g;
    sum += g;
  }
  for (double& v : y) v /= sum;
  return y;
}

/// Concentration vector for one synthetic sample: |N(0,1)| per class,
/// floored at 1e-3 so the Dirichlet stays valid.
inline std::vector<double> draw_alpha(int64_t k, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> alpha(static_cast<size_t>(k));
  for (double& a : alpha) a = std::max(std::abs(rng.normal(0.0, 1.0)), 1e-3);
  return alpha;
}

namespace detail {

// One synthesized sample; caller must have frozen f_s already.
inline Tensor opt_syn_attempt(const Network& f_s, const Tensor& target, int m, double lr,
                              uint64_t seed, bool& ok) {
  Shape shape = f_s.input_shape();
  shape.insert(shape.begin(), 1);
  Rng rng(seed);
  Tensor x = Tensor::randn(shape, rng);
  if (m == 0) {
    ok = true;
    return x;
  }
  x.set_requires_grad(true);
  Adam opt({x}, lr);
  Tensor best = x.clone();
  double best_loss = std::numeric_limits<double>::infinity();
  ok = false;
  for (int i = 0; i < m; ++i) {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = softmax_cross_entropy(f_s.forward(x), target);
    const double l = loss.item();
    if (!std::isfinite(l)) return best;
    if (l < best_loss) {
      best_loss = l;
      best = x.clone();
    }
    tape.backward(loss);
    opt.step();
  }
  // the final iterate competes too; keep the argmin over all visited points
  double final_loss = softmax_cross_entropy(f_s.forward(x), target).item();
  if (!std::isfinite(final_loss)) return best;
  if (final_loss < best_loss) best = x.clone();
  ok = true;
  best.set_requires_grad(false);
  return best;
}

inline Tensor opt_syn_sample_nofreeze(const Network& f_s, const PredictionVector& y, int m,
                                      double lr, uint64_t seed) {
  if (static_cast<int64_t>(y.size()) != f_s.class_count())
    throw std::invalid_argument("opt_syn: target length must equal the class count");
  Tensor target({1, f_s.class_count()}, std::vector<double>(y.begin(), y.end()));
  for (int attempt = 0; attempt < 3; ++attempt) {
    bool ok = false;
    Tensor x = opt_syn_attempt(f_s, target, m, lr, mix_seed(seed, 0x0a7 + static_cast<uint64_t>(attempt)), ok);
    if (ok) return x;
  }
  throw SynthesisError("opt_syn: loss stayed non-finite after 3 restarts");
}

}  // namespace detail

/// Synthesizes one input the substitute classifies like the target vector:
/// x starts at N(0,1) and takes m Adam steps minimizing the cross entropy
/// of f_s(x) against y. Returns the lowest-loss iterate visited, so the
/// result is never worse than the initialization. Restarts with a fresh
/// seed (3 attempts) when the loss turns non-finite.
inline Tensor opt_syn_sample(const Network& f_s, const PredictionVector& y, int m, double lr,
                             uint64_t seed) {
  ParamFreeze freeze(f_s);
  return detail::opt_syn_sample_nofreeze(f_s, y, m, lr, seed);
}

// Per-sample sub-seeds. Sample i depends only on (epoch_seed, i), which is
// what makes the epoch output independent of the thread count.
inline uint64_t opt_syn_alpha_seed(uint64_t epoch_seed, int64_t i) {
  return mix_seed(epoch_seed, 0xa1f + 2 * static_cast<uint64_t>(i));
}
inline uint64_t opt_syn_target_seed(uint64_t epoch_seed, int64_t i) {
  return mix_seed(epoch_seed, 0xa1f + 2 * static_cast<uint64_t>(i) + 1);
}
inline uint64_t opt_syn_init_seed(uint64_t epoch_seed, int64_t i) {
  return mix_seed(epoch_seed, 0x5eed + static_cast<uint64_t>(i));
}

/// A full synthetic pool: S samples with independent concentration draws,
/// Dirichlet targets, and initializations. Labels are left to the oracle.
/// Deterministic under seed regardless of thread count (per-sample seeds
/// derive from the sample index).
inline SoftDataset opt_syn_epoch(const Network& f_s, int64_t s, int m, double lr, uint64_t seed,
                                 int64_t epoch_tag = 0) {
  if (s <= 0) throw std::invalid_argument("opt_syn_epoch: S must be positive");
  ParamFreeze freeze(f_s);
  Shape shape = f_s.input_shape();
  shape.insert(shape.begin(), s);
  const int64_t row = shape_numel(f_s.input_shape());
  std::vector<double> pool(static_cast<size_t>(s * row));

  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&](int64_t begin, int64_t end) {
    try {
      for (int64_t i = begin; i < end; ++i) {
        auto alpha = draw_alpha(f_s.class_count(), opt_syn_alpha_seed(seed, i));
        auto y = sample_dirichlet({f_s.class_count(), alpha}, opt_syn_target_seed(seed, i));
        Tensor x = detail::opt_syn_sample_nofreeze(f_s, y, m, lr, opt_syn_init_seed(seed, i));
        std::copy(x.data().begin(), x.data().end(), pool.begin() + i * row);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mu);
      if (!first_error) first_error = std::current_exception();
    }
  };

  const int64_t hw = static_cast<int64_t>(std::thread::hardware_concurrency());
  const int64_t nthreads = std::max<int64_t>(1, std::min<int64_t>({hw, s, 8}));
  if (nthreads == 1) {
    worker(0, s);
  } else {
    std::vector<std::thread> threads;
    const int64_t chunk = (s + nthreads - 1) / nthreads;
    for (int64_t t = 0; t < nthreads; ++t) {
      const int64_t begin = t * chunk, end = std::min(s, begin + chunk);
      if (begin < end) threads.emplace_back(worker, begin, end);
    }
    for (auto& th : threads) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  SoftDataset out;
  out.inputs = Tensor(shape, std::move(pool));
  out.epoch_tag = epoch_tag;
  return out;
}

/// Plain N(0,1) pool, the random-data baseline and the t=0 initialization.
inline SoftDataset noise_epoch(const Shape& sample_shape, int64_t s, uint64_t seed,
                               int64_t epoch_tag = 0) {
  if (s <= 0) throw std::invalid_argument("noise_epoch: S must be positive");
  Shape shape = sample_shape;
  shape.insert(shape.begin(), s);
  Rng rng(mix_seed(seed, 0x2015e));
  SoftDataset out;
  out.inputs = Tensor::randn(shape, rng);
  out.epoch_tag = epoch_tag;
  return out;
}

/// Diversity pressure for the generator: sum over the batch of
/// d(z1,z2) / d(G(z1,l), G(z2,l)) with the image distance clamped at 1e-8.
/// A collapsing generator drives the denominator to the clamp and the
/// loss explodes, which is exactly the training signal wanted.
inline Tensor mode_seeking_loss(const GeneratorNetwork& g, const Tensor& z1, const Tensor& z2,
                                const Tensor& labels) {
  Tensor x1 = g.generate(z1, labels);
  Tensor x2 = g.generate(z2, labels);
  Tensor dz = row_l2_distance(z1, z2);  // constant: z carries no grad
  Tensor dx = row_l2_distance(flatten(x1), flatten(x2));
  return sum(div(dz, clamp_min(dx, 1e-8)));
}

/// One generator update: Adam step on w_G minimizing
/// CE(f_s(G(z1,l)), l) + lambda * mode_seeking(z1, z2, l), with f_s frozen.
/// Returns the pre-step loss.
inline double dnn_syn_step(GeneratorNetwork& g, const Network& f_s, const Tensor& z1,
                           const Tensor& z2, const Tensor& labels, double lambda, Adam& opt) {
  ParamFreeze freeze(f_s);
  Tape tape;
  TapeScope scope(tape);
  Tensor x = g.generate(z1, labels);
  Tensor loss = softmax_cross_entropy(f_s.forward(x), labels);
  if (lambda != 0.0)
    loss = add(loss, mul_scalar(mode_seeking_loss(g, z1, z2, labels), lambda));
  const double value = loss.item();
  if (!std::isfinite(value))
    throw SynthesisError("dnn_syn: non-finite generator loss, aborting the epoch");
  tape.backward(loss);
  opt.step();
  return value;
}

struct AugmentOptions {
  double flip_prob = 0.5;
  int max_shift = 2;         // horizontal shift in columns, zero filled
  double noise_sigma = 0.05;
  // test hooks: pin the per-sample draws instead of sampling them
  std::optional<bool> force_flip;
  std::optional<int> force_shift;
};

/// Per-sample augmentation: horizontal flip, horizontal integer shift with
/// zero fill, Gaussian pixel noise. Vector-shaped data only gets the noise.
/// Deterministic under seed; sample i depends only on (seed, i).
inline Tensor augment(const Tensor& x, uint64_t seed, const AugmentOptions& opt = {}) {
  const bool image = x.rank() == 4;
  if (!image && x.rank() != 2)
    throw std::invalid_argument("augment: expects [n,c,h,w] images or [n,d] vectors");
  const int64_t n = x.dim(0);
  std::vector<double> out(x.data());
  const int64_t row = x.numel() / n;
  for (int64_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, 0xa3b5 + static_cast<uint64_t>(i)));
    double* sample = out.data() + i * row;
    if (image) {
      const int64_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
      const bool flip = opt.force_flip ? *opt.force_flip : rng.bernoulli(opt.flip_prob);
      if (flip) {
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t yy = 0; yy < h; ++yy) {
            double* line = sample + (ch * h + yy) * w;
            std::reverse(line, line + w);
          }
      }
      const int shift = opt.force_shift
                            ? *opt.force_shift
                            : static_cast<int>(rng.uniform_int(-opt.max_shift, opt.max_shift));
      if (shift != 0) {
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t yy = 0; yy < h; ++yy) {
            double* line = sample + (ch * h + yy) * w;
            std::vector<double> shifted(static_cast<size_t>(w), 0.0);
            for (int64_t xx = 0; xx < w; ++xx) {
              const int64_t src = xx - shift;
              if (src >= 0 && src < w) shifted[static_cast<size_t>(xx)] = line[src];
            }
            std::copy(shifted.begin(), shifted.end(), line);
          }
      }
    }
    if (opt.noise_sigma > 0.0)
      for (int64_t j = 0; j < row; ++j) sample[j] += rng.normal(0.0, opt.noise_sigma);
  }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace eslab
