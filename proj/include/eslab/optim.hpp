#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "eslab/tensor.hpp"

namespace eslab {

/// Adam with bias correction. Gradients are zeroed by step(), not by
/// backward, so a forgotten zero cannot silently accumulate across epochs.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double epsilon = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].data().size(), 0.0);
      v_[i].assign(params_[i].data().size(), 0.0);
    }
  }

  void step() {
    for (auto& p : params_)
      if (!p.has_grad())
        throw std::logic_error("adam: parameter has no gradient (backward not run?)");
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& data = params_[i].data();
      auto& grad = params_[i].grad();
      for (size_t j = 0; j < data.size(); ++j) {
        const double g = grad[j];
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        data[j] -= lr_ * mhat / (std::sqrt(vhat) + epsilon_);
      }
    }
    zero_grad();
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  int64_t step_count() const { return step_count_; }
  double lr() const { return lr_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  double lr_, beta1_, beta2_, epsilon_;
  int64_t step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace eslab
