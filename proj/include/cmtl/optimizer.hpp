#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cmtl/error.hpp"
#include "cmtl/model.hpp"

namespace cmtl {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool plain_sgd = false;

  void validate() const {
    if (!(std::isfinite(learning_rate) && learning_rate > 0.0)) throw Error(ErrorKind::Config, "learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw Error(ErrorKind::Config, "adam betas must lie in [0,1)");
    }
    if (!(epsilon > 0.0)) throw Error(ErrorKind::Config, "adam epsilon must be > 0");
  }

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Adam with bias correction, or plain SGD when configured, over a fixed list
/// of parameter tensors.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

  void step(std::vector<std::span<double>> params, const std::vector<std::span<const double>>& grads) {
    if (params.size() != grads.size()) throw Error(ErrorKind::State, "optimizer: parameter/gradient count mismatch");
    if (first_moment_.empty()) {
      for (auto p : params) {
        first_moment_.emplace_back(p.size(), 0.0);
        second_moment_.emplace_back(p.size(), 0.0);
      }
    }
    if (first_moment_.size() != params.size()) throw Error(ErrorKind::State, "optimizer: parameter layout changed");
    ++steps_;
    const double lr = config_.learning_rate;
    if (config_.plain_sgd) {
      for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t n = 0; n < params[t].size(); ++n) params[t][n] -= lr * grads[t][n];
      }
      return;
    }
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t t = 0; t < params.size(); ++t) {
      if (params[t].size() != grads[t].size() || params[t].size() != first_moment_[t].size()) {
        throw Error(ErrorKind::State, "optimizer: tensor size mismatch");
      }
      auto& m = first_moment_[t];
      auto& v = second_moment_[t];
      for (std::size_t n = 0; n < params[t].size(); ++n) {
        const double g = grads[t][n];
        m[n] = b1 * m[n] + (1.0 - b1) * g;
        v[n] = b2 * v[n] + (1.0 - b2) * g * g;
        const double m_hat = m[n] / correction1;
        const double v_hat = v[n] / correction2;
        params[t][n] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      }
    }
  }

  void step(MlpParams& params, const MlpGrads& grads) { step(params.tensors(), grads.tensors()); }

  std::size_t steps() const noexcept { return steps_; }

 private:
  OptimizerConfig config_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  std::size_t steps_ = 0;
};

}  // namespace cmtl
