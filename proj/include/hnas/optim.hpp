#pragma once

#include <cstddef>
#include <unordered_map>
#include <vector>

#include "hnas/tensor.hpp"

namespace hnas {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: p -= lr * wd * p
};

// Adam with decoupled weight decay. Parameters without a gradient entry are
// left untouched and keep their moment estimates.
class AdamW {
 public:
  explicit AdamW(AdamConfig config = {}) : config_(config) {}

  void step(const std::vector<Tensor>& params, const GradientMap& grads);
  void set_lr(double lr) { config_.lr = lr; }
  const AdamConfig& config() const { return config_; }
  std::size_t steps() const { return steps_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::unordered_map<const void*, Moments> moments_;
};

}  // namespace hnas
