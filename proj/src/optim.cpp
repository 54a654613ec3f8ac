#include "hnas/optim.hpp"

#include <cmath>

namespace hnas {

void AdamW::step(const std::vector<Tensor>& params, const GradientMap& grads) {
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (const auto& p : params) {
    if (!grads.contains(p)) continue;
    const auto g = grads.at(p).data();
    auto& mom = moments_[p.id()];
    if (mom.m.empty()) {
      mom.m.assign(g.size(), 0.0);
      mom.v.assign(g.size(), 0.0);
    }
    Tensor handle = p;
    auto w = handle.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * g[i];
      mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double update = (mom.m[i] / c1) / (std::sqrt(mom.v[i] / c2) + config_.eps);
      w[i] -= config_.lr * (update + config_.weight_decay * w[i]);
    }
  }
}

}  // namespace hnas
