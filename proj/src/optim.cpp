#include "svddip/optim.hpp"

#include <cmath>

namespace svddip {

void adam_step(std::vector<Parameter*>& params, const AdamConfig& cfg) {
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    p->step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step));
    for (size_t i = 0; i < p->value.numel(); ++i) {
      const double g = p->grad[i];
      p->moment1[i] = cfg.beta1 * p->moment1[i] + (1.0 - cfg.beta1) * g;
      p->moment2[i] = cfg.beta2 * p->moment2[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = p->moment1[i] / bc1;
      const double v_hat = p->moment2[i] / bc2;
      p->value[i] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) +
                               cfg.weight_decay * p->value[i]);
    }
  }
}

}  // namespace svddip
