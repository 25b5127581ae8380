#pragma once

#include <vector>

#include "svddip/tensor.hpp"

namespace svddip {

// Trainable tensor with gradient accumulator and Adam moment buffers.
struct Parameter {
  Tensor value;
  Tensor grad;
  bool trainable = true;
  Tensor moment1;
  Tensor moment2;
  long step = 0;

  Parameter() = default;
  explicit Parameter(Tensor v, bool train = true)
      : value(std::move(v)), trainable(train) {
    grad = Tensor::zeros(value.shape());
    moment1 = Tensor::zeros(value.shape());
    moment2 = Tensor::zeros(value.shape());
  }

  void zero_grad() { grad.fill(0.0); }
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled weight decay (AdamW): value -= lr * weight_decay * value,
  // applied alongside the adaptive update. 0 disables it.
  double weight_decay = 0.0;
};

// Bias-corrected Adam update. Parameters with trainable == false are left
// bit-identical (their moments and step counter are not advanced either).
void adam_step(std::vector<Parameter*>& params, const AdamConfig& cfg);

}  // namespace svddip
