#pragma once

#include "svddip/tape.hpp"
#include "svddip/tensor.hpp"

namespace svddip {

// Anisotropic total variation: sum of absolute forward differences along both
// image axes, no wrap-around. abs uses subgradient 0 at 0.
Var tv_aniso(Tape& tape, Var image);
double tv_aniso_value(const Tensor& image);

Var data_loss_l2(Tape& tape, Var ax, const Tensor& y);
Var data_loss_mean(Tape& tape, Var ax, const Tensor& y, size_t n);

// Poisson regression loss for the pre-log count model with N0 photons per
// empty-scan detector bin and normalization mu_max.
Var poisson_loss(Tape& tape, Var ax, const Tensor& y, double n0, double mu_max);
double poisson_loss_value(const Tensor& ax, const Tensor& y, double n0, double mu_max);

enum class DataLossKind { SquaredL2, MeanSquared, Poisson };

struct Objective {
  DataLossKind kind = DataLossKind::SquaredL2;
  double gamma = 0.0;
  const LinearOp* op = nullptr;
  Tensor y;
  double n0 = 4096.0;
  double mu_max = 81.35858;
};

struct ObjectiveTerms {
  Var total;
  Var data_term;
  Var tv_term;
};

// data_term(A x, y) + gamma * TV(x), recorded on the tape.
ObjectiveTerms objective_eval(Tape& tape, const Objective& obj, Var x_image);

// 10 log10(data_range^2 / MSE); +infinity when MSE == 0.
double psnr(const Tensor& x, const Tensor& x_ref, double data_range);

}  // namespace svddip
