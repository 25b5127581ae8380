#include "svddip/losses.hpp"

#include <cmath>
#include <limits>

namespace svddip {

namespace {

double sign0(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

}  // namespace

double tv_aniso_value(const Tensor& image) {
  if (image.rank() != 2) throw std::invalid_argument("tv_aniso: rank-2 image expected");
  const size_t h = image.dim(0), w = image.dim(1);
  double tv = 0.0;
  for (size_t i = 0; i + 1 < h; ++i)
    for (size_t j = 0; j < w; ++j)
      tv += std::fabs(image[(i + 1) * w + j] - image[i * w + j]);
  for (size_t i = 0; i < h; ++i)
    for (size_t j = 0; j + 1 < w; ++j)
      tv += std::fabs(image[i * w + j + 1] - image[i * w + j]);
  return tv;
}

Var tv_aniso(Tape& tape, Var image) {
  const Tensor& x = tape.value(image);
  const double tv = tv_aniso_value(x);
  const size_t ix = image.idx;
  return tape.make_node(
      Tensor::scalar(tv), {image},
      [ix](Tape& t, Tape::Node& o, std::vector<Tape::Node*>&) {
        const Tensor& x2 = t.at(ix).value;
        const size_t h = x2.dim(0), w = x2.dim(1);
        const double g = o.grad[0];
        Tensor gx = Tensor::zeros({h, w});
        for (size_t i = 0; i + 1 < h; ++i)
          for (size_t j = 0; j < w; ++j) {
            const double sg = sign0(x2[(i + 1) * w + j] - x2[i * w + j]);
            gx[(i + 1) * w + j] += g * sg;
            gx[i * w + j] -= g * sg;
          }
        for (size_t i = 0; i < h; ++i)
          for (size_t j = 0; j + 1 < w; ++j) {
            const double sg = sign0(x2[i * w + j + 1] - x2[i * w + j]);
            gx[i * w + j + 1] += g * sg;
            gx[i * w + j] -= g * sg;
          }
        t.add_grad(ix, gx);
      });
}

Var data_loss_l2(Tape& tape, Var ax, const Tensor& y) {
  Var yv = tape.constant(y);
  Var r = tape.sub(ax, yv);
  return tape.sum(tape.mul(r, r));
}

Var data_loss_mean(Tape& tape, Var ax, const Tensor& y, size_t n) {
  if (n == 0) throw std::invalid_argument("data_loss_mean: n must be positive");
  return tape.scale(data_loss_l2(tape, ax, y), 1.0 / static_cast<double>(n));
}

double poisson_loss_value(const Tensor& ax, const Tensor& y, double n0,
                          double mu_max) {
  if (!ax.same_shape(y)) throw std::invalid_argument("poisson_loss: shape mismatch");
  if (n0 <= 0) throw std::invalid_argument("poisson_loss: N0 must be > 0");
  const double mu = mu_max, lnn0 = std::log(n0);
  double loss = 0.0;
  for (size_t j = 0; j < ax.numel(); ++j) {
    loss -= n0 * std::exp(-y[j] * mu) * (-ax[j] * mu + lnn0) -
            n0 * std::exp(-ax[j] * mu);
  }
  return loss;
}

Var poisson_loss(Tape& tape, Var ax, const Tensor& y, double n0, double mu_max) {
  const double loss = poisson_loss_value(tape.value(ax), y, n0, mu_max);
  const size_t ia = ax.idx;
  Tensor yc = y;
  return tape.make_node(
      Tensor::scalar(loss), {ax},
      [ia, yc, n0, mu_max](Tape& t, Tape::Node& o, std::vector<Tape::Node*>&) {
        const Tensor& a = t.at(ia).value;
        const double g = o.grad[0], mu = mu_max;
        Tensor ga(a.shape());
        for (size_t j = 0; j < a.numel(); ++j)
          ga[j] = g * mu * n0 * (std::exp(-yc[j] * mu) - std::exp(-a[j] * mu));
        t.add_grad(ia, ga);
      });
}

ObjectiveTerms objective_eval(Tape& tape, const Objective& obj, Var x_image) {
  if (!obj.op) throw std::invalid_argument("objective_eval: no operator");
  Var ax = tape.apply_linear(*obj.op, x_image);
  const Tensor yflat = obj.y.reshaped({obj.y.numel()});
  Var data;
  switch (obj.kind) {
    case DataLossKind::SquaredL2:
      data = data_loss_l2(tape, ax, yflat);
      break;
    case DataLossKind::MeanSquared:
      data = data_loss_mean(tape, ax, yflat, yflat.numel());
      break;
    case DataLossKind::Poisson:
      data = poisson_loss(tape, ax, yflat, obj.n0, obj.mu_max);
      break;
  }
  ObjectiveTerms terms;
  terms.data_term = data;
  terms.tv_term = tv_aniso(tape, x_image);
  terms.total = tape.add(data, tape.scale(terms.tv_term, obj.gamma));
  return terms;
}

double psnr(const Tensor& x, const Tensor& x_ref, double data_range) {
  if (!x.same_shape(x_ref)) throw std::invalid_argument("psnr: shape mismatch");
  if (!(data_range > 0)) throw std::invalid_argument("psnr: data_range must be > 0");
  double mse = 0.0;
  for (size_t i = 0; i < x.numel(); ++i) {
    const double d = x[i] - x_ref[i];
    mse += d * d;
  }
  mse /= static_cast<double>(x.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

}  // namespace svddip
