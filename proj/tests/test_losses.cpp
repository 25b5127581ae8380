#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "svddip/ct.hpp"
#include "svddip/losses.hpp"
#include "test_util.hpp"

using namespace svddip;
using testutil::fd_max_rel_error;
using testutil::random_tensor;

TEST_CASE("anisotropic TV on hand-computed images") {
  // [[0,1],[2,3]]: row diffs |1-0| + |3-2| = 2, col diffs |2-0| + |3-1| = 4
  Tensor img({2, 2}, {0.0, 1.0, 2.0, 3.0});
  CHECK(tv_aniso_value(img) == doctest::Approx(6.0));

  CHECK(tv_aniso_value(Tensor::full({5, 5}, 3.7)) == 0.0);

  // single step edge in a 1x3 row: one unit jump
  CHECK(tv_aniso_value(Tensor({1, 3}, {0.0, 0.0, 1.0})) == doctest::Approx(1.0));

  // checkerboard 3x3 of 0/1: every adjacent pair differs by 1 -> 12 pairs
  Tensor cb({3, 3}, {0, 1, 0, 1, 0, 1, 0, 1, 0});
  CHECK(tv_aniso_value(cb) == doctest::Approx(12.0));
}

TEST_CASE("TV invariances: transpose, shift, scaling") {
  std::mt19937_64 rng(44);
  Tensor img = random_tensor({6, 9}, rng);
  const double tv = tv_aniso_value(img);

  Tensor tr({9, 6});
  for (size_t i = 0; i < 6; ++i)
    for (size_t j = 0; j < 9; ++j) tr.at({j, i}) = img.at({i, j});
  CHECK(tv_aniso_value(tr) == doctest::Approx(tv).epsilon(1e-12));

  Tensor shifted = img;
  for (size_t i = 0; i < shifted.numel(); ++i) shifted[i] += 17.5;
  CHECK(tv_aniso_value(shifted) == doctest::Approx(tv).epsilon(1e-12));

  Tensor scaled = img;
  for (size_t i = 0; i < scaled.numel(); ++i) scaled[i] *= -3.0;
  CHECK(tv_aniso_value(scaled) == doctest::Approx(3.0 * tv).epsilon(1e-12));
}

TEST_CASE("TV tape node agrees with the plain evaluator and differentiates") {
  std::mt19937_64 rng(45);
  Tensor img = random_tensor({5, 5}, rng);
  Parameter p{img};
  Tape tape;
  Var tv = tv_aniso(tape, tape.param(p));
  CHECK(tape.value(tv)[0] == doctest::Approx(tv_aniso_value(img)).epsilon(1e-12));
  tape.backward(tv);
  auto f = [](const Tensor& v) { return tv_aniso_value(v); };
  CHECK(fd_max_rel_error(f, img, p.grad) < 1e-6);
}

TEST_CASE("L2 and mean data losses with gradients") {
  std::mt19937_64 rng(46);
  Tensor ax0 = random_tensor({12}, rng);
  Tensor y = random_tensor({12}, rng);

  double l2 = 0;
  for (size_t i = 0; i < 12; ++i) l2 += (ax0[i] - y[i]) * (ax0[i] - y[i]);

  {
    Parameter p{ax0};
    Tape tape;
    Var loss = data_loss_l2(tape, tape.param(p), y);
    CHECK(tape.value(loss)[0] == doctest::Approx(l2).epsilon(1e-12));
    tape.backward(loss);
    auto f = [&](const Tensor& v) {
      Tape t2;
      return t2.value(data_loss_l2(t2, t2.constant(v), y))[0];
    };
    CHECK(fd_max_rel_error(f, ax0, p.grad) < 1e-6);
  }
  {
    Parameter p{ax0};
    Tape tape;
    Var loss = data_loss_mean(tape, tape.param(p), y, 12);
    CHECK(tape.value(loss)[0] == doctest::Approx(l2 / 12).epsilon(1e-12));
    tape.backward(loss);
    auto f = [&](const Tensor& v) {
      Tape t2;
      return t2.value(data_loss_mean(t2, t2.constant(v), y, 12))[0];
    };
    CHECK(fd_max_rel_error(f, ax0, p.grad) < 1e-6);
  }
}

TEST_CASE("poisson loss: closed-form value at zero and gradient correctness") {
  const double n0 = 4096.0, mu_max = 81.35858;
  const size_t m = 7;
  Tensor zero({m});

  // at Ax = y = 0 every term is -(N0 ln N0 - N0)
  const double expect = -static_cast<double>(m) * n0 * (std::log(n0) - 1.0);
  CHECK(poisson_loss_value(zero, zero, n0, mu_max) ==
        doctest::Approx(expect).epsilon(1e-12));

  std::mt19937_64 rng(47);
  Tensor ax0 = random_tensor({m}, rng, 0.0, 0.05);
  Tensor y = random_tensor({m}, rng, 0.0, 0.05);

  // stationary at Ax == y
  {
    Parameter p{y};
    Tape tape;
    Var loss = poisson_loss(tape, tape.param(p), y, n0, mu_max);
    tape.backward(loss);
    for (size_t i = 0; i < m; ++i) CHECK(std::abs(p.grad[i]) < 1e-9);
  }

  Parameter p{ax0};
  Tape tape;
  Var loss = poisson_loss(tape, tape.param(p), y, n0, mu_max);
  CHECK(tape.value(loss)[0] ==
        doctest::Approx(poisson_loss_value(ax0, y, n0, mu_max)).epsilon(1e-12));
  tape.backward(loss);
  auto f = [&](const Tensor& v) { return poisson_loss_value(v, y, n0, mu_max); };
  CHECK(fd_max_rel_error(f, ax0, p.grad, 1e-7) < 1e-5);
}

TEST_CASE("objective composes data term and weighted TV") {
  const size_t n = 6;
  ParallelGeometry geom{5, n, 1.0, n};
  SparseOperator op = build_parallel_operator(geom);
  std::mt19937_64 rng(48);
  Tensor img = random_tensor({n, n}, rng, 0.0, 1.0);
  Tensor y = random_tensor({geom.num_angles, n}, rng);

  Objective obj;
  obj.kind = DataLossKind::SquaredL2;
  obj.gamma = 2.5;
  obj.op = &op;
  obj.y = y;

  Tape tape;
  ObjectiveTerms terms = objective_eval(tape, obj, tape.constant(img));
  const double data = tape.value(terms.data_term)[0];
  const double tv = tape.value(terms.tv_term)[0];
  CHECK(tape.value(terms.total)[0] == doctest::Approx(data + 2.5 * tv).epsilon(1e-12));
  CHECK(tv == doctest::Approx(tv_aniso_value(img)).epsilon(1e-12));

  Tensor ax = op.apply(img.reshaped({n * n}));
  double l2 = 0;
  for (size_t i = 0; i < ax.numel(); ++i) l2 += (ax[i] - y[i]) * (ax[i] - y[i]);
  CHECK(data == doctest::Approx(l2).epsilon(1e-12));

  // gradient through the operator
  Parameter p{img};
  Tape t2;
  ObjectiveTerms terms2 = objective_eval(t2, obj, t2.param(p));
  t2.backward(terms2.total);
  auto f = [&](const Tensor& v) {
    Tape t3;
    return t3.value(objective_eval(t3, obj, t3.constant(v)).total)[0];
  };
  CHECK(fd_max_rel_error(f, img, p.grad) < 1e-5);
}

TEST_CASE("psnr reference values") {
  // uniform error 0.1 on range 1: MSE = 0.01, PSNR = 20 dB
  Tensor a = Tensor::full({8, 8}, 0.5);
  Tensor b = Tensor::full({8, 8}, 0.6);
  CHECK(psnr(a, b, 1.0) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(a, b, 2.0) == doctest::Approx(20.0 + 20.0 * std::log10(2.0)).epsilon(1e-9));
  CHECK(std::isinf(psnr(a, a, 1.0)));
}
