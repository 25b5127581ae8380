#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "svddip/ct.hpp"
#include "svddip/losses.hpp"
#include "test_util.hpp"

using namespace svddip;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// square geometry: detector width == image side, unit spacing
ParallelGeometry square_geom(size_t na, size_t n) { return {na, n, 1.0, n}; }

}  // namespace

TEST_CASE("sparse operator: identity, zero rows, coo validation") {
  SparseOperator id = SparseOperator::from_coo(3, 3, {0, 1, 2}, {0, 1, 2},
                                               {1.0, 1.0, 1.0});
  Tensor x({3}, {1.0, 2.0, 3.0});
  CHECK(max_abs_diff(id.apply(x), x) == 0.0);
  CHECK(max_abs_diff(id.apply_adjoint(x), x) == 0.0);

  // duplicate entries rejected
  CHECK_THROWS_AS(SparseOperator::from_coo(2, 2, {0, 0}, {1, 1}, {1.0, 2.0}),
                  std::invalid_argument);

  SparseOperator empty_row = SparseOperator::from_coo(2, 2, {1}, {0}, {2.0});
  Tensor y = empty_row.apply(Tensor({2}, {5.0, 7.0}));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 10.0);
}

TEST_CASE("sparse operator save/load round-trip") {
  SparseOperator op = SparseOperator::from_coo(2, 3, {0, 0, 1}, {0, 2, 1},
                                               {0.5, 1.5, 2.0});
  const std::string path =
      (std::filesystem::temp_directory_path() / "op_rt.txt").string();
  op.save(path);
  SparseOperator back = SparseOperator::load(path);
  CHECK(back.rows() == 2);
  CHECK(back.cols() == 3);
  CHECK(back.nnz() == 3);
  Tensor x({3}, {1.0, 2.0, 3.0});
  CHECK(max_abs_diff(back.apply(x), op.apply(x)) == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("projector at angle zero sums image columns") {
  const size_t n = 16;
  std::mt19937_64 rng(21);
  Tensor img = random_tensor({n, n}, rng, 0.0, 1.0);
  SparseOperator op = build_parallel_operator(square_geom(1, n));
  Tensor sino = op.apply(img.reshaped({n * n}));
  REQUIRE(sino.numel() == n);
  for (size_t d = 0; d < n; ++d) {
    double col = 0;
    for (size_t r = 0; r < n; ++r) col += img.at({r, d});
    CHECK(sino[d] == doctest::Approx(col).epsilon(1e-10));
  }
}

TEST_CASE("projector is linear") {
  const size_t n = 12;
  std::mt19937_64 rng(22);
  ParallelGeometry geom = square_geom(7, n);
  SparseOperator op = build_parallel_operator(geom);
  Tensor a = random_tensor({n * n}, rng), b = random_tensor({n * n}, rng);
  Tensor combo({n * n});
  for (size_t i = 0; i < combo.numel(); ++i) combo[i] = 2.0 * a[i] - 0.5 * b[i];
  Tensor ya = op.apply(a), yb = op.apply(b), yc = op.apply(combo);
  for (size_t i = 0; i < yc.numel(); ++i)
    CHECK(yc[i] == doctest::Approx(2.0 * ya[i] - 0.5 * yb[i]).epsilon(1e-12));
}

TEST_CASE("adjoint passes the inner product test") {
  const size_t n = 10;
  std::mt19937_64 rng(23);
  SparseOperator op = build_parallel_operator({9, 15, 1.0, n});
  Tensor x = random_tensor({n * n}, rng);
  Tensor y = random_tensor({op.rows()}, rng);
  double lhs = 0, rhs = 0;
  Tensor ax = op.apply(x), aty = op.apply_adjoint(y);
  for (size_t i = 0; i < ax.numel(); ++i) lhs += ax[i] * y[i];
  for (size_t i = 0; i < x.numel(); ++i) rhs += x[i] * aty[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("disk sinogram is symmetric across angles and detector center") {
  const size_t n = 32;
  ParallelGeometry geom = square_geom(8, n);
  SparseOperator op = build_parallel_operator(geom);
  Tensor disk = disk_phantom(n, 0.6);
  Sinogram sino = radon_forward(disk, geom, op);
  // a centered disk projects (nearly) identically at every angle
  double ref_mass = 0;
  for (size_t d = 0; d < geom.num_detector_pixels; ++d)
    ref_mass += sino.data.at({0, d});
  for (size_t a = 1; a < geom.num_angles; ++a) {
    double mass = 0;
    for (size_t d = 0; d < geom.num_detector_pixels; ++d)
      mass += sino.data.at({a, d});
    CHECK(mass == doctest::Approx(ref_mass).epsilon(0.02));
  }
  // mirror symmetry in the detector axis at angle 0
  for (size_t d = 0; d < n / 2; ++d)
    CHECK(sino.data.at({0, d}) ==
          doctest::Approx(sino.data.at({0, n - 1 - d})).epsilon(1e-9));
}

TEST_CASE("fbp: zero in, zero out; linear in the sinogram") {
  const size_t n = 16;
  ParallelGeometry geom = square_geom(12, n);
  SparseOperator op = build_parallel_operator(geom);

  Sinogram zero;
  zero.data = Tensor({geom.num_angles, geom.num_detector_pixels});
  Tensor rz = fbp(zero, geom);
  for (size_t i = 0; i < rz.numel(); ++i) CHECK(rz[i] == 0.0);

  std::mt19937_64 rng(31);
  Sinogram s1, s2;
  s1.data = random_tensor({geom.num_angles, geom.num_detector_pixels}, rng);
  s2.data = s1.data;
  for (size_t i = 0; i < s2.data.numel(); ++i) s2.data[i] *= 3.0;
  Tensor r1 = fbp(s1, geom), r2 = fbp(s2, geom);
  for (size_t i = 0; i < r1.numel(); ++i)
    CHECK(r2[i] == doctest::Approx(3.0 * r1[i]).epsilon(1e-10));
}

TEST_CASE("fbp round-trips a disk phantom at high angle count") {
  const size_t n = 64;
  ParallelGeometry geom{180, 95, 1.0, n};
  SparseOperator op = build_parallel_operator(geom);
  Tensor disk = disk_phantom(n, 0.5);
  Sinogram sino = radon_forward(disk, geom, op);
  Tensor recon = fbp(sino, geom);
  // value frozen from the first run of this oracle: 27.8 dB
  CHECK(psnr(recon, disk, 1.0) > 25.0);
}

TEST_CASE("gaussian noise statistics and determinism") {
  const size_t n = 1000;
  Sinogram sino;
  sino.data = Tensor::full({n}, 2.0);
  Sinogram noisy1 = add_gaussian_noise(sino, 0.05, 77);
  Sinogram noisy2 = add_gaussian_noise(sino, 0.05, 77);
  Sinogram noisy3 = add_gaussian_noise(sino, 0.05, 78);
  CHECK(max_abs_diff(noisy1.data, noisy2.data) == 0.0);
  CHECK(max_abs_diff(noisy1.data, noisy3.data) > 0.0);
  CHECK(noisy1.noise.kind == NoiseSpec::Kind::Gaussian);
  CHECK(noisy1.noise.level == 0.05);

  // empirical sigma ~ 0.05 * mean|values| = 0.1
  double var = 0;
  for (size_t i = 0; i < n; ++i)
    var += (noisy1.data[i] - 2.0) * (noisy1.data[i] - 2.0);
  const double sd = std::sqrt(var / n);
  CHECK(sd == doctest::Approx(0.1).epsilon(0.1));
}

TEST_CASE("poisson pre-log model: expectation mode and sampling moments") {
  const size_t n = 32;
  ParallelGeometry geom = square_geom(4, n);
  SparseOperator op = build_parallel_operator(geom);
  Tensor img = Tensor::full({n, n}, 0.01);
  const double n0 = 4096.0, mu_max = 81.35858;

  Sinogram expect = simulate_poisson_prelog(img, op, op.rows(), geom.num_angles,
                                            n0, mu_max, 0, /*sample=*/false);
  Tensor ax = op.apply(img.reshaped({n * n}));
  for (size_t i = 0; i < ax.numel(); ++i)
    CHECK(expect.data[i] == doctest::Approx(ax[i] / mu_max).epsilon(1e-12));
  CHECK(expect.noise.kind == NoiseSpec::Kind::None);  // expectation is noise-free

  // At Ax = 0 the counts are Pois(N0): mean N0, variance N0.
  const size_t m = 200000;
  SparseOperator zero_op = SparseOperator::from_coo(m, 1, {0}, {0}, {0.0});
  Sinogram sampled = simulate_poisson_prelog(Tensor({1}), zero_op, m, 1,
                                             n0, mu_max, 99, true);
  double mean_count = 0, var_count = 0;
  std::vector<double> counts(m);
  for (size_t i = 0; i < m; ++i) {
    counts[i] = n0 * std::exp(-sampled.data[i] * mu_max);
    mean_count += counts[i];
  }
  mean_count /= m;
  for (size_t i = 0; i < m; ++i)
    var_count += (counts[i] - mean_count) * (counts[i] - mean_count);
  var_count /= m;
  CHECK(mean_count == doctest::Approx(n0).epsilon(0.01));
  CHECK(var_count == doctest::Approx(n0).epsilon(0.02));
}

TEST_CASE("hu_to_mu endpoints") {
  CHECK(hu_to_mu(0.0) == doctest::Approx(20.0));
  CHECK(hu_to_mu(1000.0) == doctest::Approx(39.98));
  CHECK(hu_to_mu(-1000.0) == doctest::Approx(0.02));
}

TEST_CASE("ellipse phantoms: range, determinism, degenerate cases") {
  Tensor a = generate_ellipses(64, 8, 5);
  Tensor b = generate_ellipses(64, 8, 5);
  Tensor c = generate_ellipses(64, 8, 6);
  CHECK(max_abs_diff(a, b) == 0.0);
  CHECK(max_abs_diff(a, c) > 0.0);
  double lo = 1e9, hi = -1e9, mass = 0;
  for (size_t i = 0; i < a.numel(); ++i) {
    lo = std::min(lo, a[i]);
    hi = std::max(hi, a[i]);
    mass += a[i];
  }
  CHECK(lo >= 0.0);
  CHECK(hi <= 1.0);
  CHECK(mass > 0.0);  // not the zero image

  Tensor none = generate_ellipses(64, 0, 5);
  for (size_t i = 0; i < none.numel(); ++i) CHECK(none[i] == 0.0);
  CHECK_THROWS_AS(generate_ellipses(8, 4, 5), std::invalid_argument);
}

TEST_CASE("geometry helpers") {
  ParallelGeometry geom{4, 95, 1.0, 64};
  auto th = geom.angles();
  REQUIRE(th.size() == 4);
  CHECK(th[0] == 0.0);
  CHECK(th[1] == doctest::Approx(M_PI / 4));
  CHECK(geom.covers_image());            // 95 > 64*sqrt(2) ~ 90.5
  CHECK(!ParallelGeometry{4, 64, 1.0, 64}.covers_image());
}
