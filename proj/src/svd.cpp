#include "svddip/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace svddip {

FoldedMatrix fold(const Tensor& w) {
  if (w.rank() != 4) throw std::invalid_argument("fold: weight must be [Cout,Cin,K,K]");
  if (w.dim(2) != w.dim(3)) throw std::invalid_argument("fold: kernel must be square");
  const size_t cout = w.dim(0), cin = w.dim(1), k = w.dim(2);
  FoldedMatrix fm;
  fm.mat = w.reshaped({cout, cin * k * k});
  fm.cin = cin;
  fm.k = k;
  return fm;
}

Tensor unfold_V(const Tensor& mat, size_t cin, size_t k) {
  if (mat.rank() != 2) throw std::invalid_argument("unfold_V: matrix expected");
  if (mat.dim(1) != cin * k * k)
    throw std::invalid_argument("unfold_V: column count != Cin*K*K");
  return mat.reshaped({mat.dim(0), cin, k, k});
}

Tensor unfold_U(const Tensor& mat) {
  if (mat.rank() != 2) throw std::invalid_argument("unfold_U: matrix expected");
  return mat.reshaped({mat.dim(0), mat.dim(1), 1, 1});
}

namespace {

constexpr int kMaxSweeps = 60;
constexpr double kConvergeTol = 1e-12;

// One-sided Jacobi on a tall matrix b [m,n], m >= n: orthogonalizes the
// columns of b while accumulating the right rotations into w [n,n], so that
// on exit  b_orig = b * w^T  with b having orthogonal columns.
void one_sided_jacobi(Tensor& b, Tensor& w) {
  const size_t m = b.dim(0), n = b.dim(1);
  w = Tensor::zeros({n, n});
  for (size_t i = 0; i < n; ++i) w[i * n + i] = 1.0;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (size_t p = 0; p + 1 < n; ++p) {
      for (size_t q = p + 1; q < n; ++q) {
        double alpha = 0, beta = 0, gamma = 0;
        for (size_t i = 0; i < m; ++i) {
          const double bp = b[i * n + p], bq = b[i * n + q];
          alpha += bp * bp;
          beta += bq * bq;
          gamma += bp * bq;
        }
        const double denom = std::sqrt(alpha * beta);
        if (denom == 0.0 || std::fabs(gamma) <= kConvergeTol * denom) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (size_t i = 0; i < m; ++i) {
          const double bp = b[i * n + p], bq = b[i * n + q];
          b[i * n + p] = c * bp - s * bq;
          b[i * n + q] = s * bp + c * bq;
        }
        for (size_t i = 0; i < n; ++i) {
          const double wp = w[i * n + p], wq = w[i * n + q];
          w[i * n + p] = c * wp - s * wq;
          w[i * n + q] = s * wp + c * wq;
        }
      }
    }
    if (!rotated) return;
  }
  throw std::runtime_error("jacobi_svd: no convergence within sweep cap");
}

// Replaces near-zero columns of u [m,r] with an orthonormal completion.
void complete_null_columns(Tensor& u, const std::vector<bool>& is_zero) {
  const size_t m = u.dim(0), r = u.dim(1);
  for (size_t j = 0; j < r; ++j) {
    if (!is_zero[j]) continue;
    for (size_t cand = 0; cand < m; ++cand) {
      std::vector<double> col(m, 0.0);
      col[cand] = 1.0;
      for (size_t jj = 0; jj < r; ++jj) {
        if (jj == j) continue;
        if (is_zero[jj] && jj > j) continue;  // not yet filled
        double dot = 0;
        for (size_t i = 0; i < m; ++i) dot += col[i] * u[i * r + jj];
        for (size_t i = 0; i < m; ++i) col[i] -= dot * u[i * r + jj];
      }
      double nrm = 0;
      for (double v : col) nrm += v * v;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-6) {
        for (size_t i = 0; i < m; ++i) u[i * r + j] = col[i] / nrm;
        break;
      }
    }
  }
}

}  // namespace

void jacobi_svd(const Tensor& a, Tensor& u, std::vector<double>& s, Tensor& v) {
  if (a.rank() != 2) throw std::invalid_argument("jacobi_svd: matrix expected");
  if (!a.all_finite()) throw std::invalid_argument("jacobi_svd: non-finite entries");
  const size_t m = a.dim(0), n = a.dim(1);
  const bool wide = m < n;
  const size_t mb = wide ? n : m, nb = wide ? m : n;  // b is mb x nb, tall

  Tensor b({mb, nb});
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) {
      if (wide)
        b[j * nb + i] = a[i * n + j];
      else
        b[i * nb + j] = a[i * n + j];
    }
  Tensor w;
  one_sided_jacobi(b, w);

  const size_t r = nb;  // thin rank = min(m, n)
  std::vector<double> sig(r);
  for (size_t j = 0; j < r; ++j) {
    double nrm = 0;
    for (size_t i = 0; i < mb; ++i) nrm += b[i * nb + j] * b[i * nb + j];
    sig[j] = std::sqrt(nrm);
  }
  std::vector<size_t> order(r);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t x, size_t y) { return sig[x] > sig[y]; });

  const double zero_tol = (r ? sig[order[0]] : 0.0) * 1e-14;
  Tensor ub({mb, r});  // orthonormalized columns of b in sorted order
  Tensor wb({nb, r});  // accumulated rotations in sorted order
  std::vector<bool> is_zero(r, false);
  s.assign(r, 0.0);
  for (size_t jj = 0; jj < r; ++jj) {
    const size_t j = order[jj];
    s[jj] = sig[j];
    is_zero[jj] = sig[j] <= zero_tol;
    for (size_t i = 0; i < mb; ++i)
      ub[i * r + jj] = is_zero[jj] ? 0.0 : b[i * nb + j] / sig[j];
    for (size_t i = 0; i < nb; ++i) wb[i * r + jj] = w[i * nb + j];
  }
  for (size_t jj = 0; jj < r; ++jj)
    if (is_zero[jj]) s[jj] = 0.0;
  complete_null_columns(ub, is_zero);

  // b_orig = ub * diag(s) * wb^T; map back to the original orientation.
  if (!wide) {
    u = ub;                // [m, r]
    v = Tensor({r, n});    // wb^T
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < n; ++j) v[i * n + j] = wb[j * r + i];
  } else {
    u = wb;                // [m, r]
    v = Tensor({r, n});    // ub^T
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < n; ++j) v[i * n + j] = ub[j * r + i];
  }

  // Sign convention: largest-magnitude entry of each left singular vector > 0.
  for (size_t j = 0; j < r; ++j) {
    double best = 0;
    size_t besti = 0;
    for (size_t i = 0; i < m; ++i) {
      const double av = std::fabs(u[i * r + j]);
      if (av > best) {
        best = av;
        besti = i;
      }
    }
    if (u[besti * r + j] < 0) {
      for (size_t i = 0; i < m; ++i) u[i * r + j] = -u[i * r + j];
      for (size_t i = 0; i < n; ++i) v[j * n + i] = -v[j * n + i];
    }
  }
}

SvdFactors svd_decompose(const FoldedMatrix& fm) {
  SvdFactors f;
  jacobi_svd(fm.mat, f.u, f.s, f.v);
  f.cin = fm.cin;
  f.k = fm.k;
  return f;
}

SvdFactors apply_truncation(const SvdFactors& f, const TruncationPolicy& policy) {
  size_t keep = f.rank();
  switch (policy.kind) {
    case TruncationPolicy::Kind::None:
      return f;
    case TruncationPolicy::Kind::RankFraction: {
      if (!(policy.value > 0.0 && policy.value <= 1.0))
        throw std::invalid_argument("rank_fraction: p must be in (0,1]");
      keep = static_cast<size_t>(
          std::ceil(policy.value * static_cast<double>(f.rank()) - 1e-12));
      break;
    }
    case TruncationPolicy::Kind::ThresholdFraction: {
      if (!(policy.value >= 0.0 && policy.value < 1.0))
        throw std::invalid_argument("threshold_fraction: t must be in [0,1)");
      const double cut = policy.value * (f.rank() ? f.s[0] : 0.0);
      keep = 0;
      while (keep < f.rank() && f.s[keep] >= cut) ++keep;
      break;
    }
  }
  if (keep == 0)
    throw std::invalid_argument("truncation removed all singular values");
  if (keep == f.rank()) return f;

  SvdFactors out;
  out.cin = f.cin;
  out.k = f.k;
  out.s.assign(f.s.begin(), f.s.begin() + static_cast<long>(keep));
  const size_t m = f.u.dim(0), n = f.v.dim(1), r = f.rank();
  out.u = Tensor({m, keep});
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < keep; ++j) out.u[i * keep + j] = f.u[i * r + j];
  out.v = Tensor({keep, n});
  for (size_t i = 0; i < keep; ++i)
    for (size_t j = 0; j < n; ++j) out.v[i * n + j] = f.v[i * n + j];
  return out;
}

ConvFactorization factorize_conv(const Tensor& w, const TruncationPolicy& policy) {
  if (w.dim(2) % 2 != 1)
    throw std::invalid_argument("factorize_conv: kernel size must be odd");
  FoldedMatrix fm = fold(w);
  SvdFactors f = apply_truncation(svd_decompose(fm), policy);
  ConvFactorization cf;
  cf.u_tensor = unfold_U(f.u);
  cf.v_tensor = unfold_V(f.v, f.cin, f.k);
  cf.s = f.s;
  return cf;
}

size_t count_trainable_raw(size_t cout, size_t cin, size_t k) {
  return cout * cin * k * k;
}

size_t count_trainable_svd(const SvdFactors& f) { return f.rank(); }

}  // namespace svddip
