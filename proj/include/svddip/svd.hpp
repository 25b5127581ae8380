#pragma once

#include <cstddef>
#include <vector>

#include "svddip/tensor.hpp"

namespace svddip {

// Conv weight [Cout,Cin,K,K] folded to a Cout x (Cin*K*K) matrix. Columns are
// ordered lexicographically by (cin, k1, k2), which for a contiguous row-major
// tensor is a pure reshape.
struct FoldedMatrix {
  Tensor mat;  // [Cout, Cin*K*K]
  size_t cin = 0;
  size_t k = 0;
};

struct TruncationPolicy {
  enum class Kind { None, RankFraction, ThresholdFraction } kind = Kind::None;
  double value = 0.0;  // p in (0,1] or t in [0,1)

  static TruncationPolicy none() { return {}; }
  static TruncationPolicy rank_fraction(double p) {
    return {Kind::RankFraction, p};
  }
  static TruncationPolicy threshold_fraction(double t) {
    return {Kind::ThresholdFraction, t};
  }
};

// Thin SVD of a folded conv weight: mat == U * diag(s) * V, with s descending.
struct SvdFactors {
  Tensor u;               // [Cout, R]
  std::vector<double> s;  // length R, descending, >= 0
  Tensor v;               // [R, Cin*K*K]
  size_t cin = 0;
  size_t k = 0;
  size_t rank() const { return s.size(); }
};

FoldedMatrix fold(const Tensor& w);
Tensor unfold_V(const Tensor& mat, size_t cin, size_t k);  // -> [R,Cin,K,K]
Tensor unfold_U(const Tensor& mat);                        // -> [Cout,R,1,1]

// Thin SVD of an arbitrary matrix [m,n] by one-sided Jacobi rotations.
// Deterministic sign convention: the largest-magnitude entry of each left
// singular vector is positive. Throws on non-convergence after the sweep cap.
void jacobi_svd(const Tensor& a, Tensor& u, std::vector<double>& s, Tensor& v);

SvdFactors svd_decompose(const FoldedMatrix& fm);

// fold + SVD + unfold; the composition conv1x1(U) . diag(s) . convKxK(V)
// reproduces conv(W, .) exactly.
struct ConvFactorization {
  Tensor u_tensor;        // [Cout, R, 1, 1]
  std::vector<double> s;  // active singular values
  Tensor v_tensor;        // [R, Cin, K, K]
};

ConvFactorization factorize_conv(const Tensor& w,
                                 const TruncationPolicy& policy = TruncationPolicy::none());

SvdFactors apply_truncation(const SvdFactors& f, const TruncationPolicy& policy);

size_t count_trainable_raw(size_t cout, size_t cin, size_t k);
size_t count_trainable_svd(const SvdFactors& f);

}  // namespace svddip
