#include "svddip/ct.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace svddip {

std::vector<double> ParallelGeometry::angles() const {
  std::vector<double> a(num_angles);
  for (size_t i = 0; i < num_angles; ++i)
    a[i] = M_PI * static_cast<double>(i) / static_cast<double>(num_angles);
  return a;
}

bool ParallelGeometry::covers_image() const {
  const double span = static_cast<double>(num_detector_pixels) * detector_spacing;
  return span >= std::sqrt(2.0) * static_cast<double>(n_px);
}

SparseOperator::SparseOperator(size_t rows, size_t cols,
                               std::vector<uint32_t> row_ptr,
                               std::vector<uint32_t> col_idx,
                               std::vector<double> weights)
    : rows_(rows), cols_(cols), row_ptr_(std::move(row_ptr)),
      col_idx_(std::move(col_idx)), weights_(std::move(weights)) {
  if (row_ptr_.size() != rows_ + 1 || col_idx_.size() != weights_.size())
    throw std::invalid_argument("SparseOperator: inconsistent CSR arrays");
}

SparseOperator SparseOperator::from_coo(size_t rows, size_t cols,
                                        const std::vector<uint32_t>& r,
                                        const std::vector<uint32_t>& c,
                                        const std::vector<double>& w) {
  if (r.size() != c.size() || r.size() != w.size())
    throw std::invalid_argument("from_coo: triplet arrays differ in length");
  std::map<std::pair<uint32_t, uint32_t>, double> seen;
  for (size_t i = 0; i < r.size(); ++i) {
    if (r[i] >= rows || c[i] >= cols)
      throw std::invalid_argument("from_coo: index out of range");
    if (w[i] < 0) throw std::invalid_argument("from_coo: negative weight");
    if (!seen.emplace(std::make_pair(r[i], c[i]), w[i]).second)
      throw std::invalid_argument("from_coo: duplicate (row,col) pair");
  }
  std::vector<uint32_t> row_ptr(rows + 1, 0), col_idx;
  std::vector<double> weights;
  col_idx.reserve(seen.size());
  weights.reserve(seen.size());
  for (const auto& [rc, wv] : seen) row_ptr[rc.first + 1]++;
  for (size_t i = 0; i < rows; ++i) row_ptr[i + 1] += row_ptr[i];
  for (const auto& [rc, wv] : seen) {
    col_idx.push_back(rc.second);
    weights.push_back(wv);
  }
  return SparseOperator(rows, cols, std::move(row_ptr), std::move(col_idx),
                        std::move(weights));
}

Tensor SparseOperator::apply(const Tensor& x) const {
  if (x.numel() != cols_)
    throw std::invalid_argument("SparseOperator::apply: size mismatch");
  Tensor y({rows_});
  for (size_t i = 0; i < rows_; ++i) {
    double acc = 0.0;
    for (uint32_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
      acc += weights_[k] * x[col_idx_[k]];
    y[i] = acc;
  }
  return y;
}

Tensor SparseOperator::apply_adjoint(const Tensor& y) const {
  if (y.numel() != rows_)
    throw std::invalid_argument("SparseOperator::apply_adjoint: size mismatch");
  Tensor x({cols_});
  for (size_t i = 0; i < rows_; ++i) {
    const double yi = y[i];
    for (uint32_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
      x[col_idx_[k]] += weights_[k] * yi;
  }
  return x;
}

void SparseOperator::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "SVDDIPMAT1 " << rows_ << " " << cols_ << " " << nnz() << "\n";
  os.precision(17);
  for (size_t i = 0; i < rows_; ++i)
    for (uint32_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
      os << i << " " << col_idx_[k] << " " << weights_[k] << "\n";
}

SparseOperator SparseOperator::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  std::string magic;
  size_t rows, cols, nnz;
  if (!(is >> magic >> rows >> cols >> nnz) || magic != "SVDDIPMAT1")
    throw std::runtime_error("bad matrix-operator header in " + path);
  std::vector<uint32_t> r(nnz), c(nnz);
  std::vector<double> w(nnz);
  for (size_t i = 0; i < nnz; ++i)
    if (!(is >> r[i] >> c[i] >> w[i]))
      throw std::runtime_error("truncated matrix-operator file: " + path);
  return from_coo(rows, cols, r, c, w);
}

SparseOperator build_parallel_operator(const ParallelGeometry& geom) {
  const size_t n = geom.n_px, na = geom.num_angles, nd = geom.num_detector_pixels;
  if (n == 0 || na == 0 || nd == 0)
    throw std::invalid_argument("build_parallel_operator: empty geometry");
  const double half = (static_cast<double>(n) - 1.0) / 2.0;
  const double dhalf = (static_cast<double>(nd) - 1.0) / 2.0;
  const auto angles = geom.angles();

  std::vector<uint32_t> row_ptr(na * nd + 1, 0), col_idx;
  std::vector<double> weights;
  for (size_t a = 0; a < na; ++a) {
    const double co = std::cos(angles[a]), si = std::sin(angles[a]);
    const bool step_rows = std::fabs(co) >= std::fabs(si);
    const double wscale = 1.0 / (step_rows ? std::fabs(co) : std::fabs(si));
    for (size_t d = 0; d < nd; ++d) {
      const double t = (static_cast<double>(d) - dhalf) * geom.detector_spacing;
      const size_t row = a * nd + d;
      if (step_rows) {
        // ray x*co + y*si = t; step over rows (y), interpolate in x
        for (size_t i = 0; i < n; ++i) {
          const double y = static_cast<double>(i) - half;
          const double x = (t - y * si) / co;
          const double jf = x + half;
          const long j0 = static_cast<long>(std::floor(jf));
          const double f = jf - static_cast<double>(j0);
          if (j0 >= 0 && j0 < static_cast<long>(n) && 1.0 - f > 0) {
            col_idx.push_back(static_cast<uint32_t>(i * n + j0));
            weights.push_back(wscale * (1.0 - f));
            row_ptr[row + 1]++;
          }
          if (j0 + 1 >= 0 && j0 + 1 < static_cast<long>(n) && f > 0) {
            col_idx.push_back(static_cast<uint32_t>(i * n + j0 + 1));
            weights.push_back(wscale * f);
            row_ptr[row + 1]++;
          }
        }
      } else {
        // step over columns (x), interpolate in y
        for (size_t j = 0; j < n; ++j) {
          const double x = static_cast<double>(j) - half;
          const double y = (t - x * co) / si;
          const double ifl = y + half;
          const long i0 = static_cast<long>(std::floor(ifl));
          const double f = ifl - static_cast<double>(i0);
          if (i0 >= 0 && i0 < static_cast<long>(n) && 1.0 - f > 0) {
            col_idx.push_back(static_cast<uint32_t>(static_cast<size_t>(i0) * n + j));
            weights.push_back(wscale * (1.0 - f));
            row_ptr[row + 1]++;
          }
          if (i0 + 1 >= 0 && i0 + 1 < static_cast<long>(n) && f > 0) {
            col_idx.push_back(static_cast<uint32_t>(static_cast<size_t>(i0 + 1) * n + j));
            weights.push_back(wscale * f);
            row_ptr[row + 1]++;
          }
        }
      }
    }
  }
  for (size_t i = 0; i < na * nd; ++i) row_ptr[i + 1] += row_ptr[i];
  return SparseOperator(na * nd, n * n, std::move(row_ptr), std::move(col_idx),
                        std::move(weights));
}

Sinogram radon_forward(const Tensor& image, const ParallelGeometry& geom,
                       const SparseOperator& op) {
  if (image.rank() != 2 || image.dim(0) != geom.n_px || image.dim(1) != geom.n_px)
    throw std::invalid_argument("radon_forward: image/geometry size mismatch");
  Tensor flat = op.apply(image.reshaped({image.numel()}));
  Sinogram s;
  s.data = flat.reshaped({geom.num_angles, geom.num_detector_pixels});
  return s;
}

namespace {

// In-place radix-2 complex FFT (inverse when sign = +1, unnormalized).
void fft(std::vector<std::complex<double>>& a, int sign) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

Tensor ramp_filter_rows(const Tensor& sino, double detector_spacing,
                        FbpFilter filter) {
  if (sino.rank() != 2) throw std::invalid_argument("ramp_filter_rows: rank-2 expected");
  const size_t na = sino.dim(0), nd = sino.dim(1);
  const size_t nfft = next_pow2(2 * nd);
  const double dt = detector_spacing;

  std::vector<double> response(nfft);
  for (size_t k = 0; k < nfft; ++k) {
    const size_t kk = std::min(k, nfft - k);
    double h = static_cast<double>(kk) / (static_cast<double>(nfft) * dt);
    if (filter == FbpFilter::Hann) {
      h *= 0.5 * (1.0 + std::cos(2.0 * M_PI * static_cast<double>(kk) /
                                 static_cast<double>(nfft)));
    }
    response[k] = h;
  }

  Tensor out({na, nd});
  std::vector<std::complex<double>> buf(nfft);
  for (size_t a = 0; a < na; ++a) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (size_t d = 0; d < nd; ++d) buf[d] = sino[a * nd + d];
    fft(buf, -1);
    for (size_t k = 0; k < nfft; ++k) buf[k] *= response[k];
    fft(buf, +1);
    for (size_t d = 0; d < nd; ++d)
      out[a * nd + d] = buf[d].real() / static_cast<double>(nfft);
  }
  return out;
}

Tensor fbp(const Sinogram& sino, const ParallelGeometry& geom, FbpFilter filter) {
  if (geom.num_angles < 2) throw std::invalid_argument("fbp: need at least 2 angles");
  if (sino.data.rank() != 2 || sino.data.dim(0) != geom.num_angles ||
      sino.data.dim(1) != geom.num_detector_pixels)
    throw std::invalid_argument("fbp: sinogram/geometry mismatch");
  const size_t n = geom.n_px, na = geom.num_angles, nd = geom.num_detector_pixels;
  const Tensor q = ramp_filter_rows(sino.data, geom.detector_spacing, filter);

  const double half = (static_cast<double>(n) - 1.0) / 2.0;
  const double dhalf = (static_cast<double>(nd) - 1.0) / 2.0;
  const auto angles = geom.angles();
  const double dtheta = M_PI / static_cast<double>(na);

  Tensor img({n, n});
  for (size_t a = 0; a < na; ++a) {
    const double co = std::cos(angles[a]), si = std::sin(angles[a]);
    const double* qa = q.data() + a * nd;
    for (size_t i = 0; i < n; ++i) {
      const double y = static_cast<double>(i) - half;
      for (size_t j = 0; j < n; ++j) {
        const double x = static_cast<double>(j) - half;
        const double t = (x * co + y * si) / geom.detector_spacing + dhalf;
        const long d0 = static_cast<long>(std::floor(t));
        if (d0 < -1 || d0 >= static_cast<long>(nd)) continue;
        const double f = t - static_cast<double>(d0);
        double v = 0.0;
        if (d0 >= 0) v += qa[d0] * (1.0 - f);
        if (d0 + 1 < static_cast<long>(nd)) v += qa[d0 + 1] * f;
        img[i * n + j] += v * dtheta;
      }
    }
  }
  return img;
}

Tensor filtered_adjoint(const Tensor& sino, const SparseOperator& op,
                        size_t n_px, double scale, FbpFilter filter,
                        double detector_spacing) {
  Tensor q = ramp_filter_rows(sino, detector_spacing, filter);
  Tensor x = op.apply_adjoint(q.reshaped({q.numel()}));
  for (size_t i = 0; i < x.numel(); ++i) x[i] *= scale;
  return x.reshaped({n_px, n_px});
}

Sinogram add_gaussian_noise(const Sinogram& sino, double rel_level, uint64_t seed) {
  if (rel_level < 0) throw std::invalid_argument("add_gaussian_noise: negative level");
  Sinogram out = sino;
  out.noise = {NoiseSpec::Kind::Gaussian, rel_level};
  if (rel_level == 0.0) return out;
  double mean_abs = 0.0;
  for (size_t i = 0; i < sino.data.numel(); ++i) mean_abs += std::fabs(sino.data[i]);
  mean_abs /= static_cast<double>(sino.data.numel());
  const double sigma = rel_level * mean_abs;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  for (size_t i = 0; i < out.data.numel(); ++i) out.data[i] += dist(rng);
  return out;
}

Sinogram simulate_poisson_prelog(const Tensor& image_mu, const LinearOp& op,
                                 size_t rows, size_t num_angles,
                                 double n0, double mu_max, uint64_t seed,
                                 bool sample) {
  if (n0 <= 0) throw std::invalid_argument("simulate_poisson_prelog: N0 must be > 0");
  Tensor ax = op.apply(image_mu.reshaped({image_mu.numel()}));
  for (size_t i = 0; i < ax.numel(); ++i)
    if (ax[i] < 0)
      throw std::invalid_argument("simulate_poisson_prelog: negative projection value");
  Tensor y({rows});
  if (!sample) {
    for (size_t i = 0; i < rows; ++i) y[i] = ax[i] / mu_max;
  } else {
    std::mt19937_64 rng(seed);
    for (size_t i = 0; i < rows; ++i) {
      const double lambda = n0 * std::exp(-ax[i]);
      std::poisson_distribution<long long> pois(lambda);
      double n1 = static_cast<double>(pois(rng));
      n1 = std::max(n1, 0.1);  // avoid ln(0)
      y[i] = -std::log(n1 / n0) / mu_max;
    }
  }
  Sinogram s;
  s.data = y.reshaped({num_angles, rows / num_angles});
  s.noise = {sample ? NoiseSpec::Kind::Poisson : NoiseSpec::Kind::None, n0};
  return s;
}

double hu_to_mu(double x_hu) { return (20.0 - 0.02) * x_hu / 1000.0 + 20.0; }

Tensor generate_ellipses(size_t n_px, size_t max_ellipses, uint64_t seed) {
  if (n_px < 16) throw std::invalid_argument("generate_ellipses: n_px must be >= 16");
  Tensor img({n_px, n_px});
  if (max_ellipses == 0) return img;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> count_dist(std::min<size_t>(3, max_ellipses),
                                                   max_ellipses);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const size_t count = count_dist(rng);
  const double half = (static_cast<double>(n_px) - 1.0) / 2.0;
  for (size_t e = 0; e < count; ++e) {
    const double cx = (unit(rng) - 0.5) * 0.7;
    const double cy = (unit(rng) - 0.5) * 0.7;
    const double sa = 0.05 + 0.30 * unit(rng);
    const double sb = 0.05 + 0.30 * unit(rng);
    const double phi = M_PI * unit(rng);
    const double val = -0.4 + 1.4 * unit(rng);
    const double cph = std::cos(phi), sph = std::sin(phi);
    for (size_t i = 0; i < n_px; ++i) {
      const double v = (static_cast<double>(i) - half) / half - cy;
      for (size_t j = 0; j < n_px; ++j) {
        const double u = (static_cast<double>(j) - half) / half - cx;
        const double ur = u * cph + v * sph;
        const double vr = -u * sph + v * cph;
        if ((ur / sa) * (ur / sa) + (vr / sb) * (vr / sb) <= 1.0)
          img[i * n_px + j] += val;
      }
    }
  }
  for (size_t i = 0; i < img.numel(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
  return img;
}

Tensor disk_phantom(size_t n_px, double radius_frac) {
  Tensor img({n_px, n_px});
  const double half = (static_cast<double>(n_px) - 1.0) / 2.0;
  const double r = radius_frac * half;
  for (size_t i = 0; i < n_px; ++i)
    for (size_t j = 0; j < n_px; ++j) {
      const double y = static_cast<double>(i) - half;
      const double x = static_cast<double>(j) - half;
      if (x * x + y * y <= r * r) img[i * n_px + j] = 1.0;
    }
  return img;
}

}  // namespace svddip
