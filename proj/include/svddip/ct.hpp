#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svddip/tape.hpp"
#include "svddip/tensor.hpp"

namespace svddip {

struct NoiseSpec {
  enum class Kind { None, Gaussian, Poisson } kind = Kind::None;
  double level = 0.0;  // rel_level for Gaussian, N0 for Poisson
};

// Projection data [num_angles, num_detector_pixels] with its noise descriptor.
struct Sinogram {
  Tensor data;
  NoiseSpec noise;
};

// Parallel-beam acquisition: uniform angles over [0, pi), centered detector,
// square image of side n_px with unit pixel size.
struct ParallelGeometry {
  size_t num_angles = 0;
  size_t num_detector_pixels = 0;
  double detector_spacing = 1.0;
  size_t n_px = 0;

  std::vector<double> angles() const;
  // True when the detector span covers the image diagonal.
  bool covers_image() const;
};

// Sparse forward operator in CSR layout; also usable as a tape LinearOp.
class SparseOperator : public LinearOp {
public:
  SparseOperator(size_t rows, size_t cols,
                 std::vector<uint32_t> row_ptr, std::vector<uint32_t> col_idx,
                 std::vector<double> weights);

  // Builds from coordinate triplets; duplicate (row,col) pairs rejected.
  static SparseOperator from_coo(size_t rows, size_t cols,
                                 const std::vector<uint32_t>& r,
                                 const std::vector<uint32_t>& c,
                                 const std::vector<double>& w);

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t nnz() const { return weights_.size(); }

  Tensor apply(const Tensor& x) const override;
  Tensor apply_adjoint(const Tensor& y) const override;

  // Text format: header "SVDDIPMAT1 rows cols nnz", then "row col weight" lines.
  void save(const std::string& path) const;
  static SparseOperator load(const std::string& path);

private:
  size_t rows_, cols_;
  std::vector<uint32_t> row_ptr_, col_idx_;
  std::vector<double> weights_;
};

// Assembles the parallel-beam system matrix with Joseph's linear-interpolation
// ray tracing; row index = angle * num_detector_pixels + detector.
SparseOperator build_parallel_operator(const ParallelGeometry& geom);

Sinogram radon_forward(const Tensor& image, const ParallelGeometry& geom,
                       const SparseOperator& op);

enum class FbpFilter { RamLak, Hann };

// Frequency-domain ramp filtering per angle followed by back-projection with
// linear detector sampling.
Tensor fbp(const Sinogram& sino, const ParallelGeometry& geom,
           FbpFilter filter = FbpFilter::RamLak);

// Ramp-filters each angular row of the sinogram (shared by fbp and the
// matrix-operator filtered-adjoint path).
Tensor ramp_filter_rows(const Tensor& sino, double detector_spacing,
                        FbpFilter filter);

// FBP substitute for explicit-matrix operators: adjoint of the ramp-filtered
// data, multiplied by a caller-supplied calibration scale.
Tensor filtered_adjoint(const Tensor& sino, const SparseOperator& op,
                        size_t n_px, double scale, FbpFilter filter,
                        double detector_spacing = 1.0);

Sinogram add_gaussian_noise(const Sinogram& sino, double rel_level, uint64_t seed);

// Pre-log Poisson model: N1 ~ Pois(N0 exp(-Ax)), counts clamped to >= 0.1,
// y = -ln(N1/N0)/mu_max. With sample == false returns the noise-free
// expectation y = Ax/mu_max exactly.
Sinogram simulate_poisson_prelog(const Tensor& image_mu, const LinearOp& op,
                                 size_t rows, size_t num_angles,
                                 double n0, double mu_max, uint64_t seed,
                                 bool sample = true);

double hu_to_mu(double x_hu);

Tensor generate_ellipses(size_t n_px, size_t max_ellipses, uint64_t seed);

// Centered disk test phantom, value 1 inside radius (fraction of half-side).
Tensor disk_phantom(size_t n_px, double radius_frac);

}  // namespace svddip
