#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace svddip {

enum class Precision : uint8_t { F32 = 0, F64 = 1 };

// Dense row-major n-dimensional array. Computation is always carried out in
// doubles; the precision flag controls on-disk storage width.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<size_t> shape, Precision prec = Precision::F64)
      : shape_(std::move(shape)), prec_(prec) {
    for (size_t d : shape_)
      if (d == 0) throw std::invalid_argument("Tensor: zero dimension");
    data_.assign(numel_of(shape_), 0.0);
  }

  Tensor(std::vector<size_t> shape, std::vector<double> data,
         Precision prec = Precision::F64)
      : shape_(std::move(shape)), data_(std::move(data)), prec_(prec) {
    if (numel_of(shape_) != data_.size())
      throw std::invalid_argument("Tensor: shape/data size mismatch");
  }

  static Tensor full(std::vector<size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }
  static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t numel() const { return data_.size(); }
  size_t dim(size_t i) const { return shape_.at(i); }
  Precision precision() const { return prec_; }
  void set_precision(Precision p) { prec_ = p; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double& at(std::initializer_list<size_t> idx) { return data_[offset(idx)]; }
  double at(std::initializer_list<size_t> idx) const { return data_[offset(idx)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<size_t> new_shape) const {
    if (numel_of(new_shape) != numel())
      throw std::invalid_argument("reshape: element count mismatch");
    return Tensor(std::move(new_shape), data_, prec_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const;

  static size_t numel_of(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
  }

private:
  size_t offset(std::initializer_list<size_t> idx) const {
    if (idx.size() != shape_.size())
      throw std::invalid_argument("Tensor::at: rank mismatch");
    size_t off = 0, i = 0;
    for (size_t v : idx) {
      off = off * shape_[i] + v;
      ++i;
    }
    return off;
  }

  std::vector<size_t> shape_;
  std::vector<double> data_;
  Precision prec_ = Precision::F64;
};

// Binary tensor file format:
//   magic "SVDDIPT1", 1-byte precision flag, 1-byte rank,
//   rank x uint32 little-endian dims, raw little-endian floats.
void save_tensor(const Tensor& t, const std::string& path);
Tensor load_tensor(const std::string& path);

// 16-bit PGM export, values linearly mapped from [lo, hi] to [0, 65535].
void save_pgm16(const Tensor& img, const std::string& path, double lo, double hi);

}  // namespace svddip
