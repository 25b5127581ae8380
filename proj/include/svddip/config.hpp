#pragma once

#include <string>

#include "svddip/train.hpp"

namespace svddip {

// Declarative run configuration: line-oriented "key = value" document with
// [section] headers. Every key defaults to the desk-scale preset; unknown
// sections or keys are rejected.
struct RunSpec {
  // [geometry]
  std::string preset = "desk";
  ParallelGeometry geom{20, 95, 1.0, 64};
  std::string matrix_file;  // fan-beam path: explicit operator file

  // [noise]
  NoiseSpec noise{NoiseSpec::Kind::Gaussian, 0.05};

  // [model]
  UNetConfig model;

  // [pretrain]
  size_t pre_dataset_size = 200;
  size_t pre_epochs = 12;
  size_t pre_batch_size = 1;
  double pre_lr = 1e-3;
  double pre_weight_decay = 0.0;
  size_t max_ellipses = 8;

  // [dip]
  size_t iterations = 5000;
  double lr = 3e-3;       // dip / edip
  double svd_lr = 1e-5;   // svd-dip singular values
  double gamma = 40.0;
  DataLossKind loss_kind = DataLossKind::SquaredL2;
  size_t keep_first_down = 0;
  TruncationPolicy trunc = TruncationPolicy::none();
  bool train_norm_affine = false;
  double input_noise_std = 0.1;
  double n0 = 4096.0;
  double mu_max = 81.35858;
  double psnr_data_range = 0.0;  // 0 -> per-image max of the reference
  size_t flush_every = 100;

  // [output]
  bool write_pgm = true;

  static RunSpec from_file(const std::string& path);
  static RunSpec from_string(const std::string& text);

  // Fully resolved key = value document, replayable through from_string.
  std::string serialize() const;

  PretrainConfig pretrain_config(uint64_t seed) const;
  DipRunConfig dip_config(DipVariant variant, uint64_t seed) const;
};

}  // namespace svddip
