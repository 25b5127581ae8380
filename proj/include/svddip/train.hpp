#pragma once

#include <optional>
#include <string>
#include <vector>

#include "svddip/ct.hpp"
#include "svddip/losses.hpp"
#include "svddip/unet.hpp"

namespace svddip {

struct PretrainConfig {
  size_t dataset_size = 200;
  ParallelGeometry geom;
  NoiseSpec noise{NoiseSpec::Kind::Gaussian, 0.05};
  size_t epochs = 20;
  size_t batch_size = 1;
  double lr = 1e-3;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  UNetConfig model;
  size_t max_ellipses = 8;
  double n0 = 4096.0;
  double mu_max = 81.35858;
};

enum class DipVariant { Dip, Edip, SvdDip };

struct DipRunConfig {
  DipVariant variant = DipVariant::Dip;
  size_t iterations = 1000;
  double lr = 1e-4;
  double gamma = 0.0;
  DataLossKind loss_kind = DataLossKind::SquaredL2;
  UNetConfig model;
  std::string checkpoint;  // edip / svd-dip
  uint64_t seed = 0;

  // svd-dip only
  std::vector<LayerAddress> svd_addresses;  // empty -> default (all down/up)
  size_t keep_first_down = 0;
  TruncationPolicy trunc = TruncationPolicy::none();
  bool train_unreplaced = false;  // also train params of unreplaced conv blocks
  bool train_norm_affine = false;

  double input_noise_std = 0.1;  // dip input z scale
  double n0 = 4096.0;
  double mu_max = 81.35858;
  double psnr_data_range = 0.0;  // 0 -> max of ground truth
  size_t flush_every = 100;
};

struct MetricRecord {
  size_t iteration;
  double objective;
  double data_term;
  double tv;
  double psnr;  // NaN when no ground truth
};

struct RunMetrics {
  std::vector<MetricRecord> records;
};

struct RunSummary {
  double final_psnr = 0;
  double max_psnr = 0;
  size_t argmax_iteration = 0;
  double init_psnr = 0;
  double max_minus_final = 0;
  double final_minus_init = 0;
};

struct SvTraceEntry {
  size_t index;
  double initial;
  double current;
};

struct DipRunResult {
  Tensor reconstruction;
  RunMetrics metrics;
  // svd-dip only: per-layer singular-value trace (initial vs final).
  std::vector<LayerAddress> svd_addresses;
  std::vector<std::vector<SvTraceEntry>> sv_traces;
};

// Trains the FBP post-processing U-Net on synthetically generated ellipse
// phantoms and writes checkpoint + loss curve CSV into out_dir.
void pretrain(const PretrainConfig& cfg, const std::string& out_dir);

// Same, but on an explicit dataset of (FBP input [1,n,n], phantom [n,n]) pairs.
void pretrain(const PretrainConfig& cfg, const std::vector<Tensor>& inputs,
              const std::vector<Tensor>& targets, const std::string& out_dir);

// The DIP/EDIP/SVD-DIP fine-tuning loop. `fbp_input` is the network input for
// edip / svd-dip (z = FBP(y)); the dip variant draws Gaussian noise instead.
// Metrics are recorded every iteration (record 0 = before any update) and
// flushed to metrics_csv every flush_every iterations when a path is given.
DipRunResult run_dip(const DipRunConfig& cfg, const Sinogram& y,
                     const LinearOp& op, const Tensor& fbp_input,
                     const std::optional<Tensor>& x_gt,
                     const std::string& metrics_csv = "");

RunSummary summarize(const RunMetrics& metrics);

// Per-column mean and population SD over runs.
struct SummaryAggregate {
  RunSummary mean;
  RunSummary sd;
};
SummaryAggregate aggregate(const std::vector<RunMetrics>& runs);

std::vector<std::vector<SvTraceEntry>> trace_singular_values(
    Network& net, const std::vector<LayerAddress>& addresses);

void write_metrics_csv(const RunMetrics& m, const std::string& path);
RunMetrics read_metrics_csv(const std::string& path);
void write_summary_csv(const RunSummary& s, const std::string& path);
void write_sv_trace_csv(const std::vector<std::vector<SvTraceEntry>>& traces,
                        const std::vector<LayerAddress>& addresses,
                        const std::string& path);

}  // namespace svddip
