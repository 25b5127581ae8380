#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "svddip/config.hpp"

namespace fs = std::filesystem;
using namespace svddip;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

uint64_t fnv1a_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for hashing: " + path);
  uint64_t h = 1469598103934665603ULL;
  char c;
  while (is.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::string noise_desc(const NoiseSpec& noise) {
  std::ostringstream os;
  os.precision(17);
  switch (noise.kind) {
    case NoiseSpec::Kind::None: os << "none"; break;
    case NoiseSpec::Kind::Gaussian: os << "gaussian " << noise.level; break;
    case NoiseSpec::Kind::Poisson: os << "poisson " << noise.level; break;
  }
  return os.str();
}

Sinogram make_sinogram(const Tensor& phantom, const RunSpec& spec,
                       const SparseOperator& op, uint64_t noise_seed) {
  Sinogram sino = radon_forward(phantom, spec.geom, op);
  switch (spec.noise.kind) {
    case NoiseSpec::Kind::Gaussian:
      return add_gaussian_noise(sino, spec.noise.level, noise_seed);
    case NoiseSpec::Kind::Poisson:
      return simulate_poisson_prelog(phantom, op, op.rows(), spec.geom.num_angles,
                                     spec.noise.level, spec.mu_max, noise_seed);
    case NoiseSpec::Kind::None:
      return sino;
  }
  return sino;
}

uint64_t mix(uint64_t seed, uint64_t k) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string sample_name(const char* stem, size_t k) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04zu.t", stem, k);
  return buf;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out,
                 size_t count, uint64_t seed) {
  const RunSpec spec = spec_path.empty() ? RunSpec{} : RunSpec::from_file(spec_path);
  fs::create_directories(out);
  std::ofstream(fs::path(out) / "resolved_spec.txt") << spec.serialize();

  const SparseOperator op = build_parallel_operator(spec.geom);
  std::ostringstream manifest;
  manifest << "count = " << count << "\n";
  manifest << "seed = " << seed << "\n";
  manifest << "noise = " << noise_desc(spec.noise) << "\n";
  for (size_t k = 0; k < count; ++k) {
    const Tensor phantom = generate_ellipses(spec.geom.n_px, spec.max_ellipses,
                                             mix(seed, 2 * k));
    const Sinogram clean = radon_forward(phantom, spec.geom, op);
    const Sinogram noisy = make_sinogram(phantom, spec, op, mix(seed, 2 * k + 1));
    const Tensor recon = fbp(noisy, spec.geom);

    struct { const char* stem; const Tensor* t; } files[] = {
        {"phantom", &phantom}, {"sino_clean", &clean.data},
        {"sino_noisy", &noisy.data}, {"fbp", &recon}};
    for (const auto& f : files) {
      const std::string name = sample_name(f.stem, k);
      const std::string path = (fs::path(out) / name).string();
      save_tensor(*f.t, path);
      char hex[24];
      std::snprintf(hex, sizeof(hex), "%016llx",
                    static_cast<unsigned long long>(fnv1a_file(path)));
      manifest << name << " " << hex << "\n";
    }
    if (spec.write_pgm)
      save_pgm16(phantom, (fs::path(out) / sample_name("phantom", k)).string() + ".pgm", 0.0, 1.0);
  }
  std::ofstream(fs::path(out) / "manifest.txt") << manifest.str();
  std::cout << "wrote " << count << " samples to " << out << "\n";
  return kExitOk;
}

int cmd_pretrain(const std::string& spec_path, const std::string& data,
                 const std::string& out, uint64_t seed) {
  const RunSpec spec = spec_path.empty() ? RunSpec{} : RunSpec::from_file(spec_path);
  fs::create_directories(out);
  std::ofstream(fs::path(out) / "resolved_spec.txt") << spec.serialize();
  const PretrainConfig cfg = spec.pretrain_config(seed);
  if (data.empty()) {
    pretrain(cfg, out);
  } else {
    std::ifstream manifest(fs::path(data) / "manifest.txt");
    if (!manifest)
      throw std::runtime_error("cannot open manifest: " +
                               (fs::path(data) / "manifest.txt").string());
    std::vector<Tensor> inputs, targets;
    std::string line;
    while (std::getline(manifest, line)) {
      std::istringstream ls(line);
      std::string name, hash;
      if (!(ls >> name >> hash)) continue;
      if (name.rfind("phantom_", 0) == 0 && name.size() > 2 &&
          name.substr(name.size() - 2) == ".t") {
        const size_t k = targets.size();
        targets.push_back(load_tensor((fs::path(data) / name).string()));
        Tensor in = load_tensor((fs::path(data) / sample_name("fbp", k)).string());
        const size_t n = in.dim(in.rank() - 1);
        inputs.push_back(in.reshaped({1, n, n}));
      }
    }
    pretrain(cfg, inputs, targets, out);
  }
  std::cout << "checkpoint written to " << (fs::path(out) / "checkpoint").string() << "\n";
  return kExitOk;
}

const char* variant_name(DipVariant v) {
  switch (v) {
    case DipVariant::Dip: return "dip";
    case DipVariant::Edip: return "edip";
    case DipVariant::SvdDip: return "svd-dip";
  }
  return "dip";
}

int cmd_reconstruct(const std::string& spec_path, const std::string& variant_str,
                    const std::string& sino_path, const std::string& checkpoint,
                    const std::string& gt_path, const std::string& out,
                    uint64_t seed) {
  DipVariant variant;
  if (variant_str == "dip") variant = DipVariant::Dip;
  else if (variant_str == "edip") variant = DipVariant::Edip;
  else if (variant_str == "svd-dip") variant = DipVariant::SvdDip;
  else throw CLI::ValidationError("--variant must be dip, edip, or svd-dip");

  if (variant != DipVariant::Dip && checkpoint.empty())
    throw CLI::ValidationError(variant_str + " requires --checkpoint");
  if (variant == DipVariant::Dip && !checkpoint.empty())
    std::cerr << "warning: --checkpoint is ignored for variant dip\n";

  const RunSpec spec = spec_path.empty() ? RunSpec{} : RunSpec::from_file(spec_path);
  fs::create_directories(out);
  std::ofstream(fs::path(out) / "resolved_spec.txt") << spec.serialize();

  const SparseOperator op = build_parallel_operator(spec.geom);
  Sinogram sino;
  sino.data = load_tensor(sino_path);
  sino.noise = spec.noise;
  if (sino.data.numel() != op.rows())
    throw std::invalid_argument("sinogram size does not match geometry");
  sino.data = sino.data.reshaped({spec.geom.num_angles, spec.geom.num_detector_pixels});
  const Tensor fbp_input = fbp(sino, spec.geom);

  std::optional<Tensor> gt;
  if (!gt_path.empty()) gt = load_tensor(gt_path);

  DipRunConfig cfg = spec.dip_config(variant, seed);
  if (variant == DipVariant::Dip) cfg.checkpoint.clear();
  else cfg.checkpoint = checkpoint;

  const std::string metrics_path = (fs::path(out) / "metrics.csv").string();
  const DipRunResult result = run_dip(cfg, sino, op, fbp_input, gt, metrics_path);

  save_tensor(result.reconstruction, (fs::path(out) / "recon.t").string());
  if (spec.write_pgm)
    save_pgm16(result.reconstruction, (fs::path(out) / "recon.pgm").string(), 0.0, 1.0);
  write_summary_csv(summarize(result.metrics), (fs::path(out) / "summary.csv").string());

  if (variant == DipVariant::SvdDip)
    write_sv_trace_csv(result.sv_traces, result.svd_addresses,
                       (fs::path(out) / "sv_trace.csv").string());
  std::ofstream(fs::path(out) / "run_info.txt")
      << "variant = " << variant_str << "\n"
      << "seed = " << seed << "\n"
      << "iterations = " << cfg.iterations << "\n";
  std::cout << "run written to " << out << "\n";
  return kExitOk;
}

struct CompareGroup {
  std::vector<RunMetrics> runs;
};

int cmd_compare(const std::vector<std::string>& run_dirs, const std::string& out) {
  if (run_dirs.empty()) throw CLI::ValidationError("--runs requires at least one directory");
  std::map<std::string, CompareGroup> groups;
  for (const auto& dir : run_dirs) {
    std::ifstream info(fs::path(dir) / "run_info.txt");
    std::string variant = "run";
    std::string line;
    while (info && std::getline(info, line)) {
      std::istringstream ls(line);
      std::string key, eq, val;
      if (ls >> key >> eq >> val && key == "variant") variant = val;
    }
    groups[variant].runs.push_back(
        read_metrics_csv((fs::path(dir) / "metrics.csv").string()));
  }

  // All runs must share one iteration grid.
  const std::vector<MetricRecord>* ref = nullptr;
  for (const auto& [name, g] : groups)
    for (const auto& r : g.runs) {
      if (!ref) ref = &r.records;
      if (r.records.size() != ref->size())
        throw std::invalid_argument("inconsistent iteration grids across runs");
      for (size_t i = 0; i < ref->size(); ++i)
        if (r.records[i].iteration != (*ref)[i].iteration)
          throw std::invalid_argument("inconsistent iteration grids across runs");
    }

  fs::create_directories(out);
  char buf[40];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };

  std::ofstream cs(fs::path(out) / "compare.csv");
  if (!cs) throw std::runtime_error("cannot open compare.csv for writing");
  cs << "iteration";
  for (const auto& [name, g] : groups)
    cs << "," << name << "_mean_psnr," << name << "_sd_psnr," << name
       << "_mean_tv," << name << "_sd_tv";
  cs << "\n";
  for (size_t i = 0; i < ref->size(); ++i) {
    cs << (*ref)[i].iteration;
    for (const auto& [name, g] : groups) {
      const double n = static_cast<double>(g.runs.size());
      double mp = 0, mt = 0;
      for (const auto& r : g.runs) {
        mp += r.records[i].psnr;
        mt += r.records[i].tv;
      }
      mp /= n;
      mt /= n;
      double vp = 0, vt = 0;
      for (const auto& r : g.runs) {
        vp += (r.records[i].psnr - mp) * (r.records[i].psnr - mp);
        vt += (r.records[i].tv - mt) * (r.records[i].tv - mt);
      }
      cs << "," << fmt(mp) << "," << fmt(std::sqrt(vp / n)) << "," << fmt(mt)
         << "," << fmt(std::sqrt(vt / n));
    }
    cs << "\n";
  }

  std::ofstream ss(fs::path(out) / "summary_compare.csv");
  ss << "variant,mean_Final,sd_Final,mean_Max,sd_Max,mean_Init,sd_Init,"
        "mean_MaxMinusFinal,sd_MaxMinusFinal\n";
  for (const auto& [name, g] : groups) {
    const SummaryAggregate agg = aggregate(g.runs);
    ss << name << "," << fmt(agg.mean.final_psnr) << "," << fmt(agg.sd.final_psnr)
       << "," << fmt(agg.mean.max_psnr) << "," << fmt(agg.sd.max_psnr) << ","
       << fmt(agg.mean.init_psnr) << "," << fmt(agg.sd.init_psnr) << ","
       << fmt(agg.mean.max_minus_final) << "," << fmt(agg.sd.max_minus_final)
       << "\n";
  }
  std::cout << "comparison written to " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised CT reconstruction with DIP, EDIP and SVD-DIP"};
  app.require_subcommand(1);

  std::string spec_path, out, data, variant, sino, checkpoint, gt;
  std::vector<std::string> runs;
  size_t count = 1;
  uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate phantom/sinogram/FBP samples");
  gen->add_option("--spec", spec_path, "run spec file (defaults to desk preset)");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--count", count, "number of samples");
  gen->add_option("--seed", seed, "RNG seed");

  auto* pre = app.add_subcommand("pretrain", "Pretrain the FBP post-processing U-Net");
  pre->add_option("--spec", spec_path, "run spec file");
  pre->add_option("--data", data, "gen-data directory (omit to generate on the fly)");
  pre->add_option("--out", out, "output directory")->required();
  pre->add_option("--seed", seed, "RNG seed");

  auto* rec = app.add_subcommand("reconstruct", "Run DIP / EDIP / SVD-DIP on one sinogram");
  rec->add_option("--spec", spec_path, "run spec file");
  rec->add_option("--variant", variant, "dip | edip | svd-dip")->required();
  rec->add_option("--sino", sino, "noisy sinogram tensor file")->required();
  rec->add_option("--checkpoint", checkpoint, "pretrained checkpoint directory");
  rec->add_option("--gt", gt, "ground-truth tensor file (enables PSNR)");
  rec->add_option("--out", out, "output directory")->required();
  rec->add_option("--seed", seed, "RNG seed");

  auto* cmp = app.add_subcommand("compare", "Aggregate runs into mean/SD CSVs");
  cmp->add_option("--runs", runs, "run directories")->required()->expected(-1);
  cmp->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (*gen) return cmd_gen_data(spec_path, out, count, seed);
    if (*pre) return cmd_pretrain(spec_path, data, out, seed);
    if (*rec) return cmd_reconstruct(spec_path, variant, sino, checkpoint, gt, out, seed);
    if (*cmp) return cmd_compare(runs, out);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    std::cerr << "error: " << msg << "\n";
    return msg.find("numerical failure") != std::string::npos ? kExitNumerical
                                                              : kExitIo;
  }
  return kExitUsage;
}
