#include "svddip/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace svddip {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<size_t> parse_size_list(const std::string& s) {
  std::vector<size_t> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(std::stoul(tok));
  }
  return out;
}

void apply_geometry_preset(RunSpec& spec, const std::string& preset) {
  if (preset == "desk") {
    spec.geom = {20, 95, 1.0, 64};
    spec.loss_kind = DataLossKind::SquaredL2;
    spec.gamma = 40.0;
    spec.lr = 3e-3;
    spec.svd_lr = 1e-5;
    spec.pre_weight_decay = 0.4;
  } else if (preset == "lodopab-like") {
    spec.geom = {200, 513, 1.0, 362};
    spec.noise = {NoiseSpec::Kind::Poisson, 4096.0};
    spec.loss_kind = DataLossKind::Poisson;
    spec.gamma = 4.0;
  } else if (preset == "mayo-like") {
    spec.geom = {1000, 513, 1.0, 362};
    spec.noise = {NoiseSpec::Kind::Poisson, 4096.0};
    spec.loss_kind = DataLossKind::Poisson;
    spec.gamma = 7.0;
  } else if (preset == "lotus-like") {
    spec.geom = {20, 429, 1.0, 128};
    spec.loss_kind = DataLossKind::MeanSquared;
    spec.gamma = 1e-4;
  } else {
    throw std::invalid_argument("unknown geometry preset: " + preset);
  }
  spec.preset = preset;
}

TruncationPolicy parse_trunc(const std::string& s) {
  if (s == "none") return TruncationPolicy::none();
  const size_t colon = s.find(':');
  if (colon != std::string::npos) {
    const std::string kind = s.substr(0, colon);
    const double v = std::stod(s.substr(colon + 1));
    if (kind == "rank") return TruncationPolicy::rank_fraction(v);
    if (kind == "thresh") return TruncationPolicy::threshold_fraction(v);
  }
  throw std::invalid_argument("bad truncation spec: " + s +
                              " (expected none | rank:P | thresh:T)");
}

DataLossKind parse_loss(const std::string& s) {
  if (s == "l2") return DataLossKind::SquaredL2;
  if (s == "mean") return DataLossKind::MeanSquared;
  if (s == "poisson") return DataLossKind::Poisson;
  throw std::invalid_argument("bad loss kind: " + s);
}

const char* loss_name(DataLossKind k) {
  switch (k) {
    case DataLossKind::SquaredL2: return "l2";
    case DataLossKind::MeanSquared: return "mean";
    case DataLossKind::Poisson: return "poisson";
  }
  return "l2";
}

std::string trunc_name(const TruncationPolicy& t) {
  std::ostringstream os;
  switch (t.kind) {
    case TruncationPolicy::Kind::None: return "none";
    case TruncationPolicy::Kind::RankFraction: os << "rank:" << t.value; break;
    case TruncationPolicy::Kind::ThresholdFraction: os << "thresh:" << t.value; break;
  }
  return os.str();
}

}  // namespace

RunSpec RunSpec::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open spec file: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return from_string(buf.str());
}

RunSpec RunSpec::from_string(const std::string& text) {
  RunSpec spec;
  std::istringstream is(text);
  std::string line, section;
  size_t lineno = 0;

  // Presets are applied first so explicit keys can override them.
  {
    std::istringstream pre(text);
    std::string pl, psec;
    while (std::getline(pre, pl)) {
      pl = trim(pl);
      if (pl.empty() || pl[0] == '#') continue;
      if (pl.front() == '[') {
        psec = pl.substr(1, pl.size() - 2);
        continue;
      }
      const size_t eq = pl.find('=');
      if (eq == std::string::npos) continue;
      if (psec == "geometry" && trim(pl.substr(0, eq)) == "preset")
        apply_geometry_preset(spec, trim(pl.substr(eq + 1)));
    }
  }

  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("bad section header at line " + std::to_string(lineno));
      section = line.substr(1, line.size() - 2);
      if (section != "geometry" && section != "noise" && section != "model" &&
          section != "pretrain" && section != "dip" && section != "output")
        throw std::invalid_argument("unknown section: [" + section + "]");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("expected key = value at line " + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (section.empty())
      throw std::invalid_argument("key outside any section at line " + std::to_string(lineno));

    if (section == "geometry") {
      if (key == "preset") continue;  // already applied
      else if (key == "num_angles") spec.geom.num_angles = std::stoul(val);
      else if (key == "num_detector_pixels") spec.geom.num_detector_pixels = std::stoul(val);
      else if (key == "detector_spacing") spec.geom.detector_spacing = std::stod(val);
      else if (key == "n_px") spec.geom.n_px = std::stoul(val);
      else if (key == "matrix_file") spec.matrix_file = val;
      else throw std::invalid_argument("unknown key in [geometry]: " + key);
    } else if (section == "noise") {
      if (key == "kind") {
        if (val == "none") spec.noise.kind = NoiseSpec::Kind::None;
        else if (val == "gaussian") spec.noise.kind = NoiseSpec::Kind::Gaussian;
        else if (val == "poisson") spec.noise.kind = NoiseSpec::Kind::Poisson;
        else throw std::invalid_argument("bad noise kind: " + val);
      } else if (key == "level") spec.noise.level = std::stod(val);
      else throw std::invalid_argument("unknown key in [noise]: " + key);
    } else if (section == "model") {
      if (key == "num_scales") spec.model.num_scales = std::stoul(val);
      else if (key == "channels") spec.model.channels = parse_size_list(val);
      else if (key == "kernel_size") spec.model.kernel_size = std::stoul(val);
      else if (key == "skip_channels") spec.model.skip_channels = parse_size_list(val);
      else if (key == "leaky_slope") spec.model.leaky_slope = std::stod(val);
      else if (key == "sigmoid_output") spec.model.sigmoid_output = std::stoul(val) != 0;
      else if (key == "norm_groups") spec.model.norm_groups = std::stoul(val);
      else throw std::invalid_argument("unknown key in [model]: " + key);
    } else if (section == "pretrain") {
      if (key == "dataset_size") spec.pre_dataset_size = std::stoul(val);
      else if (key == "epochs") spec.pre_epochs = std::stoul(val);
      else if (key == "batch_size") spec.pre_batch_size = std::stoul(val);
      else if (key == "lr") spec.pre_lr = std::stod(val);
      else if (key == "weight_decay") spec.pre_weight_decay = std::stod(val);
      else if (key == "max_ellipses") spec.max_ellipses = std::stoul(val);
      else throw std::invalid_argument("unknown key in [pretrain]: " + key);
    } else if (section == "dip") {
      if (key == "iterations") spec.iterations = std::stoul(val);
      else if (key == "lr") spec.lr = std::stod(val);
      else if (key == "svd_lr") spec.svd_lr = std::stod(val);
      else if (key == "gamma") spec.gamma = std::stod(val);
      else if (key == "loss") spec.loss_kind = parse_loss(val);
      else if (key == "keep_first_down") spec.keep_first_down = std::stoul(val);
      else if (key == "truncation") spec.trunc = parse_trunc(val);
      else if (key == "train_norm_affine") spec.train_norm_affine = std::stoul(val) != 0;
      else if (key == "input_noise_std") spec.input_noise_std = std::stod(val);
      else if (key == "n0") spec.n0 = std::stod(val);
      else if (key == "mu_max") spec.mu_max = std::stod(val);
      else if (key == "psnr_data_range") spec.psnr_data_range = std::stod(val);
      else if (key == "flush_every") spec.flush_every = std::stoul(val);
      else throw std::invalid_argument("unknown key in [dip]: " + key);
    } else if (section == "output") {
      if (key == "pgm") spec.write_pgm = std::stoul(val) != 0;
      else throw std::invalid_argument("unknown key in [output]: " + key);
    }
  }
  spec.model.validate();
  return spec;
}

std::string RunSpec::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << "[geometry]\n";
  os << "preset = " << preset << "\n";
  os << "num_angles = " << geom.num_angles << "\n";
  os << "num_detector_pixels = " << geom.num_detector_pixels << "\n";
  os << "detector_spacing = " << geom.detector_spacing << "\n";
  os << "n_px = " << geom.n_px << "\n";
  if (!matrix_file.empty()) os << "matrix_file = " << matrix_file << "\n";
  os << "[noise]\n";
  os << "kind = "
     << (noise.kind == NoiseSpec::Kind::None
             ? "none"
             : noise.kind == NoiseSpec::Kind::Gaussian ? "gaussian" : "poisson")
     << "\n";
  os << "level = " << noise.level << "\n";
  os << "[model]\n";
  os << "num_scales = " << model.num_scales << "\n";
  os << "channels = ";
  for (size_t i = 0; i < model.channels.size(); ++i)
    os << (i ? "," : "") << model.channels[i];
  os << "\n";
  os << "kernel_size = " << model.kernel_size << "\n";
  os << "skip_channels = ";
  for (size_t i = 0; i < model.skip_channels.size(); ++i)
    os << (i ? "," : "") << model.skip_channels[i];
  os << "\n";
  os << "leaky_slope = " << model.leaky_slope << "\n";
  os << "sigmoid_output = " << (model.sigmoid_output ? 1 : 0) << "\n";
  os << "norm_groups = " << model.norm_groups << "\n";
  os << "[pretrain]\n";
  os << "dataset_size = " << pre_dataset_size << "\n";
  os << "epochs = " << pre_epochs << "\n";
  os << "batch_size = " << pre_batch_size << "\n";
  os << "lr = " << pre_lr << "\n";
  os << "max_ellipses = " << max_ellipses << "\n";
  os << "[dip]\n";
  os << "iterations = " << iterations << "\n";
  os << "lr = " << lr << "\n";
  os << "svd_lr = " << svd_lr << "\n";
  os << "gamma = " << gamma << "\n";
  os << "loss = " << loss_name(loss_kind) << "\n";
  os << "keep_first_down = " << keep_first_down << "\n";
  os << "truncation = " << trunc_name(trunc) << "\n";
  os << "train_norm_affine = " << (train_norm_affine ? 1 : 0) << "\n";
  os << "input_noise_std = " << input_noise_std << "\n";
  os << "n0 = " << n0 << "\n";
  os << "mu_max = " << mu_max << "\n";
  os << "psnr_data_range = " << psnr_data_range << "\n";
  os << "flush_every = " << flush_every << "\n";
  os << "[output]\n";
  os << "pgm = " << (write_pgm ? 1 : 0) << "\n";
  return os.str();
}

PretrainConfig RunSpec::pretrain_config(uint64_t seed) const {
  PretrainConfig cfg;
  cfg.dataset_size = pre_dataset_size;
  cfg.geom = geom;
  cfg.noise = noise;
  cfg.epochs = pre_epochs;
  cfg.batch_size = pre_batch_size;
  cfg.lr = pre_lr;
  cfg.weight_decay = pre_weight_decay;
  cfg.seed = seed;
  cfg.model = model;
  cfg.max_ellipses = max_ellipses;
  cfg.n0 = n0;
  cfg.mu_max = mu_max;
  return cfg;
}

DipRunConfig RunSpec::dip_config(DipVariant variant, uint64_t seed) const {
  DipRunConfig cfg;
  cfg.variant = variant;
  cfg.iterations = iterations;
  cfg.lr = variant == DipVariant::SvdDip ? svd_lr : lr;
  cfg.gamma = gamma;
  cfg.loss_kind = loss_kind;
  cfg.model = model;
  cfg.seed = seed;
  cfg.keep_first_down = keep_first_down;
  cfg.trunc = trunc;
  cfg.train_norm_affine = train_norm_affine;
  cfg.input_noise_std = input_noise_std;
  cfg.n0 = n0;
  cfg.mu_max = mu_max;
  cfg.psnr_data_range = psnr_data_range;
  cfg.flush_every = flush_every;
  return cfg;
}

}  // namespace svddip
