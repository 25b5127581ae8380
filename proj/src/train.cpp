#include "svddip/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace svddip {

namespace fs = std::filesystem;

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t k) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_metrics_csv(const RunMetrics& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "iteration,objective,data_term,tv,psnr\n";
  for (const auto& r : m.records)
    os << r.iteration << "," << fmt(r.objective) << "," << fmt(r.data_term)
       << "," << fmt(r.tv) << "," << fmt(r.psnr) << "\n";
}

RunMetrics read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "iteration,objective,data_term,tv,psnr")
    throw std::runtime_error("bad metrics CSV header in " + path);
  RunMetrics m;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    MetricRecord r;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    if (!(ls >> r.iteration >> r.objective >> r.data_term >> r.tv >> r.psnr))
      throw std::runtime_error("bad metrics CSV row in " + path);
    m.records.push_back(r);
  }
  return m;
}

void write_summary_csv(const RunSummary& s, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "Final,Max,MaxIteration,Init,MaxMinusFinal,FinalMinusInit\n";
  os << fmt(s.final_psnr) << "," << fmt(s.max_psnr) << "," << s.argmax_iteration
     << "," << fmt(s.init_psnr) << "," << fmt(s.max_minus_final) << ","
     << fmt(s.final_minus_init) << "\n";
}

void write_sv_trace_csv(const std::vector<std::vector<SvTraceEntry>>& traces,
                        const std::vector<LayerAddress>& addresses,
                        const std::string& path) {
  if (traces.size() != addresses.size())
    throw std::invalid_argument("write_sv_trace_csv: trace/address count mismatch");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "layer,index,initial,current\n";
  for (size_t l = 0; l < traces.size(); ++l)
    for (const auto& e : traces[l])
      os << addresses[l].to_string() << "," << e.index << "," << fmt(e.initial)
         << "," << fmt(e.current) << "\n";
}

RunSummary summarize(const RunMetrics& metrics) {
  if (metrics.records.empty())
    throw std::invalid_argument("summarize: empty metrics");
  RunSummary s;
  s.init_psnr = metrics.records.front().psnr;
  s.final_psnr = metrics.records.back().psnr;
  s.max_psnr = metrics.records.front().psnr;
  s.argmax_iteration = metrics.records.front().iteration;
  for (const auto& r : metrics.records) {
    if (r.psnr > s.max_psnr) {
      s.max_psnr = r.psnr;
      s.argmax_iteration = r.iteration;
    }
  }
  s.max_minus_final = s.max_psnr - s.final_psnr;
  s.final_minus_init = s.final_psnr - s.init_psnr;
  return s;
}

SummaryAggregate aggregate(const std::vector<RunMetrics>& runs) {
  if (runs.empty()) throw std::invalid_argument("aggregate: no runs");
  std::vector<RunSummary> sums;
  for (const auto& r : runs) sums.push_back(summarize(r));
  const double n = static_cast<double>(sums.size());
  auto mean_sd = [&](auto getter) {
    double mu = 0;
    for (const auto& s : sums) mu += getter(s);
    mu /= n;
    double var = 0;
    for (const auto& s : sums) var += (getter(s) - mu) * (getter(s) - mu);
    return std::make_pair(mu, std::sqrt(var / n));
  };
  SummaryAggregate agg;
  auto assign = [&](double RunSummary::*field) {
    auto [mu, sd] = mean_sd([&](const RunSummary& s) { return s.*field; });
    agg.mean.*field = mu;
    agg.sd.*field = sd;
  };
  assign(&RunSummary::final_psnr);
  assign(&RunSummary::max_psnr);
  assign(&RunSummary::init_psnr);
  assign(&RunSummary::max_minus_final);
  assign(&RunSummary::final_minus_init);
  auto [mi, si] = mean_sd(
      [](const RunSummary& s) { return static_cast<double>(s.argmax_iteration); });
  agg.mean.argmax_iteration = static_cast<size_t>(std::lround(mi));
  agg.sd.argmax_iteration = static_cast<size_t>(std::lround(si));
  return agg;
}

std::vector<std::vector<SvTraceEntry>> trace_singular_values(
    Network& net, const std::vector<LayerAddress>& addresses) {
  std::vector<std::vector<SvTraceEntry>> traces;
  for (const auto& addr : addresses) {
    ConvUnit& unit = net.conv_at(addr);
    if (!unit.svd)
      throw std::invalid_argument("trace_singular_values: not an SVD layer: " +
                                  addr.to_string());
    std::vector<SvTraceEntry> t;
    for (size_t i = 0; i < unit.s.value.numel(); ++i)
      t.push_back({i, unit.s_init[i], unit.s.value[i]});
    traces.push_back(std::move(t));
  }
  return traces;
}

void pretrain(const PretrainConfig& cfg, const std::string& out_dir) {
  if (cfg.dataset_size < 1)
    throw std::invalid_argument("pretrain: dataset_size must be >= 1");
  const SparseOperator op = build_parallel_operator(cfg.geom);
  const size_t n = cfg.geom.n_px;

  // On-the-fly dataset, deterministic per seed.
  std::vector<Tensor> inputs, targets;
  inputs.reserve(cfg.dataset_size);
  targets.reserve(cfg.dataset_size);
  for (size_t k = 0; k < cfg.dataset_size; ++k) {
    Tensor phantom = generate_ellipses(n, cfg.max_ellipses, mix_seed(cfg.seed, 2 * k));
    Sinogram sino = radon_forward(phantom, cfg.geom, op);
    switch (cfg.noise.kind) {
      case NoiseSpec::Kind::Gaussian:
        sino = add_gaussian_noise(sino, cfg.noise.level, mix_seed(cfg.seed, 2 * k + 1));
        break;
      case NoiseSpec::Kind::Poisson:
        sino = simulate_poisson_prelog(phantom, op, op.rows(), cfg.geom.num_angles,
                                       cfg.noise.level, cfg.mu_max,
                                       mix_seed(cfg.seed, 2 * k + 1));
        break;
      case NoiseSpec::Kind::None:
        break;
    }
    inputs.push_back(fbp(sino, cfg.geom).reshaped({1, n, n}));
    targets.push_back(std::move(phantom));
  }
  pretrain(cfg, inputs, targets, out_dir);
}

void pretrain(const PretrainConfig& cfg, const std::vector<Tensor>& inputs,
              const std::vector<Tensor>& targets, const std::string& out_dir) {
  if (inputs.empty() || inputs.size() != targets.size())
    throw std::invalid_argument("pretrain: empty or mismatched dataset");
  cfg.model.validate();
  fs::create_directories(out_dir);
  const size_t n = inputs.front().dim(inputs.front().rank() - 1);
  const size_t dataset_size = inputs.size();

  Network net = build_unet(cfg.model, mix_seed(cfg.seed, 1u << 20));
  auto params = net.trainable_parameters();
  AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};

  std::vector<size_t> order(dataset_size);
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 1u << 21));

  std::ostringstream loss_rows;
  const std::string ckpt_dir = (fs::path(out_dir) / "checkpoint").string();
  size_t step = 0;
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (size_t b = 0; b < dataset_size; b += cfg.batch_size) {
      for (Parameter* p : params) p->zero_grad();
      double batch_loss = 0.0;
      size_t count = 0;
      for (size_t i = b; i < std::min(b + cfg.batch_size, dataset_size); ++i) {
        Tape tape;
        Var out = net.forward(tape, tape.constant(inputs[order[i]]));
        Var gt = tape.constant(targets[order[i]].reshaped({1, n, n}));
        Var diff = tape.sub(out, gt);
        Var loss = tape.mean(tape.mul(diff, diff));
        batch_loss += tape.value(loss)[0];
        tape.backward(loss);
        ++count;
      }
      batch_loss /= static_cast<double>(count);
      if (!std::isfinite(batch_loss)) {
        std::ofstream(fs::path(out_dir) / "pretrain_loss.csv")
            << "step,loss\n" << loss_rows.str();
        throw std::runtime_error("pretrain: numerical failure (non-finite loss); "
                                 "last good checkpoint retained");
      }
      // grads were accumulated over the batch; average them
      for (Parameter* p : params)
        for (size_t j = 0; j < p->grad.numel(); ++j)
          p->grad[j] /= static_cast<double>(count);
      adam_step(params, adam);
      loss_rows << step << "," << fmt(batch_loss) << "\n";
      ++step;
    }
    save_checkpoint(net, ckpt_dir);
  }
  std::ofstream(fs::path(out_dir) / "pretrain_loss.csv")
      << "step,loss\n" << loss_rows.str();
}

DipRunResult run_dip(const DipRunConfig& cfg, const Sinogram& y,
                     const LinearOp& op, const Tensor& fbp_input,
                     const std::optional<Tensor>& x_gt,
                     const std::string& metrics_csv) {
  cfg.model.validate();
  if (cfg.variant != DipVariant::Dip && cfg.checkpoint.empty())
    throw std::invalid_argument("run_dip: edip/svd-dip require a checkpoint");

  Network net = build_unet(cfg.model, mix_seed(cfg.seed, 7));
  if (cfg.variant != DipVariant::Dip) load_checkpoint(net, cfg.checkpoint);

  std::vector<LayerAddress> addrs;
  if (cfg.variant == DipVariant::SvdDip) {
    addrs = cfg.svd_addresses.empty()
                ? default_svd_addresses(cfg.model, cfg.keep_first_down)
                : cfg.svd_addresses;
    replace_with_svd(net, addrs, cfg.trunc);
    net.set_all_trainable(false);
    for (const auto& a : addrs) net.conv_at(a).s.trainable = true;
    if (cfg.train_unreplaced) {
      auto is_replaced = [&](const LayerAddress& a) {
        return std::find(addrs.begin(), addrs.end(), a) != addrs.end();
      };
      for (size_t i = 0; i < net.down.size(); ++i)
        for (size_t j = 0; j < net.down[i].size(); ++j)
          if (!is_replaced({LayerAddress::Kind::Down, i, j})) {
            net.down[i][j].conv.weight.trainable = true;
            net.down[i][j].conv.bias.trainable = true;
            net.down[i][j].gn_gamma.trainable = true;
            net.down[i][j].gn_beta.trainable = true;
          }
    }
    if (cfg.train_norm_affine) {
      for (auto& blocks : net.down)
        for (auto& b : blocks) b.gn_gamma.trainable = b.gn_beta.trainable = true;
      for (auto& blocks : net.up)
        for (auto& b : blocks) b.gn_gamma.trainable = b.gn_beta.trainable = true;
    }
  } else {
    net.set_all_trainable(true);
  }

  const size_t n = fbp_input.dim(fbp_input.rank() - 1);
  Tensor z;
  if (cfg.variant == DipVariant::Dip) {
    z = Tensor({cfg.model.in_channels, n, n});
    std::mt19937_64 rng(mix_seed(cfg.seed, 11));
    std::normal_distribution<double> dist(0.0, cfg.input_noise_std);
    for (size_t i = 0; i < z.numel(); ++i) z[i] = dist(rng);
  } else {
    z = fbp_input.reshaped({cfg.model.in_channels, n, n});
  }

  Objective obj;
  obj.kind = cfg.loss_kind;
  obj.gamma = cfg.gamma;
  obj.op = &op;
  obj.y = y.data;
  obj.n0 = cfg.n0;
  obj.mu_max = cfg.mu_max;

  double data_range = cfg.psnr_data_range;
  if (x_gt && data_range <= 0) {
    data_range = 0;
    for (size_t i = 0; i < x_gt->numel(); ++i) data_range = std::max(data_range, (*x_gt)[i]);
    if (data_range <= 0) data_range = 1.0;
  }

  auto params = net.trainable_parameters();
  AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};

  DipRunResult result;
  auto flush = [&]() {
    if (!metrics_csv.empty()) write_metrics_csv(result.metrics, metrics_csv);
  };

  for (size_t it = 0; it <= cfg.iterations; ++it) {
    Tape tape;
    Var out = net.forward(tape, tape.constant(z));
    Var img2d = tape.make_node(  // drop the leading channel dim for the objective
        tape.value(out).reshaped({n, n}), {out},
        [oi = out.idx](Tape& t, Tape::Node& o, std::vector<Tape::Node*>&) {
          t.add_grad(oi, o.grad.reshaped(t.at(oi).value.shape()));
        });
    ObjectiveTerms terms = objective_eval(tape, obj, img2d);

    MetricRecord rec;
    rec.iteration = it;
    rec.objective = tape.value(terms.total)[0];
    rec.data_term = tape.value(terms.data_term)[0];
    rec.tv = tape.value(terms.tv_term)[0];
    rec.psnr = x_gt ? psnr(tape.value(img2d), *x_gt, data_range)
                    : std::numeric_limits<double>::quiet_NaN();
    result.metrics.records.push_back(rec);
    result.reconstruction = tape.value(img2d);

    if (!std::isfinite(rec.objective)) {
      flush();
      throw std::runtime_error("run_dip: numerical failure (non-finite objective) at iteration " +
                               std::to_string(it));
    }
    if (it == cfg.iterations) break;
    for (Parameter* p : params) p->zero_grad();
    tape.backward(terms.total);
    adam_step(params, adam);
    if (cfg.flush_every > 0 && it % cfg.flush_every == 0) flush();
  }
  flush();
  if (cfg.variant == DipVariant::SvdDip) {
    result.svd_addresses = addrs;
    result.sv_traces = trace_singular_values(net, addrs);
  }
  return result;
}

}  // namespace svddip
