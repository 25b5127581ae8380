#include "svddip/unet.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace svddip {

namespace fs = std::filesystem;

void UNetConfig::validate() const {
  if (num_scales < 1) throw std::invalid_argument("UNetConfig: num_scales >= 1 required");
  if (channels.size() != num_scales)
    throw std::invalid_argument("UNetConfig: channels size must equal num_scales");
  for (size_t c : channels)
    if (c == 0) throw std::invalid_argument("UNetConfig: zero channel count");
  if (kernel_size % 2 != 1)
    throw std::invalid_argument("UNetConfig: kernel size must be odd");
  if (num_scales > 1 && skip_channels.size() != num_scales - 1)
    throw std::invalid_argument("UNetConfig: skip_channels size must be num_scales-1");
  if (in_channels == 0 || out_channels == 0)
    throw std::invalid_argument("UNetConfig: zero channel count");
}

std::string UNetConfig::serialize() const {
  std::ostringstream os;
  os << "num_scales=" << num_scales << ";channels=";
  for (size_t c : channels) os << c << ",";
  os << ";kernel=" << kernel_size << ";skips=";
  for (size_t c : skip_channels) os << c << ",";
  os << ";slope=" << leaky_slope << ";sigmoid=" << (sigmoid_output ? 1 : 0)
     << ";groups=" << norm_groups << ";in=" << in_channels << ";out=" << out_channels;
  return os.str();
}

uint64_t UNetConfig::hash() const {
  const std::string s = serialize();
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string LayerAddress::to_string() const {
  static const char* names[] = {"down", "up", "skip", "out"};
  std::ostringstream os;
  os << names[static_cast<int>(kind)] << ":" << scale << ":" << conv;
  return os.str();
}

LayerAddress LayerAddress::parse(const std::string& s) {
  LayerAddress a;
  std::istringstream is(s);
  std::string kind, sc, cv;
  if (!std::getline(is, kind, ':') || !std::getline(is, sc, ':') ||
      !std::getline(is, cv, ':'))
    throw std::invalid_argument("bad layer address: " + s);
  if (kind == "down") a.kind = Kind::Down;
  else if (kind == "up") a.kind = Kind::Up;
  else if (kind == "skip") a.kind = Kind::Skip;
  else if (kind == "out") a.kind = Kind::Out;
  else throw std::invalid_argument("bad layer address kind: " + s);
  a.scale = std::stoul(sc);
  a.conv = std::stoul(cv);
  return a;
}

Var ConvUnit::forward(Tape& tape, Var x) {
  if (!svd) {
    return tape.conv2d(x, tape.param(weight), tape.param(bias), stride, pad);
  }
  Var h = tape.conv2d(x, tape.param(v_tensor), std::nullopt, stride, pad);
  h = tape.scale_channels(h, tape.param(s));
  return tape.conv2d(h, tape.param(u_tensor), tape.param(bias), 1, 0);
}

void ConvUnit::replace_with_svd(const TruncationPolicy& policy) {
  if (svd) throw std::invalid_argument("conv already SVD-replaced");
  ConvFactorization cf = factorize_conv(weight.value, policy);
  u_tensor = Parameter(std::move(cf.u_tensor), false);
  v_tensor = Parameter(std::move(cf.v_tensor), false);
  s = Parameter(Tensor({cf.s.size()}, std::vector<double>(cf.s)), true);
  s_init = cf.s;
  bias.trainable = false;
  svd = true;
  weight = Parameter();  // plain weight no longer participates
}

size_t ConvUnit::trainable_count() const {
  return svd ? s.value.numel() : weight.value.numel();
}

void ConvUnit::collect(std::vector<std::pair<std::string, Parameter*>>& out,
                       const std::string& prefix) {
  if (svd) {
    out.emplace_back(prefix + ".u", &u_tensor);
    out.emplace_back(prefix + ".v", &v_tensor);
    out.emplace_back(prefix + ".s", &s);
  } else {
    out.emplace_back(prefix + ".weight", &weight);
  }
  out.emplace_back(prefix + ".bias", &bias);
}

Var ConvBlock::forward(Tape& tape, Var x, double slope) {
  Var h = conv.forward(tape, x);
  h = tape.group_norm(h, tape.param(gn_gamma), tape.param(gn_beta), groups, eps);
  return tape.leaky_relu(h, slope);
}

void ConvBlock::collect(std::vector<std::pair<std::string, Parameter*>>& out,
                        const std::string& prefix) {
  conv.collect(out, prefix);
  out.emplace_back(prefix + ".gn_gamma", &gn_gamma);
  out.emplace_back(prefix + ".gn_beta", &gn_beta);
}

namespace {

size_t pick_groups(size_t requested, size_t channels) {
  size_t g = requested == 0 ? std::min<size_t>(32, channels) : requested;
  g = std::min(g, channels);
  while (channels % g != 0) --g;
  return g;
}

ConvUnit make_conv(std::mt19937_64& rng, size_t cin, size_t cout, size_t k,
                   int stride) {
  ConvUnit u;
  u.stride = stride;
  u.pad = static_cast<int>((k - 1) / 2);
  Tensor w({cout, cin, k, k});
  const double std = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  std::normal_distribution<double> dist(0.0, std);
  for (size_t i = 0; i < w.numel(); ++i) w[i] = dist(rng);
  u.weight = Parameter(std::move(w), true);
  u.bias = Parameter(Tensor({cout}), true);
  return u;
}

ConvBlock make_block(std::mt19937_64& rng, size_t cin, size_t cout, size_t k,
                     int stride, size_t norm_groups) {
  ConvBlock b;
  b.conv = make_conv(rng, cin, cout, k, stride);
  b.groups = pick_groups(norm_groups, cout);
  b.gn_gamma = Parameter(Tensor::full({cout}, 1.0), true);
  b.gn_beta = Parameter(Tensor({cout}), true);
  return b;
}

}  // namespace

Network build_unet(const UNetConfig& cfg, uint64_t seed) {
  cfg.validate();
  Network net;
  net.cfg = cfg;
  std::mt19937_64 rng(seed);
  const size_t k = cfg.kernel_size, s = cfg.num_scales;

  for (size_t i = 0; i < s; ++i) {
    const size_t cin = i == 0 ? cfg.in_channels : cfg.channels[i - 1];
    const int stride = i == 0 ? 1 : 2;
    std::vector<ConvBlock> blocks;
    blocks.push_back(make_block(rng, cin, cfg.channels[i], k, stride, cfg.norm_groups));
    blocks.push_back(make_block(rng, cfg.channels[i], cfg.channels[i], k, 1,
                                cfg.norm_groups));
    net.down.push_back(std::move(blocks));
  }
  net.skips.resize(s > 0 ? s - 1 : 0);
  for (size_t i = 0; i + 1 < s; ++i) {
    if (cfg.skip_channels[i] > 0)
      net.skips[i] = make_conv(rng, cfg.channels[i], cfg.skip_channels[i], 1, 1);
  }
  for (size_t i = 0; i + 1 < s; ++i) {
    const size_t cin = cfg.channels[i + 1] + cfg.skip_channels[i];
    std::vector<ConvBlock> blocks;
    blocks.push_back(make_block(rng, cin, cfg.channels[i], k, 1, cfg.norm_groups));
    blocks.push_back(make_block(rng, cfg.channels[i], cfg.channels[i], k, 1,
                                cfg.norm_groups));
    net.up.push_back(std::move(blocks));
  }
  net.out_conv = make_conv(rng, cfg.channels[0], cfg.out_channels, 1, 1);
  return net;
}

Var Network::forward(Tape& tape, Var z) {
  const Tensor& zt = tape.value(z);
  if (zt.rank() != 3 || zt.dim(0) != cfg.in_channels)
    throw std::invalid_argument("Network::forward: expected [in_channels,H,W] input");
  const size_t div = size_t{1} << (cfg.num_scales - 1);
  if (zt.dim(1) % div != 0 || zt.dim(2) % div != 0)
    throw std::invalid_argument("Network::forward: spatial dims incompatible with num_scales");

  std::vector<Var> skip_feats(cfg.num_scales > 0 ? cfg.num_scales - 1 : 0);
  Var x = z;
  for (size_t i = 0; i < cfg.num_scales; ++i) {
    x = down[i][0].forward(tape, x, cfg.leaky_slope);
    x = down[i][1].forward(tape, x, cfg.leaky_slope);
    if (i + 1 < cfg.num_scales && cfg.skip_channels[i] > 0)
      skip_feats[i] = skips[i].forward(tape, x);
  }
  for (size_t i = cfg.num_scales - 1; i-- > 0;) {
    x = tape.upsample_bilinear2x(x);
    if (cfg.skip_channels[i] > 0) x = tape.concat_channels(skip_feats[i], x);
    x = up[i][0].forward(tape, x, cfg.leaky_slope);
    x = up[i][1].forward(tape, x, cfg.leaky_slope);
  }
  x = out_conv.forward(tape, x);
  if (cfg.sigmoid_output) x = tape.sigmoid(x);
  return x;
}

Tensor Network::forward_tensor(const Tensor& z) {
  Tape tape;
  Var out = forward(tape, tape.constant(z));
  return tape.value(out);
}

std::vector<std::pair<std::string, Parameter*>> Network::named_parameters() {
  std::vector<std::pair<std::string, Parameter*>> out;
  for (size_t i = 0; i < down.size(); ++i)
    for (size_t j = 0; j < down[i].size(); ++j)
      down[i][j].collect(out, "down" + std::to_string(i) + ".c" + std::to_string(j));
  for (size_t i = 0; i < up.size(); ++i)
    for (size_t j = 0; j < up[i].size(); ++j)
      up[i][j].collect(out, "up" + std::to_string(i) + ".c" + std::to_string(j));
  for (size_t i = 0; i < skips.size(); ++i)
    if (skips[i].weight.value.numel() > 0 || skips[i].svd)
      skips[i].collect(out, "skip" + std::to_string(i));
  out_conv.collect(out, "out");
  return out;
}

std::vector<Parameter*> Network::all_parameters() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

std::vector<Parameter*> Network::trainable_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : all_parameters())
    if (p->trainable) out.push_back(p);
  return out;
}

size_t Network::trainable_scalar_count() {
  size_t n = 0;
  for (Parameter* p : trainable_parameters()) n += p->value.numel();
  return n;
}

ConvUnit& Network::conv_at(const LayerAddress& addr) {
  switch (addr.kind) {
    case LayerAddress::Kind::Down:
      if (addr.scale >= down.size() || addr.conv >= down[addr.scale].size())
        throw std::invalid_argument("layer address not found: " + addr.to_string());
      return down[addr.scale][addr.conv].conv;
    case LayerAddress::Kind::Up:
      if (addr.scale >= up.size() || addr.conv >= up[addr.scale].size())
        throw std::invalid_argument("layer address not found: " + addr.to_string());
      return up[addr.scale][addr.conv].conv;
    case LayerAddress::Kind::Skip:
      if (addr.scale >= skips.size() || addr.conv != 0 ||
          (skips[addr.scale].weight.value.numel() == 0 && !skips[addr.scale].svd))
        throw std::invalid_argument("layer address not found: " + addr.to_string());
      return skips[addr.scale];
    case LayerAddress::Kind::Out:
      if (addr.scale != 0 || addr.conv != 0)
        throw std::invalid_argument("layer address not found: " + addr.to_string());
      return out_conv;
  }
  throw std::invalid_argument("bad layer address");
}

void Network::set_all_trainable(bool trainable) {
  auto set_unit = [trainable](ConvUnit& u) {
    if (u.svd) {
      u.s.trainable = trainable;
      // U, V and bias stay frozen regardless
    } else {
      u.weight.trainable = trainable;
      u.bias.trainable = trainable;
    }
  };
  for (auto& blocks : down)
    for (auto& b : blocks) {
      set_unit(b.conv);
      b.gn_gamma.trainable = trainable;
      b.gn_beta.trainable = trainable;
    }
  for (auto& blocks : up)
    for (auto& b : blocks) {
      set_unit(b.conv);
      b.gn_gamma.trainable = trainable;
      b.gn_beta.trainable = trainable;
    }
  for (auto& sk : skips)
    if (sk.weight.value.numel() > 0 || sk.svd) set_unit(sk);
  set_unit(out_conv);
}

std::vector<LayerAddress> default_svd_addresses(const UNetConfig& cfg,
                                                size_t keep_first_down) {
  std::vector<LayerAddress> addrs;
  for (size_t i = keep_first_down; i < cfg.num_scales; ++i)
    for (size_t j = 0; j < 2; ++j)
      addrs.push_back({LayerAddress::Kind::Down, i, j});
  for (size_t i = 0; i + 1 < cfg.num_scales; ++i)
    for (size_t j = 0; j < 2; ++j)
      addrs.push_back({LayerAddress::Kind::Up, i, j});
  return addrs;
}

void replace_with_svd(Network& net, const std::vector<LayerAddress>& addresses,
                      const TruncationPolicy& policy) {
  for (const auto& addr : addresses) {
    ConvUnit& unit = net.conv_at(addr);
    unit.replace_with_svd(policy);
  }
}

void save_checkpoint(Network& net, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream man(fs::path(dir) / "manifest.txt");
  if (!man) throw std::runtime_error("cannot write checkpoint manifest in " + dir);
  man << "SVDDIPCKPT1\n";
  man << "config_hash " << std::hex << net.cfg.hash() << std::dec << "\n";
  for (auto& [name, p] : net.named_parameters()) {
    const std::string file = name + ".t";
    man << name << " " << (p->trainable ? 1 : 0) << " " << p->value.rank();
    for (size_t d : p->value.shape()) man << " " << d;
    man << " " << file << "\n";
    save_tensor(p->value, (fs::path(dir) / file).string());
  }
}

void load_checkpoint(Network& net, const std::string& dir) {
  std::ifstream man(fs::path(dir) / "manifest.txt");
  if (!man) throw std::runtime_error("cannot read checkpoint manifest in " + dir);
  std::string magic;
  man >> magic;
  if (magic != "SVDDIPCKPT1")
    throw std::runtime_error("bad checkpoint manifest in " + dir);
  std::string key, hashhex;
  man >> key >> hashhex;
  if (key != "config_hash")
    throw std::runtime_error("bad checkpoint manifest in " + dir);
  if (std::stoull(hashhex, nullptr, 16) != net.cfg.hash())
    throw std::runtime_error("checkpoint model config does not match network config");

  auto named = net.named_parameters();
  std::string name, file;
  int trainable;
  size_t rank;
  while (man >> name >> trainable >> rank) {
    std::vector<size_t> shape(rank);
    for (auto& d : shape) man >> d;
    man >> file;
    auto it = std::find_if(named.begin(), named.end(),
                           [&](const auto& np) { return np.first == name; });
    if (it == named.end())
      throw std::runtime_error("checkpoint parameter not in network: " + name);
    Tensor t = load_tensor((fs::path(dir) / file).string());
    if (t.shape() != it->second->value.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    it->second->value = std::move(t);
    it->second->zero_grad();
    it->second->moment1.fill(0.0);
    it->second->moment2.fill(0.0);
    it->second->step = 0;
  }
}

}  // namespace svddip
