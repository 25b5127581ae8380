#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "svddip/svd.hpp"
#include "svddip/tape.hpp"

namespace svddip {

struct UNetConfig {
  size_t num_scales = 3;
  std::vector<size_t> channels = {16, 16, 16};  // per scale
  size_t kernel_size = 3;
  std::vector<size_t> skip_channels = {4, 4};  // per scale, 0 disables
  double leaky_slope = 0.2;
  bool sigmoid_output = true;
  size_t norm_groups = 0;  // 0 -> min(32, C)
  size_t in_channels = 1;
  size_t out_channels = 1;

  void validate() const;
  std::string serialize() const;
  uint64_t hash() const;
};

struct LayerAddress {
  enum class Kind { Down, Up, Skip, Out } kind = Kind::Down;
  size_t scale = 0;
  size_t conv = 0;

  std::string to_string() const;
  static LayerAddress parse(const std::string& s);
  bool operator==(const LayerAddress&) const = default;
};

// A convolution that is either a plain weight tensor or its SVD-factorized
// replacement (frozen U/V, trainable singular values, frozen bias).
struct ConvUnit {
  Parameter weight;  // [Cout,Cin,K,K] (plain form)
  Parameter bias;    // [Cout]
  int stride = 1;
  int pad = 0;

  bool svd = false;
  Parameter u_tensor;  // [Cout,R,1,1], frozen
  Parameter v_tensor;  // [R,Cin,K,K], frozen
  Parameter s;         // [R], trainable
  std::vector<double> s_init;

  Var forward(Tape& tape, Var x);
  void replace_with_svd(const TruncationPolicy& policy);
  size_t trainable_count() const;
  void collect(std::vector<std::pair<std::string, Parameter*>>& out,
               const std::string& prefix);
};

struct ConvBlock {
  ConvUnit conv;
  Parameter gn_gamma, gn_beta;
  size_t groups = 1;
  double eps = 1e-5;

  Var forward(Tape& tape, Var x, double slope);
  void collect(std::vector<std::pair<std::string, Parameter*>>& out,
               const std::string& prefix);
};

class Network {
public:
  UNetConfig cfg;
  std::vector<std::vector<ConvBlock>> down;  // [scale][2]
  std::vector<std::vector<ConvBlock>> up;    // [scale][2], scale < num_scales-1
  std::vector<ConvUnit> skips;               // 1x1 convs, one per skip scale
  ConvUnit out_conv;

  Var forward(Tape& tape, Var z);
  Tensor forward_tensor(const Tensor& z);

  std::vector<std::pair<std::string, Parameter*>> named_parameters();
  std::vector<Parameter*> all_parameters();
  std::vector<Parameter*> trainable_parameters();
  size_t trainable_scalar_count();

  ConvUnit& conv_at(const LayerAddress& addr);

  void set_all_trainable(bool trainable);
};

Network build_unet(const UNetConfig& cfg, uint64_t seed);

// Every down- and up-block conv, skipping the first `keep_first_down`
// down scales; skip and output convs are excluded.
std::vector<LayerAddress> default_svd_addresses(const UNetConfig& cfg,
                                                size_t keep_first_down);

// Replaces the addressed plain convs by their SVD factorizations. With the
// none policy the network function is unchanged.
void replace_with_svd(Network& net, const std::vector<LayerAddress>& addresses,
                      const TruncationPolicy& policy);

// Checkpoint = directory of tensor files plus a manifest listing parameter
// names, shapes, trainability and the model config hash.
void save_checkpoint(Network& net, const std::string& dir);
void load_checkpoint(Network& net, const std::string& dir);

}  // namespace svddip
