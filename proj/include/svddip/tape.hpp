#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "svddip/optim.hpp"
#include "svddip/tensor.hpp"

namespace svddip {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid until Tape::clear().
struct Var {
  Tape* tape = nullptr;
  size_t idx = static_cast<size_t>(-1);
  bool valid() const { return tape != nullptr; }
};

// Linear operator hook for recording e.g. CT forward projections on the tape.
// apply/apply_adjoint must be exact transposes of each other.
class LinearOp {
public:
  virtual ~LinearOp() = default;
  virtual Tensor apply(const Tensor& x) const = 0;
  virtual Tensor apply_adjoint(const Tensor& y) const = 0;
};

// Reverse-mode autodiff tape. Nodes are recorded in forward order; backward()
// replays them in reverse, accumulating gradients additively. Single-owner:
// one tape (with its Parameters) is used by one thread at a time.
class Tape {
public:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool needs_grad = false;
    Parameter* param = nullptr;  // set for parameter leaves
    std::function<void(Tape&, Node&)> backprop;  // null for leaves
  };

  Var constant(Tensor t);
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const { return node(v).grad; }

  // Pointwise / reduction ops.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var leaky_relu(Var a, double slope);
  Var sigmoid(Var a);
  Var abs(Var a);  // subgradient 0 at 0
  Var sum(Var a);
  Var mean(Var a);

  // Layer ops.
  Var conv2d(Var input, Var weight, std::optional<Var> bias, int stride, int pad);
  Var upsample_bilinear2x(Var input);
  Var group_norm(Var input, Var gamma, Var beta, size_t groups, double eps);
  Var concat_channels(Var a, Var b);
  Var scale_channels(Var input, Var s);  // multiply channel c by s[c]

  Var apply_linear(const LinearOp& op, Var x);

  // Generic extension point: value plus a hand-written backward closure.
  Var make_node(Tensor value, std::vector<Var> inputs,
                std::function<void(Tape&, Node&, std::vector<Node*>&)> backward);

  // Accumulates d(loss)/d(p) into p.grad for every parameter leaf.
  void backward(Var loss);

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

  Node& node(Var v) {
    if (v.tape != this) throw std::invalid_argument("Var from foreign tape");
    return nodes_.at(v.idx);
  }
  const Node& node(Var v) const {
    if (v.tape != this) throw std::invalid_argument("Var from foreign tape");
    return nodes_.at(v.idx);
  }
  void add_grad(size_t idx, const Tensor& g);
  Node& at(size_t idx) { return nodes_[idx]; }

private:
  Var push(Node n);
  std::deque<Node> nodes_;  // deque: stable references while recording
};

}  // namespace svddip
