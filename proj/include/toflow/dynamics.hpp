#pragma once

// Time-conditioned MLP f(z, t; theta): R^D x R -> R^D.
//
// Layer l maps [h_l | t] to a_l = [h_l | t] W_l^T + b_l. Hidden layers apply
// tanh, the output layer is linear. The time value is re-concatenated as the
// last input column of every layer.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "toflow/autodiff.hpp"
#include "toflow/tensor.hpp"

namespace toflow {

struct Layer {
  Tensor weight;  // out x in
  Tensor bias;    // 1 x out
};

class DynamicsNet {
 public:
  // All-zero weights: `depth` hidden layers of width `hidden`. depth == 0
  // gives a single linear layer (D+1) -> D.
  DynamicsNet(std::size_t dim, std::size_t hidden, std::size_t depth);

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  static DynamicsNet initialized(std::size_t dim, std::size_t hidden, std::size_t depth,
                                 std::uint64_t seed);
  // Validates layer widths against the concatenation layout.
  static DynamicsNet from_layers(std::vector<Layer> layers);
  // f(z, t) = A z, as a depth-0 net with the time column zeroed.
  static DynamicsNet linear(const Tensor& a);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t depth() const noexcept { return layers_.size() - 1; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::size_t parameter_count() const noexcept;

  // W0, b0, W1, b1, ... in layer order.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

  void write_binary(std::ostream& out) const;
  static DynamicsNet read_binary(std::istream& in);

  bool operator==(const DynamicsNet&) const;

 private:
  DynamicsNet() = default;
  void validate() const;

  std::size_t dim_ = 0;
  std::size_t hidden_ = 0;
  std::vector<Layer> layers_;
};

// The net's parameters registered as leaves of one tape.
struct BoundNet {
  const DynamicsNet* net = nullptr;
  std::vector<ad::Var> params;  // W0, b0, W1, b1, ...
};

BoundNet bind(ad::Tape& tape, const DynamicsNet& net);

// One forward evaluation, retaining what vector-Jacobian products need.
struct ForwardPass {
  ad::Var output;
  std::vector<ad::Var> slopes;  // 1 - tanh^2 per hidden layer, when requested
  std::size_t batch = 0;
};

// `t` must be a 1x1 node; it enters every layer as a broadcast column.
ForwardPass forward(ad::Tape& tape, const BoundNet& net, ad::Var z, ad::Var t, bool with_vjp);
ForwardPass forward(ad::Tape& tape, const BoundNet& net, ad::Var z, double t, bool with_vjp);

// v^T (df/dz) per batch row, recorded as ordinary tape ops so the result is
// itself differentiable in theta and z.
ad::Var vjp_state(ad::Tape& tape, const BoundNet& net, const ForwardPass& pass, ad::Var v);

// Tapeless conveniences.
Tensor eval(const DynamicsNet& net, const Tensor& z, double t);
Tensor vjp_state(const DynamicsNet& net, const Tensor& z, double t, const Tensor& v);
// dz(T)/dT at the endpoint, i.e. f itself.
Tensor time_partial(const DynamicsNet& net, const Tensor& z, double t);

}  // namespace toflow
