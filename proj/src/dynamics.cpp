#include "toflow/dynamics.hpp"

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "toflow/errors.hpp"
#include "toflow/rng.hpp"

namespace toflow {

using ad::Tape;
using ad::Var;

namespace {

std::vector<Layer> zero_layers(std::size_t dim, std::size_t hidden, std::size_t depth) {
  std::vector<Layer> layers;
  std::size_t in = dim + 1;
  for (std::size_t l = 0; l < depth; ++l) {
    layers.push_back({Tensor(hidden, in), Tensor(1, hidden)});
    in = hidden + 1;
  }
  layers.push_back({Tensor(dim, in), Tensor(1, dim)});
  return layers;
}

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated network record");
  return v;
}

void write_doubles(std::ostream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

void read_doubles(std::istream& in, Tensor& t) {
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!in) throw IoError("truncated network record");
}

}  // namespace

DynamicsNet::DynamicsNet(std::size_t dim, std::size_t hidden, std::size_t depth)
    : dim_(dim), hidden_(depth == 0 ? 0 : hidden), layers_(zero_layers(dim, hidden, depth)) {
  if (dim == 0) throw ShapeError("dynamics net needs D >= 1");
  if (depth > 0 && hidden == 0) throw ShapeError("dynamics net needs hidden width >= 1");
}

DynamicsNet DynamicsNet::initialized(std::size_t dim, std::size_t hidden, std::size_t depth,
                                     std::uint64_t seed) {
  DynamicsNet net(dim, hidden, depth);
  Rng rng = make_stream(seed, Stream::Init);
  for (Layer& layer : net.layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : layer.weight.values()) w = dist(rng);
  }
  return net;
}

DynamicsNet DynamicsNet::from_layers(std::vector<Layer> layers) {
  if (layers.empty()) throw ShapeError("dynamics net needs at least one layer");
  DynamicsNet net;
  net.dim_ = layers.back().weight.rows();
  net.hidden_ = layers.size() > 1 ? layers.front().weight.rows() : 0;
  net.layers_ = std::move(layers);
  net.validate();
  return net;
}

DynamicsNet DynamicsNet::linear(const Tensor& a) {
  if (a.rows() != a.cols()) throw ShapeError("linear dynamics needs a square matrix");
  const std::size_t d = a.rows();
  Tensor w(d, d + 1);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) w(i, j) = a(i, j);
  }
  return from_layers({Layer{std::move(w), Tensor(1, d)}});
}

void DynamicsNet::validate() const {
  std::size_t in = dim_ + 1;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const bool last = l + 1 == layers_.size();
    const std::size_t out = last ? dim_ : hidden_;
    if (layer.weight.rows() != out || layer.weight.cols() != in) {
      throw ShapeError("layer " + std::to_string(l) + " weight is " + to_string(layer.weight.shape()) +
                       ", expected " + to_string({out, in}));
    }
    if (layer.bias.rows() != 1 || layer.bias.cols() != out) {
      throw ShapeError("layer " + std::to_string(l) + " bias is " + to_string(layer.bias.shape()) +
                       ", expected " + to_string({1, out}));
    }
    in = hidden_ + 1;
  }
}

std::size_t DynamicsNet::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<Tensor*> DynamicsNet::parameters() {
  std::vector<Tensor*> out;
  for (Layer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Tensor*> DynamicsNet::parameters() const {
  std::vector<const Tensor*> out;
  for (const Layer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

// Record: u64 layer count, then per layer u64 out, u64 in, out*in weights
// (row-major), out biases. Native-endian doubles.
void DynamicsNet::write_binary(std::ostream& out) const {
  write_u64(out, layers_.size());
  for (const Layer& l : layers_) {
    write_u64(out, l.weight.rows());
    write_u64(out, l.weight.cols());
    write_doubles(out, l.weight);
    write_doubles(out, l.bias);
  }
}

DynamicsNet DynamicsNet::read_binary(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  if (n == 0 || n > 1024) throw IoError("implausible layer count in network record");
  std::vector<Layer> layers;
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t rows = read_u64(in);
    const std::uint64_t cols = read_u64(in);
    if (rows == 0 || cols == 0 || rows > (1u << 20) || cols > (1u << 20)) {
      throw IoError("implausible layer shape in network record");
    }
    Layer l{Tensor(rows, cols), Tensor(1, rows)};
    read_doubles(in, l.weight);
    read_doubles(in, l.bias);
    layers.push_back(std::move(l));
  }
  return from_layers(std::move(layers));
}

bool DynamicsNet::operator==(const DynamicsNet& other) const {
  if (dim_ != other.dim_ || hidden_ != other.hidden_ || layers_.size() != other.layers_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!(layers_[i].weight == other.layers_[i].weight) ||
        !(layers_[i].bias == other.layers_[i].bias)) {
      return false;
    }
  }
  return true;
}

// ============================================================================
// Taped evaluation
// ============================================================================

BoundNet bind(Tape& tape, const DynamicsNet& net) {
  BoundNet b{&net, {}};
  for (const Tensor* p : net.parameters()) b.params.push_back(tape.leaf(*p));
  return b;
}

ForwardPass forward(Tape& tape, const BoundNet& net, Var z, Var t, bool with_vjp) {
  const Tensor& zv = tape.value(z);
  if (zv.cols() != net.net->dim()) {
    throw ShapeError("dynamics: state has " + std::to_string(zv.cols()) + " columns, net expects D=" +
                     std::to_string(net.net->dim()));
  }
  ForwardPass pass;
  pass.batch = zv.rows();
  const Var tcol = ad::broadcast(tape, t, {zv.rows(), 1});
  Var h = ad::concat_cols(tape, z, tcol);
  const std::size_t n_layers = net.net->layers().size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const Var a = ad::add_rowwise(tape, ad::matmul_nt(tape, h, net.params[2 * l]), net.params[2 * l + 1]);
    if (l + 1 == n_layers) {
      pass.output = a;
      break;
    }
    const Var s = ad::tanh(tape, a);
    if (with_vjp) {
      pass.slopes.push_back(ad::shift(tape, ad::scale(tape, ad::mul(tape, s, s), -1.0), 1.0));
    }
    h = ad::concat_cols(tape, s, tcol);
  }
  return pass;
}

ForwardPass forward(Tape& tape, const BoundNet& net, Var z, double t, bool with_vjp) {
  return forward(tape, net, z, tape.leaf(Tensor::scalar(t)), with_vjp);
}

Var vjp_state(Tape& tape, const BoundNet& net, const ForwardPass& pass, Var v) {
  const std::size_t n_layers = net.net->layers().size();
  if (pass.slopes.size() + 1 != n_layers) {
    throw Error("vjp_state: forward pass was recorded without vjp support");
  }
  Var g = v;
  for (std::size_t l = n_layers; l-- > 0;) {
    const Var gin = ad::matmul(tape, g, net.params[2 * l]);
    const std::size_t in = tape.value(gin).cols();
    const Var gs = ad::slice_cols(tape, gin, 0, in - 1);
    g = l > 0 ? ad::mul(tape, gs, pass.slopes[l - 1]) : gs;
  }
  return g;
}

Tensor eval(const DynamicsNet& net, const Tensor& z, double t) {
  Tape tape;
  const BoundNet b = bind(tape, net);
  const ForwardPass p = forward(tape, b, tape.leaf(z), t, false);
  return tape.value(p.output);
}

Tensor vjp_state(const DynamicsNet& net, const Tensor& z, double t, const Tensor& v) {
  Tape tape;
  const BoundNet b = bind(tape, net);
  const ForwardPass p = forward(tape, b, tape.leaf(z), t, true);
  if (v.shape() != tape.value(p.output).shape()) {
    throw ShapeError("vjp_state: cotangent " + to_string(v.shape()) + " vs output " +
                     to_string(tape.value(p.output).shape()));
  }
  return tape.value(vjp_state(tape, b, p, tape.leaf(v)));
}

Tensor time_partial(const DynamicsNet& net, const Tensor& z, double t) { return eval(net, z, t); }

}  // namespace toflow
