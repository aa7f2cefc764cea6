#include "scalegmn/ffnn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace scalegmn {

std::vector<Index> FfnnParams::widths() const {
  std::vector<Index> w;
  if (layers.empty()) return w;
  w.push_back(layers.front().weight.cols());
  for (const auto& l : layers) w.push_back(l.weight.rows());
  return w;
}

Index FfnnParams::param_count() const {
  Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void FfnnParams::validate() const {
  if (layers.empty()) throw ShapeError("network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.bias.rows() != 1 || layer.bias.cols() != layer.weight.rows()) {
      throw ShapeError("layer " + std::to_string(l + 1) + ": bias " + shape_string(layer.bias) +
                       " does not match weight " + shape_string(layer.weight));
    }
    if (l > 0 && layer.weight.cols() != layers[l - 1].weight.rows()) {
      throw ShapeError("layer " + std::to_string(l + 1) + ": weight " +
                       shape_string(layer.weight) + " does not chain with layer " +
                       std::to_string(l));
    }
  }
}

Tensor ffnn_forward(const FfnnParams& net, const Tensor& x) {
  net.validate();
  if (x.cols() != net.layers.front().weight.cols()) {
    throw ShapeError("ffnn_forward: input " + shape_string(x) + " for d0 = " +
                     std::to_string(net.layers.front().weight.cols()));
  }
  Tensor h = x;
  for (const auto& layer : net.layers) {
    Tensor z = layer.activation.gain() * (h * layer.weight.transpose());
    z.rowwise() += layer.bias.row(0);
    h = layer.activation.apply(z);
  }
  return h;
}

Var ffnn_forward(std::span<const ActivationDescriptor> activations, std::span<const Var> weights,
                 std::span<const Var> biases, Var x) {
  if (activations.size() != weights.size() || weights.size() != biases.size()) {
    throw ShapeError("ffnn_forward: layer count mismatch");
  }
  Var h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].cols() != h.cols()) {
      throw ShapeError("ffnn_forward: layer " + std::to_string(l + 1) + " weight " +
                       shape_string(weights[l].value()) + " for input " + shape_string(h.value()));
    }
    Var z = matmul_nt(h, weights[l]);
    if (activations[l].gain() != 1.0) z = scale(z, activations[l].gain());
    z = add_rowwise(z, biases[l]);
    h = apply_activation(activations[l], z);
  }
  return h;
}

ForwardTrace ffnn_trace(const FfnnParams& net, const Tensor& x) {
  net.validate();
  ForwardTrace t;
  t.x.push_back(x);
  for (const auto& layer : net.layers) {
    Tensor z = layer.activation.gain() * (t.x.back() * layer.weight.transpose());
    z.rowwise() += layer.bias.row(0);
    t.x.push_back(layer.activation.apply(z));
    t.z.push_back(std::move(z));
  }
  return t;
}

std::pair<double, Tensor> bias_shift(double b, const Tensor& w) {
  constexpr double pi = std::numbers::pi;
  double sign = 1.0;
  Tensor wt = w;
  if (b < 0.0) {
    b = -b;
    wt = -wt;
    sign = -sign;
  }
  if (b > 2.0 * pi) b = std::fmod(b, 2.0 * pi);
  if (b > pi) {
    b -= pi;
    sign = -sign;
  }
  if (b > pi / 2.0) {
    b -= pi;
    sign = -sign;
  }
  return {sign * b, sign * wt};
}

FfnnParams bias_shift_net(const FfnnParams& net) {
  FfnnParams out = net;
  for (std::size_t l = 0; l + 1 < out.layers.size(); ++l) {
    FfnnLayer& layer = out.layers[l];
    if (layer.activation.kind() != ActivationKind::Sine) continue;
    for (Index i = 0; i < layer.weight.rows(); ++i) {
      auto [b, w] = bias_shift(layer.bias(0, i), layer.weight.row(i));
      layer.bias(0, i) = b;
      layer.weight.row(i) = w;
    }
  }
  return out;
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

void append_stats(const Tensor& t, std::vector<double>& out) {
  std::vector<double> v(t.data(), t.data() + t.size());
  if (v.empty()) {
    out.insert(out.end(), 7, 0.0);
    return;
  }
  std::sort(v.begin(), v.end());
  double mean = 0.0;
  for (double e : v) mean += e;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double e : v) var += (e - mean) * (e - mean);
  var /= static_cast<double>(v.size());
  out.push_back(mean);
  out.push_back(std::sqrt(var));
  out.push_back(v.front());
  out.push_back(quantile(v, 0.25));
  out.push_back(quantile(v, 0.5));
  out.push_back(quantile(v, 0.75));
  out.push_back(v.back());
}

}  // namespace

Eigen::VectorXd stat_features(std::span<const Tensor> weights, std::span<const Tensor> biases) {
  std::vector<double> f;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    append_stats(weights[l], f);
    append_stats(biases[l], f);
  }
  return Eigen::Map<Eigen::VectorXd>(f.data(), static_cast<Index>(f.size()));
}

Eigen::VectorXd stat_features(const FfnnParams& net) {
  std::vector<Tensor> w, b;
  for (const auto& l : net.layers) {
    w.push_back(l.weight);
    b.push_back(l.bias);
  }
  return stat_features(w, b);
}

Eigen::VectorXd flatten(const FfnnParams& net) {
  Eigen::VectorXd v(net.param_count());
  Index k = 0;
  for (const auto& l : net.layers) {
    for (Index i = 0; i < l.weight.size(); ++i) v[k++] = l.weight.data()[i];
    for (Index i = 0; i < l.bias.size(); ++i) v[k++] = l.bias.data()[i];
  }
  return v;
}

FfnnParams zeros_like(const FfnnArch& arch) {
  if (arch.widths.size() != arch.activations.size() + 1) {
    throw ShapeError("architecture needs one activation per layer");
  }
  FfnnParams net;
  for (std::size_t l = 0; l < arch.activations.size(); ++l) {
    net.layers.push_back({Tensor::Zero(arch.widths[l + 1], arch.widths[l]),
                          Tensor::Zero(1, arch.widths[l + 1]), arch.activations[l]});
  }
  return net;
}

FfnnArch arch_of(const FfnnParams& net) {
  FfnnArch a;
  a.widths = net.widths();
  for (const auto& l : net.layers) a.activations.push_back(l.activation);
  return a;
}

}  // namespace scalegmn
