#pragma once

#include <span>
#include <utility>
#include <vector>

#include "scalegmn/activation.hpp"
#include "scalegmn/ops.hpp"
#include "scalegmn/tensor.hpp"

namespace scalegmn {

/// One dense layer of a datapoint network: sigma(gain * W x + b).
struct FfnnLayer {
  Tensor weight;  // d_l x d_{l-1}
  Tensor bias;    // 1 x d_l
  ActivationDescriptor activation;
};

struct FfnnParams {
  std::vector<FfnnLayer> layers;

  [[nodiscard]] std::size_t num_layers() const { return layers.size(); }
  /// d_0, d_1, ..., d_L
  [[nodiscard]] std::vector<Index> widths() const;
  [[nodiscard]] Index param_count() const;
  /// Throws ShapeError if adjacent layers do not chain.
  void validate() const;
};

/// Rows of x are inputs; returns one output row per input.
Tensor ffnn_forward(const FfnnParams& net, const Tensor& x);

/// Tape version with externally supplied parameters (training, edit losses).
Var ffnn_forward(std::span<const ActivationDescriptor> activations, std::span<const Var> weights,
                 std::span<const Var> biases, Var x);

/// Every layer's per-layer z and x, used by the simulation checks.
struct ForwardTrace {
  std::vector<Tensor> z;  // z_1..z_L
  std::vector<Tensor> x;  // x_0..x_L
};
ForwardTrace ffnn_trace(const FfnnParams& net, const Tensor& x);

/// Phase canonicalisation of one sine neuron. Returns (b~, w~) with
/// sin(gain w~.x + b~) == sin(gain w.x + b) and b~ in (-pi/2, pi/2], except
/// that b~ = -pi/2 can occur at the boundary.
std::pair<double, Tensor> bias_shift(double b, const Tensor& w);

/// bias_shift applied to every neuron of every hidden sine layer.
FfnnParams bias_shift_net(const FfnnParams& net);

/// Per layer, 7 statistics (mean, std, min, q25, median, q75, max) of the
/// weights followed by the same 7 of the biases. Length 14 L.
Eigen::VectorXd stat_features(const FfnnParams& net);
/// Same statistics for an arbitrary flat list of per-layer (weights, biases).
Eigen::VectorXd stat_features(std::span<const Tensor> weights, std::span<const Tensor> biases);

/// All parameters as one vector, W1 row-major, b1, ..., WL, bL.
Eigen::VectorXd flatten(const FfnnParams& net);

/// Architecture descriptor for convenience construction.
struct FfnnArch {
  std::vector<Index> widths;
  std::vector<ActivationDescriptor> activations;  // one per layer
};
FfnnParams zeros_like(const FfnnArch& arch);
FfnnArch arch_of(const FfnnParams& net);

}  // namespace scalegmn
