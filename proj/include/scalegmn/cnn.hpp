#pragma once

#include <cstdint>
#include <vector>

#include "scalegmn/ffnn.hpp"
#include "scalegmn/orbit.hpp"
#include "scalegmn/random.hpp"

namespace scalegmn {

/// Valid, stride-1 convolution. kernel is out x (in * kh * kw) with columns
/// ordered (in, dy, dx), i.e. (out, in, kh, kw) flattened row-major.
struct ConvLayer {
  Tensor kernel;
  Tensor bias;  // 1 x out
  Index kh = 1;
  Index kw = 1;
  ActivationDescriptor activation;

  [[nodiscard]] Index out_channels() const { return kernel.rows(); }
  [[nodiscard]] Index in_channels() const { return kernel.cols() / (kh * kw); }
};

/// Conv stack -> global average pool -> dense head.
struct CnnParams {
  std::vector<ConvLayer> convs;
  std::vector<FfnnLayer> head;

  [[nodiscard]] std::size_t num_layers() const { return convs.size() + head.size(); }
  /// Channel/neuron counts c_0, ..., c_L across conv and head layers.
  [[nodiscard]] std::vector<Index> widths() const;
  [[nodiscard]] std::vector<GroupKind> hidden_groups() const;
  [[nodiscard]] Index param_count() const;
  void validate() const;
};

/// Images are NHWC: `batch * height * width` rows of `channels` values.
Tensor cnn_forward(const CnnParams& net, const Tensor& images, Index batch, Index height,
                   Index width);

/// Tape version with parameters as Vars (kernels, conv biases, head weights,
/// head biases in layer order).
Var cnn_forward(const CnnParams& structure, std::span<const Var> kernels,
                std::span<const Var> conv_biases, std::span<const Var> head_weights,
                std::span<const Var> head_biases, Var images, Index batch, Index height,
                Index width);

CnnParams apply_orbit(const CnnParams& net, const OrbitElement& g);

/// Per layer statistics of kernels/weights and biases; length 14 L.
Eigen::VectorXd stat_features(const CnnParams& net);
Eigen::VectorXd flatten(const CnnParams& net);

/// Two classes of 8x8 grayscale images holding one Gaussian blob each:
/// narrow (label 0) or wide (label 1), random amplitude and centre, additive
/// noise.
struct BlobTask {
  Tensor images;  // NHWC rows, 1 channel
  std::vector<int> labels;
  Index count = 0;
  static constexpr Index kSize = 8;
};
BlobTask make_blob_task(Index count, std::uint64_t seed);

struct CnnHyper {
  int steps = 300;
  double lr = 1e-2;
  double init_scale = 1.0;
  std::vector<Index> channels{1, 4, 4};
  Index kernel = 3;
  Index classes = 2;
  ActivationDescriptor activation = ActivationDescriptor::relu();
};

struct CnnFit {
  CnnParams net;
  double test_accuracy = 0.0;
  bool diverged = false;
};

CnnParams init_toy_cnn(const CnnHyper& hyper, Rng& rng);

double cnn_accuracy(const CnnParams& net, const BlobTask& data);

/// Trains on a train split generated from `task_seed` and measures accuracy
/// on a disjoint test split from the same generator.
CnnFit train_toy_cnn(std::uint64_t task_seed, const CnnHyper& hyper, std::uint64_t init_seed);

}  // namespace scalegmn
