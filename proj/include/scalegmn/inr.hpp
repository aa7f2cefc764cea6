#pragma once

#include <cstdint>

#include "scalegmn/ffnn.hpp"
#include "scalegmn/random.hpp"

namespace scalegmn {

/// Sampled signal: coords (n x 2) in [-1, 1]^2 and targets (n x channels).
struct Signal {
  Tensor coords;
  Tensor values;
  Index height = 0;
  Index width = 0;
};

/// Pixel-centred grid, row-major over (y, x); coordinate columns are (x, y).
Tensor grid_coords(Index height, Index width);

/// Grayscale image (height x width) as a signal on its grid.
Signal image_signal(const Tensor& image);

Signal constant_signal(Index height, Index width, double value);

/// Filled disk / axis-aligned square rasterised with a one-pixel linear ramp
/// at the boundary. Centre and size are in pixel units.
Tensor disk_image(Index size, double cx, double cy, double radius);
Tensor square_image(Index size, double cx, double cy, double half_side);

/// Random disk (label 0) or square (label 1) with jittered centre and size.
Tensor random_shape(int label, Index size, Rng& rng);

/// 3x3 max filter with edge replication; the editing target.
Tensor dilate3x3(const Tensor& image);

struct InrArch {
  std::vector<Index> widths{2, 16, 16, 1};
  double omega0 = 30.0;
};

/// First layer U(-1/d0, 1/d0), later sine layers U(+-sqrt(6/d)/omega0),
/// linear output layer U(+-sqrt(6/d)/omega0); biases U(+-1/sqrt(d)).
FfnnParams siren_init(const InrArch& arch, Rng& rng);

struct InrTrainOptions {
  int steps = 2000;
  double lr = 1e-3;
  double mse_threshold = 0.0;  // stop early once reached (0 disables)
};

struct InrFit {
  FfnnParams net;
  double mse = 0.0;
  int steps_taken = 0;
};

/// Full-batch Adam on the reconstruction MSE. Throws NumericError naming the
/// step on divergence.
InrFit train_inr(const Signal& signal, const FfnnParams& init, const InrTrainOptions& opts);
InrFit train_inr(const Signal& signal, const InrArch& arch, const InrTrainOptions& opts,
                 std::uint64_t seed);

}  // namespace scalegmn
