#include "scalegmn/inr.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "scalegmn/params.hpp"

namespace scalegmn {

Tensor grid_coords(Index height, Index width) {
  Tensor c(height * width, 2);
  auto axis = [](Index i, Index n) {
    return n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      c(y * width + x, 0) = axis(x, width);
      c(y * width + x, 1) = axis(y, height);
    }
  }
  return c;
}

Signal image_signal(const Tensor& image) {
  Signal s;
  s.height = image.rows();
  s.width = image.cols();
  s.coords = grid_coords(s.height, s.width);
  s.values = Eigen::Map<const Tensor>(image.data(), image.size(), 1);
  return s;
}

Signal constant_signal(Index height, Index width, double value) {
  return image_signal(Tensor::Constant(height, width, value));
}

Tensor disk_image(Index size, double cx, double cy, double radius) {
  Tensor img(size, size);
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
      img(y, x) = std::clamp(radius + 0.5 - d, 0.0, 1.0);
    }
  }
  return img;
}

Tensor square_image(Index size, double cx, double cy, double half_side) {
  Tensor img(size, size);
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      const double d = std::max(std::abs(static_cast<double>(x) - cx),
                                std::abs(static_cast<double>(y) - cy));
      img(y, x) = std::clamp(half_side + 0.5 - d, 0.0, 1.0);
    }
  }
  return img;
}

Tensor random_shape(int label, Index size, Rng& rng) {
  const double mid = 0.5 * static_cast<double>(size - 1);
  const double s = static_cast<double>(size) / 16.0;
  std::uniform_real_distribution<double> jitter(-0.5 * s, 0.5 * s);
  const double cx = mid + jitter(rng);
  const double cy = mid + jitter(rng);
  if (label == 0) {
    std::uniform_real_distribution<double> r(5.0 * s, 7.0 * s);
    return disk_image(size, cx, cy, r(rng));
  }
  std::uniform_real_distribution<double> h(4.5 * s, 6.5 * s);
  return square_image(size, cx, cy, h(rng));
}

Tensor dilate3x3(const Tensor& image) {
  Tensor out(image.rows(), image.cols());
  for (Index y = 0; y < image.rows(); ++y) {
    for (Index x = 0; x < image.cols(); ++x) {
      double m = image(y, x);
      for (Index dy = -1; dy <= 1; ++dy) {
        for (Index dx = -1; dx <= 1; ++dx) {
          const Index yy = std::clamp<Index>(y + dy, 0, image.rows() - 1);
          const Index xx = std::clamp<Index>(x + dx, 0, image.cols() - 1);
          m = std::max(m, image(yy, xx));
        }
      }
      out(y, x) = m;
    }
  }
  return out;
}

FfnnParams siren_init(const InrArch& arch, Rng& rng) {
  if (arch.widths.size() < 2) throw ShapeError("siren_init: need at least one layer");
  FfnnParams net;
  const std::size_t L = arch.widths.size() - 1;
  for (std::size_t l = 0; l < L; ++l) {
    const Index in = arch.widths[l];
    const Index out = arch.widths[l + 1];
    const double d = static_cast<double>(in);
    const double wb = l == 0 ? 1.0 / d : std::sqrt(6.0 / d) / arch.omega0;
    const double bb = 1.0 / std::sqrt(d);
    const bool last = l + 1 == L;
    net.layers.push_back({uniform_tensor(out, in, -wb, wb, rng), uniform_tensor(1, out, -bb, bb, rng),
                          last ? ActivationDescriptor::identity()
                               : ActivationDescriptor::sine(arch.omega0)});
  }
  return net;
}

InrFit train_inr(const Signal& signal, const FfnnParams& init, const InrTrainOptions& opts) {
  init.validate();
  ParameterStore store;
  std::vector<ParamId> w_ids, b_ids;
  std::vector<ActivationDescriptor> acts;
  for (std::size_t l = 0; l < init.layers.size(); ++l) {
    w_ids.push_back(store.add("w" + std::to_string(l + 1), init.layers[l].weight));
    b_ids.push_back(store.add("b" + std::to_string(l + 1), init.layers[l].bias));
    acts.push_back(init.layers[l].activation);
  }
  auto loss = [&](Binding& b) {
    std::vector<Var> w, bias;
    for (std::size_t l = 0; l < w_ids.size(); ++l) {
      w.push_back(b(w_ids[l]));
      bias.push_back(b(b_ids[l]));
    }
    Var y = ffnn_forward(acts, w, bias, b.tape().constant(signal.coords));
    return mse(y, b.tape().constant(signal.values));
  };
  AdamOptions ao;
  ao.lr = opts.lr;
  AdamState state(store, ao);
  InrFit fit;
  Gradients g;
  double current = evaluate_with_gradients(loss, store, &g);
  for (int step = 0; step < opts.steps; ++step) {
    if (!std::isfinite(current)) {
      throw NumericError("train_inr diverged at step " + std::to_string(step));
    }
    if (opts.mse_threshold > 0.0 && current < opts.mse_threshold) break;
    adam_step(state, store, g);
    ++fit.steps_taken;
    try {
      current = evaluate_with_gradients(loss, store, &g);
    } catch (const NumericError&) {
      throw NumericError("train_inr diverged at step " + std::to_string(step + 1));
    }
  }
  fit.net = init;
  for (std::size_t l = 0; l < init.layers.size(); ++l) {
    fit.net.layers[l].weight = store.value(w_ids[l]);
    fit.net.layers[l].bias = store.value(b_ids[l]);
  }
  fit.mse = current;
  return fit;
}

InrFit train_inr(const Signal& signal, const InrArch& arch, const InrTrainOptions& opts,
                 std::uint64_t seed) {
  Rng rng(seed);
  return train_inr(signal, siren_init(arch, rng), opts);
}

}  // namespace scalegmn
