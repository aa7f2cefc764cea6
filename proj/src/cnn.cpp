#include "scalegmn/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "scalegmn/params.hpp"

namespace scalegmn {

std::vector<Index> CnnParams::widths() const {
  std::vector<Index> w;
  if (!convs.empty()) {
    w.push_back(convs.front().in_channels());
  } else if (!head.empty()) {
    w.push_back(head.front().weight.cols());
  }
  for (const auto& c : convs) w.push_back(c.out_channels());
  for (const auto& h : head) w.push_back(h.weight.rows());
  return w;
}

std::vector<GroupKind> CnnParams::hidden_groups() const {
  std::vector<GroupKind> g;
  const std::size_t L = num_layers();
  for (std::size_t l = 0; l + 1 < L; ++l) {
    g.push_back(l < convs.size() ? convs[l].activation.group()
                                 : head[l - convs.size()].activation.group());
  }
  return g;
}

Index CnnParams::param_count() const {
  Index n = 0;
  for (const auto& c : convs) n += c.kernel.size() + c.bias.size();
  for (const auto& h : head) n += h.weight.size() + h.bias.size();
  return n;
}

void CnnParams::validate() const {
  if (num_layers() == 0) throw ShapeError("cnn has no layers");
  Index prev = -1;
  for (std::size_t l = 0; l < convs.size(); ++l) {
    const auto& c = convs[l];
    if (c.kh < 1 || c.kw < 1 || c.kernel.cols() % (c.kh * c.kw) != 0) {
      throw ShapeError("conv layer " + std::to_string(l + 1) + ": kernel " +
                       shape_string(c.kernel) + " inconsistent with extent " +
                       std::to_string(c.kh) + "x" + std::to_string(c.kw));
    }
    if (c.bias.rows() != 1 || c.bias.cols() != c.kernel.rows()) {
      throw ShapeError("conv layer " + std::to_string(l + 1) + ": bias shape");
    }
    if (prev >= 0 && c.in_channels() != prev) {
      throw ShapeError("conv layer " + std::to_string(l + 1) + " does not chain");
    }
    prev = c.out_channels();
  }
  for (std::size_t l = 0; l < head.size(); ++l) {
    const auto& h = head[l];
    if ((prev >= 0 && h.weight.cols() != prev) || h.bias.cols() != h.weight.rows()) {
      throw ShapeError("head layer " + std::to_string(l + 1) + " does not chain");
    }
    prev = h.weight.rows();
  }
}

Var cnn_forward(const CnnParams& structure, std::span<const Var> kernels,
                std::span<const Var> conv_biases, std::span<const Var> head_weights,
                std::span<const Var> head_biases, Var images, Index batch, Index height,
                Index width) {
  Var h = images;
  Index hh = height, ww = width;
  for (std::size_t l = 0; l < structure.convs.size(); ++l) {
    const ConvLayer& c = structure.convs[l];
    Var patches = im2col(h, batch, hh, ww, h.cols(), c.kh, c.kw);
    hh = hh - c.kh + 1;
    ww = ww - c.kw + 1;
    Var z = matmul_nt(patches, kernels[l]);
    if (c.activation.gain() != 1.0) z = scale(z, c.activation.gain());
    h = apply_activation(c.activation, add_rowwise(z, conv_biases[l]));
  }
  if (!structure.convs.empty()) {
    const Index per = hh * ww;
    IndexList seg(static_cast<std::size_t>(batch * per));
    for (Index r = 0; r < batch * per; ++r) seg[static_cast<std::size_t>(r)] = r / per;
    h = scale(scatter_add_rows(h, seg, batch), 1.0 / static_cast<double>(per));
  }
  std::vector<ActivationDescriptor> acts;
  for (const auto& l : structure.head) acts.push_back(l.activation);
  return ffnn_forward(acts, head_weights, head_biases, h);
}

Tensor cnn_forward(const CnnParams& net, const Tensor& images, Index batch, Index height,
                   Index width) {
  net.validate();
  Tape tape;
  std::vector<Var> k, cb, hw, hb;
  for (const auto& c : net.convs) {
    k.push_back(tape.constant(c.kernel));
    cb.push_back(tape.constant(c.bias));
  }
  for (const auto& h : net.head) {
    hw.push_back(tape.constant(h.weight));
    hb.push_back(tape.constant(h.bias));
  }
  return cnn_forward(net, k, cb, hw, hb, tape.constant(images), batch, height, width).value();
}

namespace {

// Permute/scale one layer whose weight rows are outputs and whose columns are
// `block`-wide groups per input unit.
void transform_layer(const Tensor& w, const Tensor& b, Index block, const IndexList* pout,
                     const Eigen::VectorXd* qout, const IndexList* pin, const Eigen::VectorXd* qin,
                     Tensor& w2, Tensor& b2) {
  const Index in = w.cols() / block;
  for (Index o = 0; o < w.rows(); ++o) {
    const Index no = pout ? (*pout)[static_cast<std::size_t>(o)] : o;
    const double qo = qout ? (*qout)[o] : 1.0;
    b2(0, no) = qo * b(0, o);
    for (Index i = 0; i < in; ++i) {
      const Index ni = pin ? (*pin)[static_cast<std::size_t>(i)] : i;
      const double qi = qin ? (*qin)[i] : 1.0;
      for (Index k = 0; k < block; ++k) w2(no, ni * block + k) = qo * w(o, i * block + k) / qi;
    }
  }
}

}  // namespace

CnnParams apply_orbit(const CnnParams& net, const OrbitElement& g) {
  net.validate();
  check_orbit(g, net.widths(), net.hidden_groups());
  CnnParams out = net;
  const std::size_t L = net.num_layers();
  for (std::size_t l = 1; l <= L; ++l) {
    const IndexList* pout = l < L ? &g.perm[l - 1] : nullptr;
    const Eigen::VectorXd* qout = l < L ? &g.scale[l - 1] : nullptr;
    const IndexList* pin = l > 1 ? &g.perm[l - 2] : nullptr;
    const Eigen::VectorXd* qin = l > 1 ? &g.scale[l - 2] : nullptr;
    if (l <= net.convs.size()) {
      const ConvLayer& c = net.convs[l - 1];
      ConvLayer& c2 = out.convs[l - 1];
      transform_layer(c.kernel, c.bias, c.kh * c.kw, pout, qout, pin, qin, c2.kernel, c2.bias);
    } else {
      const FfnnLayer& h = net.head[l - 1 - net.convs.size()];
      FfnnLayer& h2 = out.head[l - 1 - net.convs.size()];
      transform_layer(h.weight, h.bias, 1, pout, qout, pin, qin, h2.weight, h2.bias);
    }
  }
  return out;
}

Eigen::VectorXd stat_features(const CnnParams& net) {
  std::vector<Tensor> w, b;
  for (const auto& c : net.convs) {
    w.push_back(c.kernel);
    b.push_back(c.bias);
  }
  for (const auto& h : net.head) {
    w.push_back(h.weight);
    b.push_back(h.bias);
  }
  return stat_features(w, b);
}

Eigen::VectorXd flatten(const CnnParams& net) {
  Eigen::VectorXd v(net.param_count());
  Index k = 0;
  auto put = [&](const Tensor& t) {
    for (Index i = 0; i < t.size(); ++i) v[k++] = t.data()[i];
  };
  for (const auto& c : net.convs) {
    put(c.kernel);
    put(c.bias);
  }
  for (const auto& h : net.head) {
    put(h.weight);
    put(h.bias);
  }
  return v;
}

BlobTask make_blob_task(Index count, std::uint64_t seed) {
  Rng rng(seed);
  constexpr Index n = BlobTask::kSize;
  std::uniform_real_distribution<double> amp(0.5, 1.5);
  std::uniform_real_distribution<double> centre(2.0, 5.0);
  std::normal_distribution<double> noise(0.0, 0.1);
  BlobTask task;
  task.count = count;
  task.images.resize(count * n * n, 1);
  for (Index s = 0; s < count; ++s) {
    const int label = static_cast<int>(s % 2);
    const double sigma = label == 0 ? 1.0 : 2.0;
    const double a = amp(rng);
    const double cx = centre(rng);
    const double cy = centre(rng);
    for (Index y = 0; y < n; ++y) {
      for (Index x = 0; x < n; ++x) {
        const double d2 = (static_cast<double>(x) - cx) * (static_cast<double>(x) - cx) +
                          (static_cast<double>(y) - cy) * (static_cast<double>(y) - cy);
        task.images((s * n + y) * n + x, 0) = a * std::exp(-d2 / (2.0 * sigma * sigma)) + noise(rng);
      }
    }
    task.labels.push_back(label);
  }
  return task;
}

CnnParams init_toy_cnn(const CnnHyper& hyper, Rng& rng) {
  CnnParams net;
  for (std::size_t l = 0; l + 1 < hyper.channels.size(); ++l) {
    const Index in = hyper.channels[l];
    const Index out = hyper.channels[l + 1];
    const double bound = hyper.init_scale / std::sqrt(static_cast<double>(in * hyper.kernel * hyper.kernel));
    net.convs.push_back({uniform_tensor(out, in * hyper.kernel * hyper.kernel, -bound, bound, rng),
                         uniform_tensor(1, out, -bound, bound, rng), hyper.kernel, hyper.kernel,
                         hyper.activation});
  }
  const Index last = hyper.channels.back();
  const double bound = hyper.init_scale / std::sqrt(static_cast<double>(last));
  net.head.push_back({uniform_tensor(hyper.classes, last, -bound, bound, rng),
                      uniform_tensor(1, hyper.classes, -bound, bound, rng),
                      ActivationDescriptor::identity()});
  return net;
}

double cnn_accuracy(const CnnParams& net, const BlobTask& data) {
  const Tensor logits = cnn_forward(net, data.images, data.count, BlobTask::kSize, BlobTask::kSize);
  Index correct = 0;
  for (Index i = 0; i < data.count; ++i) {
    Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (arg == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.count);
}

CnnFit train_toy_cnn(std::uint64_t task_seed, const CnnHyper& hyper, std::uint64_t init_seed) {
  const BlobTask train = make_blob_task(200, derive_seed(task_seed, 0));
  const BlobTask test = make_blob_task(200, derive_seed(task_seed, 1));
  Rng rng(init_seed);
  CnnFit fit;
  fit.net = init_toy_cnn(hyper, rng);

  ParameterStore store;
  std::vector<ParamId> ids;
  for (const auto& c : fit.net.convs) {
    ids.push_back(store.add("kernel", c.kernel));
    ids.push_back(store.add("bias", c.bias));
  }
  for (const auto& h : fit.net.head) {
    ids.push_back(store.add("weight", h.weight));
    ids.push_back(store.add("bias", h.bias));
  }
  const CnnParams structure = fit.net;
  auto loss = [&](Binding& b) {
    std::vector<Var> k, cb, hw, hb;
    std::size_t p = 0;
    for (std::size_t l = 0; l < structure.convs.size(); ++l) {
      k.push_back(b(ids[p++]));
      cb.push_back(b(ids[p++]));
    }
    for (std::size_t l = 0; l < structure.head.size(); ++l) {
      hw.push_back(b(ids[p++]));
      hb.push_back(b(ids[p++]));
    }
    Var logits = cnn_forward(structure, k, cb, hw, hb, b.tape().constant(train.images),
                             train.count, BlobTask::kSize, BlobTask::kSize);
    return cross_entropy(logits, train.labels);
  };
  AdamOptions ao;
  ao.lr = hyper.lr;
  AdamState state(store, ao);
  try {
    for (int s = 0; s < hyper.steps; ++s) {
      Gradients g;
      const double value = evaluate_with_gradients(loss, store, &g);
      if (!std::isfinite(value)) throw NumericError("non-finite loss");
      adam_step(state, store, g);
    }
  } catch (const NumericError&) {
    fit.diverged = true;
  }
  std::size_t p = 0;
  for (auto& c : fit.net.convs) {
    c.kernel = store.values()[p++];
    c.bias = store.values()[p++];
  }
  for (auto& h : fit.net.head) {
    h.weight = store.values()[p++];
    h.bias = store.values()[p++];
  }
  if (fit.diverged || !std::isfinite(flatten(fit.net).sum())) {
    fit.diverged = true;
    fit.test_accuracy = 0.5;
  } else {
    fit.test_accuracy = cnn_accuracy(fit.net, test);
  }
  return fit;
}

}  // namespace scalegmn
