#include "scalegmn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scalegmn/inr.hpp"
#include "scalegmn/parallel.hpp"

namespace scalegmn {

double check_function_preservation(const FfnnParams& a, const FfnnParams& b, const Tensor& grid) {
  if (a.widths() != b.widths()) throw ShapeError("function preservation needs one architecture");
  return (ffnn_forward(a, grid) - ffnn_forward(b, grid)).cwiseAbs().maxCoeff();
}

Tensor evaluation_grid(Index input_dim, std::uint64_t seed) {
  if (input_dim == 2) return grid_coords(16, 16);
  Rng rng(seed);
  return uniform_tensor(256, input_dim, -1.0, 1.0, rng);
}

void SymmetryReport::merge(const SymmetryReport& other) {
  deviations.insert(deviations.end(), other.deviations.begin(), other.deviations.end());
  max_deviation = std::max(max_deviation, other.max_deviation);
  trials += other.trials;
  passed = passed && other.passed;
}

nlohmann::json to_json(const SymmetryReport& r) {
  return nlohmann::json{{"name", r.name},
                        {"seed", r.seed},
                        {"config_hash", r.config_hash},
                        {"tolerance", r.tolerance},
                        {"trials", r.trials},
                        {"max_deviation", r.max_deviation},
                        {"passed", r.passed},
                        {"deviations", r.deviations}};
}

namespace {

template <typename Deviation>
SymmetryReport certify(const char* name, const NetSampler& nets, const OrbitSampler& orbits,
                       const CertifyOptions& opts, Deviation&& deviation) {
  SymmetryReport rep;
  rep.name = name;
  rep.seed = opts.seed;
  rep.tolerance = opts.tolerance;
  Rng rng(opts.seed);
  struct Trial {
    std::size_t net;
    OrbitElement orbit;
  };
  std::vector<FfnnParams> sampled;
  std::vector<Trial> trials;
  for (int n = 0; n < opts.nets; ++n) {
    sampled.push_back(nets(rng));
    for (int k = 0; k < opts.orbits_per_net; ++k) trials.push_back({sampled.size() - 1, orbits(sampled.back(), rng)});
  }
  rep.deviations.assign(trials.size(), 0.0);
  parallel_for(trials.size(), [&](std::size_t i) {
    rep.deviations[i] = deviation(sampled[trials[i].net], trials[i].orbit);
  });
  rep.trials = static_cast<int>(trials.size());
  for (double d : rep.deviations) rep.max_deviation = std::max(rep.max_deviation, d);
  rep.passed = std::all_of(rep.deviations.begin(), rep.deviations.end(),
                           [&](double d) { return d < opts.tolerance; });
  return rep;
}

}  // namespace

SymmetryReport certify_invariance(const Embedder& f, const NetSampler& nets, const OrbitSampler& orbits,
                                  const CertifyOptions& opts) {
  return certify("invariance", nets, orbits, opts, [&](const FfnnParams& net, const OrbitElement& o) {
    const Tensor base = f(net);
    const Tensor moved = f(apply_orbit(net, o));
    return (moved - base).cwiseAbs().maxCoeff() / (base.cwiseAbs().maxCoeff() + 1e-9);
  });
}

SymmetryReport certify_equivariance(const Editor& edit, const NetSampler& nets,
                                    const OrbitSampler& orbits, const CertifyOptions& opts) {
  return certify("equivariance", nets, orbits, opts, [&](const FfnnParams& net, const OrbitElement& o) {
    const Eigen::VectorXd lhs = flatten(edit(apply_orbit(net, o)));
    const Eigen::VectorXd rhs = flatten(apply_orbit(edit(net), o));
    return (lhs - rhs).cwiseAbs().maxCoeff();
  });
}

ParamGraph graph_for(const ScaleGMNModel& model, const FfnnParams& net) {
  return build_graph(net, {model.config().direction, true});
}

Embedder scalegmn_embedder(const ScaleGMNModel& model) {
  return [&model](const FfnnParams& net) {
    const GraphBatch b = make_batch(std::vector<ParamGraph>{graph_for(model, net)});
    Tape tape;
    Binding bind(tape, model.store());
    return model.forward(bind, b).embedding.value().value();
  };
}

Editor scalegmn_editor(const ScaleGMNModel& model) {
  return [&model](const FfnnParams& net) {
    const GraphBatch b = make_batch(std::vector<ParamGraph>{graph_for(model, net)});
    Tape tape;
    Binding bind(tape, model.store());
    const ModelOutput out = model.forward(bind, b);
    return edited_nets(b, out.vertex_bias->value(), out.edge_weight->value()).front();
  };
}

namespace {

enum Channel { kBias = 0, kZ = 1, kX = 2, kInvGz = 3, kInvGx = 4 };

std::string vertex_name(const ParamGraph& g, Index v) {
  return "vertex (layer " + std::to_string(g.vertex_layer[v]) + ", index " +
         std::to_string(g.vertex_index[v]) + ")";
}

}  // namespace

SimulationResult simulate_ffnn(const FfnnParams& net, const Tensor& x, const Tensor& output_grad,
                               bool need_gradients) {
  net.validate();
  SimulationResult res;
  res.graph = build_graph(net, {Direction::Bidirectional, false});
  const ParamGraph& g = res.graph;
  const Index L = g.num_layers();
  const Index V = g.num_vertices();
  const Index E = g.num_edges();
  if (x.rows() != 1 || x.cols() != g.widths.front()) throw ShapeError("simulation input must be 1 x d_0");
  if (output_grad.rows() != 1 || output_grad.cols() != g.widths.back()) {
    throw ShapeError("output gradient must be 1 x d_L");
  }

  SimulationState s{Tensor::Zero(V, 5), g.edge_features.leftCols(1)};
  s.vertices.col(kBias) = g.vertex_features.col(0);
  for (Index i = 0; i < g.widths.front(); ++i) {
    s.vertices(i, kZ) = x(0, i);
    s.vertices(i, kX) = x(0, i);
  }
  if (need_gradients) {
    for (Index i = 0; i < g.widths.back(); ++i) {
      const Index v = g.vertex_id(L, i);
      if (output_grad(0, i) == 0.0) throw NumericError("zero output gradient at " + vertex_name(g, v));
      s.vertices(v, kInvGx) = 1.0 / output_grad(0, i);
    }
  }
  res.rounds.push_back(s);

  const Index rounds = need_gradients ? 2 * L : L;
  for (Index t = 1; t <= rounds; ++t) {
    const Tensor& prev = res.rounds.back().vertices;
    Tensor next = prev;
    // forward channel: z = gain * sum_j w_ij x_j + b, x = sigma(z)
    Eigen::VectorXd pre = Eigen::VectorXd::Zero(V);
    Eigen::VectorXd back = Eigen::VectorXd::Zero(V);
    for (Index e = 0; e < E; ++e) {
      const double w = s.edges(e, 0);
      pre[g.edge_dst[e]] += w * prev(g.edge_src[e], kX);
      const double inv = prev(g.edge_dst[e], kInvGz);
      if (inv != 0.0) back[g.edge_src[e]] += w / inv;  // g_m: reciprocal of the inverse channel
    }
    for (Index v = 0; v < V; ++v) {
      const Index l = g.vertex_layer[v];
      if (l > 0) {
        const ActivationDescriptor& act = g.activations[l - 1];
        next(v, kZ) = act.gain() * pre[v] + prev(v, kBias);
        next(v, kX) = act.apply(next(v, kZ));
      }
      if (!need_gradients) continue;
      const bool valid = t >= 2 * L - l;
      if (l < L) {
        const double sum = g.activations[l].gain() * back[v];
        if (sum == 0.0) {
          if (valid) throw NumericError("zero backward aggregate at " + vertex_name(g, v));
          next(v, kInvGx) = 0.0;
        } else {
          next(v, kInvGx) = 1.0 / sum;  // g_U
        }
      }
      if (l > 0) {
        const double d = g.activations[l - 1].derivative(next(v, kZ));
        if (next(v, kInvGx) == 0.0) {
          next(v, kInvGz) = 0.0;
        } else if (d == 0.0) {
          if (valid) throw NumericError("zero activation derivative at " + vertex_name(g, v));
          next(v, kInvGz) = 0.0;
        } else {
          next(v, kInvGz) = next(v, kInvGx) / d;
        }
      }
    }
    res.rounds.push_back({next, s.edges});
  }

  auto layer_row = [&](const Tensor& state, Index l, int channel, bool invert) {
    Tensor row(1, g.widths[l]);
    for (Index i = 0; i < g.widths[l]; ++i) {
      const double v = state(g.vertex_id(l, i), channel);
      row(0, i) = invert ? 1.0 / v : v;
    }
    return row;
  };
  for (Index l = 0; l <= L; ++l) {
    res.z.push_back(layer_row(res.rounds[l].vertices, l, kZ, false));
    res.x.push_back(layer_row(res.rounds[l].vertices, l, kX, false));
    if (need_gradients) {
      const Tensor& at = res.rounds[2 * L - l].vertices;
      res.grad_x.push_back(layer_row(at, l, kInvGx, true));
      res.grad_z.push_back(l == 0 ? Tensor() : layer_row(at, l, kInvGz, true));
    }
  }
  return res;
}

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw Error("kendall_tau: rankings differ in length");
  if (a < 2) throw Error("kendall_tau: need at least two items");
}

// Pairs tied within each run of equal keys.
std::int64_t tied_pairs(const std::vector<double>& sorted) {
  std::int64_t total = 0, run = 1;
  for (std::size_t i = 1; i <= sorted.size(); ++i) {
    if (i < sorted.size() && sorted[i] == sorted[i - 1]) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

std::int64_t merge_count(std::vector<double>& a, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = (lo + hi) / 2;
  std::int64_t swaps = merge_count(a, buf, lo, mid) + merge_count(a, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (a[j] < a[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = a[j++];
    } else {
      buf[k++] = a[i++];
    }
  }
  while (i < mid) buf[k++] = a[i++];
  while (j < hi) buf[k++] = a[j++];
  std::copy(buf.begin() + lo, buf.begin() + hi, a.begin() + lo);
  return swaps;
}

}  // namespace

double kendall_tau(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_lengths(pred.size(), truth.size());
  const std::size_t n = pred.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pred[a] != pred[b] ? pred[a] < pred[b] : truth[a] < truth[b];
  });
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = pred[order[i]];
    ys[i] = truth[order[i]];
  }
  const auto n0 = static_cast<std::int64_t>(n * (n - 1) / 2);
  const std::int64_t n1 = tied_pairs(xs);
  std::int64_t n3 = 0, run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && xs[i] == xs[i - 1] && ys[i] == ys[i - 1]) {
      ++run;
    } else {
      n3 += run * (run - 1) / 2;
      run = 1;
    }
  }
  std::vector<double> buf(n);
  const std::int64_t swaps = merge_count(ys, buf, 0, n);
  const std::int64_t n2 = tied_pairs(ys);
  const std::int64_t s = n0 - n1 - n2 + n3 - 2 * swaps;  // concordant - discordant
  const double denom = std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
  return denom == 0.0 ? 0.0 : static_cast<double>(s) / denom;
}

double kendall_tau_a(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_lengths(pred.size(), truth.size());
  std::int64_t s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = i + 1; j < pred.size(); ++j) {
      const double a = (pred[i] - pred[j]) * (truth[i] - truth[j]);
      s += (a > 0) - (a < 0);
    }
  }
  const double n = static_cast<double>(pred.size());
  return static_cast<double>(s) / (n * (n - 1) / 2);
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rows() != static_cast<Index>(labels.size())) throw ShapeError("accuracy: label count mismatch");
  if (labels.empty()) return 0.0;
  int hit = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    hit += arg == labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace scalegmn
