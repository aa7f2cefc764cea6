#include "scalegmn/graph.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

namespace scalegmn {

VertexRole ParamGraph::role(Index v) const {
  const Index l = vertex_layer[static_cast<std::size_t>(v)];
  if (l == 0) return VertexRole::Input;
  if (l == num_layers()) return VertexRole::Output;
  return VertexRole::Hidden;
}

GroupKind ParamGraph::layer_group(Index layer) const {
  if (layer <= 0 || layer >= num_layers()) return GroupKind::None;
  return activations[static_cast<std::size_t>(layer - 1)].group();
}

namespace {

// Vertices and edge topology for a width list; features are filled later.
ParamGraph skeleton(const std::vector<Index>& widths, Index edge_dim) {
  ParamGraph g;
  g.widths = widths;
  Index offset = 0;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    g.layer_offset.push_back(offset);
    for (Index i = 0; i < widths[l]; ++i) {
      g.vertex_layer.push_back(static_cast<Index>(l));
      g.vertex_index.push_back(i);
    }
    offset += widths[l];
  }
  g.vertex_features = Tensor::Zero(offset, 1);
  for (std::size_t l = 1; l < widths.size(); ++l) {
    for (Index i = 0; i < widths[l]; ++i) {
      for (Index j = 0; j < widths[l - 1]; ++j) {
        g.edge_src.push_back(g.layer_offset[l - 1] + j);
        g.edge_dst.push_back(g.layer_offset[l] + i);
        g.edge_layer.push_back(static_cast<Index>(l));
      }
    }
  }
  g.edge_features = Tensor::Zero(g.num_edges(), edge_dim);
  g.edge_mask = Tensor::Zero(g.num_edges(), edge_dim);
  return g;
}

void finish(ParamGraph& g, const GraphOptions& opts) {
  if (opts.direction == Direction::Bidirectional) {
    GroupKind group = GroupKind::None;
    for (Index l = 1; l < g.num_layers(); ++l) {
      if (g.layer_group(l) != GroupKind::None) group = g.layer_group(l);
    }
    add_backward_edges(g, group);
  }
}

}  // namespace

ParamGraph build_graph(const FfnnParams& input, const GraphOptions& opts) {
  input.validate();
  const FfnnParams net = opts.shift_sine_bias ? bias_shift_net(input) : input;
  ParamGraph g = skeleton(net.widths(), 1);
  for (const auto& l : net.layers) g.activations.push_back(l.activation);
  for (Index i = 0; i < g.widths[0]; ++i) g.vertex_features(i, 0) = 1.0;
  Index e = 0;
  for (std::size_t l = 1; l <= net.layers.size(); ++l) {
    const auto& layer = net.layers[l - 1];
    for (Index i = 0; i < layer.weight.rows(); ++i) {
      g.vertex_features(g.layer_offset[l] + i, 0) = layer.bias(0, i);
      for (Index j = 0; j < layer.weight.cols(); ++j, ++e) {
        g.edge_features(e, 0) = layer.weight(i, j);
        g.edge_mask(e, 0) = 1.0;
      }
    }
  }
  finish(g, opts);
  return g;
}

ParamGraph build_graph_cnn(const CnnParams& net, Index kh_max, Index kw_max,
                           const GraphOptions& opts) {
  net.validate();
  ParamGraph g = skeleton(net.widths(), kh_max * kw_max);
  g.from_cnn = true;
  g.kh_max = kh_max;
  g.kw_max = kw_max;
  for (const auto& c : net.convs) g.activations.push_back(c.activation);
  for (const auto& h : net.head) g.activations.push_back(h.activation);
  for (Index i = 0; i < g.widths[0]; ++i) g.vertex_features(i, 0) = 1.0;
  Index e = 0;
  for (std::size_t l = 1; l <= net.num_layers(); ++l) {
    const bool conv = l <= net.convs.size();
    const Tensor& w = conv ? net.convs[l - 1].kernel : net.head[l - 1 - net.convs.size()].weight;
    const Tensor& b = conv ? net.convs[l - 1].bias : net.head[l - 1 - net.convs.size()].bias;
    const Index kh = conv ? net.convs[l - 1].kh : 1;
    const Index kw = conv ? net.convs[l - 1].kw : 1;
    if (kh > kh_max || kw > kw_max) {
      throw ShapeError("layer " + std::to_string(l) + " kernel " + std::to_string(kh) + "x" +
                       std::to_string(kw) + " exceeds maxima " + std::to_string(kh_max) + "x" +
                       std::to_string(kw_max));
    }
    const Index in = w.cols() / (kh * kw);
    for (Index o = 0; o < w.rows(); ++o) {
      g.vertex_features(g.layer_offset[l] + o, 0) = b(0, o);
      for (Index i = 0; i < in; ++i, ++e) {
        for (Index dy = 0; dy < kh; ++dy) {
          for (Index dx = 0; dx < kw; ++dx) {
            g.edge_features(e, dy * kw_max + dx) = w(o, (i * kh + dy) * kw + dx);
            g.edge_mask(e, dy * kw_max + dx) = 1.0;
          }
        }
      }
    }
  }
  finish(g, opts);
  return g;
}

void add_backward_edges(ParamGraph& graph, GroupKind group) {
  graph.bidirectional = true;
  graph.backward_features = graph.edge_features;
  if (group != GroupKind::Positive) return;
  std::ostringstream bad;
  int count = 0;
  for (Index e = 0; e < graph.num_edges(); ++e) {
    for (Index k = 0; k < graph.edge_dim(); ++k) {
      if (graph.edge_mask(e, k) == 0.0) continue;
      const double w = graph.edge_features(e, k);
      if (std::abs(w) < kDivisionGuard) {
        if (count < 20) {
          bad << " (layer " << graph.edge_layer[e] << ": "
              << graph.vertex_index[graph.edge_src[e]] << "->"
              << graph.vertex_index[graph.edge_dst[e]] << ")";
        }
        ++count;
        continue;
      }
      graph.backward_features(e, k) = 1.0 / w;
    }
  }
  if (count > 0) {
    graph.bidirectional = false;
    graph.backward_features.resize(0, 0);
    throw NumericError("backward edges need nonzero weights; " + std::to_string(count) +
                       " offending:" + bad.str());
  }
}

PeAssignment assign_pe(const ParamGraph& graph) {
  PeAssignment pe;
  const Index L = graph.num_layers();
  std::map<std::pair<Index, Index>, Index> vkeys;  // (layer, index or -1)
  for (Index v = 0; v < graph.num_vertices(); ++v) {
    const Index l = graph.vertex_layer[v];
    const Index key_index = (l == 0 || l == L) ? graph.vertex_index[v] : -1;
    auto [it, fresh] = vkeys.try_emplace({l, key_index}, static_cast<Index>(vkeys.size()));
    (void)fresh;
    pe.vertex_class.push_back(it->second);
  }
  pe.vertex_classes = static_cast<Index>(vkeys.size());
  std::map<std::tuple<Index, Index, Index>, Index> ekeys;  // (layer, src key, dst key)
  for (Index e = 0; e < graph.num_edges(); ++e) {
    const Index l = graph.edge_layer[e];
    const Index s = l - 1 == 0 ? graph.vertex_index[graph.edge_src[e]] : -1;
    const Index t = l == L ? graph.vertex_index[graph.edge_dst[e]] : -1;
    auto [it, fresh] = ekeys.try_emplace({l, s, t}, static_cast<Index>(ekeys.size()));
    (void)fresh;
    pe.edge_class.push_back(it->second);
  }
  pe.edge_classes = static_cast<Index>(ekeys.size());
  return pe;
}

ParamGraph transform_graph(const ParamGraph& graph, const OrbitElement& g) {
  std::vector<GroupKind> groups;
  for (Index l = 1; l < graph.num_layers(); ++l) groups.push_back(graph.layer_group(l));
  check_orbit(g, graph.widths, groups);
  const Index L = graph.num_layers();
  // new vertex id and multiplier per old vertex
  IndexList moved(static_cast<std::size_t>(graph.num_vertices()));
  Eigen::VectorXd q = Eigen::VectorXd::Ones(graph.num_vertices());
  for (Index v = 0; v < graph.num_vertices(); ++v) {
    const Index l = graph.vertex_layer[v];
    const Index i = graph.vertex_index[v];
    if (l > 0 && l < L) {
      moved[v] = graph.vertex_id(l, g.perm[l - 1][static_cast<std::size_t>(i)]);
      q[v] = g.scale[l - 1][i];
    } else {
      moved[v] = v;
    }
  }
  ParamGraph out = graph;
  for (Index v = 0; v < graph.num_vertices(); ++v) {
    out.vertex_features.row(moved[v]) = q[v] * graph.vertex_features.row(v);
  }
  // edge index from (layer, dst index, src index)
  auto edge_id = [&](Index l, Index dst_i, Index src_j) {
    Index base = 0;
    for (Index k = 1; k < l; ++k) base += graph.widths[k] * graph.widths[k - 1];
    return base + dst_i * graph.widths[l - 1] + src_j;
  };
  for (Index e = 0; e < graph.num_edges(); ++e) {
    const Index s = graph.edge_src[e];
    const Index d = graph.edge_dst[e];
    const Index ne = edge_id(graph.edge_layer[e], graph.vertex_index[moved[d]],
                             graph.vertex_index[moved[s]]);
    out.edge_features.row(ne) = (q[d] / q[s]) * graph.edge_features.row(e);
    out.edge_mask.row(ne) = graph.edge_mask.row(e);
    if (graph.bidirectional) {
      out.backward_features.row(ne) = (q[s] / q[d]) * graph.backward_features.row(e);
    }
  }
  return out;
}

void dump_graph(const ParamGraph& graph, std::ostream& out) {
  out << std::setprecision(9);
  for (Index v = 0; v < graph.num_vertices(); ++v) {
    out << "v " << graph.vertex_layer[v] << ' ' << graph.vertex_index[v];
    for (Index k = 0; k < graph.vertex_features.cols(); ++k) out << ' ' << graph.vertex_features(v, k);
    out << '\n';
  }
  for (Index e = 0; e < graph.num_edges(); ++e) {
    out << "e " << graph.edge_layer[e] << ' ' << graph.vertex_index[graph.edge_src[e]] << ' '
        << graph.vertex_index[graph.edge_dst[e]];
    for (Index k = 0; k < graph.edge_dim(); ++k) out << ' ' << graph.edge_features(e, k);
    out << '\n';
  }
  if (graph.bidirectional) {
    for (Index e = 0; e < graph.num_edges(); ++e) {
      out << "b " << graph.edge_layer[e] << ' ' << graph.vertex_index[graph.edge_dst[e]] << ' '
          << graph.vertex_index[graph.edge_src[e]];
      for (Index k = 0; k < graph.edge_dim(); ++k) out << ' ' << graph.backward_features(e, k);
      out << '\n';
    }
  }
}

std::string dump_graph(const ParamGraph& graph) {
  std::ostringstream s;
  dump_graph(graph, s);
  return s.str();
}

GraphBatch make_batch(const std::vector<const ParamGraph*>& graphs) {
  if (graphs.empty()) throw ShapeError("make_batch: no graphs");
  const ParamGraph& first = *graphs.front();
  GraphBatch b;
  b.graphs = static_cast<Index>(graphs.size());
  b.vertices_per_graph = first.num_vertices();
  b.edges_per_graph = first.num_edges();
  b.widths = first.widths;
  b.activations = first.activations;
  b.bidirectional = first.bidirectional;
  const PeAssignment pe = assign_pe(first);
  b.vertex_classes = pe.vertex_classes;
  b.edge_classes = pe.edge_classes;
  const Index V = b.vertices_per_graph;
  const Index E = b.edges_per_graph;
  b.vertex_features.resize(b.graphs * V, first.vertex_features.cols());
  b.edge_features.resize(b.graphs * E, first.edge_dim());
  if (b.bidirectional) b.backward_features.resize(b.graphs * E, first.edge_dim());
  const Index L = first.num_layers();
  for (Index k = 0; k < b.graphs; ++k) {
    const ParamGraph& g = *graphs[static_cast<std::size_t>(k)];
    if (g.widths != first.widths || g.edge_dim() != first.edge_dim() ||
        g.bidirectional != first.bidirectional) {
      throw ShapeError("make_batch: graph " + std::to_string(k) + " has a different architecture");
    }
    b.vertex_features.middleRows(k * V, V) = g.vertex_features;
    b.edge_features.middleRows(k * E, E) = g.edge_features;
    if (b.bidirectional) b.backward_features.middleRows(k * E, E) = g.backward_features;
    for (Index v = 0; v < V; ++v) {
      b.vertex_graph.push_back(k);
      b.vertex_class.push_back(pe.vertex_class[v]);
      const Index l = first.vertex_layer[v];
      (l == 0 ? b.input_vertices : l == L ? b.output_vertices : b.hidden_vertices).push_back(k * V + v);
    }
    for (Index e = 0; e < E; ++e) {
      b.src.push_back(k * V + first.edge_src[e]);
      b.dst.push_back(k * V + first.edge_dst[e]);
      b.edge_class.push_back(pe.edge_class[e]);
      const Index l = first.edge_layer[e];
      (l == L ? b.fw_to_output : b.fw_to_hidden).push_back(k * E + e);
      (l == 1 ? b.bw_to_input : b.bw_to_hidden).push_back(k * E + e);
    }
  }
  return b;
}

GraphBatch make_batch(const std::vector<ParamGraph>& graphs) {
  std::vector<const ParamGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  return make_batch(ptrs);
}

}  // namespace scalegmn
