#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "scalegmn/cnn.hpp"
#include "scalegmn/ffnn.hpp"
#include "scalegmn/orbit.hpp"

namespace scalegmn {

enum class Direction { Forward, Bidirectional };

enum class VertexRole { Input, Hidden, Output };

/// Graph view of one datapoint network. Vertices are ordered layer by layer;
/// forward edges are ordered by layer, then target, then source, so the edges
/// of layer l enumerate W_l row-major. Backward edge k mirrors forward edge k
/// (target -> source) and carries its own feature row.
struct ParamGraph {
  std::vector<Index> widths;                      // d_0..d_L
  std::vector<ActivationDescriptor> activations;  // layers 1..L
  std::vector<Index> layer_offset;                // first vertex of each layer

  IndexList vertex_layer;
  IndexList vertex_index;  // position within its layer
  Tensor vertex_features;  // V x 1

  IndexList edge_src;      // layer l-1 vertex
  IndexList edge_dst;      // layer l vertex
  IndexList edge_layer;    // l
  Tensor edge_features;    // E x de
  Tensor edge_mask;        // 1 where an edge feature entry is a real weight

  bool bidirectional = false;
  Tensor backward_features;  // E x de when bidirectional

  bool from_cnn = false;
  Index kh_max = 1;
  Index kw_max = 1;

  [[nodiscard]] Index num_vertices() const { return static_cast<Index>(vertex_layer.size()); }
  [[nodiscard]] Index num_edges() const { return static_cast<Index>(edge_src.size()); }
  [[nodiscard]] Index num_layers() const { return static_cast<Index>(widths.size()) - 1; }
  [[nodiscard]] Index edge_dim() const { return edge_features.cols(); }
  [[nodiscard]] VertexRole role(Index v) const;
  [[nodiscard]] Index vertex_id(Index layer, Index index) const { return layer_offset[layer] + index; }
  /// Group of a hidden layer's activation, None for input/output layers.
  [[nodiscard]] GroupKind layer_group(Index layer) const;
};

struct GraphOptions {
  Direction direction = Direction::Forward;
  bool shift_sine_bias = true;
};

/// x_V = [1] for inputs and the bias entry otherwise; x_E = the weight. Sine
/// nets are phase-canonicalised first unless disabled.
ParamGraph build_graph(const FfnnParams& net, const GraphOptions& opts = {});

/// One vertex per channel. Kernels are written top-left anchored into a
/// kh_max x kw_max window (row-major); dense head weights occupy entry 0.
ParamGraph build_graph_cnn(const CnnParams& net, Index kh_max, Index kw_max,
                           const GraphOptions& opts = {});

/// Positive group: backward feature = 1 / forward feature on real entries
/// (padding stays 0); sign and none: a copy. Throws NumericError listing the
/// offending edges when a positive-group weight is below 1e-12 in magnitude.
void add_backward_edges(ParamGraph& graph, GroupKind group);

/// Sharing-class assignment for positional encodings.
struct PeAssignment {
  IndexList vertex_class;
  IndexList edge_class;
  Index vertex_classes = 0;
  Index edge_classes = 0;
};

/// Vertices: one class per input vertex, one per hidden layer, one per
/// output vertex. Edges: one class per hidden-to-hidden layer pair, one per
/// source for edges leaving inputs, one per target for edges entering outputs,
/// one per (source, target) when the net has a single layer.
PeAssignment assign_pe(const ParamGraph& graph);

/// Acts on raw features directly: permutes hidden vertices and scales vertex,
/// edge and backward-edge features by the orbit multipliers.
ParamGraph transform_graph(const ParamGraph& graph, const OrbitElement& g);

/// One line per vertex then per edge: kind, layer, index, features.
void dump_graph(const ParamGraph& graph, std::ostream& out);
std::string dump_graph(const ParamGraph& graph);

/// Same-architecture graphs stacked row-wise with offset indices. Index lists
/// name rows of the stacked vertex/edge tensors.
struct GraphBatch {
  Index graphs = 0;
  Index vertices_per_graph = 0;
  Index edges_per_graph = 0;
  std::vector<Index> widths;
  std::vector<ActivationDescriptor> activations;
  bool bidirectional = false;

  Tensor vertex_features;
  Tensor edge_features;
  Tensor backward_features;
  IndexList src, dst;
  IndexList vertex_graph;
  IndexList vertex_class, edge_class;
  Index vertex_classes = 0, edge_classes = 0;

  IndexList input_vertices, hidden_vertices, output_vertices;
  IndexList fw_to_hidden, fw_to_output;  // forward edges grouped by target role
  IndexList bw_to_hidden, bw_to_input;   // backward edges grouped by target role

  [[nodiscard]] Index num_vertices() const { return vertex_features.rows(); }
  [[nodiscard]] Index num_edges() const { return edge_features.rows(); }
};

GraphBatch make_batch(const std::vector<const ParamGraph*>& graphs);
GraphBatch make_batch(const std::vector<ParamGraph>& graphs);

}  // namespace scalegmn
