#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "scalegmn/equivariant.hpp"
#include "scalegmn/graph.hpp"

namespace scalegmn {

enum class ReadoutKind { DeepSetsIo, OutputConcat };
enum class HeadKind { Invariant, EquivariantEdit };

struct ScaleGMNConfig {
  Index vertex_width = 16;
  Index edge_width = 16;
  Index pe_width = 4;
  int layers = 2;  // T
  Direction direction = Direction::Forward;
  GroupKind group = GroupKind::Sign;
  bool edge_updates = true;
  bool pe_in_messages = true;
  ReadoutKind readout = ReadoutKind::DeepSetsIo;
  HeadKind head = HeadKind::Invariant;
  bool skip = true;
  double gamma_init = 0.01;
  RescaleVariant rescale = RescaleVariant::Hadamard;
  MlpShape mlp{{32}, false};
  bool rho_layer_norm = false;
  Index readout_hidden = 64;
  Index out_dim = 2;

  /// Throws Error on inconsistent fields.
  void validate() const;
  [[nodiscard]] CanonMode canon_mode() const { return default_canon_mode(group); }
};

nlohmann::json to_json(const ScaleGMNConfig& c);
/// Missing keys keep their defaults.
ScaleGMNConfig config_from_json(const nlohmann::json& j);

/// Shape information a model is built for: one architecture of datapoint net.
struct ModelArch {
  std::vector<Index> widths;
  Index vertex_classes = 0;
  Index edge_classes = 0;
  Index edge_dim = 1;

  static ModelArch of(const ParamGraph& g);
  static ModelArch of(const GraphBatch& b);
  friend bool operator==(const ModelArch&, const ModelArch&) = default;
};

nlohmann::json to_json(const ModelArch& a);
ModelArch arch_from_json(const nlohmann::json& j);

struct GraphState {
  Var vertices;         // V x d_v
  Var edges;            // E x d_e
  std::optional<Var> backward;  // E x d_e when bidirectional
};

struct ModelOutput {
  std::optional<Var> embedding;    // graphs x out_dim (invariant head)
  std::optional<Var> vertex_bias;  // V x 1 edited vertex features (edit head)
  std::optional<Var> edge_weight;  // E x de edited edge features (edit head)
};

class ScaleGMNModel {
 public:
  ScaleGMNModel(const ScaleGMNConfig& config, const ModelArch& arch, std::uint64_t seed);

  [[nodiscard]] const ScaleGMNConfig& config() const { return config_; }
  [[nodiscard]] const ModelArch& arch() const { return arch_; }
  [[nodiscard]] ParameterStore& store() { return store_; }
  [[nodiscard]] const ParameterStore& store() const { return store_; }

  GraphState init_representations(Binding& b, const GraphBatch& g) const;
  /// Aggregated forward messages, V x d_v (zero rows for input vertices).
  Var message_forward(Binding& b, int t, const GraphBatch& g, const GraphState& s) const;
  /// Aggregated backward messages, V x d_v (zero rows for output vertices).
  Var message_backward(Binding& b, int t, const GraphBatch& g, const GraphState& s) const;
  Var update_vertices(Binding& b, int t, const GraphBatch& g, const GraphState& s, Var m_fw,
                      std::optional<Var> m_bw) const;
  Var update_edges(Binding& b, int t, const GraphBatch& g, Var vertices, Var edges) const;
  Var readout(Binding& b, const GraphBatch& g, Var vertices) const;
  /// theta' = theta + gamma * delta, as edited graph features.
  ModelOutput edit(Binding& b, const GraphBatch& g, const GraphState& s) const;

  /// T rounds of message passing, then the configured head.
  ModelOutput forward(Binding& b, const GraphBatch& g) const;
  /// Runs the message-passing rounds only.
  GraphState propagate(Binding& b, const GraphBatch& g) const;

  [[nodiscard]] std::optional<ParamId> gamma() const { return gamma_; }

 private:
  struct Round {
    ReScaleEqNet rescale_fw, rescale_bw;
    ScaleEqNet msg_fw, msg_bw;
    Mlp msg_fw_out, msg_bw_in;
    ScaleEqNet upd_v;
    Mlp upd_in, upd_out;
    Canonicalizer edge_canon;
    ScaleEqNet upd_e;
  };

  Var vertex_pe(Binding& b, const GraphBatch& g) const;
  Var edge_pe(Binding& b, const GraphBatch& g) const;
  /// Canonicalised rows for hidden vertices, raw rows for i/o vertices.
  Var vertex_invariants(Binding& b, const Canonicalizer& c, const GraphBatch& g, Var h) const;

  ScaleGMNConfig config_;
  ModelArch arch_;
  ParameterStore store_;

  ParamId vertex_pe_, edge_pe_;
  ScaleEqNet init_v_, init_e_, init_e_bw_;
  Mlp init_in_, init_out_;
  std::vector<Round> rounds_;

  Canonicalizer read_canon_;
  Mlp read_phi_, read_mlp_;

  ScaleEqNet edit_v_, edit_e_;
  Mlp edit_out_;
  std::optional<ParamId> gamma_;
};

/// Edited datapoint nets from an edit-head output (FFNN graphs only).
std::vector<FfnnParams> edited_nets(const GraphBatch& g, const Tensor& vertex_bias,
                                    const Tensor& edge_weight);

struct NetVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};
/// Per-layer weight and bias Vars of graph `index` in the batch, for
/// differentiable evaluation of edited nets.
NetVars edited_net_vars(const GraphBatch& g, Var vertex_bias, Var edge_weight, Index index);

/// checkpoint.json (config, arch, tensor index) + params.f32.
void save_checkpoint(const ScaleGMNModel& model, const std::filesystem::path& dir);
ScaleGMNModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace scalegmn
