#include "scalegmn/scalegmn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "scalegmn/zoo.hpp"

namespace scalegmn {

namespace {

using json = nlohmann::json;

IndexList pick(const IndexList& from, const IndexList& at) {
  IndexList out;
  out.reserve(at.size());
  for (Index i : at) out.push_back(from[i]);
  return out;
}

std::string_view direction_name(Direction d) { return d == Direction::Forward ? "forward" : "bidirectional"; }
std::string_view readout_name(ReadoutKind r) { return r == ReadoutKind::DeepSetsIo ? "deepsets-io" : "output-concat"; }
std::string_view head_name(HeadKind h) { return h == HeadKind::Invariant ? "invariant" : "equivariant-edit"; }
std::string_view rescale_name(RescaleVariant r) { return r == RescaleVariant::Hadamard ? "hadamard" : "outer"; }

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<std::string_view, E>> options,
             const char* what) {
  for (const auto& [name, value] : options) {
    if (s == name) return value;
  }
  throw Error(std::string("unknown ") + what + ": " + s);
}

/// Sum of per-subset results placed back into `rows` rows.
class Scatter {
 public:
  Scatter(Tape& t, Index rows, Index cols) : tape_(t), rows_(rows), cols_(cols) {}
  void add(Var part, const IndexList& idx) {
    if (idx.empty()) return;
    Var s = scatter_add_rows(part, idx, rows_);
    acc_ = acc_ ? *acc_ + s : s;
  }
  Var result() const { return acc_ ? *acc_ : tape_.constant(Tensor::Zero(rows_, cols_)); }

 private:
  Tape& tape_;
  Index rows_, cols_;
  std::optional<Var> acc_;
};

Var cat(std::initializer_list<Var> parts) {
  std::vector<Var> v(parts);
  return concat_cols(v);
}

}  // namespace

void ScaleGMNConfig::validate() const {
  if (vertex_width < 1 || edge_width < 1) throw Error("config: vertex/edge widths must be positive");
  if (pe_width < 0) throw Error("config: pe_width must be non-negative");
  if (layers < 0) throw Error("config: layers must be non-negative");
  if (out_dim < 1 || readout_hidden < 1) throw Error("config: readout sizes must be positive");
  if (!std::isfinite(gamma_init)) throw Error("config: gamma_init must be finite");
}

json to_json(const ScaleGMNConfig& c) {
  return json{{"vertex_width", c.vertex_width},
              {"edge_width", c.edge_width},
              {"pe_width", c.pe_width},
              {"layers", c.layers},
              {"direction", direction_name(c.direction)},
              {"group", to_string(c.group)},
              {"edge_updates", c.edge_updates},
              {"pe_in_messages", c.pe_in_messages},
              {"readout", readout_name(c.readout)},
              {"head", head_name(c.head)},
              {"skip", c.skip},
              {"gamma_init", c.gamma_init},
              {"rescale", rescale_name(c.rescale)},
              {"mlp_hidden", c.mlp.hidden},
              {"layer_norm", c.mlp.layer_norm},
              {"rho_layer_norm", c.rho_layer_norm},
              {"readout_hidden", c.readout_hidden},
              {"out_dim", c.out_dim}};
}

ScaleGMNConfig config_from_json(const json& j) {
  ScaleGMNConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("vertex_width", c.vertex_width);
  get("edge_width", c.edge_width);
  get("pe_width", c.pe_width);
  get("layers", c.layers);
  get("edge_updates", c.edge_updates);
  get("pe_in_messages", c.pe_in_messages);
  get("skip", c.skip);
  get("gamma_init", c.gamma_init);
  get("mlp_hidden", c.mlp.hidden);
  get("layer_norm", c.mlp.layer_norm);
  get("rho_layer_norm", c.rho_layer_norm);
  get("readout_hidden", c.readout_hidden);
  get("out_dim", c.out_dim);
  if (j.contains("direction")) {
    c.direction = parse_enum<Direction>(j.at("direction").get<std::string>(),
                                        {{"forward", Direction::Forward},
                                         {"bidirectional", Direction::Bidirectional}},
                                        "direction");
  }
  if (j.contains("group")) c.group = parse_group_kind(j.at("group").get<std::string>());
  if (j.contains("readout")) {
    c.readout = parse_enum<ReadoutKind>(j.at("readout").get<std::string>(),
                                        {{"deepsets-io", ReadoutKind::DeepSetsIo},
                                         {"output-concat", ReadoutKind::OutputConcat}},
                                        "readout");
  }
  if (j.contains("head")) {
    c.head = parse_enum<HeadKind>(j.at("head").get<std::string>(),
                                  {{"invariant", HeadKind::Invariant},
                                   {"equivariant-edit", HeadKind::EquivariantEdit}},
                                  "head");
  }
  if (j.contains("rescale")) {
    c.rescale = parse_enum<RescaleVariant>(j.at("rescale").get<std::string>(),
                                           {{"hadamard", RescaleVariant::Hadamard},
                                            {"outer", RescaleVariant::Outer}},
                                           "rescale");
  }
  c.validate();
  return c;
}

ModelArch ModelArch::of(const ParamGraph& g) {
  const PeAssignment pe = assign_pe(g);
  return {g.widths, pe.vertex_classes, pe.edge_classes, g.edge_dim()};
}

ModelArch ModelArch::of(const GraphBatch& b) {
  return {b.widths, b.vertex_classes, b.edge_classes, b.edge_features.cols()};
}

json to_json(const ModelArch& a) {
  return json{{"widths", a.widths},
              {"vertex_classes", a.vertex_classes},
              {"edge_classes", a.edge_classes},
              {"edge_dim", a.edge_dim}};
}

ModelArch arch_from_json(const json& j) {
  return {j.at("widths").get<std::vector<Index>>(), j.at("vertex_classes").get<Index>(),
          j.at("edge_classes").get<Index>(), j.at("edge_dim").get<Index>()};
}

ScaleGMNModel::ScaleGMNModel(const ScaleGMNConfig& config, const ModelArch& arch,
                             std::uint64_t seed)
    : config_(config), arch_(arch) {
  config_.validate();
  if (arch.widths.size() < 2) throw ShapeError("model architecture needs at least one layer");
  Rng rng(seed);
  const Index dv = config.vertex_width;
  const Index de = config.edge_width;
  const Index dp = config.pe_width;
  const Index raw_e = arch.edge_dim;
  const CanonMode mode = config.canon_mode();
  const MlpShape eq{config.mlp.hidden, config.rho_layer_norm};
  const auto mlp = [&](const std::string& name, Index in, Index out) {
    std::vector<Index> dims{in};
    dims.insert(dims.end(), config.mlp.hidden.begin(), config.mlp.hidden.end());
    dims.push_back(out);
    return Mlp(store_, name, dims, config.mlp.layer_norm, rng);
  };
  const bool bidir = config.direction == Direction::Bidirectional;
  const Index msg_p = config.pe_in_messages ? 3 * dp : 0;
  const Index upd_p = config.pe_in_messages ? dp : 0;

  vertex_pe_ = store_.add("pe.vertex", normal_tensor(std::max<Index>(arch.vertex_classes, 1), dp, 1.0, rng));
  edge_pe_ = store_.add("pe.edge", normal_tensor(std::max<Index>(arch.edge_classes, 1), dp, 1.0, rng));

  init_v_ = ScaleEqNet(store_, "init.v", {{1, mode}}, dp, {dv}, 1, eq, dv, rng);
  init_in_ = mlp("init.in", 1 + dp, dv);
  init_out_ = mlp("init.out", 1 + dp, dv);
  init_e_ = ScaleEqNet(store_, "init.e", {{raw_e, mode}}, dp, {de}, 1, eq, dv, rng);
  if (bidir) init_e_bw_ = ScaleEqNet(store_, "init.e_bw", {{raw_e, mode}}, dp, {de}, 1, eq, dv, rng);

  for (int t = 0; t < config.layers; ++t) {
    const std::string p = "layer" + std::to_string(t) + ".";
    Round r;
    r.rescale_fw = ReScaleEqNet(store_, p + "rescale_fw", config.rescale, {dv, de}, dv, mode, eq, dv, rng);
    r.msg_fw = ScaleEqNet(store_, p + "msg_fw", {{2 * dv, mode}}, msg_p, {dv}, 1, eq, dv, rng);
    r.msg_fw_out = mlp(p + "msg_fw_out", 2 * dv + msg_p, dv);
    if (bidir) {
      r.rescale_bw = ReScaleEqNet(store_, p + "rescale_bw", config.rescale, {dv, de}, dv, mode, eq, dv, rng);
      r.msg_bw = ScaleEqNet(store_, p + "msg_bw", {{2 * dv, mode}}, msg_p, {dv}, 1, eq, dv, rng);
      r.msg_bw_in = mlp(p + "msg_bw_in", 2 * dv + msg_p, dv);
    }
    const Index upd_in_w = (bidir ? 3 : 2) * dv;
    r.upd_v = ScaleEqNet(store_, p + "upd_v", {{upd_in_w, mode}}, upd_p, {dv}, 1, eq, dv, rng);
    r.upd_in = mlp(p + "upd_in", (bidir ? 2 : 1) * dv + upd_p, dv);
    r.upd_out = mlp(p + "upd_out", 2 * dv + upd_p, dv);
    if (config.edge_updates) {
      r.edge_canon = Canonicalizer(store_, p + "edge_canon", dv, mode, dv, eq, rng);
      r.upd_e = ScaleEqNet(store_, p + "upd_e", {{de, mode}}, 2 * dv + upd_p, {de}, 1, eq, dv, rng);
    }
    rounds_.push_back(std::move(r));
  }

  const Index n_in = arch.widths.front();
  const Index n_out = arch.widths.back();
  if (config.head == HeadKind::Invariant) {
    const std::vector<Index> rh{config.readout_hidden};
    if (config.readout == ReadoutKind::DeepSetsIo) {
      read_canon_ = Canonicalizer(store_, "read.canon", dv, mode, dv, eq, rng);
      read_phi_ = mlp("read.phi", read_canon_.out_dim(), dv);
      read_mlp_ = Mlp(store_, "read.mlp", {dv + (n_in + n_out) * dv, config.readout_hidden, config.out_dim},
                      config.mlp.layer_norm, rng);
    } else {
      read_mlp_ = Mlp(store_, "read.mlp", {n_out * dv, config.readout_hidden, config.out_dim},
                      config.mlp.layer_norm, rng);
    }
  } else {
    edit_v_ = ScaleEqNet(store_, "edit.v", {{dv, mode}}, dp, {1}, 1, eq, dv, rng);
    edit_out_ = mlp("edit.out", dv + dp, 1);
    edit_e_ = ScaleEqNet(store_, "edit.e", {{de, mode}}, dp, {raw_e}, 1, eq, dv, rng);
    gamma_ = store_.add("edit.gamma", Tensor::Constant(1, 1, config.gamma_init));
  }
}

Var ScaleGMNModel::vertex_pe(Binding& b, const GraphBatch& g) const {
  return gather_rows(b(vertex_pe_), g.vertex_class);
}

Var ScaleGMNModel::edge_pe(Binding& b, const GraphBatch& g) const {
  return gather_rows(b(edge_pe_), g.edge_class);
}

GraphState ScaleGMNModel::init_representations(Binding& b, const GraphBatch& g) const {
  if (ModelArch::of(g) != arch_) throw ShapeError("graph batch does not match the model architecture");
  if (config_.direction == Direction::Bidirectional && !g.bidirectional) {
    throw ShapeError("bidirectional model needs graphs with backward edges");
  }
  Tape& t = b.tape();
  const Index V = g.num_vertices();
  const Var xv = t.constant(g.vertex_features);
  const Var pv = vertex_pe(b, g);
  const Var pe = edge_pe(b, g);

  Scatter h(t, V, config_.vertex_width);
  if (!g.hidden_vertices.empty()) {
    h.add(init_v_(b, gather_rows(xv, g.hidden_vertices), gather_rows(pv, g.hidden_vertices)),
          g.hidden_vertices);
  }
  h.add(init_in_(b, cat({gather_rows(xv, g.input_vertices), gather_rows(pv, g.input_vertices)})),
        g.input_vertices);
  h.add(init_out_(b, cat({gather_rows(xv, g.output_vertices), gather_rows(pv, g.output_vertices)})),
        g.output_vertices);

  GraphState s{h.result(), init_e_(b, t.constant(g.edge_features), pe), std::nullopt};
  if (config_.direction == Direction::Bidirectional) s.backward = init_e_bw_(b, t.constant(g.backward_features), pe);
  return s;
}

Var ScaleGMNModel::message_forward(Binding& b, int t, const GraphBatch& g, const GraphState& s) const {
  const Round& r = rounds_.at(t);
  Tape& tape = b.tape();
  const Var pv = vertex_pe(b, g);
  const Var pe = edge_pe(b, g);
  std::vector<Var> ys{gather_rows(s.vertices, g.src), s.edges};
  const Var prod = r.rescale_fw(b, ys);  // scales like the target

  auto inputs = [&](const IndexList& edges) {
    const IndexList dst = pick(g.dst, edges);
    const Var x = gather_rows(s.vertices, dst);
    const Var slot = cat({x, gather_rows(prod, edges)});
    std::optional<Var> p;
    if (config_.pe_in_messages) {
      p = cat({gather_rows(pv, dst), gather_rows(pv, pick(g.src, edges)), gather_rows(pe, edges)});
    }
    return std::make_tuple(dst, slot, p);
  };

  Scatter m(tape, g.num_vertices(), config_.vertex_width);
  if (!g.fw_to_hidden.empty()) {
    auto [dst, slot, p] = inputs(g.fw_to_hidden);
    m.add(r.msg_fw(b, slot, p), dst);
  }
  if (!g.fw_to_output.empty()) {
    auto [dst, slot, p] = inputs(g.fw_to_output);
    m.add(r.msg_fw_out(b, p ? cat({slot, *p}) : slot), dst);
  }
  return m.result();
}

Var ScaleGMNModel::message_backward(Binding& b, int t, const GraphBatch& g, const GraphState& s) const {
  if (!s.backward) throw ShapeError("backward messages need backward edge representations");
  const Round& r = rounds_.at(t);
  Tape& tape = b.tape();
  const Var pv = vertex_pe(b, g);
  const Var pe = edge_pe(b, g);
  std::vector<Var> ys{gather_rows(s.vertices, g.dst), *s.backward};
  const Var prod = r.rescale_bw(b, ys);

  auto inputs = [&](const IndexList& edges) {
    const IndexList tgt = pick(g.src, edges);
    const Var x = gather_rows(s.vertices, tgt);
    const Var slot = cat({x, gather_rows(prod, edges)});
    std::optional<Var> p;
    if (config_.pe_in_messages) {
      p = cat({gather_rows(pv, tgt), gather_rows(pv, pick(g.dst, edges)), gather_rows(pe, edges)});
    }
    return std::make_tuple(tgt, slot, p);
  };

  Scatter m(tape, g.num_vertices(), config_.vertex_width);
  if (!g.bw_to_hidden.empty()) {
    auto [tgt, slot, p] = inputs(g.bw_to_hidden);
    m.add(r.msg_bw(b, slot, p), tgt);
  }
  if (!g.bw_to_input.empty()) {
    auto [tgt, slot, p] = inputs(g.bw_to_input);
    m.add(r.msg_bw_in(b, p ? cat({slot, *p}) : slot), tgt);
  }
  return m.result();
}

Var ScaleGMNModel::update_vertices(Binding& b, int t, const GraphBatch& g, const GraphState& s,
                                   Var m_fw, std::optional<Var> m_bw) const {
  const Round& r = rounds_.at(t);
  const Var pv = vertex_pe(b, g);
  const Var h = s.vertices;
  Scatter out(b.tape(), g.num_vertices(), config_.vertex_width);
  auto rows = [](Var v, const IndexList& idx) { return gather_rows(v, idx); };

  if (!g.hidden_vertices.empty()) {
    const IndexList& idx = g.hidden_vertices;
    std::vector<Var> parts{rows(h, idx), rows(m_fw, idx)};
    if (m_bw) parts.push_back(rows(*m_bw, idx));
    std::optional<Var> p;
    if (config_.pe_in_messages) p = rows(pv, idx);
    out.add(r.upd_v(b, concat_cols(parts), p), idx);
  }
  {
    const IndexList& idx = g.input_vertices;
    std::vector<Var> parts{rows(h, idx)};
    if (m_bw) parts.push_back(rows(*m_bw, idx));
    if (config_.pe_in_messages) parts.push_back(rows(pv, idx));
    out.add(r.upd_in(b, concat_cols(parts)), idx);
  }
  {
    const IndexList& idx = g.output_vertices;
    std::vector<Var> parts{rows(h, idx), rows(m_fw, idx)};
    if (config_.pe_in_messages) parts.push_back(rows(pv, idx));
    out.add(r.upd_out(b, concat_cols(parts)), idx);
  }
  const Var next = out.result();
  return config_.skip ? h + next : next;
}

Var ScaleGMNModel::vertex_invariants(Binding& b, const Canonicalizer& c, const GraphBatch& g,
                                     Var h) const {
  Scatter out(b.tape(), g.num_vertices(), c.out_dim());
  if (!g.hidden_vertices.empty()) out.add(c(b, gather_rows(h, g.hidden_vertices)), g.hidden_vertices);
  out.add(gather_rows(h, g.input_vertices), g.input_vertices);
  out.add(gather_rows(h, g.output_vertices), g.output_vertices);
  return out.result();
}

Var ScaleGMNModel::update_edges(Binding& b, int t, const GraphBatch& g, Var vertices,
                                Var edges) const {
  if (!config_.edge_updates) return edges;
  const Round& r = rounds_.at(t);
  const Var inv = vertex_invariants(b, r.edge_canon, g, vertices);
  std::vector<Var> p{gather_rows(inv, g.src), gather_rows(inv, g.dst)};
  if (config_.pe_in_messages) p.push_back(edge_pe(b, g));
  const Var next = r.upd_e(b, edges, concat_cols(p));
  return config_.skip ? edges + next : next;
}

GraphState ScaleGMNModel::propagate(Binding& b, const GraphBatch& g) const {
  GraphState s = init_representations(b, g);
  for (int t = 0; t < config_.layers; ++t) {
    const Var m_fw = message_forward(b, t, g, s);
    std::optional<Var> m_bw;
    if (config_.direction == Direction::Bidirectional) m_bw = message_backward(b, t, g, s);
    const Var h = update_vertices(b, t, g, s, m_fw, m_bw);
    s.edges = update_edges(b, t, g, h, s.edges);
    s.vertices = h;
  }
  return s;
}

Var ScaleGMNModel::readout(Binding& b, const GraphBatch& g, Var vertices) const {
  if (config_.head != HeadKind::Invariant) throw Error("readout needs the invariant head");
  const Index dv = config_.vertex_width;
  if (config_.readout == ReadoutKind::OutputConcat) {
    const Index n_out = g.widths.back();
    return read_mlp_(b, reshape(gather_rows(vertices, g.output_vertices), g.graphs, n_out * dv));
  }
  Var pooled = b.tape().constant(Tensor::Zero(g.graphs, dv));
  if (!g.hidden_vertices.empty()) {
    const Var phi = read_phi_(b, read_canon_(b, gather_rows(vertices, g.hidden_vertices)));
    pooled = scatter_add_rows(phi, pick(g.vertex_graph, g.hidden_vertices), g.graphs);
  }
  IndexList io;
  std::merge(g.input_vertices.begin(), g.input_vertices.end(), g.output_vertices.begin(),
             g.output_vertices.end(), std::back_inserter(io));
  const Index n_io = static_cast<Index>(io.size()) / g.graphs;
  const Var io_rows = reshape(gather_rows(vertices, io), g.graphs, n_io * dv);
  return read_mlp_(b, cat({pooled, io_rows}));
}

ModelOutput ScaleGMNModel::edit(Binding& b, const GraphBatch& g, const GraphState& s) const {
  if (config_.head != HeadKind::EquivariantEdit) throw Error("edit needs the equivariant-edit head");
  Tape& t = b.tape();
  const Var pv = vertex_pe(b, g);
  Scatter dv(t, g.num_vertices(), 1);
  if (!g.hidden_vertices.empty()) {
    dv.add(edit_v_(b, gather_rows(s.vertices, g.hidden_vertices), gather_rows(pv, g.hidden_vertices)),
           g.hidden_vertices);
  }
  dv.add(edit_out_(b, cat({gather_rows(s.vertices, g.output_vertices), gather_rows(pv, g.output_vertices)})),
         g.output_vertices);
  const Var dw = edit_e_(b, s.edges, edge_pe(b, g));
  const Var gamma = b(*gamma_);
  auto scaled = [&](Var d) {
    const Var col = matmul(t.constant(Tensor::Ones(d.rows(), 1)), gamma);
    return mul_colwise(d, col);
  };
  ModelOutput out;
  out.vertex_bias = t.constant(g.vertex_features) + scaled(dv.result());
  out.edge_weight = t.constant(g.edge_features) + scaled(dw);
  return out;
}

ModelOutput ScaleGMNModel::forward(Binding& b, const GraphBatch& g) const {
  const GraphState s = propagate(b, g);
  if (config_.head == HeadKind::EquivariantEdit) return edit(b, g, s);
  ModelOutput out;
  out.embedding = readout(b, g, s.vertices);
  return out;
}

namespace {

struct LayerSpan {
  Index vertex_start, edge_start, rows, cols;
};

std::vector<LayerSpan> layer_spans(const GraphBatch& g, Index index) {
  if (g.edge_features.cols() != 1) throw ShapeError("edited nets need scalar edge features");
  std::vector<LayerSpan> out;
  Index v = index * g.vertices_per_graph + g.widths[0];
  Index e = index * g.edges_per_graph;
  for (std::size_t l = 1; l < g.widths.size(); ++l) {
    out.push_back({v, e, g.widths[l], g.widths[l - 1]});
    v += g.widths[l];
    e += g.widths[l] * g.widths[l - 1];
  }
  return out;
}

}  // namespace

std::vector<FfnnParams> edited_nets(const GraphBatch& g, const Tensor& vertex_bias,
                                    const Tensor& edge_weight) {
  std::vector<FfnnParams> nets;
  for (Index k = 0; k < g.graphs; ++k) {
    FfnnParams net;
    const auto spans = layer_spans(g, k);
    for (std::size_t l = 0; l < spans.size(); ++l) {
      const LayerSpan& s = spans[l];
      FfnnLayer layer;
      layer.bias = vertex_bias.block(s.vertex_start, 0, s.rows, 1).transpose();
      layer.weight = Eigen::Map<const Tensor>(edge_weight.data() + s.edge_start, s.rows, s.cols);
      layer.activation = g.activations[l];
      net.layers.push_back(std::move(layer));
    }
    nets.push_back(std::move(net));
  }
  return nets;
}

NetVars edited_net_vars(const GraphBatch& g, Var vertex_bias, Var edge_weight, Index index) {
  NetVars out;
  for (const LayerSpan& s : layer_spans(g, index)) {
    out.biases.push_back(transpose(slice_rows(vertex_bias, s.vertex_start, s.rows)));
    out.weights.push_back(reshape(slice_rows(edge_weight, s.edge_start, s.rows * s.cols), s.rows, s.cols));
  }
  return out;
}

void save_checkpoint(const ScaleGMNModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const ParameterStore& store = model.store();
  json tensors = json::array();
  std::vector<double> flat;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor& v = store.values()[i];
    tensors.push_back({{"name", store.name(ParamId{i})},
                       {"rows", v.rows()},
                       {"cols", v.cols()},
                       {"offset", flat.size()}});
    flat.insert(flat.end(), v.data(), v.data() + v.size());
  }
  const json manifest{{"config", to_json(model.config())},
                      {"arch", to_json(model.arch())},
                      {"params_path", "params.f32"},
                      {"scalars", flat.size()},
                      {"tensors", tensors}};
  std::ofstream(dir / "checkpoint.json") << manifest.dump(2) << '\n';
  write_f32(dir / "params.f32", flat);
}

ScaleGMNModel load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw Error("cannot open " + (dir / "checkpoint.json").string());
  const json manifest = json::parse(in);
  ScaleGMNModel model(config_from_json(manifest.at("config")), arch_from_json(manifest.at("arch")), 0);
  const std::vector<double> flat = read_f32(dir / manifest.value("params_path", "params.f32"));
  ParameterStore& store = model.store();
  const json& tensors = manifest.at("tensors");
  if (tensors.size() != store.size()) throw Error("checkpoint tensor count does not match the config");
  for (std::size_t i = 0; i < store.size(); ++i) {
    const json& t = tensors[i];
    Tensor& v = store.values()[i];
    if (t.at("name").get<std::string>() != store.name(ParamId{i}) || t.at("rows").get<Index>() != v.rows() ||
        t.at("cols").get<Index>() != v.cols()) {
      throw Error("checkpoint tensor " + t.at("name").get<std::string>() + " does not match the model");
    }
    const auto offset = t.at("offset").get<std::size_t>();
    if (offset + v.size() > flat.size()) throw Error("checkpoint parameter file is truncated");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.data());
  }
  return model;
}

}  // namespace scalegmn
