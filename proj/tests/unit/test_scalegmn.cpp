#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "scalegmn/inr.hpp"
#include "scalegmn/scalegmn.hpp"

using namespace scalegmn;

namespace {

FfnnParams random_net(const std::vector<Index>& widths, ActivationDescriptor act, Rng& rng) {
  if (act.kind() == ActivationKind::Sine) {
    FfnnParams net = siren_init({widths, act.omega0()}, rng);
    for (auto& l : net.layers) l.bias = uniform_tensor(1, l.bias.cols(), -4, 4, rng);
    return net;
  }
  FfnnParams net;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const bool last = l + 2 == widths.size();
    net.layers.push_back({uniform_tensor(widths[l + 1], widths[l], -1, 1, rng),
                          uniform_tensor(1, widths[l + 1], -1, 1, rng),
                          last ? ActivationDescriptor::identity() : act});
  }
  return net;
}

struct Setting {
  GroupKind group;
  ActivationDescriptor act;
  Direction direction;
};

std::vector<Setting> settings() {
  std::vector<Setting> out;
  for (Direction d : {Direction::Forward, Direction::Bidirectional}) {
    out.push_back({GroupKind::Sign, ActivationDescriptor::tanh(), d});
    out.push_back({GroupKind::Sign, ActivationDescriptor::sine(30.0), d});
    out.push_back({GroupKind::Positive, ActivationDescriptor::relu(), d});
  }
  return out;
}

ScaleGMNConfig small_config(const Setting& s) {
  ScaleGMNConfig c;
  c.vertex_width = 6;
  c.edge_width = 5;
  c.pe_width = 3;
  c.layers = 2;
  c.mlp.hidden = {8};
  c.readout_hidden = 8;
  c.group = s.group;
  c.direction = s.direction;
  return c;
}

GraphOptions graph_opts(Direction d) { return {d, true}; }

struct Run {
  Tape tape;
  Binding binding;
  explicit Run(const ScaleGMNModel& m) : binding(tape, m.store()) {}
};

Tensor embed(const ScaleGMNModel& m, const GraphBatch& b) {
  Run r(m);
  return m.forward(r.binding, b).embedding->value();
}

double rel_dev(const Tensor& got, const Tensor& want) {
  return (got - want).cwiseAbs().maxCoeff() / (want.cwiseAbs().maxCoeff() + 1e-9);
}

/// Multiplier of every vertex under a permutation-free orbit.
Eigen::VectorXd vertex_q(const ParamGraph& g, const OrbitElement& o) {
  Eigen::VectorXd q = Eigen::VectorXd::Ones(g.num_vertices());
  for (Index v = 0; v < g.num_vertices(); ++v) {
    const Index l = g.vertex_layer[v];
    if (l > 0 && l < g.num_layers()) q[v] = o.scale[l - 1][g.vertex_index[v]];
  }
  return q;
}

Eigen::VectorXd edge_q(const ParamGraph& g, const Eigen::VectorXd& qv) {
  Eigen::VectorXd q(g.num_edges());
  for (Index e = 0; e < g.num_edges(); ++e) q[e] = qv[g.edge_dst[e]] / qv[g.edge_src[e]];
  return q;
}

Tensor rows_scaled(const Tensor& x, const Eigen::VectorXd& q) { return q.asDiagonal() * x; }

}  // namespace

TEST_SUITE("scalegmn") {

TEST_CASE("hidden init with identity gamma and unit invariant block broadcasts the bias") {
  Rng rng(1);
  FfnnParams net = random_net({2, 3, 1}, ActivationDescriptor::tanh(), rng);
  ParamGraph g = build_graph(net);
  ScaleGMNConfig c = small_config({GroupKind::Sign, ActivationDescriptor::tanh(), Direction::Forward});
  c.pe_width = 0;
  ScaleGMNModel m(c, ModelArch::of(g), 3);
  ParameterStore& s = m.store();
  s.value(*s.find("init.v.layer0.gamma0.weight")).setOnes();
  const std::string last = "init.v.layer0.inv.rho." + std::to_string(c.mlp.hidden.size());
  s.value(*s.find(last + ".weight")).setZero();
  s.value(*s.find(last + ".bias")).setOnes();
  GraphBatch b = make_batch(std::vector<ParamGraph>{g});
  Run r(m);
  const Tensor h = m.init_representations(r.binding, b).vertices.value();
  for (Index i = 0; i < 3; ++i) {
    for (Index k = 0; k < c.vertex_width; ++k) CHECK(h(2 + i, k) == net.layers[0].bias(0, i));
  }
}

TEST_CASE("layerwise equivariance under permutation-free orbits") {
  Rng rng(2);
  for (const Setting& st : settings()) {
    CAPTURE(to_string(st.group));
    CAPTURE(st.act.name());
    CAPTURE(static_cast<int>(st.direction));
    ScaleGMNConfig c = small_config(st);
    FfnnParams net = random_net({2, 4, 3, 2}, st.act, rng);
    ParamGraph g = build_graph(net, graph_opts(st.direction));
    ScaleGMNModel m(c, ModelArch::of(g), 5);
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
      OrbitElement o = sample_orbit(net, 1.0, false, rng);
      ParamGraph h = build_graph(apply_orbit(net, o), graph_opts(st.direction));
      const Eigen::VectorXd qv = vertex_q(g, o);
      const Eigen::VectorXd qe = edge_q(g, qv);
      GraphBatch b0 = make_batch(std::vector<ParamGraph>{g});
      GraphBatch b1 = make_batch(std::vector<ParamGraph>{h});
      Run r0(m), r1(m);
      GraphState s0 = m.init_representations(r0.binding, b0);
      GraphState s1 = m.init_representations(r1.binding, b1);
      worst = std::max(worst, rel_dev(s1.vertices.value(), rows_scaled(s0.vertices.value(), qv)));
      worst = std::max(worst, rel_dev(s1.edges.value(), rows_scaled(s0.edges.value(), qe)));
      if (s0.backward) {
        const Eigen::VectorXd qb = qe.cwiseInverse();
        worst = std::max(worst, rel_dev(s1.backward->value(), rows_scaled(s0.backward->value(), qb)));
      }
      for (int layer = 0; layer < c.layers; ++layer) {
        const Var f0 = m.message_forward(r0.binding, layer, b0, s0);
        const Var f1 = m.message_forward(r1.binding, layer, b1, s1);
        worst = std::max(worst, rel_dev(f1.value(), rows_scaled(f0.value(), qv)));
        std::optional<Var> w0, w1;
        if (st.direction == Direction::Bidirectional) {
          w0 = m.message_backward(r0.binding, layer, b0, s0);
          w1 = m.message_backward(r1.binding, layer, b1, s1);
          worst = std::max(worst, rel_dev(w1->value(), rows_scaled(w0->value(), qv)));
        }
        const Var v0 = m.update_vertices(r0.binding, layer, b0, s0, f0, w0);
        const Var v1 = m.update_vertices(r1.binding, layer, b1, s1, f1, w1);
        worst = std::max(worst, rel_dev(v1.value(), rows_scaled(v0.value(), qv)));
        const Var e0 = m.update_edges(r0.binding, layer, b0, v0, s0.edges);
        const Var e1 = m.update_edges(r1.binding, layer, b1, v1, s1.edges);
        worst = std::max(worst, rel_dev(e1.value(), rows_scaled(e0.value(), qe)));
        s0.vertices = v0;
        s1.vertices = v1;
        s0.edges = e0;
        s1.edges = e1;
      }
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("zero edge feature with identity hadamard gives no message") {
  Rng rng(3);
  FfnnParams net = random_net({1, 2, 1}, ActivationDescriptor::tanh(), rng);
  ParamGraph g = build_graph(net);
  ScaleGMNConfig c = small_config({GroupKind::Sign, ActivationDescriptor::tanh(), Direction::Forward});
  c.vertex_width = 3;
  c.edge_width = 3;
  ScaleGMNModel m(c, ModelArch::of(g), 1);
  ParameterStore& s = m.store();
  s.value(*s.find("layer0.rescale_fw.gamma0.weight")) = Tensor::Identity(3, 3);
  s.value(*s.find("layer0.rescale_fw.gamma1.weight")) = Tensor::Identity(3, 3);
  GraphBatch b = make_batch(std::vector<ParamGraph>{g});
  Run r(m);
  GraphState st = m.init_representations(r.binding, b);
  // zero edge state and zero central vertex: the hidden slot is all zeros
  st.edges = r.tape.constant(Tensor::Zero(b.num_edges(), 3));
  st.vertices = r.tape.constant(Tensor::Zero(b.num_vertices(), 3));
  const Tensor msg = m.message_forward(r.binding, 0, b, st).value();
  for (Index v : b.hidden_vertices) CHECK(msg.row(v).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward-only models have no backward slot") {
  Rng rng(4);
  ParamGraph g = build_graph(random_net({2, 3, 1}, ActivationDescriptor::tanh(), rng));
  ScaleGMNModel m(small_config({GroupKind::Sign, ActivationDescriptor::tanh(), Direction::Forward}),
                  ModelArch::of(g), 1);
  GraphBatch b = make_batch(std::vector<ParamGraph>{g});
  Run r(m);
  GraphState s = m.init_representations(r.binding, b);
  CHECK_FALSE(s.backward.has_value());
  CHECK_THROWS_AS(m.message_backward(r.binding, 0, b, s), ShapeError);

  ScaleGMNModel bidir(small_config({GroupKind::Sign, ActivationDescriptor::tanh(), Direction::Bidirectional}),
                      ModelArch::of(g), 1);
  Run r2(bidir);
  CHECK_THROWS_AS(bidir.forward(r2.binding, b), ShapeError);
}

TEST_CASE("sign group keeps uninverted backward weights") {
  Rng rng(5);
  FfnnParams net = random_net({2, 3, 1}, ActivationDescriptor::tanh(), rng);
  ParamGraph g = build_graph(net, graph_opts(Direction::Bidirectional));
  CHECK((g.backward_features.array() == g.edge_features.array()).all());
}

TEST_CASE("disabled edge updates keep edge state") {
  Rng rng(6);
  ParamGraph g = build_graph(random_net({2, 3, 1}, ActivationDescriptor::tanh(), rng));
  ScaleGMNConfig c = small_config({GroupKind::Sign, ActivationDescriptor::tanh(), Direction::Forward});
  c.edge_updates = false;
  ScaleGMNModel m(c, ModelArch::of(g), 1);
  GraphBatch b = make_batch(std::vector<ParamGraph>{g});
  Run r(m);
  GraphState s = m.init_representations(r.binding, b);
  const Var e = m.update_edges(r.binding, 0, b, s.vertices, s.edges);
  CHECK(e.id() == s.edges.id());
}

TEST_CASE("invariant readout under full orbits") {
  Rng rng(7);
  for (const Setting& st : settings()) {
    CAPTURE(st.act.name());
    CAPTURE(static_cast<int>(st.direction));
    ScaleGMNConfig c = small_config(st);
    double worst = 0.0;
    for (int n = 0; n < 2; ++n) {
      FfnnParams net = random_net({2, 4, 4, 1}, st.act, rng);
      ParamGraph g = build_graph(net, graph_opts(st.direction));
      ScaleGMNModel m(c, ModelArch::of(g), 10 + n);
      const Tensor base = embed(m, make_batch(std::vector<ParamGraph>{g}));
      for (int t = 0; t < 10; ++t) {
        OrbitElement o = sample_orbit(net, 1.0, true, rng);
        ParamGraph h = build_graph(apply_orbit(net, o), graph_opts(st.direction));
        worst = std::max(worst, rel_dev(embed(m, make_batch(std::vector<ParamGraph>{h})), base));
      }
    }
    CHECK(worst < 1e-8);
  }
}

TEST_CASE("output-concat readout and T=0 are invariant too") {
  Rng rng(8);
  Setting st{GroupKind::Positive, ActivationDescriptor::relu(), Direction::Forward};
  FfnnParams net = random_net({3, 5, 2}, st.act, rng);
  ParamGraph g = build_graph(net);
  for (int variant = 0; variant < 2; ++variant) {
    ScaleGMNConfig c = small_config(st);
    if (variant == 0) c.readout = ReadoutKind::OutputConcat;
    else c.layers = 0;
    ScaleGMNModel m(c, ModelArch::of(g), 2);
    const Tensor base = embed(m, make_batch(std::vector<ParamGraph>{g}));
    for (int t = 0; t < 10; ++t) {
      OrbitElement o = sample_orbit(net, 1.0, true, rng);
      CHECK(rel_dev(embed(m, make_batch(std::vector<ParamGraph>{build_graph(apply_orbit(net, o))})), base) < 1e-8);
    }
  }
}

TEST_CASE("permuting output neurons changes the readout") {
  Rng rng(9);
  ScaleGMNConfig c = small_config({GroupKind::Sign, ActivationDescriptor::tanh(), Direction::Forward});
  int changed = 0;
  for (int t = 0; t < 5; ++t) {
    FfnnParams net = random_net({2, 3, 2}, ActivationDescriptor::tanh(), rng);
    ParamGraph g = build_graph(net);
    ScaleGMNModel m(c, ModelArch::of(g), 20 + t);
    FfnnParams swapped = net;
    swapped.layers[1].weight.row(0).swap(swapped.layers[1].weight.row(1));
    std::swap(swapped.layers[1].bias(0, 0), swapped.layers[1].bias(0, 1));
    const Tensor a = embed(m, make_batch(std::vector<ParamGraph>{g}));
    const Tensor b = embed(m, make_batch(std::vector<ParamGraph>{build_graph(swapped)}));
    if ((a - b).cwiseAbs().maxCoeff() > 1e-6) ++changed;
  }
  CHECK(changed > 0);
}

TEST_CASE("edit head: gamma zero, shapes, equivariance") {
  Rng rng(10);
  for (const Setting& st : settings()) {
    CAPTURE(st.act.name());
    ScaleGMNConfig c = small_config(st);
    c.head = HeadKind::EquivariantEdit;
    c.gamma_init = 0.5;  // large enough that the edit is visible
    FfnnParams net = random_net({2, 4, 3, 1}, st.act, rng);
    const GraphOptions opts = graph_opts(st.direction);
    ParamGraph g = build_graph(net, opts);
    ScaleGMNModel m(c, ModelArch::of(g), 4);
    auto edit = [&](const ParamGraph& graph) {
      GraphBatch b = make_batch(std::vector<ParamGraph>{graph});
      Run r(m);
      ModelOutput out = m.forward(r.binding, b);
      return edited_nets(b, out.vertex_bias->value(), out.edge_weight->value()).front();
    };
    const FfnnParams e = edit(g);
    REQUIRE(e.num_layers() == net.num_layers());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      CHECK(e.layers[l].weight.rows() == net.layers[l].weight.rows());
      CHECK(e.layers[l].weight.cols() == net.layers[l].weight.cols());
      CHECK(e.layers[l].bias.cols() == net.layers[l].bias.cols());
    }
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
      OrbitElement o = sample_orbit(net, 1.0, true, rng);
      const FfnnParams lhs = edit(build_graph(apply_orbit(net, o), opts));
      const FfnnParams rhs = apply_orbit(e, o);
      worst = std::max(worst, (flatten(lhs) - flatten(rhs)).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-8);

    m.store().value(*m.gamma()).setZero();
    const FfnnParams same = edit(g);
    const FfnnParams shifted = bias_shift_net(net);
    CHECK((flatten(same) - flatten(shifted)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("forward is deterministic") {
  Rng rng(11);
  ParamGraph g = build_graph(random_net({2, 3, 1}, ActivationDescriptor::tanh(), rng));
  ScaleGMNConfig c = small_config({GroupKind::Sign, ActivationDescriptor::tanh(), Direction::Forward});
  ScaleGMNModel a(c, ModelArch::of(g), 42), b(c, ModelArch::of(g), 42);
  GraphBatch batch = make_batch(std::vector<ParamGraph>{g});
  CHECK((embed(a, batch).array() == embed(b, batch).array()).all());
}

TEST_CASE("end-to-end finite differences") {
  Rng rng(12);
  for (const Setting& st : settings()) {
    CAPTURE(st.act.name());
    CAPTURE(static_cast<int>(st.direction));
    std::vector<ParamGraph> graphs;
    graphs.push_back(build_graph(random_net({3, 3, 3}, st.act, rng), graph_opts(st.direction)));
    graphs.push_back(build_graph(random_net({3, 3, 3}, st.act, rng), graph_opts(st.direction)));
    GraphBatch b = make_batch(graphs);
    ScaleGMNConfig c = small_config(st);
    ScaleGMNModel m(c, ModelArch::of(b), 13);
    const std::vector<int> labels{0, 1};
    LossFn loss = [&](Binding& bind) { return cross_entropy(*m.forward(bind, b).embedding, labels); };
    FiniteDiffReport rep = finite_diff_check(loss, m.store(), 1e-5, 1e-4, 3);
    CAPTURE(m.store().name(ParamId{rep.worst_param}));
    CAPTURE(rep.analytic);
    CAPTURE(rep.numeric);
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("finite differences on a three-vertex graph") {
  Rng rng(14);
  Setting st{GroupKind::Sign, ActivationDescriptor::tanh(), Direction::Bidirectional};
  GraphBatch b = make_batch(std::vector<ParamGraph>{build_graph(random_net({1, 1, 1}, st.act, rng), graph_opts(st.direction))});
  ScaleGMNModel m(small_config(st), ModelArch::of(b), 15);
  LossFn loss = [&](Binding& bind) { return cross_entropy(*m.forward(bind, b).embedding, {1}); };
  CHECK(finite_diff_check(loss, m.store(), 1e-5, 1e-4).max_rel_error < 1e-4);
}

TEST_CASE("checkpoint round trip is bit-exact at f32") {
  Rng rng(13);
  ParamGraph g = build_graph(random_net({2, 3, 1}, ActivationDescriptor::tanh(), rng));
  ScaleGMNConfig c = small_config({GroupKind::Sign, ActivationDescriptor::tanh(), Direction::Forward});
  c.head = HeadKind::EquivariantEdit;
  ScaleGMNModel m(c, ModelArch::of(g), 7);
  const auto dir = std::filesystem::temp_directory_path() / "scalegmn_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(m, dir);
  ScaleGMNModel loaded = load_checkpoint(dir);
  CHECK(to_json(loaded.config()) == to_json(m.config()));
  CHECK(loaded.arch() == m.arch());
  for (std::size_t i = 0; i < m.store().size(); ++i) {
    const Tensor want = m.store().values()[i].cast<float>().cast<double>();
    CHECK((loaded.store().values()[i].array() == want.array()).all());
  }
  const auto dir2 = dir / "again";
  save_checkpoint(loaded, dir2);
  auto bytes = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(bytes(dir / "params.f32") == bytes(dir2 / "params.f32"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("config json round trip and validation") {
  ScaleGMNConfig c;
  c.direction = Direction::Bidirectional;
  c.group = GroupKind::Positive;
  c.readout = ReadoutKind::OutputConcat;
  c.rescale = RescaleVariant::Outer;
  c.gamma_init = 0.001;
  CHECK(to_json(config_from_json(to_json(c))) == to_json(c));
  nlohmann::json bad = to_json(c);
  bad["layers"] = -1;
  CHECK_THROWS_AS(config_from_json(bad), Error);
  bad = to_json(c);
  bad["readout"] = "attention";
  CHECK_THROWS_AS(config_from_json(bad), Error);
}

}  // TEST_SUITE
