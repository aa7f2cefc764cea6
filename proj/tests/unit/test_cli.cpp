#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "scalegmn/experiment.hpp"

using namespace scalegmn;
namespace fs = std::filesystem;

namespace {

ZooGenOptions quick_gen() {
  ZooGenOptions o;
  o.image_size = 8;
  o.inr_arch.widths = {2, 6, 1};
  o.inr_fit = {40, 1e-3, 0.0};
  o.cnn.steps = 20;
  return o;
}

ExperimentConfig quick_cfg(TaskKind task, Method method) {
  ExperimentConfig c;
  c.task = task;
  c.method = method;
  c.model.vertex_width = 4;
  c.model.edge_width = 4;
  c.model.pe_width = 2;
  c.model.layers = 1;
  c.model.mlp.hidden = {8};
  c.model.readout_hidden = 8;
  c.model.out_dim = task == TaskKind::InrClassify ? 2 : 1;
  c.model.head = task == TaskKind::InrEdit ? HeadKind::EquivariantEdit : HeadKind::Invariant;
  c.baseline_hidden = {8};
  c.optim.epochs = 2;
  c.optim.batch_size = 4;
  c.seed = 3;
  return c;
}

const Zoo& small_inr_zoo() {
  static const Zoo zoo = generate_zoo("inr-2class", 12, 5, quick_gen()).zoo;
  return zoo;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("scalegmn_cli_" + name);
  fs::remove_all(p);
  return p;
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gen-zoo: empty zoo writes an empty manifest") {
  const GenReport r = generate_zoo("inr-2class", 0, 1, quick_gen());
  CHECK(r.zoo.items.empty());
  const fs::path dir = scratch("empty");
  save_zoo(r.zoo, dir);
  CHECK(load_zoo(dir).items.empty());
  fs::remove_all(dir);
  CHECK_THROWS_AS(generate_zoo("mnist", 1, 1), Error);
}

TEST_CASE("gen-zoo: same seed, same ids and labels; labels balanced") {
  const Zoo& a = small_inr_zoo();
  const Zoo b = generate_zoo("inr-2class", 12, 5, quick_gen()).zoo;
  REQUIRE(a.items.size() == 12);
  REQUIRE(b.items.size() == 12);
  int ones = 0;
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    CHECK(a.items[i].id == b.items[i].id);
    CHECK(a.items[i].label == b.items[i].label);
    CHECK((a.items[i].ffnn->layers[0].weight.array() == b.items[i].ffnn->layers[0].weight.array()).all());
    ones += a.items[i].label == 1.0;
  }
  CHECK(std::abs(2 * ones - 12) <= 2);

  const Zoo odd = generate_zoo("inr-2class", 7, 9, quick_gen()).zoo;
  int odd_ones = 0;
  for (const auto& it : odd.items) odd_ones += it.label == 1.0;
  CHECK(std::abs(2 * odd_ones - 7) <= 2);
}

TEST_CASE("gen-zoo: cnn labels are held-out accuracies") {
  const Zoo z = generate_zoo("cnn-accuracy", 3, 2, quick_gen()).zoo;
  REQUIRE(z.items.size() == 3);
  for (const auto& it : z.items) {
    CHECK(it.is_cnn());
    CHECK(it.label >= 0.0);
    CHECK(it.label <= 1.0);
  }
}

TEST_CASE("zoo item image regenerates the fitted signal") {
  const ZooItem& it = small_inr_zoo().items[3];
  const Tensor a = zoo_item_image(it, 8);
  const Tensor b = zoo_item_image(it, 8);
  CHECK((a.array() == b.array()).all());
  CHECK(a.maxCoeff() > 0.0);
}

TEST_CASE("splits are disjoint and cover the zoo") {
  for (std::size_t n : {0u, 1u, 7u, 20u, 201u}) {
    const Split s = split_indices(n, 11);
    std::set<std::size_t> all;
    for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
    CHECK(all.size() == n);
    CHECK(s.train.size() + s.val.size() + s.test.size() == n);
    if (n) CHECK(*all.rbegin() == n - 1);
  }
  const Split a = split_indices(20, 11), b = split_indices(20, 11);
  CHECK(a.train == b.train);
  CHECK(a.train.size() == 14);
  CHECK(a.val.size() == 3);
  CHECK_THROWS_AS(split_part(a, "holdout"), Error);
}

TEST_CASE("config: task/head compatibility and json round trip") {
  ExperimentConfig c = quick_cfg(TaskKind::InrClassify, Method::ScaleGMN);
  CHECK_NOTHROW(c.validate());
  c.model.head = HeadKind::EquivariantEdit;
  CHECK_THROWS_AS(c.validate(), Error);
  ExperimentConfig e = quick_cfg(TaskKind::InrEdit, Method::ScaleGMN);
  CHECK_NOTHROW(e.validate());
  e.model.head = HeadKind::Invariant;
  CHECK_THROWS_AS(e.validate(), Error);
  e = quick_cfg(TaskKind::InrEdit, Method::FlatMlp);
  CHECK_THROWS_AS(e.validate(), Error);

  ExperimentConfig r = quick_cfg(TaskKind::CnnGeneralization, Method::StatMlp);
  r.augment = parse_augmentation("positive(2.5)");
  const ExperimentConfig back = experiment_from_json(to_json(r));
  CHECK(to_json(back) == to_json(r));
  CHECK(back.augment.lambda == 2.5);
  CHECK_THROWS_AS(parse_augmentation("positive(-1)"), Error);
  CHECK_THROWS_AS(parse_augmentation("scale"), Error);
  nlohmann::json j{{"task", "inr-edit"}};
  CHECK(experiment_from_json(j).model.head == HeadKind::EquivariantEdit);
}

TEST_CASE("train: zero epochs keeps the initialization") {
  const Zoo& zoo = small_inr_zoo();
  for (Method m : {Method::ScaleGMN, Method::FlatMlp}) {
    ExperimentConfig c = quick_cfg(TaskKind::InrClassify, m);
    c.optim.epochs = 0;
    c.out = scratch("zero");
    const TrainResult r = train_experiment(c, zoo);
    CHECK(r.epochs.empty());
    CHECK(r.best_epoch == -1);
    std::vector<Prepared> train;
    for (std::size_t i : split_indices(zoo.items.size(), c.seed).train) {
      train.push_back(prepare(zoo.items[i], c.task, {c.model.direction, 3, 3, false}));
    }
    const MetaNet init(c, zoo.items.front(), train, derive_seed(c.seed, 1));
    const MetaNet loaded = MetaNet::load(c.out / "checkpoint");
    REQUIRE(loaded.store().size() == init.store().size());
    for (std::size_t i = 0; i < init.store().size(); ++i) {
      const Tensor want = init.store().values()[i].cast<float>().cast<double>();
      CHECK((loaded.store().values()[i].array() == want.array()).all());
    }
    CHECK(count_lines(c.out / "metrics.csv") == 1);
    fs::remove_all(c.out);
  }
}

TEST_CASE("train: initial loss, csv rows and checkpoint") {
  const Zoo& zoo = small_inr_zoo();
  ExperimentConfig c = quick_cfg(TaskKind::InrClassify, Method::ScaleGMN);
  c.out = scratch("train");
  const TrainResult r = train_experiment(c, zoo);
  CHECK(r.initial_loss == doctest::Approx(std::log(2.0)).epsilon(0.05));
  CHECK(r.epochs.size() == 2);
  CHECK(count_lines(c.out / "metrics.csv") == c.optim.epochs + 1);
  CHECK(count_lines(c.out / "train_loss.csv") == c.optim.epochs + 1);
  std::ifstream head(c.out / "metrics.csv");
  std::string line;
  std::getline(head, line);
  CHECK(line == "epoch,split,metric,value");
  CHECK(fs::exists(c.out / "summary.json"));

  const MetaNet net = MetaNet::load(c.out / "checkpoint");
  const Split s = split_indices(zoo.items.size(), c.seed);
  const EvalReport a = evaluate(net, zoo, s.test, true, 4);
  const EvalReport b = evaluate(net, zoo, s.test, true, 4);
  CHECK(a.value == b.value);
  REQUIRE(a.orbit_value);
  CHECK(*a.orbit_value == a.value);
  CHECK(a.max_output_deviation < 1e-8);
  fs::remove_all(c.out);
}

TEST_CASE("train: identical runs write identical files") {
  const Zoo& zoo = small_inr_zoo();
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  ExperimentConfig c = quick_cfg(TaskKind::InrClassify, Method::StatMlp);
  c.out = scratch("det_a");
  train_experiment(c, zoo);
  ExperimentConfig d = c;
  d.out = scratch("det_b");
  train_experiment(d, zoo);
  CHECK(bytes(c.out / "metrics.csv") == bytes(d.out / "metrics.csv"));
  CHECK(bytes(c.out / "checkpoint" / "params.f32") == bytes(d.out / "checkpoint" / "params.f32"));
  fs::remove_all(c.out);
  fs::remove_all(d.out);
}

TEST_CASE("train: edit and generalization tasks run") {
  ExperimentConfig e = quick_cfg(TaskKind::InrEdit, Method::ScaleGMN);
  e.optim.epochs = 1;
  const TrainResult r = train_experiment(e, small_inr_zoo());
  CHECK(std::isfinite(r.initial_loss));
  CHECK(r.metric == "functional_mse");

  const Zoo cnn = generate_zoo("cnn-accuracy", 8, 2, quick_gen()).zoo;
  ExperimentConfig g = quick_cfg(TaskKind::CnnGeneralization, Method::ScaleGMN);
  g.optim.epochs = 1;
  CHECK(train_experiment(g, cnn).metric == "kendall_tau_b");
}

TEST_CASE("canonicalize: idempotent and function preserving") {
  Rng rng(21);
  struct Case {
    ActivationDescriptor act;
    CanonKind kind;
  };
  for (const Case& k : {Case{ActivationDescriptor::sine(30.0), CanonKind::Sign},
                        Case{ActivationDescriptor::tanh(), CanonKind::Sign},
                        Case{ActivationDescriptor::relu(), CanonKind::Norm},
                        Case{ActivationDescriptor::sine(30.0), CanonKind::None}}) {
    const FfnnParams net = random_ffnn({2, 6, 5, 1}, k.act, rng);
    const FfnnParams once = canonicalize_net(net, k.kind);
    const FfnnParams twice = canonicalize_net(once, k.kind);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      CHECK((once.layers[l].weight - twice.layers[l].weight).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((once.layers[l].bias - twice.layers[l].bias).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK(check_function_preservation(net, once, evaluation_grid(2)) < 1e-6);
    if (k.kind == CanonKind::Sign) {
      for (std::size_t l = 0; l + 1 < once.layers.size(); ++l) CHECK(once.layers[l].bias.minCoeff() >= 0.0);
    }
    if (k.kind == CanonKind::Norm) {
      const auto& l0 = once.layers[0];
      for (Index i = 0; i < l0.weight.rows(); ++i) {
        CHECK(std::sqrt(l0.weight.row(i).squaredNorm() + l0.bias(0, i) * l0.bias(0, i)) ==
              doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
  // orbit copies share one canonical form
  const FfnnParams net = random_ffnn({2, 6, 5, 1}, ActivationDescriptor::relu(), rng);
  const FfnnParams moved = apply_orbit(net, sample_orbit(net, 1.0, false, rng));
  const FfnnParams a = canonicalize_net(net, CanonKind::Norm), b = canonicalize_net(moved, CanonKind::Norm);
  CHECK((a.layers[1].weight - b.layers[1].weight).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS_AS(canonicalize_net(net, CanonKind::Sign), Error);
}

TEST_CASE("certify suite and simulation check") {
  nlohmann::json j{{"widths", {2, 4, 3, 1}},
                   {"nets", 2},
                   {"orbits_per_net", 5},
                   {"model", {{"vertex_width", 4}, {"edge_width", 4}, {"pe_width", 2}, {"mlp_hidden", {8}}, {"readout_hidden", 8}}},
                   {"settings", {{{"activation", "tanh"}}, {{"activation", "relu"}, {"head", "equivariant-edit"}}}}};
  const auto reports = run_certify_suite(certify_suite_from_json(j));
  REQUIRE(reports.size() == 2);
  for (const auto& r : reports) CHECK(r.passed);
  j["settings"] = nlohmann::json::array();
  CHECK_THROWS_AS(certify_suite_from_json(j), Error);

  Rng rng(2);
  const FfnnParams net = random_ffnn({2, 5, 4, 2}, ActivationDescriptor::tanh(), rng);
  const SimulationCheck s = check_simulation(net, uniform_tensor(1, 2, -1, 1, rng), Tensor::Ones(1, 2));
  CHECK(s.forward < 1e-9);
  CHECK(s.backward < 1e-6);
}

}  // TEST_SUITE
