#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "scalegmn/experiment.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace scalegmn;

namespace {

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  return json::parse(in);
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream(p) << j.dump(2) << '\n';
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_gen_zoo(const Common& c, const std::string& kind, int count) {
  ZooGenOptions opts;
  if (!c.config.empty()) {
    const json j = read_json(c.config);
    opts.image_size = j.value("image_size", opts.image_size);
    opts.inr_fit.steps = j.value("inr_steps", opts.inr_fit.steps);
    opts.inr_fit.lr = j.value("inr_lr", opts.inr_fit.lr);
    opts.inr_fit.mse_threshold = j.value("inr_mse_threshold", opts.inr_fit.mse_threshold);
    if (j.contains("inr_widths")) opts.inr_arch.widths = j.at("inr_widths").get<std::vector<Index>>();
    opts.inr_arch.omega0 = j.value("omega0", opts.inr_arch.omega0);
    opts.shared_inr_init = j.value("shared_inr_init", opts.shared_inr_init);
    opts.cnn.steps = j.value("cnn_max_steps", opts.cnn.steps);
    opts.cnn.lr = j.value("cnn_lr", opts.cnn.lr);
  }
  if (c.out.empty()) throw Error("gen-zoo needs --out");
  const GenReport rep = generate_zoo(kind, count, c.seed.value_or(0), opts);
  save_zoo(rep.zoo, c.out);
  write_json(fs::path(c.out) / "gen_report.json",
             {{"kind", kind}, {"requested", count}, {"items", rep.zoo.items.size()},
              {"retried", rep.retried}, {"skipped", rep.skipped}});
  std::cout << "wrote " << rep.zoo.items.size() << " items to " << c.out;
  if (!rep.skipped.empty()) std::cout << " (" << rep.skipped.size() << " skipped)";
  std::cout << '\n';
  return 0;
}

int cmd_train(const Common& c, const std::string& zoo_override) {
  if (c.config.empty()) throw Error("train needs --config");
  ExperimentConfig cfg = experiment_from_json(read_json(c.config));
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  if (!zoo_override.empty()) cfg.zoo = zoo_override;
  if (cfg.out.empty()) throw Error("train needs an output directory");
  const Zoo zoo = load_zoo(cfg.zoo);
  const TrainResult r = train_experiment(cfg, zoo, nullptr, &std::cout);
  std::cout << "best val " << r.metric << ' ' << r.best_val << " at epoch " << r.best_epoch
            << (r.diverged ? " (diverged)" : "") << '\n';
  return r.diverged ? 2 : 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& zoo_dir,
             const std::string& split_name, bool orbit, double lambda) {
  if (checkpoint.empty() || zoo_dir.empty()) throw Error("eval needs --checkpoint and --zoo");
  const MetaNet net = MetaNet::load(checkpoint);
  const Zoo zoo = load_zoo(zoo_dir);
  const std::uint64_t seed = c.seed.value_or(0);
  std::vector<std::size_t> idx;
  if (split_name == "all") {
    for (std::size_t i = 0; i < zoo.items.size(); ++i) idx.push_back(i);
  } else {
    idx = split_part(split_indices(zoo.items.size(), seed), split_name);
  }
  EvalReport r = evaluate(net, zoo, idx, orbit, seed, lambda);
  r.split = split_name;
  const json j = to_json(r);
  std::cout << j.dump(2) << '\n';
  if (!c.out.empty()) write_json(c.out, j);
  return 0;
}

int cmd_certify(const Common& c) {
  if (c.config.empty()) throw Error("certify needs --config");
  CertifySuite suite = certify_suite_from_json(read_json(c.config));
  if (c.seed) suite.options.seed = *c.seed;
  const auto reports = run_certify_suite(suite);
  json all = json::array();
  bool ok = true;
  for (const auto& r : reports) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " max deviation " << r.max_deviation << " over "
              << r.trials << " trials (tolerance " << r.tolerance << ")\n";
    ok = ok && r.passed;
    all.push_back(to_json(r));
  }
  if (!c.out.empty()) write_json(c.out, all);
  return ok ? 0 : 1;
}

int cmd_canonicalize(const Common& c, const std::string& zoo_dir, const std::string& mode) {
  if (zoo_dir.empty() || c.out.empty()) throw Error("canonicalize needs --zoo and --out");
  const CanonKind kind = parse_canon_kind(mode);
  Zoo zoo = load_zoo(zoo_dir);
  double worst = 0.0;
  for (auto& item : zoo.items) {
    if (!item.ffnn) throw Error("canonicalize handles fully connected zoos only (" + item.id + ")");
    const FfnnParams out = canonicalize_net(*item.ffnn, kind);
    worst = std::max(worst, check_function_preservation(*item.ffnn, out, evaluation_grid(out.widths().front())));
    item.ffnn = out;
  }
  save_zoo(zoo, c.out);
  constexpr double tolerance = 1e-6;
  std::cout << "canonicalized " << zoo.items.size() << " nets; max function deviation " << worst << '\n';
  return worst < tolerance ? 0 : 1;
}

int cmd_simulate(const Common& c, int count, const std::vector<Index>& widths) {
  Rng rng(c.seed.value_or(0));
  double fw = 0.0, bw = 0.0;
  json rows = json::array();
  for (int i = 0; i < count; ++i) {
    const auto act = i % 2 ? ActivationDescriptor::tanh() : ActivationDescriptor::sine(30.0);
    const FfnnParams net = random_ffnn(widths, act, rng);
    const Tensor x = uniform_tensor(1, widths.front(), -1, 1, rng);
    const Tensor g = uniform_tensor(1, widths.back(), 0.5, 1.5, rng);
    const SimulationCheck s = check_simulation(net, x, g);
    fw = std::max(fw, s.forward);
    bw = std::max(bw, s.backward);
    rows.push_back({{"activation", act.name()}, {"forward", s.forward}, {"backward", s.backward}});
  }
  std::cout << "max forward deviation " << fw << "\nmax backward deviation " << bw << '\n';
  if (!c.out.empty()) write_json(c.out, {{"nets", rows}, {"max_forward", fw}, {"max_backward", bw}});
  return fw < 1e-6 && bw < 1e-6 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ScaleGMN metanetworks over scale-symmetric nets"};
  app.require_subcommand(1);
  Common c;
  auto common = [&c](CLI::App* sub) {
    sub->add_option("--config", c.config, "JSON config");
    sub->add_option("--seed", c.seed, "seed");
    sub->add_option("--out", c.out, "output path");
  };

  std::string kind = "inr-2class";
  int count = 0;
  auto* gen = app.add_subcommand("gen-zoo", "synthesize a zoo of trained nets");
  common(gen);
  gen->add_option("--kind", kind)->check(CLI::IsMember({"inr-2class", "cnn-accuracy"}));
  gen->add_option("--count", count)->check(CLI::NonNegativeNumber);

  std::string zoo_dir;
  auto* train = app.add_subcommand("train", "train a metanetwork");
  common(train);
  train->add_option("--zoo", zoo_dir, "override the config's zoo");

  std::string checkpoint, split = "test";
  bool orbit = false;
  double lambda = 1.0;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a zoo split");
  common(eval);
  eval->add_option("--checkpoint", checkpoint);
  eval->add_option("--zoo", zoo_dir);
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval->add_flag("--orbit", orbit, "also evaluate an orbit-transformed copy");
  eval->add_option("--lambda", lambda, "positive-group orbit rate");

  auto* certify = app.add_subcommand("certify", "certify invariance / equivariance");
  common(certify);

  std::string mode = "none";
  auto* canon = app.add_subcommand("canonicalize", "bias shift plus optional canonical scaling");
  common(canon);
  canon->add_option("--zoo", zoo_dir);
  canon->add_option("--mode", mode)->check(CLI::IsMember({"none", "norm", "sign"}));

  int nets = 10;
  std::vector<Index> widths{2, 5, 4, 2};
  auto* sim = app.add_subcommand("simulate", "check the forward/backward simulation");
  common(sim);
  sim->add_option("--count", nets)->check(CLI::PositiveNumber);
  sim->add_option("--widths", widths);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen_zoo(c, kind, count);
    if (*train) return cmd_train(c, zoo_dir);
    if (*eval) return cmd_eval(c, checkpoint, zoo_dir, split, orbit, lambda);
    if (*certify) return cmd_certify(c);
    if (*canon) return cmd_canonicalize(c, zoo_dir, mode);
    if (*sim) return cmd_simulate(c, nets, widths);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
