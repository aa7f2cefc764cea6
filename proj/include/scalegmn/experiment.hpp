#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scalegmn/harness.hpp"
#include "scalegmn/inr.hpp"
#include "scalegmn/scalegmn.hpp"
#include "scalegmn/zoo.hpp"

// Task plumbing shared by the command-line tool and the acceptance runner.
namespace scalegmn {

enum class TaskKind { InrClassify, CnnGeneralization, InrEdit };
enum class Method { ScaleGMN, FlatMlp, StatMlp };

std::string_view to_string(TaskKind t);
std::string_view to_string(Method m);
TaskKind parse_task(std::string_view s);
Method parse_method(std::string_view s);

/// Random orbit applied to every training net (group None disables).
struct Augmentation {
  GroupKind group = GroupKind::None;
  double lambda = 1.0;
};
/// "none", "sign" or "positive(<lambda>)".
Augmentation parse_augmentation(std::string_view s);
std::string to_string(const Augmentation& a);

struct OptimConfig {
  int epochs = 30;
  double lr = 1e-3;
  int batch_size = 16;
  double weight_decay = 0.0;
  double max_grad_norm = 1.0;
  bool cosine_decay = false;  // lr * (1 + cos(pi * (epoch - 1) / epochs)) / 2
};

struct ExperimentConfig {
  TaskKind task = TaskKind::InrClassify;
  std::filesystem::path zoo;
  Method method = Method::ScaleGMN;
  ScaleGMNConfig model;
  std::vector<Index> baseline_hidden{64, 64};
  OptimConfig optim;
  std::uint64_t seed = 0;
  Augmentation augment;
  std::filesystem::path out;

  /// Task/head compatibility: edit needs the equivariant head and ScaleGMN,
  /// the other tasks the invariant head.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Missing keys keep defaults; `model.out_dim` and `model.head` follow the task.
ExperimentConfig experiment_from_json(const nlohmann::json& j);

struct ZooGenOptions {
  Index image_size = 16;
  InrArch inr_arch;
  InrTrainOptions inr_fit{1000, 1e-3, 1e-6};
  bool shared_inr_init = true;  // every INR starts from one seeded initialization
  CnnHyper cnn;
};

struct GenReport {
  Zoo zoo;
  std::vector<std::string> skipped;  // failed twice
  int retried = 0;
};

/// kind: "inr-2class" (disks vs squares, labels alternate) or "cnn-accuracy"
/// (toy CNNs with spread hyperparameters, label = held-out accuracy).
GenReport generate_zoo(std::string_view kind, int count, std::uint64_t seed,
                       const ZooGenOptions& opts = {});

/// The image an INR zoo item was fitted to.
Tensor zoo_item_image(const ZooItem& item, Index size = 16);

struct Split {
  std::vector<std::size_t> train, val, test;
};
/// Seeded shuffle, then 70/15/15.
Split split_indices(std::size_t n, std::uint64_t seed);
const std::vector<std::size_t>& split_part(const Split& s, std::string_view name);

/// Per-datapoint inputs for every method.
struct Prepared {
  ParamGraph graph;
  Eigen::VectorXd flat;
  Eigen::VectorXd stats;
  double target = 0.0;
  std::optional<Signal> edit_target;  // dilated image on the INR's grid
  std::optional<FfnnParams> net;
};

struct PrepareOptions {
  Direction direction = Direction::Forward;
  Index kh_max = 3;
  Index kw_max = 3;
  bool with_graph = true;
};

Prepared prepare(const ZooItem& item, TaskKind task, const PrepareOptions& opts);

/// Orbit element suited to an item (sign or positive per its hidden layers).
OrbitElement sample_item_orbit(const ZooItem& item, double lambda, bool permute, Rng& rng);
ZooItem transform_item(const ZooItem& item, const OrbitElement& g);

/// ScaleGMN or an MLP baseline over flattened parameters / statistics.
class MetaNet {
 public:
  MetaNet(const ExperimentConfig& cfg, const ZooItem& proto, const std::vector<Prepared>& train,
          std::uint64_t seed);

  [[nodiscard]] Method method() const { return method_; }
  [[nodiscard]] TaskKind task() const { return task_; }
  [[nodiscard]] const PrepareOptions& prepare_options() const { return prep_; }
  ParameterStore& store();
  [[nodiscard]] const ParameterStore& store() const;
  [[nodiscard]] const ScaleGMNModel* gmn() const { return gmn_ ? &*gmn_ : nullptr; }

  /// Invariant-task outputs, one row per datapoint.
  Var predict(Binding& b, const std::vector<const Prepared*>& batch) const;
  /// Task loss on a batch (cross-entropy, MSE on accuracy, functional MSE).
  Var loss(Binding& b, const std::vector<const Prepared*>& batch) const;
  /// Edited nets (edit task only).
  std::vector<FfnnParams> edit(const std::vector<const Prepared*>& batch) const;

  void save(const std::filesystem::path& dir) const;
  static MetaNet load(const std::filesystem::path& dir);

 private:
  MetaNet() = default;
  Var features(Binding& b, const std::vector<const Prepared*>& batch) const;
  GraphBatch graph_batch(const std::vector<const Prepared*>& batch) const;

  Method method_ = Method::ScaleGMN;
  TaskKind task_ = TaskKind::InrClassify;
  PrepareOptions prep_;
  std::optional<ScaleGMNModel> gmn_;
  ParameterStore store_;
  Mlp mlp_;
  std::vector<Index> hidden_;
  Index out_dim_ = 1;
  Eigen::RowVectorXd mean_, inv_std_;
  // Fixed per-layer multipliers on graph features (1 / training std), index l.
  std::vector<double> vertex_scale_, edge_scale_;
  double output_shift_ = 0.0;  // output biases are invariant, so they are also centred
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
};

struct TrainResult {
  double initial_loss = 0.0;
  double best_val = 0.0;
  int best_epoch = -1;  // -1: the initialisation was kept
  bool diverged = false;
  std::vector<EpochRecord> epochs;
  std::string metric;
};

/// Trains on the train split, keeps the best-validation parameters and writes
/// checkpoint/, metrics.csv, train_loss.csv and summary.json under cfg.out
/// when it is non-empty.
TrainResult train_experiment(const ExperimentConfig& cfg, const Zoo& zoo, MetaNet* trained = nullptr,
                             std::ostream* log = nullptr);

struct EvalReport {
  std::string metric;
  std::string split;
  std::size_t count = 0;
  double value = 0.0;
  std::optional<double> orbit_value;
  double max_output_deviation = 0.0;  // between original and orbit copy
};

nlohmann::json to_json(const EvalReport& r);

/// Higher is better for accuracy and tau, lower for functional MSE.
std::string task_metric(TaskKind t);
bool metric_improves(TaskKind t, double candidate, double best);

EvalReport evaluate(const MetaNet& net, const Zoo& zoo, const std::vector<std::size_t>& indices,
                    bool orbit_copy, std::uint64_t seed, double lambda = 1.0);

enum class CanonKind { None, Norm, Sign };
CanonKind parse_canon_kind(std::string_view s);
/// Bias shift on sine layers, then optionally per-neuron canonical scaling:
/// norm (positive group, unit incoming [w, b] norm) or sign (sign group,
/// non-negative bias, ties broken by the first nonzero incoming weight).
FfnnParams canonicalize_net(const FfnnParams& net, CanonKind kind);

/// Random datapoint net: sine layers start from the SIREN init with biases
/// spread over [-2, 2], other activations draw U[-1, 1]. The last layer is linear.
FfnnParams random_ffnn(const std::vector<Index>& widths, const ActivationDescriptor& act, Rng& rng);

struct CertifySetting {
  ActivationDescriptor activation;
  Direction direction = Direction::Forward;
  HeadKind head = HeadKind::Invariant;
};

/// A batch of symmetry certifications sharing one model size and net shape.
struct CertifySuite {
  std::vector<Index> widths{2, 6, 5, 2};
  ScaleGMNConfig model;
  CertifyOptions options;
  std::vector<CertifySetting> settings;
};

/// {"widths", "nets", "orbits_per_net", "tolerance", "seed", "model": {...},
///  "settings": [{"activation", "direction", "head"}]}; the group follows the activation.
CertifySuite certify_suite_from_json(const nlohmann::json& j);
std::vector<SymmetryReport> run_certify_suite(const CertifySuite& suite);

struct SimulationCheck {
  double forward = 0.0;   // max |z, x| error after l rounds
  double backward = 0.0;  // max relative gradient error after 2L - l rounds
};
/// Compares simulate_ffnn against a direct forward pass and hand-written
/// backpropagation of sum(x_L * output_grad).
SimulationCheck check_simulation(const FfnnParams& net, const Tensor& x, const Tensor& output_grad);

}  // namespace scalegmn
