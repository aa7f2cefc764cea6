#include "scalegmn/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "scalegmn/parallel.hpp"

namespace scalegmn {

using json = nlohmann::json;

std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::InrClassify: return "inr-classify";
    case TaskKind::CnnGeneralization: return "cnn-generalization";
    case TaskKind::InrEdit: return "inr-edit";
  }
  return "?";
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::ScaleGMN: return "scalegmn";
    case Method::FlatMlp: return "mlp";
    case Method::StatMlp: return "statnn";
  }
  return "?";
}

TaskKind parse_task(std::string_view s) {
  for (auto t : {TaskKind::InrClassify, TaskKind::CnnGeneralization, TaskKind::InrEdit}) {
    if (s == to_string(t)) return t;
  }
  throw Error("unknown task: " + std::string(s));
}

Method parse_method(std::string_view s) {
  for (auto m : {Method::ScaleGMN, Method::FlatMlp, Method::StatMlp}) {
    if (s == to_string(m)) return m;
  }
  throw Error("unknown method: " + std::string(s));
}

Augmentation parse_augmentation(std::string_view s) {
  if (s == "none") return {};
  if (s == "sign") return {GroupKind::Sign, 1.0};
  if (s == "positive") return {GroupKind::Positive, 1.0};
  if (s.starts_with("positive(") && s.ends_with(")")) {
    const std::string inner(s.substr(9, s.size() - 10));
    std::size_t used = 0;
    double lambda = 0.0;
    try {
      lambda = std::stod(inner, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != inner.size() || !(lambda > 0.0)) throw Error("bad positive augmentation rate: " + inner);
    return {GroupKind::Positive, lambda};
  }
  throw Error("unknown augmentation: " + std::string(s));
}

std::string to_string(const Augmentation& a) {
  switch (a.group) {
    case GroupKind::None: return "none";
    case GroupKind::Sign: return "sign";
    case GroupKind::Positive: {
      std::ostringstream out;
      out << "positive(" << a.lambda << ")";
      return out.str();
    }
  }
  return "none";
}

void ExperimentConfig::validate() const {
  model.validate();
  if (task == TaskKind::InrEdit) {
    if (method != Method::ScaleGMN) throw Error("inr-edit is implemented for the scalegmn method only");
    if (model.head != HeadKind::EquivariantEdit) throw Error("inr-edit needs the equivariant-edit head");
  } else if (model.head != HeadKind::Invariant) {
    throw Error(std::string(to_string(task)) + " needs the invariant head");
  }
  if (optim.epochs < 0 || optim.batch_size < 1 || !(optim.lr > 0.0)) throw Error("bad optimizer settings");
}

json to_json(const ExperimentConfig& c) {
  return json{{"task", to_string(c.task)},
              {"zoo", c.zoo.string()},
              {"method", to_string(c.method)},
              {"model", to_json(c.model)},
              {"baseline_hidden", c.baseline_hidden},
              {"optim",
               {{"epochs", c.optim.epochs},
                {"lr", c.optim.lr},
                {"batch_size", c.optim.batch_size},
                {"weight_decay", c.optim.weight_decay},
                {"max_grad_norm", c.optim.max_grad_norm},
                {"cosine_decay", c.optim.cosine_decay}}},
              {"seed", c.seed},
              {"augmentation", to_string(c.augment)},
              {"out", c.out.string()}};
}

ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig c;
  if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
  if (j.contains("zoo")) c.zoo = j.at("zoo").get<std::string>();
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  json model = j.value("model", json::object());
  if (!model.contains("head")) model["head"] = c.task == TaskKind::InrEdit ? "equivariant-edit" : "invariant";
  if (!model.contains("out_dim")) model["out_dim"] = c.task == TaskKind::InrClassify ? 2 : 1;
  c.model = config_from_json(model);
  if (j.contains("baseline_hidden")) c.baseline_hidden = j.at("baseline_hidden").get<std::vector<Index>>();
  if (j.contains("optim")) {
    const json& o = j.at("optim");
    c.optim.epochs = o.value("epochs", c.optim.epochs);
    c.optim.lr = o.value("lr", c.optim.lr);
    c.optim.batch_size = o.value("batch_size", c.optim.batch_size);
    c.optim.weight_decay = o.value("weight_decay", c.optim.weight_decay);
    c.optim.max_grad_norm = o.value("max_grad_norm", c.optim.max_grad_norm);
    c.optim.cosine_decay = o.value("cosine_decay", c.optim.cosine_decay);
  }
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("augmentation")) c.augment = parse_augmentation(j.at("augmentation").get<std::string>());
  if (j.contains("out")) c.out = j.at("out").get<std::string>();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Zoo synthesis

namespace {

std::string item_id(std::string_view prefix, int i) {
  std::ostringstream out;
  out << prefix << '-' << std::setw(5) << std::setfill('0') << i;
  return out.str();
}

}  // namespace

Tensor zoo_item_image(const ZooItem& item, Index size) {
  if (!item.signal_seed) throw Error("zoo item " + item.id + " has no signal seed");
  Rng rng(*item.signal_seed);
  return random_shape(static_cast<int>(item.label), size, rng);
}

GenReport generate_zoo(std::string_view kind, int count, std::uint64_t seed, const ZooGenOptions& opts) {
  if (count < 0) throw Error("zoo count must be non-negative");
  const bool inr = kind == "inr-2class";
  if (!inr && kind != "cnn-accuracy") throw Error("unknown zoo kind: " + std::string(kind));
  GenReport rep;
  rep.zoo.task = std::string(kind);
  std::vector<std::optional<ZooItem>> slots(static_cast<std::size_t>(count));
  std::vector<int> retries(slots.size(), 0);

  parallel_for(slots.size(), [&](std::size_t idx) {
    const int i = static_cast<int>(idx);
    for (int attempt = 0; attempt < 2; ++attempt) {
      const std::uint64_t s = derive_seed(seed, 4 * idx + 2 * static_cast<std::uint64_t>(attempt));
      try {
        ZooItem item;
        if (inr) {
          item.id = item_id("inr", i);
          item.label = i % 2;
          item.omega0 = opts.inr_arch.omega0;
          item.signal_seed = derive_seed(seed, 4 * idx + 1);
          const Tensor image = zoo_item_image(item, opts.image_size);
          const std::uint64_t init_seed =
              opts.shared_inr_init ? derive_seed(seed, static_cast<std::uint64_t>(attempt) + (1ULL << 40)) : s;
          InrFit fit = train_inr(image_signal(image), opts.inr_arch, opts.inr_fit, init_seed);
          item.ffnn = round_to_f32(fit.net);
        } else {
          item.id = item_id("cnn", i);
          Rng rng(s);
          CnnHyper h = opts.cnn;
          h.steps = std::uniform_int_distribution<int>(0, opts.cnn.steps)(rng);
          h.lr = opts.cnn.lr * std::pow(10.0, std::uniform_real_distribution<double>(-1.5, 0.5)(rng));
          h.init_scale = std::uniform_real_distribution<double>(0.3, 2.0)(rng);
          CnnFit fit = train_toy_cnn(derive_seed(s, 1), h, derive_seed(s, 2));
          item.cnn = round_to_f32(fit.net);
          item.label = fit.test_accuracy;
        }
        slots[idx] = std::move(item);
        return;
      } catch (const Error&) {
        retries[idx] = attempt + 1;
      }
    }
  });
  for (std::size_t i = 0; i < slots.size(); ++i) {
    rep.retried += retries[i] > 0;
    if (slots[i]) {
      rep.zoo.items.push_back(std::move(*slots[i]));
    } else {
      rep.skipped.push_back(item_id(inr ? "inr" : "cnn", static_cast<int>(i)));
    }
  }
  return rep;
}

Split split_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 7));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.70 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n)));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(std::min(n, n_train + n_val)));
  if (n_train + n_val < n) s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

const std::vector<std::size_t>& split_part(const Split& s, std::string_view name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  throw Error("unknown split: " + std::string(name));
}

// ---------------------------------------------------------------------------
// Datapoints

Prepared prepare(const ZooItem& item, TaskKind task, const PrepareOptions& opts) {
  Prepared p;
  p.target = item.label;
  const GraphOptions gopts{opts.direction, true};
  if (item.is_cnn()) {
    if (opts.with_graph) p.graph = build_graph_cnn(*item.cnn, opts.kh_max, opts.kw_max, gopts);
    p.flat = flatten(*item.cnn);
    p.stats = stat_features(*item.cnn);
  } else {
    if (opts.with_graph) p.graph = build_graph(*item.ffnn, gopts);
    p.flat = flatten(*item.ffnn);
    p.stats = stat_features(*item.ffnn);
    p.net = *item.ffnn;
  }
  if (task == TaskKind::InrEdit) {
    const Tensor image = zoo_item_image(item);
    p.edit_target = image_signal(dilate3x3(image));
  }
  return p;
}

OrbitElement sample_item_orbit(const ZooItem& item, double lambda, bool permute, Rng& rng) {
  if (item.is_cnn()) {
    const auto groups = item.cnn->hidden_groups();
    const GroupKind g = groups.empty() ? GroupKind::None : groups.front();
    return sample_orbit({g, lambda, permute}, item.cnn->widths(), rng);
  }
  return sample_orbit(*item.ffnn, lambda, permute, rng);
}

ZooItem transform_item(const ZooItem& item, const OrbitElement& g) {
  ZooItem out = item;
  if (item.is_cnn()) {
    out.cnn = apply_orbit(*item.cnn, g);
  } else {
    out.ffnn = apply_orbit(*item.ffnn, g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metanetworks

namespace {

void save_store(const ParameterStore& store, const std::filesystem::path& dir, json& manifest) {
  json tensors = json::array();
  std::vector<double> flat;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor& v = store.values()[i];
    tensors.push_back({{"name", store.name(ParamId{i})}, {"rows", v.rows()}, {"cols", v.cols()}, {"offset", flat.size()}});
    flat.insert(flat.end(), v.data(), v.data() + v.size());
  }
  manifest["tensors"] = tensors;
  manifest["params_path"] = "params.f32";
  write_f32(dir / "params.f32", flat);
}

void load_store(ParameterStore& store, const std::filesystem::path& dir, const json& manifest) {
  const std::vector<double> flat = read_f32(dir / manifest.at("params_path").get<std::string>());
  const json& tensors = manifest.at("tensors");
  if (tensors.size() != store.size()) throw Error("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < store.size(); ++i) {
    Tensor& v = store.values()[i];
    const auto offset = tensors[i].at("offset").get<std::size_t>();
    if (tensors[i].at("name").get<std::string>() != store.name(ParamId{i}) || offset + v.size() > flat.size()) {
      throw Error("checkpoint tensor " + store.name(ParamId{i}) + " does not match");
    }
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.data());
  }
}

Eigen::RowVectorXd to_row(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Index>(v.size()));
}

std::vector<double> to_vec(const Eigen::RowVectorXd& r) { return {r.data(), r.data() + r.size()}; }

GraphBatch batch_of(const std::vector<const Prepared*>& batch) {
  std::vector<const ParamGraph*> graphs;
  graphs.reserve(batch.size());
  for (const Prepared* p : batch) graphs.push_back(&p->graph);
  return make_batch(graphs);
}

}  // namespace

MetaNet::MetaNet(const ExperimentConfig& cfg, const ZooItem& proto, const std::vector<Prepared>& train,
                 std::uint64_t seed)
    : method_(cfg.method), task_(cfg.task), hidden_(cfg.baseline_hidden), out_dim_(cfg.model.out_dim) {
  cfg.validate();
  prep_.direction = cfg.model.direction;
  prep_.with_graph = cfg.method == Method::ScaleGMN;
  if (proto.is_cnn()) {
    for (const auto& c : proto.cnn->convs) {
      prep_.kh_max = std::max(prep_.kh_max, c.kh);
      prep_.kw_max = std::max(prep_.kw_max, c.kw);
    }
  }
  if (method_ == Method::ScaleGMN) {
    const Prepared p = prepare(proto, TaskKind::InrClassify, prep_);
    gmn_.emplace(cfg.model, ModelArch::of(p.graph), seed);
    const auto layers = static_cast<std::size_t>(p.graph.num_layers());
    vertex_scale_.assign(layers + 1, 1.0);
    edge_scale_.assign(layers + 1, 1.0);
    if (task_ == TaskKind::InrEdit) return;
    std::vector<double> vs(layers + 1), vn(layers + 1), es(layers + 1), en(layers + 1);
    for (const Prepared& t : train) {
      const ParamGraph& g = t.graph;
      for (Index v = 0; v < g.num_vertices(); ++v) {
        const auto l = static_cast<std::size_t>(g.vertex_layer[v]);
        if (l == 0 || l > layers) continue;
        vs[l] += g.vertex_features(v, 0) * g.vertex_features(v, 0);
        vn[l] += 1.0;
      }
      for (Index e = 0; e < g.num_edges(); ++e) {
        const auto l = static_cast<std::size_t>(g.edge_layer[e]);
        if (l > layers) continue;
        for (Index k = 0; k < g.edge_dim(); ++k) {
          if (g.edge_mask(e, k) == 0.0) continue;
          es[l] += g.edge_features(e, k) * g.edge_features(e, k);
          en[l] += 1.0;
        }
      }
    }
    double out_sum = 0.0;
    for (const Prepared& t : train) {
      for (Index v = 0; v < t.graph.num_vertices(); ++v) {
        if (static_cast<std::size_t>(t.graph.vertex_layer[v]) == layers) out_sum += t.graph.vertex_features(v, 0);
      }
    }
    if (vn[layers] > 0) {
      output_shift_ = out_sum / vn[layers];
      vs[layers] -= vn[layers] * output_shift_ * output_shift_;
    }
    for (std::size_t l = 1; l <= layers; ++l) {
      if (vn[l] > 0 && vs[l] > 0) vertex_scale_[l] = 1.0 / std::sqrt(vs[l] / vn[l]);
      if (en[l] > 0 && es[l] > 0) edge_scale_[l] = 1.0 / std::sqrt(es[l] / en[l]);
    }
    return;
  }
  if (train.empty()) throw Error("baseline needs training data for input scaling");
  const bool flat = method_ == Method::FlatMlp;
  const Index d = flat ? train.front().flat.size() : train.front().stats.size();
  Eigen::MatrixXd x(static_cast<Index>(train.size()), d);
  for (std::size_t i = 0; i < train.size(); ++i) {
    x.row(static_cast<Index>(i)) = (flat ? train[i].flat : train[i].stats).transpose();
  }
  mean_ = x.colwise().mean();
  const Eigen::RowVectorXd var = (x.rowwise() - mean_).array().square().colwise().mean();
  inv_std_ = var.array().sqrt().max(1e-8).inverse();
  Rng rng(seed);
  std::vector<Index> dims{d};
  dims.insert(dims.end(), hidden_.begin(), hidden_.end());
  dims.push_back(out_dim_);
  mlp_ = Mlp(store_, "baseline", dims, false, rng);
}

ParameterStore& MetaNet::store() { return gmn_ ? gmn_->store() : store_; }
const ParameterStore& MetaNet::store() const { return gmn_ ? gmn_->store() : store_; }

Var MetaNet::features(Binding& b, const std::vector<const Prepared*>& batch) const {
  const bool flat = method_ == Method::FlatMlp;
  Tensor x(static_cast<Index>(batch.size()), mean_.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::VectorXd& f = flat ? batch[i]->flat : batch[i]->stats;
    if (f.size() != mean_.size()) throw ShapeError("datapoint does not match the baseline input width");
    x.row(static_cast<Index>(i)) = (f.transpose() - mean_).cwiseProduct(inv_std_);
  }
  return b.tape().constant(x);
}

GraphBatch MetaNet::graph_batch(const std::vector<const Prepared*>& batch) const {
  const bool identity = output_shift_ == 0.0 && std::all_of(vertex_scale_.begin(), vertex_scale_.end(), [](double v) { return v == 1.0; }) &&
                        std::all_of(edge_scale_.begin(), edge_scale_.end(), [](double v) { return v == 1.0; });
  if (identity) return batch_of(batch);
  std::vector<ParamGraph> graphs;
  graphs.reserve(batch.size());
  for (const Prepared* p : batch) {
    ParamGraph g = p->graph;
    const auto layers = static_cast<std::size_t>(g.num_layers());
    if (vertex_scale_.size() != layers + 1) throw ShapeError("graph depth does not match the feature scaling");
    const bool positive_bw = g.bidirectional && std::any_of(g.activations.begin(), g.activations.end(), [](const auto& a) {
      return a.group() == GroupKind::Positive;
    });
    for (Index v = 0; v < g.num_vertices(); ++v) {
      const auto l = static_cast<std::size_t>(g.vertex_layer[v]);
      if (l == layers) g.vertex_features.row(v).array() -= output_shift_;
      g.vertex_features.row(v) *= vertex_scale_[l];
    }
    for (Index e = 0; e < g.num_edges(); ++e) {
      const double s = edge_scale_[static_cast<std::size_t>(g.edge_layer[e])];
      g.edge_features.row(e) *= s;
      if (g.bidirectional) g.backward_features.row(e) *= positive_bw ? 1.0 / s : s;
    }
    graphs.push_back(std::move(g));
  }
  std::vector<const ParamGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  return make_batch(ptrs);
}

Var MetaNet::predict(Binding& b, const std::vector<const Prepared*>& batch) const {
  if (task_ == TaskKind::InrEdit) throw Error("predict is not defined for the edit task");
  if (gmn_) return *gmn_->forward(b, graph_batch(batch)).embedding;
  return mlp_(b, features(b, batch));
}

Var MetaNet::loss(Binding& b, const std::vector<const Prepared*>& batch) const {
  Tape& t = b.tape();
  switch (task_) {
    case TaskKind::InrClassify: {
      std::vector<int> labels;
      for (const Prepared* p : batch) labels.push_back(static_cast<int>(p->target));
      return cross_entropy(predict(b, batch), labels);
    }
    case TaskKind::CnnGeneralization: {
      Tensor y(static_cast<Index>(batch.size()), 1);
      for (std::size_t i = 0; i < batch.size(); ++i) y(static_cast<Index>(i), 0) = batch[i]->target;
      return mse(predict(b, batch), t.constant(y));
    }
    case TaskKind::InrEdit: {
      const GraphBatch g = batch_of(batch);
      const ModelOutput out = gmn_->forward(b, g);
      std::vector<Var> terms;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const NetVars nv = edited_net_vars(g, *out.vertex_bias, *out.edge_weight, static_cast<Index>(k));
        const Signal& s = *batch[k]->edit_target;
        const Var pred = ffnn_forward(g.activations, nv.weights, nv.biases, t.constant(s.coords));
        terms.push_back(mse(pred, t.constant(s.values)));
      }
      return scale(sum(concat_rows(terms)), 1.0 / static_cast<double>(terms.size()));
    }
  }
  throw Error("unknown task");
}

std::vector<FfnnParams> MetaNet::edit(const std::vector<const Prepared*>& batch) const {
  if (!gmn_ || task_ != TaskKind::InrEdit) throw Error("edit needs a scalegmn edit model");
  const GraphBatch g = batch_of(batch);
  Tape t;
  Binding b(t, gmn_->store());
  const ModelOutput out = gmn_->forward(b, g);
  return edited_nets(g, out.vertex_bias->value(), out.edge_weight->value());
}

void MetaNet::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json meta{{"method", to_string(method_)},
            {"task", to_string(task_)},
            {"direction", prep_.direction == Direction::Forward ? "forward" : "bidirectional"},
            {"kh_max", prep_.kh_max},
            {"kw_max", prep_.kw_max}};
  if (gmn_) {
    meta["vertex_scale"] = vertex_scale_;
    meta["edge_scale"] = edge_scale_;
    meta["output_shift"] = output_shift_;
    save_checkpoint(*gmn_, dir / "scalegmn");
  } else {
    meta["hidden"] = hidden_;
    meta["out_dim"] = out_dim_;
    meta["mean"] = to_vec(mean_);
    meta["inv_std"] = to_vec(inv_std_);
    save_store(store_, dir, meta);
  }
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
}

MetaNet MetaNet::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw Error("no meta.json in " + dir.string());
  const json meta = json::parse(in);
  MetaNet net;
  net.method_ = parse_method(meta.at("method").get<std::string>());
  net.task_ = parse_task(meta.at("task").get<std::string>());
  net.prep_.direction = meta.at("direction") == "forward" ? Direction::Forward : Direction::Bidirectional;
  net.prep_.kh_max = meta.at("kh_max").get<Index>();
  net.prep_.kw_max = meta.at("kw_max").get<Index>();
  net.prep_.with_graph = net.method_ == Method::ScaleGMN;
  if (net.method_ == Method::ScaleGMN) {
    net.gmn_.emplace(load_checkpoint(dir / "scalegmn"));
    net.vertex_scale_ = meta.at("vertex_scale").get<std::vector<double>>();
    net.edge_scale_ = meta.at("edge_scale").get<std::vector<double>>();
    net.output_shift_ = meta.value("output_shift", 0.0);
    net.out_dim_ = net.gmn_->config().out_dim;
    return net;
  }
  net.hidden_ = meta.at("hidden").get<std::vector<Index>>();
  net.out_dim_ = meta.at("out_dim").get<Index>();
  net.mean_ = to_row(meta.at("mean"));
  net.inv_std_ = to_row(meta.at("inv_std"));
  Rng rng(0);
  std::vector<Index> dims{net.mean_.size()};
  dims.insert(dims.end(), net.hidden_.begin(), net.hidden_.end());
  dims.push_back(net.out_dim_);
  net.mlp_ = Mlp(net.store_, "baseline", dims, false, rng);
  load_store(net.store_, dir, meta);
  return net;
}

// ---------------------------------------------------------------------------
// Evaluation

std::string task_metric(TaskKind t) {
  switch (t) {
    case TaskKind::InrClassify: return "accuracy";
    case TaskKind::CnnGeneralization: return "kendall_tau_b";
    case TaskKind::InrEdit: return "functional_mse";
  }
  return "?";
}

bool metric_improves(TaskKind t, double candidate, double best) {
  return t == TaskKind::InrEdit ? candidate < best : candidate > best;
}

json to_json(const EvalReport& r) {
  json j{{"metric", r.metric},
         {"split", r.split},
         {"count", r.count},
         {"value", r.value},
         {"max_output_deviation", r.max_output_deviation}};
  if (r.orbit_value) j["orbit_value"] = *r.orbit_value;
  return j;
}

namespace {

constexpr std::size_t kEvalChunk = 32;

/// Per-item outputs: logits / score rows, or edited functions on the grid.
std::vector<Tensor> outputs(const MetaNet& net, const std::vector<Prepared>& data) {
  std::vector<Tensor> out(data.size());
  const std::size_t chunks = (data.size() + kEvalChunk - 1) / kEvalChunk;
  parallel_for(chunks, [&](std::size_t c) {
    std::vector<const Prepared*> batch;
    for (std::size_t i = c * kEvalChunk; i < std::min(data.size(), (c + 1) * kEvalChunk); ++i) batch.push_back(&data[i]);
    if (net.task() == TaskKind::InrEdit) {
      const auto nets = net.edit(batch);
      for (std::size_t k = 0; k < batch.size(); ++k) {
        out[c * kEvalChunk + k] = ffnn_forward(nets[k], batch[k]->edit_target->coords);
      }
      return;
    }
    Tape t;
    Binding b(t, net.store());
    const Tensor pred = net.predict(b, batch).value();
    for (std::size_t k = 0; k < batch.size(); ++k) out[c * kEvalChunk + k] = pred.row(static_cast<Index>(k));
  });
  return out;
}

double metric_of(TaskKind task, const std::vector<Prepared>& data, const std::vector<Tensor>& out) {
  if (data.empty()) return 0.0;
  switch (task) {
    case TaskKind::InrClassify: {
      int hit = 0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        Index arg = 0;
        out[i].row(0).maxCoeff(&arg);
        hit += arg == static_cast<Index>(data[i].target);
      }
      return static_cast<double>(hit) / static_cast<double>(data.size());
    }
    case TaskKind::CnnGeneralization: {
      if (data.size() < 2) return 0.0;
      std::vector<double> pred, truth;
      for (std::size_t i = 0; i < data.size(); ++i) {
        pred.push_back(out[i](0, 0));
        truth.push_back(data[i].target);
      }
      return kendall_tau(pred, truth);
    }
    case TaskKind::InrEdit: {
      double total = 0.0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        total += (out[i] - data[i].edit_target->values).array().square().mean();
      }
      return total / static_cast<double>(data.size());
    }
  }
  return 0.0;
}

std::vector<Prepared> prepare_all(const Zoo& zoo, const std::vector<std::size_t>& idx, TaskKind task,
                                  const PrepareOptions& opts) {
  std::vector<Prepared> out(idx.size());
  parallel_for(idx.size(), [&](std::size_t i) { out[i] = prepare(zoo.items.at(idx[i]), task, opts); });
  return out;
}

}  // namespace

EvalReport evaluate(const MetaNet& net, const Zoo& zoo, const std::vector<std::size_t>& indices,
                    bool orbit_copy, std::uint64_t seed, double lambda) {
  EvalReport rep;
  rep.metric = task_metric(net.task());
  rep.count = indices.size();
  const std::vector<Prepared> data = prepare_all(zoo, indices, net.task(), net.prepare_options());
  const std::vector<Tensor> out = outputs(net, data);
  rep.value = metric_of(net.task(), data, out);
  if (!orbit_copy) return rep;

  Rng rng(derive_seed(seed, 11));
  Zoo moved;
  moved.task = zoo.task;
  for (std::size_t i : indices) {
    const ZooItem& item = zoo.items.at(i);
    moved.items.push_back(transform_item(item, sample_item_orbit(item, lambda, true, rng)));
  }
  std::vector<std::size_t> all(moved.items.size());
  std::iota(all.begin(), all.end(), 0);
  const std::vector<Prepared> data2 = prepare_all(moved, all, net.task(), net.prepare_options());
  const std::vector<Tensor> out2 = outputs(net, data2);
  rep.orbit_value = metric_of(net.task(), data2, out2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    rep.max_output_deviation = std::max(rep.max_output_deviation, (out[i] - out2[i]).cwiseAbs().maxCoeff());
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Training

namespace {

double batch_loss_and_grads(const MetaNet& net, const std::vector<const Prepared*>& batch, Gradients* grads) {
  LossFn f = [&](Binding& b) { return net.loss(b, batch); };
  return evaluate_with_gradients(f, net.store(), grads);
}

void write_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& rows, bool train,
               const std::string& metric) {
  std::ofstream out(path);
  out << "epoch,split,metric,value\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    if (train) {
      out << r.epoch << ",train,loss," << r.train_loss << '\n';
    } else {
      out << r.epoch << ",val," << metric << ',' << r.val_metric << '\n';
    }
  }
}

}  // namespace

TrainResult train_experiment(const ExperimentConfig& cfg, const Zoo& zoo, MetaNet* trained, std::ostream* log) {
  cfg.validate();
  if (zoo.items.empty()) throw Error("cannot train on an empty zoo");
  TrainResult res;
  res.metric = task_metric(cfg.task);
  const Split split = split_indices(zoo.items.size(), cfg.seed);
  PrepareOptions popts;
  popts.direction = cfg.model.direction;
  popts.with_graph = cfg.method == Method::ScaleGMN;
  const ZooItem& proto = zoo.items.front();
  if (proto.is_cnn()) {
    for (const auto& c : proto.cnn->convs) {
      popts.kh_max = std::max(popts.kh_max, c.kh);
      popts.kw_max = std::max(popts.kw_max, c.kw);
    }
  }
  std::vector<Prepared> train = prepare_all(zoo, split.train, cfg.task, popts);
  MetaNet net(cfg, proto, train, derive_seed(cfg.seed, 1));
  AdamState adam(net.store(), AdamOptions{cfg.optim.lr, 0.9, 0.999, 1e-8, cfg.optim.weight_decay,
                                          cfg.optim.max_grad_norm});

  auto mean_loss = [&](const std::vector<Prepared>& data) {
    double total = 0.0;
    for (std::size_t s = 0; s < data.size(); s += kEvalChunk) {
      std::vector<const Prepared*> batch;
      for (std::size_t i = s; i < std::min(data.size(), s + kEvalChunk); ++i) batch.push_back(&data[i]);
      total += batch_loss_and_grads(net, batch, nullptr) * static_cast<double>(batch.size());
    }
    return data.empty() ? 0.0 : total / static_cast<double>(data.size());
  };
  res.initial_loss = mean_loss(train);
  const bool has_val = !split.val.empty();
  const std::vector<Prepared> val = prepare_all(zoo, split.val, cfg.task, popts);
  auto val_metric = [&] { return metric_of(cfg.task, val, outputs(net, val)); };
  res.best_val = has_val ? val_metric() : -res.initial_loss;
  std::vector<Tensor> best = net.store().values();
  if (log) *log << "epoch 0 (init): train loss " << res.initial_loss << ", val " << res.metric << ' ' << res.best_val << '\n';

  Rng aug_rng(derive_seed(cfg.seed, 3));
  for (int epoch = 1; epoch <= cfg.optim.epochs && !res.diverged; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    if (cfg.optim.cosine_decay) {
      const double phase = std::numbers::pi * static_cast<double>(epoch - 1) / static_cast<double>(cfg.optim.epochs);
      adam.options.lr = cfg.optim.lr * 0.5 * (1.0 + std::cos(phase));
    }
    double total = 0.0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.optim.batch_size)) {
      const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(cfg.optim.batch_size));
      std::vector<Prepared> augmented;
      std::vector<const Prepared*> batch;
      if (cfg.augment.group != GroupKind::None) {
        for (std::size_t i = s; i < e; ++i) {
          const ZooItem& item = zoo.items[split.train[order[i]]];
          const OrbitSampling spec{cfg.augment.group, cfg.augment.lambda, true};
          const OrbitElement g = item.is_cnn() ? sample_orbit(spec, item.cnn->widths(), aug_rng)
                                               : sample_orbit(spec, item.ffnn->widths(), aug_rng);
          augmented.push_back(prepare(transform_item(item, g), cfg.task, popts));
        }
        for (const auto& p : augmented) batch.push_back(&p);
      } else {
        for (std::size_t i = s; i < e; ++i) batch.push_back(&train[order[i]]);
      }
      Gradients grads;
      const double l = batch_loss_and_grads(net, batch, &grads);
      if (!std::isfinite(l)) {
        res.diverged = true;
        break;
      }
      try {
        adam_step(adam, net.store(), grads);
      } catch (const NumericError&) {
        res.diverged = true;
        break;
      }
      total += l * static_cast<double>(batch.size());
    }
    if (res.diverged) {
      if (log) *log << "epoch " << epoch << ": diverged, keeping the last finite parameters\n";
      break;
    }
    EpochRecord rec{epoch, total / static_cast<double>(train.size()), 0.0};
    rec.val_metric = has_val ? val_metric() : -rec.train_loss;
    res.epochs.push_back(rec);
    if (metric_improves(cfg.task, rec.val_metric, res.best_val)) {
      res.best_val = rec.val_metric;
      res.best_epoch = epoch;
      best = net.store().values();
    }
    if (log) *log << "epoch " << epoch << ": train loss " << rec.train_loss << ", val " << res.metric << ' ' << rec.val_metric << '\n';
  }
  net.store().values() = best;

  if (!cfg.out.empty()) {
    std::filesystem::create_directories(cfg.out);
    net.save(cfg.out / "checkpoint");
    write_csv(cfg.out / "metrics.csv", res.epochs, false, res.metric);
    write_csv(cfg.out / "train_loss.csv", res.epochs, true, res.metric);
    json summary{{"config", to_json(cfg)},
                 {"metric", res.metric},
                 {"initial_loss", res.initial_loss},
                 {"best_val", res.best_val},
                 {"best_epoch", res.best_epoch},
                 {"diverged", res.diverged},
                 {"split_sizes", {split.train.size(), split.val.size(), split.test.size()}}};
    if (!split.test.empty()) summary["test"] = to_json(evaluate(net, zoo, split.test, false, cfg.seed));
    std::ofstream(cfg.out / "summary.json") << summary.dump(2) << '\n';
  }
  if (trained) *trained = std::move(net);
  return res;
}

// ---------------------------------------------------------------------------
// Canonicalisation

CanonKind parse_canon_kind(std::string_view s) {
  if (s == "none") return CanonKind::None;
  if (s == "norm") return CanonKind::Norm;
  if (s == "sign") return CanonKind::Sign;
  throw Error("unknown canonicalization: " + std::string(s));
}

FfnnParams canonicalize_net(const FfnnParams& net, CanonKind kind) {
  FfnnParams out = bias_shift_net(net);
  if (kind == CanonKind::None) return out;
  const GroupKind want = kind == CanonKind::Norm ? GroupKind::Positive : GroupKind::Sign;
  for (std::size_t l = 0; l + 1 < out.layers.size(); ++l) {
    if (out.layers[l].activation.group() != want) {
      throw Error("canonicalization '" + std::string(kind == CanonKind::Norm ? "norm" : "sign") +
                  "' does not match the activation of layer " + std::to_string(l + 1));
    }
    OrbitElement g = identity_orbit(out.widths());
    const FfnnLayer& layer = out.layers[l];
    for (Index i = 0; i < layer.bias.cols(); ++i) {
      double q = 1.0;
      if (kind == CanonKind::Norm) {
        const double n = std::sqrt(layer.weight.row(i).squaredNorm() + layer.bias(0, i) * layer.bias(0, i));
        if (n > 0.0) q = 1.0 / n;
      } else {
        double key = layer.bias(0, i);
        for (Index j = 0; key == 0.0 && j < layer.weight.cols(); ++j) key = layer.weight(i, j);
        if (key < 0.0) q = -1.0;
      }
      g.scale[l][i] = q;
    }
    out = apply_orbit(out, g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Certification and simulation wrappers

FfnnParams random_ffnn(const std::vector<Index>& widths, const ActivationDescriptor& act, Rng& rng) {
  if (widths.size() < 2) throw ShapeError("a net needs at least two widths");
  if (act.kind() == ActivationKind::Sine) {
    FfnnParams net = siren_init({widths, act.omega0()}, rng);
    for (auto& l : net.layers) l.bias = uniform_tensor(1, l.bias.cols(), -2, 2, rng);
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

CertifySuite certify_suite_from_json(const json& j) {
  CertifySuite s;
  if (j.contains("widths")) s.widths = j.at("widths").get<std::vector<Index>>();
  s.options.nets = j.value("nets", s.options.nets);
  s.options.orbits_per_net = j.value("orbits_per_net", s.options.orbits_per_net);
  s.options.tolerance = j.value("tolerance", s.options.tolerance);
  s.options.seed = j.value("seed", s.options.seed);
  const json model = j.value("model", json::object());
  s.model = config_from_json(model);
  for (const json& e : j.at("settings")) {
    CertifySetting c;
    c.activation = ActivationDescriptor::parse(e.at("activation").get<std::string>(), e.value("omega0", 30.0));
    const std::string dir = e.value("direction", "forward");
    if (dir != "forward" && dir != "bidirectional") throw Error("unknown direction: " + dir);
    c.direction = dir == "forward" ? Direction::Forward : Direction::Bidirectional;
    const std::string head = e.value("head", "invariant");
    if (head != "invariant" && head != "equivariant-edit") throw Error("unknown head: " + head);
    c.head = head == "invariant" ? HeadKind::Invariant : HeadKind::EquivariantEdit;
    s.settings.push_back(c);
  }
  if (s.settings.empty()) throw Error("certify suite has no settings");
  return s;
}

std::vector<SymmetryReport> run_certify_suite(const CertifySuite& suite) {
  std::vector<SymmetryReport> out;
  for (std::size_t k = 0; k < suite.settings.size(); ++k) {
    const CertifySetting& c = suite.settings[k];
    ScaleGMNConfig cfg = suite.model;
    cfg.group = c.activation.group();
    cfg.direction = c.direction;
    cfg.head = c.head;
    if (c.head == HeadKind::EquivariantEdit) cfg.out_dim = 1;
    Rng proto_rng(suite.options.seed);
    const FfnnParams proto = random_ffnn(suite.widths, c.activation, proto_rng);
    const ScaleGMNModel model(cfg, ModelArch::of(build_graph(proto, {c.direction, true})),
                              derive_seed(suite.options.seed, k));
    const ActivationDescriptor act = c.activation;
    const std::vector<Index> widths = suite.widths;
    NetSampler nets = [act, widths](Rng& rng) { return random_ffnn(widths, act, rng); };
    OrbitSampler orbits = [](const FfnnParams& net, Rng& rng) { return sample_orbit(net, 1.0, true, rng); };
    CertifyOptions opts = suite.options;
    opts.seed = derive_seed(suite.options.seed, 1000 + k);
    SymmetryReport r = c.head == HeadKind::Invariant
                           ? certify_invariance(scalegmn_embedder(model), nets, orbits, opts)
                           : certify_equivariance(scalegmn_editor(model), nets, orbits, opts);
    r.name = std::string(act.name()) + "/" + std::string(to_string(cfg.group)) + "/" +
             (c.direction == Direction::Forward ? "forward" : "bidirectional") + "/" +
             (c.head == HeadKind::Invariant ? "invariance" : "equivariance");
    out.push_back(std::move(r));
  }
  return out;
}

SimulationCheck check_simulation(const FfnnParams& net, const Tensor& x, const Tensor& output_grad) {
  const SimulationResult sim = simulate_ffnn(net, x, output_grad);
  const ForwardTrace tr = ffnn_trace(net, x);
  const std::size_t L = net.layers.size();
  std::vector<Tensor> gx(L + 1), gz(L + 1);
  gx[L] = output_grad;
  for (std::size_t l = L; l >= 1; --l) {
    const FfnnLayer& layer = net.layers[l - 1];
    gz[l] = gx[l];
    for (Index i = 0; i < gz[l].cols(); ++i) gz[l](0, i) *= layer.activation.derivative(tr.z[l - 1](0, i));
    gx[l - 1] = layer.activation.gain() * (gz[l] * layer.weight);
  }
  auto rel = [](const Tensor& a, const Tensor& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
  };
  SimulationCheck c;
  for (std::size_t l = 1; l <= L; ++l) {
    c.forward = std::max({c.forward, (sim.z[l] - tr.z[l - 1]).cwiseAbs().maxCoeff(),
                          (sim.x[l] - tr.x[l]).cwiseAbs().maxCoeff()});
    c.backward = std::max(c.backward, rel(sim.grad_z[l], gz[l]));
  }
  for (std::size_t l = 0; l <= L; ++l) c.backward = std::max(c.backward, rel(sim.grad_x[l], gx[l]));
  return c;
}

}  // namespace scalegmn
