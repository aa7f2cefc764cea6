#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "scalegmn/tensor.hpp"

namespace scalegmn {

struct ParamId {
  std::size_t index = 0;
};

/// Named, ordered collection of learnable tensors. Modules keep ParamIds into
/// it; the store owns the values.
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor init);

  [[nodiscard]] const Tensor& value(ParamId id) const { return values_.at(id.index); }
  [[nodiscard]] Tensor& value(ParamId id) { return values_.at(id.index); }
  [[nodiscard]] const std::string& name(ParamId id) const { return names_.at(id.index); }
  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] Index scalar_count() const;
  [[nodiscard]] std::optional<ParamId> find(const std::string& name) const;

  [[nodiscard]] const std::vector<Tensor>& values() const { return values_; }
  std::vector<Tensor>& values() { return values_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

using Gradients = std::vector<Tensor>;

/// Lazily places store parameters on a tape as leaves. One binding per forward
/// pass; after Tape::backward the gradients are collected per parameter.
class Binding {
 public:
  Binding(Tape& tape, const ParameterStore& store);

  Var operator()(ParamId id);
  [[nodiscard]] Tape& tape() const { return *tape_; }
  [[nodiscard]] const ParameterStore& store() const { return *store_; }

  /// Gradient per parameter; zeros for parameters never bound.
  [[nodiscard]] Gradients gradients() const;

 private:
  Tape* tape_;
  const ParameterStore* store_;
  std::vector<std::optional<Var>> bound_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;   // decoupled (AdamW style)
  double max_grad_norm = 0.0;  // 0 disables global-norm clipping
};

struct AdamState {
  AdamOptions options;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  long step = 0;

  explicit AdamState(const ParameterStore& params, AdamOptions opts = {});
};

/// One bias-corrected Adam update in place. Throws NumericError, leaving
/// everything untouched, if any gradient entry is NaN/Inf.
void adam_step(AdamState& state, ParameterStore& params, const Gradients& grads);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  Index worst_coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

using LossFn = std::function<Var(Binding&)>;

/// Central differences against one reverse sweep, coordinate by coordinate.
/// Relative error is |a - n| / max(|a|, |n|, floor). `max_coords_per_param`
/// limits the sweep for large tensors (0 means all coordinates).
FiniteDiffReport finite_diff_check(const LossFn& loss, ParameterStore& params, double step = 1e-6,
                                   double floor = 1e-6, Index max_coords_per_param = 0);

/// Value and gradients of a loss in one pass.
double evaluate_with_gradients(const LossFn& loss, const ParameterStore& params, Gradients* grads);

}  // namespace scalegmn
