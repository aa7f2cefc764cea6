#include "scalegmn/params.hpp"

#include <cmath>

namespace scalegmn {

ParamId ParameterStore::add(std::string name, Tensor init) {
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return ParamId{values_.size() - 1};
}

Index ParameterStore::scalar_count() const {
  Index n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

std::optional<ParamId> ParameterStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return ParamId{i};
  }
  return std::nullopt;
}

Binding::Binding(Tape& tape, const ParameterStore& store)
    : tape_(&tape), store_(&store), bound_(store.size()) {}

Var Binding::operator()(ParamId id) {
  auto& slot = bound_.at(id.index);
  if (!slot) slot = tape_->variable(store_->value(id));
  return *slot;
}

Gradients Binding::gradients() const {
  Gradients out;
  out.reserve(bound_.size());
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    if (bound_[i]) {
      out.push_back(tape_->grad(*bound_[i]));
    } else {
      const Tensor& v = store_->value(ParamId{i});
      out.push_back(Tensor::Zero(v.rows(), v.cols()));
    }
  }
  return out;
}

AdamState::AdamState(const ParameterStore& params, AdamOptions opts) : options(opts) {
  for (const Tensor& v : params.values()) {
    first_moment.push_back(Tensor::Zero(v.rows(), v.cols()));
    second_moment.push_back(Tensor::Zero(v.rows(), v.cols()));
  }
}

void adam_step(AdamState& state, ParameterStore& params, const Gradients& grads) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter/gradient count mismatch");
  }
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const Tensor& g = grads[i];
    const Tensor& p = params.values()[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw ShapeError("adam_step: gradient shape mismatch for '" + params.name(ParamId{i}) + "'");
    }
    if (!g.allFinite()) {
      throw NumericError("adam_step: non-finite gradient for '" + params.name(ParamId{i}) + "'");
    }
    norm_sq += g.squaredNorm();
  }
  const AdamOptions& o = state.options;
  double clip = 1.0;
  if (o.max_grad_norm > 0.0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > o.max_grad_norm) clip = o.max_grad_norm / norm;
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Tensor& p = params.values()[i];
    const Tensor g = grads[i] * clip;
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    m = o.beta1 * m + (1.0 - o.beta1) * g;
    v = o.beta2 * v + (1.0 - o.beta2) * g.cwiseProduct(g);
    if (o.weight_decay > 0.0) p *= (1.0 - o.lr * o.weight_decay);
    const Tensor denom = ((v / bc2).array().sqrt() + o.eps).matrix();
    p -= (o.lr / bc1) * m.cwiseQuotient(denom);
  }
}

double evaluate_with_gradients(const LossFn& loss, const ParameterStore& params, Gradients* grads) {
  Tape tape;
  Binding binding(tape, params);
  Var l = loss(binding);
  const double value = l.item();
  if (grads != nullptr) {
    tape.backward(l);
    *grads = binding.gradients();
  }
  return value;
}

FiniteDiffReport finite_diff_check(const LossFn& loss, ParameterStore& params, double step,
                                   double floor, Index max_coords_per_param) {
  Gradients analytic;
  evaluate_with_gradients(loss, params, &analytic);
  FiniteDiffReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& value = params.values()[p];
    Index limit = value.size();
    if (max_coords_per_param > 0 && limit > max_coords_per_param) limit = max_coords_per_param;
    for (Index k = 0; k < limit; ++k) {
      const double saved = value.data()[k];
      value.data()[k] = saved + step;
      const double up = evaluate_with_gradients(loss, params, nullptr);
      value.data()[k] = saved - step;
      const double down = evaluate_with_gradients(loss, params, nullptr);
      value.data()[k] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[p].data()[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p;
        report.worst_coord = k;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace scalegmn
