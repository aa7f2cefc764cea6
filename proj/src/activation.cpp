#include "scalegmn/activation.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "scalegmn/ops.hpp"

namespace scalegmn {

std::string_view to_string(GroupKind g) {
  switch (g) {
    case GroupKind::None: return "none";
    case GroupKind::Positive: return "positive";
    case GroupKind::Sign: return "sign";
  }
  return "none";
}

std::string_view to_string(CanonMode m) {
  switch (m) {
    case CanonMode::NormDivide: return "norm-divide";
    case CanonMode::SignSymmetrize: return "sign-symmetrize";
    case CanonMode::SignAbs: return "sign-abs";
    case CanonMode::Identity: return "identity";
  }
  return "identity";
}

std::string_view to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::Identity: return "identity";
    case ActivationKind::Relu: return "relu";
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::Sine: return "sine";
    case ActivationKind::Silu: return "silu";
  }
  return "identity";
}

GroupKind parse_group_kind(std::string_view s) {
  if (s == "none") return GroupKind::None;
  if (s == "positive") return GroupKind::Positive;
  if (s == "sign") return GroupKind::Sign;
  throw Error("unknown group kind '" + std::string(s) + "'");
}

CanonMode parse_canon_mode(std::string_view s) {
  if (s == "norm-divide") return CanonMode::NormDivide;
  if (s == "sign-symmetrize") return CanonMode::SignSymmetrize;
  if (s == "sign-abs") return CanonMode::SignAbs;
  if (s == "identity") return CanonMode::Identity;
  throw Error("unknown canonicalization mode '" + std::string(s) + "'");
}

CanonMode default_canon_mode(GroupKind g) {
  switch (g) {
    case GroupKind::Positive: return CanonMode::NormDivide;
    case GroupKind::Sign: return CanonMode::SignSymmetrize;
    case GroupKind::None: return CanonMode::Identity;
  }
  return CanonMode::Identity;
}

ActivationDescriptor::ActivationDescriptor(ActivationKind kind, double omega0)
    : kind_(kind), omega0_(omega0) {
  canon_ = default_canon_mode(group());
}

ActivationDescriptor ActivationDescriptor::sine(double omega0) {
  const double k = omega0 / std::numbers::pi;
  if (!std::isfinite(omega0) || std::abs(k - std::round(k)) < 1e-9) {
    throw Error("sine activation requires omega0 != k*pi, got " + std::to_string(omega0));
  }
  return ActivationDescriptor(ActivationKind::Sine, omega0);
}

ActivationDescriptor ActivationDescriptor::parse(std::string_view name, double omega0) {
  if (name == "identity" || name == "linear") return identity();
  if (name == "relu") return relu();
  if (name == "tanh") return tanh();
  if (name == "silu") return silu();
  if (name == "sine" || name == "sin") return sine(omega0);
  throw Error("unknown activation '" + std::string(name) + "'");
}

double ActivationDescriptor::apply(double z) const {
  switch (kind_) {
    case ActivationKind::Identity: return z;
    case ActivationKind::Relu: return z > 0.0 ? z : 0.0;
    case ActivationKind::Tanh: return std::tanh(z);
    case ActivationKind::Sine: return std::sin(z);
    case ActivationKind::Silu: return z / (1.0 + std::exp(-z));
  }
  return z;
}

double ActivationDescriptor::derivative(double z) const {
  switch (kind_) {
    case ActivationKind::Identity: return 1.0;
    case ActivationKind::Relu: return z > 0.0 ? 1.0 : 0.0;
    case ActivationKind::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case ActivationKind::Sine: return std::cos(z);
    case ActivationKind::Silu: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 + z * (1.0 - s));
    }
  }
  return 1.0;
}

Tensor ActivationDescriptor::apply(const Tensor& z) const {
  return z.unaryExpr([this](double v) { return apply(v); });
}

GroupKind ActivationDescriptor::group() const {
  switch (kind_) {
    case ActivationKind::Relu: return GroupKind::Positive;
    case ActivationKind::Tanh:
    case ActivationKind::Sine: return GroupKind::Sign;
    default: return GroupKind::None;
  }
}

bool ActivationDescriptor::in_group(double q) const {
  switch (group()) {
    case GroupKind::Positive: return q > 0.0 && std::isfinite(q);
    case GroupKind::Sign: return q == 1.0 || q == -1.0;
    case GroupKind::None: return q == 1.0;
  }
  return false;
}

Var apply_activation(const ActivationDescriptor& act, Var z) {
  switch (act.kind()) {
    case ActivationKind::Identity: return z;
    case ActivationKind::Relu: return relu(z);
    case ActivationKind::Tanh: return tanh(z);
    case ActivationKind::Sine: return sin(z);
    case ActivationKind::Silu: return silu(z);
  }
  return z;
}

}  // namespace scalegmn
