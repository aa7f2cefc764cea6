#pragma once

#include <string>
#include <string_view>

#include "scalegmn/tensor.hpp"

namespace scalegmn {

enum class ActivationKind { Identity, Relu, Tanh, Sine, Silu };

/// One-dimensional scaling group D_sigma of an activation: sigma(a x) = a sigma(x).
enum class GroupKind {
  None,      // only the trivial multiplier 1
  Positive,  // a > 0 (ReLU)
  Sign,      // a in {-1, 1} (tanh, sine)
};

/// How a group orbit is collapsed to something invariant.
enum class CanonMode { NormDivide, SignSymmetrize, SignAbs, Identity };

std::string_view to_string(GroupKind g);
std::string_view to_string(CanonMode m);
std::string_view to_string(ActivationKind k);
GroupKind parse_group_kind(std::string_view s);
CanonMode parse_canon_mode(std::string_view s);

/// Default canonicaliser for a group: positive -> norm-divide, sign ->
/// symmetrisation, none -> identity.
CanonMode default_canon_mode(GroupKind g);

/// Pointwise activation with its scaling symmetry. Layers using it compute
/// sigma(gain * W x + b); gain is omega0 for sine and 1 otherwise, so a sine
/// layer evaluates sin(omega0 * W x + b).
class ActivationDescriptor {
 public:
  ActivationDescriptor() = default;

  static ActivationDescriptor identity() { return ActivationDescriptor(ActivationKind::Identity, 1.0); }
  static ActivationDescriptor relu() { return ActivationDescriptor(ActivationKind::Relu, 1.0); }
  static ActivationDescriptor tanh() { return ActivationDescriptor(ActivationKind::Tanh, 1.0); }
  static ActivationDescriptor silu() { return ActivationDescriptor(ActivationKind::Silu, 1.0); }
  /// Throws if omega0 is an integer multiple of pi (sigma(I) singular).
  static ActivationDescriptor sine(double omega0);
  static ActivationDescriptor parse(std::string_view name, double omega0 = 30.0);

  [[nodiscard]] ActivationKind kind() const { return kind_; }
  [[nodiscard]] double omega0() const { return omega0_; }
  [[nodiscard]] double gain() const { return kind_ == ActivationKind::Sine ? omega0_ : 1.0; }
  [[nodiscard]] std::string_view name() const { return to_string(kind_); }

  [[nodiscard]] double apply(double z) const;
  [[nodiscard]] double derivative(double z) const;
  [[nodiscard]] Tensor apply(const Tensor& z) const;

  [[nodiscard]] GroupKind group() const;
  /// phi_{sigma,1}; the identity for every group handled here.
  [[nodiscard]] double phi1(double a) const { return a; }
  [[nodiscard]] bool in_group(double q) const;
  [[nodiscard]] CanonMode canon_mode() const { return canon_; }
  void set_canon_mode(CanonMode m) { canon_ = m; }

  friend bool operator==(const ActivationDescriptor& a, const ActivationDescriptor& b) {
    return a.kind_ == b.kind_ && a.omega0_ == b.omega0_;
  }

 private:
  ActivationDescriptor(ActivationKind kind, double omega0);

  ActivationKind kind_ = ActivationKind::Identity;
  double omega0_ = 1.0;
  CanonMode canon_ = CanonMode::Identity;
};

class Var;
/// Records sigma(z) elementwise on z's tape (no gain applied here).
Var apply_activation(const ActivationDescriptor& act, Var z);

}  // namespace scalegmn
