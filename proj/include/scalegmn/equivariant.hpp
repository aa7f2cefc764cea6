#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scalegmn/activation.hpp"
#include "scalegmn/nn.hpp"

// Scale-invariant and scale-equivariant building blocks. Every block acts on
// rows: an n x d input holds n independent items, each carrying its own
// multiplier q, and the contracts below hold row by row.
namespace scalegmn {

struct MlpShape {
  std::vector<Index> hidden{32};
  bool layer_norm = false;
};

/// Collapses the orbit of a row under its group.
class Canonicalizer {
 public:
  Canonicalizer() = default;
  /// `symm_width` is the output width of the sign-symmetrisation MLP.
  Canonicalizer(ParameterStore& store, const std::string& name, Index width, CanonMode mode,
                Index symm_width, const MlpShape& shape, Rng& rng);

  /// norm-divide: x / |x| (zero rows stay zero); sign-abs: |x|;
  /// sign-symmetrize: MLP(x) + MLP(-x); identity: x.
  Var operator()(Binding& b, Var x) const;

  [[nodiscard]] CanonMode mode() const { return mode_; }
  [[nodiscard]] Index in_dim() const { return in_; }
  [[nodiscard]] Index out_dim() const { return out_; }
  [[nodiscard]] const Mlp& symmetriser() const { return mlp_; }

 private:
  CanonMode mode_ = CanonMode::Identity;
  Index in_ = 0;
  Index out_ = 0;
  Mlp mlp_;
};

struct SlotSpec {
  Index width = 0;
  CanonMode mode = CanonMode::Identity;
};

/// rho(canon_1(x_1), ..., canon_n(x_n), p). `p` is an optional
/// non-symmetric input passed through unchanged.
class ScaleInvNet {
 public:
  ScaleInvNet() = default;
  ScaleInvNet(ParameterStore& store, const std::string& name, const std::vector<SlotSpec>& slots,
              Index p_width, Index out, const MlpShape& shape, Index symm_width, Rng& rng);

  Var operator()(Binding& b, std::span<const Var> xs, std::optional<Var> p = std::nullopt) const;

  [[nodiscard]] Index out_dim() const { return rho_.out_dim(); }
  [[nodiscard]] const Mlp& rho() const { return rho_; }
  [[nodiscard]] const std::vector<Canonicalizer>& canonicalizers() const { return canon_; }

 private:
  std::vector<Canonicalizer> canon_;
  Index p_width_ = 0;
  Mlp rho_;
};

/// One equivariant layer: slot i maps to (Gamma_i x_i) * inv_i, where inv_i
/// is slot i's block of a ScaleInvNet over all slots (and p).
class ScaleEqLayer {
 public:
  ScaleEqLayer() = default;
  ScaleEqLayer(ParameterStore& store, const std::string& name, const std::vector<SlotSpec>& slots,
               Index p_width, const std::vector<Index>& out_widths, const MlpShape& shape,
               Index symm_width, Rng& rng);

  std::vector<Var> operator()(Binding& b, std::span<const Var> xs,
                              std::optional<Var> p = std::nullopt) const;

  [[nodiscard]] const std::vector<Linear>& gammas() const { return gamma_; }
  [[nodiscard]] const ScaleInvNet& invariant() const { return inv_; }

 private:
  std::vector<Linear> gamma_;
  ScaleInvNet inv_;
  std::vector<Index> out_widths_;
};

/// K stacked ScaleEqLayers. With p_width > 0 this is the augmented variant:
/// every invariant block also sees p.
class ScaleEqNet {
 public:
  ScaleEqNet() = default;
  ScaleEqNet(ParameterStore& store, const std::string& name, const std::vector<SlotSpec>& slots,
             Index p_width, const std::vector<Index>& out_widths, int layers, const MlpShape& shape,
             Index symm_width, Rng& rng);

  std::vector<Var> operator()(Binding& b, std::span<const Var> xs,
                              std::optional<Var> p = std::nullopt) const;
  /// Single-slot convenience.
  Var operator()(Binding& b, Var x, std::optional<Var> p = std::nullopt) const;

  [[nodiscard]] const std::vector<ScaleEqLayer>& layers() const { return layers_; }

 private:
  std::vector<ScaleEqLayer> layers_;
};

enum class RescaleVariant { Hadamard, Outer };

/// g(q_1 x_1, ..., q_n x_n) = (prod q_i) g(x_1, ..., x_n).
/// Hadamard: prod_i Gamma_i x_i. Outer: ScaleEq(vec(x_1 (x) ... (x) x_n)).
class ReScaleEqNet {
 public:
  ReScaleEqNet() = default;
  ReScaleEqNet(ParameterStore& store, const std::string& name, RescaleVariant variant,
               const std::vector<Index>& widths, Index out, CanonMode product_mode,
               const MlpShape& shape, Index symm_width, Rng& rng);

  Var operator()(Binding& b, std::span<const Var> xs) const;

  [[nodiscard]] RescaleVariant variant() const { return variant_; }
  [[nodiscard]] const std::vector<Linear>& gammas() const { return gamma_; }
  [[nodiscard]] const ScaleEqNet& outer_net() const { return outer_; }

 private:
  RescaleVariant variant_ = RescaleVariant::Hadamard;
  std::vector<Index> widths_;
  std::vector<Linear> gamma_;
  ScaleEqNet outer_;
};

/// Row-wise vec(a (x) b): out(:, i * b.cols() + j) = a(:, i) * b(:, j).
Var outer_rows(Var a, Var b);

}  // namespace scalegmn
