#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scalegmn/activation.hpp"
#include "scalegmn/ops.hpp"
#include "scalegmn/params.hpp"
#include "scalegmn/random.hpp"

namespace scalegmn {

/// Weight (out x in) and bias (1 x out) of one dense layer.
struct DenseLayer {
  Tensor weight;
  Tensor bias;
};

/// Plain evaluation: rows of x are samples, each layer computes
/// act(gain * x W^T + b). The hidden activation is skipped after the last
/// layer, where the optional `head` applies instead. Throws ShapeError naming
/// the first layer whose shapes do not chain.
Tensor mlp_forward(std::span<const DenseLayer> layers,
                   const std::optional<ActivationDescriptor>& activation, const Tensor& x,
                   const std::optional<ActivationDescriptor>& head = std::nullopt);

/// Same computation recorded on a tape.
Var mlp_forward(std::span<const Var> weights, std::span<const Var> biases,
                const std::optional<ActivationDescriptor>& activation, Var x,
                const std::optional<ActivationDescriptor>& head = std::nullopt);

/// x W^T (+ b), parameters registered in a store.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, Index in, Index out, bool bias, Rng& rng);

  Var operator()(Binding& b, Var x) const;

  [[nodiscard]] Index in_dim() const { return in_; }
  [[nodiscard]] Index out_dim() const { return out_; }
  [[nodiscard]] ParamId weight() const { return weight_; }
  [[nodiscard]] std::optional<ParamId> bias() const { return bias_; }

 private:
  Index in_ = 0;
  Index out_ = 0;
  ParamId weight_;
  std::optional<ParamId> bias_;
};

/// SiLU MLP with optional per-row layer normalisation before each hidden
/// activation. No activation after the last layer.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, const std::vector<Index>& dims,
      bool layer_norm, Rng& rng);

  Var operator()(Binding& b, Var x) const;

  [[nodiscard]] Index in_dim() const { return layers_.front().in_dim(); }
  [[nodiscard]] Index out_dim() const { return layers_.back().out_dim(); }
  [[nodiscard]] const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::vector<Linear> layers_;
  bool layer_norm_ = false;
};

}  // namespace scalegmn
