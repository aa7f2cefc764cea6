#include "scalegmn/nn.hpp"

#include <cmath>
#include <string>

namespace scalegmn {

Tensor mlp_forward(std::span<const DenseLayer> layers,
                   const std::optional<ActivationDescriptor>& activation, const Tensor& x,
                   const std::optional<ActivationDescriptor>& head) {
  Tensor h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const DenseLayer& layer = layers[l];
    if (layer.weight.cols() != h.cols() || layer.bias.size() != layer.weight.rows()) {
      throw ShapeError("mlp_forward: layer " + std::to_string(l + 1) + " has weight " +
                       shape_string(layer.weight) + ", bias " + shape_string(layer.bias) +
                       " for input " + shape_string(h));
    }
    const bool last = l + 1 == layers.size();
    const std::optional<ActivationDescriptor>& act = last ? head : activation;
    const double gain = act ? act->gain() : 1.0;
    Tensor z = gain * (h * layer.weight.transpose());
    z.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(layer.bias.data(), layer.bias.size());
    h = act ? act->apply(z) : z;
  }
  return h;
}

Var mlp_forward(std::span<const Var> weights, std::span<const Var> biases,
                const std::optional<ActivationDescriptor>& activation, Var x,
                const std::optional<ActivationDescriptor>& head) {
  if (weights.size() != biases.size()) throw ShapeError("mlp_forward: weight/bias count differs");
  Var h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].cols() != h.cols() || biases[l].rows() != 1 ||
        biases[l].cols() != weights[l].rows()) {
      throw ShapeError("mlp_forward: layer " + std::to_string(l + 1) + " has weight " +
                       shape_string(weights[l].value()) + ", bias " +
                       shape_string(biases[l].value()) + " for input " + shape_string(h.value()));
    }
    const bool last = l + 1 == weights.size();
    const std::optional<ActivationDescriptor>& act = last ? head : activation;
    Var z = matmul_nt(h, weights[l]);
    if (act && act->gain() != 1.0) z = scale(z, act->gain());
    z = add_rowwise(z, biases[l]);
    h = act ? apply_activation(*act, z) : z;
  }
  return h;
}

Linear::Linear(ParameterStore& store, const std::string& name, Index in, Index out, bool bias,
               Rng& rng)
    : in_(in), out_(out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(in, 1)));
  weight_ = store.add(name + ".weight", uniform_tensor(out, in, -bound, bound, rng));
  if (bias) bias_ = store.add(name + ".bias", uniform_tensor(1, out, -bound, bound, rng));
}

Var Linear::operator()(Binding& b, Var x) const {
  if (x.cols() != in_) {
    throw ShapeError("Linear: expected " + std::to_string(in_) + " input columns, got " +
                     shape_string(x.value()));
  }
  Var y = matmul_nt(x, b(weight_));
  if (bias_) y = add_rowwise(y, b(*bias_));
  return y;
}

Mlp::Mlp(ParameterStore& store, const std::string& name, const std::vector<Index>& dims,
         bool layer_norm, Rng& rng)
    : layer_norm_(layer_norm) {
  if (dims.size() < 2) throw ShapeError("Mlp needs at least input and output widths");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    layers_.emplace_back(store, name + "." + std::to_string(l), dims[l], dims[l + 1], true, rng);
  }
}

Var Mlp::operator()(Binding& b, Var x) const {
  Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = layers_[l](b, h);
    if (l + 1 < layers_.size()) {
      if (layer_norm_ && h.cols() > 1) h = layer_norm_rows(h);
      h = silu(h);
    }
  }
  return h;
}

}  // namespace scalegmn
