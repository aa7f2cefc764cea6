#include "scalegmn/equivariant.hpp"

#include <numeric>

namespace scalegmn {

namespace {

std::vector<Index> mlp_dims(Index in, const std::vector<Index>& hidden, Index out) {
  std::vector<Index> d{in};
  d.insert(d.end(), hidden.begin(), hidden.end());
  d.push_back(out);
  return d;
}

}  // namespace

Canonicalizer::Canonicalizer(ParameterStore& store, const std::string& name, Index width,
                             CanonMode mode, Index symm_width, const MlpShape& shape, Rng& rng)
    : mode_(mode), in_(width), out_(width) {
  if (mode == CanonMode::SignSymmetrize) {
    out_ = symm_width;
    mlp_ = Mlp(store, name + ".symm", mlp_dims(width, shape.hidden, symm_width), false, rng);
  }
}

Var Canonicalizer::operator()(Binding& b, Var x) const {
  if (x.cols() != in_) {
    throw ShapeError("canonicalizer expects width " + std::to_string(in_) + ", got " +
                     shape_string(x.value()));
  }
  switch (mode_) {
    case CanonMode::NormDivide: return normalize_rows(x);
    case CanonMode::SignAbs: return abs(x);
    case CanonMode::SignSymmetrize: return mlp_(b, x) + mlp_(b, neg(x));
    case CanonMode::Identity: return x;
  }
  return x;
}

ScaleInvNet::ScaleInvNet(ParameterStore& store, const std::string& name,
                         const std::vector<SlotSpec>& slots, Index p_width, Index out,
                         const MlpShape& shape, Index symm_width, Rng& rng)
    : p_width_(p_width) {
  Index total = p_width;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    canon_.emplace_back(store, name + ".canon" + std::to_string(i), slots[i].width, slots[i].mode,
                        symm_width, shape, rng);
    total += canon_.back().out_dim();
  }
  rho_ = Mlp(store, name + ".rho", mlp_dims(total, shape.hidden, out), shape.layer_norm, rng);
}

Var ScaleInvNet::operator()(Binding& b, std::span<const Var> xs, std::optional<Var> p) const {
  if (xs.size() != canon_.size()) throw ShapeError("ScaleInvNet: slot count mismatch");
  std::vector<Var> parts;
  for (std::size_t i = 0; i < xs.size(); ++i) parts.push_back(canon_[i](b, xs[i]));
  if (p_width_ > 0) {
    if (!p || p->cols() != p_width_) throw ShapeError("ScaleInvNet: missing or mis-sized p input");
    parts.push_back(*p);
  }
  Var in = parts.size() == 1 ? parts.front() : concat_cols(parts);
  return rho_(b, in);
}

ScaleEqLayer::ScaleEqLayer(ParameterStore& store, const std::string& name,
                           const std::vector<SlotSpec>& slots, Index p_width,
                           const std::vector<Index>& out_widths, const MlpShape& shape,
                           Index symm_width, Rng& rng)
    : out_widths_(out_widths) {
  if (slots.size() != out_widths.size()) throw ShapeError("ScaleEqLayer: one output width per slot");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    gamma_.emplace_back(store, name + ".gamma" + std::to_string(i), slots[i].width, out_widths[i],
                        false, rng);
  }
  const Index total = std::accumulate(out_widths.begin(), out_widths.end(), Index{0});
  inv_ = ScaleInvNet(store, name + ".inv", slots, p_width, total, shape, symm_width, rng);
}

std::vector<Var> ScaleEqLayer::operator()(Binding& b, std::span<const Var> xs,
                                          std::optional<Var> p) const {
  Var inv = inv_(b, xs, p);
  std::vector<Var> out;
  Index offset = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Index w = out_widths_[i];
    Var block = out_widths_.size() == 1 ? inv : slice_cols(inv, offset, w);
    out.push_back(mul(gamma_[i](b, xs[i]), block));
    offset += w;
  }
  return out;
}

ScaleEqNet::ScaleEqNet(ParameterStore& store, const std::string& name,
                       const std::vector<SlotSpec>& slots, Index p_width,
                       const std::vector<Index>& out_widths, int layers, const MlpShape& shape,
                       Index symm_width, Rng& rng) {
  if (layers < 1) throw ShapeError("ScaleEqNet needs at least one layer");
  std::vector<SlotSpec> current = slots;
  for (int k = 0; k < layers; ++k) {
    layers_.emplace_back(store, name + ".layer" + std::to_string(k), current, p_width, out_widths,
                         shape, symm_width, rng);
    for (std::size_t i = 0; i < current.size(); ++i) current[i].width = out_widths[i];
  }
}

std::vector<Var> ScaleEqNet::operator()(Binding& b, std::span<const Var> xs,
                                        std::optional<Var> p) const {
  std::vector<Var> h(xs.begin(), xs.end());
  for (const auto& layer : layers_) h = layer(b, h, p);
  return h;
}

Var ScaleEqNet::operator()(Binding& b, Var x, std::optional<Var> p) const {
  std::vector<Var> xs{x};
  return (*this)(b, xs, p).front();
}

Var outer_rows(Var a, Var b) {
  const Index da = a.cols();
  const Index db = b.cols();
  Tensor rep = Tensor::Zero(da, da * db);
  Tensor tile = Tensor::Zero(db, da * db);
  for (Index i = 0; i < da; ++i) {
    for (Index j = 0; j < db; ++j) {
      rep(i, i * db + j) = 1.0;
      tile(j, i * db + j) = 1.0;
    }
  }
  Tape& t = *a.tape();
  return mul(matmul(a, t.constant(rep)), matmul(b, t.constant(tile)));
}

ReScaleEqNet::ReScaleEqNet(ParameterStore& store, const std::string& name, RescaleVariant variant,
                           const std::vector<Index>& widths, Index out, CanonMode product_mode,
                           const MlpShape& shape, Index symm_width, Rng& rng)
    : variant_(variant), widths_(widths) {
  if (widths.empty()) throw ShapeError("ReScaleEqNet needs at least one input");
  if (variant == RescaleVariant::Hadamard) {
    for (std::size_t i = 0; i < widths.size(); ++i) {
      gamma_.emplace_back(store, name + ".gamma" + std::to_string(i), widths[i], out, false, rng);
    }
  } else {
    Index prod = 1;
    for (Index w : widths) prod *= w;
    outer_ = ScaleEqNet(store, name + ".outer", {SlotSpec{prod, product_mode}}, 0, {out}, 1, shape,
                        symm_width, rng);
  }
}

Var ReScaleEqNet::operator()(Binding& b, std::span<const Var> xs) const {
  if (xs.size() != widths_.size()) throw ShapeError("ReScaleEqNet: input count mismatch");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].cols() != widths_[i]) {
      throw ShapeError("ReScaleEqNet: input " + std::to_string(i) + " has width " +
                       std::to_string(xs[i].cols()) + ", expected " + std::to_string(widths_[i]));
    }
  }
  if (variant_ == RescaleVariant::Hadamard) {
    Var acc = gamma_[0](b, xs[0]);
    for (std::size_t i = 1; i < xs.size(); ++i) acc = mul(acc, gamma_[i](b, xs[i]));
    return acc;
  }
  Var prod = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) prod = outer_rows(prod, xs[i]);
  return outer_(b, prod);
}

}  // namespace scalegmn
