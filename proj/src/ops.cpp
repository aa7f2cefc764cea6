#include "scalegmn/ops.hpp"

#include <cmath>
#include <string>

namespace scalegmn {
namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw Error("operation on an unbound Var");
  return *a.tape();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

template <typename F, typename DF>
Var unary(Var a, F f, DF df, const char* op) {
  Tensor out = a.value().unaryExpr(f);
  return tape_of(a).record(
      std::move(out), {a},
      [a, df](Tape& t, const Tensor& g) {
        t.accumulate(a, g.cwiseProduct(a.value().unaryExpr(df)));
      },
      op);
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  return tape_of(a).record(
      a.value() + b.value(), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
      },
      "add");
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  return tape_of(a).record(
      a.value() - b.value(), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(b, -g);
      },
      "sub");
}

Var neg(Var a) {
  return tape_of(a).record(
      -a.value(), {a}, [a](Tape& t, const Tensor& g) { t.accumulate(a, -g); }, "neg");
}

Var scale(Var a, double s) {
  return tape_of(a).record(
      a.value() * s, {a}, [a, s](Tape& t, const Tensor& g) { t.accumulate(a, g * s); },
      "scale");
}

Var add_scalar(Var a, double s) {
  return tape_of(a).record(
      (a.value().array() + s).matrix(), {a},
      [a](Tape& t, const Tensor& g) { t.accumulate(a, g); }, "add_scalar");
}

Var add_rowwise(Var a, Var row) {
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("add_rowwise: row " + shape_string(rv) + " for " + shape_string(av));
  }
  Tensor out = av.rowwise() + rv.row(0);
  return tape_of(a).record(
      std::move(out), {a, row},
      [a, row](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        t.accumulate(row, g.colwise().sum());
      },
      "add_rowwise");
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  return tape_of(a).record(
      a.value().cwiseProduct(b.value()), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        t.accumulate(a, g.cwiseProduct(b.value()));
        t.accumulate(b, g.cwiseProduct(a.value()));
      },
      "mul");
}

Var mul_colwise(Var a, Var s) {
  const Tensor& av = a.value();
  const Tensor& sv = s.value();
  if (sv.cols() != 1 || sv.rows() != av.rows()) {
    throw ShapeError("mul_colwise: column " + shape_string(sv) + " for " + shape_string(av));
  }
  Tensor out = av.array().colwise() * sv.col(0).array();
  return tape_of(a).record(
      std::move(out), {a, s},
      [a, s](Tape& t, const Tensor& g) {
        t.accumulate(a, (g.array().colwise() * s.value().col(0).array()).matrix());
        t.accumulate(s, g.cwiseProduct(a.value()).rowwise().sum());
      },
      "mul_colwise");
}

Var div(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "div");
  if ((b.value().array().abs() < kDivisionGuard).any()) {
    throw NumericError("div: denominator magnitude below 1e-12");
  }
  Tensor out = a.value().cwiseQuotient(b.value());
  return tape_of(a).record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        const Tensor& bv = b.value();
        t.accumulate(a, g.cwiseQuotient(bv));
        t.accumulate(b, -(g.cwiseProduct(a.value()).cwiseQuotient(bv.cwiseProduct(bv))));
      },
      "div");
}

Var reciprocal(Var a) {
  if ((a.value().array().abs() < kDivisionGuard).any()) {
    throw NumericError("reciprocal: magnitude below 1e-12");
  }
  Tensor out = a.value().cwiseInverse();
  return tape_of(a).record(
      std::move(out), {a},
      [a](Tape& t, const Tensor& g) {
        const Tensor inv = a.value().cwiseInverse();
        t.accumulate(a, -(g.cwiseProduct(inv).cwiseProduct(inv)));
      },
      "reciprocal");
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a.value()) + " * " + shape_string(b.value()));
  }
  Tensor out = a.value() * b.value();
  return tape_of(a).record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
        if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
      },
      "matmul");
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + shape_string(a.value()) + " * " + shape_string(b.value()) +
                     "^T");
  }
  Tensor out = a.value() * b.value().transpose();
  return tape_of(a).record(
      std::move(out), {a, b},
      [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.accumulate(a, g * b.value());
        if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.value());
      },
      "matmul_nt");
}

Var transpose(Var a) {
  Tensor out = a.value().transpose();
  return tape_of(a).record(
      std::move(out), {a},
      [a](Tape& t, const Tensor& g) { t.accumulate(a, g.transpose()); }, "transpose");
}

Var sin(Var a) {
  return unary(
      a, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); }, "sin");
}

Var cos(Var a) {
  return unary(
      a, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); }, "cos");
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double th = std::tanh(x);
        return 1.0 - th * th;
      },
      "tanh");
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; },
      "relu");
}

Var silu(Var a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      },
      "silu");
}

Var abs(Var a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }, "abs");
}

Var square(Var a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; }, "square");
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); }, "exp");
}

Var sum(Var a) {
  Tensor out(1, 1);
  out(0, 0) = a.value().sum();
  return tape_of(a).record(
      std::move(out), {a},
      [a](Tape& t, const Tensor& g) {
        t.accumulate(a, Tensor::Constant(a.rows(), a.cols(), g(0, 0)));
      },
      "sum");
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var sum_rows(Var a) {
  Tensor out = a.value().colwise().sum();
  return tape_of(a).record(
      std::move(out), {a},
      [a](Tape& t, const Tensor& g) {
        Tensor d = g.replicate(a.rows(), 1);
        t.accumulate(a, d);
      },
      "sum_rows");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return tape_of(parts[0]).record(
      std::move(out), ps,
      [ps](Tape& t, const Tensor& g) {
        Index off = 0;
        for (const Var& p : ps) {
          if (t.requires_grad(p)) t.accumulate(p, g.middleCols(off, p.cols()));
          off += p.cols();
        }
      },
      "concat_cols");
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return tape_of(parts[0]).record(
      std::move(out), ps,
      [ps](Tape& t, const Tensor& g) {
        Index off = 0;
        for (const Var& p : ps) {
          if (t.requires_grad(p)) t.accumulate(p, g.middleRows(off, p.rows()));
          off += p.rows();
        }
      },
      "concat_rows");
}

Var slice_cols(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols out of range for " + shape_string(a.value()));
  }
  Tensor out = a.value().middleCols(start, count);
  return tape_of(a).record(
      std::move(out), {a},
      [a, start, count](Tape& t, const Tensor& g) {
        Tensor d = Tensor::Zero(a.rows(), a.cols());
        d.middleCols(start, count) = g;
        t.accumulate(a, d);
      },
      "slice_cols");
}

Var slice_rows(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows out of range for " + shape_string(a.value()));
  }
  Tensor out = a.value().middleRows(start, count);
  return tape_of(a).record(
      std::move(out), {a},
      [a, start, count](Tape& t, const Tensor& g) {
        Tensor d = Tensor::Zero(a.rows(), a.cols());
        d.middleRows(start, count) = g;
        t.accumulate(a, d);
      },
      "slice_rows");
}

Var reshape(Var a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) {
    throw ShapeError("reshape " + shape_string(a.value()) + " to " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  Tensor out = Eigen::Map<const Tensor>(a.value().data(), rows, cols);
  return tape_of(a).record(
      std::move(out), {a},
      [a](Tape& t, const Tensor& g) {
        Tensor d = Eigen::Map<const Tensor>(g.data(), a.rows(), a.cols());
        t.accumulate(a, d);
      },
      "reshape");
}

Var gather_rows(Var a, const IndexList& idx) {
  const Tensor& av = a.value();
  Tensor out(static_cast<Index>(idx.size()), av.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= av.rows()) throw ShapeError("gather_rows index out of range");
    out.row(static_cast<Index>(k)) = av.row(idx[k]);
  }
  return tape_of(a).record(
      std::move(out), {a},
      [a, idx](Tape& t, const Tensor& g) {
        Tensor d = Tensor::Zero(a.rows(), a.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) d.row(idx[k]) += g.row(static_cast<Index>(k));
        t.accumulate(a, d);
      },
      "gather_rows");
}

Var scatter_add_rows(Var a, const IndexList& idx, Index rows) {
  const Tensor& av = a.value();
  if (static_cast<Index>(idx.size()) != av.rows()) {
    throw ShapeError("scatter_add_rows: index count does not match rows");
  }
  Tensor out = Tensor::Zero(rows, av.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= rows) throw ShapeError("scatter_add_rows index out of range");
    out.row(idx[k]) += av.row(static_cast<Index>(k));
  }
  return tape_of(a).record(
      std::move(out), {a},
      [a, idx](Tape& t, const Tensor& g) {
        Tensor d(a.rows(), a.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) d.row(static_cast<Index>(k)) = g.row(idx[k]);
        t.accumulate(a, d);
      },
      "scatter_add_rows");
}

Var normalize_rows(Var a) {
  const Tensor& av = a.value();
  Eigen::VectorXd norms = av.rowwise().norm();
  Tensor out = Tensor::Zero(av.rows(), av.cols());
  for (Index r = 0; r < av.rows(); ++r) {
    if (norms(r) >= kDivisionGuard) out.row(r) = av.row(r) / norms(r);
  }
  return tape_of(a).record(
      std::move(out), {a},
      [a, norms](Tape& t, const Tensor& g) {
        const Tensor& x = a.value();
        Tensor d = Tensor::Zero(x.rows(), x.cols());
        for (Index r = 0; r < x.rows(); ++r) {
          const double n = norms(r);
          if (n < kDivisionGuard) continue;
          const auto u = x.row(r) / n;
          d.row(r) = (g.row(r) - g.row(r).dot(u) * u) / n;
        }
        t.accumulate(a, d);
      },
      "normalize_rows");
}

Var layer_norm_rows(Var a, double eps) {
  const Tensor& x = a.value();
  const Index n = x.cols();
  Eigen::VectorXd mu = x.rowwise().mean();
  Tensor xc = x.colwise() - mu;
  Eigen::VectorXd inv_std =
      ((xc.cwiseProduct(xc).rowwise().sum() / static_cast<double>(n)).array() + eps)
          .rsqrt()
          .matrix();
  Tensor y = xc.array().colwise() * inv_std.array();
  Tensor y_copy = y;
  return tape_of(a).record(
      std::move(y), {a},
      [a, y_copy, inv_std, n](Tape& t, const Tensor& g) {
        const auto nd = static_cast<double>(n);
        Eigen::VectorXd gm = g.rowwise().mean();
        Eigen::VectorXd gy = g.cwiseProduct(y_copy).rowwise().sum() / nd;
        Tensor d = g;
        d.colwise() -= gm;
        d -= (y_copy.array().colwise() * gy.array()).matrix();
        d = d.array().colwise() * inv_std.array();
        t.accumulate(a, d);
      },
      "layer_norm_rows");
}

Var log_softmax_rows(Var a) {
  const Tensor& x = a.value();
  Eigen::VectorXd mx = x.rowwise().maxCoeff();
  Tensor shifted = x.colwise() - mx;
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  Tensor out = shifted.colwise() - lse;
  Tensor soft = out.array().exp();
  return tape_of(a).record(
      std::move(out), {a},
      [a, soft](Tape& t, const Tensor& g) {
        Eigen::VectorXd gs = g.rowwise().sum();
        Tensor d = g - (soft.array().colwise() * gs.array()).matrix();
        t.accumulate(a, d);
      },
      "log_softmax_rows");
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != logits.rows()) {
    throw ShapeError("cross_entropy: label count does not match rows");
  }
  Var lp = log_softmax_rows(logits);
  Tensor mask = Tensor::Zero(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= logits.cols()) throw ShapeError("label out of range");
    mask(static_cast<Index>(i), labels[i]) = -1.0 / static_cast<double>(labels.size());
  }
  Var m = lp.tape()->constant(std::move(mask));
  return sum(mul(lp, m));
}

Var mse(Var a, Var b) { return mean(square(sub(a, b))); }

Var im2col(Var a, Index batch, Index height, Index width, Index channels, Index kh, Index kw) {
  const Tensor& x = a.value();
  if (x.rows() != batch * height * width || x.cols() != channels) {
    throw ShapeError("im2col: input " + shape_string(x) + " does not match NHWC extents");
  }
  if (kh > height || kw > width) throw ShapeError("im2col: kernel larger than image");
  const Index oh = height - kh + 1;
  const Index ow = width - kw + 1;
  Tensor out(batch * oh * ow, channels * kh * kw);
  for (Index n = 0; n < batch; ++n) {
    for (Index r = 0; r < oh; ++r) {
      for (Index c = 0; c < ow; ++c) {
        const Index orow = (n * oh + r) * ow + c;
        for (Index ch = 0; ch < channels; ++ch) {
          for (Index dy = 0; dy < kh; ++dy) {
            for (Index dx = 0; dx < kw; ++dx) {
              const Index irow = (n * height + r + dy) * width + c + dx;
              out(orow, (ch * kh + dy) * kw + dx) = x(irow, ch);
            }
          }
        }
      }
    }
  }
  return tape_of(a).record(
      std::move(out), {a},
      [=](Tape& t, const Tensor& g) {
        Tensor d = Tensor::Zero(batch * height * width, channels);
        for (Index n = 0; n < batch; ++n) {
          for (Index r = 0; r < oh; ++r) {
            for (Index c = 0; c < ow; ++c) {
              const Index orow = (n * oh + r) * ow + c;
              for (Index ch = 0; ch < channels; ++ch) {
                for (Index dy = 0; dy < kh; ++dy) {
                  for (Index dx = 0; dx < kw; ++dx) {
                    const Index irow = (n * height + r + dy) * width + c + dx;
                    d(irow, ch) += g(orow, (ch * kh + dy) * kw + dx);
                  }
                }
              }
            }
          }
        }
        t.accumulate(a, d);
      },
      "im2col");
}

}  // namespace scalegmn
