#pragma once

#include <span>
#include <vector>

#include "scalegmn/tensor.hpp"

// Differentiable primitives over Var. Every function records one node on the
// operands' tape. Row-oriented batching is the convention throughout: rows are
// items (vertices, edges, samples), columns are features.
namespace scalegmn {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// a (n x c) + row (1 x c) broadcast over rows.
Var add_rowwise(Var a, Var row);
/// Elementwise product of equal shapes.
Var mul(Var a, Var b);
/// a (n x c) with row r multiplied by s(r, 0).
Var mul_colwise(Var a, Var s);
/// Elementwise quotient; |b| < kDivisionGuard anywhere throws NumericError.
Var div(Var a, Var b);
Var reciprocal(Var a);

Var matmul(Var a, Var b);
/// a * b^T, the layout used by Linear (weights stored out x in).
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

Var sin(Var a);
Var cos(Var a);
Var tanh(Var a);
Var relu(Var a);
Var silu(Var a);
Var abs(Var a);
Var square(Var a);
Var exp(Var a);

/// Sum of all entries, 1x1.
Var sum(Var a);
Var mean(Var a);
/// Column sums, 1 x c.
Var sum_rows(Var a);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, Index start, Index count);
Var slice_rows(Var a, Index start, Index count);
/// Row-major reinterpretation.
Var reshape(Var a, Index rows, Index cols);

/// out(k, :) = a(idx[k], :)
Var gather_rows(Var a, const IndexList& idx);
/// out(idx[k], :) += a(k, :), with `rows` output rows (segment sum).
Var scatter_add_rows(Var a, const IndexList& idx, Index rows);

/// Each row divided by its Euclidean norm; rows with norm < kDivisionGuard map
/// to zero (gradient zero there).
Var normalize_rows(Var a);
/// Per-row standardisation without affine parameters.
Var layer_norm_rows(Var a, double eps = 1e-5);

Var log_softmax_rows(Var a);
/// Mean negative log-likelihood of integer labels under row logits.
Var cross_entropy(Var logits, const std::vector<int>& labels);
/// Mean of squared differences.
Var mse(Var a, Var b);

/// Valid (no padding, stride 1) patch extraction for conv layers. `a` holds
/// `batch * height * width` rows of `channels` values (NHWC). Output has
/// `batch * oh * ow` rows and `channels * kh * kw` columns ordered (c, dy, dx).
Var im2col(Var a, Index batch, Index height, Index width, Index channels, Index kh, Index kw);

// Convenience operators.
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace scalegmn
