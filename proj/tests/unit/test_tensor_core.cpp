#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "scalegmn/nn.hpp"
#include "scalegmn/ops.hpp"
#include "scalegmn/params.hpp"
#include "scalegmn/random.hpp"

using namespace scalegmn;

namespace {

// Hand-rolled triple loop, no Eigen products.
std::vector<double> dense_eval(const DenseLayer& layer, const std::vector<double>& x, bool relu) {
  std::vector<double> out(static_cast<std::size_t>(layer.weight.rows()));
  for (Index i = 0; i < layer.weight.rows(); ++i) {
    double acc = layer.bias(0, i);
    for (Index j = 0; j < layer.weight.cols(); ++j) acc += layer.weight(i, j) * x[j];
    out[i] = relu ? std::max(acc, 0.0) : acc;
  }
  return out;
}

double max_rel_fd(const std::function<Var(Var)>& f, Tensor at) {
  ParameterStore store;
  store.add("x", std::move(at));
  auto loss = [&](Binding& b) {
    Var y = f(b(ParamId{0}));
    // random fixed projection so every output coordinate matters
    Rng rng(99);
    Var w = b.tape().constant(uniform_tensor(y.rows(), y.cols(), -1.0, 1.0, rng));
    return sum(mul(y, w));
  };
  return finite_diff_check(loss, store, 1e-6).max_rel_error;
}

}  // namespace

TEST_SUITE("tensor_core") {

TEST_CASE("mlp_forward identity layer") {
  DenseLayer l{Tensor::Identity(2, 2), Tensor::Zero(1, 2)};
  Tensor x(1, 2);
  x << 1, 2;
  Tensor y = mlp_forward(std::span<const DenseLayer>(&l, 1), std::nullopt, x);
  CHECK(y(0, 0) == 1.0);
  CHECK(y(0, 1) == 2.0);
}

TEST_CASE("mlp_forward relu head clamps") {
  DenseLayer l{Tensor::Constant(1, 1, -2.0), Tensor::Constant(1, 1, 1.0)};
  Tensor x = Tensor::Constant(1, 1, 2.0);
  Tensor y = mlp_forward(std::span<const DenseLayer>(&l, 1), std::nullopt, x,
                         ActivationDescriptor::relu());
  CHECK(y(0, 0) == 0.0);
}

TEST_CASE("mlp_forward matches loop evaluation") {
  Rng rng(7);
  std::vector<DenseLayer> layers{
      {uniform_tensor(5, 3, -1, 1, rng), uniform_tensor(1, 5, -1, 1, rng)},
      {uniform_tensor(2, 5, -1, 1, rng), uniform_tensor(1, 2, -1, 1, rng)}};
  Tensor x = uniform_tensor(4, 3, -2, 2, rng);
  Tensor y = mlp_forward(layers, ActivationDescriptor::relu(), x);
  for (Index r = 0; r < x.rows(); ++r) {
    std::vector<double> xr(x.row(r).data(), x.row(r).data() + 3);
    auto h = dense_eval(layers[0], xr, true);
    auto o = dense_eval(layers[1], h, false);
    for (Index c = 0; c < 2; ++c) CHECK(std::abs(y(r, c) - o[c]) < 1e-12);
  }
  Tensor again = mlp_forward(layers, ActivationDescriptor::relu(), x);
  CHECK((again.array() == y.array()).all());
}

TEST_CASE("mlp_forward shape error names the layer") {
  Rng rng(1);
  std::vector<DenseLayer> layers{{uniform_tensor(4, 3, -1, 1, rng), Tensor::Zero(1, 4)},
                                 {uniform_tensor(2, 5, -1, 1, rng), Tensor::Zero(1, 2)}};
  try {
    (void)mlp_forward(layers, ActivationDescriptor::tanh(), Tensor::Zero(1, 3));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("layer 2") != std::string::npos);
  }
}

TEST_CASE("tape mlp_forward equals plain evaluation") {
  Rng rng(3);
  std::vector<DenseLayer> layers{
      {uniform_tensor(6, 2, -1, 1, rng), uniform_tensor(1, 6, -1, 1, rng)},
      {uniform_tensor(1, 6, -1, 1, rng), uniform_tensor(1, 1, -1, 1, rng)}};
  Tensor x = uniform_tensor(5, 2, -1, 1, rng);
  auto act = ActivationDescriptor::sine(3.0);
  Tape tape;
  std::vector<Var> w{tape.constant(layers[0].weight), tape.constant(layers[1].weight)};
  std::vector<Var> b{tape.constant(layers[0].bias), tape.constant(layers[1].bias)};
  Var y = mlp_forward(w, b, act, tape.constant(x));
  CHECK((y.value() - mlp_forward(layers, act, x)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("backward of x squared") {
  Tape tape;
  Var x = tape.variable(Tensor::Constant(1, 1, 3.0));
  Var l = square(x);
  tape.backward(l);
  CHECK(tape.grad(x)(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("backward of sum(W x) is x broadcast over rows") {
  Rng rng(5);
  Tape tape;
  Var w = tape.variable(uniform_tensor(3, 4, -1, 1, rng));
  Tensor xv = uniform_tensor(1, 4, -1, 1, rng);
  Var l = sum(matmul_nt(tape.constant(xv), w));
  tape.backward(l);
  Tensor g = tape.grad(w);
  for (Index i = 0; i < 3; ++i) CHECK((g.row(i) - xv).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape tape;
  Var x = tape.variable(Tensor::Ones(2, 1));
  CHECK_THROWS_AS(tape.backward(x), Error);
}

TEST_CASE("random mlp gradients agree with finite differences") {
  Rng rng(11);
  ParameterStore store;
  Mlp net(store, "m", {3, 8, 8, 2}, true, rng);
  Tensor x = uniform_tensor(6, 3, -1, 1, rng);
  Tensor target = uniform_tensor(6, 2, -1, 1, rng);
  auto loss = [&](Binding& b) {
    Tape& t = b.tape();
    return mse(net(b, t.constant(x)), t.constant(target));
  };
  auto report = finite_diff_check(loss, store, 1e-5);
  CHECK(report.max_rel_error < 1e-4);
  CHECK(report.coords_checked == static_cast<std::size_t>(store.scalar_count()));
}

TEST_CASE("every primitive matches central differences") {
  Rng rng(21);
  Tensor a = uniform_tensor(3, 4, 0.5, 1.5, rng);
  Tensor bsq = uniform_tensor(4, 4, -1, 1, rng);
  auto c = [&](Var x, const Tensor& t) { return x.tape()->constant(t); };
  std::vector<std::pair<const char*, std::function<Var(Var)>>> cases{
      {"add", [&](Var x) { return add(x, c(x, a)); }},
      {"sub", [&](Var x) { return sub(c(x, a), x); }},
      {"neg", [](Var x) { return neg(x); }},
      {"scale", [](Var x) { return scale(x, -2.5); }},
      {"add_scalar", [](Var x) { return add_scalar(x, 0.3); }},
      {"add_rowwise", [&](Var x) { return add_rowwise(c(x, a), slice_rows(x, 0, 1)); }},
      {"mul", [&](Var x) { return mul(x, c(x, a)); }},
      {"mul_colwise", [&](Var x) { return mul_colwise(x, slice_cols(x, 1, 1)); }},
      {"div", [&](Var x) { return div(c(x, a), x); }},
      {"reciprocal", [](Var x) { return reciprocal(x); }},
      {"matmul", [&](Var x) { return matmul(x, c(x, bsq)); }},
      {"matmul_nt", [&](Var x) { return matmul_nt(x, x); }},
      {"transpose", [](Var x) { return transpose(x); }},
      {"sin", [](Var x) { return sin(x); }},
      {"cos", [](Var x) { return cos(x); }},
      {"tanh", [](Var x) { return tanh(x); }},
      {"relu", [&](Var x) { return relu(add_scalar(x, -1.0)); }},
      {"silu", [](Var x) { return silu(x); }},
      {"abs", [&](Var x) { return abs(add_scalar(x, -1.0)); }},
      {"square", [](Var x) { return square(x); }},
      {"exp", [](Var x) { return exp(x); }},
      {"sum", [](Var x) { return sum(x); }},
      {"mean", [](Var x) { return mean(x); }},
      {"sum_rows", [](Var x) { return sum_rows(x); }},
      {"concat_cols",
       [&](Var x) {
         std::vector<Var> p{x, square(x)};
         return concat_cols(p);
       }},
      {"concat_rows",
       [&](Var x) {
         std::vector<Var> p{x, c(x, a), sin(x)};
         return concat_rows(p);
       }},
      {"reshape", [](Var x) { return square(reshape(x, 2, 6)); }},
      {"gather_rows", [](Var x) { return gather_rows(x, {2, 0, 2, 1}); }},
      {"scatter_add_rows", [](Var x) { return scatter_add_rows(x, {1, 1, 0}, 3); }},
      {"normalize_rows", [](Var x) { return normalize_rows(x); }},
      {"layer_norm_rows", [](Var x) { return layer_norm_rows(x); }},
      {"log_softmax_rows", [](Var x) { return log_softmax_rows(x); }},
      {"cross_entropy", [](Var x) { return cross_entropy(x, {0, 3, 1}); }},
      {"mse", [&](Var x) { return mse(x, c(x, a * 0.5)); }},
      {"im2col", [](Var x) { return im2col(reshape(x, 12, 1), 1, 3, 4, 1, 2, 2); }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    CHECK(max_rel_fd(f, a) < 1e-4);
  }
}

TEST_CASE("guarded division throws") {
  Tape tape;
  Var x = tape.variable(Tensor::Zero(1, 1));
  CHECK_THROWS_AS(reciprocal(x), NumericError);
}

TEST_CASE("adam leaves params unchanged under zero gradients") {
  ParameterStore store;
  Rng rng(2);
  store.add("w", uniform_tensor(3, 3, -1, 1, rng));
  const Tensor before = store.values()[0];
  AdamState st(store);
  Gradients g{Tensor::Zero(3, 3)};
  for (int i = 0; i < 5; ++i) adam_step(st, store, g);
  CHECK((store.values()[0].array() == before.array()).all());
  CHECK(st.step == 5);
}

TEST_CASE("adam converges on a quadratic") {
  ParameterStore store;
  store.add("x", Tensor::Zero(1, 1));
  AdamOptions o;
  o.lr = 0.05;
  AdamState st(store, o);
  for (int i = 0; i < 2000; ++i) {
    Gradients g;
    evaluate_with_gradients(
        [](Binding& b) { return square(add_scalar(b(ParamId{0}), -5.0)); }, store, &g);
    const long before = st.step;
    adam_step(st, store, g);
    REQUIRE(st.step == before + 1);
  }
  CHECK(std::abs(store.values()[0](0, 0) - 5.0) < 1e-2);
}

TEST_CASE("adam refuses non-finite gradients") {
  ParameterStore store;
  store.add("x", Tensor::Ones(1, 2));
  AdamState st(store);
  Gradients g{Tensor::Zero(1, 2)};
  g[0](0, 1) = std::nan("");
  CHECK_THROWS_AS(adam_step(st, store, g), NumericError);
  CHECK(st.step == 0);
  CHECK(store.values()[0](0, 0) == 1.0);
}

TEST_CASE("finite_diff_check on a cubic") {
  ParameterStore store;
  store.add("x", Tensor::Constant(1, 1, 2.0));
  auto report = finite_diff_check(
      [](Binding& b) {
        Var x = b(ParamId{0});
        return mul(x, square(x));
      },
      store, 1e-5);
  CHECK(report.analytic == doctest::Approx(12.0).epsilon(1e-12));
  CHECK(report.max_rel_error < 1e-8);
}

TEST_CASE("finite_diff_check on a constant") {
  ParameterStore store;
  store.add("x", Tensor::Constant(1, 2, 1.5));
  auto report = finite_diff_check(
      [](Binding& b) { return b.tape().constant(Tensor::Constant(1, 1, 4.0)); }, store);
  CHECK(report.max_rel_error == 0.0);
  CHECK(report.analytic == 0.0);
  CHECK(report.numeric == 0.0);
}

}  // TEST_SUITE
