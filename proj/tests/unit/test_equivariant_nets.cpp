#include <doctest.h>

#include <cmath>

#include "scalegmn/equivariant.hpp"

using namespace scalegmn;

namespace {

// Multiplier per row, drawn from the group.
Eigen::VectorXd draw_q(GroupKind g, Index n, Rng& rng) {
  Eigen::VectorXd q(n);
  std::uniform_real_distribution<double> pos(0.1, 10.0);
  std::bernoulli_distribution coin(0.5);
  for (Index i = 0; i < n; ++i) q[i] = g == GroupKind::Positive ? pos(rng) : (coin(rng) ? 1.0 : -1.0);
  return q;
}

Tensor scale_rows(const Tensor& x, const Eigen::VectorXd& q) { return q.asDiagonal() * x; }

double rel_dev(const Tensor& got, const Tensor& want) {
  const double s = want.cwiseAbs().maxCoeff();
  return (got - want).cwiseAbs().maxCoeff() / (s + 1e-300);
}

template <typename F>
Tensor run(const ParameterStore& store, F&& f) {
  Tape tape;
  Binding b(tape, store);
  return f(b, tape).value();
}

void set_constant_rho(ParameterStore& store, const Mlp& rho, double value) {
  const Linear& last = rho.layers().back();
  store.value(last.weight()).setZero();
  store.value(*last.bias()).setConstant(value);
}

const MlpShape kShape{{16}, false};
const MlpShape kShapeLn{{16, 16}, true};

struct GroupCase {
  GroupKind group;
  CanonMode mode;
};
const GroupCase kCases[] = {{GroupKind::Sign, CanonMode::SignSymmetrize},
                            {GroupKind::Sign, CanonMode::SignAbs},
                            {GroupKind::Positive, CanonMode::NormDivide}};

}  // namespace

TEST_SUITE("equivariant_nets") {

TEST_CASE("norm-divide canonicalisation") {
  ParameterStore store;
  Rng rng(1);
  Canonicalizer c(store, "c", 2, CanonMode::NormDivide, 0, kShape, rng);
  Tensor x(3, 2);
  x << 3, 4, 6, 8, 0, 0;
  Tensor y = run(store, [&](Binding& b, Tape& t) { return c(b, t.constant(x)); });
  CHECK(y(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(y(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK((y.row(1) - y.row(0)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(y(2, 0) == 0.0);
  CHECK(y(2, 1) == 0.0);
}

TEST_CASE("sign-abs and identity canonicalisation") {
  ParameterStore store;
  Rng rng(2);
  Canonicalizer a(store, "a", 3, CanonMode::SignAbs, 0, kShape, rng);
  Canonicalizer id(store, "i", 3, CanonMode::Identity, 0, kShape, rng);
  Tensor x(1, 3);
  x << -1, 2, -3;
  Tensor ya = run(store, [&](Binding& b, Tape& t) { return a(b, t.constant(x)); });
  Tensor yi = run(store, [&](Binding& b, Tape& t) { return id(b, t.constant(x)); });
  CHECK((ya.array() == x.array().abs()).all());
  CHECK((yi.array() == x.array()).all());
}

TEST_CASE("symmetrising a linear map gives zero") {
  ParameterStore store;
  Rng rng(3);
  Canonicalizer c(store, "c", 4, CanonMode::SignSymmetrize, 3, MlpShape{{}, false}, rng);
  store.value(*c.symmetriser().layers().front().bias()).setZero();
  Tensor x = uniform_tensor(5, 4, -2, 2, rng);
  Tensor y = run(store, [&](Binding& b, Tape& t) { return c(b, t.constant(x)); });
  CHECK(y.cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("scale_inv invariance, randomized") {
  Rng rng(4);
  for (const auto& gc : kCases) {
    CAPTURE(to_string(gc.mode));
    ParameterStore store;
    ScaleInvNet net(store, "inv", {{3, gc.mode}, {2, gc.mode}}, 2, 5, kShapeLn, 4, rng);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      Tensor x1 = uniform_tensor(4, 3, -1, 1, rng);
      Tensor x2 = uniform_tensor(4, 2, -1, 1, rng);
      Tensor p = uniform_tensor(4, 2, -1, 1, rng);
      Tensor x1q = scale_rows(x1, draw_q(gc.group, 4, rng));
      Tensor x2q = scale_rows(x2, draw_q(gc.group, 4, rng));
      auto eval = [&](const Tensor& a, const Tensor& c) {
        return run(store, [&](Binding& b, Tape& tp) {
          std::vector<Var> xs{tp.constant(a), tp.constant(c)};
          return net(b, xs, tp.constant(p));
        });
      };
      worst = std::max(worst, rel_dev(eval(x1q, x2q), eval(x1, x2)));
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("constant rho gives a constant") {
  Rng rng(5);
  ParameterStore store;
  ScaleInvNet net(store, "inv", {{3, CanonMode::NormDivide}}, 0, 2, kShape, 0, rng);
  set_constant_rho(store, net.rho(), 0.7);
  Tensor y = run(store, [&](Binding& b, Tape& t) {
    std::vector<Var> xs{t.constant(uniform_tensor(6, 3, -5, 5, rng))};
    return net(b, xs);
  });
  CHECK((y.array() == 0.7).all());
}

TEST_CASE("sign-symmetrised scale_inv matches the explicit two-term sum") {
  Rng rng(6);
  ParameterStore store;
  ScaleInvNet net(store, "inv", {{3, CanonMode::SignSymmetrize}}, 0, 2, kShape, 4, rng);
  auto dense = [&](const Mlp& m) {
    std::vector<DenseLayer> out;
    for (const auto& l : m.layers()) out.push_back({store.value(l.weight()), store.value(*l.bias())});
    return out;
  };
  const auto symm = dense(net.canonicalizers()[0].symmetriser());
  const auto rho = dense(net.rho());
  for (int t = 0; t < 20; ++t) {
    Tensor x = uniform_tensor(5, 3, -2, 2, rng);
    const Tensor s = mlp_forward(symm, ActivationDescriptor::silu(), x) +
                     mlp_forward(symm, ActivationDescriptor::silu(), Tensor(-x));
    const Tensor want = mlp_forward(rho, ActivationDescriptor::silu(), s);
    Tensor got = run(store, [&](Binding& b, Tape& tp) {
      std::vector<Var> xs{tp.constant(x)};
      return net(b, xs);
    });
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("scale_eq with identity gamma and unit invariant block is the identity") {
  Rng rng(7);
  ParameterStore store;
  ScaleEqNet net(store, "eq", {{3, CanonMode::NormDivide}}, 0, {3}, 1, kShape, 0, rng);
  store.value(net.layers()[0].gammas()[0].weight()) = Tensor::Identity(3, 3);
  set_constant_rho(store, net.layers()[0].invariant().rho(), 1.0);
  Tensor x = uniform_tensor(4, 3, -1, 1, rng);
  Tensor y = run(store, [&](Binding& b, Tape& t) { return net(b, t.constant(x)); });
  CHECK((y.array() == x.array()).all());
}

TEST_CASE("scale_eq equivariance, randomized") {
  Rng rng(8);
  for (const auto& gc : kCases) {
    for (int K : {1, 2}) {
      CAPTURE(to_string(gc.mode));
      CAPTURE(K);
      ParameterStore store;
      ScaleEqNet net(store, "eq", {{3, gc.mode}, {2, gc.mode}}, 0, {4, 3}, K, kShapeLn, 4, rng);
      double worst = 0.0;
      for (int t = 0; t < 100; ++t) {
        Tensor x1 = uniform_tensor(4, 3, -1, 1, rng);
        Tensor x2 = uniform_tensor(4, 2, -1, 1, rng);
        Eigen::VectorXd q1 = draw_q(gc.group, 4, rng);
        Eigen::VectorXd q2 = draw_q(gc.group, 4, rng);
        auto eval = [&](const Tensor& a, const Tensor& c) {
          Tape tp;
          Binding b(tp, store);
          std::vector<Var> xs{tp.constant(a), tp.constant(c)};
          auto out = net(b, xs);
          return std::make_pair(out[0].value(), out[1].value());
        };
        auto [y1, y2] = eval(x1, x2);
        auto [z1, z2] = eval(scale_rows(x1, q1), scale_rows(x2, q2));
        worst = std::max({worst, rel_dev(z1, scale_rows(y1, q1)), rel_dev(z2, scale_rows(y2, q2))});
      }
      CHECK(worst < 1e-10);
    }
  }
}

TEST_CASE("sign group: f(-x) = -f(x)") {
  Rng rng(9);
  ParameterStore store;
  ScaleEqNet net(store, "eq", {{5, CanonMode::SignSymmetrize}}, 0, {4}, 1, kShape, 4, rng);
  for (int t = 0; t < 100; ++t) {
    Tensor x = uniform_tensor(3, 5, -1, 1, rng);
    Tensor a = run(store, [&](Binding& b, Tape& tp) { return net(b, tp.constant(x)); });
    Tensor c = run(store, [&](Binding& b, Tape& tp) { return net(b, tp.constant(Tensor(-x))); });
    CHECK((a + c).cwiseAbs().maxCoeff() <= 1e-10 * a.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("hadamard rescale with identity gammas") {
  Rng rng(10);
  ParameterStore store;
  ReScaleEqNet g(store, "g", RescaleVariant::Hadamard, {3, 3}, 3, CanonMode::NormDivide, kShape, 0, rng);
  for (const auto& lin : g.gammas()) store.value(lin.weight()) = Tensor::Identity(3, 3);
  Tensor y = uniform_tensor(4, 3, -1, 1, rng);
  Tensor e = uniform_tensor(4, 3, -1, 1, rng);
  auto eval = [&](const Tensor& a, const Tensor& c) {
    return run(store, [&](Binding& b, Tape& t) {
      std::vector<Var> xs{t.constant(a), t.constant(c)};
      return g(b, xs);
    });
  };
  CHECK((eval(y, e).array() == (y.array() * e.array())).all());
  Eigen::VectorXd qx = draw_q(GroupKind::Positive, 4, rng);
  Eigen::VectorXd qy = draw_q(GroupKind::Positive, 4, rng);
  Tensor lhs = eval(scale_rows(y, qy), scale_rows(e, qx.cwiseQuotient(qy)));
  CHECK(rel_dev(lhs, scale_rows(eval(y, e), qx)) < 1e-14);
  // zero edge feature contributes nothing
  CHECK(eval(y, Tensor::Zero(4, 3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("outer product shape") {
  Tape t;
  Tensor a(1, 2), c(1, 3);
  a << 1, 2;
  c << 3, 4, 5;
  Tensor o = outer_rows(t.constant(a), t.constant(c)).value();
  CHECK(o.cols() == 6);
  CHECK(o(0, 0) == 3);
  CHECK(o(0, 5) == 10);
  CHECK(o(0, 3) == 6);
}

TEST_CASE("rescale equivariance, randomized") {
  Rng rng(11);
  for (const auto& gc : kCases) {
    for (auto variant : {RescaleVariant::Hadamard, RescaleVariant::Outer}) {
      CAPTURE(to_string(gc.mode));
      ParameterStore store;
      ReScaleEqNet g(store, "g", variant, {2, 3}, 4, gc.mode, kShapeLn, 4, rng);
      double worst = 0.0;
      for (int t = 0; t < 100; ++t) {
        Tensor x1 = uniform_tensor(5, 2, -1, 1, rng);
        Tensor x2 = uniform_tensor(5, 3, -1, 1, rng);
        Eigen::VectorXd q1 = draw_q(gc.group, 5, rng);
        Eigen::VectorXd q2 = draw_q(gc.group, 5, rng);
        auto eval = [&](const Tensor& a, const Tensor& c) {
          return run(store, [&](Binding& b, Tape& tp) {
            std::vector<Var> xs{tp.constant(a), tp.constant(c)};
            return g(b, xs);
          });
        };
        Tensor want = scale_rows(eval(x1, x2), q1.cwiseProduct(q2));
        worst = std::max(worst, rel_dev(eval(scale_rows(x1, q1), scale_rows(x2, q2)), want));
      }
      CHECK(worst < 1e-10);
    }
  }
}

TEST_CASE("outer rescale reduces to hadamard on the diagonal") {
  Rng rng(12);
  const Index d = 3;
  ParameterStore hs, os;
  ReScaleEqNet h(hs, "h", RescaleVariant::Hadamard, {d, d}, d, CanonMode::NormDivide, kShape, 0, rng);
  for (const auto& lin : h.gammas()) hs.value(lin.weight()) = Tensor::Identity(d, d);
  ReScaleEqNet o(os, "o", RescaleVariant::Outer, {d, d}, d, CanonMode::NormDivide, kShape, 0, rng);
  const ScaleEqLayer& layer = o.outer_net().layers()[0];
  Tensor select = Tensor::Zero(d, d * d);
  for (Index i = 0; i < d; ++i) select(i, i * d + i) = 1.0;
  os.value(layer.gammas()[0].weight()) = select;
  set_constant_rho(os, layer.invariant().rho(), 1.0);
  for (int t = 0; t < 10; ++t) {
    Tensor a = uniform_tensor(4, d, -1, 1, rng);
    Tensor c = uniform_tensor(4, d, -1, 1, rng);
    auto eval = [&](const ParameterStore& s, const ReScaleEqNet& g) {
      return run(s, [&](Binding& b, Tape& tp) {
        std::vector<Var> xs{tp.constant(a), tp.constant(c)};
        return g(b, xs);
      });
    };
    CHECK((eval(hs, h) - eval(os, o)).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("augmented scale_eq: equivariant in x, sensitive to p") {
  Rng rng(13);
  for (const auto& gc : kCases) {
    CAPTURE(to_string(gc.mode));
    ParameterStore store;
    ScaleEqNet net(store, "aug", {{3, gc.mode}}, 4, {5}, 1, kShapeLn, 4, rng);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      Tensor x = uniform_tensor(4, 3, -1, 1, rng);
      Tensor p = uniform_tensor(4, 4, -1, 1, rng);
      Eigen::VectorXd q = draw_q(gc.group, 4, rng);
      auto eval = [&](const Tensor& a, const Tensor& pp) {
        return run(store, [&](Binding& b, Tape& tp) { return net(b, tp.constant(a), tp.constant(pp)); });
      };
      worst = std::max(worst, rel_dev(eval(scale_rows(x, q), p), scale_rows(eval(x, p), q)));
      if (t == 0) {
        Tensor p2 = uniform_tensor(4, 4, -1, 1, rng);
        CHECK((eval(x, p) - eval(x, p2)).cwiseAbs().maxCoeff() > 1e-6);
      }
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("zero-width p is plain scale_eq") {
  ParameterStore s1, s2;
  Rng r1(14), r2(14);
  ScaleEqNet a(s1, "n", {{3, CanonMode::NormDivide}}, 0, {2}, 1, kShape, 0, r1);
  ScaleEqNet c(s2, "n", {{3, CanonMode::NormDivide}}, 0, {2}, 1, kShape, 0, r2);
  Rng rng(15);
  Tensor x = uniform_tensor(3, 3, -1, 1, rng);
  Tensor ya = run(s1, [&](Binding& b, Tape& t) { return a(b, t.constant(x)); });
  Tensor yc = run(s2, [&](Binding& b, Tape& t) { return c(b, t.constant(x), std::nullopt); });
  CHECK((ya.array() == yc.array()).all());
  CHECK_THROWS_AS(run(s1, [&](Binding& b, Tape& t) {
                    std::vector<Var> xs{t.constant(x), t.constant(x)};
                    return a(b, xs).front();
                  }),
                  ShapeError);
}

}  // TEST_SUITE
