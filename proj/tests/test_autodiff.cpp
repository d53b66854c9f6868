#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gradxkg/autodiff.hpp"
#include "gradxkg/rng.hpp"

using namespace gradxkg;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

// Independent oracle: c_ij = sum_k a_ik b_kj by explicit triple loop.
Tensor triple_loop_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      c.at(i, j) = acc;
    }
  return c;
}

}  // namespace

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Tape tape;
  Var i2 = tape.constant(Tensor::identity(2));
  Var m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(matmul(i2, m).value(), Tensor::matrix({{1, 2}, {3, 4}}));
}

TEST(Matmul, Projector) {
  Tape tape;
  Var p = tape.constant(Tensor::matrix({{1, 0}, {0, 0}}));
  Var v = tape.constant(Tensor::matrix({{5}, {7}}));
  EXPECT_EQ(matmul(p, v).value(), Tensor::matrix({{5}, {0}}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng = make_rng(11, "test/matmul");
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    EXPECT_LT(max_abs_diff(matmul(tape.constant(a), tape.constant(b)).value(), triple_loop_matmul(a, b)), 1e-14);
  }
}

TEST(Matmul, ShapeMismatchThrows) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 3}));
  EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(Ewise, Definitions) {
  Tape tape;
  Var x = tape.constant(Tensor::row({-1, 0, 2}));
  EXPECT_EQ(ewise(EwiseKind::relu, x).value(), Tensor::row({0, 0, 2}));
  EXPECT_DOUBLE_EQ(ewise(EwiseKind::sigmoid, tape.constant(Tensor::row({0}))).value().item(), 0.5);
  EXPECT_EQ(ewise(EwiseKind::add, x, std::nullopt, 0.0).value(), x.value());
  EXPECT_EQ(ewise(EwiseKind::scale, x, std::nullopt, 2.0).value(), Tensor::row({-2, 0, 4}));
  EXPECT_EQ(ewise(EwiseKind::mul, x, x).value(), Tensor::row({1, 0, 4}));
}

TEST(Ewise, BinaryShapeMismatchThrows) {
  Tape tape;
  Var a = tape.constant(Tensor::row({1, 2}));
  Var b = tape.constant(Tensor::row({1, 2, 3}));
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(ewise(EwiseKind::mul, a), DimensionError);
}

TEST(Ewise, NonFiniteOutputIsAnError) {
  Tape tape;
  Var a = tape.constant(Tensor::row({1e308}));
  EXPECT_THROW(scale(a, 10.0), NumericError);
  EXPECT_THROW(tape.constant(Tensor::row({std::nan("")})), NumericError);
}

TEST(Reduce, MeanAndSum) {
  Tape tape;
  EXPECT_DOUBLE_EQ(mean(tape.constant(Tensor::matrix({{2, 4}}))).value().item(), 3.0);
  EXPECT_EQ(sum(tape.constant(Tensor::matrix({{1, 2}, {3, 4}})), 0).value(), Tensor::matrix({{4, 6}}));
  EXPECT_THROW(sum(tape.constant(Tensor::matrix({{1, 2}})), 2), DimensionError);
}

TEST(Reduce, MeanAlongAxisMatchesLoopOracle) {
  Rng rng = make_rng(5, "test/reduce");
  const Tensor x = random_tensor({5, 3}, rng);
  Tape tape;
  const Tensor got = mean(tape.constant(x), 0).value();
  ASSERT_EQ(got.shape(), (Shape{1, 3}));
  for (std::size_t j = 0; j < 3; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 5; ++i) acc += x.at(i, j);
    EXPECT_NEAR(got[j], acc / 5.0, 1e-15);
  }
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Var x = tape.variable(Tensor({2, 3}, 0.7));
  tape.backward(sum(x));
  EXPECT_EQ(tape.grad(x), Tensor::ones({2, 3}));
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var x = tape.variable(Tensor::row({1, 2, 3}));
  tape.backward(sum(mul(x, x)));
  EXPECT_EQ(tape.grad(x), Tensor::row({2, 4, 6}));
}

TEST(Backward, SigmoidOfDotMatchesFiniteDifferences) {
  Rng rng = make_rng(3, "test/sigdot");
  const Tensor w = random_tensor({1, 4}, rng);
  const TapedScalarFn f = [&](Tape& t, Var x) { return sum(sigmoid(matmul(t.constant(w), x))); };
  EXPECT_LT(finite_diff_check(f, random_tensor({4, 1}, rng)), 1e-6);
}

TEST(Backward, RequiresScalarRootOnThisTape) {
  Tape tape, other;
  Var x = tape.variable(Tensor::row({1, 2}));
  EXPECT_THROW(tape.backward(x), DimensionError);
  Var y = other.variable(Tensor::scalar(1));
  EXPECT_THROW(tape.backward(y), DimensionError);
}

TEST(Backward, TapeIsConsumed) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(2));
  Var s = mul(x, x);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), std::logic_error);
  EXPECT_THROW(mul(x, x), std::logic_error);
  tape.reset();
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Backward, UnreachableNodesGetZeroGradient) {
  Tape tape;
  Var x = tape.variable(Tensor::row({1, 2}));
  Var unused = tape.variable(Tensor::row({3, 4}));
  tape.backward(sum(x));
  EXPECT_FALSE(tape.has_grad_entry(unused));
  EXPECT_EQ(tape.grad(unused), Tensor::row({0, 0}));
}

TEST(Backward, ReluSubgradientAtZeroIsZero) {
  Tape tape;
  Var x = tape.variable(Tensor::row({-1, 0, 1}));
  tape.backward(sum(relu(x)));
  EXPECT_EQ(tape.grad(x), Tensor::row({0, 0, 1}));
}

TEST(Backward, AliasedLeafSharesSourceGradientWithoutPropagating) {
  Tape tape;
  Var x = tape.variable(Tensor::row({1, 2}));
  Var y = scale(x, 3.0);
  Var view = tape.variable(Tensor::row({0, 0}));
  tape.alias_gradient(view, y);
  tape.backward(sum(mul(y, y)));
  EXPECT_EQ(tape.grad(view), Tensor::row({6, 12}));
  EXPECT_EQ(tape.grad(x), Tensor::row({18, 36}));
}

TEST(FiniteDiffCheck, SumIsExact) {
  Rng rng = make_rng(9, "test/fd-sum");
  const TapedScalarFn f = [](Tape&, Var x) { return sum(x); };
  EXPECT_LT(finite_diff_check(f, random_tensor({3, 3}, rng)), 1e-10);
}

TEST(FiniteDiffCheck, SumOfSquares) {
  Rng rng = make_rng(10, "test/fd-sq");
  const TapedScalarFn f = [](Tape&, Var x) { return sum(mul(x, x)); };
  EXPECT_LT(finite_diff_check(f, random_tensor({4, 2}, rng), 1e-5), 1e-7);
}

TEST(FiniteDiffCheck, NonFiniteFunctionThrows) {
  const TapedScalarFn f = [](Tape&, Var x) { return sum(scale(x, 1e308)); };
  EXPECT_THROW(finite_diff_check(f, Tensor::row({10.0})), NumericError);
}

// Every primitive, 100 seeds: analytic vs central differences (eps 1e-5).
TEST(Properties, PrimitiveGradientsMatchFiniteDifferences) {
  using Builder = std::function<Var(Tape&, Var, const Tensor&, const Tensor&)>;
  const std::vector<std::pair<std::string, Builder>> primitives = {
      {"matmul_lhs", [](Tape& t, Var x, const Tensor& a, const Tensor&) { return matmul(x, t.constant(a)); }},
      {"matmul_rhs", [](Tape& t, Var x, const Tensor& a, const Tensor&) {
         return matmul(t.constant(a.reshaped({a.cols(), a.rows()})), reshape(x, {a.rows(), a.rows()}));
       }},
      {"add", [](Tape& t, Var x, const Tensor&, const Tensor& b) { return add(x, t.constant(b)); }},
      {"sub", [](Tape& t, Var x, const Tensor&, const Tensor& b) { return sub(t.constant(b), x); }},
      {"mul", [](Tape& t, Var x, const Tensor&, const Tensor& b) { return mul(x, t.constant(b)); }},
      {"relu", [](Tape&, Var x, const Tensor&, const Tensor&) { return relu(x); }},
      {"sigmoid", [](Tape&, Var x, const Tensor&, const Tensor&) { return sigmoid(x); }},
      {"tanh", [](Tape&, Var x, const Tensor&, const Tensor&) { return tanh(x); }},
      {"softplus", [](Tape&, Var x, const Tensor&, const Tensor&) { return softplus(x); }},
      {"scale", [](Tape&, Var x, const Tensor&, const Tensor&) { return scale(x, -1.7); }},
      {"shift", [](Tape&, Var x, const Tensor&, const Tensor&) { return shift(x, 0.3); }},
      {"scale_by", [](Tape&, Var x, const Tensor&, const Tensor&) {
         return scale_by(x, reshape(sum(mul(x, x)), {1, 1}));
       }},
      {"sum_axis0", [](Tape&, Var x, const Tensor&, const Tensor&) { return sum(x, 0); }},
      {"mean_axis1", [](Tape&, Var x, const Tensor&, const Tensor&) { return mean(x, 1); }},
      {"mean_all", [](Tape&, Var x, const Tensor&, const Tensor&) { return mean(x); }},
  };
  for (const auto& [name, build] : primitives) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng = make_rng(seed, "test/primitive/" + name);
      const Tensor x0 = random_tensor({3, 3}, rng);
      const Tensor a = random_tensor({3, 3}, rng);
      const Tensor b = random_tensor({3, 3}, rng);
      // Contract the op output against random weights so every coordinate matters.
      const TapedScalarFn f = [&](Tape& t, Var x) {
        Var y = build(t, x, a, b);
        Rng wr = make_rng(seed, "test/primitive/weights");
        return sum(mul(y, t.constant(random_tensor(y.shape(), wr))));
      };
      worst = std::max(worst, finite_diff_check(f, x0, 1e-5));
    }
    EXPECT_LT(worst, 1e-6) << name;
  }
}

TEST(Properties, BackwardIsLinear) {
  Rng rng = make_rng(21, "test/linearity");
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x0 = random_tensor({3, 2}, rng), w = random_tensor({2, 2}, rng);
    const double alpha = uniform(rng, -2, 2), beta = uniform(rng, -2, 2);
    const auto s1 = [&](Tape& t, Var x) { return sum(sigmoid(matmul(x, t.constant(w)))); };
    const auto s2 = [&](Tape&, Var x) { return sum(mul(tanh(x), x)); };
    const auto grad_of = [&](const std::function<Var(Tape&, Var)>& f) {
      Tape t;
      Var x = t.variable(x0);
      t.backward(f(t, x));
      return t.grad(x);
    };
    const Tensor g1 = grad_of(s1), g2 = grad_of(s2);
    const Tensor g = grad_of([&](Tape& t, Var x) { return add(scale(s1(t, x), alpha), scale(s2(t, x), beta)); });
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], alpha * g1[i] + beta * g2[i], 1e-10);
  }
}

TEST(Properties, TapingIsDeterministic) {
  const auto run = [] {
    Rng rng = make_rng(77, "test/determinism");
    const Tensor x0 = random_tensor({4, 4}, rng), w = random_tensor({4, 4}, rng);
    Tape t;
    Var x = t.variable(x0);
    Var s = mean(relu(matmul(sigmoid(matmul(x, t.constant(w))), x)));
    t.backward(s);
    return std::make_pair(s.value(), t.grad(x));
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Properties, TopologicalOrder) {
  Tape tape;
  Var x = tape.variable(Tensor::row({1, 2}));
  Var y = sigmoid(add(x, x));
  Var z = sum(mul(y, x));
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const auto& n = tape.node(Var{&tape, i});
    if (n.lhs != Tape::npos) {
      EXPECT_LT(n.lhs, i);
    }
    if (n.rhs != Tape::npos) {
      EXPECT_LT(n.rhs, i);
    }
  }
  tape.backward(z);
  EXPECT_EQ(tape.grad(y).shape(), y.shape());
}
