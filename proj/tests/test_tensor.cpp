#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "saintplus/errors.hpp"
#include "saintplus/grad_check.hpp"
#include "saintplus/tensor.hpp"

using namespace saintplus;
using namespace saintplus::tensor;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  CounterRng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

std::vector<double> values_of(Var v) { return {v.value().begin(), v.value().end()}; }

// Reduces any output to a scalar with fixed random weights so every output
// element contributes a distinct gradient.
Var weighted_sum(Var out, std::uint64_t seed) {
  auto w = random_tensor(out.shape(), seed);
  return sum(mul(out, out.graph().constant(std::move(w))));
}

double check(const ScalarFunction& f, std::vector<Tensor> inputs) {
  return grad_check(f, inputs).max_rel_error;
}

}  // namespace

TEST_CASE("matmul") {
  Graph g;
  SUBCASE("identity") {
    const auto i2 = g.constant(Tensor::matrix({{1, 0}, {0, 1}}));
    const auto m = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
    CHECK(values_of(matmul(i2, m)) == std::vector<double>{1, 2, 3, 4});
  }
  SUBCASE("unit selection") {
    const auto a = g.constant(Tensor::matrix({{1, 0}}));
    const auto b = g.constant(Tensor::matrix({{2}, {5}}));
    const auto c = matmul(a, b);
    CHECK(c.shape() == Shape{1, 1});
    CHECK(c.value()[0] == 2.0);
  }
  SUBCASE("triple loop oracle") {
    const auto a = random_tensor({3, 4}, 1);
    const auto b = random_tensor({4, 2}, 2);
    const auto c = matmul(g.constant(a), g.constant(b));
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
        CHECK(std::abs(c.value()[i * 2 + j] - s) < 1e-12);
      }
    }
  }
  SUBCASE("matmul_nt agrees with explicit transpose") {
    const auto a = g.constant(random_tensor({5, 3}, 3));
    const auto b = g.constant(random_tensor({4, 3}, 4));
    const auto x = values_of(matmul_nt(a, b));
    const auto y = values_of(matmul(a, transpose(b)));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - y[i]) < 1e-14);
  }
  SUBCASE("shape mismatch names both shapes") {
    const auto a = g.constant(Tensor({2, 3}));
    const auto b = g.constant(Tensor({2, 3}));
    try {
      matmul(a, b);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
      CHECK(msg.find("[2x3]") != msg.rfind("[2x3]"));
    }
  }
  SUBCASE("identity associativity is bit-exact") {
    const auto a = random_tensor({4, 4}, 5);
    const auto b = random_tensor({4, 3}, 6);
    Tensor eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    const auto A = g.constant(a), B = g.constant(b), I = g.constant(eye);
    CHECK(values_of(matmul(matmul(A, I), B)) == values_of(matmul(A, matmul(I, B))));
  }
}

TEST_CASE("masked_softmax") {
  Graph g;
  SUBCASE("uniform logits under the causal mask") {
    const auto p = masked_softmax(g.constant(Tensor::matrix({{0, 0}, {0, 0}})), Mask::causal);
    CHECK(values_of(p) == std::vector<double>{1, 0, 0.5, 0.5});
  }
  SUBCASE("row 0 sees only itself") {
    const auto p = masked_softmax(g.constant(random_tensor({6, 6}, 7, -5, 5)), Mask::causal);
    CHECK(p.value()[0] == 1.0);
    for (std::size_t j = 1; j < 6; ++j) CHECK(p.value()[j] == 0.0);
  }
  SUBCASE("extended precision oracle") {
    const auto x = random_tensor({5, 5}, 8, -3, 3);
    const auto p = masked_softmax(g.constant(x), Mask::causal);
    for (std::size_t i = 0; i < 5; ++i) {
      long double denom = 0;
      for (std::size_t j = 0; j <= i; ++j) denom += std::exp(static_cast<long double>(x.at(i, j)));
      for (std::size_t j = 0; j < 5; ++j) {
        const long double want = j <= i ? std::exp(static_cast<long double>(x.at(i, j))) / denom : 0.0L;
        CHECK(std::abs(static_cast<long double>(p.value()[i * 5 + j]) - want) < 1e-12L);
      }
    }
  }
  SUBCASE("rows sum to one and the upper triangle is exactly zero") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const std::size_t n = 1 + s % 9;
      const auto p = masked_softmax(g.constant(random_tensor({n, n}, 100 + s, -30, 30)), Mask::causal);
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < n; ++j) {
          row += p.value()[i * n + j];
          if (j > i) CHECK(p.value()[i * n + j] == 0.0);
        }
        CHECK(std::abs(row - 1.0) < 1e-12);
      }
    }
  }
}

TEST_CASE("layer_norm") {
  Graph g;
  const auto ones = g.constant(Tensor::vector({1, 1, 1}));
  const auto zeros = g.constant(Tensor::vector({0, 0, 0}));
  SUBCASE("zero variance collapses to beta") {
    const auto y = layer_norm(g.constant(Tensor::matrix({{4, 4, 4}})), ones, zeros, 1e-5);
    for (const double v : y.value()) CHECK(v == 0.0);
  }
  SUBCASE("closed form recomputation") {
    const auto y = layer_norm(g.constant(Tensor::matrix({{1, 2, 3}})), ones, zeros, 0.0);
    const double mean = 2.0, sd = std::sqrt(((1 - mean) * (1 - mean) + (3 - mean) * (3 - mean)) / 3.0);
    CHECK(y.value()[0] == doctest::Approx((1 - mean) / sd).epsilon(1e-12));
    CHECK(y.value()[1] == doctest::Approx(0.0));
    CHECK(y.value()[2] == doctest::Approx((3 - mean) / sd).epsilon(1e-12));
    CHECK(y.value()[2] == doctest::Approx(1.22474).epsilon(1e-5));
  }
  SUBCASE("affine only") {
    const auto y = layer_norm(g.constant(random_tensor({2, 3}, 9)), zeros,
                              g.constant(Tensor::vector({5, 5, 5})), 1e-5);
    for (const double v : y.value()) CHECK(v == 5.0);
  }
  SUBCASE("normalized rows have zero mean and unit variance") {
    const auto x = random_tensor({4, 16}, 10, -4, 9);
    Graph h;
    const auto y = layer_norm(h.constant(x), h.constant(Tensor({16}, 1.0)), h.constant(Tensor({16})), 0.0);
    for (std::size_t r = 0; r < 4; ++r) {
      double m = 0, v = 0;
      for (std::size_t c = 0; c < 16; ++c) m += y.value()[r * 16 + c];
      m /= 16;
      for (std::size_t c = 0; c < 16; ++c) v += std::pow(y.value()[r * 16 + c] - m, 2);
      CHECK(std::abs(m) < 1e-12);
      CHECK(std::abs(v / 16 - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("relu") {
  Graph g;
  SUBCASE("elementwise") {
    CHECK(values_of(relu(g.constant(Tensor::vector({-1, 0, 2})))) == std::vector<double>{0, 0, 2});
  }
  SUBCASE("all negative input has zero output and zero gradient") {
    const auto x = g.variable(random_tensor({3, 3}, 11, -2, -0.1));
    const auto y = relu(x);
    g.backward(sum(y));
    for (const double v : y.value()) CHECK(v == 0.0);
    for (const double d : x.grad()) CHECK(d == 0.0);
  }
  SUBCASE("gradient at zero is zero") {
    const auto x = g.variable(Tensor::vector({0.0, 1.0}));
    g.backward(sum(relu(x)));
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
  }
  SUBCASE("elementwise oracle") {
    const auto x = random_tensor({5, 7}, 12);
    const auto y = relu(g.constant(x));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == (x[i] > 0 ? x[i] : 0.0));
  }
}

TEST_CASE("sigmoid") {
  Graph g;
  CHECK(sigmoid(g.constant(Tensor::vector({0}))).value()[0] == 0.5);
  const auto x = random_tensor({50}, 13, -40, 40);
  Tensor neg = x;
  for (auto& v : neg.values()) v = -v;
  const auto a = sigmoid(g.constant(x)), b = sigmoid(g.constant(neg));
  for (std::size_t i = 0; i < 50; ++i) CHECK(std::abs(a.value()[i] + b.value()[i] - 1.0) < 1e-12);
  const auto big = sigmoid(g.constant(Tensor::vector({50, -50, 700, -700})));
  CHECK(std::abs(big.value()[0] - 1.0) < 1e-15);
  CHECK(std::abs(big.value()[1] - 0.0) < 1e-15);
  CHECK(big.value()[1] == doctest::Approx(std::exp(-50.0) / (1 + std::exp(-50.0))).epsilon(1e-12));
  CHECK(std::isfinite(big.value()[2]));
  CHECK(std::isfinite(big.value()[3]));
}

TEST_CASE("embedding") {
  Graph g;
  const auto table_t = Tensor::matrix({{1, 2}, {3, 4}});
  SUBCASE("single gather") {
    const std::vector<std::int64_t> ids{0};
    CHECK(values_of(embedding(g.constant(table_t), ids)) == std::vector<double>{1, 2});
  }
  SUBCASE("repeated ids accumulate") {
    const auto table = g.variable(table_t);
    const std::vector<std::int64_t> ids{1, 1};
    const auto rows = embedding(table, ids);
    const auto gup = g.constant(Tensor::matrix({{0.5, -1}, {0.5, -1}}));
    g.backward(sum(mul(rows, gup)));
    CHECK(std::vector<double>(table.grad().begin(), table.grad().end()) ==
          std::vector<double>{0, 0, 1.0, -2.0});
  }
  SUBCASE("loop oracle") {
    const auto t = random_tensor({7, 3}, 14);
    std::vector<std::int64_t> ids;
    CounterRng rng(15);
    for (int i = 0; i < 12; ++i) ids.push_back(static_cast<std::int64_t>(rng.below(7)));
    const auto out = embedding(g.constant(t), ids);
    for (std::size_t r = 0; r < ids.size(); ++r)
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(out.value()[r * 3 + c] == t.at(static_cast<std::size_t>(ids[r]), c));
  }
  SUBCASE("out of range id names the id and the row count") {
    const std::vector<std::int64_t> ids{0, 5};
    try {
      embedding(g.constant(table_t), ids);
      FAIL("expected IndexError");
    } catch (const IndexError& e) {
      const std::string msg = e.what();
      CHECK(msg.find('5') != std::string::npos);
      CHECK(msg.find('2') != std::string::npos);
    }
  }
}

TEST_CASE("backward") {
  SUBCASE("sum gives all ones") {
    Graph g;
    const auto x = g.variable(random_tensor({2, 3, 2}, 16));
    g.backward(sum(x));
    for (const double d : x.grad()) CHECK(d == 1.0);
  }
  SUBCASE("quadratic gives 2x") {
    Graph g;
    const auto t = random_tensor({4, 2}, 17);
    const auto x = g.variable(t);
    g.backward(sum(mul(x, x)));
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(x.grad()[i] == 2.0 * t[i]);
  }
  SUBCASE("non-scalar loss is rejected") {
    Graph g;
    const auto x = g.variable(Tensor({3}, 1.0));
    CHECK_THROWS_AS(g.backward(x), ContractError);
  }
  SUBCASE("graph is consumed") {
    Graph g;
    const auto x = g.variable(Tensor({3}, 1.0));
    const auto s = sum(x);
    g.backward(s);
    CHECK_THROWS_AS(g.backward(s), ContractError);
  }
  SUBCASE("accumulation over f + g equals separate passes") {
    const auto t = random_tensor({3, 4}, 18);
    // each term reaches x along a single path, so the sum is exact
    auto f = [](Var x) { return weighted_sum(sigmoid(x), 50); };
    auto h = [](Var x) { return weighted_sum(relu(x), 51); };
    Graph g1;
    const auto x1 = g1.variable(t);
    g1.backward(add(f(x1), h(x1)));
    Graph g2;
    const auto x2 = g2.variable(t);
    g2.backward(f(x2));
    Graph g3;
    const auto x3 = g3.variable(t);
    g3.backward(h(x3));
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(x1.grad()[i] == x2.grad()[i] + x3.grad()[i]);
  }
  SUBCASE("a tensor feeding several consumers accumulates") {
    Graph g;
    const auto x = g.variable(Tensor::vector({2.0}));
    g.backward(sum(add(add(x, x), scale(x, 3.0))));
    CHECK(x.grad()[0] == 5.0);
  }
}

TEST_CASE("grad_check") {
  SUBCASE("linear function") {
    const double err = grad_check([](Graph&, Var x) { return sum(x); }, random_tensor({4, 3}, 19));
    CHECK(err < 1e-10);
  }
  SUBCASE("composed matmul relu sum") {
    const std::vector<Tensor> in{random_tensor({3, 4}, 20), random_tensor({4, 5}, 21)};
    const double err = check([](Graph&, std::span<const Var> v) { return sum(relu(matmul(v[0], v[1]))); }, in);
    CHECK(err < 1e-6);
  }
  SUBCASE("ReLU input pinned at zero is excluded") {
    const Tensor x = Tensor::vector({0.0, 0.7, -0.4});
    const Tensor inputs[] = {x};
    const auto report = grad_check([](Graph&, std::span<const Var> v) { return sum(relu(v[0])); }, inputs);
    CHECK(report.excluded == 1);
    CHECK(report.checked == 2);
    CHECK(report.max_rel_error < 1e-10);
  }
  SUBCASE("corrupted backward is detected") {
    const std::vector<Tensor> in{random_tensor({3, 4}, 22), random_tensor({4, 2}, 23)};
    GradCheckOptions options;
    options.graph.corrupt_backward = true;
    const auto report =
        grad_check([](Graph&, std::span<const Var> v) { return weighted_sum(matmul(v[0], v[1]), 5); }, in, options);
    CHECK(report.max_rel_error > 1e-3);
    CHECK(report.worst_input == 1);
  }
}

TEST_CASE("every differentiable primitive matches central differences") {
  constexpr double kTol = 1e-6;
  auto f1 = [](auto op) {
    return [op](Graph&, std::span<const Var> v) { return weighted_sum(op(v[0]), 99); };
  };
  auto f2 = [](auto op) {
    return [op](Graph&, std::span<const Var> v) { return weighted_sum(op(v[0], v[1]), 98); };
  };
  for (const Shape& s : {Shape{5}, Shape{3, 4}, Shape{2, 3, 2}}) {
    CAPTURE(shape_string(s));
    const auto a = random_tensor(s, 30), b = random_tensor(s, 31);
    CHECK(check(f2([](Var x, Var y) { return add(x, y); }), {a, b}) < kTol);
    CHECK(check(f2([](Var x, Var y) { return sub(x, y); }), {a, b}) < kTol);
    CHECK(check(f2([](Var x, Var y) { return mul(x, y); }), {a, b}) < kTol);
    CHECK(check(f1([](Var x) { return scale(x, -1.7); }), {a}) < kTol);
    CHECK(check(f1([](Var x) { return sigmoid(x); }), {a}) < kTol);
    CHECK(check(f1([](Var x) { return relu(x); }), {a}) < kTol);
    CHECK(check([](Graph&, std::span<const Var> v) { return sum(v[0]); }, {a}) < kTol);
    const Tensor bias = random_tensor({s.back()}, 32);
    CHECK(check(f2([](Var x, Var y) { return add_bias(x, y); }), {a, bias}) < kTol);
    const Tensor gamma = random_tensor({s.back()}, 33), beta = random_tensor({s.back()}, 34);
    CHECK(check([](Graph&, std::span<const Var> v) { return weighted_sum(layer_norm(v[0], v[1], v[2], 1e-5), 97); },
                {a, gamma, beta}) < kTol);
    CHECK(check(f1([](Var x) { return reshape(x, {x.size()}); }), {a}) < kTol);
  }
  const auto m34 = random_tensor({3, 4}, 40), m45 = random_tensor({4, 5}, 41), m54 = random_tensor({5, 4}, 42);
  CHECK(check(f2([](Var x, Var y) { return matmul(x, y); }), {m34, m45}) < kTol);
  CHECK(check(f2([](Var x, Var y) { return matmul_nt(x, y); }), {m34, m54}) < kTol);
  CHECK(check(f1([](Var x) { return transpose(x); }), {m34}) < kTol);
  CHECK(check([](Graph&, std::span<const Var> v) { return weighted_sum(concat_cols(v), 96); },
              {m34, random_tensor({3, 2}, 43)}) < kTol);
  CHECK(check([](Graph&, std::span<const Var> v) { return weighted_sum(concat_rows(v), 95); },
              {m34, random_tensor({2, 4}, 44)}) < kTol);
  const auto sq = random_tensor({5, 5}, 45, -2, 2);
  CHECK(check(f1([](Var x) { return masked_softmax(x, Mask::causal); }), {sq}) < kTol);
  CHECK(check(f1([](Var x) { return masked_softmax(x, Mask::none); }), {sq}) < kTol);
  CHECK(check(f1([](Var t) {
                const std::vector<std::int64_t> ids{2, 0, 2, 1};
                return embedding(t, ids);
              }),
              {m34}) < kTol);
  CHECK(check(f1([](Var w) {
                const std::vector<double> coeffs{0.0, 1.5, -2.0};
                return scaled_rows(coeffs, w);
              }),
              {random_tensor({4}, 46)}) < kTol);
  CHECK(check(f1([](Var x) {
                CounterRng rng(77);
                return dropout(x, 0.3, rng);
              }),
              {m34}) < kTol);
  CHECK(check([](Graph&, std::span<const Var> v) {
                const std::vector<double> labels{1, 0, 1, 0, 1};
                const std::vector<double> weights{1, 1, 0, 1, 1};
                return weighted_bce(sigmoid(v[0]), labels, weights, 4.0);
              },
              {random_tensor({5}, 47, -2, 2)}) < kTol);
}

TEST_CASE("dropout") {
  Graph g;
  const auto x = g.constant(Tensor({1000}, 1.0));
  CounterRng a(3), b(3);
  CHECK(values_of(dropout(x, 0.25, a)) == values_of(dropout(x, 0.25, b)));
  CounterRng c(4);
  CHECK(dropout(x, 0.0, c).id() == x.id());
  CHECK_THROWS_AS(dropout(x, 1.0, c), ContractError);
}

TEST_CASE("Tensor") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK_FALSE(t.has_grad());
  t.grad()[1] = 2.0;
  CHECK(t.has_grad());
  t.zero_grad();
  CHECK(t.grad()[1] == 0.0);
  CHECK(element_count({}) == 1);
}
