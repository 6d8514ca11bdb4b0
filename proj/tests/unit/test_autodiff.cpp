#include <doctest.h>

#include <cmath>
#include <numeric>

#include "grad_check.hpp"
#include "resgcn/errors.hpp"
#include "resgcn/ops.hpp"

using namespace resgcn;
using resgcn::testing::gradient_check;
using resgcn::testing::probe;
using resgcn::testing::random_tensor;

TEST_CASE("tensor shape must match data length") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  const Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
}

TEST_CASE("matmul hand cases") {
  Tape tape;
  const Var i2 = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  const Var m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  CHECK(matmul(i2, m).value() == m.value());
  const Var a = tape.constant(Tensor::matrix({{1, 2}}));
  const Var b = tape.constant(Tensor::matrix({{3}, {4}}));
  CHECK(matmul(a, b).value().item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  const Var a = tape.constant(Tensor({2, 3}));
  const Var b = tape.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(1);
  const auto r = gradient_check([](Tape&, std::span<const Var> v) { return sum(matmul(v[0], v[1])); },
                                {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("relu forward, all-negative input and gradient") {
  Tape tape;
  const Var x = tape.leaf(Tensor::vector({-1, 0, 2}));
  const Var y = relu(x);
  CHECK(y.value() == Tensor::vector({0, 0, 2}));
  const GradMap g = tape.backward(sum(y));
  CHECK(g[x] == Tensor::vector({0, 0, 1}));

  Tape t2;
  const Var neg = t2.leaf(Tensor::vector({-3, -2, -0.5}));
  const Var out = relu(neg);
  CHECK(out.value() == Tensor::vector({0, 0, 0}));
  CHECK(t2.backward(sum(out))[neg] == Tensor::vector({0, 0, 0}));
}

TEST_CASE("relu gradient away from the kink") {
  Rng rng(2);
  Tensor x = random_tensor({4, 5}, rng);
  for (double& v : x.data()) {
    if (std::abs(v) < 1e-3) v = 0.5;
  }
  const Tensor w = random_tensor({4, 5}, rng);
  const auto r = gradient_check([&](Tape&, std::span<const Var> v) { return probe(relu(v[0]), w); }, {x});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("dropout modes") {
  Rng rng(3);
  Tape tape;
  const Var x = tape.leaf(random_tensor({5, 4}, rng));
  CHECK(dropout(x, 0.0, true, rng).value() == x.value());
  for (double p : {0.1, 0.5, 0.9}) CHECK(dropout(x, p, false, rng).value() == x.value());
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ConfigError);
  CHECK_THROWS_AS(dropout(x, -0.1, true, rng), ConfigError);

  const Var ones = tape.constant(Tensor({100000}, 1.0));
  const Tensor out = dropout(ones, 0.5, true, rng).value();
  const double mean = std::accumulate(out.data().begin(), out.data().end(), 0.0) / 100000.0;
  CHECK(mean >= 0.98);
  CHECK(mean <= 1.02);
  for (double v : out.data()) CHECK((v == 0.0 || v == 2.0));
}

TEST_CASE("dropout gradient follows its mask") {
  Rng rng(4);
  const Tensor x = random_tensor({6, 3}, rng);
  const Tensor w = random_tensor({6, 3}, rng);
  const auto r = gradient_check(
      [&](Tape&, std::span<const Var> v) {
        Rng local(99);
        return probe(dropout(v[0], 0.4, true, local), w);
      },
      {x});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("group_norm examples") {
  Tape tape;
  const Var x = tape.constant(Tensor({2, 8}, 3.0));
  const Var gamma = tape.constant(Tensor({8}, 1.0));
  const Var beta = tape.constant(Tensor({8}, 0.0));
  for (double v : group_norm(x, 4, gamma, beta).value().data()) CHECK(v == 0.0);

  Rng rng(5);
  const Var y = tape.constant(random_tensor({3, 8}, rng));
  const Var zero = tape.constant(Tensor({8}, 0.0));
  const Var c = tape.constant(Tensor({8}, 0.7));
  for (double v : group_norm(y, 2, zero, c).value().data()) CHECK(v == 0.7);

  CHECK_THROWS_AS(group_norm(y, 3, gamma, beta), ConfigError);
}

TEST_CASE("group_norm standardizes each group") {
  Rng rng(6);
  Tape tape;
  const Var x = tape.constant(random_tensor({3, 8}, rng, -2.0, 5.0));
  const Tensor y = group_norm(x, 2, tape.constant(Tensor({8}, 1.0)), tape.constant(Tensor({8}, 0.0))).value();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t g = 0; g < 2; ++g) {
      double mean = 0.0;
      double sq = 0.0;
      for (std::size_t k = 0; k < 4; ++k) mean += y(r, 4 * g + k) / 4.0;
      for (std::size_t k = 0; k < 4; ++k) sq += (y(r, 4 * g + k) - mean) * (y(r, 4 * g + k) - mean) / 4.0;
      CHECK(std::abs(mean) < 1e-12);
      CHECK(sq == doctest::Approx(1.0).epsilon(1e-4));
    }
  }
}

TEST_CASE("group_norm gradient") {
  Rng rng(7);
  const Tensor w = random_tensor({4, 8}, rng);
  const std::vector<Tensor> inputs{random_tensor({4, 8}, rng), random_tensor({8}, rng), random_tensor({8}, rng)};
  const auto sum_check = gradient_check(
      [](Tape&, std::span<const Var> v) { return sum(group_norm(v[0], 4, v[1], v[2])); }, inputs);
  CHECK(sum_check.max_rel_err < 1e-5);
  const auto probe_check = gradient_check(
      [&](Tape&, std::span<const Var> v) { return probe(group_norm(v[0], 2, v[1], v[2]), w); }, inputs);
  CHECK(probe_check.max_rel_err < 1e-5);
}

TEST_CASE("log_softmax examples") {
  Tape tape;
  const Tensor a = log_softmax(tape.constant(Tensor::matrix({{0, 0}}))).value();
  CHECK(a(0, 0) == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
  const Tensor b = log_softmax(tape.constant(Tensor::matrix({{1000, 1000, 1000}}))).value();
  for (double v : b.data()) CHECK(v == doctest::Approx(-std::log(3.0)).epsilon(1e-15));

  Rng rng(8);
  const Tensor c = log_softmax(tape.constant(random_tensor({6, 5}, rng, -30, 30))).value();
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 5; ++k) s += std::exp(c(r, k));
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("log_softmax gradient") {
  Rng rng(9);
  const Tensor w = random_tensor({4, 3}, rng);
  const auto r = gradient_check([&](Tape&, std::span<const Var> v) { return probe(log_softmax(v[0]), w); },
                                {random_tensor({4, 3}, rng)});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("nll_loss examples") {
  Tape tape;
  const std::vector<std::size_t> labels{0, 1, 1};
  const std::vector<std::size_t> mask{0, 1, 2};
  const Var certain = tape.constant(Tensor::matrix({{0, -50}, {-50, 0}, {-50, 0}}));
  CHECK(nll_loss(certain, labels, mask).value().item() == 0.0);
  const double l4 = std::log(0.25);
  const Var uniform = tape.constant(Tensor({3, 4}, l4));
  CHECK(nll_loss(uniform, labels, mask).value().item() == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK_THROWS_AS(nll_loss(uniform, labels, std::vector<std::size_t>{}), ConfigError);
}

TEST_CASE("nll_loss gradient") {
  Rng rng(10);
  const std::vector<std::size_t> labels{2, 0, 1, 1, 0};
  const std::vector<std::size_t> mask{0, 2, 3};
  const auto r = gradient_check([&](Tape&, std::span<const Var> v) { return nll_loss(log_softmax(v[0]), labels, mask); },
                                {random_tensor({5, 3}, rng)});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("concat_time_column") {
  Tape tape;
  const Var x = tape.leaf(Tensor::matrix({{5}, {6}}));
  const Var y = concat_time_column(x, 0.5);
  CHECK(y.value() == Tensor::matrix({{5, 0.5}, {6, 0.5}}));
  CHECK(concat_time_column(x, 0.0).value() == Tensor::matrix({{5, 0}, {6, 0}}));
  CHECK(tape.backward(sum(y))[x] == Tensor::matrix({{1}, {1}}));
}

TEST_CASE("backward basics") {
  Rng rng(11);
  Tape tape;
  const Var x = tape.leaf(random_tensor({3, 2}, rng));
  const Var unused = tape.leaf(random_tensor({2, 2}, rng));
  const Var loss = scale(sum(mul(x, x)), 0.5);
  const GradMap g = tape.backward(loss);
  CHECK(g[x] == x.value());
  CHECK(g[unused] == Tensor({2, 2}, 0.0));

  Tape t2;
  const Var z = t2.leaf(Tensor({4}, 2.0));
  CHECK(t2.backward(sum(z))[z] == Tensor({4}, 1.0));
}

TEST_CASE("backward needs a scalar and a reset before reuse") {
  Tape tape;
  const Var x = tape.leaf(Tensor({2, 2}, 1.0));
  CHECK_THROWS_AS(tape.backward(x), ContractError);
  tape.backward(sum(x));
  CHECK_THROWS_AS(tape.leaf(Tensor({1}, 0.0)), ContractError);
  tape.reset();
  CHECK_NOTHROW(tape.leaf(Tensor({1}, 0.0)));
}

TEST_CASE("parents always precede their node") {
  Tape tape;
  const Var a = tape.leaf(Tensor({2}, 1.0));
  const Var b = add(a, a);
  const Var c = mul(b, a);
  CHECK(a.id() < b.id());
  CHECK(b.id() < c.id());
}

TEST_CASE("elementwise ops and slicing gradients") {
  Rng rng(12);
  const Tensor w = random_tensor({3, 2}, rng);
  const auto r = gradient_check(
      [&](Tape&, std::span<const Var> v) {
        const Var s = sub(mul(v[0], v[1]), scale(v[0], 0.3));
        const Var b = add_row_vector(s, v[2]);
        return probe(slice_columns(concat_time_column(b, 0.25), 1, 3), w);
      },
      {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), random_tensor({4}, rng)});
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("linear_combination gradient") {
  Rng rng(13);
  const Tensor w = random_tensor({2, 3}, rng);
  const auto r = gradient_check(
      [&](Tape&, std::span<const Var> v) {
        const std::pair<double, Var> terms[] = {{0.5, v[1]}, {-2.0, v[2]}};
        return probe(linear_combination(v[0], terms), w);
      },
      {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  CHECK(r.max_rel_err < 1e-6);
}
