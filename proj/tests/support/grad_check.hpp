#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "resgcn/ops.hpp"
#include "resgcn/sparse.hpp"
#include "resgcn/tape.hpp"

namespace resgcn::testing {

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;  // entries whose eps stencil straddled a ReLU kink
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries
// whose true gradient is near zero from dominating through rounding noise.
inline double rel_err(double a, double n, double floor = 1e-3) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Compares tape gradients of a scalar function of `inputs` with central
// differences of step eps. When the eps difference disagrees with the
// eps/10 difference the stencil straddles a kink; such entries are compared
// against a step of eps/100 instead and counted in `kinks`.
inline GradCheck gradient_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double eps = 1e-5) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  const Var out = f(tape, leaves);
  const GradMap grads = tape.backward(out);

  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> vs;
    for (const Tensor& x : xs) vs.push_back(t.constant(x));
    return f(t, vs).value().item();
  };

  GradCheck res;
  std::vector<Tensor> xs = inputs;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t k = 0; k < xs[i].size(); ++k) {
      const double orig = xs[i][k];
      auto central = [&](double h) {
        xs[i][k] = orig + h;
        const double up = eval(xs);
        xs[i][k] = orig - h;
        const double down = eval(xs);
        xs[i][k] = orig;
        return (up - down) / (2.0 * h);
      };
      const double analytic = grads[leaves[i]][k];
      double numeric = central(eps);
      if (rel_err(analytic, numeric) > 1e-6 && rel_err(numeric, central(eps / 10.0)) > 1e-6) {
        numeric = central(eps / 100.0);
        ++res.kinks;
      }
      res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic, numeric));
      ++res.checked;
    }
  }
  return res;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Weighted sum with fixed random weights, so every output entry matters.
inline Var probe(const Var& y, const Tensor& weights) { return sum(mul(y, y.tape().constant(weights))); }

// Connected random graph on n nodes: a ring plus random chords.
inline SparseMatrix random_graph(std::size_t n, Rng& rng, std::size_t chords = 3) {
  Tensor a({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    a(i, (i + 1) % n) = 1.0;
    a((i + 1) % n, i) = 1.0;
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (std::size_t c = 0; c < chords; ++c) {
    const std::size_t i = pick(rng);
    const std::size_t j = pick(rng);
    if (i == j) continue;
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  return SparseMatrix::from_dense(a);
}

}  // namespace resgcn::testing
