#include "resgcn/odeint.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "resgcn/errors.hpp"
#include "resgcn/ops.hpp"

namespace resgcn {

void OdeSolverConfig::validate() const {
  if (!(std::isfinite(t0) && std::isfinite(t1)) || t0 == t1) throw ConfigError("ODE interval must be finite and nonempty");
  if (method == OdeMethod::Rk4 && steps < 1) throw ConfigError("rk4 needs at least one step");
  if (method == OdeMethod::Dopri5 && !(rtol > 0.0 && atol > 0.0)) throw ConfigError("rtol and atol must be positive");
  if (max_evals < 1) throw ConfigError("max_evals must be positive");
}

namespace {

const Tensor& value_of(const Tensor& t) { return t; }
const Tensor& value_of(const Var& v) { return v.value(); }

// y + h * sum_i a_i k_i
template <std::size_t N>
Tensor combine(const Tensor& y, double h, const std::array<double, N>& a, const std::array<const Tensor*, N>& k) {
  Tensor out = y;
  for (std::size_t i = 0; i < N; ++i) {
    if (a[i] != 0.0) out.axpy(h * a[i], *k[i]);
  }
  return out;
}

template <std::size_t N>
Var combine(const Var& y, double h, const std::array<double, N>& a, const std::array<const Var*, N>& k) {
  std::vector<std::pair<double, Var>> terms;
  terms.reserve(N);
  for (std::size_t i = 0; i < N; ++i) {
    if (a[i] != 0.0) terms.emplace_back(h * a[i], *k[i]);
  }
  return linear_combination(y, terms);
}

double rms(const Tensor& v, const Tensor& scale) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = v[i] / scale[i];
    acc += r * r;
  }
  return v.size() == 0 ? 0.0 : std::sqrt(acc / static_cast<double>(v.size()));
}

template <class State>
OdeSolution<State> rk4_impl(const OdeRhs<State>& f, const State& y0, const OdeSolverConfig& cfg) {
  cfg.validate();
  const double h = (cfg.t1 - cfg.t0) / static_cast<double>(cfg.steps);
  OdeSolution<State> sol{y0, {}};
  State& y = sol.state;
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    const double t = cfg.t0 + static_cast<double>(i) * h;
    const State k1 = f(t, y);
    const State k2 = f(t + 0.5 * h, combine<1>(y, h, {0.5}, {&k1}));
    const State k3 = f(t + 0.5 * h, combine<1>(y, h, {0.5}, {&k2}));
    const State k4 = f(t + h, combine<1>(y, h, {1.0}, {&k3}));
    y = combine<4>(y, h, {1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0}, {&k1, &k2, &k3, &k4});
    sol.stats.field_evaluations += 4;
    sol.stats.accepted_steps += 1;
    if (!value_of(y).all_finite()) throw DivergenceError("rk4: non-finite state after step " + std::to_string(i));
  }
  return sol;
}

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr std::array<double, 1> a2{1.0 / 5};
constexpr std::array<double, 2> a3{3.0 / 40, 9.0 / 40};
constexpr std::array<double, 3> a4{44.0 / 45, -56.0 / 15, 32.0 / 9};
constexpr std::array<double, 4> a5{19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729};
constexpr std::array<double, 5> a6{9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656};
constexpr std::array<double, 6> b5{35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84};
// b5 - b4 (including the FSAL stage).
constexpr std::array<double, 7> err_coef{71.0 / 57600,     0.0,          -71.0 / 16695, 71.0 / 1920,
                                         -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;
constexpr double kBeta = 0.04;              // PI controller memory
constexpr double kAlpha = 0.2 - 0.75 * kBeta;
constexpr double kMinStep = 1e-12;

template <class State>
OdeSolution<State> dopri5_impl(const OdeRhs<State>& f, const State& y0, const OdeSolverConfig& cfg) {
  cfg.validate();
  const double dir = cfg.t1 > cfg.t0 ? 1.0 : -1.0;
  const double span = std::abs(cfg.t1 - cfg.t0);

  OdeSolution<State> sol{y0, {}};
  SolveStats& stats = sol.stats;
  auto eval = [&](double t, const State& y) {
    if (stats.field_evaluations >= cfg.max_evals) {
      throw StiffnessError("dopri5: exceeded " + std::to_string(cfg.max_evals) + " field evaluations at t=" +
                           std::to_string(t));
    }
    ++stats.field_evaluations;
    return f(t, y);
  };

  State y = y0;
  State k1 = eval(cfg.t0, y);

  // Starting step (Hairer, Norsett & Wanner II.4), except that a field which
  // vanishes at the start takes the whole interval in one trial step.
  double h = span;
  {
    const Tensor& yv = value_of(y);
    const Tensor& fv = value_of(k1);
    Tensor sc(yv.shape());
    for (std::size_t i = 0; i < sc.size(); ++i) sc[i] = cfg.atol + cfg.rtol * std::abs(yv[i]);
    const double d0 = rms(yv, sc);
    const double d1 = rms(fv, sc);
    if (d1 > 1e-15) {
      const double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
      const State probe = eval(cfg.t0 + dir * h0, combine<1>(y, dir * h0, {1.0}, {&k1}));
      Tensor diff = value_of(probe);
      diff.axpy(-1.0, fv);
      const double d2 = rms(diff, sc) / h0;
      const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / std::max(d1, d2), 0.2);
      h = std::min({100.0 * h0, h1, span});
    }
  }

  double t = cfg.t0;
  double err_prev = 1e-4;
  bool rejected_last = false;
  while (dir * (cfg.t1 - t) > 0.0) {
    const double remaining = std::abs(cfg.t1 - t);
    if (h < kMinStep) throw StiffnessError("dopri5: step size underflow at t=" + std::to_string(t));
    const bool last = h >= remaining;
    if (last) h = remaining;
    const double hs = dir * h;

    const State k2 = eval(t + c2 * hs, combine<1>(y, hs, a2, {&k1}));
    const State k3 = eval(t + c3 * hs, combine<2>(y, hs, a3, {&k1, &k2}));
    const State k4 = eval(t + c4 * hs, combine<3>(y, hs, a4, {&k1, &k2, &k3}));
    const State k5 = eval(t + c5 * hs, combine<4>(y, hs, a5, {&k1, &k2, &k3, &k4}));
    const State k6 = eval(t + hs, combine<5>(y, hs, a6, {&k1, &k2, &k3, &k4, &k5}));
    State y_new = combine<6>(y, hs, b5, {&k1, &k2, &k3, &k4, &k5, &k6});
    State k7 = eval(t + hs, y_new);

    const Tensor& yv = value_of(y);
    const Tensor& ynv = value_of(y_new);
    const std::array<const Tensor*, 7> ks{&value_of(k1), &value_of(k2), &value_of(k3), &value_of(k4),
                                         &value_of(k5), &value_of(k6), &value_of(k7)};
    Tensor err_vec(yv.shape(), 0.0);
    for (std::size_t s = 0; s < 7; ++s) {
      if (err_coef[s] != 0.0) err_vec.axpy(hs * err_coef[s], *ks[s]);
    }
    Tensor sc(yv.shape());
    for (std::size_t i = 0; i < sc.size(); ++i) sc[i] = cfg.atol + cfg.rtol * std::max(std::abs(yv[i]), std::abs(ynv[i]));
    const double err = rms(err_vec, sc);

    if (std::isfinite(err) && err <= 1.0) {
      if (!ynv.all_finite()) throw DivergenceError("dopri5: non-finite state at t=" + std::to_string(t + hs));
      t = last ? cfg.t1 : t + hs;
      y = std::move(y_new);
      k1 = std::move(k7);
      ++stats.accepted_steps;
      double factor = err == 0.0 ? kMaxFactor : kSafety * std::pow(err, -kAlpha) * std::pow(err_prev, kBeta);
      factor = std::clamp(factor, kMinFactor, kMaxFactor);
      if (rejected_last) factor = std::min(factor, 1.0);
      err_prev = std::max(err, 1e-4);
      rejected_last = false;
      h *= factor;
    } else {
      ++stats.rejected_steps;
      const double factor = std::isfinite(err) ? std::max(kMinFactor, kSafety * std::pow(err, -0.2)) : kMinFactor;
      rejected_last = true;
      h *= factor;
    }
  }
  sol.state = std::move(y);
  return sol;
}

Tensor flatten_concat(std::initializer_list<const Tensor*> parts, std::span<const Tensor> more) {
  std::size_t total = 0;
  for (const Tensor* p : parts) total += p->size();
  for (const Tensor& p : more) total += p.size();
  std::vector<double> data;
  data.reserve(total);
  for (const Tensor* p : parts) data.insert(data.end(), p->data().begin(), p->data().end());
  for (const Tensor& p : more) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor({total}, std::move(data));
}

Tensor slice_flat(const Tensor& flat, std::size_t offset, const Shape& shape) {
  const std::size_t n = shape_size(shape);
  return Tensor(shape, std::vector<double>(flat.data().begin() + static_cast<std::ptrdiff_t>(offset),
                                           flat.data().begin() + static_cast<std::ptrdiff_t>(offset + n)));
}

}  // namespace

OdeSolution<Tensor> rk4_integrate(const OdeRhs<Tensor>& f, const Tensor& y0, const OdeSolverConfig& cfg) {
  return rk4_impl(f, y0, cfg);
}
OdeSolution<Var> rk4_integrate(const OdeRhs<Var>& f, const Var& y0, const OdeSolverConfig& cfg) {
  return rk4_impl(f, y0, cfg);
}
OdeSolution<Tensor> dopri5_integrate(const OdeRhs<Tensor>& f, const Tensor& y0, const OdeSolverConfig& cfg) {
  return dopri5_impl(f, y0, cfg);
}
OdeSolution<Var> dopri5_integrate(const OdeRhs<Var>& f, const Var& y0, const OdeSolverConfig& cfg) {
  return dopri5_impl(f, y0, cfg);
}

OdeSolution<Tensor> integrate(const OdeRhs<Tensor>& f, const Tensor& y0, const OdeSolverConfig& cfg) {
  return cfg.method == OdeMethod::Rk4 ? rk4_impl(f, y0, cfg) : dopri5_impl(f, y0, cfg);
}
OdeSolution<Var> integrate(const OdeRhs<Var>& f, const Var& y0, const OdeSolverConfig& cfg) {
  return cfg.method == OdeMethod::Rk4 ? rk4_impl(f, y0, cfg) : dopri5_impl(f, y0, cfg);
}

ForwardSolve forward_solve(const ParamField& f, const Tensor& h0, std::span<const Tensor> params,
                           const OdeSolverConfig& cfg) {
  OdeRhs<Tensor> rhs = [&](double t, const Tensor& y) {
    Tape tape;
    std::vector<Var> pv;
    pv.reserve(params.size());
    for (const Tensor& p : params) pv.push_back(tape.constant(p));
    return f(t, tape.constant(y), pv).value();
  };
  auto sol = integrate(rhs, h0, cfg);
  return ForwardSolve{std::move(sol.state), cfg, sol.stats};
}

AdjointGrads adjoint_backward(const ParamField& f, const ForwardSolve& forward, std::span<const Tensor> params,
                              const OdeSolverConfig& cfg, const Tensor& grad_at_t1) {
  if (!(cfg == forward.cfg)) throw ContractError("adjoint sweep configuration differs from the forward solve");
  if (grad_at_t1.shape() != forward.result.shape()) {
    throw DimensionError("adjoint seed " + to_string(grad_at_t1.shape()) + " does not match state " +
                         to_string(forward.result.shape()));
  }
  const Shape state_shape = forward.result.shape();
  const std::size_t n = forward.result.size();

  // Augmented state [H, a, g_theta], integrated from t1 back to t0.
  std::vector<Tensor> zero_params;
  zero_params.reserve(params.size());
  for (const Tensor& p : params) zero_params.emplace_back(p.shape(), 0.0);
  const Tensor aug0 = flatten_concat({&forward.result, &grad_at_t1}, zero_params);

  OdeRhs<Tensor> rhs = [&](double t, const Tensor& y) {
    Tape tape;
    const Var h = tape.leaf(slice_flat(y, 0, state_shape));
    const Tensor adj = slice_flat(y, n, state_shape);
    std::vector<Var> pv;
    pv.reserve(params.size());
    for (const Tensor& p : params) pv.push_back(tape.leaf(p));
    const Var out = f(t, h, pv);
    const GradMap vjp = tape.backward(out, adj);
    std::vector<double> data;
    data.reserve(y.size());
    data.insert(data.end(), out.value().data().begin(), out.value().data().end());
    for (double v : vjp[h].data()) data.push_back(-v);
    for (const Var& p : pv) {
      for (double v : vjp[p].data()) data.push_back(-v);
    }
    const std::size_t total = data.size();
    return Tensor({total}, std::move(data));
  };

  OdeSolverConfig reverse = cfg;
  std::swap(reverse.t0, reverse.t1);
  auto sol = integrate(rhs, aug0, reverse);

  AdjointGrads out;
  out.stats = sol.stats;
  out.h0 = slice_flat(sol.state, n, state_shape);
  std::size_t offset = 2 * n;
  for (const Tensor& p : params) {
    out.params.push_back(slice_flat(sol.state, offset, p.shape()));
    offset += p.size();
  }
  return out;
}

Var odeint(const ParamField& f, const Var& h0, std::span<const Var> params, const OdeSolverConfig& cfg,
           SolveStats* stats) {
  if (cfg.grad_mode == GradMode::Discretize) {
    std::vector<Var> pv(params.begin(), params.end());
    OdeRhs<Var> rhs = [&f, pv](double t, const Var& y) { return f(t, y, pv); };
    auto sol = integrate(rhs, h0, cfg);
    if (stats) *stats = sol.stats;
    return sol.state;
  }

  std::vector<Tensor> param_values;
  param_values.reserve(params.size());
  for (const Var& p : params) param_values.push_back(p.value());
  ForwardSolve fwd = forward_solve(f, h0.value(), param_values, cfg);
  if (stats) *stats = fwd.stats;

  std::vector<Var> parents{h0};
  parents.insert(parents.end(), params.begin(), params.end());
  Tensor result = fwd.result;
  return h0.tape().record(
      std::move(result), parents,
      [f, cfg, fwd = std::move(fwd), param_values = std::move(param_values)](const Tensor& g,
                                                                              std::span<Tensor* const> pg) {
        const AdjointGrads grads = adjoint_backward(f, fwd, param_values, cfg, g);
        if (pg[0]) pg[0]->axpy(1.0, grads.h0);
        for (std::size_t i = 0; i < grads.params.size(); ++i) {
          if (pg[i + 1]) pg[i + 1]->axpy(1.0, grads.params[i]);
        }
      });
}

SolveWithGrad solve_with_grad(const ParamField& f, const Tensor& h0, std::span<const Tensor> params,
                              const OdeSolverConfig& cfg, const Tensor& loss_grad_at_t1) {
  Tape tape;
  const Var h = tape.leaf(h0);
  std::vector<Var> pv;
  pv.reserve(params.size());
  for (const Tensor& p : params) pv.push_back(tape.leaf(p));
  const Var out = odeint(f, h, pv, cfg);
  const GradMap grads = tape.backward(out, loss_grad_at_t1);
  SolveWithGrad result{out.value(), grads[h], {}};
  for (const Var& p : pv) result.param_grads.push_back(grads[p]);
  return result;
}

}  // namespace resgcn
