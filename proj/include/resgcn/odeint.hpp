#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "resgcn/tape.hpp"

namespace resgcn {

enum class OdeMethod { Rk4, Dopri5 };
enum class GradMode { Discretize, Adjoint };

struct OdeSolverConfig {
  OdeMethod method = OdeMethod::Dopri5;
  double t0 = 0.0;
  double t1 = 1.0;
  std::size_t steps = 8;  // rk4 only
  double rtol = 1e-3;     // dopri5 only
  double atol = 1e-3;     // dopri5 only
  GradMode grad_mode = GradMode::Discretize;
  std::size_t max_evals = 100000;

  /// Throws ConfigError. t1 < t0 is allowed for backward-in-time solves.
  void validate() const;
  friend bool operator==(const OdeSolverConfig&, const OdeSolverConfig&) = default;
};

struct SolveStats {
  std::size_t field_evaluations = 0;
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
};

template <class State>
using OdeRhs = std::function<State(double t, const State& y)>;

template <class State>
struct OdeSolution {
  State state;
  SolveStats stats;
};

// Integrators over plain tensors and over tape values. The Var versions
// record every stage, so a backward sweep differentiates the discretization.
OdeSolution<Tensor> rk4_integrate(const OdeRhs<Tensor>& f, const Tensor& y0, const OdeSolverConfig& cfg);
OdeSolution<Var> rk4_integrate(const OdeRhs<Var>& f, const Var& y0, const OdeSolverConfig& cfg);
OdeSolution<Tensor> dopri5_integrate(const OdeRhs<Tensor>& f, const Tensor& y0, const OdeSolverConfig& cfg);
OdeSolution<Var> dopri5_integrate(const OdeRhs<Var>& f, const Var& y0, const OdeSolverConfig& cfg);

/// Dispatches on cfg.method.
OdeSolution<Tensor> integrate(const OdeRhs<Tensor>& f, const Tensor& y0, const OdeSolverConfig& cfg);
OdeSolution<Var> integrate(const OdeRhs<Var>& f, const Var& y0, const OdeSolverConfig& cfg);

/// Vector field with explicit parameters. It must record on the tape of `h`
/// and `params` (which share one tape).
using ParamField = std::function<Var(double t, const Var& h, std::span<const Var> params)>;

/// Solves dH/dt = f(t, H; params) from cfg.t0 to cfg.t1 and returns H(t1) on
/// the tape of h0. Discretize mode records the solver steps. Adjoint mode
/// records a single node whose backward pass integrates the adjoint system
/// from t1 back to t0, re-evaluating the field instead of storing the
/// trajectory.
Var odeint(const ParamField& f, const Var& h0, std::span<const Var> params, const OdeSolverConfig& cfg,
           SolveStats* stats = nullptr);

/// Result of a forward solve kept for a later adjoint sweep.
struct ForwardSolve {
  Tensor result;
  OdeSolverConfig cfg;
  SolveStats stats;
};

struct AdjointGrads {
  Tensor h0;
  std::vector<Tensor> params;
  SolveStats stats;
};

ForwardSolve forward_solve(const ParamField& f, const Tensor& h0, std::span<const Tensor> params,
                           const OdeSolverConfig& cfg);

/// Integrates [H, a, g_theta] backward from t1 with a(t1) = grad_at_t1:
///   da/dt = -a^T df/dH,  dg/dt = -a^T df/dtheta.
/// Throws ContractError when `cfg` differs from the forward solve's.
AdjointGrads adjoint_backward(const ParamField& f, const ForwardSolve& forward, std::span<const Tensor> params,
                              const OdeSolverConfig& cfg, const Tensor& grad_at_t1);

struct SolveWithGrad {
  Tensor result;
  Tensor h0_grad;
  std::vector<Tensor> param_grads;
};

/// H(t1) together with dL/dh0 and dL/dparams for a loss whose gradient at
/// H(t1) is `loss_grad_at_t1`, using cfg.grad_mode.
SolveWithGrad solve_with_grad(const ParamField& f, const Tensor& h0, std::span<const Tensor> params,
                              const OdeSolverConfig& cfg, const Tensor& loss_grad_at_t1);

}  // namespace resgcn
