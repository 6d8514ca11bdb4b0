#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "resgcn/ops.hpp"
#include "resgcn/sparse.hpp"

namespace resgcn {

enum class InitScheme { Uniform, Glorot };

/// Kernel W (in x out) and bias b (out) of one graph convolution.
struct LayerParams {
  Tensor weight;
  Tensor bias;

  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
};

/// LayerParams placed on a tape.
struct BoundLayer {
  Var weight;
  Var bias;
};

struct BoundGroupNorm {
  Var gamma;
  Var beta;
  std::size_t groups = 4;
  double eps = 1e-5;
};

/// Uniform: W, b ~ U(-sqrt(1/out), sqrt(1/out)).
/// Glorot: W ~ U(-sqrt(6/(in+out)), sqrt(6/(in+out))), b = 0.
LayerParams init_params(std::size_t in, std::size_t out, InitScheme scheme, Rng& rng);

/// act(A h W + b); act is ReLU when `activation` is set, identity otherwise.
Var gcn_forward(const SparseMatrix& op, const Var& h, const BoundLayer& p, bool activation);

/// h + ReLU(A h W + b). Needs a square kernel.
Var res_gcn_forward(const SparseMatrix& op, const Var& h, const BoundLayer& p);

/// Vector field of a continuous residual block:
///   dH/dt = ReLU(A [norm(H) | t] W' + b)
/// with W' of shape (d+1) x d. A second layer, when present, receives the
/// time column again: ReLU(A [z | t] W2 + b2). The operator is fixed across
/// all evaluations of a solve.
struct OdeField {
  const SparseMatrix* op = nullptr;
  std::vector<BoundLayer> layers;
  std::optional<BoundGroupNorm> norm;

  /// Flattened parameters: W1, b1, [W2, b2], [gamma, beta].
  std::vector<Var> parameters() const;
  /// Same structure with parameters taken from `params` (same order).
  OdeField rebind(std::span<const Var> params) const;
};

Var ode_field_eval(double t, const Var& h, const OdeField& field);

}  // namespace resgcn
