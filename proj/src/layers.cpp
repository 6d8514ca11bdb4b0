#include "resgcn/layers.hpp"

#include <cmath>
#include <string>

#include "resgcn/errors.hpp"

namespace resgcn {

LayerParams init_params(std::size_t in, std::size_t out, InitScheme scheme, Rng& rng) {
  if (in == 0 || out == 0) throw ConfigError("layer dimensions must be positive");
  LayerParams p{Tensor({in, out}), Tensor({out}, 0.0)};
  if (scheme == InitScheme::Uniform) {
    const double bound = std::sqrt(1.0 / static_cast<double>(out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : p.weight.data()) w = dist(rng);
    for (double& b : p.bias.data()) b = dist(rng);
  } else {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : p.weight.data()) w = dist(rng);
  }
  return p;
}

namespace {

void check_layer(const Var& h, const BoundLayer& p) {
  if (h.value().rank() != 2 || p.weight.value().rank() != 2 || h.value().cols() != p.weight.value().rows()) {
    throw DimensionError("graph convolution input " + to_string(h.shape()) + " does not fit kernel " +
                         to_string(p.weight.shape()));
  }
}

Var propagate(const SparseMatrix& op, const Var& h, const BoundLayer& p) {
  check_layer(h, p);
  // (A h) W and A (h W) are equal; multiply by the kernel first when it
  // shrinks the feature dimension.
  const Var mixed = p.weight.value().cols() < p.weight.value().rows() ? spmm(op, matmul(h, p.weight))
                                                                      : matmul(spmm(op, h), p.weight);
  return add_row_vector(mixed, p.bias);
}

}  // namespace

Var gcn_forward(const SparseMatrix& op, const Var& h, const BoundLayer& p, bool activation) {
  Var z = propagate(op, h, p);
  return activation ? relu(z) : z;
}

Var res_gcn_forward(const SparseMatrix& op, const Var& h, const BoundLayer& p) {
  const Shape& w = p.weight.shape();
  if (w.size() != 2 || w[0] != w[1] || h.value().cols() != w[0]) {
    throw DimensionError("residual layer needs matching in/out features; input " + to_string(h.shape()) +
                         ", kernel " + to_string(w));
  }
  return add(h, relu(propagate(op, h, p)));
}

std::vector<Var> OdeField::parameters() const {
  std::vector<Var> out;
  for (const BoundLayer& l : layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  if (norm) {
    out.push_back(norm->gamma);
    out.push_back(norm->beta);
  }
  return out;
}

OdeField OdeField::rebind(std::span<const Var> params) const {
  const std::size_t expected = 2 * layers.size() + (norm ? 2 : 0);
  if (params.size() != expected) {
    throw ContractError("ODE field expects " + std::to_string(expected) + " parameters, got " +
                        std::to_string(params.size()));
  }
  OdeField out = *this;
  std::size_t k = 0;
  for (BoundLayer& l : out.layers) {
    l.weight = params[k++];
    l.bias = params[k++];
  }
  if (out.norm) {
    out.norm->gamma = params[k++];
    out.norm->beta = params[k++];
  }
  return out;
}

Var ode_field_eval(double t, const Var& h, const OdeField& field) {
  if (field.op == nullptr || field.layers.empty()) throw ContractError("ODE field has no operator or layers");
  const std::size_t d = h.value().cols();
  for (const BoundLayer& l : field.layers) {
    const Shape& w = l.weight.shape();
    if (w.size() != 2 || w[0] != d + 1 || w[1] != d) {
      throw DimensionError("ODE field kernel " + to_string(w) + " does not map " + std::to_string(d) +
                           " state features plus time to " + std::to_string(d));
    }
  }
  Var z = h;
  if (field.norm) z = group_norm(z, field.norm->groups, field.norm->gamma, field.norm->beta, field.norm->eps);
  for (const BoundLayer& l : field.layers) z = gcn_forward(*field.op, concat_time_column(z, t), l, true);
  return z;
}

}  // namespace resgcn
