#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "resgcn/tensor.hpp"

namespace resgcn {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// lives and has not been reset.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of a scalar with respect to the leaves of a tape.
class GradMap {
 public:
  const Tensor& operator[](const Var& leaf) const;
  const Tensor& at(std::size_t leaf_id) const;
  bool contains(const Var& leaf) const { return grads_.count(leaf.id()) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Append-only record of operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children. A node whose parents all lack gradients is stored as a plain
/// value without a backward closure.
class Tape {
 public:
  /// Receives the gradient flowing into the node and one accumulator per
  /// parent. An accumulator is null when that parent needs no gradient.
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (parameter or input under test).
  Var leaf(Tensor value);
  /// Non-differentiable input.
  Var constant(Tensor value);
  /// Result of an operation on `parents`.
  Var record(Tensor value, std::vector<Var> parents, BackwardFn backward);

  /// Reverse sweep from a scalar. Every leaf of the tape gets an entry;
  /// leaves the scalar does not depend on get zeros.
  GradMap backward(const Var& loss);
  /// Reverse sweep seeded with `seed` = dL/d(output), i.e. a vector-Jacobian product.
  GradMap backward(const Var& output, const Tensor& seed);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  void reset();
  /// Drops every node after the first `keep`, so inputs recorded up front
  /// survive across sweeps.
  void truncate(std::size_t keep);

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  std::deque<Node> nodes_;
  bool swept_ = false;
};

}  // namespace resgcn
