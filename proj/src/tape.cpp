#include "resgcn/tape.hpp"

#include "resgcn/errors.hpp"

namespace resgcn {

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(id_); }

const Tensor& GradMap::operator[](const Var& leaf) const { return at(leaf.id()); }

const Tensor& GradMap::at(std::size_t leaf_id) const {
  auto it = grads_.find(leaf_id);
  if (it == grads_.end()) throw ContractError("no gradient recorded for node " + std::to_string(leaf_id));
  return it->second;
}

Var Tape::leaf(Tensor value) {
  if (swept_) throw ContractError("tape was already swept; reset() before recording");
  nodes_.push_back(Node{std::move(value), {}, {}, true, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (swept_) throw ContractError("tape was already swept; reset() before recording");
  nodes_.push_back(Node{std::move(value), {}, {}, false, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  if (swept_) throw ContractError("tape was already swept; reset() before recording");
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const Var& p : parents) inputs_finite = inputs_finite && p.value().all_finite();
  if (inputs_finite && !value.all_finite()) throw DivergenceError("operation produced non-finite values");
#endif
  Node node;
  node.value = std::move(value);
  for (const Var& p : parents) {
    if (&p.tape() != this) throw ContractError("operand recorded on a different tape");
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (node.requires_grad) {
    node.parents.reserve(parents.size());
    for (const Var& p : parents) node.parents.push_back(p.id());
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

GradMap Tape::backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  return backward(loss, Tensor(loss.shape(), 1.0));
}

GradMap Tape::backward(const Var& output, const Tensor& seed) {
  if (&output.tape() != this) throw ContractError("backward() on a Var from another tape");
  if (seed.shape() != output.shape()) {
    throw DimensionError("backward seed " + to_string(seed.shape()) + " does not match output " +
                         to_string(output.shape()));
  }
  swept_ = true;

  std::vector<Tensor> grads(output.id() + 1);
  std::vector<bool> touched(output.id() + 1, false);
  if (nodes_[output.id()].requires_grad) {
    grads[output.id()] = seed;
    touched[output.id()] = true;
  }

  std::vector<Tensor*> sinks;
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!touched[id] || node.is_leaf || !node.backward) continue;
    sinks.assign(node.parents.size(), nullptr);
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      const std::size_t pid = node.parents[k];
      if (!nodes_[pid].requires_grad) continue;
      if (!touched[pid]) {
        grads[pid] = Tensor(nodes_[pid].value.shape(), 0.0);
        touched[pid] = true;
      }
      sinks[k] = &grads[pid];
    }
    node.backward(grads[id], sinks);
    grads[id] = Tensor();
  }

  GradMap result;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].is_leaf) continue;
    if (id < grads.size() && touched[id]) {
      result.grads_.emplace(id, std::move(grads[id]));
    } else {
      result.grads_.emplace(id, Tensor(nodes_[id].value.shape(), 0.0));
    }
  }
  return result;
}

void Tape::reset() { truncate(0); }

void Tape::truncate(std::size_t keep) {
  if (keep < nodes_.size()) nodes_.resize(keep);
  swept_ = false;
}

}  // namespace resgcn
