#include "resgcn/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>

#include "resgcn/errors.hpp"
#include "resgcn/ops.hpp"

namespace resgcn {

bool EarlyStopConfig::satisfied(double val_acc, double val_loss) const {
  const double acc_threshold = acc_floor * reference_acc;
  const bool acc_ok = !(acc_threshold > 0.0) || val_acc > acc_threshold;
  const bool loss_ok = std::isinf(loss_ceiling) || std::isinf(reference_loss) || val_loss < loss_ceiling * reference_loss;
  return acc_ok && loss_ok;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
  if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
  if (early_stop.acc_floor < 0.0 || early_stop.loss_ceiling < 0.0) {
    throw ConfigError("early-stop fractions must be non-negative");
  }
}

AggregateStats aggregate(std::span<const RunRecord> runs) {
  AggregateStats s;
  s.runs = runs.size();
  std::size_t hits = 0;
  double loss_sum = 0.0;
  double time_sum = 0.0;
  for (const RunRecord& r : runs) {
    if (r.failed) {
      ++s.failed_runs;
      continue;
    }
    s.accuracies.push_back(r.test_acc);
    loss_sum += r.test_loss;
    time_sum += r.wall_time;
    if (r.stopped_early) ++hits;
  }
  const std::size_t n = s.accuracies.size();
  if (n == 0) return s;
  double acc_sum = 0.0;
  for (double a : s.accuracies) acc_sum += a;
  s.acc_avg = acc_sum / static_cast<double>(n);
  double sq = 0.0;
  for (double a : s.accuracies) sq += (a - s.acc_avg) * (a - s.acc_avg);
  s.acc_std = std::sqrt(sq / static_cast<double>(n));
  const auto [lo, hi] = std::minmax_element(s.accuracies.begin(), s.accuracies.end());
  s.acc_min = *lo;
  s.acc_max = *hi;
  // Guard the ordering against rounding in the mean.
  s.acc_avg = std::clamp(s.acc_avg, s.acc_min, s.acc_max);
  s.loss_avg = loss_sum / static_cast<double>(n);
  s.time_avg = time_sum / static_cast<double>(n);
  s.hit_ratio = static_cast<double>(hits) / static_cast<double>(n);
  return s;
}

AdamState AdamState::zeros_like(std::span<const Parameter> params) {
  AdamState s;
  for (const Parameter& p : params) {
    s.m.emplace_back(p.value.shape(), 0.0);
    s.v.emplace_back(p.value.shape(), 0.0);
  }
  return s;
}

std::vector<Tensor> weight_decay_gradient(std::span<const Parameter> params, double decay) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Parameter& p : params) {
    Tensor g(p.value.shape(), 0.0);
    if (p.decays) g.axpy(decay, p.value);
    out.push_back(std::move(g));
  }
  return out;
}

void adam_step(std::span<Parameter> params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step needs one gradient and one moment pair per parameter");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (grads[i].shape() != p.value.shape() || state.m[i].shape() != p.value.shape()) {
      throw DimensionError("adam state for '" + p.name + "' does not match " + to_string(p.value.shape()));
    }
    auto w = p.value.data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    const double decay = p.decays ? cfg.weight_decay : 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] + decay * w[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      w[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  }
}

double accuracy(const Tensor& logp, std::span<const std::size_t> labels, std::span<const std::size_t> mask) {
  if (mask.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t node : mask) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logp.cols(); ++c) {
      if (logp(node, c) > logp(node, best)) best = c;
    }
    if (best == labels[node]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(mask.size());
}

ModelSpec fit_to_dataset(ModelSpec spec, const CitationDataset& dataset) {
  spec.input_features = dataset.num_features();
  spec.num_classes = dataset.num_classes;
  return spec;
}

namespace {

double l2_penalty(std::span<const Parameter> params, double decay) {
  double s = 0.0;
  for (const Parameter& p : params) {
    if (!p.decays) continue;
    for (double w : p.value.data()) s += w * w;
  }
  return 0.5 * decay * s;
}

struct Eval {
  double loss;
  double acc;
};

// Eval-mode log-probabilities, recorded after the first `keep` nodes of `tape`.
Tensor eval_forward(const Model& model, const SparseMatrix& op, Tape& tape, std::size_t keep, const Var& x) {
  tape.truncate(keep);
  std::vector<Var> params;
  params.reserve(model.parameters().size());
  for (const Parameter& p : model.parameters()) params.push_back(tape.constant(p.value));
  return forward(model, params, op, x, ForwardOptions{}).value();
}

Eval evaluate(const Tensor& logp, const CitationDataset& ds, std::span<const std::size_t> mask) {
  Tape tape;
  const double loss = nll_loss(tape.constant(logp), ds.labels, mask).value().item();
  return {loss, accuracy(logp, ds.labels, mask)};
}

}  // namespace

RunRecord train_run(const ModelSpec& spec, const CitationDataset& dataset, const TrainConfig& cfg) {
  const SparseMatrix op = propagation_operator(dataset.adjacency, cfg.normalization);
  return train_run(spec, dataset, op, cfg);
}

RunRecord train_run(const ModelSpec& spec, const CitationDataset& dataset, const SparseMatrix& op,
                    const TrainConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.seed = cfg.seed;

  Rng rng(cfg.seed);
  Model model = build_model(spec, rng);
  AdamState state = AdamState::zeros_like(model.parameters());
  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};

  auto fail = [&](std::size_t epoch, std::string why) {
    rec.failed = true;
    rec.failed_epoch = epoch;
    rec.failure = std::move(why);
  };

  // The feature matrix stays on the tape across epochs.
  Tape tape;
  const Var x = tape.constant(dataset.features);
  const std::size_t keep = tape.size();
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    try {
      tape.truncate(keep);
      const std::vector<Var> params = bind_parameters(model, tape);
      const ForwardOptions opts{true, cfg.dropout_p, &rng, nullptr};
      const Var logp = forward(model, params, op, x, opts);
      const Var loss = nll_loss(logp, dataset.labels, dataset.train);
      const double train_loss = loss.value().item() + l2_penalty(model.parameters(), cfg.weight_decay);
      if (!std::isfinite(train_loss)) {
        fail(epoch, "non-finite training loss");
        break;
      }
      const GradMap grads = tape.backward(loss);
      std::vector<Tensor> g;
      g.reserve(params.size());
      for (const Var& p : params) g.push_back(grads[p]);
      adam_step(model.parameters(), g, state, adam);

      const Tensor eval_logp = eval_forward(model, op, tape, keep, x);
      const Eval val = evaluate(eval_logp, dataset, dataset.val);
      rec.train_loss.push_back(train_loss);
      rec.val_loss.push_back(val.loss);
      rec.val_acc.push_back(val.acc);
      rec.epochs_run = epoch;
      if (!std::isfinite(val.loss)) {
        fail(epoch, "non-finite validation loss");
        break;
      }
      if (cfg.early_stop.enabled && cfg.early_stop.satisfied(val.acc, val.loss)) {
        rec.stopped_early = true;
        break;
      }
    } catch (const DivergenceError& e) {
      fail(epoch, e.what());
      break;
    } catch (const StiffnessError& e) {
      fail(epoch, e.what());
      break;
    }
  }

  if (!rec.failed) {
    try {
      const Tensor logp = eval_forward(model, op, tape, keep, x);
      const Eval test = evaluate(logp, dataset, dataset.test);
      rec.train_acc = accuracy(logp, dataset.labels, dataset.train);
      rec.test_acc = test.acc;
      rec.test_loss = test.loss;
      if (!std::isfinite(test.loss)) fail(rec.epochs_run, "non-finite test loss");
    } catch (const DivergenceError& e) {
      fail(rec.epochs_run, e.what());
    } catch (const StiffnessError& e) {
      fail(rec.epochs_run, e.what());
    }
  }
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

MultiSeedResult multi_seed(const ModelSpec& spec, const CitationDataset& dataset, const TrainConfig& cfg,
                           std::size_t n_seeds, std::size_t jobs, std::uint64_t seed_base) {
  if (n_seeds == 0) throw ConfigError("multi_seed needs at least one seed");
  cfg.validate();
  spec.validate();
  const SparseMatrix op = propagation_operator(dataset.adjacency, cfg.normalization);
  MultiSeedResult out;
  out.runs.resize(n_seeds);

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n_seeds);
  auto worker = [&] {
    for (std::size_t i = next++; i < n_seeds; i = next++) {
      TrainConfig c = cfg;
      c.seed = seed_base + i;
      try {
        out.runs[i] = train_run(spec, dataset, op, c);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, n_seeds);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  out.aggregate = aggregate(out.runs);
  return out;
}

}  // namespace resgcn
