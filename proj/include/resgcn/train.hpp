#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "resgcn/dataset.hpp"
#include "resgcn/model.hpp"

namespace resgcn {

/// Stop once val accuracy > acc_floor * reference_acc and
/// val loss < loss_ceiling * reference_loss.
struct EarlyStopConfig {
  bool enabled = false;
  double acc_floor = 0.9;
  double loss_ceiling = 1.1;
  double reference_acc = 0.0;
  double reference_loss = std::numeric_limits<double>::infinity();

  bool satisfied(double val_acc, double val_loss) const;
  friend bool operator==(const EarlyStopConfig&, const EarlyStopConfig&) = default;
};

struct TrainConfig {
  double lr = 0.01;
  double weight_decay = 5e-4;
  double dropout_p = 0.5;
  std::size_t max_epochs = 200;
  EarlyStopConfig early_stop;
  std::uint64_t seed = 0;
  Normalization normalization = Normalization::Row;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_acc;
  double train_acc = 0.0;  // eval mode, after the last epoch
  double test_acc = 0.0;
  double test_loss = 0.0;
  std::size_t epochs_run = 0;
  bool stopped_early = false;
  double wall_time = 0.0;  // seconds, excluding dataset load
  bool failed = false;
  std::size_t failed_epoch = 0;
  std::string failure;
};

struct AggregateStats {
  std::size_t runs = 0;
  std::size_t failed_runs = 0;
  double acc_avg = 0.0;
  double acc_std = 0.0;  // population
  double acc_min = 0.0;
  double acc_max = 0.0;
  double loss_avg = 0.0;
  double time_avg = 0.0;
  double hit_ratio = 0.0;  // share of successful runs that met the early-stop rule
  std::vector<double> accuracies;
};

/// Aggregates successful runs in the given order; failed runs are only counted.
AggregateStats aggregate(std::span<const RunRecord> runs);

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;

  static AdamState zeros_like(std::span<const Parameter> params);
};

/// decay * W for decaying parameters, zeros elsewhere.
std::vector<Tensor> weight_decay_gradient(std::span<const Parameter> params, double decay);

/// One bias-corrected Adam update. The L2 term decay * W is added to the
/// gradients of decaying parameters before the moments are updated.
void adam_step(std::span<Parameter> params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& cfg);

/// Fraction of `mask` nodes whose argmax matches the label.
double accuracy(const Tensor& logp, std::span<const std::size_t> labels, std::span<const std::size_t> mask);

/// Trains one model from seed cfg.seed with full-graph Adam steps on the
/// training mask, evaluating the validation mask in eval mode each epoch.
RunRecord train_run(const ModelSpec& spec, const CitationDataset& dataset, const TrainConfig& cfg);
RunRecord train_run(const ModelSpec& spec, const CitationDataset& dataset, const SparseMatrix& op,
                    const TrainConfig& cfg);

struct MultiSeedResult {
  std::vector<RunRecord> runs;
  AggregateStats aggregate;
};

/// Seeds seed_base .. seed_base + n_seeds - 1, optionally on `jobs` threads.
/// Each run owns its tape, model and generator, so results do not depend on
/// scheduling.
MultiSeedResult multi_seed(const ModelSpec& spec, const CitationDataset& dataset, const TrainConfig& cfg,
                           std::size_t n_seeds, std::size_t jobs = 1, std::uint64_t seed_base = 0);

/// Copy of `spec` with input/output widths taken from the dataset.
ModelSpec fit_to_dataset(ModelSpec spec, const CitationDataset& dataset);

}  // namespace resgcn
