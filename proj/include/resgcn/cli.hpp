#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "resgcn/model.hpp"
#include "resgcn/stats.hpp"
#include "resgcn/train.hpp"

namespace resgcn {

struct ExperimentConfig {
  std::string dataset = "tiny10";
  ModelSpec spec;
  TrainConfig train;
  std::size_t seeds = 1;
  std::size_t jobs = 1;
  bool deterministic = false;
  std::optional<std::filesystem::path> anchors;  // defaults to anchors.json in the data directory
  std::filesystem::path out;                     // results file, or directory for sweeps
  std::size_t depth_min = 3;                     // sweep only
  std::size_t depth_max = 5;
  std::vector<Variant> sweep_models{Variant::Gcn, Variant::ResNorm};

  /// Throws ConfigError.
  void validate() const;
};

/// "gcn" | "res" | "ode" combined with norm "none" | "mid" | "full".
/// Full variant names such as "res-norm" are accepted with norm unset.
Variant variant_from(const std::string& model, const std::optional<std::string>& norm);

/// Overlays the keys present in `j` onto `cfg`. Keys match the long flag
/// names without leading dashes ("weight-decay", "early-stop", ...). The
/// tool merges the config file with the given flags, flags winning, and
/// applies the result once.
ExperimentConfig apply_config(ExperimentConfig cfg, const nlohmann::json& j);

/// "3..5", "3-5" or "4".
std::pair<std::size_t, std::size_t> parse_depth_range(const std::string& text);

// Commands return a process exit code and report through `out`/`err`.
int cmd_run(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_sweep(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_compare(const std::filesystem::path& a, const std::filesystem::path& b, const std::string& test,
                std::ostream& out, std::ostream& err);
int cmd_validate_dataset(const std::string& dataset, std::ostream& out, std::ostream& err);

/// Table-row summary: model, avg/std/min/max accuracy in percent, avg loss, avg time.
std::string format_table_row(const std::string& label, const AggregateStats& stats);

/// seed,epoch,train_loss,val_loss,val_acc for every run.
std::string curves_csv(const std::vector<RunRecord>& runs);

}  // namespace resgcn
