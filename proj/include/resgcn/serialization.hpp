#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "resgcn/model.hpp"
#include "resgcn/train.hpp"

namespace resgcn {

using nlohmann::json;

// Non-finite doubles are written as null. Thresholds read null back as
// +infinity, per-epoch curves and losses read it back as NaN.

json to_json(const OdeSolverConfig& cfg);
OdeSolverConfig solver_config_from_json(const json& j);

json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const json& j);

json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const json& j);

json to_json(const RunRecord& run);
RunRecord run_record_from_json(const json& j);

json to_json(const AggregateStats& stats);
AggregateStats aggregate_from_json(const json& j);

std::string normalization_name(Normalization n);
Normalization parse_normalization(const std::string& name);

struct ResultsFile {
  std::string dataset;
  ModelSpec spec;
  TrainConfig train_cfg;
  bool deterministic = false;
  std::vector<RunRecord> per_seed;
  AggregateStats aggregate;
};

json to_json(const ResultsFile& results);
/// Validates against the results schema first; throws LoadError.
ResultsFile results_from_json(const json& j);

/// Structural check mirroring schemas/results.schema.json. Returns an empty
/// string when `j` conforms, otherwise the first violation as "path: problem".
std::string results_schema_violation(const json& j);

void write_results(const ResultsFile& results, const std::filesystem::path& path);
ResultsFile read_results(const std::filesystem::path& path);

/// Early-stop anchors per dataset: {"cora": {"acc": 0.7595, "loss": 0.8554}, ...}.
/// Throws ConfigError when `dataset` has no entry.
EarlyStopConfig apply_anchors(EarlyStopConfig cfg, const json& anchors, const std::string& dataset);

}  // namespace resgcn
