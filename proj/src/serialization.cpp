#include "resgcn/serialization.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "resgcn/errors.hpp"

namespace resgcn {

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or(const json& j, double fallback) { return j.is_null() ? fallback : j.get<double>(); }

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json series(const std::vector<double>& xs) {
  json out = json::array();
  for (double x : xs) out.push_back(number(x));
  return out;
}

std::vector<double> series_from(const json& j) {
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& x : j) out.push_back(number_or(x, kNaN));
  return out;
}

std::string method_name(OdeMethod m) { return m == OdeMethod::Rk4 ? "rk4" : "dopri5"; }

OdeMethod parse_method(const std::string& s) {
  if (s == "rk4") return OdeMethod::Rk4;
  if (s == "dopri5") return OdeMethod::Dopri5;
  throw ConfigError("unknown solver '" + s + "' (expected rk4 or dopri5)");
}

std::string grad_name(GradMode g) { return g == GradMode::Adjoint ? "adjoint" : "discretize"; }

GradMode parse_grad(const std::string& s) {
  if (s == "adjoint") return GradMode::Adjoint;
  if (s == "discretize") return GradMode::Discretize;
  throw ConfigError("unknown gradient mode '" + s + "' (expected discretize or adjoint)");
}

std::string init_name(InitScheme s) { return s == InitScheme::Glorot ? "glorot" : "uniform"; }

InitScheme parse_init(const std::string& s) {
  if (s == "glorot") return InitScheme::Glorot;
  if (s == "uniform") return InitScheme::Uniform;
  throw ConfigError("unknown init scheme '" + s + "' (expected uniform or glorot)");
}

template <class T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string normalization_name(Normalization n) { return n == Normalization::Symmetric ? "symmetric" : "row"; }

Normalization parse_normalization(const std::string& name) {
  if (name == "row") return Normalization::Row;
  if (name == "symmetric") return Normalization::Symmetric;
  throw ConfigError("unknown normalization '" + name + "' (expected row or symmetric)");
}

json to_json(const OdeSolverConfig& cfg) {
  return {{"method", method_name(cfg.method)}, {"t0", cfg.t0},       {"t1", cfg.t1},
          {"steps", cfg.steps},                {"rtol", cfg.rtol},   {"atol", cfg.atol},
          {"grad", grad_name(cfg.grad_mode)},  {"max_evals", cfg.max_evals}};
}

OdeSolverConfig solver_config_from_json(const json& j) {
  OdeSolverConfig cfg;
  if (j.contains("method")) cfg.method = parse_method(j.at("method").get<std::string>());
  read_if(j, "t0", cfg.t0);
  read_if(j, "t1", cfg.t1);
  read_if(j, "steps", cfg.steps);
  read_if(j, "rtol", cfg.rtol);
  read_if(j, "atol", cfg.atol);
  if (j.contains("grad")) cfg.grad_mode = parse_grad(j.at("grad").get<std::string>());
  read_if(j, "max_evals", cfg.max_evals);
  return cfg;
}

json to_json(const ModelSpec& spec) {
  return {{"variant", variant_name(spec.variant)},
          {"layers", spec.layers},
          {"hidden", spec.hidden},
          {"input_features", spec.input_features},
          {"num_classes", spec.num_classes},
          {"input_dropout", spec.input_dropout},
          {"init", init_name(spec.init)},
          {"residual_stride", spec.residual_stride},
          {"norm_groups", spec.norm_groups},
          {"slice_output", spec.slice_output},
          {"solver", to_json(spec.solver)}};
}

ModelSpec model_spec_from_json(const json& j) {
  ModelSpec spec;
  if (j.contains("variant")) spec.variant = parse_variant(j.at("variant").get<std::string>());
  read_if(j, "layers", spec.layers);
  read_if(j, "hidden", spec.hidden);
  read_if(j, "input_features", spec.input_features);
  read_if(j, "num_classes", spec.num_classes);
  read_if(j, "input_dropout", spec.input_dropout);
  if (j.contains("init")) spec.init = parse_init(j.at("init").get<std::string>());
  read_if(j, "residual_stride", spec.residual_stride);
  read_if(j, "norm_groups", spec.norm_groups);
  read_if(j, "slice_output", spec.slice_output);
  if (j.contains("solver")) spec.solver = solver_config_from_json(j.at("solver"));
  return spec;
}

json to_json(const TrainConfig& cfg) {
  const EarlyStopConfig& es = cfg.early_stop;
  return {{"lr", cfg.lr},
          {"weight_decay", cfg.weight_decay},
          {"dropout_p", cfg.dropout_p},
          {"max_epochs", cfg.max_epochs},
          {"seed", cfg.seed},
          {"normalization", normalization_name(cfg.normalization)},
          {"early_stop",
           {{"enabled", es.enabled},
            {"acc_floor", es.acc_floor},
            {"loss_ceiling", number(es.loss_ceiling)},
            {"reference_acc", es.reference_acc},
            {"reference_loss", number(es.reference_loss)}}}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  read_if(j, "lr", cfg.lr);
  read_if(j, "weight_decay", cfg.weight_decay);
  read_if(j, "dropout_p", cfg.dropout_p);
  read_if(j, "max_epochs", cfg.max_epochs);
  read_if(j, "seed", cfg.seed);
  if (j.contains("normalization")) cfg.normalization = parse_normalization(j.at("normalization").get<std::string>());
  if (j.contains("early_stop")) {
    const json& es = j.at("early_stop");
    read_if(es, "enabled", cfg.early_stop.enabled);
    read_if(es, "acc_floor", cfg.early_stop.acc_floor);
    if (es.contains("loss_ceiling")) cfg.early_stop.loss_ceiling = number_or(es.at("loss_ceiling"), kInf);
    read_if(es, "reference_acc", cfg.early_stop.reference_acc);
    if (es.contains("reference_loss")) cfg.early_stop.reference_loss = number_or(es.at("reference_loss"), kInf);
  }
  return cfg;
}

json to_json(const RunRecord& run) {
  return {{"seed", run.seed},
          {"train_loss", series(run.train_loss)},
          {"val_loss", series(run.val_loss)},
          {"val_acc", series(run.val_acc)},
          {"train_acc", number(run.train_acc)},
          {"test_acc", number(run.test_acc)},
          {"test_loss", number(run.test_loss)},
          {"epochs_run", run.epochs_run},
          {"stopped_early", run.stopped_early},
          {"wall_time", run.wall_time},
          {"failed", run.failed},
          {"failed_epoch", run.failed_epoch},
          {"failure", run.failure}};
}

RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.train_loss = series_from(j.at("train_loss"));
  r.val_loss = series_from(j.at("val_loss"));
  r.val_acc = series_from(j.at("val_acc"));
  r.train_acc = number_or(j.at("train_acc"), kNaN);
  r.test_acc = number_or(j.at("test_acc"), kNaN);
  r.test_loss = number_or(j.at("test_loss"), kNaN);
  r.epochs_run = j.at("epochs_run").get<std::size_t>();
  r.stopped_early = j.at("stopped_early").get<bool>();
  r.wall_time = j.at("wall_time").get<double>();
  r.failed = j.at("failed").get<bool>();
  r.failed_epoch = j.at("failed_epoch").get<std::size_t>();
  r.failure = j.at("failure").get<std::string>();
  return r;
}

json to_json(const AggregateStats& s) {
  return {{"runs", s.runs},
          {"failed_runs", s.failed_runs},
          {"acc_avg", number(s.acc_avg)},
          {"acc_std", number(s.acc_std)},
          {"acc_min", number(s.acc_min)},
          {"acc_max", number(s.acc_max)},
          {"loss_avg", number(s.loss_avg)},
          {"time_avg", number(s.time_avg)},
          {"hit_ratio", number(s.hit_ratio)},
          {"accuracies", s.accuracies}};
}

AggregateStats aggregate_from_json(const json& j) {
  AggregateStats s;
  s.runs = j.at("runs").get<std::size_t>();
  s.failed_runs = j.at("failed_runs").get<std::size_t>();
  s.acc_avg = number_or(j.at("acc_avg"), kNaN);
  s.acc_std = number_or(j.at("acc_std"), kNaN);
  s.acc_min = number_or(j.at("acc_min"), kNaN);
  s.acc_max = number_or(j.at("acc_max"), kNaN);
  s.loss_avg = number_or(j.at("loss_avg"), kNaN);
  s.time_avg = number_or(j.at("time_avg"), kNaN);
  s.hit_ratio = number_or(j.at("hit_ratio"), kNaN);
  s.accuracies = j.at("accuracies").get<std::vector<double>>();
  return s;
}

json to_json(const ResultsFile& r) {
  json runs = json::array();
  for (const RunRecord& run : r.per_seed) runs.push_back(to_json(run));
  return {{"dataset", r.dataset},
          {"deterministic", r.deterministic},
          {"spec", to_json(r.spec)},
          {"train_cfg", to_json(r.train_cfg)},
          {"per_seed", runs},
          {"aggregate", to_json(r.aggregate)}};
}

namespace {

bool is_number_or_null(const json& j) { return j.is_number() || j.is_null(); }

std::string check_fields(const json& j, const std::string& path,
                         std::initializer_list<std::pair<const char*, bool (*)(const json&)>> fields) {
  if (!j.is_object()) return path + ": expected an object";
  for (const auto& [key, ok] : fields) {
    if (!j.contains(key)) return path + ": missing '" + key + "'";
    if (!ok(j.at(key))) return path + "." + key + ": wrong type";
  }
  return {};
}

bool is_string(const json& j) { return j.is_string(); }
bool is_bool(const json& j) { return j.is_boolean(); }
bool is_uint(const json& j) { return j.is_number_unsigned(); }
bool is_num(const json& j) { return j.is_number(); }
bool is_object(const json& j) { return j.is_object(); }
bool is_array(const json& j) { return j.is_array(); }
bool is_series(const json& j) {
  if (!j.is_array()) return false;
  for (const auto& x : j) {
    if (!is_number_or_null(x)) return false;
  }
  return true;
}
bool is_unit_or_null(const json& j) {
  return j.is_null() || (j.is_number() && j.get<double>() >= 0.0 && j.get<double>() <= 1.0);
}

}  // namespace

std::string results_schema_violation(const json& j) {
  std::string err = check_fields(j, "$",
                                 {{"dataset", is_string},
                                  {"deterministic", is_bool},
                                  {"spec", is_object},
                                  {"train_cfg", is_object},
                                  {"per_seed", is_array},
                                  {"aggregate", is_object}});
  if (!err.empty()) return err;
  err = check_fields(j.at("spec"), "$.spec",
                     {{"variant", is_string}, {"layers", is_uint}, {"hidden", is_uint}, {"solver", is_object}});
  if (!err.empty()) return err;
  err = check_fields(j.at("train_cfg"), "$.train_cfg",
                     {{"lr", is_num}, {"weight_decay", is_num}, {"dropout_p", is_num}, {"max_epochs", is_uint},
                      {"early_stop", is_object}});
  if (!err.empty()) return err;
  const json& runs = j.at("per_seed");
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::string path = "$.per_seed[" + std::to_string(i) + "]";
    err = check_fields(runs[i], path,
                       {{"seed", is_uint},
                        {"train_loss", is_series},
                        {"val_loss", is_series},
                        {"val_acc", is_series},
                        {"train_acc", is_unit_or_null},
                        {"test_acc", is_unit_or_null},
                        {"test_loss", is_number_or_null},
                        {"epochs_run", is_uint},
                        {"stopped_early", is_bool},
                        {"wall_time", is_num},
                        {"failed", is_bool},
                        {"failed_epoch", is_uint},
                        {"failure", is_string}});
    if (!err.empty()) return err;
    const std::size_t epochs = runs[i].at("epochs_run").get<std::size_t>();
    if (epochs > j.at("train_cfg").at("max_epochs").get<std::size_t>()) return path + ".epochs_run: exceeds max_epochs";
    if (runs[i].at("val_acc").size() != epochs) return path + ".val_acc: length differs from epochs_run";
  }
  err = check_fields(j.at("aggregate"), "$.aggregate",
                     {{"runs", is_uint},
                      {"failed_runs", is_uint},
                      {"acc_avg", is_number_or_null},
                      {"acc_std", is_number_or_null},
                      {"acc_min", is_number_or_null},
                      {"acc_max", is_number_or_null},
                      {"loss_avg", is_number_or_null},
                      {"time_avg", is_number_or_null},
                      {"hit_ratio", is_number_or_null},
                      {"accuracies", is_array}});
  if (!err.empty()) return err;
  const json& agg = j.at("aggregate");
  if (agg.at("runs").get<std::size_t>() != runs.size()) return "$.aggregate.runs: differs from per_seed length";
  if (agg.at("acc_std").is_number() && agg.at("acc_std").get<double>() < 0.0) return "$.aggregate.acc_std: negative";
  for (const auto& a : agg.at("accuracies")) {
    if (!a.is_number() || a.get<double>() < 0.0 || a.get<double>() > 1.0) {
      return "$.aggregate.accuracies: entries must lie in [0, 1]";
    }
  }
  return {};
}

ResultsFile results_from_json(const json& j) {
  if (const std::string err = results_schema_violation(j); !err.empty()) {
    throw LoadError("results file does not match schema: " + err);
  }
  ResultsFile r;
  r.dataset = j.at("dataset").get<std::string>();
  r.deterministic = j.at("deterministic").get<bool>();
  r.spec = model_spec_from_json(j.at("spec"));
  r.train_cfg = train_config_from_json(j.at("train_cfg"));
  for (const auto& run : j.at("per_seed")) r.per_seed.push_back(run_record_from_json(run));
  r.aggregate = aggregate_from_json(j.at("aggregate"));
  return r;
}

void write_results(const ResultsFile& results, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << to_json(results).dump(2) << "\n";
  if (!out) throw Error("cannot write results to " + path.string());
}

ResultsFile read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open results file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  return results_from_json(j);
}

EarlyStopConfig apply_anchors(EarlyStopConfig cfg, const json& anchors, const std::string& dataset) {
  if (!anchors.contains(dataset)) throw ConfigError("no early-stop anchors for dataset '" + dataset + "'");
  const json& a = anchors.at(dataset);
  cfg.reference_acc = a.at("acc").get<double>();
  cfg.reference_loss = a.at("loss").get<double>();
  return cfg;
}

}  // namespace resgcn
