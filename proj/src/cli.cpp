#include "resgcn/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "resgcn/dataset.hpp"
#include "resgcn/errors.hpp"
#include "resgcn/serialization.hpp"

#ifndef RESGCN_DEFAULT_DATA_DIR
#define RESGCN_DEFAULT_DATA_DIR "data"
#endif

namespace resgcn {

namespace {

std::string base_of(Variant v) {
  switch (v) {
    case Variant::Gcn:
    case Variant::GcnNorm:
      return "gcn";
    case Variant::Res:
    case Variant::ResNorm:
    case Variant::ResFullnorm:
      return "res";
    case Variant::OdeNorm:
    case Variant::OdeFullnorm:
      return "ode";
  }
  return "gcn";
}

std::filesystem::path default_anchors_path() {
  if (const char* env = std::getenv("RESGCN_DATA_DIR"); env != nullptr && *env != '\0') {
    const std::filesystem::path p = std::filesystem::path(env) / "anchors.json";
    if (std::filesystem::exists(p)) return p;
  }
  return std::filesystem::path(RESGCN_DEFAULT_DATA_DIR) / "anchors.json";
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

CitationDataset load_for(const std::string& dataset) { return load_dataset(resolve_dataset_path(dataset)); }

TrainConfig resolve_train(const ExperimentConfig& cfg, const std::string& dataset_name) {
  TrainConfig t = cfg.train;
  if (t.early_stop.enabled) {
    const nlohmann::json anchors = read_json(cfg.anchors.value_or(default_anchors_path()));
    t.early_stop = apply_anchors(t.early_stop, anchors, dataset_name);
  }
  return t;
}

std::filesystem::path with_suffix(std::filesystem::path p, const std::string& suffix) {
  p.replace_extension();
  return p.string() + suffix;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

std::string label_for(const ModelSpec& spec) { return variant_name(spec.variant) + "-" + std::to_string(spec.layers); }

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.empty()) throw ConfigError("no dataset given");
  if (seeds == 0) throw ConfigError("seeds must be at least 1");
  if (jobs == 0) throw ConfigError("jobs must be at least 1");
  if (depth_min == 0 || depth_min > depth_max) throw ConfigError("empty depth range");
  train.validate();
}

Variant variant_from(const std::string& model, const std::optional<std::string>& norm) {
  if (!norm) {
    if (model == "ode") return Variant::OdeNorm;
    return parse_variant(model);
  }
  if (model != "gcn" && model != "res" && model != "ode") {
    throw ConfigError("--norm needs --model gcn, res or ode, got '" + model + "'");
  }
  if (*norm == "none") {
    if (model == "ode") throw ConfigError("the continuous model always normalizes its input; use --norm mid or full");
    return parse_variant(model);
  }
  if (*norm == "mid") return parse_variant(model + "-norm");
  if (*norm == "full") {
    if (model == "gcn") throw ConfigError("gcn has no fullnorm variant");
    return parse_variant(model + "-fullnorm");
  }
  throw ConfigError("unknown norm '" + *norm + "' (expected none, mid or full)");
}

std::pair<std::size_t, std::size_t> parse_depth_range(const std::string& text) {
  std::size_t lo = 0;
  std::size_t hi = 0;
  std::string rest;
  std::istringstream in(text);
  if (!(in >> lo)) throw ConfigError("bad depth range '" + text + "'");
  std::getline(in, rest);
  if (rest.empty()) return {lo, lo};
  const std::size_t skip = rest.starts_with("..") ? 2 : (rest.starts_with("-") ? 1 : 0);
  if (skip == 0) throw ConfigError("bad depth range '" + text + "'");
  std::istringstream tail(rest.substr(skip));
  if (!(tail >> hi) || hi < lo) throw ConfigError("bad depth range '" + text + "'");
  return {lo, hi};
}

ExperimentConfig apply_config(ExperimentConfig cfg, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  auto get = [&](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  try {
    get("dataset", cfg.dataset);
    if (j.contains("model") || j.contains("norm")) {
      const std::string model = j.value("model", base_of(cfg.spec.variant));
      std::optional<std::string> norm;
      if (j.contains("norm")) norm = j.at("norm").get<std::string>();
      cfg.spec.variant = variant_from(model, norm);
    }
    get("layers", cfg.spec.layers);
    get("hidden", cfg.spec.hidden);
    get("input-dropout", cfg.spec.input_dropout);
    get("residual-stride", cfg.spec.residual_stride);
    get("norm-groups", cfg.spec.norm_groups);
    get("slice", cfg.spec.slice_output);
    if (j.contains("init")) {
      cfg.spec.init = model_spec_from_json({{"init", j.at("init")}}).init;
    }
    nlohmann::json solver;
    for (const char* key : {"steps", "rtol", "atol", "t1", "max-evals"}) {
      if (j.contains(key)) solver[std::string(key) == "max-evals" ? "max_evals" : key] = j.at(key);
    }
    if (j.contains("solver")) solver["method"] = j.at("solver");
    if (j.contains("grad")) solver["grad"] = j.at("grad");
    if (!solver.empty()) {
      nlohmann::json merged = to_json(cfg.spec.solver);
      merged.update(solver);
      cfg.spec.solver = solver_config_from_json(merged);
    }

    get("lr", cfg.train.lr);
    get("weight-decay", cfg.train.weight_decay);
    get("dropout", cfg.train.dropout_p);
    get("epochs", cfg.train.max_epochs);
    get("early-stop", cfg.train.early_stop.enabled);
    get("acc-floor", cfg.train.early_stop.acc_floor);
    get("loss-ceiling", cfg.train.early_stop.loss_ceiling);
    if (j.contains("normalization")) cfg.train.normalization = parse_normalization(j.at("normalization").get<std::string>());

    get("seeds", cfg.seeds);
    get("jobs", cfg.jobs);
    get("deterministic", cfg.deterministic);
    if (j.contains("anchors")) cfg.anchors = j.at("anchors").get<std::string>();
    if (j.contains("out")) cfg.out = j.at("out").get<std::string>();
    if (j.contains("depths")) std::tie(cfg.depth_min, cfg.depth_max) = parse_depth_range(j.at("depths").get<std::string>());
    if (j.contains("models")) {
      cfg.sweep_models.clear();
      std::istringstream in(j.at("models").get<std::string>());
      for (std::string name; std::getline(in, name, ',');) {
        if (!name.empty()) cfg.sweep_models.push_back(variant_from(name, std::nullopt));
      }
      if (cfg.sweep_models.empty()) throw ConfigError("empty model list");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return cfg;
}

std::string format_table_row(const std::string& label, const AggregateStats& s) {
  std::ostringstream out;
  out << std::left << std::setw(18) << label << std::right << std::fixed << std::setprecision(2) << " acc "
      << std::setw(6) << 100.0 * s.acc_avg << " +- " << std::setw(5) << 100.0 * s.acc_std << "  min " << std::setw(6)
      << 100.0 * s.acc_min << "  max " << std::setw(6) << 100.0 * s.acc_max << std::setprecision(4) << "  loss "
      << s.loss_avg << std::setprecision(2) << "  time " << s.time_avg << "s";
  if (s.failed_runs > 0) out << "  failed " << s.failed_runs << "/" << s.runs;
  return out.str();
}

std::string curves_csv(const std::vector<RunRecord>& runs) {
  std::ostringstream out;
  out.precision(17);
  out << "seed,epoch,train_loss,val_loss,val_acc\n";
  for (const RunRecord& r : runs) {
    for (std::size_t e = 0; e < r.val_acc.size(); ++e) {
      out << r.seed << "," << e + 1 << "," << r.train_loss[e] << "," << r.val_loss[e] << "," << r.val_acc[e] << "\n";
    }
  }
  return out.str();
}

int cmd_run(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    cfg.validate();
    const CitationDataset ds = load_for(cfg.dataset);
    const ModelSpec spec = fit_to_dataset(cfg.spec, ds);
    spec.validate();
    const TrainConfig train = resolve_train(cfg, ds.name);

    ResultsFile results;
    results.dataset = ds.name;
    results.spec = spec;
    results.train_cfg = train;
    results.deterministic = cfg.deterministic;
    MultiSeedResult ms = multi_seed(spec, ds, train, cfg.seeds, cfg.jobs);
    results.per_seed = std::move(ms.runs);
    results.aggregate = std::move(ms.aggregate);

    const std::filesystem::path path =
        cfg.out.empty() ? std::filesystem::path("results") / (ds.name + "-" + label_for(spec) + ".json") : cfg.out;
    write_results(results, path);
    write_text(with_suffix(path, ".hist.csv"), histogram_csv(histogram(results.aggregate.accuracies, 50, 0.0, 1.0)));
    write_text(with_suffix(path, ".curves.csv"), curves_csv(results.per_seed));
    out << format_table_row(label_for(spec), results.aggregate) << "\n";
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_sweep(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    cfg.validate();
    const CitationDataset ds = load_for(cfg.dataset);
    const TrainConfig train = resolve_train(cfg, ds.name);
    const std::filesystem::path dir = cfg.out.empty() ? std::filesystem::path("results") / (ds.name + "-sweep") : cfg.out;

    for (Variant v : cfg.sweep_models) {
      std::ostringstream csv;
      csv.precision(17);
      csv << "depth,acc_mean,acc_std,iters_mean,hit_ratio\n";
      for (std::size_t depth = cfg.depth_min; depth <= cfg.depth_max; ++depth) {
        ModelSpec spec = fit_to_dataset(cfg.spec, ds);
        spec.variant = v;
        spec.layers = depth;
        spec.validate();
        const MultiSeedResult ms = multi_seed(spec, ds, train, cfg.seeds, cfg.jobs);

        // Accuracy over runs that hit the stopping rule; iterations over all
        // successful runs, so a run that never hits counts max_epochs.
        std::vector<double> hit_acc;
        double iters = 0.0;
        std::size_t ok = 0;
        for (const RunRecord& r : ms.runs) {
          if (r.failed) continue;
          ++ok;
          iters += static_cast<double>(r.epochs_run);
          if (r.stopped_early) hit_acc.push_back(r.test_acc);
        }
        double mean = std::nan("");
        double sd = std::nan("");
        if (!hit_acc.empty()) {
          mean = 0.0;
          for (double a : hit_acc) mean += a;
          mean /= static_cast<double>(hit_acc.size());
          double sq = 0.0;
          for (double a : hit_acc) sq += (a - mean) * (a - mean);
          sd = std::sqrt(sq / static_cast<double>(hit_acc.size()));
        }
        const double iters_mean = ok > 0 ? iters / static_cast<double>(ok) : std::nan("");
        csv << depth << "," << mean << "," << sd << "," << iters_mean << "," << ms.aggregate.hit_ratio << "\n";
        out << format_table_row(label_for(spec), ms.aggregate) << "  hit " << std::fixed << std::setprecision(2)
            << ms.aggregate.hit_ratio << "  iters " << iters_mean << "\n";
      }
      write_text(dir / ("sweep-" + variant_name(v) + ".csv"), csv.str());
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_compare(const std::filesystem::path& a, const std::filesystem::path& b, const std::string& test,
                std::ostream& out, std::ostream& err) {
  try {
    const ResultsFile ra = read_results(a);
    const ResultsFile rb = read_results(b);
    const auto& xa = ra.aggregate.accuracies;
    const auto& xb = rb.aggregate.accuracies;
    if (xa.empty() || xb.empty()) throw LoadError("results file has no accuracy samples");
    TestResult res;
    if (test == "mw") {
      res = mann_whitney_u(xa, xb);
    } else if (test == "kw") {
      const std::vector<std::vector<double>> groups{xa, xb};
      res = kruskal_wallis(groups);
    } else {
      throw ConfigError("unknown test '" + test + "' (expected mw or kw)");
    }
    out << res.method << "  statistic " << std::setprecision(10) << res.statistic << "  p " << res.p_value << "\n";
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_validate_dataset(const std::string& dataset, std::ostream& out, std::ostream& err) {
  try {
    const CitationDataset ds = load_for(dataset);
    validate_dataset(ds);
    out << ds.name << ": " << ds.num_nodes() << " nodes, " << ds.num_features() << " features, " << ds.num_classes
        << " classes, " << ds.adjacency.nnz() / 2 << " edges, masks " << ds.train.size() << "/" << ds.val.size() << "/"
        << ds.test.size() << "\n";
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace resgcn
