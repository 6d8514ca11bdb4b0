#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "resgcn/cli.hpp"
#include "resgcn/errors.hpp"

namespace {

// Options whose values are copied into a JSON overlay when given, so flags
// and the config file share one code path.
class Overlay {
 public:
  template <class T>
  void option(CLI::App& app, const std::string& key, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app.add_option("--" + key, *value, help);
    setters_.push_back([opt, value, key](nlohmann::json& j) {
      if (opt->count() > 0) j[key] = *value;
    });
  }

  void flag(CLI::App& app, const std::string& key, const std::string& help) {
    auto value = std::make_shared<bool>(false);
    CLI::Option* opt = app.add_flag("--" + key, *value, help);
    setters_.push_back([opt, value, key](nlohmann::json& j) {
      if (opt->count() > 0) j[key] = *value;
    });
  }

  nlohmann::json collect() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& set : setters_) set(j);
    return j;
  }

 private:
  std::vector<std::function<void(nlohmann::json&)>> setters_;
};

void add_experiment_options(CLI::App& app, Overlay& o) {
  o.option<std::string>(app, "dataset", "dataset directory or name");
  o.option<std::string>(app, "model", "gcn, res, ode or a full variant name such as res-norm");
  o.option<std::string>(app, "norm", "none, mid or full");
  o.option<std::size_t>(app, "layers", "number of graph convolution layers");
  o.option<std::size_t>(app, "seeds", "runs with seeds 0..n-1");
  o.option<std::size_t>(app, "hidden", "hidden width");
  o.option<double>(app, "lr", "Adam learning rate");
  o.option<double>(app, "weight-decay", "L2 coefficient on weight kernels");
  o.option<double>(app, "dropout", "dropout probability");
  o.option<std::size_t>(app, "epochs", "maximum epochs");
  o.flag(app, "early-stop", "stop on the anchored validation rule");
  o.option<std::string>(app, "anchors", "JSON file of per-dataset reference accuracy and loss");
  o.option<double>(app, "acc-floor", "fraction of the reference accuracy to exceed");
  o.option<double>(app, "loss-ceiling", "fraction of the reference loss to stay under");
  o.option<std::string>(app, "solver", "rk4 or dopri5");
  o.option<std::size_t>(app, "steps", "fixed rk4 steps");
  o.option<double>(app, "rtol", "dopri5 relative tolerance");
  o.option<double>(app, "atol", "dopri5 absolute tolerance");
  o.option<double>(app, "t1", "integration end time");
  o.option<std::size_t>(app, "max-evals", "field evaluation budget per solve");
  o.option<std::string>(app, "grad", "discretize or adjoint");
  o.option<std::string>(app, "init", "uniform or glorot");
  o.flag(app, "input-dropout", "apply dropout to the input features");
  o.option<std::size_t>(app, "residual-stride", "layers per residual connection (1 or 2)");
  o.option<std::size_t>(app, "norm-groups", "group norm groups");
  o.option<std::string>(app, "normalization", "row or symmetric adjacency normalization");
  o.flag(app, "slice", "two-layer residual model with sliced class scores");
  o.option<std::string>(app, "out", "results file (run) or directory (sweep)");
  o.flag(app, "deterministic", "record the run as deterministic");
  o.option<std::size_t>(app, "jobs", "seeds trained in parallel");
}

resgcn::ExperimentConfig resolve(const std::string& config_path, const Overlay& flags,
                                 resgcn::ExperimentConfig base = {}) {
  nlohmann::json merged = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw resgcn::ConfigError("cannot open config " + config_path);
    try {
      merged = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw resgcn::ConfigError(config_path + ": " + e.what());
    }
  }
  merged.update(flags.collect());
  return resgcn::apply_config(std::move(base), merged);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual and continuous graph convolutional networks"};
  app.require_subcommand(1);

  Overlay run_flags;
  std::string run_config;
  CLI::App* run = app.add_subcommand("run", "train a model over several seeds");
  add_experiment_options(*run, run_flags);
  run->add_option("--config", run_config, "JSON config; flags take precedence");

  Overlay sweep_flags;
  std::string sweep_config;
  CLI::App* sweep = app.add_subcommand("sweep", "train each model over a range of depths");
  add_experiment_options(*sweep, sweep_flags);
  sweep->add_option("--config", sweep_config, "JSON config; flags take precedence");
  sweep_flags.option<std::string>(*sweep, "depths", "depth range such as 3..5");
  sweep_flags.option<std::string>(*sweep, "models", "comma-separated variants");

  std::string compare_a;
  std::string compare_b;
  std::string compare_test = "mw";
  CLI::App* compare = app.add_subcommand("compare", "test whether two result files differ");
  compare->add_option("a", compare_a, "results file")->required();
  compare->add_option("b", compare_b, "results file")->required();
  compare->add_option("--test", compare_test, "mw or kw")->check(CLI::IsMember({"mw", "kw"}));

  std::string validate_target;
  CLI::App* validate = app.add_subcommand("validate-dataset", "check a dataset directory");
  validate->add_option("dataset", validate_target, "dataset directory or name")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return resgcn::cmd_run(resolve(run_config, run_flags), std::cout, std::cerr);
    if (*sweep) {
      // Early stopping defaults on for sweeps.
      resgcn::ExperimentConfig base;
      base.train.early_stop.enabled = true;
      return resgcn::cmd_sweep(resolve(sweep_config, sweep_flags, base), std::cout, std::cerr);
    }
    if (*compare) return resgcn::cmd_compare(compare_a, compare_b, compare_test, std::cout, std::cerr);
    if (*validate) return resgcn::cmd_validate_dataset(validate_target, std::cout, std::cerr);
  } catch (const resgcn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
