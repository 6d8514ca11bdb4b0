#include "resgcn/model.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "resgcn/errors.hpp"
#include "resgcn/serialization.hpp"

namespace resgcn {

namespace {

constexpr std::array<std::pair<Variant, const char*>, 7> kVariantNames{{
    {Variant::Gcn, "gcn"},
    {Variant::GcnNorm, "gcn-norm"},
    {Variant::Res, "res"},
    {Variant::ResNorm, "res-norm"},
    {Variant::ResFullnorm, "res-fullnorm"},
    {Variant::OdeNorm, "ode-norm"},
    {Variant::OdeFullnorm, "ode-fullnorm"},
}};

enum class GapKind { Dropout, Norm };

GapKind gap_kind(Variant v, std::size_t gap_index) {
  switch (v) {
    case Variant::Gcn:
    case Variant::Res:
      return GapKind::Dropout;
    case Variant::GcnNorm:
    case Variant::ResNorm:
    case Variant::OdeNorm:
      return gap_index == 0 ? GapKind::Dropout : GapKind::Norm;
    case Variant::ResFullnorm:
    case Variant::OdeFullnorm:
      return GapKind::Norm;
  }
  return GapKind::Dropout;
}

class Builder {
 public:
  Builder(const ModelSpec& spec, Rng& rng) : spec_(spec), rng_(rng) {}

  ConvStage conv(const std::string& prefix, std::size_t in, std::size_t out, bool activation) {
    LayerParams p = init_params(in, out, spec_.init, rng_);
    ConvStage s{params_.size(), params_.size() + 1, activation};
    params_.push_back({prefix + ".weight", std::move(p.weight), true});
    params_.push_back({prefix + ".bias", std::move(p.bias), false});
    return s;
  }

  NormStage norm(const std::string& prefix, std::size_t width) {
    NormStage s{params_.size(), params_.size() + 1};
    params_.push_back({prefix + ".gamma", Tensor({width}, 1.0), false});
    params_.push_back({prefix + ".beta", Tensor({width}, 0.0), false});
    return s;
  }

  void gap(std::size_t index) {
    const std::string prefix = "gap" + std::to_string(index + 1);
    if (gap_kind(spec_.variant, index) == GapKind::Norm) {
      stages_.emplace_back(norm(prefix + ".norm", spec_.hidden));
    } else {
      stages_.emplace_back(DropoutStage{});
    }
  }

  Model finish() { return Model(spec_, std::move(params_), std::move(stages_)); }

  std::vector<Stage>& stages() { return stages_; }

 private:
  const ModelSpec& spec_;
  Rng& rng_;
  std::vector<Parameter> params_;
  std::vector<Stage> stages_;
};

}  // namespace

std::string variant_name(Variant v) {
  for (const auto& [variant, name] : kVariantNames) {
    if (variant == v) return name;
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (const auto& [variant, n] : kVariantNames) {
    if (name == n) return variant;
  }
  throw ConfigError("unknown model variant '" + name + "'");
}

bool ModelSpec::is_residual() const {
  return variant == Variant::Res || variant == Variant::ResNorm || variant == Variant::ResFullnorm;
}

bool ModelSpec::is_continuous() const { return variant == Variant::OdeNorm || variant == Variant::OdeFullnorm; }

void ModelSpec::validate() const {
  if (input_features == 0 || num_classes == 0 || hidden == 0) {
    throw ConfigError("model needs positive input, hidden and class dimensions");
  }
  if (residual_stride != 1 && residual_stride != 2) throw ConfigError("residual_stride must be 1 or 2");
  if (norm_groups == 0 || hidden % norm_groups != 0) {
    throw ConfigError(std::to_string(norm_groups) + " norm groups do not divide hidden width " + std::to_string(hidden));
  }
  if (slice_output) {
    if (layers != 2) throw ConfigError("the sliced residual model has exactly two layers");
    if (!is_residual()) throw ConfigError("the sliced model needs a residual variant");
    if (num_classes > hidden) {
      throw ConfigError("cannot slice " + std::to_string(num_classes) + " class scores from " + std::to_string(hidden) +
                        " features");
    }
    return;
  }
  if (layers < 2) throw ConfigError("a model needs at least two layers");
  if ((is_residual() || is_continuous()) && layers < 3) {
    throw ConfigError(variant_name(variant) + " places residual blocks on interior layers and needs layers >= 3");
  }
  if (is_continuous()) solver.validate();
}

Model::Model(ModelSpec spec, std::vector<Parameter> parameters, std::vector<Stage> stages)
    : spec_(std::move(spec)), params_(std::move(parameters)), stages_(std::move(stages)) {}

const Parameter& Model::parameter(const std::string& name) const {
  for (const Parameter& p : params_) {
    if (p.name == name) return p;
  }
  throw ContractError("model has no parameter '" + name + "'");
}

Parameter& Model::parameter(const std::string& name) {
  return const_cast<Parameter&>(static_cast<const Model&>(*this).parameter(name));
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const Parameter& p : params_) total += p.value.size();
  return total;
}

Model build_model(const ModelSpec& spec, Rng& rng) {
  if (spec.slice_output) return build_two_layer_slice(spec, rng);
  spec.validate();
  Builder b(spec, rng);
  const std::size_t h = spec.hidden;
  const std::size_t k = spec.layers;

  b.stages().emplace_back(b.conv("conv1", spec.input_features, h, true));
  b.gap(0);

  // Interior layers 2..k-1.
  std::size_t layer = 2;
  while (layer <= k - 1) {
    const std::string prefix = "conv" + std::to_string(layer);
    const std::size_t span = std::min(spec.residual_stride, k - layer);
    if (spec.variant == Variant::Gcn || spec.variant == Variant::GcnNorm) {
      b.stages().emplace_back(b.conv(prefix, h, h, true));
      b.gap(layer - 1);
      ++layer;
      continue;
    }
    if (spec.is_residual()) {
      ResidualStage block;
      for (std::size_t j = 0; j < span; ++j) {
        block.convs.push_back(b.conv("conv" + std::to_string(layer + j), h, h, true));
        if (j + 1 < span) {
          if (gap_kind(spec.variant, layer + j - 1) == GapKind::Norm) {
            block.inner = b.norm("gap" + std::to_string(layer + j) + ".norm", h);
          } else {
            block.inner = DropoutStage{};
          }
        }
      }
      b.stages().emplace_back(std::move(block));
    } else {
      OdeStage block;
      block.norm = b.norm("ode" + std::to_string(layer) + ".norm", h);
      for (std::size_t j = 0; j < span; ++j) {
        block.convs.push_back(b.conv("ode" + std::to_string(layer) + ".conv" + std::to_string(j + 1), h + 1, h, true));
      }
      b.stages().emplace_back(std::move(block));
    }
    layer += span;
    b.gap(layer - 2);
  }

  b.stages().emplace_back(b.conv("conv" + std::to_string(k), h, spec.num_classes, false));
  return b.finish();
}

Model build_two_layer_slice(const ModelSpec& spec, Rng& rng) {
  ModelSpec s = spec;
  s.slice_output = true;
  s.validate();
  Builder b(s, rng);
  b.stages().emplace_back(b.conv("conv1", s.input_features, s.hidden, true));
  b.stages().emplace_back(DropoutStage{});
  ResidualStage res;
  res.convs.push_back(b.conv("conv2", s.hidden, s.hidden, true));
  b.stages().emplace_back(std::move(res));
  b.stages().emplace_back(SliceStage{s.num_classes});
  return b.finish();
}

std::vector<Var> bind_parameters(const Model& model, Tape& tape) {
  std::vector<Var> out;
  out.reserve(model.parameters().size());
  for (const Parameter& p : model.parameters()) out.push_back(tape.leaf(p.value));
  return out;
}

namespace {

struct ForwardContext {
  const Model& model;
  std::span<const Var> params;
  const SparseMatrix& op;
  const ForwardOptions& options;

  BoundLayer layer(const ConvStage& c) const { return {params[c.weight], params[c.bias]}; }

  Var dropout_stage(const Var& h) const {
    if (!options.training || options.dropout_p == 0.0) return h;
    if (options.rng == nullptr) throw ContractError("training forward with dropout needs an rng");
    return dropout(h, options.dropout_p, true, *options.rng);
  }

  Var norm_stage(const Var& h, const NormStage& n) const {
    return group_norm(h, model.spec().norm_groups, params[n.gamma], params[n.beta]);
  }

  Var operator()(const Var& h, const ConvStage& c) const { return gcn_forward(op, h, layer(c), c.activation); }
  Var operator()(const Var& h, const NormStage& n) const { return norm_stage(h, n); }
  Var operator()(const Var& h, const DropoutStage&) const { return dropout_stage(h); }
  Var operator()(const Var& h, const SliceStage& s) const { return slice_columns(h, 0, s.columns); }

  Var operator()(const Var& h, const ResidualStage& r) const {
    if (r.convs.size() == 1) return res_gcn_forward(op, h, layer(r.convs.front()));
    Var z = h;
    for (std::size_t j = 0; j < r.convs.size(); ++j) {
      z = gcn_forward(op, z, layer(r.convs[j]), true);
      if (j + 1 < r.convs.size() && r.inner) {
        z = std::visit([&](const auto& inner) { return (*this)(z, inner); }, *r.inner);
      }
    }
    return add(h, z);
  }

  Var operator()(const Var& h, const OdeStage& o) const {
    OdeField field;
    field.op = &op;
    for (const ConvStage& c : o.convs) field.layers.push_back(layer(c));
    if (o.norm) field.norm = BoundGroupNorm{params[o.norm->gamma], params[o.norm->beta], model.spec().norm_groups};
    ParamField f = [field](double t, const Var& y, std::span<const Var> p) {
      return ode_field_eval(t, y, field.rebind(p));
    };
    const std::vector<Var> field_params = field.parameters();
    SolveStats stats;
    Var out = odeint(f, h, field_params, model.spec().solver, &stats);
    if (options.ode_stats) {
      options.ode_stats->field_evaluations += stats.field_evaluations;
      options.ode_stats->accepted_steps += stats.accepted_steps;
      options.ode_stats->rejected_steps += stats.rejected_steps;
    }
    return out;
  }
};

}  // namespace

Var forward(const Model& model, std::span<const Var> params, const SparseMatrix& op, const Var& x,
            const ForwardOptions& options) {
  if (params.size() != model.parameters().size()) {
    throw ContractError("forward got " + std::to_string(params.size()) + " parameters, model has " +
                        std::to_string(model.parameters().size()));
  }
  if (x.value().rank() != 2 || x.value().cols() != model.spec().input_features || x.value().rows() != op.cols()) {
    throw DimensionError("model input " + to_string(x.shape()) + " does not match " +
                         std::to_string(model.spec().input_features) + " features on a " + std::to_string(op.rows()) +
                         "-node operator");
  }
  ForwardContext ctx{model, params, op, options};
  Var h = model.spec().input_dropout ? ctx.dropout_stage(x) : x;
  for (const Stage& stage : model.stages()) {
    h = std::visit([&](const auto& s) { return ctx(h, s); }, stage);
  }
  return log_softmax(h);
}

Tensor predict(const Model& model, const SparseMatrix& op, const Tensor& x) {
  Tape tape;
  std::vector<Var> params;
  for (const Parameter& p : model.parameters()) params.push_back(tape.constant(p.value));
  return forward(model, params, op, tape.constant(x), ForwardOptions{}).value();
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json entries = nlohmann::json::array();
  std::vector<double> blob;
  for (const Parameter& p : model.parameters()) {
    entries.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", blob.size()}, {"decays", p.decays}});
    blob.insert(blob.end(), p.value.data().begin(), p.value.data().end());
  }
  const nlohmann::json manifest = {{"spec", to_json(model.spec())}, {"parameters", entries}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
  std::ofstream out(dir / "params.bin", std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(double)));
  if (!out) throw Error("cannot write checkpoint to " + dir.string());
}

Model load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw LoadError("missing checkpoint manifest in " + dir.string());
  const nlohmann::json manifest = nlohmann::json::parse(in);
  const ModelSpec spec = model_spec_from_json(manifest.at("spec"));

  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw LoadError("missing params.bin in " + dir.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  std::vector<double> blob(bytes.size() / sizeof(double));
  std::memcpy(blob.data(), bytes.data(), blob.size() * sizeof(double));

  Rng rng(0);
  Model model = build_model(spec, rng);
  const auto& entries = manifest.at("parameters");
  if (entries.size() != model.parameters().size()) throw LoadError("checkpoint parameter list does not match its spec");
  for (const auto& e : entries) {
    Parameter& p = model.parameter(e.at("name").get<std::string>());
    const Shape shape = e.at("shape").get<Shape>();
    const std::size_t offset = e.at("offset").get<std::size_t>();
    if (shape != p.value.shape() || offset + p.value.size() > blob.size()) {
      throw LoadError("checkpoint entry '" + p.name + "' is inconsistent with the model");
    }
    std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(offset), p.value.size(), p.value.data().begin());
  }
  return model;
}

}  // namespace resgcn
