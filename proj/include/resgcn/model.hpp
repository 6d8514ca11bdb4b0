#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "resgcn/layers.hpp"
#include "resgcn/odeint.hpp"
#include "resgcn/sparse.hpp"

namespace resgcn {

enum class Variant { Gcn, GcnNorm, Res, ResNorm, ResFullnorm, OdeNorm, OdeFullnorm };

/// "gcn", "gcn-norm", "res", "res-norm", "res-fullnorm", "ode-norm", "ode-fullnorm".
std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

/// Declarative model description. Feature widths follow (h, ..., h, c).
struct ModelSpec {
  Variant variant = Variant::Gcn;
  std::size_t layers = 3;
  std::size_t hidden = 16;
  std::size_t input_features = 0;
  std::size_t num_classes = 0;
  bool input_dropout = false;
  InitScheme init = InitScheme::Uniform;
  std::size_t residual_stride = 1;  // 1 or 2 interior layers per residual connection
  std::size_t norm_groups = 4;
  bool slice_output = false;  // two-layer residual model whose scores are the first c columns
  OdeSolverConfig solver;

  bool is_residual() const;
  bool is_continuous() const;
  /// Throws ConfigError on an invalid variant/layer combination.
  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct Parameter {
  std::string name;
  Tensor value;
  bool decays = false;  // weight kernels take L2 decay; biases and norm affine terms do not
};

// Model stages. Indices refer to Model::parameters().
struct ConvStage {
  std::size_t weight = 0;
  std::size_t bias = 0;
  bool activation = true;
};
struct NormStage {
  std::size_t gamma = 0;
  std::size_t beta = 0;
};
struct DropoutStage {};
/// h + conv_k(...conv_1(h)), with an optional stage between the two convolutions.
struct ResidualStage {
  std::vector<ConvStage> convs;
  std::optional<std::variant<DropoutStage, NormStage>> inner;
};
/// Continuous residual block integrated over layer-space.
struct OdeStage {
  std::vector<ConvStage> convs;
  std::optional<NormStage> norm;
};
struct SliceStage {
  std::size_t columns = 0;
};

using Stage = std::variant<ConvStage, NormStage, DropoutStage, ResidualStage, OdeStage, SliceStage>;

class Model {
 public:
  Model(ModelSpec spec, std::vector<Parameter> parameters, std::vector<Stage> stages);

  const ModelSpec& spec() const { return spec_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const std::vector<Stage>& stages() const { return stages_; }
  const Parameter& parameter(const std::string& name) const;
  Parameter& parameter(const std::string& name);
  /// Total number of scalars across all parameters.
  std::size_t parameter_count() const;

 private:
  ModelSpec spec_;
  std::vector<Parameter> params_;
  std::vector<Stage> stages_;
};

/// Materializes the stage layout of a variant:
///   gaps between layers hold dropout (GCN, RES), dropout after the first
///   layer and group norm elsewhere (*-norm), or group norm everywhere
///   (*-fullnorm); interior layers are plain, residual or continuous; the
///   last layer has no activation and is followed by log-softmax.
Model build_model(const ModelSpec& spec, Rng& rng);

/// Two-layer residual model: GCN(in -> h), dropout, residual GCN(h -> h),
/// class scores taken from the first c columns.
Model build_two_layer_slice(const ModelSpec& spec, Rng& rng);

/// Parameters placed on a tape as leaves, in Model::parameters() order.
std::vector<Var> bind_parameters(const Model& model, Tape& tape);

struct ForwardOptions {
  bool training = false;
  double dropout_p = 0.5;
  Rng* rng = nullptr;  // required when training with dropout
  SolveStats* ode_stats = nullptr;  // accumulates over ODE stages when set
};

/// Row-wise log-probabilities, n x c.
Var forward(const Model& model, std::span<const Var> params, const SparseMatrix& op, const Var& x,
            const ForwardOptions& options);

/// Evaluation-mode forward pass on a private tape.
Tensor predict(const Model& model, const SparseMatrix& op, const Tensor& x);

/// Checkpoint directory: manifest.json (spec plus parameter names, shapes and
/// offsets) and params.bin (little-endian float64 blobs in manifest order).
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace resgcn
