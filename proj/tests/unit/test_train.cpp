#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "resgcn/dataset.hpp"
#include "resgcn/errors.hpp"
#include "resgcn/train.hpp"

using namespace resgcn;
using resgcn::testing::random_tensor;

namespace {

ModelSpec tiny_spec(Variant v, std::size_t layers = 3) {
  ModelSpec s;
  s.variant = v;
  s.layers = layers;
  s.hidden = 8;
  s.solver.method = OdeMethod::Rk4;
  s.solver.steps = 2;
  return fit_to_dataset(s, make_tiny10());
}

std::vector<Parameter> two_params(Rng& rng) {
  return {{"w", random_tensor({3, 2}, rng), true}, {"b", random_tensor({2}, rng), false}};
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.dropout_p = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.max_epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("adam: zero gradient on fresh state leaves parameters") {
  Rng rng(71);
  std::vector<Parameter> p = two_params(rng);
  const std::vector<Parameter> before = p;
  AdamState st = AdamState::zeros_like(p);
  const std::vector<Tensor> g{Tensor({3, 2}, 0.0), Tensor({2}, 0.0)};
  adam_step(p, g, st, AdamConfig{});
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i].value == before[i].value);
}

TEST_CASE("adam: first step moves by lr times the gradient sign") {
  Rng rng(72);
  std::vector<Parameter> p = two_params(rng);
  const std::vector<Parameter> before = p;
  AdamState st = AdamState::zeros_like(p);
  const std::vector<Tensor> g{random_tensor({3, 2}, rng), random_tensor({2}, rng)};
  const AdamConfig cfg{0.01, 0.9, 0.999, 1e-8, 0.0};
  adam_step(p, g, st, cfg);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t k = 0; k < p[i].value.size(); ++k) {
      const double step = before[i].value[k] - p[i].value[k];
      const double sign = g[i][k] > 0 ? 1.0 : -1.0;
      // |g| / (|g| + eps) with the bias-corrected moments.
      CHECK(std::abs(step - sign * 0.01) < 0.01 * 1e-8 / std::abs(g[i][k]) + 1e-15);
    }
  }
}

TEST_CASE("adam is bit-deterministic") {
  std::vector<Tensor> finals;
  for (int run = 0; run < 2; ++run) {
    Rng rng(73);
    std::vector<Parameter> p = two_params(rng);
    AdamState st = AdamState::zeros_like(p);
    for (int step = 0; step < 5; ++step) {
      const std::vector<Tensor> g{random_tensor({3, 2}, rng), random_tensor({2}, rng)};
      adam_step(p, g, st, AdamConfig{0.01, 0.9, 0.999, 1e-8, 5e-4});
    }
    finals.push_back(p[0].value);
  }
  CHECK(finals[0] == finals[1]);
}

TEST_CASE("weight decay term touches kernels only and scales exactly") {
  Rng rng(74);
  const std::vector<Parameter> p = two_params(rng);
  const auto g1 = weight_decay_gradient(p, 5e-4);
  const auto g2 = weight_decay_gradient(p, 1e-3);
  CHECK(g1[1] == Tensor({2}, 0.0));
  for (std::size_t k = 0; k < g1[0].size(); ++k) CHECK(g2[0][k] == 2.0 * g1[0][k]);

  // Same decay inside adam_step: a decayed step equals a plain step on g + decay * W.
  std::vector<Parameter> a = p;
  std::vector<Parameter> b = p;
  AdamState sa = AdamState::zeros_like(a);
  AdamState sb = AdamState::zeros_like(b);
  const std::vector<Tensor> g{random_tensor({3, 2}, rng), random_tensor({2}, rng)};
  adam_step(a, g, sa, AdamConfig{0.01, 0.9, 0.999, 1e-8, 5e-4});
  std::vector<Tensor> manual = g;
  manual[0].axpy(1.0, g1[0]);
  adam_step(b, manual, sb, AdamConfig{0.01, 0.9, 0.999, 1e-8, 0.0});
  CHECK(a[0].value == b[0].value);
  CHECK(a[1].value == b[1].value);
}

TEST_CASE("aggregate examples") {
  RunRecord r;
  r.test_acc = 0.7;
  std::vector<RunRecord> one{r};
  const AggregateStats s1 = aggregate(one);
  CHECK(s1.acc_avg == s1.acc_min);
  CHECK(s1.acc_avg == s1.acc_max);
  CHECK(s1.acc_std == 0.0);

  RunRecord q;
  q.test_acc = 0.8;
  std::vector<RunRecord> two{r, q};
  const AggregateStats s2 = aggregate(two);
  CHECK(s2.acc_avg == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(s2.acc_std == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(s2.acc_min == 0.7);
  CHECK(s2.acc_max == 0.8);

  RunRecord bad;
  bad.failed = true;
  bad.test_acc = 0.0;
  std::vector<RunRecord> three{r, bad, q};
  const AggregateStats s3 = aggregate(three);
  CHECK(s3.failed_runs == 1);
  CHECK(s3.accuracies.size() == 2);
  CHECK(s3.acc_avg == s2.acc_avg);
}

TEST_CASE("gcn-3 fits the tiny10 training nodes") {
  const CitationDataset ds = make_tiny10();
  TrainConfig cfg;
  const RunRecord r = train_run(tiny_spec(Variant::Gcn), ds, cfg);
  CHECK_FALSE(r.failed);
  CHECK(r.train_acc == 1.0);
  CHECK(r.epochs_run <= cfg.max_epochs);
  CHECK(r.val_acc.size() == r.epochs_run);
  for (double a : r.val_acc) CHECK((a >= 0.0 && a <= 1.0));
  CHECK((r.test_acc >= 0.0 && r.test_acc <= 1.0));
}

TEST_CASE("vacuous early-stop thresholds stop after the first epoch") {
  TrainConfig cfg;
  cfg.early_stop.enabled = true;
  cfg.early_stop.acc_floor = 0.0;
  cfg.early_stop.loss_ceiling = std::numeric_limits<double>::infinity();
  cfg.early_stop.reference_acc = 0.8;
  cfg.early_stop.reference_loss = 0.9;
  const RunRecord r = train_run(tiny_spec(Variant::Gcn), make_tiny10(), cfg);
  CHECK(r.epochs_run == 1);
  CHECK(r.stopped_early);
}

TEST_CASE("looser early-stop thresholds never run longer") {
  const CitationDataset ds = make_tiny10();
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    std::size_t previous = std::numeric_limits<std::size_t>::max();
    for (auto [floor, ceiling] : {std::pair{1.2, 0.3}, {1.0, 0.6}, {0.9, 1.1}, {0.5, 2.0}, {0.0, 10.0}}) {
      TrainConfig cfg;
      cfg.seed = seed;
      cfg.early_stop = {true, floor, ceiling, 0.8, 0.5};
      const RunRecord r = train_run(tiny_spec(Variant::ResNorm), ds, cfg);
      CHECK(r.epochs_run <= previous);
      previous = r.epochs_run;
    }
  }
}

TEST_CASE("eval-mode output does not depend on dropout_p") {
  const CitationDataset ds = make_tiny10();
  const SparseMatrix op = propagation_operator(ds.adjacency, Normalization::Row);
  Rng rng(75);
  const Model m = build_model(tiny_spec(Variant::ResNorm), rng);
  std::vector<Tensor> outs;
  for (double p : {0.0, 0.5, 0.9}) {
    Tape tape;
    Rng drop(1);
    outs.push_back(forward(m, bind_parameters(m, tape), op, tape.constant(ds.features), {false, p, &drop, nullptr}).value());
  }
  CHECK(outs[0] == outs[1]);
  CHECK(outs[0] == outs[2]);
}

TEST_CASE("repeat runs are bit-identical") {
  const CitationDataset ds = make_tiny10();
  TrainConfig cfg;
  cfg.max_epochs = 20;
  cfg.seed = 4;
  const RunRecord a = train_run(tiny_spec(Variant::OdeNorm), ds, cfg);
  const RunRecord b = train_run(tiny_spec(Variant::OdeNorm), ds, cfg);
  CHECK(a.train_loss == b.train_loss);
  CHECK(a.val_loss == b.val_loss);
  CHECK(a.test_acc == b.test_acc);
}

TEST_CASE("parallel seeds equal serial seeds") {
  const CitationDataset ds = make_tiny10();
  TrainConfig cfg;
  cfg.max_epochs = 30;
  const MultiSeedResult serial = multi_seed(tiny_spec(Variant::ResNorm), ds, cfg, 5, 1);
  const MultiSeedResult parallel = multi_seed(tiny_spec(Variant::ResNorm), ds, cfg, 5, 4);
  REQUIRE(serial.runs.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(serial.runs[i].seed == i);
    CHECK(parallel.runs[i].seed == i);
    CHECK(serial.runs[i].train_loss == parallel.runs[i].train_loss);
    CHECK(serial.runs[i].test_acc == parallel.runs[i].test_acc);
  }
  CHECK(serial.aggregate.accuracies == parallel.aggregate.accuracies);
  CHECK_THROWS_AS(multi_seed(tiny_spec(Variant::Gcn), ds, cfg, 0), ConfigError);
}

TEST_CASE("divergent runs are marked failed and excluded") {
  CitationDataset ds = make_tiny10();
  ds.features.fill(std::numeric_limits<double>::infinity());
  ds.features(0, 0) = -std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.max_epochs = 5;
  const MultiSeedResult r = multi_seed(tiny_spec(Variant::Gcn), ds, cfg, 2);
  for (const RunRecord& run : r.runs) {
    CHECK(run.failed);
    CHECK((run.failed_epoch >= 1 && run.failed_epoch <= cfg.max_epochs));
    CHECK_FALSE(run.failure.empty());
  }
  CHECK(r.aggregate.failed_runs == 2);
  CHECK(r.aggregate.accuracies.empty());
}
