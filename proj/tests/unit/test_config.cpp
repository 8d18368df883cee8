#include "test_util.hpp"

#include "cmoe/config.hpp"
#include "cmoe/errors.hpp"

using namespace cmoe;

TEST_CASE("presets carry the two recipe columns") {
  const auto p = preset_config("pbt-default");
  CHECK(p.cohort.num_classes == 4);
  CHECK(p.model.dims.d == 256);
  CHECK(p.model.dims.concept_dim == 16);
  CHECK(p.model.dims.gnn_layers == 3);
  CHECK(p.model.dims.gnn_hidden == 256);
  CHECK(p.model.gnn_dropout == 0.1);
  CHECK(p.model.dropout == 0.1);
  CHECK(p.loss.lambda1 == 0.5);
  CHECK(p.loss.lambda2 == 0.3);
  CHECK(p.loss.lambda_int == 0.1);
  CHECK(p.train.lr == 2e-4);
  CHECK(p.train.batch_size == 16);
  CHECK(p.train.max_epochs == 150);
  CHECK(p.train.patience == 30);

  const auto t = preset_config("tcga-default");
  CHECK(t.cohort.num_classes == 2);
  CHECK(t.model.dims.num_classes == 2);
  CHECK(t.model.dims.gnn_layers == 2);
  CHECK(t.model.dims.gnn_hidden == 128);
  CHECK(t.model.gnn_dropout == 0.5);
  CHECK(t.model.dropout == 0.6);
  CHECK(t.loss.lambda1 == 0.9);
  CHECK(t.loss.lambda2 == 0.0);
  CHECK(t.loss.lambda_int == 0.01);
  CHECK(t.train.lr == 1e-4);
  CHECK(t.train.batch_size == 8);
  CHECK(t.train.max_epochs == 150);
  CHECK(t.train.patience == 30);
  CHECK_NOTHROW(t.validate());
  CHECK_THROWS_AS(preset_config("tcga"), ConfigError);
}

TEST_CASE("YAML overrides land on the preset") {
  const auto j = yaml_to_json(R"(
preset: tcga-default
seed: 42
model:
  variant: flat-morph-hard-cem
  d: 32
train:
  lr: 1e-3
  max_epochs: 20
  patience: 5
cohort:
  patches_per_slide: [2, 4]
output: "runs/a"
)");
  const auto c = config_from_json(j);
  CHECK(c.preset == "tcga-default");
  CHECK(c.seed == 42);
  CHECK(c.model.variant.name() == "flat-morph-hard-cem");
  CHECK(c.model.dims.d == 32);
  CHECK(c.model.dims.gnn_hidden == 128);
  CHECK(c.train.lr == 1e-3);
  CHECK(c.train.seed == 42);
  CHECK(c.cohort.seed == substream_seed(42, "cohort"));
  CHECK(c.cohort.patches_per_slide == std::pair<int, int>{2, 4});
  CHECK(c.output == "runs/a");
  CHECK(c.loss.lambda1 == 0.9);
}

TEST_CASE("unknown keys and wrong types are rejected") {
  CHECK_THROWS_AS(config_from_json(yaml_to_json("trian:\n  lr: 1e-3\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(yaml_to_json("train:\n  lrr: 1e-3\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(yaml_to_json("train:\n  lr: fast\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(yaml_to_json("train:\n  batch_size: 1.5\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(yaml_to_json("train: 3\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(yaml_to_json("seed: -1\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(yaml_to_json("model:\n  variant: deep-cem\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(yaml_to_json("folds: 500\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(yaml_to_json("loss:\n  class_weights: [1, 2]\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(yaml_to_json("interpret:\n  neutral: zero\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(yaml_to_json("a: [1,\n")), ConfigError);
  CHECK_THROWS_AS(config_from_json(yaml_to_json("a: 1\na: 2\n")), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.yaml"), ConfigError);
  CHECK(config_from_json(yaml_to_json("")).preset == "pbt-default");
}

TEST_CASE("resolved configs round-trip") {
  auto c = preset_config("pbt-default", 9);
  c.cohort.seed = 1234;
  c.loss.class_weights = {0.5, 1.0, 1.5, 1.0 / 3.0};
  c.subsample.sizes = {10, 20};
  c.interpret.neutral = NeutralState::kEmpiricalMean;
  c.infoplane.feature = TrackedFeature::kP2;
  c.infoplane.kind = TrajectoryKind::kCbm;
  const auto j = to_json(c);
  const auto back = config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.cohort.seed == 1234);
  CHECK(back.loss.class_weights[3] == 1.0 / 3.0);
  // JSON is a YAML subset, so embedded configs load as config files
  CHECK(to_json(config_from_json(yaml_to_json(j.dump()))) == j);
}

TEST_CASE("checkpoints round-trip bit for bit") {
  Checkpoint c;
  c.config = preset_config("tcga-default", 3);
  c.fold = 2;
  c.best_epoch = 17;
  c.best_val_f1 = 2.0 / 3.0;
  Rng rng(8);
  c.params.add("w", cmoe::testing::random_matrix(3, 4, rng));
  c.params.add("b", Matrix::Constant(1, 4, 1e-300));
  const auto back = checkpoint_from_json(nlohmann::json::parse(to_json(c).dump()));
  CHECK(back.params == c.params);
  CHECK(back.best_val_f1 == c.best_val_f1);
  CHECK(back.fold == 2);
  CHECK(to_json(back.config) == to_json(c.config));
  auto bad = to_json(c);
  bad["version"] = 7;
  CHECK_THROWS_AS(checkpoint_from_json(bad), DataError);
}
