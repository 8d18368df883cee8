#pragma once

// Experiment configuration: named presets, strict YAML/JSON loading with
// unknown-key rejection, and the self-describing checkpoint container.

#include "cmoe/infoplane.hpp"
#include "cmoe/interpret.hpp"
#include "cmoe/model.hpp"
#include "cmoe/objective.hpp"
#include "cmoe/synthcohort.hpp"
#include "cmoe/trainer.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <string_view>
#include <vector>

namespace cmoe {

inline constexpr int kArtifactVersion = 1;

struct SubsampleConfig {
  std::vector<int> sizes;  // empty = proportional defaults
  int repeats = 5;
};

struct InterpretConfig {
  int top_k = 5;
  NeutralState neutral = NeutralState::kNegative;
  L1ToL2Target l1_to_l2 = L1ToL2Target::kSquaredNorm;
};

struct InfoplaneConfig {
  TrackedFeature feature = TrackedFeature::kB1;
  TrajectoryKind kind = TrajectoryKind::kCem;
  std::string split = "test";
};

struct ExperimentConfig {
  std::string preset = "pbt-default";
  std::uint64_t seed = 0;
  CohortConfig cohort;
  ModelSpec model;  // patch/node dims and classes follow the cohort
  LossWeights loss;
  TrainConfig train;
  int folds = 10;
  std::string output = "out";
  SubsampleConfig subsample;
  InterpretConfig interpret;
  InfoplaneConfig infoplane;

  // Throws ConfigError.
  void validate() const;
  std::uint64_t split_seed() const;
};

std::vector<std::string> preset_names();
// Fully resolved preset; throws ConfigError for an unknown name.
ExperimentConfig preset_config(std::string_view name, std::uint64_t seed = 0);

nlohmann::json to_json(const ExperimentConfig& c);

// Overlays `j` on its preset (default pbt-default). Keys absent from the
// preset layout, or values of the wrong type, raise ConfigError. Seeds not
// given explicitly derive from the root seed.
ExperimentConfig config_from_json(const nlohmann::json& j);

// YAML (or JSON, a YAML subset) document -> the JSON used above.
nlohmann::json yaml_to_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);

struct Checkpoint {
  ExperimentConfig config;
  int fold = 0;
  int best_epoch = 0;
  double best_val_f1 = 0.0;
  ParamStore params;
};

nlohmann::json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

}  // namespace cmoe
