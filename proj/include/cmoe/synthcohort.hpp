#pragma once

// Synthetic multimodal cohorts: each sample is a bag of patch features plus a
// cell graph whose latent statistics encode a class-specific concept profile.

#include "cmoe/autodiff.hpp"
#include "cmoe/concept_schema.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cmoe {

struct CohortConfig {
  int num_patients = 200;
  int slides_per_patient = 1;
  int num_classes = 4;
  int patch_dim = 32;
  std::pair<int, int> patches_per_slide{8, 16};
  int graph_node_dim = 16;
  std::pair<int, int> graph_nodes{8, 20};
  double edge_probability = 0.2;
  double concept_noise = 0.5;
  double mask_rate_l1 = 0.2;
  double mask_rate_l2 = 0.3;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

struct ConceptTargets {
  std::array<std::uint8_t, schema::kNumL1Targets> l1_onehot{};
  std::array<std::uint8_t, schema::kNumL1> l1_mask{};
  std::array<std::uint8_t, schema::kNumL2> l2_binary{};
  std::array<std::uint8_t, schema::kNumL2> l2_mask{};

  // Observed L1 category for concept k, or -1 when masked.
  int l1_level(int k) const;
};

struct CellGraph {
  Matrix nodes;  // num_nodes x graph_node_dim
  std::vector<std::pair<int, int>> edges;
};

struct CohortSample {
  std::string id;
  std::string patient_id;
  Matrix patches;  // num_patches x patch_dim
  CellGraph graph;
  ConceptTargets concepts;
  int label = 0;
};

using Cohort = std::vector<CohortSample>;

// Per-class concept profile used by the generator.
struct ConceptProfile {
  std::array<int, schema::kNumL1> l1_level{};
  std::array<std::uint8_t, schema::kNumL2> l2_positive{};
};

// Deterministic class -> profile table for a given config; distinct rows.
std::vector<ConceptProfile> class_profiles(const CohortConfig& cfg);

Cohort generate_cohort(const CohortConfig& cfg);

// Patient-level fold assignment. Patients (never samples) are partitioned.
struct FoldSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

std::vector<FoldSplit> split_patient_level(const Cohort& cohort, int folds, std::uint64_t seed);

// Sample indices (in cohort order) whose patient is in `patients`.
std::vector<int> samples_of(const Cohort& cohort, const std::vector<std::string>& patients);

// Checks the per-sample invariants; throws DataError.
void validate_sample(const CohortSample& s, int num_classes);

nlohmann::json to_json(const CohortConfig& cfg);
CohortConfig cohort_config_from_json(const nlohmann::json& j);

nlohmann::json cohort_to_json(const Cohort& cohort, const CohortConfig& cfg);
// Returns the samples; `cfg_out` receives the embedded config when non-null.
Cohort cohort_from_json(const nlohmann::json& j, CohortConfig* cfg_out = nullptr);

}  // namespace cmoe
