#pragma once

// Gradient x input concept attribution along the three forward paths, its
// fold aggregation, pathway evidence profiles, logit ablation and gate
// routing statistics.

#include "cmoe/model.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <compare>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cmoe {

enum class AttrPath { kL1ToClass, kL2ToClass, kL1ToL2 };

std::string_view path_name(AttrPath p);  // "L1->class", "L2->class", "L1->L2"
AttrPath parse_path(std::string_view name);
// Level of the concepts a path attributes to.
inline int source_level(AttrPath p) { return p == AttrPath::kL2ToClass ? 2 : 1; }

// Paths the variant supports. Throws ConfigError for scalar bottlenecks.
std::vector<AttrPath> available_paths(const ModelVariant& v);

// |<grad, embedding>|
double grad_input_attr(const RowVector& grad, const RowVector& embedding);
// Differentiates the scalar f at `embedding` first.
double grad_input_attr(const std::function<ad::Var(ad::Var)>& f, const RowVector& embedding);

struct AttributionRecord {
  std::string id;
  int label = 0;
  int fold = 0;
  AttrPath path = AttrPath::kL1ToClass;
  int target = 0;  // class index, or L2 concept index for L1->L2
  Matrix phi;      // experts x source concepts
  RowVector alpha;
};

enum class L1ToL2Target { kSquaredNorm, kScore };

struct AttrOptions {
  L1ToL2Target l1_to_l2 = L1ToL2Target::kSquaredNorm;
  int batch_size = 16;
};

// Expert e's logits with its L1 bottleneck replaced by `b1`; the L2 level is
// recomputed from [z; b1] when it conditions on L1, otherwise `b2` is used.
ad::Var logits_from_l1(const Model& model, ParamBinding& p, ExpertId e, ad::Var z, ad::Var b1, ad::Var b2);
// Expert e's logits from fixed B1 (invalid when absent) and the given B2.
ad::Var logits_from_l2(const Model& model, ParamBinding& p, ExpertId e, ad::Var b1, ad::Var b2);

// One record per (sample, target) for `path`, frozen model, no dropout.
std::vector<AttributionRecord> attr_paths(const Model& model, std::span<const CohortSample* const> samples,
                                          AttrPath path, int fold = 0, const AttrOptions& opt = {});

struct AttrKey {
  AttrPath path = AttrPath::kL1ToClass;
  int target = 0;
  int cls = 0;  // ground-truth class group
  auto operator<=>(const AttrKey&) const = default;
};

struct AttrAggregate {
  Matrix mean;  // experts x concepts, across-fold mean of fold means
  Matrix std;   // population std across folds
  RowVector gate_mean;  // sum_e alpha_e phi_e per sample, then as above
  RowVector gate_std;
  int folds = 0;
  int samples = 0;
};

// Class paths keep samples whose label equals the target class; L1->L2
// records are grouped by label. Keys without samples are absent.
std::map<AttrKey, AttrAggregate> aggregate_attr(std::span<const AttributionRecord> records);

enum class AttrView { kPerExpert, kGate };

// Rows are (target, class) pairs of `path`; columns are means then stds.
std::string attr_csv(const std::map<AttrKey, AttrAggregate>& agg, AttrPath path, AttrView view);

// a_e = alpha_e p_e / (sum_e' alpha_e' p_e' + eps) for one concept.
RowVector evidence_profile(const RowVector& alpha, const RowVector& p, double eps = 1e-8);

enum class NeutralState { kNegative, kEmpiricalMean };

struct ConceptRef {
  int level = 1;
  int index = 0;
};

struct AblationResult {
  RowVector delta;       // per expert
  RowVector normalized;  // max(delta, 0) / sum over experts; zeros if none
};

// Replaces c_hat_{e,k} with the neutral state and recomputes expert e's head
// (and a conditioned L2 level). `means` holds one embedding per expert and is
// required for the empirical-mean state.
AblationResult logit_ablation(const Model& model, const CohortSample& sample, ConceptRef ref, int cls,
                              NeutralState neutral = NeutralState::kNegative,
                              const std::array<RowVector, kNumExperts>* means = nullptr);

// Per-expert mean of c_hat_{e,k} over `samples`.
std::array<RowVector, kNumExperts> empirical_embedding_means(const Model& model,
                                                             std::span<const CohortSample* const> samples,
                                                             ConceptRef ref, int batch_size = 16);

struct RoutingStats {
  std::vector<std::optional<RowVector>> per_class;  // empty groups unset
  RowVector overall;
  std::array<int, kNumExperts> argmax_counts{};
};

RoutingStats routing_stats(const Matrix& alpha, std::span<const int> labels, int num_classes);
RoutingStats routing_stats(const Model& model, const Cohort& cohort, std::span<const int> indices,
                           int batch_size = 16);

// Gate weights, prediction and the top-k concepts by gate-weighted phi
// toward the predicted class, with their gate-weighted activations.
nlohmann::json reasoning_trace(const Model& model, const CohortSample& sample, int top_k = 5,
                               const AttrOptions& opt = {});
// Problems found in a trace document; empty when it is well formed.
std::vector<std::string> validate_trace(const nlohmann::json& trace);

}  // namespace cmoe
