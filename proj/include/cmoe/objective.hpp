#pragma once

// Training objective: class-weighted cross-entropy on the fused logits,
// masked concept BCE at both levels, and the interaction loss.

#include "cmoe/autodiff.hpp"
#include "cmoe/model.hpp"
#include "cmoe/synthcohort.hpp"

#include <optional>
#include <span>
#include <vector>

namespace cmoe {

inline constexpr double kMaskEps = 1e-8;

struct LossWeights {
  double lambda1 = 0.5;
  double lambda2 = 0.3;
  double lambda_int = 0.1;
  std::vector<double> class_weights;  // empty = all ones
  double eps = kMaskEps;

  void validate(int num_classes) const;
};

// Inverse empirical class frequency, normalized to mean 1 over the classes
// that occur; absent classes get weight 1.
std::vector<double> inverse_frequency_weights(std::span<const int> labels, int num_classes);

// -w_y log softmax(logits)_y summed over rows and divided by sum of w_y.
// Probabilities are clamped below at 1e-12.
ad::Var class_weighted_ce(ad::Var logits, std::span<const int> labels, std::span<const double> class_weights);

// Targets and masks of a batch laid out for the concept losses.
struct ConceptBatch {
  Matrix l1_targets;  // B x 19
  Matrix l1_mask;     // B x 5
  Matrix l2_targets;  // B x 5
  Matrix l2_mask;     // B x 5
};
ConceptBatch concept_batch(std::span<const CohortSample* const> batch);

// Per-target-column weights for positives / negatives (balanced BCE).
struct BceBalance {
  std::vector<double> pos;
  std::vector<double> neg;
};
// 0.5 / frequency for each side over observed entries, capped at 10.
BceBalance balanced_bce_weights(const Matrix& targets, const Matrix& target_mask);

// Element-wise weight matrix that expands per-concept masks to target
// columns with the 1/V_k category normalization (L1) or 1 (L2).
Matrix concept_loss_weights(const Matrix& mask, int level);

// mean_e [ sum_{n,k} m (1/V_k) sum_v BCE(p, t) ] / (sum_{n,k} m + eps).
// `per_expert_probs` are B x 19 (level 1) or B x 5 (level 2).
ad::Var masked_concept_loss(std::span<const ad::Var> per_expert_probs, const Matrix& targets, const Matrix& mask,
                            int level, double eps = kMaskEps, const BceBalance* balance = nullptr);

struct LossBreakdown {
  double total = 0.0;
  double cls = 0.0;
  double concept_l1 = 0.0;
  double concept_l2 = 0.0;
  double interaction = 0.0;
};

struct LossTerms {
  ad::Var cls;
  ad::Var concept_l1;   // invalid when the level is absent
  ad::Var concept_l2;
  ad::Var interaction;  // invalid when no perturbed passes were run
};

struct TotalLoss {
  ad::Var total;
  ad::Var auxiliary;  // lambda-weighted non-task part; invalid when empty
  LossBreakdown breakdown;
};

TotalLoss total_loss(const LossTerms& terms, const LossWeights& w);

// Computes every term from a forward pass over `batch`.
struct ObjectiveOptions {
  const BceBalance* l1_balance = nullptr;
  const BceBalance* l2_balance = nullptr;
};
LossTerms loss_terms(const ForwardResult& fwd, std::span<const CohortSample* const> batch, const LossWeights& w,
                     const ObjectiveOptions& opt = {});

}  // namespace cmoe
