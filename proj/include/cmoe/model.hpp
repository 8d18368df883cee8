#pragma once

// Full model assembly: encoders -> four expert pathways, each with its own
// concept bottleneck and head -> gate-weighted fusion of expert logits.

#include "cmoe/autodiff.hpp"
#include "cmoe/concepts.hpp"
#include "cmoe/encoders.hpp"
#include "cmoe/experts.hpp"
#include "cmoe/params.hpp"
#include "cmoe/synthcohort.hpp"
#include "cmoe/variant.hpp"

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace cmoe {

struct ModelDims {
  int patch_dim = 32;
  int node_dim = 16;
  int d = 256;
  int gnn_layers = 3;
  int gnn_hidden = 256;
  int concept_dim = 16;
  int num_classes = 4;

  EncoderDims encoder() const { return {patch_dim, node_dim, d, gnn_layers, gnn_hidden}; }
};

struct ModelSpec {
  ModelDims dims;
  ModelVariant variant;
  double dropout = 0.1;      // expert hidden layer
  double gnn_dropout = 0.1;  // after each message-passing layer
  double perturb_sigma_scale = 1.0;
  int patch_cap = 16;

  void validate() const;
  // Width of the L1 / L2 bottleneck handed downstream (embeddings for CEM,
  // probability encodings for CBM); 0 for an absent level.
  int l1_width() const;
  int l2_width() const;
  int l2_input_width() const;
  int head_width() const;
};

// One concept level of one expert pass; vectors are indexed by concept.
struct LevelState {
  int level = 1;
  ad::Var input;
  std::vector<ConceptStates> states;
  std::vector<ConceptActivation> acts;
  std::vector<ad::Var> residuals;  // psi(input), soft CEM only
  std::vector<ad::Var> embeds;     // c_hat, CEM only
  ad::Var probs;                   // B x 19 (L1) or B x 5 (L2) category probabilities
  ad::Var activations;             // B x K scalar concept activations
  ad::Var bottleneck;              // what the head (and L2) sees from this level
};

struct ExpertPass {
  ad::Var z;
  std::optional<LevelState> l1;
  std::optional<LevelState> l2;
  ad::Var head_input;
  ad::Var logits;
};

struct ForwardOptions {
  bool training = false;
  // Patch subsampling, dropout and (absent explicit noise) perturbations.
  Rng* rng = nullptr;
  // Run the perturbed passes needed by the interaction loss.
  bool perturb = false;
  // Standard-normal draws per modality, B x d each; drawn from rng if absent.
  const std::array<Matrix, kNumModalities>* unit_noise = nullptr;
  // Replaces the batch-std rule for sigma (tests, diagnostics).
  std::optional<double> sigma_override;
};

struct ForwardResult {
  ad::Var e1, e2;  // B x d
  std::array<ExpertPass, kNumExperts> experts;
  ad::Var gate_logits;
  ad::Var alpha;   // B x 4
  ad::Var logits;  // B x C fused
  bool perturbed = false;
  std::array<double, kNumModalities> sigma{};
  // perturbed_logits[m][e]: expert e's logits with modality m perturbed.
  std::array<std::array<ad::Var, kNumExperts>, kNumModalities> perturbed_logits;
};

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t init_seed);
  Model(ModelSpec spec, ParamStore params);

  const ModelSpec& spec() const { return spec_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

  ForwardResult forward(ParamBinding& p, std::span<const CohortSample* const> batch,
                        const ForwardOptions& opt) const;

  // Expert pathway from given modality embeddings (clean or perturbed).
  ExpertPass expert_pass(ParamBinding& p, ad::Var e1, ad::Var e2, ExpertId e,
                         const Matrix* hidden_mask) const;

  // Concept level from its input (z, or [z; B1] for a conditioned L2).
  LevelState concept_level(ParamBinding& p, ExpertId e, int level, ad::Var input) const;

 private:
  void init(std::uint64_t seed);

  ModelSpec spec_;
  ParamStore params_;
};

// R0 = z, R1 = [z; B1; r1], R2 = [R1; B2]. Requires the soft CEM bottleneck
// with an L1 level; R2 is invalid when the variant lacks L2.
struct RepresentationChain {
  ad::Var r0, r1, r2;
};
RepresentationChain representation_chain(const ExpertPass& pass, const ModelVariant& variant);

}  // namespace cmoe
