#pragma once

// Per-expert concept formation: positive/negative concept states, scalar
// activations, mixed concept embeddings with an optional residual, and the
// gate / fusion / representation-chain pieces built on them.

#include "cmoe/autodiff.hpp"
#include "cmoe/experts.hpp"
#include "cmoe/params.hpp"

#include <span>
#include <string>
#include <vector>

namespace cmoe {

struct ConceptStates {
  ad::Var pos;  // B x d_c
  ad::Var neg;  // B x d_c
};

struct ConceptActivation {
  ad::Var score;       // pre-sigmoid scorer output, B x V
  ad::Var probs;       // sigmoid(score), B x V
  ad::Var activation;  // scalar concept value in [0,1], B x 1
};

// Parameter prefix of one concept block, e.g. "concept.U1.L1.k2".
std::string concept_block(ExpertId e, int level, int k);

// Registers pos/neg state maps (in -> d_c), the scorer (2 d_c -> categories)
// and, when `residual`, the residual projection (in -> d_c).
void init_concept_block(ParamStore& store, const std::string& block, int in, int d_c, int categories,
                        bool residual, Rng& rng);

// c+ = LeakyReLU(phi+(z)), c- = LeakyReLU(phi-(z)). Throws DataError when the
// input width does not match the block.
ConceptStates concept_states(ParamBinding& p, const std::string& block, ad::Var z);

// Scorer on [c+; c-]. With one category the activation is the sigmoid
// probability. With V > 1 ordinal categories the activation is the expected
// normalized level sum_v (v / (V-1)) * q_v under q = probs / sum(probs).
ConceptActivation concept_activation(ParamBinding& p, const std::string& block, const ConceptStates& s);

// Expected normalized ordinal level of per-category probabilities (B x V).
ad::Var ordinal_activation(ad::Var probs);

// c_hat = p c+ + (1 - p) c- (+ gamma_res * residual when residual is valid).
ad::Var concept_embed(const ConceptStates& s, ad::Var activation, ad::Var residual, double gamma_res);

// psi(z) for blocks that carry a residual projection.
ad::Var concept_residual(ParamBinding& p, const std::string& block, ad::Var z);

// [z; B1]; throws DataError when widths disagree with the expected ones.
ad::Var level2_input(ad::Var z, ad::Var b1, Eigen::Index d, Eigen::Index b1_width);

// Single affine head.
ad::Var expert_head(ParamBinding& p, ExpertId e, ad::Var head_input);

// Gate over experts: softmax of one affine layer on [e1; e2]. Writes the
// logits to `logits` when non-null.
ad::Var gate(ParamBinding& p, ad::Var e1, ad::Var e2, ad::Var* logits = nullptr);

// sum_e alpha_e * l_e, reduced in fixed expert order.
ad::Var fuse_predict(ad::Var alpha, std::span<const ad::Var> expert_logits);

// Scalar-bottleneck encoding of an L2 probability block: [p_j, 1 - p_j]
// pairs, B x 2K.
ad::Var binary_pair_encoding(ad::Var probs);

}  // namespace cmoe
