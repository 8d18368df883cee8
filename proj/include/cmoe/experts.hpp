#pragma once

// The four interaction-decomposed expert pathways and the signed
// perturbation-KL loss that gives them their semantics.

#include "cmoe/autodiff.hpp"
#include "cmoe/params.hpp"
#include "cmoe/rng.hpp"

#include <array>
#include <span>
#include <string>

namespace cmoe {

inline constexpr int kNumModalities = 2;
inline constexpr int kNumExperts = kNumModalities + 2;

// Expert index order is fixed everywhere: U1, U2, R, S.
enum class ExpertId : int { kU1 = 0, kU2 = 1, kR = 2, kS = 3 };

inline constexpr std::array<const char*, kNumExperts> kExpertNames{"U1", "U2", "R", "S"};

// +1: expert encouraged to be invariant to perturbing `modality` (0-based);
// -1: encouraged to be sensitive.
int interaction_sign(ExpertId expert, int modality);

void init_experts(ParamStore& store, int d, Rng& rng);

// z_e = f_e([e_1; e_2]): affine -> LeakyReLU -> (dropout mask) -> affine.
// `hidden_mask`, when given, multiplies the hidden activations.
ad::Var expert_forward(ParamBinding& p, ad::Var e1, ad::Var e2, ExpertId expert,
                       const Matrix* hidden_mask = nullptr);

// sigma = sigma_scale * std of all entries of `embeddings`, falling back to
// sigma_scale when that std is zero. Throws ConfigError for sigma_scale <= 0.
double perturbation_sigma(const Matrix& embeddings, double sigma_scale);

// e + sigma * noise. `unit_noise` holds standard-normal draws of e's shape.
ad::Var perturb_modality(ad::Var e, double sigma, const Matrix& unit_noise);
// Same, drawing the noise from `rng`.
ad::Var perturb_modality(ad::Var e, double sigma, Rng& rng);
Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

inline constexpr double kProbFloor = 1e-12;

// Row-wise KL(p || q) with both sides clamped below at 1e-12; B x 1.
ad::Var kl_rows(ad::Var p, ad::Var q);

// Rows of `probs` must each sum to 1 within 1e-6; throws DataError.
void check_normalized(const Matrix& probs, const char* what);

// Mean over experts of sum_m s_e^m KL(p_e^clean || p_e^m), averaged over the
// batch rows. Arguments are per-expert class distributions (B x C):
// clean[e] and perturbed[m][e].
ad::Var interaction_loss(std::span<const ad::Var> clean,
                         std::span<const std::array<ad::Var, kNumExperts>> perturbed);

}  // namespace cmoe
