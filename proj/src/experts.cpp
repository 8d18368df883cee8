#include "cmoe/experts.hpp"

#include "cmoe/errors.hpp"
#include "cmoe/layers.hpp"

#include <cmath>

namespace cmoe {

namespace {

std::string expert_prefix(ExpertId e) { return std::string("expert.") + kExpertNames[static_cast<int>(e)]; }

}  // namespace

int interaction_sign(ExpertId expert, int modality) {
  switch (expert) {
    case ExpertId::kU1: return modality == 0 ? -1 : +1;
    case ExpertId::kU2: return modality == 1 ? -1 : +1;
    case ExpertId::kR: return +1;
    case ExpertId::kS: return -1;
  }
  return +1;
}

void init_experts(ParamStore& s, int d, Rng& rng) {
  for (int e = 0; e < kNumExperts; ++e) {
    const std::string pre = expert_prefix(static_cast<ExpertId>(e));
    init_affine(s, pre + ".fc1", kNumModalities * d, d, rng);
    init_affine(s, pre + ".fc2", d, d, rng);
  }
}

ad::Var expert_forward(ParamBinding& p, ad::Var e1, ad::Var e2, ExpertId expert, const Matrix* hidden_mask) {
  const std::string pre = expert_prefix(expert);
  const ad::Var parts[] = {e1, e2};
  ad::Var h = ad::leaky_relu(affine(p, pre + ".fc1", ad::concat_cols(parts)), kLeakySlope);
  if (hidden_mask) h = ad::mul(h, p.tape().constant(*hidden_mask));
  return affine(p, pre + ".fc2", h);
}

double perturbation_sigma(const Matrix& emb, double sigma_scale) {
  if (!(sigma_scale > 0.0)) throw ConfigError("perturbation sigma scale must be > 0");
  const double n = static_cast<double>(emb.size());
  const double mu = emb.sum() / n;
  const double var = (emb.array() - mu).square().sum() / n;
  const double sd = std::sqrt(var);
  return sd > 0.0 ? sigma_scale * sd : sigma_scale;
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

ad::Var perturb_modality(ad::Var e, double sigma, const Matrix& unit_noise) {
  if (!(sigma > 0.0)) throw ConfigError("perturb_modality: sigma must be > 0");
  if (unit_noise.rows() != e.rows() || unit_noise.cols() != e.cols()) {
    throw DataError("perturb_modality: noise shape mismatch");
  }
  return ad::add(e, e.tape()->constant(sigma * unit_noise));
}

ad::Var perturb_modality(ad::Var e, double sigma, Rng& rng) {
  return perturb_modality(e, sigma, standard_normal(e.rows(), e.cols(), rng));
}

void check_normalized(const Matrix& probs, const char* what) {
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    if (std::abs(probs.row(r).sum() - 1.0) > 1e-6) {
      throw DataError(std::string(what) + ": distribution does not sum to 1");
    }
  }
}

ad::Var kl_rows(ad::Var p, ad::Var q) {
  ad::Var lp = ad::log(ad::clamp_min(p, kProbFloor));
  ad::Var lq = ad::log(ad::clamp_min(q, kProbFloor));
  return ad::row_sum(ad::mul(p, ad::sub(lp, lq)));
}

ad::Var interaction_loss(std::span<const ad::Var> clean,
                         std::span<const std::array<ad::Var, kNumExperts>> perturbed) {
  if (clean.size() != kNumExperts || perturbed.size() != kNumModalities) {
    throw DataError("interaction_loss: expected 4 experts x 2 modalities");
  }
  ad::Var total;
  for (int e = 0; e < kNumExperts; ++e) {
    check_normalized(clean[e].value(), "interaction_loss clean");
    for (int m = 0; m < kNumModalities; ++m) {
      check_normalized(perturbed[m][e].value(), "interaction_loss perturbed");
      const double s = interaction_sign(static_cast<ExpertId>(e), m);
      ad::Var term = ad::scale(ad::mean(kl_rows(clean[e], perturbed[m][e])), s);
      total = total.valid() ? ad::add(total, term) : term;
    }
  }
  return ad::scale(total, 1.0 / kNumExperts);
}

}  // namespace cmoe
