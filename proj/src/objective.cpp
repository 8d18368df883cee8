#include "cmoe/objective.hpp"

#include "cmoe/errors.hpp"

#include <cmath>

namespace cmoe {

void LossWeights::validate(int num_classes) const {
  if (lambda1 < 0.0 || lambda2 < 0.0 || lambda_int < 0.0) throw ConfigError("loss weights must be >= 0");
  if (!class_weights.empty()) {
    if (static_cast<int>(class_weights.size()) != num_classes) throw ConfigError("class_weights length != classes");
    for (double w : class_weights)
      if (!(w > 0.0)) throw ConfigError("class weights must be > 0");
  }
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
}

std::vector<double> inverse_frequency_weights(std::span<const int> labels, int num_classes) {
  std::vector<double> count(static_cast<size_t>(num_classes), 0.0);
  for (int y : labels) count.at(static_cast<size_t>(y)) += 1.0;
  std::vector<double> w(static_cast<size_t>(num_classes), 1.0);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (count[c] > 0.0) {
      w[c] = static_cast<double>(labels.size()) / count[c];
      sum += w[c];
      ++present;
    }
  }
  if (present == 0) return w;
  const double mean = sum / present;
  for (int c = 0; c < num_classes; ++c)
    if (count[c] > 0.0) w[c] /= mean;
  return w;
}

ad::Var class_weighted_ce(ad::Var logits, std::span<const int> labels, std::span<const double> class_weights) {
  const auto b = logits.rows(), c = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != b) throw DataError("class_weighted_ce: label count mismatch");
  Matrix select = Matrix::Zero(b, c);
  double wsum = 0.0;
  for (Eigen::Index n = 0; n < b; ++n) {
    const int y = labels[n];
    if (y < 0 || y >= c) throw DataError("class_weighted_ce: label out of range");
    const double w = class_weights.empty() ? 1.0 : class_weights[y];
    select(n, y) = w;
    wsum += w;
  }
  ad::Var logp = ad::clamp_min(ad::log_softmax_rows(logits), std::log(kProbFloor));
  ad::Var weighted = ad::sum(ad::mul(logp, logits.tape()->constant(std::move(select))));
  return ad::scale(weighted, -1.0 / wsum);
}

ConceptBatch concept_batch(std::span<const CohortSample* const> batch) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  ConceptBatch cb{Matrix::Zero(b, schema::kNumL1Targets), Matrix::Zero(b, schema::kNumL1),
                  Matrix::Zero(b, schema::kNumL2), Matrix::Zero(b, schema::kNumL2)};
  for (Eigen::Index n = 0; n < b; ++n) {
    const ConceptTargets& t = batch[n]->concepts;
    for (int i = 0; i < schema::kNumL1Targets; ++i) cb.l1_targets(n, i) = t.l1_onehot[i];
    for (int k = 0; k < schema::kNumL1; ++k) cb.l1_mask(n, k) = t.l1_mask[k];
    for (int j = 0; j < schema::kNumL2; ++j) {
      cb.l2_targets(n, j) = t.l2_binary[j];
      cb.l2_mask(n, j) = t.l2_mask[j];
    }
  }
  return cb;
}

Matrix concept_loss_weights(const Matrix& mask, int level) {
  if (level == 2) return mask;
  if (mask.cols() != schema::kNumL1) throw DataError("L1 mask must have 5 columns");
  Matrix w(mask.rows(), schema::kNumL1Targets);
  for (int k = 0; k < schema::kNumL1; ++k) {
    const int v = schema::kL1Categories[k];
    for (int c = 0; c < v; ++c) w.col(schema::l1_offset(k) + c) = mask.col(k) / static_cast<double>(v);
  }
  return w;
}

BceBalance balanced_bce_weights(const Matrix& targets, const Matrix& target_mask) {
  constexpr double kCap = 10.0;
  BceBalance b;
  for (Eigen::Index c = 0; c < targets.cols(); ++c) {
    double pos = 0.0, total = 0.0;
    for (Eigen::Index n = 0; n < targets.rows(); ++n) {
      if (target_mask(n, c) <= 0.0) continue;
      total += 1.0;
      pos += targets(n, c);
    }
    double wp = 1.0, wn = 1.0;
    if (total > 0.0 && pos > 0.0 && pos < total) {
      wp = std::min(kCap, 0.5 * total / pos);
      wn = std::min(kCap, 0.5 * total / (total - pos));
    }
    b.pos.push_back(wp);
    b.neg.push_back(wn);
  }
  return b;
}

ad::Var masked_concept_loss(std::span<const ad::Var> per_expert_probs, const Matrix& targets, const Matrix& mask,
                            int level, double eps, const BceBalance* balance) {
  if (per_expert_probs.empty()) throw DataError("masked_concept_loss: no experts");
  const Eigen::Index width = level == 1 ? schema::kNumL1Targets : schema::kNumL2;
  const Eigen::Index mask_width = level == 1 ? schema::kNumL1 : schema::kNumL2;
  if (targets.cols() != width || mask.cols() != mask_width || targets.rows() != mask.rows()) {
    throw DataError("masked_concept_loss: target/mask layout mismatch for level " + std::to_string(level));
  }
  Matrix w = concept_loss_weights(mask, level);
  if (balance) {
    for (Eigen::Index n = 0; n < w.rows(); ++n)
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        w(n, c) *= targets(n, c) > 0.5 ? balance->pos[c] : balance->neg[c];
  }
  const double denom = mask.sum() + eps;

  ad::Tape& tape = *per_expert_probs[0].tape();
  ad::Var t = tape.constant(targets);
  ad::Var one_minus_t = tape.constant((1.0 - targets.array()).matrix());
  ad::Var wv = tape.constant(std::move(w));
  ad::Var total;
  for (const ad::Var& p : per_expert_probs) {
    if (p.cols() != width || p.rows() != targets.rows()) throw DataError("masked_concept_loss: activation layout mismatch");
    ad::Var lp = ad::log(ad::clamp_min(p, kProbFloor));
    ad::Var lq = ad::log(ad::clamp_min(ad::one_minus(p), kProbFloor));
    ad::Var bce = ad::scale(ad::add(ad::mul(lp, t), ad::mul(lq, one_minus_t)), -1.0);
    ad::Var term = ad::scale(ad::sum(ad::mul(bce, wv)), 1.0 / denom);
    total = total.valid() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(per_expert_probs.size()));
}

TotalLoss total_loss(const LossTerms& terms, const LossWeights& w) {
  TotalLoss out;
  out.breakdown.cls = terms.cls.scalar();
  auto add_aux = [&](ad::Var term, double lambda, double& slot) {
    if (!term.valid()) return;
    slot = term.scalar();
    ad::Var weighted = ad::scale(term, lambda);
    out.auxiliary = out.auxiliary.valid() ? ad::add(out.auxiliary, weighted) : weighted;
  };
  add_aux(terms.concept_l1, w.lambda1, out.breakdown.concept_l1);
  add_aux(terms.concept_l2, w.lambda2, out.breakdown.concept_l2);
  add_aux(terms.interaction, w.lambda_int, out.breakdown.interaction);
  out.total = out.auxiliary.valid() ? ad::add(terms.cls, out.auxiliary) : terms.cls;
  out.breakdown.total = out.total.scalar();
  return out;
}

LossTerms loss_terms(const ForwardResult& fwd, std::span<const CohortSample* const> batch, const LossWeights& w,
                     const ObjectiveOptions& opt) {
  LossTerms t;
  std::vector<int> labels;
  for (const CohortSample* s : batch) labels.push_back(s->label);
  t.cls = class_weighted_ce(fwd.logits, labels, w.class_weights);

  const ConceptBatch cb = concept_batch(batch);
  std::vector<ad::Var> p1, p2;
  for (const ExpertPass& e : fwd.experts) {
    if (e.l1) p1.push_back(e.l1->probs);
    if (e.l2) p2.push_back(e.l2->probs);
  }
  if (!p1.empty()) t.concept_l1 = masked_concept_loss(p1, cb.l1_targets, cb.l1_mask, 1, w.eps, opt.l1_balance);
  if (!p2.empty()) t.concept_l2 = masked_concept_loss(p2, cb.l2_targets, cb.l2_mask, 2, w.eps, opt.l2_balance);

  if (fwd.perturbed) {
    std::array<ad::Var, kNumExperts> clean;
    std::array<std::array<ad::Var, kNumExperts>, kNumModalities> pert;
    for (int e = 0; e < kNumExperts; ++e) {
      clean[e] = ad::softmax_rows(fwd.experts[e].logits);
      for (int m = 0; m < kNumModalities; ++m) pert[m][e] = ad::softmax_rows(fwd.perturbed_logits[m][e]);
    }
    t.interaction = interaction_loss(clean, pert);
  }
  return t;
}

}  // namespace cmoe
