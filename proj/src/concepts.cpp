#include "cmoe/concepts.hpp"

#include "cmoe/errors.hpp"
#include "cmoe/layers.hpp"

namespace cmoe {

std::string concept_block(ExpertId e, int level, int k) {
  return std::string("concept.") + kExpertNames[static_cast<int>(e)] + ".L" + std::to_string(level) + ".k" +
         std::to_string(k);
}

void init_concept_block(ParamStore& s, const std::string& block, int in, int d_c, int categories, bool residual,
                        Rng& rng) {
  init_affine(s, block + ".pos", in, d_c, rng);
  init_affine(s, block + ".neg", in, d_c, rng);
  init_affine(s, block + ".score", 2 * d_c, categories, rng);
  if (residual) init_affine(s, block + ".res", in, d_c, rng);
}

ConceptStates concept_states(ParamBinding& p, const std::string& block, ad::Var z) {
  const Matrix& w = p.tape().value(p(block + ".pos.w").id());
  if (w.rows() != z.cols()) {
    throw DataError(block + ": input width " + std::to_string(z.cols()) + " but block expects " +
                    std::to_string(w.rows()));
  }
  return {ad::leaky_relu(affine(p, block + ".pos", z), kLeakySlope),
          ad::leaky_relu(affine(p, block + ".neg", z), kLeakySlope)};
}

ad::Var ordinal_activation(ad::Var probs) {
  const auto v = probs.cols();
  Matrix levels(v, 1);
  for (Eigen::Index i = 0; i < v; ++i) levels(i, 0) = v > 1 ? static_cast<double>(i) / static_cast<double>(v - 1) : 1.0;
  ad::Var total = ad::row_sum(probs);
  ad::Var weighted = ad::matmul(probs, probs.tape()->constant(std::move(levels)));
  return ad::mul(weighted, ad::reciprocal(total));
}

ConceptActivation concept_activation(ParamBinding& p, const std::string& block, const ConceptStates& s) {
  const ad::Var parts[] = {s.pos, s.neg};
  ConceptActivation a;
  a.score = affine(p, block + ".score", ad::concat_cols(parts));
  a.probs = ad::sigmoid(a.score);
  a.activation = a.probs.cols() == 1 ? a.probs : ordinal_activation(a.probs);
  return a;
}

ad::Var concept_residual(ParamBinding& p, const std::string& block, ad::Var z) {
  return affine(p, block + ".res", z);
}

ad::Var concept_embed(const ConceptStates& s, ad::Var activation, ad::Var residual, double gamma_res) {
  ad::Var mix = ad::add(ad::mul(s.pos, activation), ad::mul(s.neg, ad::one_minus(activation)));
  if (residual.valid() && gamma_res != 0.0) mix = ad::add(mix, ad::scale(residual, gamma_res));
  return mix;
}

ad::Var level2_input(ad::Var z, ad::Var b1, Eigen::Index d, Eigen::Index b1_width) {
  if (z.cols() != d || b1.cols() != b1_width || z.rows() != b1.rows()) {
    throw DataError("level2_input: expected widths " + std::to_string(d) + " + " + std::to_string(b1_width) +
                    ", got " + std::to_string(z.cols()) + " + " + std::to_string(b1.cols()));
  }
  const ad::Var parts[] = {z, b1};
  return ad::concat_cols(parts);
}

ad::Var expert_head(ParamBinding& p, ExpertId e, ad::Var head_input) {
  const std::string pre = std::string("head.") + kExpertNames[static_cast<int>(e)];
  const Matrix& w = p.tape().value(p(pre + ".w").id());
  if (w.rows() != head_input.cols()) {
    throw DataError(pre + ": head expects width " + std::to_string(w.rows()) + ", got " +
                    std::to_string(head_input.cols()));
  }
  return affine(p, pre, head_input);
}

ad::Var gate(ParamBinding& p, ad::Var e1, ad::Var e2, ad::Var* logits) {
  const ad::Var parts[] = {e1, e2};
  ad::Var g = affine(p, "gate", ad::concat_cols(parts));
  if (logits) *logits = g;
  return ad::softmax_rows(g);
}

ad::Var fuse_predict(ad::Var alpha, std::span<const ad::Var> expert_logits) {
  if (static_cast<Eigen::Index>(expert_logits.size()) != alpha.cols()) {
    throw DataError("fuse_predict: gate width does not match number of experts");
  }
  ad::Var out;
  for (size_t e = 0; e < expert_logits.size(); ++e) {
    ad::Var term = ad::mul(expert_logits[e], ad::slice_cols(alpha, static_cast<Eigen::Index>(e), 1));
    out = out.valid() ? ad::add(out, term) : term;
  }
  return out;
}

ad::Var binary_pair_encoding(ad::Var probs) {
  std::vector<ad::Var> parts;
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    ad::Var pj = ad::slice_cols(probs, j, 1);
    parts.push_back(pj);
    parts.push_back(ad::one_minus(pj));
  }
  return ad::concat_cols(parts);
}

}  // namespace cmoe
