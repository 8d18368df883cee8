#include "cmoe/model.hpp"

#include "cmoe/errors.hpp"
#include "cmoe/layers.hpp"

namespace cmoe {

void ModelSpec::validate() const {
  variant.validate();
  if (dims.d < 1 || dims.concept_dim < 1 || dims.gnn_hidden < 1 || dims.gnn_layers < 1) {
    throw ConfigError("model dims must be >= 1");
  }
  if (dims.num_classes < 2) throw ConfigError("model needs at least 2 classes");
  if (dropout < 0.0 || dropout >= 1.0 || gnn_dropout < 0.0 || gnn_dropout >= 1.0) {
    throw ConfigError("dropout rates must be in [0,1)");
  }
  if (!(perturb_sigma_scale > 0.0)) throw ConfigError("perturb_sigma_scale must be > 0");
}

int ModelSpec::l1_width() const {
  if (!variant.use_l1) return 0;
  return variant.encoding == Encoding::kCbm ? schema::kNumL1Targets : schema::kNumL1 * dims.concept_dim;
}

int ModelSpec::l2_width() const {
  if (!variant.use_l2) return 0;
  return variant.encoding == Encoding::kCbm ? 2 * schema::kNumL2 : schema::kNumL2 * dims.concept_dim;
}

int ModelSpec::l2_input_width() const {
  return variant.l2_conditions_on_l1() ? dims.d + l1_width() : dims.d;
}

int ModelSpec::head_width() const { return l1_width() + l2_width(); }

Model::Model(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  spec_.validate();
  init(init_seed);
}

Model::Model(ModelSpec spec, ParamStore params) : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  ParamStore expected;
  std::swap(expected, params_);
  init(0);
  std::swap(expected, params_);
  for (const auto& [name, m] : expected.all()) {
    if (!params_.contains(name)) throw DataError("checkpoint is missing parameter " + name);
    const Matrix& have = params_.at(name);
    if (have.rows() != m.rows() || have.cols() != m.cols()) {
      throw DataError("checkpoint parameter " + name + " has the wrong shape");
    }
  }
  if (expected.all().size() != params_.all().size()) throw DataError("checkpoint has unexpected parameters");
}

void Model::init(std::uint64_t seed) {
  Rng rng(seed, "init");
  const ModelDims& d = spec_.dims;
  init_encoders(params_, d.encoder(), rng);
  init_experts(params_, d.d, rng);
  const bool residual = spec_.variant.bottleneck() == Bottleneck::kCemSoft;
  for (int e = 0; e < kNumExperts; ++e) {
    const auto eid = static_cast<ExpertId>(e);
    if (spec_.variant.use_l1) {
      for (int k = 0; k < schema::kNumL1; ++k) {
        init_concept_block(params_, concept_block(eid, 1, k), d.d, d.concept_dim, schema::kL1Categories[k],
                           residual, rng);
      }
    }
    if (spec_.variant.use_l2) {
      for (int j = 0; j < schema::kNumL2; ++j) {
        init_concept_block(params_, concept_block(eid, 2, j), spec_.l2_input_width(), d.concept_dim, 1, residual,
                           rng);
      }
    }
    init_affine(params_, std::string("head.") + kExpertNames[e], spec_.head_width(), d.num_classes, rng);
  }
  init_affine(params_, "gate", kNumModalities * d.d, kNumExperts, rng);
}

LevelState Model::concept_level(ParamBinding& p, ExpertId e, int level, ad::Var input) const {
  const int count = level == 1 ? schema::kNumL1 : schema::kNumL2;
  const bool cem = spec_.variant.encoding == Encoding::kCem;
  const bool residual = spec_.variant.bottleneck() == Bottleneck::kCemSoft;
  LevelState st;
  st.level = level;
  st.input = input;
  std::vector<ad::Var> probs, acts;
  for (int k = 0; k < count; ++k) {
    const std::string block = concept_block(e, level, k);
    ConceptStates s = concept_states(p, block, input);
    ConceptActivation a = concept_activation(p, block, s);
    probs.push_back(a.probs);
    acts.push_back(a.activation);
    if (cem) {
      ad::Var res;
      if (residual) {
        res = concept_residual(p, block, input);
        st.residuals.push_back(res);
      }
      st.embeds.push_back(concept_embed(s, a.activation, res, spec_.variant.residual_gate()));
    }
    st.states.push_back(s);
    st.acts.push_back(a);
  }
  st.probs = ad::concat_cols(probs);
  st.activations = ad::concat_cols(acts);
  if (cem) st.bottleneck = ad::concat_cols(st.embeds);
  else st.bottleneck = level == 1 ? st.probs : binary_pair_encoding(st.probs);
  return st;
}

ExpertPass Model::expert_pass(ParamBinding& p, ad::Var e1, ad::Var e2, ExpertId e, const Matrix* hidden_mask) const {
  ExpertPass out;
  out.z = expert_forward(p, e1, e2, e, hidden_mask);
  std::vector<ad::Var> head_parts;
  if (spec_.variant.use_l1) {
    out.l1 = concept_level(p, e, 1, out.z);
    head_parts.push_back(out.l1->bottleneck);
  }
  if (spec_.variant.use_l2) {
    ad::Var in = spec_.variant.l2_conditions_on_l1()
                     ? level2_input(out.z, out.l1->bottleneck, spec_.dims.d, spec_.l1_width())
                     : out.z;
    out.l2 = concept_level(p, e, 2, in);
    head_parts.push_back(out.l2->bottleneck);
  }
  out.head_input = head_parts.size() == 1 ? head_parts[0] : ad::concat_cols(head_parts);
  out.logits = expert_head(p, e, out.head_input);
  return out;
}

ForwardResult Model::forward(ParamBinding& p, std::span<const CohortSample* const> batch,
                             const ForwardOptions& opt) const {
  if (batch.empty()) throw DataError("forward: empty batch");
  if (opt.training && !opt.rng) throw std::logic_error("forward: training mode needs an rng");
  EncodeOptions eo;
  eo.training = opt.training;
  eo.patch_cap = spec_.patch_cap;
  eo.gnn_dropout = spec_.gnn_dropout;
  eo.rng = opt.rng;

  std::vector<ad::Var> rows1, rows2;
  for (const CohortSample* s : batch) {
    auto [e1, e2] = encode_all(p, *s, spec_.dims.encoder(), eo);
    rows1.push_back(e1);
    rows2.push_back(e2);
  }
  ForwardResult r;
  r.e1 = rows1.size() == 1 ? rows1[0] : ad::concat_rows(rows1);
  r.e2 = rows2.size() == 1 ? rows2[0] : ad::concat_rows(rows2);

  const auto bsz = static_cast<Eigen::Index>(batch.size());
  std::array<Matrix, kNumExperts> masks;
  const bool use_masks = opt.training && spec_.dropout > 0.0;
  if (use_masks) {
    for (auto& m : masks) m = dropout_mask(bsz, spec_.dims.d, spec_.dropout, *opt.rng);
  }
  std::array<ad::Var, kNumExperts> expert_logits;
  for (int e = 0; e < kNumExperts; ++e) {
    r.experts[e] = expert_pass(p, r.e1, r.e2, static_cast<ExpertId>(e), use_masks ? &masks[e] : nullptr);
    expert_logits[e] = r.experts[e].logits;
  }
  r.alpha = gate(p, r.e1, r.e2, &r.gate_logits);
  r.logits = fuse_predict(r.alpha, expert_logits);

  if (opt.perturb) {
    r.perturbed = true;
    for (int m = 0; m < kNumModalities; ++m) {
      ad::Var clean = m == 0 ? r.e1 : r.e2;
      r.sigma[m] = opt.sigma_override ? *opt.sigma_override
                                      : perturbation_sigma(clean.value(), spec_.perturb_sigma_scale);
      ad::Var noisy;
      if (opt.unit_noise) {
        noisy = perturb_modality(clean, r.sigma[m], (*opt.unit_noise)[m]);
      } else {
        if (!opt.rng) throw std::logic_error("forward: perturbation needs noise or an rng");
        noisy = perturb_modality(clean, r.sigma[m], *opt.rng);
      }
      ad::Var pe1 = m == 0 ? noisy : r.e1;
      ad::Var pe2 = m == 1 ? noisy : r.e2;
      for (int e = 0; e < kNumExperts; ++e) {
        r.perturbed_logits[m][e] =
            expert_pass(p, pe1, pe2, static_cast<ExpertId>(e), use_masks ? &masks[e] : nullptr).logits;
      }
    }
  }
  return r;
}

RepresentationChain representation_chain(const ExpertPass& pass, const ModelVariant& variant) {
  if (variant.bottleneck() != Bottleneck::kCemSoft) {
    throw ConfigError("representation_chain requires the soft CEM bottleneck");
  }
  if (!pass.l1) throw ConfigError("representation_chain requires an L1 concept level");
  RepresentationChain c;
  c.r0 = pass.z;
  const ad::Var r1_parts[] = {pass.z, pass.l1->bottleneck, ad::concat_cols(pass.l1->residuals)};
  c.r1 = ad::concat_cols(r1_parts);
  if (pass.l2) {
    const ad::Var r2_parts[] = {c.r1, pass.l2->bottleneck};
    c.r2 = ad::concat_cols(r2_parts);
  }
  return c;
}

}  // namespace cmoe
