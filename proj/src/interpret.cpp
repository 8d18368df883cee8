#include "cmoe/interpret.hpp"

#include "cmoe/errors.hpp"
#include "cmoe/format.hpp"
#include "cmoe/metrics.hpp"
#include "cmoe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace cmoe {

namespace {

constexpr std::array<std::string_view, 3> kPathNames{"L1->class", "L2->class", "L1->L2"};

int concept_count(int level) { return level == 1 ? schema::kNumL1 : schema::kNumL2; }

std::string_view concept_name(int level, int k) {
  return level == 1 ? schema::kL1Names[static_cast<size_t>(k)] : schema::kL2Names[static_cast<size_t>(k)];
}

bool has_embeddings(const ModelVariant& v) { return v.encoding == Encoding::kCem; }

// |<g, c>| per concept slice for every row.
void slice_products(const Matrix& g, const Matrix& c, int dc, int expert, std::vector<Matrix>& phi) {
  for (Eigen::Index n = 0; n < g.rows(); ++n) {
    for (Eigen::Index k = 0; k < g.cols() / dc; ++k) {
      double s = 0.0;
      for (int i = 0; i < dc; ++i) s += g(n, k * dc + i) * c(n, k * dc + i);
      phi[static_cast<size_t>(n)](expert, k) = std::abs(s);
    }
  }
}

template <class F>
void for_sample_batches(std::span<const CohortSample* const> samples, int batch_size, F&& f) {
  const size_t bs = static_cast<size_t>(std::max(1, batch_size));
  for (size_t i = 0; i < samples.size(); i += bs) f(samples.subspan(i, std::min(bs, samples.size() - i)));
}

ad::Var constant_or_invalid(ad::Tape& t, const std::optional<LevelState>& l) {
  return l ? t.constant(l->bottleneck.value()) : ad::Var();
}

}  // namespace

std::string_view path_name(AttrPath p) { return kPathNames[static_cast<size_t>(p)]; }

AttrPath parse_path(std::string_view name) {
  for (size_t i = 0; i < kPathNames.size(); ++i)
    if (kPathNames[i] == name) return static_cast<AttrPath>(i);
  throw ConfigError("unknown attribution path '" + std::string(name) + "'");
}

std::vector<AttrPath> available_paths(const ModelVariant& v) {
  if (!has_embeddings(v)) throw ConfigError("attribution needs concept embeddings; " + v.name() + " has scalar concepts");
  std::vector<AttrPath> out;
  if (v.use_l1) out.push_back(AttrPath::kL1ToClass);
  if (v.use_l2) out.push_back(AttrPath::kL2ToClass);
  if (v.l2_conditions_on_l1()) out.push_back(AttrPath::kL1ToL2);
  return out;
}

double grad_input_attr(const RowVector& grad, const RowVector& embedding) {
  if (grad.size() != embedding.size()) throw DataError("grad_input_attr: size mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < grad.size(); ++i) s += grad(i) * embedding(i);
  return std::abs(s);
}

double grad_input_attr(const std::function<ad::Var(ad::Var)>& f, const RowVector& embedding) {
  ad::Tape tape;
  ad::Var c = tape.variable(embedding);
  ad::Var y = f(c);
  if (y.rows() != 1 || y.cols() != 1) throw DataError("grad_input_attr: target must be scalar");
  tape.backward(y);
  return grad_input_attr(RowVector(tape.grad(c)), embedding);
}

ad::Var logits_from_l1(const Model& model, ParamBinding& p, ExpertId e, ad::Var z, ad::Var b1, ad::Var b2) {
  const ModelSpec& s = model.spec();
  std::vector<ad::Var> parts{b1};
  if (s.variant.use_l2) {
    if (s.variant.l2_conditions_on_l1()) {
      parts.push_back(model.concept_level(p, e, 2, level2_input(z, b1, s.dims.d, s.l1_width())).bottleneck);
    } else {
      parts.push_back(b2);
    }
  }
  return expert_head(p, e, parts.size() == 1 ? parts[0] : ad::concat_cols(parts));
}

ad::Var logits_from_l2(const Model& /*model*/, ParamBinding& p, ExpertId e, ad::Var b1, ad::Var b2) {
  if (!b1.valid()) return expert_head(p, e, b2);
  const ad::Var parts[] = {b1, b2};
  return expert_head(p, e, ad::concat_cols(parts));
}

std::vector<AttributionRecord> attr_paths(const Model& model, std::span<const CohortSample* const> samples,
                                          AttrPath path, int fold, const AttrOptions& opt) {
  const ModelSpec& spec = model.spec();
  const auto paths = available_paths(spec.variant);
  if (std::find(paths.begin(), paths.end(), path) == paths.end()) {
    throw ConfigError(std::string(path_name(path)) + " is not available for " + spec.variant.name());
  }
  const int dc = spec.dims.concept_dim;
  const int classes = spec.dims.num_classes;
  const int targets = path == AttrPath::kL1ToL2 ? schema::kNumL2 : classes;
  const int sources = concept_count(source_level(path));

  std::vector<AttributionRecord> out;
  for_sample_batches(samples, opt.batch_size, [&](std::span<const CohortSample* const> batch) {
    const auto b = static_cast<Eigen::Index>(batch.size());
    ad::Tape tape;
    ParamBinding pb(tape, model.params());
    const ForwardResult fwd = model.forward(pb, batch, {});

    // phi[t][n]
    std::vector<std::vector<Matrix>> phi(static_cast<size_t>(targets),
                                         std::vector<Matrix>(batch.size(), Matrix::Zero(kNumExperts, sources)));
    for (int e = 0; e < kNumExperts; ++e) {
      const auto eid = static_cast<ExpertId>(e);
      const ExpertPass& pass = fwd.experts[e];
      ad::Tape t;
      ParamBinding p(t, model.params());
      ad::Var z = t.constant(pass.z.value());
      if (path == AttrPath::kL1ToL2) {
        ad::Var b1 = t.variable(pass.l1->bottleneck.value());
        const LevelState l2 = model.concept_level(p, eid, 2, level2_input(z, b1, spec.dims.d, spec.l1_width()));
        for (int j = 0; j < targets; ++j) {
          ad::Var y = opt.l1_to_l2 == L1ToL2Target::kSquaredNorm ? ad::row_sum(ad::square(l2.embeds[j]))
                                                                  : l2.acts[j].score;
          t.backward(y, Matrix::Ones(b, 1));
          slice_products(t.grad(b1), b1.value(), dc, e, phi[j]);
        }
        continue;
      }
      ad::Var src, out_logits;
      if (path == AttrPath::kL1ToClass) {
        src = t.variable(pass.l1->bottleneck.value());
        out_logits = logits_from_l1(model, p, eid, z, src, constant_or_invalid(t, pass.l2));
      } else {
        src = t.variable(pass.l2->bottleneck.value());
        out_logits = logits_from_l2(model, p, eid, constant_or_invalid(t, pass.l1), src);
      }
      for (int c = 0; c < targets; ++c) {
        Matrix seed = Matrix::Zero(b, classes);
        seed.col(c).setOnes();
        t.backward(out_logits, seed);
        slice_products(t.grad(src), src.value(), dc, e, phi[c]);
      }
    }
    const Matrix& alpha = fwd.alpha.value();
    for (Eigen::Index n = 0; n < b; ++n) {
      for (int tg = 0; tg < targets; ++tg) {
        AttributionRecord r;
        r.id = batch[n]->id;
        r.label = batch[n]->label;
        r.fold = fold;
        r.path = path;
        r.target = tg;
        r.phi = std::move(phi[tg][n]);
        r.alpha = alpha.row(n);
        out.push_back(std::move(r));
      }
    }
  });
  return out;
}

std::map<AttrKey, AttrAggregate> aggregate_attr(std::span<const AttributionRecord> records) {
  struct FoldAcc {
    Matrix phi;
    RowVector gate;
    int n = 0;
  };
  std::map<AttrKey, std::map<int, FoldAcc>> groups;
  for (const AttributionRecord& r : records) {
    const bool class_path = r.path != AttrPath::kL1ToL2;
    if (class_path && r.label != r.target) continue;
    if (r.alpha.size() != r.phi.rows()) throw DataError("aggregate_attr: alpha/phi expert count mismatch");
    FoldAcc& acc = groups[AttrKey{r.path, r.target, r.label}][r.fold];
    const RowVector gate = r.alpha * r.phi;
    if (acc.n == 0) {
      acc.phi = r.phi;
      acc.gate = gate;
    } else {
      acc.phi += r.phi;
      acc.gate += gate;
    }
    ++acc.n;
  }
  std::map<AttrKey, AttrAggregate> out;
  for (const auto& [key, folds] : groups) {
    AttrAggregate a;
    std::vector<Matrix> means;
    std::vector<RowVector> gates;
    for (const auto& [f, acc] : folds) {
      means.push_back(acc.phi / acc.n);
      gates.push_back(acc.gate / acc.n);
      a.samples += acc.n;
    }
    a.folds = static_cast<int>(means.size());
    a.mean = Matrix::Zero(means[0].rows(), means[0].cols());
    a.gate_mean = RowVector::Zero(gates[0].size());
    for (size_t i = 0; i < means.size(); ++i) {
      a.mean += means[i];
      a.gate_mean += gates[i];
    }
    a.mean /= a.folds;
    a.gate_mean /= a.folds;
    a.std = Matrix::Zero(a.mean.rows(), a.mean.cols());
    a.gate_std = RowVector::Zero(a.gate_mean.size());
    for (size_t i = 0; i < means.size(); ++i) {
      a.std.array() += (means[i] - a.mean).array().square();
      a.gate_std.array() += (gates[i] - a.gate_mean).array().square();
    }
    a.std = (a.std / a.folds).cwiseSqrt();
    a.gate_std = (a.gate_std / a.folds).cwiseSqrt();
    out.emplace(key, std::move(a));
  }
  return out;
}

std::string attr_csv(const std::map<AttrKey, AttrAggregate>& agg, AttrPath path, AttrView view) {
  const int level = source_level(path);
  const int k = concept_count(level);
  std::vector<std::string> cols;
  if (view == AttrView::kPerExpert) {
    for (int e = 0; e < kNumExperts; ++e)
      for (int c = 0; c < k; ++c) cols.push_back(std::string(kExpertNames[e]) + "." + std::string(concept_name(level, c)));
  } else {
    for (int c = 0; c < k; ++c) cols.emplace_back(concept_name(level, c));
  }
  std::ostringstream os;
  os << "target,class,folds,samples";
  for (const auto& c : cols) os << ',' << c;
  for (const auto& c : cols) os << ',' << c << ".std";
  os << '\n';
  for (const auto& [key, a] : agg) {
    if (key.path != path) continue;
    if (path == AttrPath::kL1ToL2) os << schema::kL2Names[static_cast<size_t>(key.target)];
    else os << "class_" << key.target;
    os << ',' << key.cls << ',' << a.folds << ',' << a.samples;
    if (view == AttrView::kPerExpert) {
      for (int e = 0; e < kNumExperts; ++e)
        for (int c = 0; c < k; ++c) os << ',' << format_double(a.mean(e, c));
      for (int e = 0; e < kNumExperts; ++e)
        for (int c = 0; c < k; ++c) os << ',' << format_double(a.std(e, c));
    } else {
      for (int c = 0; c < k; ++c) os << ',' << format_double(a.gate_mean(c));
      for (int c = 0; c < k; ++c) os << ',' << format_double(a.gate_std(c));
    }
    os << '\n';
  }
  return os.str();
}

RowVector evidence_profile(const RowVector& alpha, const RowVector& p, double eps) {
  if (alpha.size() != p.size()) throw DataError("evidence_profile: alpha/p size mismatch");
  const RowVector num = alpha.cwiseProduct(p);
  return num / (num.sum() + eps);
}

AblationResult logit_ablation(const Model& model, const CohortSample& sample, ConceptRef ref, int cls,
                              NeutralState neutral, const std::array<RowVector, kNumExperts>* means) {
  const ModelSpec& spec = model.spec();
  if (!has_embeddings(spec.variant)) throw ConfigError("logit ablation needs concept embeddings");
  if ((ref.level == 1 && !spec.variant.use_l1) || (ref.level == 2 && !spec.variant.use_l2) ||
      ref.level < 1 || ref.level > 2) {
    throw ConfigError("logit ablation: variant lacks the requested concept level");
  }
  if (ref.index < 0 || ref.index >= concept_count(ref.level)) {
    throw ConfigError("logit ablation: concept index out of range");
  }
  if (cls < 0 || cls >= spec.dims.num_classes) throw ConfigError("logit ablation: class out of range");
  if (neutral == NeutralState::kEmpiricalMean && !means) {
    throw ConfigError("logit ablation: empirical-mean state needs embedding means");
  }
  const int dc = spec.dims.concept_dim;
  const CohortSample* one[] = {&sample};
  ad::Tape tape;
  ParamBinding pb(tape, model.params());
  const ForwardResult fwd = model.forward(pb, one, {});

  AblationResult r{RowVector::Zero(kNumExperts), RowVector::Zero(kNumExperts)};
  for (int e = 0; e < kNumExperts; ++e) {
    const auto eid = static_cast<ExpertId>(e);
    const ExpertPass& pass = fwd.experts[e];
    const LevelState& level = ref.level == 1 ? *pass.l1 : *pass.l2;
    const RowVector state = neutral == NeutralState::kNegative ? RowVector(level.states[ref.index].neg.value().row(0))
                                                               : (*means)[e];
    if (state.size() != dc) throw DataError("logit ablation: neutral state has the wrong width");
    auto head = [&](bool ablate) {
      ad::Tape t;
      ParamBinding p(t, model.params());
      Matrix b = level.bottleneck.value();
      if (ablate) b.block(0, ref.index * dc, 1, dc) = state;
      if (ref.level == 1) {
        return logits_from_l1(model, p, eid, t.constant(pass.z.value()), t.constant(b), constant_or_invalid(t, pass.l2))
            .value()(0, cls);
      }
      return logits_from_l2(model, p, eid, constant_or_invalid(t, pass.l1), t.constant(b)).value()(0, cls);
    };
    r.delta(e) = fwd.alpha.value()(0, e) * (head(false) - head(true));
  }
  const RowVector pos = r.delta.cwiseMax(0.0);
  const double s = pos.sum();
  if (s > 0.0) r.normalized = pos / s;
  return r;
}

std::array<RowVector, kNumExperts> empirical_embedding_means(const Model& model,
                                                             std::span<const CohortSample* const> samples,
                                                             ConceptRef ref, int batch_size) {
  if (samples.empty()) throw DataError("empirical_embedding_means: no samples");
  if (!has_embeddings(model.spec().variant)) throw ConfigError("embedding means need concept embeddings");
  std::array<RowVector, kNumExperts> sum;
  for (auto& s : sum) s = RowVector::Zero(model.spec().dims.concept_dim);
  for_sample_batches(samples, batch_size, [&](std::span<const CohortSample* const> batch) {
    ad::Tape tape;
    ParamBinding pb(tape, model.params());
    const ForwardResult fwd = model.forward(pb, batch, {});
    for (int e = 0; e < kNumExperts; ++e) {
      const auto& level = ref.level == 1 ? fwd.experts[e].l1 : fwd.experts[e].l2;
      if (!level) throw ConfigError("embedding means: variant lacks the requested level");
      sum[e] += level->embeds.at(static_cast<size_t>(ref.index)).value().colwise().sum();
    }
  });
  for (auto& s : sum) s /= static_cast<double>(samples.size());
  return sum;
}

RoutingStats routing_stats(const Matrix& alpha, std::span<const int> labels, int num_classes) {
  if (alpha.rows() != static_cast<Eigen::Index>(labels.size())) throw DataError("routing_stats: label count mismatch");
  if (alpha.rows() == 0) throw DataError("routing_stats: empty set");
  RoutingStats r;
  r.per_class.resize(static_cast<size_t>(num_classes));
  std::vector<int> count(static_cast<size_t>(num_classes), 0);
  std::vector<RowVector> sum(static_cast<size_t>(num_classes), RowVector::Zero(alpha.cols()));
  for (Eigen::Index n = 0; n < alpha.rows(); ++n) {
    const int y = labels[static_cast<size_t>(n)];
    if (y < 0 || y >= num_classes) throw DataError("routing_stats: label out of range");
    sum[y] += alpha.row(n);
    ++count[y];
  }
  for (int c = 0; c < num_classes; ++c)
    if (count[c] > 0) r.per_class[c] = sum[c] / count[c];
  r.overall = alpha.colwise().mean();
  for (int i : argmax_rows(alpha)) ++r.argmax_counts[static_cast<size_t>(i)];
  return r;
}

RoutingStats routing_stats(const Model& model, const Cohort& cohort, std::span<const int> indices, int batch_size) {
  const EvalResult ev = evaluate(model, cohort, indices, batch_size);
  return routing_stats(ev.alpha, ev.labels, model.spec().dims.num_classes);
}

nlohmann::json reasoning_trace(const Model& model, const CohortSample& sample, int top_k, const AttrOptions& opt) {
  const ModelSpec& spec = model.spec();
  const CohortSample* one[] = {&sample};
  ad::Tape tape;
  ParamBinding pb(tape, model.params());
  const ForwardResult fwd = model.forward(pb, one, {});
  const Matrix probs = ad::softmax_rows(fwd.logits).value();
  const int pred = argmax_rows(fwd.logits.value())[0];
  const RowVector alpha = fwd.alpha.value().row(0);

  struct Entry {
    AttrPath path;
    int level, index;
    double phi, activation;
    RowVector experts;
  };
  std::vector<Entry> entries;
  for (AttrPath path : available_paths(spec.variant)) {
    if (path == AttrPath::kL1ToL2) continue;
    const int level = source_level(path);
    for (const AttributionRecord& r : attr_paths(model, one, path, 0, opt)) {
      if (r.target != pred) continue;
      const RowVector gate = alpha * r.phi;
      for (int k = 0; k < concept_count(level); ++k) {
        double act = 0.0;
        for (int e = 0; e < kNumExperts; ++e) {
          const auto& l = level == 1 ? fwd.experts[e].l1 : fwd.experts[e].l2;
          act += alpha(e) * l->activations.value()(0, k);
        }
        entries.push_back({path, level, k, gate(k), act, r.phi.col(k).transpose()});
      }
    }
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.phi > b.phi; });
  if (top_k >= 0 && static_cast<size_t>(top_k) < entries.size()) entries.resize(static_cast<size_t>(top_k));

  nlohmann::json j;
  j["format"] = "cmoe-trace";
  j["version"] = 1;
  j["id"] = sample.id;
  j["label"] = sample.label;
  j["prediction"] = pred;
  j["probabilities"] = std::vector<double>(probs.data(), probs.data() + probs.size());
  for (int e = 0; e < kNumExperts; ++e) j["alpha"][kExpertNames[e]] = alpha(e);
  j["top_concepts"] = nlohmann::json::array();
  for (const Entry& en : entries) {
    nlohmann::json c;
    c["path"] = path_name(en.path);
    c["level"] = en.level;
    c["concept"] = concept_name(en.level, en.index);
    c["index"] = en.index;
    c["phi"] = en.phi;
    c["activation"] = en.activation;
    for (int e = 0; e < kNumExperts; ++e) c["experts"][kExpertNames[e]] = en.experts(e);
    j["top_concepts"].push_back(std::move(c));
  }
  return j;
}

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where,
                std::vector<std::string>& errs) {
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) errs.push_back(where + ": unexpected key '" + k + "'");
  for (const auto& k : allowed)
    if (!j.contains(k)) errs.push_back(where + ": missing key '" + k + "'");
}

bool is_prob(const nlohmann::json& v) { return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() <= 1.0; }

void check_expert_object(const nlohmann::json& j, const std::string& where, bool simplex,
                         std::vector<std::string>& errs) {
  if (!j.is_object()) {
    errs.push_back(where + ": must be an object");
    return;
  }
  check_keys(j, {"U1", "U2", "R", "S"}, where, errs);
  double s = 0.0;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number() || v.get<double>() < 0.0) {
      errs.push_back(where + "." + k + ": must be a number >= 0");
      return;
    }
    s += v.get<double>();
  }
  if (simplex && std::abs(s - 1.0) > 1e-9) errs.push_back(where + ": must sum to 1");
}

}  // namespace

std::vector<std::string> validate_trace(const nlohmann::json& j) {
  std::vector<std::string> errs;
  if (!j.is_object()) return {"trace must be an object"};
  check_keys(j, {"format", "version", "id", "label", "prediction", "probabilities", "alpha", "top_concepts"}, "trace",
             errs);
  if (!errs.empty()) return errs;
  if (j["format"] != "cmoe-trace") errs.push_back("format must be 'cmoe-trace'");
  if (j["version"] != 1) errs.push_back("version must be 1");
  if (!j["id"].is_string()) errs.push_back("id must be a string");
  const auto& probs = j["probabilities"];
  if (!probs.is_array() || probs.size() < 2) {
    errs.push_back("probabilities must be an array of at least 2 numbers");
  } else {
    double s = 0.0;
    for (const auto& p : probs) {
      if (!is_prob(p)) errs.push_back("probabilities must lie in [0,1]");
      else s += p.get<double>();
    }
    if (std::abs(s - 1.0) > 1e-9) errs.push_back("probabilities must sum to 1");
  }
  const auto classes = probs.is_array() ? static_cast<std::int64_t>(probs.size()) : 0;
  for (const char* k : {"label", "prediction"}) {
    if (!j[k].is_number_integer() || j[k].get<std::int64_t>() < 0 || j[k].get<std::int64_t>() >= classes) {
      errs.push_back(std::string(k) + " must be a class index");
    }
  }
  check_expert_object(j["alpha"], "alpha", true, errs);

  const auto& top = j["top_concepts"];
  if (!top.is_array()) {
    errs.push_back("top_concepts must be an array");
    return errs;
  }
  double prev = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < top.size(); ++i) {
    const auto& c = top[i];
    const std::string where = "top_concepts[" + std::to_string(i) + "]";
    if (!c.is_object()) {
      errs.push_back(where + ": must be an object");
      continue;
    }
    const size_t before = errs.size();
    check_keys(c, {"path", "level", "concept", "index", "phi", "activation", "experts"}, where, errs);
    if (errs.size() != before) continue;
    const bool path_ok = c["path"] == "L1->class" || c["path"] == "L2->class";
    if (!path_ok) errs.push_back(where + ": path must be a class path");
    if (!c["level"].is_number_integer() || !c["index"].is_number_integer()) {
      errs.push_back(where + ": level and index must be integers");
      continue;
    }
    const int level = c["level"].get<int>(), index = c["index"].get<int>();
    if (level < 1 || level > 2 || (path_ok && level != source_level(parse_path(c["path"].get<std::string>())))) {
      errs.push_back(where + ": level does not match path");
    } else if (index < 0 || index >= concept_count(level) || c["concept"] != concept_name(level, index)) {
      errs.push_back(where + ": concept name does not match index");
    }
    if (!c["phi"].is_number() || c["phi"].get<double>() < 0.0) {
      errs.push_back(where + ": phi must be a number >= 0");
    } else {
      if (c["phi"].get<double>() > prev) errs.push_back(where + ": entries must be sorted by phi");
      prev = c["phi"].get<double>();
    }
    if (!is_prob(c["activation"])) errs.push_back(where + ": activation must lie in [0,1]");
    check_expert_object(c["experts"], where + ".experts", false, errs);
  }
  return errs;
}

}  // namespace cmoe
