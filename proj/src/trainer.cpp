#include "cmoe/trainer.hpp"

#include "cmoe/errors.hpp"
#include "cmoe/format.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <thread>

namespace cmoe {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
  if (patience < 1 || patience > max_epochs) throw ConfigError("train.patience must be in [1, max_epochs]");
  if (dump_interval < 0) throw ConfigError("train.dump_interval must be >= 0");
}

void adam_step(ParamStore& params, const Gradients& grads, AdamState& st, double lr, const AdamConfig& cfg) {
  if (!all_finite(grads)) throw TrainingFault("non-finite gradient");
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, st.step);
  const double c2 = 1.0 - std::pow(cfg.beta2, st.step);
  for (const auto& [name, g] : grads) {
    Matrix& p = params.at(name);
    auto [mi, m_new] = st.m.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
    auto [vi, v_new] = st.v.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
    Matrix& m = mi->second;
    Matrix& v = vi->second;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  }
}

double cosine_lr(int epoch, int max_epochs, double base_lr) {
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / max_epochs));
}

bool EarlyStopper::update(int epoch, double score) {
  improved_ = best_epoch_ == 0 || score > best_score_;
  if (improved_) {
    best_epoch_ = epoch;
    best_score_ = score;
  }
  return epoch - best_epoch_ >= patience_;
}

namespace {

std::vector<const CohortSample*> gather(const Cohort& cohort, std::span<const int> idx) {
  std::vector<const CohortSample*> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(&cohort.at(static_cast<size_t>(i)));
  return out;
}

template <typename F>
void for_batches(std::span<const int> indices, int batch_size, F&& f) {
  for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(batch_size)) {
    const size_t len = std::min(indices.size() - start, static_cast<size_t>(batch_size));
    f(indices.subspan(start, len));
  }
}

Matrix expert_mean(const ForwardResult& r, const std::function<ad::Var(const ExpertPass&)>& pick) {
  Matrix acc = pick(r.experts[0]).value();
  for (int e = 1; e < kNumExperts; ++e) acc += pick(r.experts[e]).value();
  return acc / static_cast<double>(kNumExperts);
}

std::vector<double> row_vec(const Matrix& m, Eigen::Index r) {
  std::vector<double> v(static_cast<size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) v[c] = m(r, c);
  return v;
}

}  // namespace

EvalResult evaluate(const Model& model, const Cohort& cohort, std::span<const int> indices, int batch_size) {
  if (indices.empty()) throw DataError("evaluate: empty evaluation set");
  const int c = model.spec().dims.num_classes;
  EvalResult r;
  r.logits.resize(static_cast<Eigen::Index>(indices.size()), c);
  r.alpha.resize(static_cast<Eigen::Index>(indices.size()), kNumExperts);
  Matrix p1(static_cast<Eigen::Index>(indices.size()), schema::kNumL1Targets);
  Matrix p2(static_cast<Eigen::Index>(indices.size()), schema::kNumL2);
  Eigen::Index row = 0;
  for_batches(indices, batch_size, [&](std::span<const int> b) {
    const auto batch = gather(cohort, b);
    ad::Tape tape;
    ParamBinding p(tape, model.params());
    const ForwardResult fwd = model.forward(p, batch, {});
    const auto n = static_cast<Eigen::Index>(b.size());
    r.logits.middleRows(row, n) = fwd.logits.value();
    r.alpha.middleRows(row, n) = fwd.alpha.value();
    if (model.spec().variant.use_l1) {
      p1.middleRows(row, n) = expert_mean(fwd, [](const ExpertPass& e) { return e.l1->probs; });
    }
    if (model.spec().variant.use_l2) {
      p2.middleRows(row, n) = expert_mean(fwd, [](const ExpertPass& e) { return e.l2->probs; });
    }
    row += n;
  });
  r.predictions = argmax_rows(r.logits);
  for (int i : indices) r.labels.push_back(cohort[i].label);
  r.f1 = macro_f1(r.predictions, r.labels, c);

  const auto n = indices.size();
  if (model.spec().variant.use_l1) {
    for (int k = 0; k < schema::kNumL1; ++k) {
      double sum = 0.0;
      int used = 0;
      for (int v = 0; v < schema::kL1Categories[k]; ++v) {
        const int col = schema::l1_offset(k) + v;
        std::vector<double> s(n);
        std::vector<int> t(n), m(n);
        for (size_t i = 0; i < n; ++i) {
          const auto& ct = cohort[indices[i]].concepts;
          s[i] = p1(static_cast<Eigen::Index>(i), col);
          t[i] = ct.l1_onehot[col];
          m[i] = ct.l1_mask[k];
        }
        if (auto a = auroc(s, t, m)) {
          sum += *a;
          ++used;
        }
      }
      r.l1_auroc.push_back(used ? std::optional<double>(sum / used) : std::nullopt);
    }
  }
  if (model.spec().variant.use_l2) {
    for (int j = 0; j < schema::kNumL2; ++j) {
      std::vector<double> s(n);
      std::vector<int> t(n), m(n);
      for (size_t i = 0; i < n; ++i) {
        const auto& ct = cohort[indices[i]].concepts;
        s[i] = p2(static_cast<Eigen::Index>(i), j);
        t[i] = ct.l2_binary[j];
        m[i] = ct.l2_mask[j];
      }
      r.l2_auroc.push_back(auroc(s, t, m));
    }
  }
  return r;
}

nlohmann::json to_json(const EpochDump& d) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : d.records) {
    recs.push_back({{"id", r.id}, {"split", r.split}, {"fold", r.fold}, {"label", r.label}, {"z", r.z},
                    {"b1", r.b1}, {"b2", r.b2}, {"p1", r.p1}, {"p2", r.p2}});
  }
  return {{"format", "cmoe-dump"}, {"version", 1}, {"epoch", d.epoch}, {"fold", d.fold},
          {"variant", d.variant}, {"records", recs}};
}

EpochDump epoch_dump_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "cmoe-dump") throw DataError("not a dump file");
  EpochDump d;
  d.epoch = j.at("epoch").get<int>();
  d.fold = j.at("fold").get<int>();
  d.variant = j.at("variant").get<std::string>();
  for (const auto& r : j.at("records")) {
    DumpRecord x;
    x.id = r.at("id").get<std::string>();
    x.split = r.at("split").get<std::string>();
    x.fold = r.at("fold").get<int>();
    x.label = r.at("label").get<int>();
    x.z = r.at("z").get<std::vector<double>>();
    x.b1 = r.at("b1").get<std::vector<double>>();
    x.b2 = r.at("b2").get<std::vector<double>>();
    x.p1 = r.at("p1").get<std::vector<double>>();
    x.p2 = r.at("p2").get<std::vector<double>>();
    d.records.push_back(std::move(x));
  }
  return d;
}

std::vector<DumpRecord> dump_records(const Model& model, const Cohort& cohort, std::span<const int> indices,
                                     const std::string& split, int fold, int batch_size) {
  std::vector<DumpRecord> out;
  const auto& v = model.spec().variant;
  for_batches(indices, batch_size, [&](std::span<const int> b) {
    const auto batch = gather(cohort, b);
    ad::Tape tape;
    ParamBinding p(tape, model.params());
    const ForwardResult fwd = model.forward(p, batch, {});
    const Matrix z = expert_mean(fwd, [](const ExpertPass& e) { return e.z; });
    Matrix b1, b2, p1, p2;
    if (v.use_l1) {
      b1 = expert_mean(fwd, [](const ExpertPass& e) { return e.l1->bottleneck; });
      p1 = expert_mean(fwd, [](const ExpertPass& e) { return e.l1->probs; });
    }
    if (v.use_l2) {
      b2 = expert_mean(fwd, [](const ExpertPass& e) { return e.l2->bottleneck; });
      const Matrix q = expert_mean(fwd, [](const ExpertPass& e) { return e.l2->probs; });
      p2.resize(q.rows(), 2 * q.cols());
      for (Eigen::Index j = 0; j < q.cols(); ++j) {
        p2.col(2 * j) = q.col(j);
        p2.col(2 * j + 1) = (1.0 - q.col(j).array()).matrix();
      }
    }
    for (size_t i = 0; i < b.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      DumpRecord rec;
      rec.id = batch[i]->id;
      rec.split = split;
      rec.fold = fold;
      rec.label = batch[i]->label;
      rec.z = row_vec(z, r);
      if (v.use_l1) {
        rec.b1 = row_vec(b1, r);
        rec.p1 = row_vec(p1, r);
      }
      if (v.use_l2) {
        rec.b2 = row_vec(b2, r);
        rec.p2 = row_vec(p2, r);
      }
      out.push_back(std::move(rec));
    }
  });
  return out;
}

AlignmentEstimate alignment_diagnostic(const Model& model, std::span<const CohortSample* const> batch,
                                       const LossWeights& weights, const ObjectiveOptions& opt,
                                       std::uint64_t noise_seed) {
  ad::Tape tape;
  ParamBinding p(tape, model.params());
  Rng noise(noise_seed);
  ForwardOptions fo;
  fo.rng = &noise;
  fo.perturb = weights.lambda_int > 0.0;
  const ForwardResult fwd = model.forward(p, batch, fo);
  const LossTerms terms = loss_terms(fwd, batch, weights, opt);
  const TotalLoss tl = total_loss(terms, weights);
  tape.backward(terms.cls);
  const Gradients gy = p.gradients();
  Gradients ga;
  if (tl.auxiliary.valid()) {
    tape.backward(tl.auxiliary);
    ga = p.gradients();
  } else {
    for (const auto& [name, g] : gy) ga[name] = Matrix::Zero(g.rows(), g.cols());
  }
  AlignmentEstimate est;
  const double ny = squared_norm(gy);
  if (ny > 0.0 && std::isfinite(ny)) {
    const double rho = dot(gy, ga) / ny;
    const double b = squared_norm(add(gy, ga)) / ny;
    if (std::isfinite(rho)) est.rho = rho;
    if (std::isfinite(b)) est.b_grad = b;
  }
  return est;
}

std::string run_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,lr,loss_total,loss_cls,loss_l1,loss_l2,loss_int,val_macro_f1,rho,b_grad\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << format_double(e.lr) << ',' << format_double(e.train.total) << ',' << format_double(e.train.cls) << ','
       << format_double(e.train.concept_l1) << ',' << format_double(e.train.concept_l2) << ',' << format_double(e.train.interaction) << ','
       << format_double(e.val_macro_f1) << ',' << format_double(e.alignment.rho) << ',' << format_double(e.alignment.b_grad) << '\n';
  }
  return os.str();
}

FoldData make_fold(const Cohort& cohort, const FoldSplit& split, int fold) {
  return {&cohort, samples_of(cohort, split.train), samples_of(cohort, split.val), samples_of(cohort, split.test),
          fold};
}

std::vector<double> sampler_weights(const Cohort& cohort, std::span<const int> indices, int num_classes) {
  std::vector<int> labels;
  for (int i : indices) labels.push_back(cohort[i].label);
  const auto cw = inverse_frequency_weights(labels, num_classes);
  std::vector<double> w;
  double total = 0.0;
  for (int y : labels) {
    w.push_back(cw[y]);
    total += cw[y];
  }
  for (double& x : w) x /= total;
  return w;
}

namespace {

std::vector<int> weighted_draw(std::span<const int> indices, const std::vector<double>& w, Rng& rng) {
  std::vector<double> cum(w.size());
  double acc = 0.0;
  for (size_t i = 0; i < w.size(); ++i) cum[i] = acc += w[i];
  std::vector<int> out;
  for (size_t n = 0; n < indices.size(); ++n) {
    const double u = rng.uniform() * acc;
    const size_t k = std::min<size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin(), w.size() - 1);
    out.push_back(indices[k]);
  }
  return out;
}

LossBreakdown& operator+=(LossBreakdown& a, const LossBreakdown& b) {
  a.total += b.total;
  a.cls += b.cls;
  a.concept_l1 += b.concept_l1;
  a.concept_l2 += b.concept_l2;
  a.interaction += b.interaction;
  return a;
}

LossBreakdown scaled(LossBreakdown a, double s) {
  a.total *= s;
  a.cls *= s;
  a.concept_l1 *= s;
  a.concept_l2 *= s;
  a.interaction *= s;
  return a;
}

struct Balance {
  BceBalance l1, l2;
};

Balance training_balance(const Cohort& cohort, std::span<const int> train) {
  const auto batch = gather(cohort, train);
  const ConceptBatch cb = concept_batch(batch);
  Matrix m1(cb.l1_targets.rows(), cb.l1_targets.cols());
  for (int k = 0; k < schema::kNumL1; ++k)
    for (int v = 0; v < schema::kL1Categories[k]; ++v) m1.col(schema::l1_offset(k) + v) = cb.l1_mask.col(k);
  return {balanced_bce_weights(cb.l1_targets, m1), balanced_bce_weights(cb.l2_targets, cb.l2_mask)};
}

}  // namespace

FoldResult train_fold(const ModelSpec& spec, const LossWeights& base_weights, const TrainConfig& cfg,
                      const FoldData& data, const TrainHooks& hooks) {
  cfg.validate();
  if (!data.cohort) throw DataError("train_fold: no cohort");
  if (data.train.empty() || data.val.empty()) throw DataError("train_fold: empty train or validation split");
  const Cohort& cohort = *data.cohort;
  const int nc = spec.dims.num_classes;
  const auto fold_id = static_cast<std::uint64_t>(data.fold);

  LossWeights w = base_weights;
  if (w.class_weights.empty()) {
    std::vector<int> labels;
    for (int i : data.train) labels.push_back(cohort[i].label);
    w.class_weights = inverse_frequency_weights(labels, nc);
  }
  w.validate(nc);

  const bool balanced = spec.variant.balanced_recipe();
  Balance bal;
  ObjectiveOptions obj;
  if (balanced) {
    bal = training_balance(cohort, data.train);
    obj.l1_balance = &bal.l1;
    obj.l2_balance = &bal.l2;
  }
  const auto sample_w = balanced ? sampler_weights(cohort, data.train, nc) : std::vector<double>{};

  Model model(spec, substream_seed(cfg.seed, "init", fold_id));
  Rng order_rng(substream_seed(cfg.seed, "order", fold_id));
  Rng noise_rng(substream_seed(cfg.seed, "noise", fold_id));
  const std::uint64_t probe_seed = substream_seed(cfg.seed, "probe", fold_id);

  FoldResult res;
  res.fold = data.fold;
  res.class_weights = w.class_weights;
  res.best_params = model.params();
  AdamState adam;
  EarlyStopper stopper(cfg.patience);
  std::vector<const CohortSample*> probe;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = cosine_lr(epoch - 1, cfg.max_epochs, cfg.lr);
    std::vector<int> order;
    if (balanced) {
      order = weighted_draw(data.train, sample_w, order_rng);
    } else {
      order = data.train;
      order_rng.shuffle(order);
    }
    if (probe.empty()) {
      const size_t len = std::min(order.size(), static_cast<size_t>(cfg.batch_size));
      probe = gather(cohort, std::span<const int>(order).first(len));
    }

    LossBreakdown sum;
    int steps = 0;
    try {
      for_batches(order, cfg.batch_size, [&](std::span<const int> b) {
        const auto batch = gather(cohort, b);
        ad::Tape tape;
        ParamBinding p(tape, model.params());
        ForwardOptions fo;
        fo.training = true;
        fo.rng = &noise_rng;
        fo.perturb = w.lambda_int > 0.0;
        const ForwardResult fwd = model.forward(p, batch, fo);
        const TotalLoss tl = total_loss(loss_terms(fwd, batch, w, obj), w);
        if (!std::isfinite(tl.breakdown.total)) throw TrainingFault("non-finite loss");
        tape.backward(tl.total);
        adam_step(model.params(), p.gradients(), adam, lr);
        sum += tl.breakdown;
        ++steps;
      });
    } catch (const TrainingFault& e) {
      res.fault = true;
      res.fault_message = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train = scaled(sum, 1.0 / steps);
    log.val_macro_f1 = evaluate(model, cohort, data.val, cfg.batch_size).f1.macro_f1;
    log.alignment = alignment_diagnostic(model, probe, w, obj, probe_seed);
    res.log.push_back(log);
    res.epochs_run = epoch;

    if (cfg.dump_interval > 0 && epoch % cfg.dump_interval == 0 && (hooks.on_dump || hooks.keep_dumps)) {
      EpochDump d;
      d.epoch = epoch;
      d.fold = data.fold;
      d.variant = spec.variant.name();
      d.records = dump_records(model, cohort, data.val, "val", data.fold, cfg.batch_size);
      if (!data.test.empty()) {
        auto t = dump_records(model, cohort, data.test, "test", data.fold, cfg.batch_size);
        d.records.insert(d.records.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
      }
      if (hooks.on_dump) hooks.on_dump(d);
      if (hooks.keep_dumps) res.dumps.push_back(std::move(d));
    }

    const bool stop = stopper.update(epoch, log.val_macro_f1);
    if (stopper.improved()) res.best_params = model.params();
    if (stop) break;
  }
  res.final_params = model.params();
  res.best_epoch = stopper.best_epoch();
  res.best_val_f1 = stopper.best_score();
  if (!data.test.empty()) {
    const Model best(spec, res.best_params);
    res.test = evaluate(best, cohort, data.test, cfg.batch_size);
  }
  return res;
}

void parallel_for(int n, int parallel, const std::function<void(int)>& task) {
  if (parallel <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(parallel, n); ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& x) {
  if (x.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  if (x.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return {m, std::sqrt(ss / static_cast<double>(x.size() - 1))};
}

nlohmann::json optional_list(const std::vector<std::optional<double>>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& x : v) a.push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
  return a;
}

}  // namespace

nlohmann::json to_json(const EvalResult& e) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : e.f1.per_class) {
    per.push_back({{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support},
                   {"included", c.included}});
  }
  return {{"macro_f1", e.f1.macro_f1}, {"accuracy", e.f1.accuracy}, {"per_class", per},
          {"l1_auroc", optional_list(e.l1_auroc)}, {"l2_auroc", optional_list(e.l2_auroc)}};
}

CrossValidationResult cross_validate(const ModelSpec& spec, const LossWeights& weights, const TrainConfig& cfg,
                                     const Cohort& cohort, const std::vector<FoldSplit>& splits, int parallel,
                                     const TrainHooks& hooks) {
  CrossValidationResult r;
  r.folds.resize(splits.size());
  parallel_for(static_cast<int>(splits.size()), parallel, [&](int f) {
    r.folds[f] = train_fold(spec, weights, cfg, make_fold(cohort, splits[f], f), hooks);
  });
  std::vector<double> f1;
  for (const auto& f : r.folds) f1.push_back(f.test.f1.macro_f1);
  std::tie(r.mean_test_macro_f1, r.std_test_macro_f1) = mean_std(f1);
  return r;
}

nlohmann::json summary_json(const CrossValidationResult& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    folds.push_back({{"fold", f.fold}, {"best_epoch", f.best_epoch}, {"best_val_macro_f1", f.best_val_f1},
                     {"epochs_run", f.epochs_run}, {"fault", f.fault}, {"fault_message", f.fault_message},
                     {"class_weights", f.class_weights}, {"test", to_json(f.test)}});
  }
  return {{"folds", folds},
          {"aggregate", {{"mean_test_macro_f1", r.mean_test_macro_f1}, {"std_test_macro_f1", r.std_test_macro_f1}}}};
}

std::vector<int> default_subsample_sizes(int pool) {
  std::vector<int> out;
  for (int ref : {50, 100, 150, 164}) {
    out.push_back(std::max(1, static_cast<int>(std::lround(static_cast<double>(pool) * ref / 164.0))));
  }
  return out;
}

std::vector<int> draw_subset(std::span<const int> pool, int size, std::uint64_t seed, int repeat) {
  if (size < 1 || size > static_cast<int>(pool.size())) {
    throw ConfigError("subsample size " + std::to_string(size) + " outside [1, " + std::to_string(pool.size()) + "]");
  }
  std::vector<int> out;
  if (size == static_cast<int>(pool.size())) {
    out.assign(pool.begin(), pool.end());
  } else {
    Rng rng(substream_seed(seed, "subsample", static_cast<std::uint64_t>(size) * 1000 + repeat));
    for (int k : rng.sample_without_replacement(static_cast<int>(pool.size()), size)) out.push_back(pool[k]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

SubsampleResult subsample_protocol(const ModelSpec& spec, const LossWeights& weights, const TrainConfig& cfg,
                                   const FoldData& base, std::vector<int> sizes, int repeats, int parallel) {
  if (repeats < 1) throw ConfigError("subsample repeats must be >= 1");
  if (sizes.empty()) sizes = default_subsample_sizes(static_cast<int>(base.train.size()));
  SubsampleResult r;
  for (int s : sizes) {
    for (int k = 0; k < repeats; ++k) {
      SubsampleRun run;
      run.size = s;
      run.repeat = k;
      run.train = draw_subset(base.train, s, cfg.seed, k);
      r.runs.push_back(std::move(run));
    }
  }
  parallel_for(static_cast<int>(r.runs.size()), parallel, [&](int i) {
    SubsampleRun& run = r.runs[i];
    FoldData d = base;
    d.train = run.train;
    TrainConfig c = cfg;
    c.seed = substream_seed(cfg.seed, "subsample/run", static_cast<std::uint64_t>(run.size) * 1000 + run.repeat);
    TrainHooks h;
    h.keep_dumps = false;
    const FoldResult f = train_fold(spec, weights, c, d, h);
    run.test_macro_f1 = f.test.f1.macro_f1;
    run.fault = f.fault;
  });
  for (int s : sizes) {
    std::vector<double> f1;
    for (const auto& run : r.runs)
      if (run.size == s) f1.push_back(run.test_macro_f1);
    SubsampleSizeSummary sum;
    sum.size = s;
    sum.runs = static_cast<int>(f1.size());
    std::tie(sum.mean, sum.std) = mean_std(f1);
    sum.sem = sum.std / std::sqrt(static_cast<double>(f1.size()));
    r.summary.push_back(sum);
  }
  return r;
}

nlohmann::json summary_json(const SubsampleResult& r) {
  nlohmann::json runs = nlohmann::json::array(), sizes = nlohmann::json::array();
  for (const auto& x : r.runs) {
    runs.push_back({{"size", x.size}, {"repeat", x.repeat}, {"test_macro_f1", x.test_macro_f1}, {"fault", x.fault}});
  }
  for (const auto& s : r.summary) {
    sizes.push_back({{"size", s.size}, {"runs", s.runs}, {"mean", s.mean}, {"std", s.std}, {"sem", s.sem}});
  }
  return {{"runs", runs}, {"sizes", sizes}};
}

}  // namespace cmoe
