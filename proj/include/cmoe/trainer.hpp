#pragma once

// Optimization loop, early stopping, per-epoch feature dumps, the gradient
// alignment diagnostic, cross-validation and the training-size protocol.

#include "cmoe/metrics.hpp"
#include "cmoe/model.hpp"
#include "cmoe/objective.hpp"
#include "cmoe/synthcohort.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cmoe {

struct TrainConfig {
  double lr = 2e-4;
  int batch_size = 16;
  int max_epochs = 150;
  int patience = 30;
  int dump_interval = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// ---- Optimizer ------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
  int step = 0;
};

// One bias-corrected Adam update. Throws TrainingFault, leaving params and
// state untouched, when any gradient entry is not finite.
void adam_step(ParamStore& params, const Gradients& grads, AdamState& state, double lr,
               const AdamConfig& cfg = {});

// base_lr * 0.5 * (1 + cos(pi * epoch / max_epochs)), epoch counted from 0.
double cosine_lr(int epoch, int max_epochs, double base_lr);

// Tracks the best score; the earliest epoch attaining the maximum wins.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}
  // Records `score` for `epoch` (1-based) and returns true when training
  // should stop after this epoch.
  bool update(int epoch, double score);
  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_score() const { return best_score_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_score_ = 0.0;
  bool improved_ = false;
};

// ---- Evaluation -----------------------------------------------------------

struct EvalResult {
  F1Report f1;
  std::vector<int> predictions;
  std::vector<int> labels;
  Matrix logits;
  Matrix alpha;
  // Per-concept AUROC of the expert-mean activation probabilities; L1
  // concepts average their one-vs-rest category AUROCs.
  std::vector<std::optional<double>> l1_auroc;
  std::vector<std::optional<double>> l2_auroc;
};

EvalResult evaluate(const Model& model, const Cohort& cohort, std::span<const int> indices, int batch_size);
// Metrics only (no per-sample arrays).
nlohmann::json to_json(const EvalResult& e);

// ---- Dumps and logs ---------------------------------------------------------

struct DumpRecord {
  std::string id;
  std::string split;  // "val" or "test"
  int fold = 0;
  int label = 0;
  std::vector<double> z;   // mean over experts
  std::vector<double> b1;  // L1 bottleneck, mean over experts (empty if absent)
  std::vector<double> b2;
  std::vector<double> p1;  // 19 category probabilities, mean over experts
  std::vector<double> p2;  // [p, 1 - p] per biomarker, mean over experts
};

struct EpochDump {
  int epoch = 0;
  int fold = 0;
  std::string variant;
  std::vector<DumpRecord> records;
};

nlohmann::json to_json(const EpochDump& d);
EpochDump epoch_dump_from_json(const nlohmann::json& j);

std::vector<DumpRecord> dump_records(const Model& model, const Cohort& cohort, std::span<const int> indices,
                                     const std::string& split, int fold, int batch_size);

struct AlignmentEstimate {
  std::optional<double> rho;     // <g_y, g_a> / |g_y|^2
  std::optional<double> b_grad;  // |g_y + g_a|^2 / |g_y|^2
};

// Gradients of the task loss and of the weighted auxiliary loss on `batch`,
// evaluated without dropout and with perturbation noise from `noise_seed`.
AlignmentEstimate alignment_diagnostic(const Model& model, std::span<const CohortSample* const> batch,
                                       const LossWeights& weights, const ObjectiveOptions& opt,
                                       std::uint64_t noise_seed);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown train;  // mean over batches
  double val_macro_f1 = 0.0;
  AlignmentEstimate alignment;
};

std::string run_log_csv(const std::vector<EpochLog>& log);

// ---- Training ---------------------------------------------------------------

struct FoldData {
  const Cohort* cohort = nullptr;
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
  int fold = 0;
};

FoldData make_fold(const Cohort& cohort, const FoldSplit& split, int fold);

struct TrainHooks {
  // Receives each epoch dump as it is produced.
  std::function<void(const EpochDump&)> on_dump;
  // Keep the dumps in the result as well.
  bool keep_dumps = true;
};

struct FoldResult {
  int fold = 0;
  ParamStore best_params;
  ParamStore final_params;  // after the last completed epoch
  int best_epoch = 0;
  double best_val_f1 = 0.0;
  int epochs_run = 0;
  std::vector<EpochLog> log;
  std::vector<EpochDump> dumps;
  EvalResult test;  // of the best checkpoint
  std::vector<double> class_weights;
  bool fault = false;
  std::string fault_message;
};

// Trains one fold. A non-finite loss or gradient ends the run with `fault`
// set and the last good (best) checkpoint retained.
FoldResult train_fold(const ModelSpec& spec, const LossWeights& weights, const TrainConfig& cfg,
                      const FoldData& data, const TrainHooks& hooks = {});

// Per-class inverse-frequency sampling weights (normalized to sum 1).
std::vector<double> sampler_weights(const Cohort& cohort, std::span<const int> indices, int num_classes);

// ---- Cross-validation -------------------------------------------------------

struct CrossValidationResult {
  std::vector<FoldResult> folds;
  double mean_test_macro_f1 = 0.0;
  double std_test_macro_f1 = 0.0;
};

// Runs the folds, `parallel` at a time; results are in fold order.
CrossValidationResult cross_validate(const ModelSpec& spec, const LossWeights& weights, const TrainConfig& cfg,
                                     const Cohort& cohort, const std::vector<FoldSplit>& splits, int parallel = 1,
                                     const TrainHooks& hooks = {});

nlohmann::json summary_json(const CrossValidationResult& r);

// ---- Training-size protocol -------------------------------------------------

// Sizes proportional to {50, 100, 150, 164} / 164 of the pool, at least 1.
std::vector<int> default_subsample_sizes(int pool);

struct SubsampleRun {
  int size = 0;
  int repeat = 0;
  std::vector<int> train;
  double test_macro_f1 = 0.0;
  bool fault = false;
};

struct SubsampleSizeSummary {
  int size = 0;
  int runs = 0;
  double mean = 0.0;
  double std = 0.0;  // sample std (n - 1)
  double sem = 0.0;
};

struct SubsampleResult {
  std::vector<SubsampleRun> runs;  // size-major, repeat-minor
  std::vector<SubsampleSizeSummary> summary;
};

// Draws `repeats` training subsets of each size from base.train (val/test
// held fixed) and trains each. Throws ConfigError when a size exceeds the
// pool.
std::vector<int> draw_subset(std::span<const int> pool, int size, std::uint64_t seed, int repeat);
SubsampleResult subsample_protocol(const ModelSpec& spec, const LossWeights& weights, const TrainConfig& cfg,
                                   const FoldData& base, std::vector<int> sizes, int repeats, int parallel = 1);

nlohmann::json summary_json(const SubsampleResult& r);

// Runs tasks 0..n-1 on up to `parallel` threads; deterministic because each
// task writes only its own slot.
void parallel_for(int n, int parallel, const std::function<void(int)>& task);

}  // namespace cmoe
