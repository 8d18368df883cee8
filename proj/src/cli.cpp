#include "cmoe/cli.hpp"

#include "cmoe/config.hpp"
#include "cmoe/errors.hpp"
#include "cmoe/format.hpp"
#include "cmoe/infoplane.hpp"
#include "cmoe/interpret.hpp"
#include "cmoe/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace cmoe {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Options {
  std::string config_path;
  std::string preset;
  std::string out;
  std::string variant;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int parallel = 1;
  std::string cohort_path;
  std::vector<std::string> checkpoints;
  std::string dumps;
  std::string feature;
  std::string kind;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(1) + "\n"); }

// Stamps an artifact with its format, version and the resolved config.
json artifact(const std::string& format, const ExperimentConfig& c, json body) {
  body["format"] = format;
  body["version"] = kArtifactVersion;
  body["seed"] = c.seed;
  body["config"] = to_json(c);
  return body;
}

std::string csv_header(const std::string& format, const ExperimentConfig& c) {
  return "# " + format + " version=" + std::to_string(kArtifactVersion) + " seed=" + std::to_string(c.seed) +
         " config=" + to_json(c).dump() + "\n";
}

std::string padded(int v, int width) {
  std::string s = std::to_string(v);
  return std::string(static_cast<size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

std::string fold_name(int f) { return "fold" + std::to_string(f); }

ExperimentConfig resolve_config(const Options& o) {
  json j = json::object();
  if (!o.config_path.empty()) {
    j = yaml_to_json(read_text(o.config_path));
    if (!j.is_object()) throw ConfigError("config document must be a mapping");
  }
  if (!o.preset.empty()) j["preset"] = o.preset;
  if (o.seed_given) {
    j["seed"] = o.seed;
    for (const char* section : {"cohort", "train"})
      if (j.contains(section) && j[section].is_object()) j[section].erase("seed");
  }
  if (!o.out.empty()) j["output"] = o.out;
  if (!o.variant.empty()) {
    if (j.contains("model") && !j["model"].is_object()) throw ConfigError("model must be a mapping");
    j["model"]["variant"] = o.variant;
  }
  return config_from_json(j);
}

void adopt_cohort_config(ExperimentConfig& c, const CohortConfig& cohort) {
  c.cohort = cohort;
  c.model.dims.num_classes = cohort.num_classes;
  c.model.dims.patch_dim = cohort.patch_dim;
  c.model.dims.node_dim = cohort.graph_node_dim;
  c.validate();
}

Cohort load_cohort_file(const fs::path& p, CohortConfig* cfg) {
  const json j = read_json(p);
  const json& body = j.value("format", "") == "cmoe-cohort" ? j.at("cohort") : j;
  try {
    return cohort_from_json(body, cfg);
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

// Cohort for `c`: loaded from `path` when given (its config replaces c's),
// otherwise regenerated.
Cohort obtain_cohort(ExperimentConfig& c, const std::string& path) {
  if (path.empty()) return generate_cohort(c.cohort);
  CohortConfig cfg;
  Cohort cohort = load_cohort_file(path, &cfg);
  adopt_cohort_config(c, cfg);
  return cohort;
}

std::vector<const CohortSample*> pointers(const Cohort& cohort, std::span<const int> idx) {
  std::vector<const CohortSample*> out;
  for (int i : idx) out.push_back(&cohort[static_cast<size_t>(i)]);
  return out;
}

json row_json(const RowVector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// ---- gen --------------------------------------------------------------------

int cmd_gen(const Options& o, std::ostream& out) {
  ExperimentConfig c = resolve_config(o);
  const Cohort cohort = generate_cohort(c.cohort);
  const fs::path path = fs::path(c.output) / "cohort.json";
  write_json(path, artifact("cmoe-cohort", c, {{"cohort", cohort_to_json(cohort, c.cohort)}}));
  out << "wrote " << cohort.size() << " samples to " << path.string() << "\n";
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig c = resolve_config(o);
  const Cohort cohort = obtain_cohort(c, o.cohort_path);
  const fs::path root = c.output;
  const auto splits = split_patient_level(cohort, c.folds, c.split_seed());
  for (int f = 0; f < c.folds; ++f) fs::create_directories(root / "dumps" / fold_name(f));

  TrainHooks hooks;
  hooks.keep_dumps = false;
  hooks.on_dump = [&](const EpochDump& d) {
    json j = to_json(d);
    j["seed"] = c.seed;
    j["config"] = to_json(c);
    write_json(root / "dumps" / fold_name(d.fold) / ("epoch" + padded(d.epoch, 4) + ".json"), j);
  };
  const CrossValidationResult r = cross_validate(c.model, c.loss, c.train, cohort, splits, o.parallel, hooks);

  bool fault = false;
  for (const FoldResult& f : r.folds) {
    write_text(root / "logs" / (fold_name(f.fold) + ".csv"), csv_header("cmoe-run-log", c) + run_log_csv(f.log));
    Checkpoint ck{c, f.fold, f.best_epoch, f.best_val_f1, f.best_params};
    write_json(root / "checkpoints" / (fold_name(f.fold) + ".json"), to_json(ck));
    out << fold_name(f.fold) << ": best epoch " << f.best_epoch << ", test macro-F1 " << f.test.f1.macro_f1 << "\n";
    if (f.fault) {
      fault = true;
      err << fold_name(f.fold) << ": training fault: " << f.fault_message << "\n";
    }
  }
  write_json(root / "summary.json", artifact("cmoe-summary", c, summary_json(r)));
  out << "mean test macro-F1 " << r.mean_test_macro_f1 << " (std " << r.std_test_macro_f1 << ")\n";
  return fault ? kExitFault : kExitOk;
}

// ---- checkpoint consumers ---------------------------------------------------

std::vector<fs::path> checkpoint_paths(const Options& o, const ExperimentConfig& c) {
  std::vector<fs::path> out(o.checkpoints.begin(), o.checkpoints.end());
  if (out.empty()) {
    const fs::path dir = fs::path(c.output) / "checkpoints";
    if (fs::is_directory(dir)) {
      for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
  }
  if (out.empty()) throw DataError("no checkpoints found under " + (fs::path(c.output) / "checkpoints").string());
  return out;
}

// The checkpoint with the cohort and fold it was trained on.
struct Restored {
  Checkpoint ck;
  const Cohort* cohort = nullptr;
  FoldData fold;
};

class CohortCache {
 public:
  explicit CohortCache(std::string path) : path_(std::move(path)) {}

  Restored restore(const fs::path& file) {
    Restored r;
    try {
      r.ck = checkpoint_from_json(read_json(file));
    } catch (const json::exception& e) {
      throw DataError(file.string() + ": " + e.what());
    }
    ExperimentConfig& c = r.ck.config;
    if (!path_.empty()) {
      if (!loaded_) {
        CohortConfig cfg;
        file_cohort_ = load_cohort_file(path_, &cfg);
        file_cfg_ = cfg;
        loaded_ = true;
      }
      adopt_cohort_config(c, file_cfg_);
      r.cohort = &file_cohort_;
    } else {
      const std::string key = to_json(c.cohort).dump();
      auto it = cache_.find(key);
      if (it == cache_.end()) it = cache_.emplace(key, generate_cohort(c.cohort)).first;
      r.cohort = &it->second;
    }
    const auto splits = split_patient_level(*r.cohort, c.folds, c.split_seed());
    if (r.ck.fold < 0 || r.ck.fold >= static_cast<int>(splits.size())) {
      throw DataError(file.string() + ": fold " + std::to_string(r.ck.fold) + " out of range");
    }
    r.fold = make_fold(*r.cohort, splits[static_cast<size_t>(r.ck.fold)], r.ck.fold);
    return r;
  }

 private:
  std::string path_;
  bool loaded_ = false;
  Cohort file_cohort_;
  CohortConfig file_cfg_;
  std::map<std::string, Cohort> cache_;
};

int cmd_eval(const Options& o, std::ostream& out) {
  const ExperimentConfig c = resolve_config(o);
  CohortCache cohorts(o.cohort_path);
  for (const fs::path& file : checkpoint_paths(o, c)) {
    const Restored r = cohorts.restore(file);
    const Model model(r.ck.config.model, r.ck.params);
    const EvalResult e = evaluate(model, *r.cohort, r.fold.test, r.ck.config.train.batch_size);
    json body = {{"fold", r.ck.fold}, {"best_epoch", r.ck.best_epoch}, {"checkpoint", file.string()},
                 {"test", to_json(e)}};
    write_json(fs::path(c.output) / "eval" / (fold_name(r.ck.fold) + ".json"),
               artifact("cmoe-eval", r.ck.config, std::move(body)));
    out << fold_name(r.ck.fold) << ": test macro-F1 " << e.f1.macro_f1 << "\n";
  }
  return kExitOk;
}

std::string path_slug(AttrPath p) {
  switch (p) {
    case AttrPath::kL1ToClass: return "l1-class";
    case AttrPath::kL2ToClass: return "l2-class";
    case AttrPath::kL1ToL2: return "l1-l2";
  }
  return "unknown";
}

json routing_json(const RoutingStats& s) {
  json per = json::array();
  for (const auto& p : s.per_class) per.push_back(p ? row_json(*p) : json(nullptr));
  return {{"per_class", per}, {"overall", row_json(s.overall)},
          {"argmax_counts", std::vector<int>(s.argmax_counts.begin(), s.argmax_counts.end())}};
}

std::string ablation_header() {
  std::string h = "id,fold,class,level,concept";
  for (const char* e : kExpertNames) h += std::string(",delta.") + e;
  for (const char* e : kExpertNames) h += std::string(",share.") + e;
  return h + "\n";
}

int cmd_interpret(const Options& o, std::ostream& out) {
  const ExperimentConfig c = resolve_config(o);
  const fs::path root = fs::path(c.output) / "interpret";
  CohortCache cohorts(o.cohort_path);
  std::vector<AttributionRecord> records;
  std::vector<AttrPath> paths;
  json routing = json::array();
  std::ostringstream ablation;
  int traces = 0;
  const ExperimentConfig* first = nullptr;
  std::vector<Restored> restored;
  for (const fs::path& file : checkpoint_paths(o, c)) restored.push_back(cohorts.restore(file));
  for (const Restored& r : restored) {
    const ExperimentConfig& rc = r.ck.config;
    if (!first) first = &rc;
    const Model model(rc.model, r.ck.params);
    const AttrOptions opt{rc.interpret.l1_to_l2, rc.train.batch_size};
    const auto test = pointers(*r.cohort, r.fold.test);
    for (AttrPath p : available_paths(rc.model.variant)) {
      if (std::find(paths.begin(), paths.end(), p) == paths.end()) paths.push_back(p);
      auto recs = attr_paths(model, test, p, r.ck.fold, opt);
      records.insert(records.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
    }

    for (const CohortSample* s : test) {
      const json trace = reasoning_trace(model, *s, rc.interpret.top_k, opt);
      const auto problems = validate_trace(trace);
      if (!problems.empty()) throw DataError("trace for " + s->id + " is malformed: " + problems.front());
      write_json(root / "traces" / (s->id + ".json"),
                 artifact("cmoe-trace-file", rc, {{"fold", r.ck.fold}, {"trace", trace}}));
      ++traces;
    }

    json rj = routing_json(routing_stats(model, *r.cohort, r.fold.test, rc.train.batch_size));
    rj["fold"] = r.ck.fold;
    routing.push_back(std::move(rj));

    const EvalResult e = evaluate(model, *r.cohort, r.fold.test, rc.train.batch_size);
    const auto train = pointers(*r.cohort, r.fold.train);
    const ModelVariant& v = rc.model.variant;
    for (int level : {1, 2}) {
      if ((level == 1 && !v.use_l1) || (level == 2 && !v.use_l2)) continue;
      const int count = level == 1 ? schema::kNumL1 : schema::kNumL2;
      for (int k = 0; k < count; ++k) {
        const ConceptRef ref{level, k};
        std::array<RowVector, kNumExperts> means;
        if (rc.interpret.neutral == NeutralState::kEmpiricalMean) {
          means = empirical_embedding_means(model, train, ref, rc.train.batch_size);
        }
        const auto name = level == 1 ? schema::kL1Names[static_cast<size_t>(k)] : schema::kL2Names[static_cast<size_t>(k)];
        for (size_t i = 0; i < test.size(); ++i) {
          const int cls = e.predictions[i];
          const AblationResult a = logit_ablation(model, *test[i], ref, cls, rc.interpret.neutral, &means);
          ablation << test[i]->id << ',' << r.ck.fold << ',' << cls << ",L" << level << ',' << name;
          for (Eigen::Index x = 0; x < a.delta.size(); ++x) ablation << ',' << format_double(a.delta(x));
          for (Eigen::Index x = 0; x < a.normalized.size(); ++x) ablation << ',' << format_double(a.normalized(x));
          ablation << '\n';
        }
      }
    }
  }

  const auto agg = aggregate_attr(records);
  for (AttrPath p : paths) {
    write_text(root / ("attr_" + path_slug(p) + "_experts.csv"),
               csv_header("cmoe-attr", *first) + attr_csv(agg, p, AttrView::kPerExpert));
    write_text(root / ("attr_" + path_slug(p) + "_gate.csv"),
               csv_header("cmoe-attr", *first) + attr_csv(agg, p, AttrView::kGate));
  }
  write_text(root / "ablation.csv", csv_header("cmoe-ablation", *first) + ablation_header() + ablation.str());
  write_json(root / "routing.json", artifact("cmoe-routing", *first, {{"folds", routing}}));
  out << "attributions over " << records.size() << " records, " << traces << " traces under " << root.string()
      << "\n";
  return kExitOk;
}

// ---- infoplane --------------------------------------------------------------

void keep_only(DumpRecord& r, TrackedFeature f) {
  for (TrackedFeature g : {TrackedFeature::kZ, TrackedFeature::kB1, TrackedFeature::kB2, TrackedFeature::kP1,
                           TrackedFeature::kP2}) {
    if (g == f) continue;
    switch (g) {
      case TrackedFeature::kZ: r.z = {}; break;
      case TrackedFeature::kB1: r.b1 = {}; break;
      case TrackedFeature::kB2: r.b2 = {}; break;
      case TrackedFeature::kP1: r.p1 = {}; break;
      case TrackedFeature::kP2: r.p2 = {}; break;
    }
  }
}

int cmd_infoplane(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig c = resolve_config(o);
  const TrackedFeature feature = o.feature.empty() ? c.infoplane.feature : parse_feature(o.feature);
  const TrajectoryKind kind = o.kind.empty() ? c.infoplane.kind : parse_kind(o.kind);
  const fs::path dir = o.dumps.empty() ? fs::path(c.output) / "dumps" : fs::path(o.dumps);
  if (!fs::is_directory(dir)) throw DataError("no dump directory " + dir.string());

  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<EpochDump> dumps;
  for (const fs::path& f : files) {
    EpochDump d;
    try {
      d = epoch_dump_from_json(read_json(f));
    } catch (const json::exception& e) {
      throw DataError(f.string() + ": " + e.what());
    }
    for (DumpRecord& r : d.records) keep_only(r, feature);
    dumps.push_back(std::move(d));
  }
  if (dumps.empty()) throw DataError("no dump files under " + dir.string());

  const PlaneResult plane = build_plane(dumps, feature, c.infoplane.split);
  const std::string name(feature_name(feature));
  const fs::path root = fs::path(c.output) / "infoplane";
  write_text(root / (name + "_raw.csv"), csv_header("cmoe-infoplane", c) + plane_csv(plane.points, kind));
  const auto post = trajectory_postprocess(plane.points, kind);
  write_text(root / (name + "_" + std::string(kind_name(kind)) + ".csv"),
             csv_header("cmoe-infoplane", c) + plane_csv(post, kind));
  write_json(root / (name + ".json"),
             artifact("cmoe-infoplane", c,
                      {{"feature", name}, {"kind", kind_name(kind)}, {"split", c.infoplane.split},
                       {"dump_files", files.size()}, {"points", plane.points.size()},
                       {"missing_epochs", plane.missing_epochs}}));
  if (!plane.missing_epochs.empty()) err << "warning: " << plane.missing_epochs.size() << " epochs without dumps\n";
  out << plane.points.size() << " information-plane points for " << name << " under " << root.string() << "\n";
  return kExitOk;
}

// ---- subsample --------------------------------------------------------------

int cmd_subsample(const Options& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig c = resolve_config(o);
  const Cohort cohort = obtain_cohort(c, o.cohort_path);
  const auto splits = split_patient_level(cohort, c.folds, c.split_seed());
  const FoldData base = make_fold(cohort, splits.front(), 0);
  const std::vector<int> sizes =
      c.subsample.sizes.empty() ? default_subsample_sizes(static_cast<int>(base.train.size())) : c.subsample.sizes;
  const SubsampleResult r =
      subsample_protocol(c.model, c.loss, c.train, base, sizes, c.subsample.repeats, o.parallel);
  write_json(fs::path(c.output) / "subsample.json", artifact("cmoe-subsample", c, summary_json(r)));
  for (const auto& s : r.summary) {
    out << "size " << s.size << ": mean test macro-F1 " << s.mean << " (sem " << s.sem << ", " << s.runs
        << " runs)\n";
  }
  const auto faults = std::count_if(r.runs.begin(), r.runs.end(), [](const SubsampleRun& x) { return x.fault; });
  if (faults > 0) {
    err << faults << " subsample runs ended in a training fault\n";
    return kExitFault;
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Concept mixture-of-experts experiment runner", "cmoe"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "YAML or JSON config file");
    sub->add_option("--preset", o.preset, "pbt-default or tcga-default");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--variant", o.variant, "Model variant, e.g. hier-morph+bio-soft-cem");
    sub->add_option("--seed", o.seed, "Root seed; cohort and training seeds derive from it");
    sub->add_option("--parallel", o.parallel, "Folds or repeats run at once")->check(CLI::PositiveNumber);
  };
  auto cohort_opt = [&](CLI::App* sub) {
    sub->add_option("--cohort", o.cohort_path, "Cohort JSON written by gen (default: regenerate)");
  };
  auto checkpoint_opt = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", o.checkpoints, "Checkpoint files (default: every one under <out>/checkpoints)");
  };

  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic cohort");
  common(gen);
  CLI::App* train = app.add_subcommand("train", "Cross-validated training");
  common(train);
  cohort_opt(train);
  CLI::App* eval = app.add_subcommand("eval", "Test metrics from checkpoints");
  common(eval);
  cohort_opt(eval);
  checkpoint_opt(eval);
  CLI::App* interp = app.add_subcommand("interpret", "Attributions, ablations, routing and reasoning traces");
  common(interp);
  cohort_opt(interp);
  checkpoint_opt(interp);
  CLI::App* plane = app.add_subcommand("infoplane", "Information-plane trajectory from dumps");
  common(plane);
  plane->add_option("--dumps", o.dumps, "Dump directory (default: <out>/dumps)");
  plane->add_option("--feature", o.feature, "z, b1, b2, p1 or p2");
  plane->add_option("--kind", o.kind, "cem, cbm or latent");
  CLI::App* sub = app.add_subcommand("subsample", "Training-size protocol");
  common(sub);
  cohort_opt(sub);

  std::vector<std::string> storage{"cmoe"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : storage) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  for (CLI::App* s : app.get_subcommands()) {
    if (s->count("--seed") > 0) o.seed_given = true;
  }

  try {
    if (gen->parsed()) return cmd_gen(o, out);
    if (train->parsed()) return cmd_train(o, out, err);
    if (eval->parsed()) return cmd_eval(o, out);
    if (interp->parsed()) return cmd_interpret(o, out);
    if (plane->parsed()) return cmd_infoplane(o, out, err);
    if (sub->parsed()) return cmd_subsample(o, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TrainingFault& e) {
    err << "training fault: " << e.what() << "\n";
    return kExitFault;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}

}  // namespace cmoe
