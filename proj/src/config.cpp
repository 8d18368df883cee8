#include "cmoe/config.hpp"

#include "cmoe/errors.hpp"

#include <yaml-cpp/yaml.h>

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

namespace cmoe {

namespace {

using nlohmann::json;

constexpr std::array<std::string_view, 2> kPresets{"pbt-default", "tcga-default"};

std::string neutral_name(NeutralState n) { return n == NeutralState::kNegative ? "negative" : "empirical-mean"; }

NeutralState parse_neutral(const std::string& s) {
  if (s == "negative") return NeutralState::kNegative;
  if (s == "empirical-mean") return NeutralState::kEmpiricalMean;
  throw ConfigError("interpret.neutral must be 'negative' or 'empirical-mean', got '" + s + "'");
}

std::string target_name(L1ToL2Target t) { return t == L1ToL2Target::kSquaredNorm ? "squared-norm" : "score"; }

L1ToL2Target parse_target(const std::string& s) {
  if (s == "squared-norm") return L1ToL2Target::kSquaredNorm;
  if (s == "score") return L1ToL2Target::kScore;
  throw ConfigError("interpret.l1_to_l2 must be 'squared-norm' or 'score', got '" + s + "'");
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

bool compatible(const json& base, const json& v) {
  if (base.is_number_float()) return v.is_number();
  if (base.is_number_unsigned()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  if (base.is_number_integer()) return v.is_number_integer();
  if (base.is_string()) return v.is_string();
  if (base.is_boolean()) return v.is_boolean();
  if (base.is_array()) return v.is_array();
  if (base.is_object()) return v.is_object();
  return false;
}

// Overlays `patch` on `base`; every patch key must exist in base.
void overlay(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError((path.empty() ? "config" : path) + " must be a mapping");
  for (const auto& [key, v] : patch.items()) {
    const std::string where = join(path, key);
    if (!base.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    json& slot = base[key];
    if (!compatible(slot, v)) throw ConfigError("config key '" + where + "' has the wrong type");
    if (slot.is_object()) overlay(slot, v, where);
    else slot = v;
  }
}

json scalar_to_json(const YAML::Node& n) {
  const std::string& s = n.Scalar();
  if (n.Tag() == "!") return s;  // quoted
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  if (s == "~" || s == "null" || s.empty()) return nullptr;
  static const std::regex int_re("[-+]?[0-9]+");
  if (std::regex_match(s, int_re)) {
    errno = 0;
    if (s[0] == '-') {
      const long long v = std::strtoll(s.c_str(), nullptr, 10);
      if (errno == 0) return v;
    } else {
      const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
      if (errno == 0) return v;
    }
    throw ConfigError("integer out of range: " + s);
  }
  static const std::regex float_re(R"([-+]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][-+]?[0-9]+)?)");
  if (std::regex_match(s, float_re)) return std::strtod(s.c_str(), nullptr);
  return s;
}

json node_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined: return nullptr;
    case YAML::NodeType::Scalar: return scalar_to_json(n);
    case YAML::NodeType::Sequence: {
      json arr = json::array();
      for (const auto& e : n) arr.push_back(node_to_json(e));
      return arr;
    }
    case YAML::NodeType::Map: {
      json obj = json::object();
      for (const auto& kv : n) {
        const std::string key = kv.first.as<std::string>();
        if (obj.contains(key)) throw ConfigError("duplicate config key '" + key + "'");
        obj[key] = node_to_json(kv.second);
      }
      return obj;
    }
  }
  return nullptr;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (std::find(kPresets.begin(), kPresets.end(), preset) == kPresets.end()) {
    throw ConfigError("unknown preset '" + preset + "'");
  }
  cohort.validate();
  model.validate();
  if (model.dims.num_classes != cohort.num_classes || model.dims.patch_dim != cohort.patch_dim ||
      model.dims.node_dim != cohort.graph_node_dim) {
    throw ConfigError("model input dims and classes must follow the cohort");
  }
  loss.validate(cohort.num_classes);
  train.validate();
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (folds > cohort.num_patients) throw ConfigError("folds exceed the number of patients");
  if (subsample.repeats < 1) throw ConfigError("subsample.repeats must be >= 1");
  for (int s : subsample.sizes)
    if (s < 1) throw ConfigError("subsample sizes must be >= 1");
  if (interpret.top_k < 1) throw ConfigError("interpret.top_k must be >= 1");
  if (!infoplane.split.empty() && infoplane.split != "val" && infoplane.split != "test") {
    throw ConfigError("infoplane.split must be 'val', 'test' or empty");
  }
  if (output.empty()) throw ConfigError("output must not be empty");
}

std::uint64_t ExperimentConfig::split_seed() const { return substream_seed(seed, "splits"); }

std::vector<std::string> preset_names() { return {kPresets.begin(), kPresets.end()}; }

ExperimentConfig preset_config(std::string_view name, std::uint64_t seed) {
  ExperimentConfig c;
  c.preset = std::string(name);
  c.seed = seed;
  c.model.variant = ModelVariant::parse("hier-morph+bio-soft-cem");
  c.model.dims.d = 256;
  c.model.dims.concept_dim = 16;
  if (name == "pbt-default") {
    c.cohort.num_patients = 200;
    c.cohort.num_classes = 4;
    c.model.dims.gnn_layers = 3;
    c.model.dims.gnn_hidden = 256;
    c.model.gnn_dropout = 0.1;
    c.model.dropout = 0.1;
    c.loss.lambda1 = 0.5;
    c.loss.lambda2 = 0.3;
    c.loss.lambda_int = 0.1;
    c.train.lr = 2e-4;
    c.train.batch_size = 16;
  } else if (name == "tcga-default") {
    c.cohort.num_patients = 67;
    c.cohort.slides_per_patient = 3;
    c.cohort.num_classes = 2;
    c.model.dims.gnn_layers = 2;
    c.model.dims.gnn_hidden = 128;
    c.model.gnn_dropout = 0.5;
    c.model.dropout = 0.6;
    c.loss.lambda1 = 0.9;
    c.loss.lambda2 = 0.0;
    c.loss.lambda_int = 0.01;
    c.train.lr = 1e-4;
    c.train.batch_size = 8;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "'");
  }
  c.train.max_epochs = 150;
  c.train.patience = 30;
  c.train.dump_interval = 1;
  c.train.seed = seed;
  c.cohort.seed = substream_seed(seed, "cohort");
  c.model.dims.num_classes = c.cohort.num_classes;
  c.model.dims.patch_dim = c.cohort.patch_dim;
  c.model.dims.node_dim = c.cohort.graph_node_dim;
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  const ModelSpec& m = c.model;
  return {{"preset", c.preset},
          {"seed", c.seed},
          {"cohort", to_json(c.cohort)},
          {"model",
           {{"variant", m.variant.name()},
            {"d", m.dims.d},
            {"gnn_layers", m.dims.gnn_layers},
            {"gnn_hidden", m.dims.gnn_hidden},
            {"concept_dim", m.dims.concept_dim},
            {"dropout", m.dropout},
            {"gnn_dropout", m.gnn_dropout},
            {"perturb_sigma_scale", m.perturb_sigma_scale},
            {"patch_cap", m.patch_cap}}},
          {"loss",
           {{"lambda1", c.loss.lambda1},
            {"lambda2", c.loss.lambda2},
            {"lambda_int", c.loss.lambda_int},
            {"class_weights", c.loss.class_weights},
            {"eps", c.loss.eps}}},
          {"train",
           {{"lr", c.train.lr},
            {"batch_size", c.train.batch_size},
            {"max_epochs", c.train.max_epochs},
            {"patience", c.train.patience},
            {"dump_interval", c.train.dump_interval},
            {"seed", c.train.seed}}},
          {"folds", c.folds},
          {"output", c.output},
          {"subsample", {{"sizes", c.subsample.sizes}, {"repeats", c.subsample.repeats}}},
          {"interpret",
           {{"top_k", c.interpret.top_k},
            {"neutral", neutral_name(c.interpret.neutral)},
            {"l1_to_l2", target_name(c.interpret.l1_to_l2)}}},
          {"infoplane",
           {{"feature", feature_name(c.infoplane.feature)},
            {"kind", kind_name(c.infoplane.kind)},
            {"split", c.infoplane.split}}}};
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a mapping");
  try {
    std::string preset = "pbt-default";
    if (j.contains("preset")) {
      if (!j["preset"].is_string()) throw ConfigError("preset must be a string");
      preset = j["preset"].get<std::string>();
    }
    std::uint64_t seed = 0;
    if (j.contains("seed")) {
      const json& s = j["seed"];
      if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0)) {
        throw ConfigError("seed must be a non-negative integer");
      }
      seed = s.get<std::uint64_t>();
    }
    json m = to_json(preset_config(preset, seed));
    overlay(m, j, "");

    ExperimentConfig c;
    c.preset = preset;
    c.seed = seed;
    c.cohort = cohort_config_from_json(m["cohort"]);
    const json& mj = m["model"];
    c.model.variant = ModelVariant::parse(mj["variant"].get<std::string>());
    c.model.dims.d = mj["d"].get<int>();
    c.model.dims.gnn_layers = mj["gnn_layers"].get<int>();
    c.model.dims.gnn_hidden = mj["gnn_hidden"].get<int>();
    c.model.dims.concept_dim = mj["concept_dim"].get<int>();
    c.model.dims.num_classes = c.cohort.num_classes;
    c.model.dims.patch_dim = c.cohort.patch_dim;
    c.model.dims.node_dim = c.cohort.graph_node_dim;
    c.model.dropout = mj["dropout"].get<double>();
    c.model.gnn_dropout = mj["gnn_dropout"].get<double>();
    c.model.perturb_sigma_scale = mj["perturb_sigma_scale"].get<double>();
    c.model.patch_cap = mj["patch_cap"].get<int>();
    const json& lj = m["loss"];
    c.loss.lambda1 = lj["lambda1"].get<double>();
    c.loss.lambda2 = lj["lambda2"].get<double>();
    c.loss.lambda_int = lj["lambda_int"].get<double>();
    c.loss.class_weights = lj["class_weights"].get<std::vector<double>>();
    c.loss.eps = lj["eps"].get<double>();
    const json& tj = m["train"];
    c.train.lr = tj["lr"].get<double>();
    c.train.batch_size = tj["batch_size"].get<int>();
    c.train.max_epochs = tj["max_epochs"].get<int>();
    c.train.patience = tj["patience"].get<int>();
    c.train.dump_interval = tj["dump_interval"].get<int>();
    c.train.seed = tj["seed"].get<std::uint64_t>();
    c.folds = m["folds"].get<int>();
    c.output = m["output"].get<std::string>();
    c.subsample.sizes = m["subsample"]["sizes"].get<std::vector<int>>();
    c.subsample.repeats = m["subsample"]["repeats"].get<int>();
    c.interpret.top_k = m["interpret"]["top_k"].get<int>();
    c.interpret.neutral = parse_neutral(m["interpret"]["neutral"].get<std::string>());
    c.interpret.l1_to_l2 = parse_target(m["interpret"]["l1_to_l2"].get<std::string>());
    c.infoplane.feature = parse_feature(m["infoplane"]["feature"].get<std::string>());
    c.infoplane.kind = parse_kind(m["infoplane"]["kind"].get<std::string>());
    c.infoplane.split = m["infoplane"]["split"].get<std::string>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

nlohmann::json yaml_to_json(const std::string& text) {
  try {
    const YAML::Node root = YAML::Load(text);
    if (!root.IsDefined() || root.IsNull()) return json::object();
    return node_to_json(root);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(yaml_to_json(ss.str()));
}

nlohmann::json to_json(const Checkpoint& c) {
  return {{"format", "cmoe-checkpoint"},
          {"version", kArtifactVersion},
          {"config", to_json(c.config)},
          {"fold", c.fold},
          {"best_epoch", c.best_epoch},
          {"best_val_f1", c.best_val_f1},
          {"params", c.params.to_json()}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "cmoe-checkpoint") throw DataError("not a checkpoint file");
  if (j.value("version", 0) != kArtifactVersion) throw DataError("unsupported checkpoint version");
  Checkpoint c;
  c.config = config_from_json(j.at("config"));
  try {
    c.fold = j.at("fold").get<int>();
    c.best_epoch = j.at("best_epoch").get<int>();
    c.best_val_f1 = j.at("best_val_f1").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
  c.params = ParamStore::from_json(j.at("params"));
  return c;
}

}  // namespace cmoe
