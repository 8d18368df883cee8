#include "cmoe/synthcohort.hpp"

#include "cmoe/errors.hpp"
#include "cmoe/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

namespace cmoe {

namespace {

std::string format_id(const char* prefix, int n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04d", prefix, n);
  return buf;
}

RowVector unit_direction(Rng& rng, int dim) {
  RowVector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  const double n = v.norm();
  return n > 0.0 ? RowVector(v / n) : v;
}

// Latent signal amplitude for a concept direction.
constexpr double kShift = 2.0;
constexpr double kNodeSpread = 0.7;

// Which concepts leave a trace in which modality. Cellularity and INI1 are
// visible in both; the rest are modality-specific.
constexpr std::array<bool, schema::kNumL1> kL1InPatches{true, true, true, false, false};
constexpr std::array<bool, schema::kNumL1> kL1InGraph{true, false, false, true, true};
constexpr std::array<bool, schema::kNumL2> kL2InPatches{true, true, true, false, false};
constexpr std::array<bool, schema::kNumL2> kL2InGraph{false, false, true, true, true};

struct Directions {
  std::array<RowVector, schema::kNumL1> l1_patch, l1_node;
  std::array<RowVector, schema::kNumL2> l2_patch, l2_node;
};

Directions draw_directions(const CohortConfig& cfg) {
  Rng rng(cfg.seed, "cohort/directions");
  Directions d;
  for (int k = 0; k < schema::kNumL1; ++k) {
    d.l1_patch[k] = unit_direction(rng, cfg.patch_dim);
    d.l1_node[k] = unit_direction(rng, cfg.graph_node_dim);
  }
  for (int j = 0; j < schema::kNumL2; ++j) {
    d.l2_patch[j] = unit_direction(rng, cfg.patch_dim);
    d.l2_node[j] = unit_direction(rng, cfg.graph_node_dim);
  }
  return d;
}

}  // namespace

void CohortConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("cohort config: ") + what);
  };
  need(num_patients >= 1, "num_patients must be >= 1");
  need(slides_per_patient >= 1, "slides_per_patient must be >= 1");
  need(num_classes >= 1, "num_classes must be >= 1");
  need(patch_dim >= 2, "patch_dim must be >= 2");
  need(graph_node_dim >= 2, "graph_node_dim must be >= 2");
  need(patches_per_slide.first >= 1 && patches_per_slide.second >= patches_per_slide.first,
       "patches_per_slide must be a range of counts >= 1");
  need(graph_nodes.first >= 1 && graph_nodes.second >= graph_nodes.first,
       "graph_nodes must be a range of counts >= 1");
  need(edge_probability >= 0.0 && edge_probability <= 1.0, "edge_probability must be in [0,1]");
  need(concept_noise >= 0.0, "concept_noise must be >= 0");
  need(mask_rate_l1 >= 0.0 && mask_rate_l1 <= 1.0, "mask_rate_l1 must be in [0,1]");
  need(mask_rate_l2 >= 0.0 && mask_rate_l2 <= 1.0, "mask_rate_l2 must be in [0,1]");
}

int ConceptTargets::l1_level(int k) const {
  if (!l1_mask[static_cast<size_t>(k)]) return -1;
  const int off = schema::l1_offset(k);
  for (int v = 0; v < schema::kL1Categories[static_cast<size_t>(k)]; ++v) {
    if (l1_onehot[static_cast<size_t>(off + v)]) return v;
  }
  return -1;
}

std::vector<ConceptProfile> class_profiles(const CohortConfig& cfg) {
  Rng rng(cfg.seed, "cohort/profiles");
  std::vector<ConceptProfile> out;
  std::set<std::vector<int>> seen;
  int attempts = 0;
  while (static_cast<int>(out.size()) < cfg.num_classes) {
    ConceptProfile p;
    std::vector<int> key;
    for (int k = 0; k < schema::kNumL1; ++k) {
      p.l1_level[k] = rng.uniform_int(0, schema::kL1Categories[k] - 1);
      key.push_back(p.l1_level[k]);
    }
    for (int j = 0; j < schema::kNumL2; ++j) {
      p.l2_positive[j] = rng.bernoulli(0.5) ? 1 : 0;
      key.push_back(p.l2_positive[j]);
    }
    // 4*3*5*4*3*32 profiles exist, so rejection terminates quickly.
    if (seen.insert(key).second || ++attempts > 100000) out.push_back(p);
  }
  return out;
}

Cohort generate_cohort(const CohortConfig& cfg) {
  cfg.validate();
  const auto profiles = class_profiles(cfg);
  const Directions dir = draw_directions(cfg);

  std::vector<int> patient_label(static_cast<size_t>(cfg.num_patients));
  for (int p = 0; p < cfg.num_patients; ++p) patient_label[p] = p % cfg.num_classes;
  Rng label_rng(cfg.seed, "cohort/labels");
  label_rng.shuffle(patient_label);

  Rng rng(cfg.seed, "cohort/samples");
  Cohort cohort;
  cohort.reserve(static_cast<size_t>(cfg.num_patients * cfg.slides_per_patient));
  int sample_no = 0;
  for (int p = 0; p < cfg.num_patients; ++p) {
    const int label = patient_label[p];
    const ConceptProfile& prof = profiles[label];
    for (int s = 0; s < cfg.slides_per_patient; ++s) {
      CohortSample smp;
      smp.id = format_id("S", sample_no++);
      smp.patient_id = format_id("P", p);
      smp.label = label;

      // Centered latent concept signals, noise only here.
      std::array<double, schema::kNumL1> l1_sig{};
      std::array<double, schema::kNumL2> l2_sig{};
      for (int k = 0; k < schema::kNumL1; ++k) {
        const double level = static_cast<double>(prof.l1_level[k]) / (schema::kL1Categories[k] - 1);
        l1_sig[k] = level - 0.5 + rng.normal(0.0, cfg.concept_noise);
      }
      for (int j = 0; j < schema::kNumL2; ++j) {
        l2_sig[j] = (prof.l2_positive[j] ? 0.5 : -0.5) + rng.normal(0.0, cfg.concept_noise);
      }

      // Patch bag: mean shift per visible concept, spread from pleomorphism.
      RowVector patch_mean = RowVector::Zero(cfg.patch_dim);
      for (int k = 0; k < schema::kNumL1; ++k) {
        if (kL1InPatches[k]) patch_mean += kShift * l1_sig[k] * dir.l1_patch[k];
      }
      for (int j = 0; j < schema::kNumL2; ++j) {
        if (kL2InPatches[j]) patch_mean += kShift * l2_sig[j] * dir.l2_patch[j];
      }
      const double spread = 0.3 + 0.7 * std::clamp(l1_sig[1] + 0.5, 0.0, 2.0);
      const int n_patch = rng.uniform_int(cfg.patches_per_slide.first, cfg.patches_per_slide.second);
      smp.patches.resize(n_patch, cfg.patch_dim);
      for (int i = 0; i < n_patch; ++i) {
        for (int c = 0; c < cfg.patch_dim; ++c) smp.patches(i, c) = patch_mean(c) + spread * rng.normal();
      }

      // Cell graph: node mean shift per visible concept; edge density from
      // cellularity so the clustering coefficient tracks it.
      RowVector node_mean = RowVector::Zero(cfg.graph_node_dim);
      for (int k = 0; k < schema::kNumL1; ++k) {
        if (kL1InGraph[k]) node_mean += kShift * l1_sig[k] * dir.l1_node[k];
      }
      for (int j = 0; j < schema::kNumL2; ++j) {
        if (kL2InGraph[j]) node_mean += kShift * l2_sig[j] * dir.l2_node[j];
      }
      const int n_nodes = rng.uniform_int(cfg.graph_nodes.first, cfg.graph_nodes.second);
      smp.graph.nodes.resize(n_nodes, cfg.graph_node_dim);
      for (int i = 0; i < n_nodes; ++i) {
        for (int c = 0; c < cfg.graph_node_dim; ++c) {
          smp.graph.nodes(i, c) = node_mean(c) + kNodeSpread * rng.normal();
        }
      }
      const double p_edge = std::clamp(cfg.edge_probability * (1.0 + l1_sig[0]), 0.0, 1.0);
      for (int a = 0; a < n_nodes; ++a) {
        for (int b = a + 1; b < n_nodes; ++b) {
          if (rng.bernoulli(p_edge)) smp.graph.edges.emplace_back(a, b);
        }
      }

      // Targets come from the class profile alone; masks are independent.
      for (int k = 0; k < schema::kNumL1; ++k) {
        const bool observed = !rng.bernoulli(cfg.mask_rate_l1);
        smp.concepts.l1_mask[k] = observed ? 1 : 0;
        if (observed) smp.concepts.l1_onehot[schema::l1_offset(k) + prof.l1_level[k]] = 1;
      }
      for (int j = 0; j < schema::kNumL2; ++j) {
        const bool observed = !rng.bernoulli(cfg.mask_rate_l2);
        smp.concepts.l2_mask[j] = observed ? 1 : 0;
        smp.concepts.l2_binary[j] = observed ? prof.l2_positive[j] : 0;
      }
      cohort.push_back(std::move(smp));
    }
  }
  return cohort;
}

std::vector<FoldSplit> split_patient_level(const Cohort& cohort, int folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("split_patient_level: folds must be >= 2");
  if (cohort.empty()) throw ConfigError("split_patient_level: empty cohort");

  // Patients in first-appearance order, with their label.
  std::vector<std::string> patients;
  std::map<std::string, int> label_of;
  for (const auto& s : cohort) {
    if (label_of.emplace(s.patient_id, s.label).second) patients.push_back(s.patient_id);
  }
  if (static_cast<int>(patients.size()) < folds) {
    throw ConfigError("split_patient_level: " + std::to_string(patients.size()) +
                      " patients for " + std::to_string(folds) + " folds");
  }

  // Shuffle, then stable-sort by label and deal round-robin so every group is
  // roughly class-balanced.
  Rng rng(seed, "splits");
  rng.shuffle(patients);
  std::stable_sort(patients.begin(), patients.end(),
                   [&](const std::string& a, const std::string& b) { return label_of[a] < label_of[b]; });
  std::vector<std::vector<std::string>> groups(static_cast<size_t>(folds));
  for (size_t i = 0; i < patients.size(); ++i) groups[i % folds].push_back(patients[i]);

  std::vector<FoldSplit> out(static_cast<size_t>(folds));
  for (int f = 0; f < folds; ++f) {
    FoldSplit& fs = out[f];
    fs.test = groups[f];
    if (folds == 2) {
      // Only one other group: its first half validates, the rest trains.
      const auto& other = groups[(f + 1) % 2];
      const size_t n_val = (other.size() + 1) / 2;
      fs.val.assign(other.begin(), other.begin() + static_cast<long>(n_val));
      fs.train.assign(other.begin() + static_cast<long>(n_val), other.end());
    } else {
      fs.val = groups[(f + 1) % folds];
      for (int g = 0; g < folds; ++g) {
        if (g == f || g == (f + 1) % folds) continue;
        fs.train.insert(fs.train.end(), groups[g].begin(), groups[g].end());
      }
    }
    std::sort(fs.train.begin(), fs.train.end());
    std::sort(fs.val.begin(), fs.val.end());
    std::sort(fs.test.begin(), fs.test.end());
  }
  return out;
}

std::vector<int> samples_of(const Cohort& cohort, const std::vector<std::string>& patients) {
  const std::set<std::string> want(patients.begin(), patients.end());
  std::vector<int> idx;
  for (size_t i = 0; i < cohort.size(); ++i) {
    if (want.count(cohort[i].patient_id)) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

void validate_sample(const CohortSample& s, int num_classes) {
  auto fail = [&](const std::string& what) { throw DataError("sample " + s.id + ": " + what); };
  if (s.patches.rows() < 1) fail("empty patch bag");
  if (s.graph.nodes.rows() < 1) fail("empty graph");
  if (s.label < 0 || s.label >= num_classes) fail("label out of range");
  const int n = static_cast<int>(s.graph.nodes.rows());
  for (const auto& [a, b] : s.graph.edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) fail("edge endpoint out of range");
  }
  for (int k = 0; k < schema::kNumL1; ++k) {
    if (!s.concepts.l1_mask[k]) continue;
    int ones = 0;
    for (int v = 0; v < schema::kL1Categories[k]; ++v) ones += s.concepts.l1_onehot[schema::l1_offset(k) + v];
    if (ones != 1) fail("observed L1 concept is not one-hot");
  }
}

// ---- JSON -------------------------------------------------------------------

nlohmann::json to_json(const CohortConfig& c) {
  return {{"num_patients", c.num_patients},
          {"slides_per_patient", c.slides_per_patient},
          {"num_classes", c.num_classes},
          {"patch_dim", c.patch_dim},
          {"patches_per_slide", {c.patches_per_slide.first, c.patches_per_slide.second}},
          {"graph_node_dim", c.graph_node_dim},
          {"graph_nodes", {c.graph_nodes.first, c.graph_nodes.second}},
          {"edge_probability", c.edge_probability},
          {"concept_noise", c.concept_noise},
          {"mask_rate_l1", c.mask_rate_l1},
          {"mask_rate_l2", c.mask_rate_l2},
          {"seed", c.seed}};
}

CohortConfig cohort_config_from_json(const nlohmann::json& j) {
  CohortConfig c;
  c.num_patients = j.at("num_patients").get<int>();
  c.slides_per_patient = j.at("slides_per_patient").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.patch_dim = j.at("patch_dim").get<int>();
  c.patches_per_slide = {j.at("patches_per_slide").at(0).get<int>(), j.at("patches_per_slide").at(1).get<int>()};
  c.graph_node_dim = j.at("graph_node_dim").get<int>();
  c.graph_nodes = {j.at("graph_nodes").at(0).get<int>(), j.at("graph_nodes").at(1).get<int>()};
  c.edge_probability = j.at("edge_probability").get<double>();
  c.concept_noise = j.at("concept_noise").get<double>();
  c.mask_rate_l1 = j.at("mask_rate_l1").get<double>();
  c.mask_rate_l2 = j.at("mask_rate_l2").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

namespace {

nlohmann::json matrix_rows(const Matrix& m) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    arr.push_back(std::move(row));
  }
  return arr;
}

Matrix rows_matrix(const nlohmann::json& arr) {
  if (!arr.is_array() || arr.empty()) throw DataError("expected a non-empty array of rows");
  const size_t cols = arr.at(0).size();
  Matrix m(static_cast<Eigen::Index>(arr.size()), static_cast<Eigen::Index>(cols));
  for (size_t i = 0; i < arr.size(); ++i) {
    if (arr[i].size() != cols) throw DataError("ragged row array");
    for (size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = arr[i][c].get<double>();
  }
  return m;
}

template <size_t N>
void read_bits(const nlohmann::json& j, std::array<std::uint8_t, N>& out, const char* name) {
  if (!j.is_array() || j.size() != N) throw DataError(std::string("concept field ") + name + " has wrong length");
  for (size_t i = 0; i < N; ++i) {
    const int v = j[i].get<int>();
    if (v != 0 && v != 1) throw DataError(std::string("concept field ") + name + " is not binary");
    out[i] = static_cast<std::uint8_t>(v);
  }
}

}  // namespace

nlohmann::json cohort_to_json(const Cohort& cohort, const CohortConfig& cfg) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : cohort) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [a, b] : s.graph.edges) edges.push_back({a, b});
    samples.push_back({{"id", s.id},
                       {"patient_id", s.patient_id},
                       {"label", s.label},
                       {"patches", matrix_rows(s.patches)},
                       {"graph", {{"nodes", matrix_rows(s.graph.nodes)}, {"edges", edges}}},
                       {"concepts",
                        {{"l1_onehot", s.concepts.l1_onehot},
                         {"l1_mask", s.concepts.l1_mask},
                         {"l2_binary", s.concepts.l2_binary},
                         {"l2_mask", s.concepts.l2_mask}}}});
  }
  return {{"format", "cmoe-cohort"}, {"version", 1}, {"config", to_json(cfg)}, {"samples", std::move(samples)}};
}

Cohort cohort_from_json(const nlohmann::json& j, CohortConfig* cfg_out) {
  if (j.value("format", "") != "cmoe-cohort") throw DataError("not a cmoe-cohort document");
  const CohortConfig cfg = cohort_config_from_json(j.at("config"));
  if (cfg_out) *cfg_out = cfg;
  Cohort cohort;
  for (const auto& js : j.at("samples")) {
    CohortSample s;
    s.id = js.at("id").get<std::string>();
    s.patient_id = js.at("patient_id").get<std::string>();
    s.label = js.at("label").get<int>();
    s.patches = rows_matrix(js.at("patches"));
    s.graph.nodes = rows_matrix(js.at("graph").at("nodes"));
    for (const auto& e : js.at("graph").at("edges")) s.graph.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    const auto& jc = js.at("concepts");
    read_bits(jc.at("l1_onehot"), s.concepts.l1_onehot, "l1_onehot");
    read_bits(jc.at("l1_mask"), s.concepts.l1_mask, "l1_mask");
    read_bits(jc.at("l2_binary"), s.concepts.l2_binary, "l2_binary");
    read_bits(jc.at("l2_mask"), s.concepts.l2_mask, "l2_mask");
    validate_sample(s, cfg.num_classes);
    cohort.push_back(std::move(s));
  }
  return cohort;
}

}  // namespace cmoe
