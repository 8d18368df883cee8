#include "test_util.hpp"

#include "cmoe/cli.hpp"
#include "cmoe/config.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace cmoe;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(preset: pbt-default
seed: 5
cohort:
  num_patients: 40
  num_classes: 2
model:
  d: 16
  gnn_layers: 1
  gnn_hidden: 16
  concept_dim: 4
train:
  max_epochs: 4
  patience: 4
  batch_size: 8
  lr: 0.005
folds: 3
)";

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("cmoe_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

nlohmann::json load(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

int run(std::vector<std::string> args, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (err_text) *err_text = err.str();
  return code;
}

// Every JSON artifact carries its format, version, seed and a config that
// re-parses to itself.
void check_stamp(const nlohmann::json& j) {
  REQUIRE(j.contains("format"));
  CHECK(j["version"] == kArtifactVersion);
  REQUIRE(j.contains("config"));
  CHECK(j["seed"] == j["config"]["seed"]);
  CHECK(to_json(config_from_json(j["config"])) == j["config"]);
}

}  // namespace

TEST_CASE("gen is reproducible and honours --seed") {
  TempDir t;
  const fs::path cfg = t.path / "tiny.yaml";
  write(cfg, kTiny);
  const std::string a = (t.path / "a").string(), b = (t.path / "b").string();
  REQUIRE(run({"gen", "--config", cfg.string(), "--out", a}) == kExitOk);
  REQUIRE(run({"gen", "--config", cfg.string(), "--out", a}) == kExitOk);
  const std::string first = slurp(fs::path(a) / "cohort.json");
  fs::rename(fs::path(a) / "cohort.json", t.path / "first.json");
  REQUIRE(run({"gen", "--config", cfg.string(), "--out", a}) == kExitOk);
  CHECK(slurp(fs::path(a) / "cohort.json") == first);
  check_stamp(load(fs::path(a) / "cohort.json"));

  REQUIRE(run({"gen", "--config", cfg.string(), "--out", b, "--seed", "7"}) == kExitOk);
  const auto j = load(fs::path(b) / "cohort.json");
  CHECK(j["seed"] == 7);
  CHECK(j["config"]["cohort"]["seed"] == substream_seed(7, "cohort"));
  CHECK(j["config"]["train"]["seed"] == 7);
}

TEST_CASE("configuration errors exit with status 2") {
  TempDir t;
  const fs::path cfg = t.path / "bad.yaml";
  write(cfg, std::string(kTiny) + "extra_key: 1\n");
  std::string err;
  CHECK(run({"gen", "--config", cfg.string(), "--out", t.path.string()}, &err) == kExitConfig);
  CHECK(err.find("extra_key") != std::string::npos);
  CHECK_FALSE(fs::exists(t.path / "cohort.json"));
  CHECK(run({"gen", "--preset", "nope", "--out", t.path.string()}) == kExitConfig);
  CHECK(run({"train", "--variant", "hier-morph-soft-xyz", "--out", t.path.string()}) == kExitConfig);
  CHECK(run({"gen", "--bogus-flag"}) == kExitConfig);
  CHECK(run({}) == kExitConfig);
  CHECK(run({"gen", "--help"}) == kExitOk);
  CHECK(run({"eval", "--out", (t.path / "empty").string()}) == kExitError);
}

TEST_CASE("a non-finite run exits with status 3") {
  TempDir t;
  const fs::path cfg = t.path / "bad.yaml";
  std::string text = kTiny;
  text.replace(text.find("lr: 0.005"), 9, "lr: 1.0e+300");
  write(cfg, text);
  CHECK(run({"train", "--config", cfg.string(), "--out", (t.path / "run").string()}) == kExitFault);
  CHECK(fs::exists(t.path / "run" / "summary.json"));
}

TEST_CASE("end-to-end pipeline on a 40-sample cohort") {
  TempDir t;
  const fs::path cfg = t.path / "tiny.yaml";
  write(cfg, kTiny);
  const fs::path out = t.path / "run";
  const std::vector<std::string> base{"--config", cfg.string(), "--out", out.string()};
  auto with = [&](std::string cmd, std::vector<std::string> extra = {}) {
    std::vector<std::string> a{std::move(cmd)};
    a.insert(a.end(), base.begin(), base.end());
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  REQUIRE(run(with("gen")) == kExitOk);
  REQUIRE(run(with("train", {"--cohort", (out / "cohort.json").string()})) == kExitOk);
  REQUIRE(run(with("eval")) == kExitOk);
  REQUIRE(run(with("interpret")) == kExitOk);
  REQUIRE(run(with("infoplane")) == kExitOk);
  REQUIRE(run(with("subsample")) == kExitOk);

  const auto summary = load(out / "summary.json");
  check_stamp(summary);
  REQUIRE(summary["folds"].size() == 3);
  for (int f = 0; f < 3; ++f) {
    const std::string name = "fold" + std::to_string(f);
    const auto ev = load(out / "eval" / (name + ".json"));
    check_stamp(ev);
    CHECK(ev["test"]["macro_f1"] == summary["folds"][f]["test"]["macro_f1"]);
    const auto ck = checkpoint_from_json(load(out / "checkpoints" / (name + ".json")));
    CHECK(ck.fold == f);
    CHECK(slurp(out / "logs" / (name + ".csv")).rfind("# cmoe-run-log version=1 seed=5 config={", 0) == 0);
    const fs::path dumps = out / "dumps" / name;
    CHECK(std::distance(fs::directory_iterator(dumps), fs::directory_iterator{}) > 0);
    check_stamp(load(dumps / "epoch0001.json"));
  }

  for (const char* f : {"attr_l1-class_experts.csv", "attr_l1-class_gate.csv", "attr_l2-class_experts.csv",
                        "attr_l2-class_gate.csv", "attr_l1-l2_experts.csv", "attr_l1-l2_gate.csv", "ablation.csv"}) {
    const std::string text = slurp(out / "interpret" / f);
    CHECK(text.rfind("# cmoe-", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') > 2);
  }
  check_stamp(load(out / "interpret" / "routing.json"));
  int traces = 0;
  for (const auto& e : fs::directory_iterator(out / "interpret" / "traces")) {
    const auto j = load(e.path());
    check_stamp(j);
    CHECK(validate_trace(j["trace"]).empty());
    ++traces;
  }
  CHECK(traces == 40);

  const std::string plane = slurp(out / "infoplane" / "b1_raw.csv");
  CHECK(plane.find("\nepoch,H_C,I_CY,k_prime,N,kind\n") != std::string::npos);
  CHECK(fs::exists(out / "infoplane" / "b1_cem.csv"));
  check_stamp(load(out / "infoplane" / "b1.json"));

  const auto sub = load(out / "subsample.json");
  check_stamp(sub);
  CHECK(sub["runs"].size() == 20);
}
