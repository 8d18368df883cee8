#include "cmoe/variant.hpp"

#include "cmoe/errors.hpp"

#include <vector>

namespace cmoe {

Bottleneck ModelVariant::bottleneck() const {
  if (encoding == Encoding::kCbm) return Bottleneck::kCbmScalar;
  return residual == Residual::kSoft ? Bottleneck::kCemSoft : Bottleneck::kCemHard;
}

void ModelVariant::validate() const {
  if (!use_l1 && !use_l2) throw ConfigError("variant needs at least one concept level");
  if (hierarchy == Hierarchy::kHier && !(use_l1 && use_l2)) {
    throw ConfigError("hier variant requires both morph and bio concept levels");
  }
}

std::string ModelVariant::name() const {
  std::string s = hierarchy == Hierarchy::kHier ? "hier-" : "flat-";
  s += use_l1 && use_l2 ? "morph+bio" : (use_l1 ? "morph" : "bio");
  s += residual == Residual::kSoft ? "-soft" : "-hard";
  s += encoding == Encoding::kCem ? "-cem" : "-cbm";
  return s;
}

ModelVariant ModelVariant::parse(std::string_view name) {
  std::vector<std::string_view> parts;
  size_t start = 0;
  for (size_t i = 0; i <= name.size(); ++i) {
    if (i == name.size() || name[i] == '-') {
      parts.push_back(name.substr(start, i - start));
      start = i + 1;
    }
  }
  const std::string bad = "unknown variant '" + std::string(name) +
                          "' (expected <flat|hier>-<morph|bio|morph+bio>-<soft|hard>-<cem|cbm>)";
  if (parts.size() != 4) throw ConfigError(bad);
  ModelVariant v;
  if (parts[0] == "flat") v.hierarchy = Hierarchy::kFlat;
  else if (parts[0] == "hier") v.hierarchy = Hierarchy::kHier;
  else throw ConfigError(bad);
  if (parts[1] == "morph") { v.use_l1 = true; v.use_l2 = false; }
  else if (parts[1] == "bio") { v.use_l1 = false; v.use_l2 = true; }
  else if (parts[1] == "morph+bio") { v.use_l1 = true; v.use_l2 = true; }
  else throw ConfigError(bad);
  if (parts[2] == "soft") v.residual = Residual::kSoft;
  else if (parts[2] == "hard") v.residual = Residual::kHard;
  else throw ConfigError(bad);
  if (parts[3] == "cem") v.encoding = Encoding::kCem;
  else if (parts[3] == "cbm") v.encoding = Encoding::kCbm;
  else throw ConfigError(bad);
  v.validate();
  return v;
}

}  // namespace cmoe
