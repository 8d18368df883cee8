#pragma once

#include <string>
#include <string_view>

namespace cmoe {

enum class Hierarchy { kFlat, kHier };
enum class Residual { kSoft, kHard };
enum class Encoding { kCem, kCbm };
enum class Bottleneck { kCemSoft, kCemHard, kCbmScalar };

// One of the ablation configurations, named
// `<flat|hier>-<morph|bio|morph+bio>-<soft|hard>-<cem|cbm>`.
struct ModelVariant {
  Hierarchy hierarchy = Hierarchy::kHier;
  bool use_l1 = true;
  bool use_l2 = true;
  Residual residual = Residual::kSoft;
  Encoding encoding = Encoding::kCem;

  Bottleneck bottleneck() const;
  // gamma_res: 1 for the soft CEM bottleneck, 0 otherwise.
  double residual_gate() const { return bottleneck() == Bottleneck::kCemSoft ? 1.0 : 0.0; }
  // The heavy class-balancing recipe used with strict bottlenecks.
  bool balanced_recipe() const { return residual == Residual::kHard; }
  bool l2_conditions_on_l1() const { return hierarchy == Hierarchy::kHier && use_l1 && use_l2; }

  // Throws ConfigError on an invalid combination.
  void validate() const;
  std::string name() const;
  static ModelVariant parse(std::string_view name);

  bool operator==(const ModelVariant&) const = default;
};

}  // namespace cmoe
