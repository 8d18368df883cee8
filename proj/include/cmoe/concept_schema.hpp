#pragma once

#include <array>
#include <string_view>

namespace cmoe::schema {

// Level 1: ordinal morphology concepts, one-hot per category.
inline constexpr int kNumL1 = 5;
inline constexpr std::array<int, kNumL1> kL1Categories{4, 3, 5, 4, 3};
inline constexpr int kNumL1Targets = 19;
inline constexpr std::array<std::string_view, kNumL1> kL1Names{
    "cellularity", "pleomorphism", "mitotic", "necrosis", "rosenthal"};

// Level 2: binary biomarker concepts.
inline constexpr int kNumL2 = 5;
inline constexpr std::array<std::string_view, kNumL2> kL2Names{
    "GFAP", "Synaptophysin", "INI1", "H3K27M", "ALK1"};

// Column offset of L1 concept k inside the 19-wide one-hot layout.
constexpr int l1_offset(int k) {
  int off = 0;
  for (int i = 0; i < k; ++i) off += kL1Categories[static_cast<size_t>(i)];
  return off;
}

static_assert(l1_offset(kNumL1) == kNumL1Targets);

}  // namespace cmoe::schema
