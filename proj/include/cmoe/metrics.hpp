#pragma once

#include "cmoe/autodiff.hpp"

#include <optional>
#include <span>
#include <vector>

namespace cmoe {

struct ClassReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int support = 0;
  int predicted = 0;
  // False when the class has neither support nor predictions.
  bool included = true;
};

struct F1Report {
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::vector<ClassReport> per_class;
};

// Unweighted mean of per-class F1 over classes that occur in the labels or
// the predictions. Throws DataError on an empty or mismatched input.
F1Report macro_f1(std::span<const int> predictions, std::span<const int> labels, int num_classes);

// Mann-Whitney AUROC over observed entries (mask > 0); ties count one half.
// Missing unless at least one positive and one negative are observed.
std::optional<double> auroc(std::span<const double> scores, std::span<const int> targets,
                            std::span<const int> mask = {});

// Row-wise argmax; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Matrix& m);

}  // namespace cmoe
