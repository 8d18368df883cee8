#include "cmoe/metrics.hpp"

#include "cmoe/errors.hpp"

#include <algorithm>
#include <numeric>

namespace cmoe {

F1Report macro_f1(std::span<const int> predictions, std::span<const int> labels, int num_classes) {
  if (labels.empty()) throw DataError("macro_f1: empty evaluation set");
  if (predictions.size() != labels.size()) throw DataError("macro_f1: size mismatch");
  std::vector<int> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  int correct = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || y >= num_classes || p < 0 || p >= num_classes) throw DataError("macro_f1: class out of range");
    if (y == p) {
      ++tp[y];
      ++correct;
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  F1Report r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < num_classes; ++c) {
    ClassReport cr;
    cr.support = tp[c] + fn[c];
    cr.predicted = tp[c] + fp[c];
    cr.included = cr.support > 0 || cr.predicted > 0;
    if (cr.predicted > 0) cr.precision = static_cast<double>(tp[c]) / cr.predicted;
    if (cr.support > 0) cr.recall = static_cast<double>(tp[c]) / cr.support;
    const int denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom > 0) cr.f1 = 2.0 * tp[c] / denom;
    if (cr.included) {
      sum += cr.f1;
      ++used;
    }
    r.per_class.push_back(cr);
  }
  r.macro_f1 = sum / used;
  return r;
}

std::optional<double> auroc(std::span<const double> scores, std::span<const int> targets, std::span<const int> mask) {
  if (scores.size() != targets.size() || (!mask.empty() && mask.size() != scores.size())) {
    throw DataError("auroc: size mismatch");
  }
  std::vector<double> pos, neg;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!mask.empty() && mask[i] <= 0) continue;
    (targets[i] ? pos : neg).push_back(scores[i]);
  }
  if (pos.empty() || neg.empty()) return std::nullopt;
  std::sort(neg.begin(), neg.end());
  double wins = 0.0;
  for (double s : pos) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), s);
    const auto hi = std::upper_bound(neg.begin(), neg.end(), s);
    wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(static_cast<size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c)
      if (m(r, c) > m(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace cmoe
