#include "cmoe/infoplane.hpp"

#include "cmoe/errors.hpp"
#include "cmoe/format.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

namespace cmoe {

namespace {

// Row order that does not depend on the input order, so sums are exact
// under permutation.
std::vector<Eigen::Index> canonical_rows(const Matrix& x, std::span<const int> labels) {
  std::vector<Eigen::Index> idx(static_cast<size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (x(a, c) != x(b, c)) return x(a, c) < x(b, c);
    if (!labels.empty() && labels[a] != labels[b]) return labels[a] < labels[b];
    return false;
  });
  return idx;
}

Matrix take_rows(const Matrix& x, const std::vector<Eigen::Index>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

const std::vector<double>& feature_of(const DumpRecord& r, TrackedFeature f) {
  switch (f) {
    case TrackedFeature::kZ: return r.z;
    case TrackedFeature::kB1: return r.b1;
    case TrackedFeature::kB2: return r.b2;
    case TrackedFeature::kP1: return r.p1;
    case TrackedFeature::kP2: return r.p2;
  }
  throw std::logic_error("unknown feature");
}

constexpr std::array<std::string_view, 3> kKindNames{"cem", "cbm", "latent"};
constexpr std::array<std::string_view, 5> kFeatureNames{"z", "b1", "b2", "p1", "p2"};

}  // namespace

Matrix ml_covariance(const Matrix& x) {
  if (x.rows() == 0) throw DataError("ml_covariance: no samples");
  const Matrix c = x.rowwise() - x.colwise().mean();
  return (c.transpose() * c) / static_cast<double>(x.rows());
}

PcaResult pca_reduce(const Matrix& x, double eps) {
  const auto n = x.rows();
  if (n < 8) throw DataError("pca_reduce needs at least 8 samples, got " + std::to_string(n));
  PcaResult r;
  r.d = static_cast<int>(x.cols());
  const Matrix sorted = take_rows(x, canonical_rows(x, {}));
  const RowVector mean = sorted.colwise().mean();
  const Matrix centered = sorted.rowwise() - mean;
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  if (es.info() != Eigen::Success) throw DataError("pca_reduce: eigendecomposition failed");
  std::vector<Eigen::Index> order(static_cast<size_t>(r.d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return es.eigenvalues()(a) > es.eigenvalues()(b); });
  r.eigenvalues.resize(r.d);
  for (int i = 0; i < r.d; ++i) r.eigenvalues(i) = es.eigenvalues()(order[i]);
  r.effective_rank = static_cast<int>((r.eigenvalues.array() > 10.0 * eps).count());
  r.k = std::min({20, r.d, static_cast<int>(n / 4)});
  r.k_used = std::min(r.d, std::max(2, std::min(r.k, r.effective_rank)));
  Matrix basis(r.d, r.k_used);
  for (int i = 0; i < r.k_used; ++i) basis.col(i) = es.eigenvectors().col(order[i]);
  r.reduced = (x.rowwise() - mean) * basis;
  return r;
}

double gaussian_entropy(const Matrix& cov, double eps) {
  const auto k = cov.rows();
  if (k == 0 || cov.cols() != k) throw DataError("gaussian_entropy: covariance must be square and non-empty");
  const Matrix reg = cov + eps * Matrix::Identity(k, k);
  Eigen::LLT<Matrix> llt(reg);
  if (llt.info() != Eigen::Success) throw DataError("gaussian_entropy: covariance is not positive definite");
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  const double h = 0.5 * (static_cast<double>(k) * std::log(2.0 * std::numbers::pi * std::numbers::e) + logdet);
  return std::max(0.0, h);
}

MiEstimate gaussian_mi(const Matrix& x, std::span<const int> labels, double eps) {
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) throw DataError("gaussian_mi: label count mismatch");
  if (x.rows() == 0) throw DataError("gaussian_mi: no samples");
  const auto idx = canonical_rows(x, labels);
  const Matrix sorted = take_rows(x, idx);
  std::map<int, std::vector<Eigen::Index>> groups;
  for (size_t i = 0; i < idx.size(); ++i) groups[labels[idx[i]]].push_back(static_cast<Eigen::Index>(i));

  MiEstimate r;
  r.h_c = gaussian_entropy(ml_covariance(sorted), eps);
  const double n = static_cast<double>(x.rows());
  double cond = 0.0;
  for (const auto& [label, rows] : groups) {
    double h = r.h_c;
    if (rows.size() < 2) ++r.degenerate_classes;
    else h = gaussian_entropy(ml_covariance(take_rows(sorted, rows)), eps);
    cond += static_cast<double>(rows.size()) / n * h;
  }
  r.i_cy = std::max(0.0, r.h_c - cond);
  return r;
}

std::string_view kind_name(TrajectoryKind k) { return kKindNames[static_cast<size_t>(k)]; }

TrajectoryKind parse_kind(std::string_view name) {
  for (size_t i = 0; i < kKindNames.size(); ++i)
    if (kKindNames[i] == name) return static_cast<TrajectoryKind>(i);
  throw ConfigError("unknown trajectory kind '" + std::string(name) + "'");
}

std::string_view feature_name(TrackedFeature f) { return kFeatureNames[static_cast<size_t>(f)]; }

TrackedFeature parse_feature(std::string_view name) {
  for (size_t i = 0; i < kFeatureNames.size(); ++i)
    if (kFeatureNames[i] == name) return static_cast<TrackedFeature>(i);
  throw ConfigError("unknown tracked feature '" + std::string(name) + "'");
}

std::vector<double> gaussian_smooth(std::span<const double> x, double sigma) {
  const auto n = static_cast<long>(x.size());
  if (n <= 1 || sigma <= 0.0) return {x.begin(), x.end()};
  const long radius = static_cast<long>(4.0 * sigma + 0.5);
  std::vector<double> w(static_cast<size_t>(2 * radius + 1));
  double total = 0.0;
  for (long j = -radius; j <= radius; ++j) {
    w[static_cast<size_t>(j + radius)] = std::exp(-0.5 * static_cast<double>(j * j) / (sigma * sigma));
    total += w[static_cast<size_t>(j + radius)];
  }
  for (double& v : w) v /= total;
  auto reflect = [n](long i) {
    long m = i % (2 * n);
    if (m < 0) m += 2 * n;
    return m >= n ? 2 * n - 1 - m : m;
  };
  std::vector<double> out(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) {
    double s = 0.0;
    for (long j = -radius; j <= radius; ++j) s += w[static_cast<size_t>(j + radius)] * x[static_cast<size_t>(reflect(i + j))];
    out[static_cast<size_t>(i)] = s;
  }
  return out;
}

std::vector<MIPoint> truncate_at_peak(std::span<const MIPoint> pts, int buffer) {
  if (pts.empty()) return {};
  size_t peak = 0;
  for (size_t i = 1; i < pts.size(); ++i)
    if (pts[i].i_cy > pts[peak].i_cy) peak = i;
  const size_t keep = std::min(pts.size(), peak + static_cast<size_t>(buffer) + 1);
  return {pts.begin(), pts.begin() + static_cast<std::ptrdiff_t>(keep)};
}

std::vector<MIPoint> monotonic_filter(std::span<const MIPoint> pts) {
  std::vector<MIPoint> out;
  for (const MIPoint& p : pts) {
    if (out.empty() || (p.h_c > out.back().h_c && p.i_cy > out.back().i_cy)) out.push_back(p);
  }
  return out;
}

std::vector<MIPoint> trajectory_postprocess(std::span<const MIPoint> pts, TrajectoryKind kind, double sigma) {
  std::vector<MIPoint> out(pts.begin(), pts.end());
  if (kind != TrajectoryKind::kCbm) out = truncate_at_peak(out);
  if (kind == TrajectoryKind::kCem) out = monotonic_filter(out);
  std::vector<double> h, i;
  for (const MIPoint& p : out) {
    h.push_back(p.h_c);
    i.push_back(p.i_cy);
  }
  h = gaussian_smooth(h, sigma);
  i = gaussian_smooth(i, sigma);
  for (size_t k = 0; k < out.size(); ++k) {
    out[k].h_c = h[k];
    out[k].i_cy = i[k];
  }
  return out;
}

PlaneResult build_plane(std::span<const EpochDump> dumps, TrackedFeature feature, const std::string& split,
                        double eps) {
  struct Pool {
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
  };
  std::map<int, Pool> by_epoch;
  size_t width = 0;
  for (const EpochDump& d : dumps) {
    Pool& pool = by_epoch[d.epoch];
    for (const DumpRecord& r : d.records) {
      if (!split.empty() && r.split != split) continue;
      const auto& f = feature_of(r, feature);
      if (f.empty()) throw DataError("dumps carry no '" + std::string(feature_name(feature)) + "' feature");
      if (width == 0) width = f.size();
      if (f.size() != width) throw DataError("dump feature width changes across records");
      pool.rows.push_back(f);
      pool.labels.push_back(r.label);
    }
  }
  PlaneResult out;
  if (by_epoch.empty()) return out;
  for (int e = by_epoch.begin()->first; e <= by_epoch.rbegin()->first; ++e) {
    auto it = by_epoch.find(e);
    if (it == by_epoch.end() || it->second.rows.empty()) {
      out.missing_epochs.push_back(e);
      continue;
    }
    const Pool& pool = it->second;
    Matrix x(static_cast<Eigen::Index>(pool.rows.size()), static_cast<Eigen::Index>(width));
    for (size_t r = 0; r < pool.rows.size(); ++r)
      for (size_t c = 0; c < width; ++c) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = pool.rows[r][c];
    const PcaResult pca = pca_reduce(x, eps);
    const MiEstimate mi = gaussian_mi(pca.reduced, pool.labels, eps);
    out.points.push_back({e, mi.h_c, mi.i_cy, pca.d, pca.k_used, static_cast<int>(x.rows())});
  }
  return out;
}

std::string plane_csv(std::span<const MIPoint> pts, TrajectoryKind kind) {
  std::ostringstream os;
  os << "epoch,H_C,I_CY,k_prime,N,kind\n";
  for (const MIPoint& p : pts) {
    os << p.epoch << ',' << format_double(p.h_c) << ',' << format_double(p.i_cy) << ',' << p.k_used << ',' << p.n
       << ',' << kind_name(kind) << '\n';
  }
  return os.str();
}

}  // namespace cmoe
