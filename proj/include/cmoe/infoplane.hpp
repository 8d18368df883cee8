#pragma once

// Gaussian parametric information plane over per-epoch feature dumps: PCA
// pre-reduction with effective-rank detection, regularized entropies, and
// trajectory truncation, monotonic filtering and smoothing.

#include "cmoe/autodiff.hpp"
#include "cmoe/trainer.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cmoe {

inline constexpr double kMiEps = 1e-3;

struct PcaResult {
  Matrix reduced;      // N x k_used
  Vector eigenvalues;  // descending, all d of them
  int d = 0;
  int k = 0;  // min(20, d, N / 4)
  int effective_rank = 0;
  int k_used = 0;
};

// Throws DataError when N < 8.
PcaResult pca_reduce(const Matrix& x, double eps = kMiEps);

// Maximum-likelihood covariance (divides by N).
Matrix ml_covariance(const Matrix& x);

// 0.5 ln((2 pi e)^k det(cov + eps I)), clamped at 0.
double gaussian_entropy(const Matrix& cov, double eps = kMiEps);

struct MiEstimate {
  double h_c = 0.0;
  double i_cy = 0.0;
  // Classes with fewer than 2 samples; their conditional entropy uses the
  // pooled covariance.
  int degenerate_classes = 0;
};

MiEstimate gaussian_mi(const Matrix& x, std::span<const int> labels, double eps = kMiEps);

struct MIPoint {
  int epoch = 0;
  double h_c = 0.0;
  double i_cy = 0.0;
  int d = 0;
  int k_used = 0;
  int n = 0;
};

enum class TrajectoryKind { kCem, kCbm, kLatent };

std::string_view kind_name(TrajectoryKind k);
TrajectoryKind parse_kind(std::string_view name);

// 1-d Gaussian filter with reflected borders, kernel radius round(4 sigma).
std::vector<double> gaussian_smooth(std::span<const double> x, double sigma);

// Keeps points up to the first peak of I_CY plus `buffer` epochs.
std::vector<MIPoint> truncate_at_peak(std::span<const MIPoint> pts, int buffer = 3);
// Keeps points where both coordinates strictly exceed the last kept point.
std::vector<MIPoint> monotonic_filter(std::span<const MIPoint> pts);

// Truncation for CEM and latent kinds, the monotonic filter for CEM, then
// smoothing of both coordinates.
std::vector<MIPoint> trajectory_postprocess(std::span<const MIPoint> pts, TrajectoryKind kind, double sigma = 2.0);

enum class TrackedFeature { kZ, kB1, kB2, kP1, kP2 };

std::string_view feature_name(TrackedFeature f);
TrackedFeature parse_feature(std::string_view name);

struct PlaneResult {
  std::vector<MIPoint> points;
  std::vector<int> missing_epochs;  // gaps inside the observed epoch range
};

// Pools the records of `split` ("" for every split) across folds per epoch.
PlaneResult build_plane(std::span<const EpochDump> dumps, TrackedFeature feature, const std::string& split = "test",
                        double eps = kMiEps);

std::string plane_csv(std::span<const MIPoint> pts, TrajectoryKind kind);

}  // namespace cmoe
