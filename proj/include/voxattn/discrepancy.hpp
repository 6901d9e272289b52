#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "voxattn/signals.hpp"

namespace voxattn {

inline constexpr int kDefaultHistogramBins = 50;

struct NormalizedCumulativeHistogram {
  std::string signal;  // "occupancy", "position", "color" or "normal"
  double voxel_size = 0.0;
  int window_size = 0;
  std::vector<double> bin_edges;   // bins + 1 uniform edges over [0, 1]
  std::vector<double> cumulative;  // fraction of samples at or below each bin
  std::int64_t samples = 0;

  int bins() const { return static_cast<int>(cumulative.size()); }
  /// Mass of bin i (difference of consecutive cumulative values).
  double mass(int bin) const;
  std::string to_json() const;
  static NormalizedCumulativeHistogram from_json(const std::string& text);
};

/// Uniform-bin counter over [0, 1]; values above 1 land in the last bin.
class Histogram {
 public:
  explicit Histogram(int bins = kDefaultHistogramBins);
  static int bin_of(double value, int bins);
  void add(double value);
  void merge(const Histogram& other);
  std::int64_t total() const { return total_; }
  const std::vector<std::int64_t>& counts() const { return counts_; }
  /// Throws EmptyInputError without samples.
  NormalizedCumulativeHistogram normalize(std::string signal, double voxel_size, int window_size) const;

 private:
  std::vector<std::int64_t> counts_;
  std::int64_t total_ = 0;
};

/// Bin-wise mean of per-scene histograms with equal weights.
NormalizedCumulativeHistogram average_histograms(const std::vector<NormalizedCumulativeHistogram>& scenes);

/// Occupied fraction of every nonempty window. With `interior_only`, windows not fully
/// inside the occupied coordinate range are skipped on every axis whose range spans at
/// least one window.
std::vector<double> window_occupancy_ratios(const PointCloud& cloud, double voxel_size, int window_size,
                                            bool interior_only = false);
NormalizedCumulativeHistogram window_occupancy_stats(const PointCloud& cloud, double voxel_size, int window_size,
                                                     int bins = kDefaultHistogramBins, bool interior_only = false);

/// (1 / 2N^2) * sum over ordered pairs of |s(x) - s(y)|^2, rows of `samples` are s(x).
double pairwise_variance(const Mat& samples);
/// (1 / N) * sum of |s(x) - mean|^2.
double centroid_variance(const Mat& samples);

/// Largest attainable pairwise variance of `signal`, used to map variances into [0, 1].
double variance_normalizer(Signal signal, int window_size, double voxel_size);

/// Normalized per-window variance of one signal over voxel representatives.
std::vector<double> window_signal_variances(const PointCloud& cloud, double voxel_size, int window_size, Signal signal,
                                            bool interior_only = false);
NormalizedCumulativeHistogram signal_variance_stats(const PointCloud& cloud, double voxel_size, int window_size,
                                                    Signal signal, int bins = kDefaultHistogramBins,
                                                    bool interior_only = false);

struct DivergenceReport {
  double err_source = 0.0;
  double err_target = 0.0;
  double d_h = 0.0;
  bool worse_than_chance = false;  // err_source + err_target > 1
};

/// 2 * (1 - (err_source + err_target)). Throws RangeError outside [0, 1].
DivergenceReport h_divergence(double err_source, double err_target);

/// Points inside an axis-aligned cube of edge `edge` whose origin is uniform inside the
/// cloud's bounding box (shrunk so the cube fits where possible).
PointCloud crop_cube(const PointCloud& cloud, double edge, std::mt19937_64& rng);

struct ClassifierOptions {
  double voxel_size = 0.1;
  int window_size = 5;
  int bins = 10;
  int iterations = 400;
  double learning_rate = 0.5;
  double l2 = 1e-3;
};

/// Occupancy NCH followed by variance NCHs of every signal in `shared`.
Vec crop_features(const PointCloud& crop, SignalMask shared, const ClassifierOptions& options);

struct ClassifierResult {
  Vec weights;  // over standardized features
  double bias = 0.0;
  Vec center;
  Vec scale;
  int train_source = 0;
  int train_target = 0;
  DivergenceReport report;  // held-out errors
};

/// Logistic regression (source +1, target -1) trained by full-batch gradient descent on
/// 80% of each source's crops and evaluated on the remaining 20%. Needs >= 20 crops per
/// source (DataError otherwise). Swapping the two sources swaps the errors exactly.
ClassifierResult baseline_domain_classifier(const std::vector<PointCloud>& source, const std::vector<PointCloud>& target,
                                            std::uint64_t seed, const ClassifierOptions& options = {});

inline constexpr int kMinCropsPerSource = 20;

}  // namespace voxattn
