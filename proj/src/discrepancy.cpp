#include "voxattn/discrepancy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "voxattn/errors.hpp"
#include "voxattn/voxel_grid.hpp"

namespace voxattn {

using json = nlohmann::json;

// ---------------------------------------------------------------------------------------
// Histograms

double NormalizedCumulativeHistogram::mass(int bin) const {
  const auto i = static_cast<std::size_t>(bin);
  return bin == 0 ? cumulative[0] : cumulative[i] - cumulative[i - 1];
}

std::string NormalizedCumulativeHistogram::to_json() const {
  json j;
  j["format_version"] = 1;
  j["signal"] = signal;
  j["voxel_size"] = voxel_size;
  j["window_size"] = window_size;
  j["samples"] = samples;
  j["bin_edges"] = bin_edges;
  j["cumulative"] = cumulative;
  return j.dump(2);
}

NormalizedCumulativeHistogram NormalizedCumulativeHistogram::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    NormalizedCumulativeHistogram h;
    h.signal = j.at("signal").get<std::string>();
    h.voxel_size = j.at("voxel_size").get<double>();
    h.window_size = j.at("window_size").get<int>();
    h.samples = j.value("samples", std::int64_t{0});
    h.bin_edges = j.at("bin_edges").get<std::vector<double>>();
    h.cumulative = j.at("cumulative").get<std::vector<double>>();
    if (h.bin_edges.size() != h.cumulative.size() + 1) throw ParseError("histogram edges and values disagree");
    return h;
  } catch (const json::exception& e) {
    throw ParseError(std::string("histogram: ") + e.what());
  }
}

Histogram::Histogram(int bins) {
  if (bins < 1) throw RangeError("histogram needs at least one bin");
  counts_.assign(static_cast<std::size_t>(bins), 0);
}

int Histogram::bin_of(double value, int bins) {
  if (!(value > 0.0)) return 0;
  const double scaled = std::floor(value * bins);
  return scaled >= bins ? bins - 1 : static_cast<int>(scaled);
}

void Histogram::add(double value) {
  ++counts_[static_cast<std::size_t>(bin_of(value, static_cast<int>(counts_.size())))];
  ++total_;
}

void Histogram::merge(const Histogram& other) {
  if (other.counts_.size() != counts_.size()) throw ShapeError("cannot merge histograms with different bin counts");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

NormalizedCumulativeHistogram Histogram::normalize(std::string signal, double voxel_size, int window_size) const {
  if (total_ == 0) throw EmptyInputError("histogram has no samples");
  NormalizedCumulativeHistogram h;
  h.signal = std::move(signal);
  h.voxel_size = voxel_size;
  h.window_size = window_size;
  h.samples = total_;
  const int bins = static_cast<int>(counts_.size());
  for (int i = 0; i <= bins; ++i) h.bin_edges.push_back(static_cast<double>(i) / bins);
  std::int64_t running = 0;
  for (auto c : counts_) {
    running += c;
    h.cumulative.push_back(static_cast<double>(running) / static_cast<double>(total_));
  }
  h.cumulative.back() = 1.0;
  return h;
}

NormalizedCumulativeHistogram average_histograms(const std::vector<NormalizedCumulativeHistogram>& scenes) {
  if (scenes.empty()) throw EmptyInputError("no histograms to average");
  NormalizedCumulativeHistogram out = scenes.front();
  out.samples = 0;
  std::fill(out.cumulative.begin(), out.cumulative.end(), 0.0);
  for (const auto& s : scenes) {
    if (s.cumulative.size() != out.cumulative.size()) throw ShapeError("cannot average histograms with different bins");
    for (std::size_t i = 0; i < s.cumulative.size(); ++i) out.cumulative[i] += s.cumulative[i];
    out.samples += s.samples;
  }
  for (auto& c : out.cumulative) c /= static_cast<double>(scenes.size());
  out.cumulative.back() = 1.0;
  return out;
}

// ---------------------------------------------------------------------------------------
// Windows

namespace {

struct WindowedGrid {
  SparseVoxelGrid grid;
  WindowPartition partition;
};

WindowedGrid window_grid(const PointCloud& cloud, double voxel_size, int window_size) {
  if (window_size < 1) throw RangeError("window size must be positive");
  WindowedGrid w{voxelize(cloud, voxel_size), {}};
  w.partition = partition_windows(w.grid, window_size, false);
  return w;
}

// Windows hanging over the edge of the occupied range on some axis that spans a window.
std::vector<bool> interior_windows(const WindowedGrid& w) {
  VoxelCoord lo = w.grid.cell(0).coord;
  VoxelCoord hi = lo;
  for (const auto& c : w.grid.cells())
    for (std::size_t a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], c.coord[a]);
      hi[a] = std::max(hi[a], c.coord[a]);
    }
  const int m = w.partition.window_size;
  std::vector<bool> keep;
  for (const auto& win : w.partition.windows) {
    bool inside = true;
    for (std::size_t a = 0; a < 3; ++a) {
      if (hi[a] - lo[a] + 1 < m) continue;
      const int first = win.coord[a] * m;
      if (first < lo[a] || first + m - 1 > hi[a]) inside = false;
    }
    keep.push_back(inside);
  }
  return keep;
}

}  // namespace

std::vector<double> window_occupancy_ratios(const PointCloud& cloud, double voxel_size, int window_size,
                                            bool interior_only) {
  const WindowedGrid w = window_grid(cloud, voxel_size, window_size);
  const std::vector<bool> keep = interior_only ? interior_windows(w) : std::vector<bool>(w.partition.windows.size(), true);
  const double volume = static_cast<double>(window_size) * window_size * window_size;
  std::vector<double> out;
  for (std::size_t i = 0; i < w.partition.windows.size(); ++i)
    if (keep[i]) out.push_back(static_cast<double>(w.partition.windows[i].members.size()) / volume);
  return out;
}

NormalizedCumulativeHistogram window_occupancy_stats(const PointCloud& cloud, double voxel_size, int window_size, int bins,
                                                     bool interior_only) {
  Histogram h(bins);
  for (double r : window_occupancy_ratios(cloud, voxel_size, window_size, interior_only)) h.add(r);
  return h.normalize("occupancy", voxel_size, window_size);
}

// ---------------------------------------------------------------------------------------
// Variance

double pairwise_variance(const Mat& s) {
  const auto n = s.rows();
  if (n == 0) throw EmptyWindowError("variance of an empty window");
  double sum = 0.0;
  for (Eigen::Index x = 0; x < n; ++x)
    for (Eigen::Index y = 0; y < n; ++y) sum += (s.row(x) - s.row(y)).squaredNorm();
  return sum / (2.0 * static_cast<double>(n) * static_cast<double>(n));
}

double centroid_variance(const Mat& s) {
  const auto n = s.rows();
  if (n == 0) throw EmptyWindowError("variance of an empty window");
  const Eigen::RowVectorXd mean = s.colwise().mean();
  return (s.rowwise() - mean).rowwise().squaredNorm().sum() / static_cast<double>(n);
}

double variance_normalizer(Signal signal, int window_size, double voxel_size) {
  switch (signal) {
    case Signal::position: {
      const double span = (window_size - 1) * voxel_size;
      return 3.0 * span * span / 4.0;
    }
    case Signal::color: return 3.0 / 4.0;
    case Signal::normal: return 3.0;
  }
  throw InternalError("unknown signal");
}

std::vector<double> window_signal_variances(const PointCloud& cloud, double voxel_size, int window_size, Signal signal,
                                            bool interior_only) {
  if (!cloud.mask.has(signal))
    throw SignalMaskError("cloud signals '" + cloud.mask.str() + "' lack " + std::string(signal_name(signal)));
  const WindowedGrid w = window_grid(cloud, voxel_size, window_size);
  const std::vector<bool> keep = interior_only ? interior_windows(w) : std::vector<bool>(w.partition.windows.size(), true);
  const double norm = variance_normalizer(signal, window_size, voxel_size);
  const int offset = signal_offset(signal);
  std::vector<double> out;
  Mat s;
  for (std::size_t i = 0; i < w.partition.windows.size(); ++i) {
    if (!keep[i]) continue;
    const auto& members = w.partition.windows[i].members;
    s.resize(static_cast<Eigen::Index>(members.size()), 3);
    for (std::size_t r = 0; r < members.size(); ++r) {
      const auto v = signal_vector(w.grid.cell(members[r]).representative);
      for (int c = 0; c < 3; ++c) s(static_cast<Eigen::Index>(r), c) = v[static_cast<std::size_t>(offset + c)];
    }
    out.push_back(norm > 0.0 ? std::min(pairwise_variance(s) / norm, 1.0) : 0.0);
  }
  return out;
}

NormalizedCumulativeHistogram signal_variance_stats(const PointCloud& cloud, double voxel_size, int window_size,
                                                    Signal signal, int bins, bool interior_only) {
  Histogram h(bins);
  for (double v : window_signal_variances(cloud, voxel_size, window_size, signal, interior_only)) h.add(v);
  return h.normalize(std::string(signal_name(signal)), voxel_size, window_size);
}

// ---------------------------------------------------------------------------------------
// H-divergence

DivergenceReport h_divergence(double err_source, double err_target) {
  auto check = [](double e, const char* which) {
    if (!(e >= 0.0 && e <= 1.0)) throw RangeError(std::string(which) + " error must lie in [0, 1]");
  };
  check(err_source, "source");
  check(err_target, "target");
  DivergenceReport r;
  r.err_source = err_source;
  r.err_target = err_target;
  r.d_h = 2.0 * (1.0 - (err_source + err_target));
  r.worse_than_chance = err_source + err_target > 1.0;
  return r;
}

PointCloud crop_cube(const PointCloud& cloud, double edge, std::mt19937_64& rng) {
  if (cloud.empty()) throw EmptyInputError("cannot crop an empty cloud");
  if (!(edge > 0.0)) throw RangeError("crop edge must be positive");
  Vec3 lo = cloud.points.front().position;
  Vec3 hi = lo;
  for (const auto& p : cloud.points)
    for (std::size_t a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p.position[a]);
      hi[a] = std::max(hi[a], p.position[a]);
    }
  Vec3 origin{};
  for (std::size_t a = 0; a < 3; ++a) {
    const double top = std::max(lo[a], hi[a] - edge);
    origin[a] = std::uniform_real_distribution<double>(lo[a], std::nextafter(top, std::numeric_limits<double>::max()))(rng);
  }
  PointCloud out;
  out.mask = cloud.mask;
  out.domain_id = cloud.domain_id;
  for (const auto& p : cloud.points) {
    bool inside = true;
    for (std::size_t a = 0; a < 3; ++a) inside = inside && p.position[a] >= origin[a] && p.position[a] < origin[a] + edge;
    if (inside) out.points.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------------------
// Baseline classifier

Vec crop_features(const PointCloud& crop, SignalMask shared, const ClassifierOptions& o) {
  std::vector<NormalizedCumulativeHistogram> parts;
  parts.push_back(window_occupancy_stats(crop, o.voxel_size, o.window_size, o.bins));
  for (Signal s : {Signal::position, Signal::color, Signal::normal})
    if (shared.has(s)) parts.push_back(signal_variance_stats(crop, o.voxel_size, o.window_size, s, o.bins));
  Vec f(static_cast<Eigen::Index>(parts.size()) * o.bins);
  Eigen::Index k = 0;
  for (const auto& h : parts)
    for (double c : h.cumulative) f(k++) = c;
  return f;
}

namespace {

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Depends only on the seed and the crop count, so relabeling the sources keeps the splits.
Split split_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (n + 1)));
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t test = n / 5;
  return {std::vector<std::size_t>(idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(test)),
          std::vector<std::size_t>(idx.end() - static_cast<std::ptrdiff_t>(test), idx.end())};
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

ClassifierResult baseline_domain_classifier(const std::vector<PointCloud>& source, const std::vector<PointCloud>& target,
                                            std::uint64_t seed, const ClassifierOptions& o) {
  for (const auto* set : {&source, &target})
    if (set->size() < static_cast<std::size_t>(kMinCropsPerSource))
      throw DataError("the classifier needs at least " + std::to_string(kMinCropsPerSource) + " crops per source, got " +
                      std::to_string(set->size()));
  SignalMask shared = SignalMask::pcn();
  for (const auto* set : {&source, &target})
    for (const auto& c : *set) shared = SignalMask(static_cast<std::uint8_t>(shared.bits() & c.mask.bits()));

  auto featurize = [&](const std::vector<PointCloud>& crops) {
    std::vector<Vec> out;
    for (const auto& c : crops) out.push_back(crop_features(c, shared, o));
    return out;
  };
  const std::vector<Vec> fs = featurize(source);
  const std::vector<Vec> ft = featurize(target);
  const Split ss = split_indices(fs.size(), seed);
  const Split st = split_indices(ft.size(), seed);
  const Eigen::Index dim = fs.front().size();

  auto mean_of = [&](const std::vector<Vec>& f, const std::vector<std::size_t>& idx) {
    Vec m = Vec::Zero(dim);
    for (auto i : idx) m += f[i];
    return Vec(m / static_cast<double>(idx.size()));
  };
  auto var_about = [&](const std::vector<Vec>& f, const std::vector<std::size_t>& idx, const Vec& c) {
    Vec v = Vec::Zero(dim);
    for (auto i : idx) v += (f[i] - c).cwiseAbs2();
    return Vec(v / static_cast<double>(idx.size()));
  };

  ClassifierResult r;
  r.train_source = static_cast<int>(ss.train.size());
  r.train_target = static_cast<int>(st.train.size());
  r.center = (mean_of(fs, ss.train) + mean_of(ft, st.train)) / 2.0;
  r.scale = ((var_about(fs, ss.train, r.center) + var_about(ft, st.train, r.center)) / 2.0).cwiseSqrt();
  for (Eigen::Index k = 0; k < dim; ++k)
    if (r.scale(k) < 1e-12) r.scale(k) = 1.0;
  auto standardize = [&](const Vec& x) { return Vec((x - r.center).cwiseQuotient(r.scale)); };

  std::vector<Vec> xs, xt;
  for (auto i : ss.train) xs.push_back(standardize(fs[i]));
  for (auto i : st.train) xt.push_back(standardize(ft[i]));

  r.weights = Vec::Zero(dim);
  r.bias = 0.0;
  for (int it = 0; it < o.iterations; ++it) {
    // Source samples carry label +1, target samples -1; each side is averaged separately.
    Vec gs = Vec::Zero(dim), gt = Vec::Zero(dim);
    double bs = 0.0, bt = 0.0;
    for (const Vec& x : xs) {
      const double s = -sigmoid(-(r.weights.dot(x) + r.bias));
      gs += s * x;
      bs += s;
    }
    for (const Vec& x : xt) {
      const double s = sigmoid(r.weights.dot(x) + r.bias);
      gt += s * x;
      bt += s;
    }
    const double ns = static_cast<double>(xs.size()), nt = static_cast<double>(xt.size());
    const Vec grad = (gs / ns + gt / nt) / 2.0 + o.l2 * r.weights;
    const double gbias = (bs / ns + bt / nt) / 2.0;
    r.weights -= o.learning_rate * grad;
    r.bias -= o.learning_rate * gbias;
  }

  // A zero score is wrong for either side.
  auto error = [&](const std::vector<Vec>& f, const std::vector<std::size_t>& idx, double sign) {
    std::size_t wrong = 0;
    for (auto i : idx)
      if (sign * (r.weights.dot(standardize(f[i])) + r.bias) <= 0.0) ++wrong;
    return static_cast<double>(wrong) / static_cast<double>(idx.size());
  };
  r.report = h_divergence(error(fs, ss.test, 1.0), error(ft, st.test, -1.0));
  return r;
}

}  // namespace voxattn
