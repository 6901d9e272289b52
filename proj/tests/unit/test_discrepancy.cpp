#include <doctest.h>

#include <cmath>
#include <random>

#include "voxattn/discrepancy.hpp"
#include "voxattn/errors.hpp"
#include "voxattn/synthetic.hpp"

using namespace voxattn;

namespace {

PointCloud block(int side, double vs, Vec3 origin = {0, 0, 0}) {
  PointCloud pc;
  pc.mask = SignalMask::pc();
  for (int x = 0; x < side; ++x)
    for (int y = 0; y < side; ++y)
      for (int z = 0; z < side; ++z)
        pc.points.push_back({{origin[0] + (x + 0.5) * vs, origin[1] + (y + 0.5) * vs, origin[2] + (z + 0.5) * vs},
                             Vec3{0.3, 0.3, 0.3},
                             {}});
  return pc;
}

void check_monotone(const NormalizedCumulativeHistogram& h) {
  for (std::size_t i = 1; i < h.cumulative.size(); ++i) CHECK(h.cumulative[i] >= h.cumulative[i - 1]);
  CHECK(h.cumulative.front() >= 0.0);
  CHECK(std::abs(h.cumulative.back() - 1.0) <= 1e-12);
  CHECK(h.bin_edges.size() == h.cumulative.size() + 1);
}

}  // namespace

TEST_CASE("occupancy ratios") {
  const auto full = window_occupancy_stats(block(10, 0.02), 0.02, 5);
  check_monotone(full);
  CHECK(full.samples == 8);
  CHECK(full.mass(full.bins() - 1) == 1.0);

  PointCloud one;
  one.points.push_back({{0.01, 0.01, 0.01}, {}, {}});
  const auto r = window_occupancy_ratios(one, 0.02, 5);
  REQUIRE(r.size() == 1);
  CHECK(r[0] == 1.0 / 125.0);
  CHECK_THROWS_AS(window_occupancy_stats(PointCloud{}, 0.02, 5), EmptyInputError);
}

TEST_CASE("plane windows hold 25 voxels") {
  const PointCloud plane = generate_plane_scene(1.0, 0.02, Axis::z);
  const auto interior = window_occupancy_ratios(plane, 0.02, 5, true);
  CHECK(interior.size() == 100);
  for (double r : interior) CHECK(r == 25.0 / 125.0);
  // Every window, edges included, is at most that full.
  for (double r : window_occupancy_ratios(plane, 0.02, 5)) CHECK(r <= 0.2);
  const auto h = window_occupancy_stats(plane, 0.02, 5, 50, true);
  check_monotone(h);
  CHECK(h.mass(Histogram::bin_of(0.2, 50)) == 1.0);
}

TEST_CASE("occupancy is invariant under integer voxel translation") {
  NoisyVolumeOptions o;
  o.count = 3000;
  o.seed = 2;
  const PointCloud pc = generate_noisy_volume_scene(o);
  PointCloud moved = pc;
  for (auto& p : moved.points) {
    p.position[0] += 0.1 * 5;
    p.position[2] -= 0.1 * 10;
  }
  const auto a = window_occupancy_stats(pc, 0.1, 5), b = window_occupancy_stats(moved, 0.1, 5);
  CHECK(a.cumulative == b.cumulative);
}

TEST_CASE("pairwise variance") {
  Mat two(2, 3);
  two << 0, 0, 0, 1, 0, 0;
  CHECK(pairwise_variance(two) == 0.25);
  Mat same = Mat::Constant(4, 3, 0.7);
  CHECK(pairwise_variance(same) == 0.0);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  Mat s(30, 3);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = g(rng);
  const double v = pairwise_variance(s);
  CHECK(v == doctest::Approx(centroid_variance(s)).epsilon(1e-12));
  Mat shifted = s.rowwise() + Eigen::RowVector3d(5, -2, 9);
  CHECK(pairwise_variance(shifted) == doctest::Approx(v).epsilon(1e-12));
  Mat reversed = s.colwise().reverse();
  CHECK(pairwise_variance(reversed) == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("variance statistics") {
  CHECK(variance_normalizer(Signal::position, 5, 0.02) == doctest::Approx(3.0 * 0.08 * 0.08 / 4.0));
  CHECK(variance_normalizer(Signal::color, 5, 0.02) == 0.75);
  CHECK(variance_normalizer(Signal::normal, 5, 0.02) == 3.0);

  const auto flat = signal_variance_stats(block(10, 0.02), 0.02, 5, Signal::color);
  check_monotone(flat);
  CHECK(flat.cumulative.front() == 1.0);

  CHECK_THROWS_AS(signal_variance_stats(block(4, 0.02), 0.02, 5, Signal::normal), SignalMaskError);

  NoisyVolumeOptions o;
  o.count = 2000;
  o.box = {0.3, 0.3, 0.3};
  const PointCloud noisy = generate_noisy_volume_scene(o);
  for (Signal s : {Signal::position, Signal::color, Signal::normal}) {
    const auto v = window_signal_variances(noisy, 0.02, 5, s);
    for (double x : v) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
    check_monotone(signal_variance_stats(noisy, 0.02, 5, s));
  }
}

TEST_CASE("histogram json and averaging") {
  Histogram h(4);
  for (double v : {0.1, 0.3, 0.6, 1.0, 1.7}) h.add(v);
  const auto n = h.normalize("occupancy", 0.02, 5);
  CHECK(n.cumulative == std::vector<double>{0.2, 0.4, 0.6, 1.0});
  const auto back = NormalizedCumulativeHistogram::from_json(n.to_json());
  CHECK(back.cumulative == n.cumulative);
  CHECK(back.bin_edges == n.bin_edges);
  CHECK(back.signal == "occupancy");

  Histogram other(4);
  other.add(0.0);
  const auto avg = average_histograms({n, other.normalize("occupancy", 0.02, 5)});
  CHECK(avg.cumulative[0] == doctest::Approx(0.6));
  CHECK(avg.cumulative[3] == 1.0);
  CHECK_THROWS_AS(Histogram(4).normalize("x", 1, 1), EmptyInputError);
}

TEST_CASE("h-divergence formula") {
  CHECK(h_divergence(0.0, 0.0).d_h == 2.0);
  CHECK(h_divergence(0.5, 0.5).d_h == 0.0);
  CHECK(h_divergence(0.001, 0.002).d_h == doctest::Approx(1.994).epsilon(1e-12));
  const auto worse = h_divergence(0.8, 0.6);
  CHECK(worse.worse_than_chance);
  CHECK(worse.d_h < 0.0);
  CHECK_FALSE(h_divergence(0.2, 0.3).worse_than_chance);
  CHECK_THROWS_AS(h_divergence(-0.1, 0.0), RangeError);
  CHECK_THROWS_AS(h_divergence(0.0, 1.5), RangeError);
  CHECK_THROWS_AS(h_divergence(std::nan(""), 0.0), RangeError);
}

namespace {

std::vector<PointCloud> crops_of(const PointCloud& scene, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<PointCloud> out;
  while (static_cast<int>(out.size()) < n) {
    PointCloud c = crop_cube(scene, 5.0, rng);
    if (!c.empty()) out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

TEST_CASE("crop cube stays inside the requested cube") {
  NoisyVolumeOptions o;
  o.count = 5000;
  o.box = {10, 10, 10};
  const PointCloud scene = generate_noisy_volume_scene(o);
  std::mt19937_64 rng(5);
  const PointCloud c = crop_cube(scene, 5.0, rng);
  REQUIRE_FALSE(c.empty());
  Vec3 lo = c.points[0].position, hi = lo;
  for (const auto& p : c.points)
    for (std::size_t a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p.position[a]);
      hi[a] = std::max(hi[a], p.position[a]);
    }
  for (std::size_t a = 0; a < 3; ++a) CHECK(hi[a] - lo[a] < 5.0);
}

TEST_CASE("baseline classifier") {
  NoisyVolumeOptions o;
  o.count = 6000;
  o.box = {10, 10, 10};
  o.seed = 1;
  const PointCloud noise = generate_noisy_volume_scene(o);
  const PointCloud plane = generate_plane_scene(10.0, 0.05, Axis::z);
  const auto a = crops_of(plane, 40, 2), b = crops_of(noise, 40, 3);

  const auto r = baseline_domain_classifier(a, b, 7);
  CHECK(r.report.d_h > 1.5);
  CHECK(r.train_source == 32);

  // Deterministic per seed, and label swap leaves the error sum unchanged.
  const auto again = baseline_domain_classifier(a, b, 7);
  CHECK(again.report.d_h == r.report.d_h);
  const auto swapped = baseline_domain_classifier(b, a, 7);
  CHECK(swapped.report.err_source == r.report.err_target);
  CHECK(swapped.report.err_target == r.report.err_source);
  CHECK(swapped.report.d_h == r.report.d_h);

  const std::vector<PointCloud> few(a.begin(), a.begin() + 19);
  CHECK_THROWS_AS(baseline_domain_classifier(few, b, 1), DataError);
}
