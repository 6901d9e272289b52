#include "voxattn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "voxattn/errors.hpp"

namespace voxattn {

PointCloud generate_plane_scene(double extent, double spacing, Axis axis) {
  if (!(extent > 0.0) || !(spacing > 0.0)) throw RangeError("plane extent and spacing must be positive");
  const auto n = static_cast<long>(std::lround(extent / spacing)) + 1;
  const int a = static_cast<int>(axis);
  const int u = (a + 1) % 3;
  const int v = (a + 2) % 3;
  Vec3 normal{0.0, 0.0, 0.0};
  normal[a] = 1.0;

  PointCloud pc;
  pc.mask = SignalMask::pcn();
  pc.points.reserve(static_cast<std::size_t>(n * n));
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < n; ++j) {
      PointRecord pt;
      pt.position[u] = static_cast<double>(i) * spacing;
      pt.position[v] = static_cast<double>(j) * spacing;
      pt.color = Vec3{0.6, 0.6, 0.6};
      pt.normal = normal;
      pc.points.push_back(pt);
    }
  }
  return pc;
}

PointCloud generate_noisy_volume_scene(const NoisyVolumeOptions& o) {
  if (o.count == 0) throw RangeError("point count must be positive");
  if (o.color_variance < 0.0 || o.normal_noise < 0.0) throw RangeError("noise parameters must be non-negative");
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double color_sd = std::sqrt(o.color_variance);

  PointCloud pc;
  pc.mask = SignalMask::pcn();
  pc.points.reserve(o.count);
  for (std::size_t i = 0; i < o.count; ++i) {
    PointRecord pt;
    for (int a = 0; a < 3; ++a) pt.position[a] = unit(rng) * o.box[a];
    Vec3 c;
    for (double& x : c) x = std::clamp(0.5 + color_sd * gauss(rng), 0.0, 1.0);
    pt.color = c;
    Vec3 n;
    double len = 0.0;
    do {
      n = {o.normal_noise * gauss(rng), o.normal_noise * gauss(rng), 1.0 + o.normal_noise * gauss(rng)};
      len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    } while (len < 1e-9);
    for (double& x : n) x /= len;
    pt.normal = n;
    pc.points.push_back(pt);
  }
  return pc;
}

}  // namespace voxattn
