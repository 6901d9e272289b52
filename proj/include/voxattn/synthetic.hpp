#pragma once

#include <cstdint>

#include "voxattn/signals.hpp"

namespace voxattn {

enum class Axis { x = 0, y = 1, z = 2 };

/// Axis-aligned square lattice in the plane through the origin orthogonal to `axis`.
/// round(extent / spacing) + 1 points per side, constant color, normal along `axis`.
PointCloud generate_plane_scene(double extent, double spacing, Axis axis);

struct NoisyVolumeOptions {
  std::size_t count = 1000;
  Vec3 box{1.0, 1.0, 1.0};   // points uniform in [0, box)
  double color_variance = 0.01;
  double normal_noise = 0.1;  // std-dev of per-component normal perturbation before renormalising
  std::uint64_t seed = 0;
};

/// Uniform random points with Gaussian color and normal jitter; deterministic per seed.
PointCloud generate_noisy_volume_scene(const NoisyVolumeOptions& options);

}  // namespace voxattn
