#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <unordered_map>
#include <vector>

#include "voxattn/signals.hpp"

namespace voxattn {

using VoxelCoord = std::array<int, 3>;

struct VoxelCoordHash {
  std::size_t operator()(const VoxelCoord& c) const noexcept {
    std::size_t h = static_cast<std::size_t>(static_cast<unsigned>(c[0])) * 73856093u;
    h ^= static_cast<std::size_t>(static_cast<unsigned>(c[1])) * 19349663u;
    h ^= static_cast<std::size_t>(static_cast<unsigned>(c[2])) * 83492791u;
    return h;
  }
};

/// Floor division, also for negative numerators.
constexpr int floor_div(int a, int b) {
  const int q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

/// floor(position / voxel_size) per axis. Quotients within 1e-9 (relative) of an integer
/// snap to that integer so lattice points at multiples of the voxel size land in the
/// voxel they start.
VoxelCoord voxel_coord(const Vec3& position, double voxel_size);

struct VoxelCell {
  VoxelCoord coord{};
  PointRecord representative;
  std::size_t source_index = 0;  // index of the representative in the voxelized cloud
};

/// Occupied cells of one resolution level, ordered lexicographically by coordinate.
/// Per-cell features are carried alongside as a Mat whose rows follow cell order.
class SparseVoxelGrid {
 public:
  SparseVoxelGrid() = default;
  SparseVoxelGrid(int level, double voxel_size, SignalMask mask, std::vector<VoxelCell> cells);

  int level() const { return level_; }
  double voxel_size() const { return voxel_size_; }
  SignalMask mask() const { return mask_; }
  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }
  const std::vector<VoxelCell>& cells() const { return cells_; }
  const VoxelCell& cell(std::size_t i) const { return cells_[i]; }
  std::optional<std::size_t> find(const VoxelCoord& coord) const;
  Vec3 cell_center(const VoxelCoord& coord) const;

 private:
  int level_ = 0;
  double voxel_size_ = 0.0;
  SignalMask mask_;
  std::vector<VoxelCell> cells_;
  std::unordered_map<VoxelCoord, std::size_t, VoxelCoordHash> index_;
};

/// Representative per cell is the point nearest the cell center; ties go to the lowest
/// input index.
SparseVoxelGrid voxelize(const PointCloud& cloud, double voxel_size);

/// Returns `levels` grids; element 0 is `finest`, each next level doubles the voxel size.
std::vector<SparseVoxelGrid> build_hierarchy(const SparseVoxelGrid& finest, int levels);

struct Window {
  VoxelCoord coord{};
  std::vector<std::size_t> members;  // cell indices into the grid, ascending
};

struct WindowPartition {
  int window_size = 0;
  bool shifted = false;
  std::vector<Window> windows;  // nonempty windows ordered by coordinate
};

/// Shift offset applied to voxel coordinates before the window division.
constexpr int window_shift(int window_size, bool shifted) { return shifted ? window_size / 2 : 0; }

WindowPartition partition_windows(const SparseVoxelGrid& grid, int window_size, bool shifted);

inline constexpr int kDefaultPoolNeighbors = 16;

/// Componentwise max over the K children (fine cells inside each coarse cell) whose
/// representatives are nearest the coarse representative.
Mat knn_pool_downsample(const Mat& fine_features, const SparseVoxelGrid& fine, const SparseVoxelGrid& coarse,
                        int k = kDefaultPoolNeighbors);

}  // namespace voxattn
