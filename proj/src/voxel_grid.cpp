#include "voxattn/voxel_grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "voxattn/errors.hpp"

namespace voxattn {

namespace {

double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

int snapped_floor(double q) {
  const double r = std::nearbyint(q);
  if (std::abs(q - r) <= 1e-9 * std::max(1.0, std::abs(q))) return static_cast<int>(r);
  return static_cast<int>(std::floor(q));
}

}  // namespace

VoxelCoord voxel_coord(const Vec3& position, double voxel_size) {
  VoxelCoord c;
  for (int a = 0; a < 3; ++a) {
    const double q = position[a] / voxel_size;
    if (!(std::abs(q) < static_cast<double>(std::numeric_limits<int>::max() / 2)))
      throw DataError("position out of the representable voxel range");
    c[a] = snapped_floor(q);
  }
  return c;
}

SparseVoxelGrid::SparseVoxelGrid(int level, double voxel_size, SignalMask mask, std::vector<VoxelCell> cells)
    : level_(level), voxel_size_(voxel_size), mask_(mask), cells_(std::move(cells)) {
  std::sort(cells_.begin(), cells_.end(), [](const VoxelCell& a, const VoxelCell& b) { return a.coord < b.coord; });
  index_.reserve(cells_.size());
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    if (!index_.emplace(cells_[i].coord, i).second) throw InternalError("duplicate voxel coordinate");
  }
}

std::optional<std::size_t> SparseVoxelGrid::find(const VoxelCoord& coord) const {
  auto it = index_.find(coord);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Vec3 SparseVoxelGrid::cell_center(const VoxelCoord& coord) const {
  return {(coord[0] + 0.5) * voxel_size_, (coord[1] + 0.5) * voxel_size_, (coord[2] + 0.5) * voxel_size_};
}

SparseVoxelGrid voxelize(const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0)) throw RangeError("voxel size must be positive");
  if (cloud.empty()) throw EmptyInputError("cannot voxelize an empty point cloud");

  struct Best {
    std::size_t index;
    double d2;
  };
  std::unordered_map<VoxelCoord, Best, VoxelCoordHash> best;
  best.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& pos = cloud.points[i].position;
    const VoxelCoord c = voxel_coord(pos, voxel_size);
    const Vec3 center{(c[0] + 0.5) * voxel_size, (c[1] + 0.5) * voxel_size, (c[2] + 0.5) * voxel_size};
    const double d2 = dist2(pos, center);
    auto [it, inserted] = best.try_emplace(c, Best{i, d2});
    // Strict comparison keeps the lowest index on ties since points arrive in index order.
    if (!inserted && d2 < it->second.d2) it->second = Best{i, d2};
  }
  std::vector<VoxelCell> cells;
  cells.reserve(best.size());
  for (const auto& [coord, b] : best) cells.push_back(VoxelCell{coord, cloud.points[b.index], b.index});
  return SparseVoxelGrid(0, voxel_size, cloud.mask, std::move(cells));
}

std::vector<SparseVoxelGrid> build_hierarchy(const SparseVoxelGrid& finest, int levels) {
  if (levels < 1) throw RangeError("hierarchy needs at least one level");
  std::vector<SparseVoxelGrid> out;
  out.reserve(static_cast<std::size_t>(levels));
  out.push_back(finest);
  for (int l = 1; l < levels; ++l) {
    const SparseVoxelGrid& fine = out.back();
    const double size = fine.voxel_size() * 2.0;
    std::map<VoxelCoord, std::size_t> pick;  // coarse coord -> chosen fine cell
    std::map<VoxelCoord, double> pick_d2;
    for (std::size_t i = 0; i < fine.size(); ++i) {
      const auto& cell = fine.cell(i);
      const VoxelCoord parent{floor_div(cell.coord[0], 2), floor_div(cell.coord[1], 2), floor_div(cell.coord[2], 2)};
      const Vec3 center{(parent[0] + 0.5) * size, (parent[1] + 0.5) * size, (parent[2] + 0.5) * size};
      const double d2 = dist2(cell.representative.position, center);
      auto it = pick.find(parent);
      if (it == pick.end()) {
        pick.emplace(parent, i);
        pick_d2.emplace(parent, d2);
        continue;
      }
      double& cur = pick_d2[parent];
      const auto& chosen = fine.cell(it->second);
      if (d2 < cur || (d2 == cur && cell.source_index < chosen.source_index)) {
        it->second = i;
        cur = d2;
      }
    }
    std::vector<VoxelCell> cells;
    cells.reserve(pick.size());
    for (const auto& [coord, i] : pick) cells.push_back(VoxelCell{coord, fine.cell(i).representative, fine.cell(i).source_index});
    out.emplace_back(l, size, fine.mask(), std::move(cells));
  }
  return out;
}

WindowPartition partition_windows(const SparseVoxelGrid& grid, int window_size, bool shifted) {
  if (window_size < 1) throw RangeError("window size must be at least 1");
  const int offset = window_shift(window_size, shifted);
  std::map<VoxelCoord, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& c = grid.cell(i).coord;
    const VoxelCoord w{floor_div(c[0] + offset, window_size), floor_div(c[1] + offset, window_size),
                       floor_div(c[2] + offset, window_size)};
    groups[w].push_back(i);
  }
  WindowPartition part{window_size, shifted, {}};
  part.windows.reserve(groups.size());
  for (auto& [coord, members] : groups) part.windows.push_back(Window{coord, std::move(members)});
  return part;
}

Mat knn_pool_downsample(const Mat& fine_features, const SparseVoxelGrid& fine, const SparseVoxelGrid& coarse, int k) {
  if (k < 1) throw RangeError("KNN pooling needs K >= 1");
  if (static_cast<std::size_t>(fine_features.rows()) != fine.size())
    throw ShapeError("fine feature rows must match the fine grid size");

  std::vector<std::vector<std::size_t>> children(coarse.size());
  for (std::size_t i = 0; i < fine.size(); ++i) {
    const auto& c = fine.cell(i).coord;
    const VoxelCoord parent{floor_div(c[0], 2), floor_div(c[1], 2), floor_div(c[2], 2)};
    auto p = coarse.find(parent);
    if (!p) throw InternalError("fine cell has no parent in the coarse grid");
    children[*p].push_back(i);
  }

  Mat out(static_cast<Eigen::Index>(coarse.size()), fine_features.cols());
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t c = 0; c < coarse.size(); ++c) {
    const auto& kids = children[c];
    if (kids.empty()) throw InternalError("coarse cell without fine candidates");
    const Vec3& anchor = coarse.cell(c).representative.position;
    cand.clear();
    for (std::size_t f : kids) cand.emplace_back(dist2(fine.cell(f).representative.position, anchor), f);
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
    auto row = out.row(static_cast<Eigen::Index>(c));
    row = fine_features.row(static_cast<Eigen::Index>(cand[0].second));
    for (std::size_t t = 1; t < take; ++t)
      row = row.cwiseMax(fine_features.row(static_cast<Eigen::Index>(cand[t].second)));
  }
  return out;
}

}  // namespace voxattn
