#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "voxattn/errors.hpp"
#include "voxattn/synthetic.hpp"
#include "voxattn/voxel_grid.hpp"

using namespace voxattn;

namespace {

PointCloud cloud_of(std::initializer_list<Vec3> positions) {
  PointCloud pc;
  for (const auto& p : positions) pc.points.push_back({p, {}, {}});
  return pc;
}

PointCloud dense_block(int side, double vs) {
  PointCloud pc;
  for (int x = 0; x < side; ++x)
    for (int y = 0; y < side; ++y)
      for (int z = 0; z < side; ++z) pc.points.push_back({{(x + 0.5) * vs, (y + 0.5) * vs, (z + 0.5) * vs}, {}, {}});
  return pc;
}

double dist2(const Vec3& a, const Vec3& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST_CASE("floor division tiles negative coordinates") {
  CHECK(floor_div(-1, 5) == -1);
  CHECK(floor_div(-5, 5) == -1);
  CHECK(floor_div(-6, 5) == -2);
  CHECK(floor_div(4, 5) == 0);
  CHECK(voxel_coord({-0.001, 0.0, 0.039}, 0.02) == VoxelCoord{-1, 0, 1});
  CHECK(voxel_coord({0.06, 0.0, 0.0}, 0.02) == VoxelCoord{3, 0, 0});  // lattice point lands in its own voxel
}

TEST_CASE("voxelize basics") {
  const SparseVoxelGrid one = voxelize(cloud_of({{0.01, 0.01, 0.01}}), 0.02);
  REQUIRE(one.size() == 1);
  CHECK(one.cell(0).coord == VoxelCoord{0, 0, 0});
  CHECK(one.cell(0).representative.position == Vec3{0.01, 0.01, 0.01});

  // Distances 0.001 and 0.009 from the center (0.01, 0.01, 0.01).
  const SparseVoxelGrid two = voxelize(cloud_of({{0.019, 0.01, 0.01}, {0.011, 0.01, 0.01}}), 0.02);
  REQUIRE(two.size() == 1);
  CHECK(two.cell(0).source_index == 1);

  PointCloud corners;
  for (int i = 0; i < 8; ++i) corners.points.push_back({{(i & 1) * 0.03, ((i >> 1) & 1) * 0.03, ((i >> 2) & 1) * 0.03}, {}, {}});
  CHECK(voxelize(corners, 0.02).size() == 8);

  CHECK_THROWS_AS(voxelize(PointCloud{}, 0.02), EmptyInputError);
  CHECK_THROWS_AS(voxelize(corners, 0.0), RangeError);
}

TEST_CASE("ties go to the lowest input index and order does not matter otherwise") {
  // Exact in binary: both points sit 0.125 from the cell center.
  const PointCloud pc = cloud_of({{0.125, 0.25, 0.25}, {0.375, 0.25, 0.25}});
  CHECK(voxelize(pc, 0.5).cell(0).source_index == 0);
  const PointCloud rev = cloud_of({{0.375, 0.25, 0.25}, {0.125, 0.25, 0.25}});
  CHECK(voxelize(rev, 0.5).cell(0).source_index == 0);

  NoisyVolumeOptions o;
  o.count = 300;
  o.box = {0.2, 0.2, 0.2};
  o.seed = 5;
  PointCloud a = generate_noisy_volume_scene(o);
  PointCloud b = a;
  std::mt19937_64 rng(1);
  std::shuffle(b.points.begin(), b.points.end(), rng);
  const SparseVoxelGrid ga = voxelize(a, 0.02), gb = voxelize(b, 0.02);
  REQUIRE(ga.size() == gb.size());
  for (std::size_t i = 0; i < ga.size(); ++i) {
    CHECK(ga.cell(i).coord == gb.cell(i).coord);
    CHECK(ga.cell(i).representative == gb.cell(i).representative);
    CHECK(voxel_coord(ga.cell(i).representative.position, 0.02) == ga.cell(i).coord);
  }
}

TEST_CASE("representative is the nearest point to the cell center") {
  NoisyVolumeOptions o;
  o.count = 500;
  o.box = {0.1, 0.1, 0.1};
  o.seed = 12;
  const PointCloud pc = generate_noisy_volume_scene(o);
  const SparseVoxelGrid g = voxelize(pc, 0.02);
  for (const auto& cell : g.cells()) {
    const Vec3 c = g.cell_center(cell.coord);
    for (std::size_t i = 0; i < pc.size(); ++i)
      if (voxel_coord(pc.points[i].position, 0.02) == cell.coord)
        CHECK(dist2(pc.points[i].position, c) >= dist2(cell.representative.position, c));
  }
}

TEST_CASE("hierarchy sizes and occupancy") {
  NoisyVolumeOptions o;
  o.count = 2000;
  o.seed = 3;
  const auto levels = build_hierarchy(voxelize(generate_noisy_volume_scene(o), 0.02), 5);
  REQUIRE(levels.size() == 5);
  const double sizes[] = {0.02, 0.04, 0.08, 0.16, 0.32};
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(levels[k].voxel_size() == doctest::Approx(sizes[k]).epsilon(1e-15));
    CHECK(levels[k].level() == static_cast<int>(k));
    if (k > 0) {
      CHECK(levels[k].size() <= levels[k - 1].size());
      // A coarse cell exists iff one of its children does.
      std::set<VoxelCoord> parents;
      for (const auto& c : levels[k - 1].cells())
        parents.insert({floor_div(c.coord[0], 2), floor_div(c.coord[1], 2), floor_div(c.coord[2], 2)});
      CHECK(parents.size() == levels[k].size());
      for (const auto& c : levels[k].cells()) CHECK(parents.count(c.coord) == 1);
    }
  }
  const auto single = build_hierarchy(voxelize(cloud_of({{0.5, 0.5, 0.5}}), 0.02), 5);
  for (const auto& g : single) CHECK(g.size() == 1);
}

TEST_CASE("coarse representative is the child representative nearest the coarse center") {
  NoisyVolumeOptions o;
  o.count = 400;
  o.box = {0.2, 0.2, 0.2};
  o.seed = 8;
  const auto levels = build_hierarchy(voxelize(generate_noisy_volume_scene(o), 0.02), 2);
  for (const auto& coarse : levels[1].cells()) {
    const Vec3 c = levels[1].cell_center(coarse.coord);
    double best = 1e300;
    for (const auto& fine : levels[0].cells()) {
      const VoxelCoord p{floor_div(fine.coord[0], 2), floor_div(fine.coord[1], 2), floor_div(fine.coord[2], 2)};
      if (p == coarse.coord) best = std::min(best, dist2(fine.representative.position, c));
    }
    CHECK(dist2(coarse.representative.position, c) == best);
  }
}

TEST_CASE("window partition") {
  const SparseVoxelGrid block = voxelize(dense_block(5, 0.02), 0.02);
  REQUIRE(block.size() == 125);
  const WindowPartition regular = partition_windows(block, 5, false);
  REQUIRE(regular.windows.size() == 1);
  CHECK(regular.windows[0].members.size() == 125);

  const WindowPartition shifted = partition_windows(block, 5, true);
  CHECK(shifted.windows.size() == 8);  // floor((c + 2) / 5) splits {0,1,2} from {3,4} per axis
  std::size_t total = 0;
  std::set<std::size_t> seen;
  for (const auto& w : shifted.windows) {
    total += w.members.size();
    for (auto m : w.members) {
      seen.insert(m);
      const auto& c = block.cell(m).coord;
      for (std::size_t a = 0; a < 3; ++a) CHECK(floor_div(c[a] + 2, 5) == w.coord[a]);
    }
  }
  CHECK(total == 125);
  CHECK(seen.size() == 125);

  const SparseVoxelGrid apart = voxelize(cloud_of({{0.01, 0.01, 0.01}, {2.01, 0.01, 0.01}}), 0.02);
  CHECK(partition_windows(apart, 5, false).windows.size() == 2);
}

TEST_CASE("knn pooling") {
  // Two children of coarse cell (0,0,0).
  const SparseVoxelGrid fine = voxelize(cloud_of({{0.01, 0.01, 0.01}, {0.03, 0.01, 0.01}}), 0.02);
  const auto levels = build_hierarchy(fine, 2);
  Mat f(2, 2);
  f << 1, 0, 0, 1;
  const Mat pooled = knn_pool_downsample(f, levels[0], levels[1], 2);
  CHECK(pooled.rows() == 1);
  CHECK(pooled(0, 0) == 1.0);
  CHECK(pooled(0, 1) == 1.0);

  const SparseVoxelGrid lone = voxelize(cloud_of({{0.01, 0.01, 0.01}}), 0.02);
  const auto lone_levels = build_hierarchy(lone, 2);
  Mat g(1, 3);
  g << -1, 2, 3;
  CHECK(knn_pool_downsample(g, lone_levels[0], lone_levels[1], 16) == g);

  // K = 1 picks the child whose representative is nearest the coarse representative.
  NoisyVolumeOptions o;
  o.count = 600;
  o.box = {0.3, 0.3, 0.3};
  o.seed = 21;
  const auto h = build_hierarchy(voxelize(generate_noisy_volume_scene(o), 0.02), 2);
  Mat feats(static_cast<Eigen::Index>(h[0].size()), 1);
  for (Eigen::Index i = 0; i < feats.rows(); ++i) feats(i, 0) = static_cast<double>(i);
  const Mat one = knn_pool_downsample(feats, h[0], h[1], 1);
  for (std::size_t c = 0; c < h[1].size(); ++c) {
    const auto& coarse = h[1].cell(c);
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < h[0].size(); ++i) {
      const auto& fc = h[0].cell(i).coord;
      if (VoxelCoord{floor_div(fc[0], 2), floor_div(fc[1], 2), floor_div(fc[2], 2)} != coarse.coord) continue;
      const double d = dist2(h[0].cell(i).representative.position, coarse.representative.position);
      if (d < best) {
        best = d;
        arg = i;
      }
    }
    CHECK(one(static_cast<Eigen::Index>(c), 0) == static_cast<double>(arg));
  }
}
