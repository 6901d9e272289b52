#include <doctest.h>

#include <algorithm>

#include "voxattn/augmentation.hpp"
#include "voxattn/crse.hpp"
#include "voxattn/errors.hpp"
#include "voxattn/synthetic.hpp"
#include "voxattn/voxel_grid.hpp"

using namespace voxattn;

TEST_CASE("augmenting sources") {
  DomainRegistry reg;
  reg.add("s3d", SignalMask::pcn());
  reg.add("indoor", SignalMask::pcn());
  const auto v = augment_sources(reg, "indoor", SignalMask::pcn());
  REQUIRE(v.size() == 4);
  CHECK(v[0].subset == SignalMask::p());
  CHECK(v[1].subset == SignalMask::pc());
  CHECK(v[2].subset == SignalMask::pn());
  CHECK(v[3].subset == SignalMask::pcn());
  CHECK(v[3].domain_id == 1);  // already registered
  CHECK(reg.size() == 5);
  std::vector<int> ids;
  for (const auto& s : reg.sources()) ids.push_back(s.domain_id);
  CHECK(ids == std::vector<int>{0, 1, 2, 3, 4});

  DomainRegistry two;
  const auto pc = augment_sources(two, "x", SignalMask::pc());
  REQUIRE(pc.size() == 2);
  CHECK(pc[0].subset == SignalMask::p());
  CHECK(pc[1].subset == SignalMask::pc());

  CHECK_THROWS_AS(augment_sources(two, "x", SignalMask::pcn(), {SignalMask(2)}), SubsetError);
  CHECK_THROWS_AS(augment_sources(two, "y", SignalMask::pc(), {SignalMask::pn()}), MaskError);
  CHECK(two.size() == 2);
}

TEST_CASE("virtualize and project") {
  NoisyVolumeOptions o;
  o.count = 100;
  const PointCloud full = generate_noisy_volume_scene(o);

  const PointCloud p = project_signals(full, SignalMask::p());
  CHECK(p.size() == full.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p.points[i].position == full.points[i].position);
    CHECK_FALSE(p.points[i].color.has_value());
    CHECK_FALSE(p.points[i].normal.has_value());
  }
  const PointCloud back = virtualize_signals(p, SignalMask::pcn());
  for (const auto& q : back.points) {
    CHECK(*q.color == Vec3{0.5, 0.5, 0.5});
    CHECK(*q.normal == Vec3{0.0, 0.0, 1.0});
  }
  CHECK_FALSE(back == full);

  // Existing channels survive bitwise.
  const PointCloud pc = project_signals(full, SignalMask::pc());
  const PointCloud pcn = virtualize_signals(pc, SignalMask::pcn());
  for (std::size_t i = 0; i < pc.size(); ++i) CHECK(*pcn.points[i].color == *full.points[i].color);

  CHECK_THROWS_AS(virtualize_signals(full, SignalMask::p()), MaskError);
  CHECK_THROWS_AS(project_signals(p, SignalMask::pc()), MaskError);
  CHECK_THROWS_AS(project_signals(full, SignalMask(6)), SubsetError);
}

TEST_CASE("virtual channels quantize to the center bin") {
  NoisyVolumeOptions o;
  o.count = 50;
  o.box = {0.1, 0.1, 0.1};
  const PointCloud v = virtualize_signals(project_signals(generate_noisy_volume_scene(o), SignalMask::p()), SignalMask::pcn());
  const QuantizerSpec spec = QuantizerSpec::for_window(5, 0.02);
  LookupTableSet t(CrseMode::base, 4, 9, 16, 4, 1);
  init_tables(t, 1);
  LookupTableSet scrambled = t;
  // Rewrite every non-center row of the color and normal components.
  for (Role r : kAllRoles)
    for (int m = 3; m < 9; ++m)
      for (int b = 0; b < 16; ++b)
        if (b != 8) std::fill_n(scrambled.entry(r, m, 0, b).begin(), 4, 123.0);
  std::vector<double> delta(9);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) {
      const auto a = signal_vector(v.points[i]), b = signal_vector(v.points[j]);
      for (std::size_t c = 0; c < 9; ++c) delta[c] = a[c] - b[c];
      const QuantizedDelta q = quantize_delta(delta, spec);
      for (std::size_t c = 3; c < 9; ++c) {
        CHECK(delta[c] == 0.0);
        CHECK(q.bins[c] == 8);
        CHECK(q.bins_2d[c] == 2);
      }
      CHECK(crse_lookup(t, Role::v, q) == crse_lookup(scrambled, Role::v, q));
    }
}

TEST_CASE("mix schedule") {
  const MixSchedule two_one({{0, 2}, {1, 1}});
  CHECK(two_one.cycle() == std::vector<int>{0, 0, 1});
  const auto seq = two_one.take(300);
  CHECK(std::count(seq.begin(), seq.end(), 0) == 200);
  CHECK(std::count(seq.begin(), seq.end(), 1) == 100);

  // Descending ratio first, then source id.
  CHECK(MixSchedule({{5, 1}, {2, 3}, {1, 1}}).cycle() == std::vector<int>{2, 2, 2, 1, 5});
  const auto only = MixSchedule({{4, 1}}).take(10);
  CHECK(std::all_of(only.begin(), only.end(), [](int s) { return s == 4; }));
  CHECK_THROWS_AS(MixSchedule({{0, 0}}), RangeError);
  CHECK_THROWS_AS(MixSchedule({}), RangeError);
}
