#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxattn/crse.hpp"

namespace voxattn {

// Central finite differences against window_attention_backward on random small windows.
// A check passes when |analytic - numeric| <= tolerance * max(|analytic|, |numeric|, floor)
// with floor = absolute_tolerance / tolerance, so tiny gradients are judged absolutely.

struct GradcheckOptions {
  std::uint64_t seed = 0;
  int trials = 50;  // windows per mode
  double tolerance = 1e-4;
  double absolute_tolerance = 1e-6;
  double step = 1e-4;
  int max_voxels = 8;
  int channels = 8;
  int heads = 2;
  int prompts = 5;  // odd trials run without prompts
  std::vector<CrseMode> modes{kAllCrseModes.begin(), kAllCrseModes.end()};
  /// Negative control: perturbs one analytic feature gradient before comparing.
  bool corrupt = false;
};

struct GradcheckModeSummary {
  CrseMode mode = CrseMode::base;
  double max_error = 0.0;
  std::int64_t checks = 0;
};

struct GradcheckReport {
  double max_error = 0.0;
  std::string worst_path;  // "<mode>/trial <t>/<parameter>[index]"
  std::int64_t checks = 0;
  std::vector<GradcheckModeSummary> modes;
  bool passed = false;

  std::string text() const;
};

GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace voxattn
