#include "voxattn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <tuple>

#include "voxattn/attention.hpp"
#include "voxattn/errors.hpp"

namespace voxattn {

std::string GradcheckReport::text() const {
  std::string out;
  char line[256];
  for (const auto& m : modes) {
    std::snprintf(line, sizeof line, "%-6s checks %8lld  max error %.3e\n", std::string(to_string(m.mode)).c_str(),
                  static_cast<long long>(m.checks), m.max_error);
    out += line;
  }
  std::snprintf(line, sizeof line, "total  checks %8lld  max error %.3e  worst %s\n", static_cast<long long>(checks),
                max_error, worst_path.c_str());
  out += line;
  out += passed ? "gradcheck passed\n" : "gradcheck FAILED\n";
  return out;
}

namespace {

struct Trial {
  WindowInputs in;
  ProjectionSet proj;
  LookupTableSet tables;
  QuantizerSpec quantizer;
  Mat prompts;
  Mat upstream;
  AttentionConfig config;
  int domain = 0;
};

constexpr int kDomains = 2;
constexpr double kVoxel = 0.02;
constexpr int kWindow = 5;

Trial make_trial(CrseMode mode, int t, const GradcheckOptions& o, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto fill = [&](Mat& m, double sd) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * gauss(rng);
  };

  Trial tr;
  const int d = o.channels;
  const int n = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(o.max_voxels));
  const int b = (t % 2 == 0) ? o.prompts : 0;
  tr.config = {d, o.heads, kWindow, b, mode};
  tr.quantizer = QuantizerSpec::for_window(kWindow, kVoxel);
  tr.in.features.resize(n, d);
  fill(tr.in.features, 1.0);
  tr.in.signals.resize(n, kSignalChannels);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) tr.in.signals(i, a) = kVoxel * (kWindow - 1) * unit(rng);
    for (int a = 3; a < 6; ++a) tr.in.signals(i, a) = unit(rng);
    Eigen::Vector3d nrm;
    for (int a = 0; a < 3; ++a) nrm(a) = gauss(rng);
    nrm /= std::max(nrm.norm(), 1e-12);
    for (int a = 0; a < 3; ++a) tr.in.signals(i, 6 + a) = nrm(a);
  }
  tr.proj = ProjectionSet::zeros(d);
  fill(tr.proj.q, 0.4);
  fill(tr.proj.k, 0.4);
  fill(tr.proj.v, 0.4);
  tr.tables = LookupTableSet(mode, d, kSignalChannels, tr.quantizer.divisions, tr.quantizer.divisions_2d, kDomains);
  for (double& x : tr.tables.shared_data()) x = 0.5 * gauss(rng);
  for (double& x : tr.tables.modulation_data()) x = 0.5 + unit(rng);
  tr.domain = static_cast<int>(rng() % kDomains);
  tr.prompts = Mat::Zero(b, d);
  fill(tr.prompts, 0.8);
  tr.upstream.resize(n, d);
  fill(tr.upstream, 1.0);
  return tr;
}

double loss(const Trial& tr) {
  const AttentionParams p{tr.proj, tr.tables, tr.quantizer, tr.prompts, tr.domain};
  return window_attention_forward(tr.in, p, tr.config).cwiseProduct(tr.upstream).sum();
}

using EntryKey = std::tuple<int, int, int, int>;  // role, group, factor, index

// Table entries any (i, j) pair of the window reads.
std::set<EntryKey> touched_entries(const Trial& tr) {
  std::set<EntryKey> keys;
  const auto& t = tr.tables;
  const Eigen::Index n = tr.in.signals.rows();
  std::vector<double> delta(kSignalChannels);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      for (int c = 0; c < kSignalChannels; ++c) delta[static_cast<std::size_t>(c)] = tr.in.signals(i, c) - tr.in.signals(j, c);
      const std::vector<int> b1 = quantize(delta, tr.quantizer);
      const std::vector<int> b2 = quantize_2d(delta, tr.quantizer);
      for (Role r : kAllRoles) {
        const int role = static_cast<int>(r);
        if (!is_vm(t.mode())) {
          for (int m = 0; m < kSignalChannels; ++m) keys.emplace(role, m, 0, b1[static_cast<std::size_t>(m)]);
          continue;
        }
        for (int g = 0; g < t.group_count(); ++g)
          for (int k = 0; k < 3; ++k) {
            const auto at = [&](int c) { return static_cast<std::size_t>(3 * g + c); };
            keys.emplace(role, g, k, b1[at(k)]);
            keys.emplace(role, g, 3 + k, b2[at((k + 1) % 3)] * t.divisions_2d() + b2[at((k + 2) % 3)]);
          }
      }
    }
  return keys;
}

const char* role_name(int r) { return r == 0 ? "q" : (r == 1 ? "k" : "v"); }

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& o) {
  if (o.trials < 1) throw RangeError("gradcheck needs at least one trial");
  if (!(o.tolerance > 0.0) || !(o.step > 0.0)) throw RangeError("gradcheck tolerance and step must be positive");
  if (o.channels % o.heads != 0) throw ConfigError("gradcheck channels must be divisible by heads");
  const double floor = o.absolute_tolerance / o.tolerance;

  GradcheckReport report;
  std::mt19937_64 rng(o.seed);
  bool corrupted = false;

  for (CrseMode mode : o.modes) {
    GradcheckModeSummary summary;
    summary.mode = mode;
    for (int t = 0; t < o.trials; ++t) {
      Trial tr = make_trial(mode, t, o, rng);
      const std::string prefix = std::string(to_string(mode)) + "/trial " + std::to_string(t) + "/";

      ForwardCache cache;
      {
        const AttentionParams p{tr.proj, tr.tables, tr.quantizer, tr.prompts, tr.domain};
        window_attention_forward(tr.in, p, tr.config, &cache);
      }
      const AttentionParams p{tr.proj, tr.tables, tr.quantizer, tr.prompts, tr.domain};
      WindowGradients g = window_attention_backward(tr.in, p, tr.config, cache, tr.upstream);
      if (o.corrupt && !corrupted) {
        g.features(0, 0) += 1e-2;
        corrupted = true;
      }

      auto compare = [&](double analytic, double& slot, const std::string& path) {
        const double keep = slot;
        slot = keep + o.step;
        const double up = loss(tr);
        slot = keep - o.step;
        const double down = loss(tr);
        slot = keep;
        const double numeric = (up - down) / (2.0 * o.step);
        const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
        ++summary.checks;
        summary.max_error = std::max(summary.max_error, err);
        if (err > report.max_error || report.worst_path.empty()) {
          if (err > report.max_error) report.max_error = err;
          report.worst_path = prefix + path;
        }
      };
      auto matrix = [&](const Mat& analytic, Mat& param, const char* name) {
        for (Eigen::Index r = 0; r < param.rows(); ++r)
          for (Eigen::Index c = 0; c < param.cols(); ++c)
            compare(analytic(r, c), param(r, c), std::string(name) + "[" + std::to_string(r) + "," + std::to_string(c) + "]");
      };

      matrix(g.features, tr.in.features, "features");
      matrix(g.q, tr.proj.q, "proj.q");
      matrix(g.k, tr.proj.k, "proj.k");
      matrix(g.v, tr.proj.v, "proj.v");
      if (tr.prompts.rows() > 0) matrix(g.prompts, tr.prompts, "prompts");

      for (const auto& [role, grp, factor, index] : touched_entries(tr)) {
        const Role r = static_cast<Role>(role);
        const std::string where = std::string(role_name(role)) + ",g" + std::to_string(grp) + ",f" + std::to_string(factor) +
                                  ",i" + std::to_string(index);
        auto analytic = g.tables.entry(r, grp, factor, index);
        auto param = tr.tables.entry(r, grp, factor, index);
        for (std::size_t c = 0; c < param.size(); ++c)
          compare(analytic[c], param[c], "tables.shared[" + where + ",c" + std::to_string(c) + "]");
        if (is_modulated(mode))
          compare(g.tables.modulation(tr.domain, r, grp, factor, index), tr.tables.modulation(tr.domain, r, grp, factor, index),
                  "tables.modulation[d" + std::to_string(tr.domain) + "," + where + "]");
      }
    }
    report.checks += summary.checks;
    report.modes.push_back(summary);
  }
  report.passed = report.max_error < o.tolerance;
  return report;
}

}  // namespace voxattn
