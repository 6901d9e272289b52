// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "voxattn/attention.hpp"
#include "voxattn/augmentation.hpp"
#include "voxattn/crse.hpp"
#include "voxattn/discrepancy.hpp"
#include "voxattn/encoder.hpp"
#include "voxattn/gradcheck.hpp"
#include "voxattn/synthetic.hpp"

using namespace voxattn;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("%s  %2d  %-32s %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// A random window with everything attention needs. Tables and prompts use larger spreads
// than the training initialization so the encodings visibly move the scores.
struct RandomWindow {
  WindowInputs in;
  ProjectionSet proj;
  LookupTableSet tables;
  QuantizerSpec quantizer;
  Mat prompts;
  AttentionConfig config;
  int domain = 0;

  AttentionParams params() const { return {proj, tables, quantizer, prompts, domain}; }
};

RandomWindow random_window(std::mt19937_64& rng, CrseMode mode, int n, int b, int d, int heads) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto fill = [&](Mat& m, double sd) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * g(rng);
  };
  RandomWindow w;
  w.config = {d, heads, 5, b, mode};
  w.quantizer = QuantizerSpec::for_window(5, 0.02);
  w.in.features.resize(n, d);
  fill(w.in.features, 1.0);
  w.in.signals.resize(n, kSignalChannels);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) w.in.signals(i, a) = 0.08 * u(rng);
    for (int a = 3; a < 6; ++a) w.in.signals(i, a) = u(rng);
    Eigen::Vector3d nv;
    for (int a = 0; a < 3; ++a) nv(a) = g(rng);
    nv.normalize();
    for (int a = 0; a < 3; ++a) w.in.signals(i, 6 + a) = nv(a);
  }
  w.proj = ProjectionSet::zeros(d);
  fill(w.proj.q, 0.5);
  fill(w.proj.k, 0.5);
  fill(w.proj.v, 0.5);
  w.tables = LookupTableSet(mode, d, kSignalChannels, 16, 4, 2);
  for (double& x : w.tables.shared_data()) x = 0.5 * g(rng);
  for (double& x : w.tables.modulation_data()) x = 0.5 + u(rng);
  w.domain = static_cast<int>(rng() % 2);
  w.prompts = Mat(b, d);
  fill(w.prompts, 1.0);
  return w;
}

double rel_linf(const Mat& a, const Mat& ref) {
  const double scale = std::max(ref.cwiseAbs().maxCoeff(), 1e-300);
  return (a - ref).cwiseAbs().maxCoeff() / scale;
}

// ---------------------------------------------------------------------------------------

void oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  int windows = 0;
  for (int t = 0; t < 1000; ++t) {
    const CrseMode mode = kAllCrseModes[static_cast<std::size_t>(t % 4)];
    const int n = 1 + static_cast<int>(rng() % 32);
    const int b = (t / 4) % 2 == 0 ? 0 : 5;
    const RandomWindow w = random_window(rng, mode, n, b, 16, 4);
    const Mat fast = window_attention_forward(w.in, w.params(), w.config);
    const ReferenceResult ref = window_attention_reference(w.in, w.params(), w.config);
    worst = std::max(worst, rel_linf(fast, ref.output));
    ++windows;
  }
  const double secs = seconds_since(t0);
  report(1, "oracle equivalence", worst <= 1e-10 && secs < 60.0,
         fmt("%.0f windows, max rel error %.2e, %.1f s", windows, worst, secs));
}

void gradient_correctness() {
  const auto t0 = Clock::now();
  GradcheckOptions o;
  o.seed = 7;
  o.trials = 50;
  const GradcheckReport r = run_gradcheck(o);
  const double secs = seconds_since(t0);
  report(2, "gradient correctness", r.passed && secs < 300.0,
         fmt("%.0f checks, max error %.2e, %.1f s", static_cast<double>(r.checks), r.max_error, secs) + " worst " + r.worst_path);
}

// Every group of the vm tables against the T^3 tensor assembled from its factors.
void vm_exactness() {
  constexpr int T = 4, d = 6;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  LookupTableSet full(CrseMode::vm, d, kSignalChannels, T, T, 1);
  for (double& x : full.shared_data()) x = g(rng);

  long long compared = 0, mismatched = 0;
  for (Role r : kAllRoles) {
    for (int grp = 0; grp < full.group_count(); ++grp) {
      // Only this group nonzero, so the lookup is exactly that group's tensor entry.
      LookupTableSet only = full;
      for (Role r2 : kAllRoles)
        for (int g2 = 0; g2 < only.group_count(); ++g2)
          for (int f = 0; f < 6; ++f)
            for (int i = 0; i < only.factor_size(f); ++i)
              if (g2 != grp) std::fill_n(only.entry(r2, g2, f, i).begin(), d, 0.0);

      auto v1 = [&](int k, int i) { return full.entry(r, grp, k, i); };
      auto m2 = [&](int k, int i, int j) { return full.entry(r, grp, 3 + k, i * T + j); };
      for (int a = 0; a < T; ++a)
        for (int b = 0; b < T; ++b)
          for (int c = 0; c < T; ++c) {
            // T_r(a, b, c) = t1(a) t23(b, c) + t2(b) t31(c, a) + t3(c) t12(a, b)
            std::vector<double> expect(d, 0.0);
            for (int ch = 0; ch < d; ++ch) {
              const auto uch = static_cast<std::size_t>(ch);
              expect[uch] += v1(0, a)[uch] * m2(0, b, c)[uch];
              expect[uch] += v1(1, b)[uch] * m2(1, c, a)[uch];
              expect[uch] += v1(2, c)[uch] * m2(2, a, b)[uch];
            }
            QuantizedDelta q;
            q.count = kSignalChannels;
            q.bins[static_cast<std::size_t>(3 * grp)] = q.bins_2d[static_cast<std::size_t>(3 * grp)] = a;
            q.bins[static_cast<std::size_t>(3 * grp + 1)] = q.bins_2d[static_cast<std::size_t>(3 * grp + 1)] = b;
            q.bins[static_cast<std::size_t>(3 * grp + 2)] = q.bins_2d[static_cast<std::size_t>(3 * grp + 2)] = c;
            const Vec got = vm_crse(q, only, r);
            for (int ch = 0; ch < d; ++ch) {
              ++compared;
              if (got(ch) != expect[static_cast<std::size_t>(ch)]) ++mismatched;
            }
          }
    }
  }
  report(3, "vm exactness", mismatched == 0,
         fmt("%.0f values compared, %.0f mismatches", static_cast<double>(compared), static_cast<double>(mismatched)));
}

void modulation_collapse() {
  constexpr int d = 16, L = 3;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  LookupTableSet base(CrseMode::base, d, kSignalChannels, 16, 4, L);
  LookupTableSet dm(CrseMode::domain_modulated, d, kSignalChannels, 16, 4, L);
  LookupTableSet vm(CrseMode::vm, d, kSignalChannels, 16, 4, L);
  LookupTableSet vmdm(CrseMode::vm_domain_modulated, d, kSignalChannels, 16, 4, L);
  init_tables(base, 5);
  init_tables(vm, 6);
  // Documented initialization for the modulated sets, then share the unmodulated values.
  init_tables(dm, 99);
  init_tables(vmdm, 98);
  std::copy(base.shared_data().begin(), base.shared_data().end(), dm.shared_data().begin());
  std::copy(vm.shared_data().begin(), vm.shared_data().end(), vmdm.shared_data().begin());

  bool all_one = true;
  for (const auto* t : {&dm, &vmdm})
    for (double s : t->modulation_data()) all_one = all_one && s == 1.0;

  const QuantizerSpec spec = QuantizerSpec::for_window(5, 0.02);
  long long differing = 0;
  const int inputs = 10000;
  std::vector<double> delta(kSignalChannels);
  for (int t = 0; t < inputs; ++t) {
    for (int c = 0; c < kSignalChannels; ++c)
      delta[static_cast<std::size_t>(c)] = u(rng) * 1.1 * spec.upper[static_cast<std::size_t>(c)];
    const QuantizedDelta q = quantize_delta(delta, spec);
    const Role r = kAllRoles[static_cast<std::size_t>(t % 3)];
    const int l = t % L;
    const Vec a = crse_base(q, base, r), b = crse_domain_modulated(q, dm, r, l);
    const Vec c = vm_crse(q, vm, r), e = vm_crse_domain_modulated(q, vmdm, r, l);
    if (std::memcmp(a.data(), b.data(), sizeof(double) * d) != 0) ++differing;
    if (std::memcmp(c.data(), e.data(), sizeof(double) * d) != 0) ++differing;
  }
  report(4, "modulation collapse", all_one && differing == 0,
         fmt("%.0f inputs x 2 modes, %.0f bitwise differences", inputs, static_cast<double>(differing)) +
             (all_one ? "" : ", modulation not initialized to 1"));
}

void parameter_formula() {
  ModelConfig cfg;
  cfg.crse_mode = CrseMode::domain_modulated;
  const Model m = allocate_model(cfg);
  const ParameterBreakdown b = count_parameters(m);
  const std::int64_t expect = 3LL * kSignalChannels * cfg.domain_count() * cfg.divisions;
  bool ok = expect == 864 && static_cast<int>(b.modulation_per_block.size()) == cfg.block_count();
  for (auto v : b.modulation_per_block) ok = ok && v == expect;
  ok = ok && modulation_param_count(kSignalChannels, 2, 16, CrseMode::domain_modulated) == 864;
  report(5, "parameter formula", ok,
         fmt("%.0f blocks, modulation per block %.0f (3*M*L*T = %.0f)", static_cast<double>(b.modulation_per_block.size()),
             b.modulation_per_block.empty() ? -1.0 : static_cast<double>(b.modulation_per_block.front()),
             static_cast<double>(expect)));
}

// Plain softmax attention with relative encodings and no prompts, written out directly.
Mat no_prompt_attention(const RandomWindow& w) {
  const Eigen::Index n = w.in.features.rows();
  const int d = w.config.channels, dh = w.config.head_dim();
  const Mat q = w.in.features * w.proj.q, k = w.in.features * w.proj.k, v = w.in.features * w.proj.v;
  Mat out = Mat::Zero(n, d);
  std::vector<double> delta(kSignalChannels);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<Vec> tq, tk, tv;
    for (Eigen::Index j = 0; j < n; ++j) {
      for (int c = 0; c < kSignalChannels; ++c) delta[static_cast<std::size_t>(c)] = w.in.signals(i, c) - w.in.signals(j, c);
      const QuantizedDelta qd = quantize_delta(delta, w.quantizer);
      tq.push_back(crse_lookup(w.tables, Role::q, qd, w.domain));
      tk.push_back(crse_lookup(w.tables, Role::k, qd, w.domain));
      tv.push_back(crse_lookup(w.tables, Role::v, qd, w.domain));
    }
    for (int h = 0; h < w.config.heads; ++h) {
      const int o = h * dh;
      Vec e(n);
      for (Eigen::Index j = 0; j < n; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        e(j) = w.config.scale() * (q.row(i).segment(o, dh).dot(k.row(j).segment(o, dh) + tk[ju].segment(o, dh).transpose()) +
                                   k.row(j).segment(o, dh).dot(tq[ju].segment(o, dh)));
      }
      const Vec p = (e.array() - e.maxCoeff()).exp().matrix();
      const double z = p.sum();
      for (Eigen::Index j = 0; j < n; ++j)
        out.row(i).segment(o, dh) += (p(j) / z) * (v.row(j).segment(o, dh) + tv[static_cast<std::size_t>(j)].segment(o, dh).transpose());
    }
  }
  return out;
}

void softmax_invariants() {
  std::mt19937_64 rng(23);
  double worst_sum = 0.0, worst_hull = 0.0, worst_b0 = 0.0;
  bool weights_nonneg = true, b0_no_mass = true, b0_shape = true;
  std::vector<double> delta(kSignalChannels);
  for (int t = 0; t < 200; ++t) {
    const CrseMode mode = kAllCrseModes[static_cast<std::size_t>(t % 4)];
    const int n = 1 + static_cast<int>(rng() % 24);
    const int b = t % 2 == 0 ? 5 : 0;
    const RandomWindow w = random_window(rng, mode, n, b, 12, 3);
    const ReferenceResult ref = window_attention_reference(w.in, w.params(), w.config);
    const Mat out = window_attention_forward(w.in, w.params(), w.config);
    const int dh = w.config.head_dim();
    const Mat v = w.in.features * w.proj.v;
    const Mat pv = b > 0 ? Mat(w.prompts * w.proj.v) : Mat(0, w.config.channels);

    for (int h = 0; h < w.config.heads; ++h) {
      const Mat& wt = ref.weights[static_cast<std::size_t>(h)];
      if (wt.cols() != n + b) b0_shape = false;
      for (Eigen::Index i = 0; i < n; ++i) {
        worst_sum = std::max(worst_sum, std::abs(wt.row(i).sum() - 1.0));
        weights_nonneg = weights_nonneg && wt.row(i).minCoeff() >= 0.0;
        // Rebuild the convex combination of value candidates from the weights.
        Eigen::RowVectorXd mix = Eigen::RowVectorXd::Zero(dh);
        for (Eigen::Index j = 0; j < n; ++j) {
          for (int c = 0; c < kSignalChannels; ++c) delta[static_cast<std::size_t>(c)] = w.in.signals(i, c) - w.in.signals(j, c);
          const Vec tv = crse_lookup(w.tables, Role::v, quantize_delta(delta, w.quantizer), w.domain);
          mix += wt(i, j) * (v.row(j).segment(h * dh, dh) + tv.segment(h * dh, dh).transpose());
        }
        for (Eigen::Index p = 0; p < b; ++p) mix += wt(i, n + p) * pv.row(p).segment(h * dh, dh);
        worst_hull = std::max(worst_hull, (out.row(i).segment(h * dh, dh) - mix).cwiseAbs().maxCoeff());
      }
    }
    if (b == 0) {
      RandomWindow none = w;
      none.prompts = Mat(0, w.config.channels);
      try {
        prompt_attention_mass(none.in, none.params(), none.config);
        b0_no_mass = false;  // nothing to weigh: must be rejected
      } catch (const std::exception&) {
      }
      worst_b0 = std::max(worst_b0, rel_linf(out, no_prompt_attention(w)));
    }
  }
  const bool ok = worst_sum <= 1e-12 && weights_nonneg && worst_hull <= 1e-9 && b0_shape && b0_no_mass && worst_b0 <= 1e-12;
  report(6, "softmax and prompt invariants", ok,
         fmt("row sum dev %.1e, hull residual %.1e, B=0 vs prompt-free attention %.1e", worst_sum, worst_hull, worst_b0));
}

void plane_sparsity() {
  const auto t0 = Clock::now();
  const PointCloud plane = generate_plane_scene(2.0, 0.02, Axis::z);
  const NormalizedCumulativeHistogram h = window_occupancy_stats(plane, 0.02, 5, kDefaultHistogramBins, true);
  const int bin = Histogram::bin_of(0.2, h.bins());
  const double below = bin == 0 ? 0.0 : h.cumulative[static_cast<std::size_t>(bin - 1)];
  const double mass = h.mass(bin);
  const double secs = seconds_since(t0);
  report(7, "plane sparsity signature", below == 0.0 && mass == 1.0 && secs < 10.0,
         fmt("%.0f interior windows, mass at w_or=0.2: %.3f, %.2f s", static_cast<double>(h.samples), mass, secs));
}

void variance_identity() {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const int n = 1 + static_cast<int>(rng() % 125);
    Mat s(n, 3);
    const double spread = std::pow(10.0, static_cast<double>(rng() % 5) - 2.0);
    const double offset = 10.0 * g(rng);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = offset + spread * g(rng);
    const double a = pairwise_variance(s), b = centroid_variance(s);
    worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(b)));
  }
  report(8, "variance identity", worst <= 1e-10, fmt("1000 windows, max deviation %.2e", worst));
}

std::vector<PointCloud> noise_crops(std::mt19937_64& rng, int count) {
  std::vector<PointCloud> crops;
  while (static_cast<int>(crops.size()) < count) {
    NoisyVolumeOptions o;
    o.count = 1500;
    o.box = {8.0, 8.0, 8.0};
    o.seed = rng();
    PointCloud c = crop_cube(generate_noisy_volume_scene(o), 5.0, rng);
    if (!c.empty()) crops.push_back(std::move(c));
  }
  return crops;
}

void h_divergence_endpoints() {
  const auto t0 = Clock::now();
  const bool endpoints = h_divergence(0.0, 0.0).d_h == 2.0 && h_divergence(0.5, 0.5).d_h == 0.0;

  constexpr int kRuns = 30, kCrops = 200;
  double mean_abs = 0.0;
  for (int run = 0; run < kRuns; ++run) {
    std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(run));
    const auto a = noise_crops(rng, kCrops);
    const auto b = noise_crops(rng, kCrops);
    mean_abs += std::abs(baseline_domain_classifier(a, b, static_cast<std::uint64_t>(run)).report.d_h);
  }
  mean_abs /= kRuns;

  double min_sep = 2.0;
  const PointCloud plane = generate_plane_scene(8.0, 0.05, Axis::z);
  for (int run = 0; run < 3; ++run) {
    std::mt19937_64 rng(500 + static_cast<std::uint64_t>(run));
    std::vector<PointCloud> planar;
    while (planar.size() < kCrops) {
      PointCloud c = crop_cube(plane, 5.0, rng);
      if (!c.empty()) planar.push_back(std::move(c));
    }
    const auto noisy = noise_crops(rng, kCrops);
    min_sep = std::min(min_sep, baseline_domain_classifier(planar, noisy, static_cast<std::uint64_t>(run)).report.d_h);
  }
  const double secs = seconds_since(t0);
  report(9, "h-divergence endpoints", endpoints && mean_abs < 0.3 && min_sep > 1.5,
         fmt("identical sources mean |d_H| %.3f, plane vs noise min d_H %.3f, %.1f s", mean_abs, min_sep, secs));
}

void augmentation_contract() {
  DomainRegistry reg;
  reg.add("other", SignalMask::pcn());
  const auto variants = augment_sources(reg, "scenes", SignalMask::pcn());
  bool ok = variants.size() == 4 && reg.size() == 5;
  const SignalMask want[] = {SignalMask::p(), SignalMask::pc(), SignalMask::pn(), SignalMask::pcn()};
  for (std::size_t i = 0; ok && i < 4; ++i) ok = variants[i].subset == want[i] && variants[i].domain_id == static_cast<int>(i) + 1;

  // Virtualized channels: every in-window delta lands in the center bins.
  NoisyVolumeOptions o;
  o.count = 400;
  o.box = {0.1, 0.1, 0.1};
  o.seed = 4;
  const PointCloud virt = virtualize_signals(project_signals(generate_noisy_volume_scene(o), SignalMask::p()), SignalMask::pcn());
  const QuantizerSpec spec = QuantizerSpec::for_window(5, 0.02);
  const SparseVoxelGrid grid = voxelize(virt, 0.02);
  const Mat s = grid_signals(grid);
  long long off_center = 0, pairs = 0;
  std::vector<double> delta(kSignalChannels);
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = 0; j < s.rows(); ++j) {
      for (int c = 0; c < kSignalChannels; ++c) delta[static_cast<std::size_t>(c)] = s(i, c) - s(j, c);
      const QuantizedDelta q = quantize_delta(delta, spec);
      for (int c = 3; c < kSignalChannels; ++c)
        if (q.bins[static_cast<std::size_t>(c)] != spec.divisions / 2 || q.bins_2d[static_cast<std::size_t>(c)] != spec.divisions_2d / 2)
          ++off_center;
      ++pairs;
    }

  const MixSchedule mix({{0, 2}, {1, 1}});
  const std::vector<int> seq = mix.take(300);
  const auto a = std::count(seq.begin(), seq.end(), 0), b = std::count(seq.begin(), seq.end(), 1);
  const bool cycle_ok = mix.cycle() == std::vector<int>{0, 0, 1};
  report(10, "source augmentation contract", ok && off_center == 0 && pairs > 0 && a == 200 && b == 100 && cycle_ok,
         fmt("%.0f variants, %.0f off-center virtual deltas", static_cast<double>(variants.size()), static_cast<double>(off_center)) +
             fmt(", mix %.0f/%.0f", static_cast<double>(a), static_cast<double>(b)));
}

void end_to_end_determinism() {
  const auto t0 = Clock::now();
  NoisyVolumeOptions o;
  o.count = 1000;
  o.box = {1.0, 1.0, 1.0};
  o.seed = 77;
  const PointCloud cloud = generate_noisy_volume_scene(o);
  const Model model = build_model(ModelConfig{}, 2024);
  const EncoderOutput a = forward(model, cloud, 1);
  const EncoderOutput b = forward(model, cloud, 1);

  bool same = a.features.size() == b.features.size();
  for (std::size_t s = 0; same && s < a.features.size(); ++s)
    same = a.features[s].rows() == b.features[s].rows() && a.features[s].cols() == b.features[s].cols() &&
           std::memcmp(a.features[s].data(), b.features[s].data(), sizeof(double) * static_cast<std::size_t>(a.features[s].size())) == 0;
  bool monotone = a.grids.size() == 5 && a.features.size() == 5;
  std::string occ;
  for (std::size_t s = 0; s < a.grids.size(); ++s) {
    if (s > 0 && a.grids[s].size() > a.grids[s - 1].size()) monotone = false;
    if (a.features[s].rows() != static_cast<Eigen::Index>(a.grids[s].size())) monotone = false;
    occ += (s ? "/" : "") + std::to_string(a.grids[s].size());
  }
  const double secs = seconds_since(t0);
  report(11, "end-to-end determinism", same && monotone && secs < 30.0,
         std::string(same ? "bitwise identical" : "outputs differ") + ", occupancy " + occ + fmt(", %.1f s", secs));
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> criteria{
      oracle_equivalence, gradient_correctness, vm_exactness,        modulation_collapse,     parameter_formula,
      softmax_invariants, plane_sparsity,       variance_identity,   h_divergence_endpoints,  augmentation_contract,
      end_to_end_determinism};
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    try {
      criteria[i]();
    } catch (const std::exception& e) {
      report(static_cast<int>(i) + 1, "criterion", false, std::string("threw: ") + e.what());
    }
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
