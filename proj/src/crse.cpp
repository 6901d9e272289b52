#include "voxattn/crse.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <string>

#include "voxattn/errors.hpp"

namespace voxattn {

std::string_view to_string(CrseMode mode) {
  switch (mode) {
    case CrseMode::base: return "base";
    case CrseMode::domain_modulated: return "dm";
    case CrseMode::vm: return "vm";
    case CrseMode::vm_domain_modulated: return "vm-dm";
  }
  return "?";
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::q: return "Q";
    case Role::k: return "K";
    case Role::v: return "V";
  }
  return "?";
}

CrseMode parse_crse_mode(std::string_view text) {
  if (text == "base") return CrseMode::base;
  if (text == "dm" || text == "domain-modulated") return CrseMode::domain_modulated;
  if (text == "vm") return CrseMode::vm;
  if (text == "vm-dm" || text == "vm-domain-modulated") return CrseMode::vm_domain_modulated;
  throw ConfigError("unknown cRSE mode '" + std::string(text) + "' (expected base, dm, vm, vm-dm)");
}

void QuantizerSpec::validate() const {
  if (lower.size() != upper.size() || lower.empty()) throw ShapeError("quantizer bounds must be nonempty and paired");
  if (lower.size() > static_cast<std::size_t>(kMaxSignals)) throw ShapeError("too many signal components");
  for (std::size_t m = 0; m < lower.size(); ++m) {
    if (!std::isfinite(lower[m]) || !std::isfinite(upper[m]) || !(lower[m] < upper[m]))
      throw RangeError("quantizer bounds must be finite with lower < upper");
  }
  if (divisions < 2 || divisions_2d < 2) throw RangeError("quantizer divisions must be >= 2");
}

QuantizerSpec QuantizerSpec::symmetric(const std::vector<double>& half_widths, int divisions, int divisions_2d) {
  QuantizerSpec s;
  for (double w : half_widths) {
    s.lower.push_back(-w);
    s.upper.push_back(w);
  }
  s.divisions = divisions;
  s.divisions_2d = divisions_2d;
  s.validate();
  return s;
}

QuantizerSpec QuantizerSpec::for_window(int window_size, double voxel_size, int divisions, int divisions_2d) {
  if (window_size < 2) throw RangeError("window size must be >= 2 for relative encodings");
  const double p = (window_size - 1) * voxel_size;
  return symmetric({p, p, p, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0}, divisions, divisions_2d);
}

int quantize_component(double delta, double lo, double hi, int divisions) {
  const double t = (delta - lo) / (hi - lo) * divisions;
  if (!(t >= 0.0)) return 0;  // also maps NaN to the first bin
  if (t >= divisions) return divisions - 1;
  return std::min(static_cast<int>(std::floor(t)), divisions - 1);
}

std::vector<int> quantize(std::span<const double> delta, const QuantizerSpec& spec) {
  if (delta.size() != spec.lower.size()) throw ShapeError("delta length differs from quantizer component count");
  std::vector<int> out(delta.size());
  for (std::size_t m = 0; m < delta.size(); ++m)
    out[m] = quantize_component(delta[m], spec.lower[m], spec.upper[m], spec.divisions);
  return out;
}

std::vector<int> quantize_2d(std::span<const double> delta, const QuantizerSpec& spec) {
  if (delta.size() != spec.lower.size()) throw ShapeError("delta length differs from quantizer component count");
  std::vector<int> out(delta.size());
  for (std::size_t m = 0; m < delta.size(); ++m)
    out[m] = quantize_component(delta[m], spec.lower[m], spec.upper[m], spec.divisions_2d);
  return out;
}

QuantizedDelta quantize_delta(std::span<const double> delta, const QuantizerSpec& spec) {
  if (delta.size() != spec.lower.size()) throw ShapeError("delta length differs from quantizer component count");
  if (delta.size() > static_cast<std::size_t>(kMaxSignals)) throw ShapeError("too many signal components");
  QuantizedDelta q;
  q.count = static_cast<int>(delta.size());
  for (std::size_t m = 0; m < delta.size(); ++m) {
    q.bins[m] = quantize_component(delta[m], spec.lower[m], spec.upper[m], spec.divisions);
    q.bins_2d[m] = quantize_component(delta[m], spec.lower[m], spec.upper[m], spec.divisions_2d);
  }
  return q;
}

// ---------------------------------------------------------------------------------------

LookupTableSet::LookupTableSet(CrseMode mode, int channels, int signal_count, int divisions, int divisions_2d,
                               int domains)
    : mode_(mode), channels_(channels), signals_(signal_count), divisions_(divisions), divisions_2d_(divisions_2d),
      domains_(domains) {
  if (channels < 1) throw ShapeError("table channel count must be positive");
  if (signal_count < 1 || signal_count > kMaxSignals) throw ShapeError("signal count out of range");
  if (divisions < 2 || divisions_2d < 2) throw RangeError("table divisions must be >= 2");
  if (domains < 1) throw DomainError("at least one domain is required");
  if (is_vm(mode)) {
    if (signal_count % 3 != 0) throw ShapeError("vm tables need a signal count divisible by 3");
    groups_ = signal_count / 3;
    const std::size_t t = static_cast<std::size_t>(divisions);
    const std::size_t t2 = static_cast<std::size_t>(divisions_2d) * static_cast<std::size_t>(divisions_2d);
    factor_offset_ = {0, t, 2 * t, 3 * t, 3 * t + t2, 3 * t + 2 * t2, 3 * t + 3 * t2};
  } else {
    groups_ = signal_count;
    factor_offset_ = {0, static_cast<std::size_t>(divisions)};
  }
  group_entries_ = factor_offset_.back();
  role_entries_ = group_entries_ * static_cast<std::size_t>(groups_);
  shared_.assign(3 * role_entries_ * static_cast<std::size_t>(channels), 0.0);
  if (is_modulated(mode)) modulation_.assign(static_cast<std::size_t>(domains) * 3 * role_entries_, 1.0);
}

LookupTableSet LookupTableSet::zeros_like() const {
  LookupTableSet z = *this;
  std::fill(z.shared_.begin(), z.shared_.end(), 0.0);
  std::fill(z.modulation_.begin(), z.modulation_.end(), 0.0);
  return z;
}

bool LookupTableSet::same_shape(const LookupTableSet& o) const {
  return mode_ == o.mode_ && channels_ == o.channels_ && signals_ == o.signals_ && divisions_ == o.divisions_ &&
         divisions_2d_ == o.divisions_2d_ && domains_ == o.domains_;
}

void LookupTableSet::check_domain(int domain) const {
  if (is_modulated(mode_) && (domain < 0 || domain >= domains_))
    throw DomainError("domain " + std::to_string(domain) + " outside [0, " + std::to_string(domains_) + ")");
}

// ---------------------------------------------------------------------------------------

namespace {

void check_delta(const LookupTableSet& t, const QuantizedDelta& q) {
  if (q.count != t.signal_count())
    throw ShapeError("quantized delta has " + std::to_string(q.count) + " components, tables expect " +
                     std::to_string(t.signal_count()));
}

// 1D bin and 2D index addressed by factor f of vm group g.
struct VmTerm {
  int bin_1d;
  int index_2d;
};

inline VmTerm vm_term(const QuantizedDelta& q, int group, int k, int t2) {
  const int base = 3 * group;
  const int a = base + (k + 1) % 3;
  const int b = base + (k + 2) % 3;
  return {q.bins[base + k], q.bins_2d[a] * t2 + q.bins_2d[b]};
}

}  // namespace

void crse_accumulate(const LookupTableSet& t, Role role, const QuantizedDelta& q, int domain, std::span<double> out) {
  check_delta(t, q);
  t.check_domain(domain);
  const int d = t.channels();
  if (out.size() != static_cast<std::size_t>(d)) throw ShapeError("output length differs from table channels");
  double* o = out.data();
  const bool mod = is_modulated(t.mode());

  if (!is_vm(t.mode())) {
    for (int m = 0; m < t.group_count(); ++m) {
      const double* e = t.entry(role, m, 0, q.bins[m]).data();
      if (mod) {
        const double s = t.modulation(domain, role, m, 0, q.bins[m]);
        for (int c = 0; c < d; ++c) o[c] += s * e[c];
      } else {
        for (int c = 0; c < d; ++c) o[c] += e[c];
      }
    }
    return;
  }

  const int t2 = t.divisions_2d();
  for (int g = 0; g < t.group_count(); ++g) {
    for (int k = 0; k < 3; ++k) {
      const VmTerm term = vm_term(q, g, k, t2);
      const double* a = t.entry(role, g, k, term.bin_1d).data();
      const double* b = t.entry(role, g, 3 + k, term.index_2d).data();
      if (mod) {
        const double s = t.modulation(domain, role, g, k, term.bin_1d) * t.modulation(domain, role, g, 3 + k, term.index_2d);
        for (int c = 0; c < d; ++c) o[c] += s * (a[c] * b[c]);
      } else {
        for (int c = 0; c < d; ++c) o[c] += a[c] * b[c];
      }
    }
  }
}

Vec crse_lookup(const LookupTableSet& tables, Role role, const QuantizedDelta& delta, int domain) {
  Vec out = Vec::Zero(tables.channels());
  crse_accumulate(tables, role, delta, domain, {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

namespace {
void require_mode(const LookupTableSet& t, CrseMode m) {
  if (t.mode() != m)
    throw ModeError("tables are in mode " + std::string(to_string(t.mode())) + ", operation needs " +
                    std::string(to_string(m)));
}
}  // namespace

Vec crse_base(const QuantizedDelta& delta, const LookupTableSet& tables, Role role) {
  require_mode(tables, CrseMode::base);
  return crse_lookup(tables, role, delta, 0);
}

Vec crse_domain_modulated(const QuantizedDelta& delta, const LookupTableSet& tables, Role role, int domain) {
  require_mode(tables, CrseMode::domain_modulated);
  return crse_lookup(tables, role, delta, domain);
}

Vec vm_crse(const QuantizedDelta& delta, const LookupTableSet& tables, Role role) {
  require_mode(tables, CrseMode::vm);
  return crse_lookup(tables, role, delta, 0);
}

Vec vm_crse_domain_modulated(const QuantizedDelta& delta, const LookupTableSet& tables, Role role, int domain) {
  require_mode(tables, CrseMode::vm_domain_modulated);
  return crse_lookup(tables, role, delta, domain);
}

void crse_backward(const LookupTableSet& t, Role role, const QuantizedDelta& q, int domain,
                   std::span<const double> upstream, LookupTableSet& grad) {
  check_delta(t, q);
  t.check_domain(domain);
  if (!grad.same_shape(t)) throw ShapeError("gradient tables differ in shape");
  const int d = t.channels();
  if (upstream.size() != static_cast<std::size_t>(d)) throw ShapeError("upstream length differs from table channels");
  const double* u = upstream.data();
  const bool mod = is_modulated(t.mode());

  if (!is_vm(t.mode())) {
    for (int m = 0; m < t.group_count(); ++m) {
      const int bin = q.bins[m];
      double* ge = grad.entry(role, m, 0, bin).data();
      if (mod) {
        const double* e = t.entry(role, m, 0, bin).data();
        const double s = t.modulation(domain, role, m, 0, bin);
        double ds = 0.0;
        for (int c = 0; c < d; ++c) {
          ge[c] += s * u[c];
          ds += e[c] * u[c];
        }
        grad.modulation(domain, role, m, 0, bin) += ds;
      } else {
        for (int c = 0; c < d; ++c) ge[c] += u[c];
      }
    }
    return;
  }

  const int t2 = t.divisions_2d();
  for (int g = 0; g < t.group_count(); ++g) {
    for (int k = 0; k < 3; ++k) {
      const VmTerm term = vm_term(q, g, k, t2);
      const double* a = t.entry(role, g, k, term.bin_1d).data();
      const double* b = t.entry(role, g, 3 + k, term.index_2d).data();
      double* ga = grad.entry(role, g, k, term.bin_1d).data();
      double* gb = grad.entry(role, g, 3 + k, term.index_2d).data();
      double s1 = 1.0, s2 = 1.0;
      if (mod) {
        s1 = t.modulation(domain, role, g, k, term.bin_1d);
        s2 = t.modulation(domain, role, g, 3 + k, term.index_2d);
      }
      const double s = s1 * s2;
      double dot = 0.0;
      for (int c = 0; c < d; ++c) {
        ga[c] += s * b[c] * u[c];
        gb[c] += s * a[c] * u[c];
        dot += a[c] * b[c] * u[c];
      }
      if (mod) {
        grad.modulation(domain, role, g, k, term.bin_1d) += s2 * dot;
        grad.modulation(domain, role, g, 3 + k, term.index_2d) += s1 * dot;
      }
    }
  }
}

std::int64_t modulation_param_count(int signal_count, int domains, int divisions, CrseMode mode, int divisions_2d) {
  if (signal_count < 1 || domains < 1 || divisions < 1 || divisions_2d < 1)
    throw RangeError("parameter count arguments must be positive");
  const std::int64_t m = signal_count, l = domains, t = divisions, t2 = divisions_2d;
  switch (mode) {
    case CrseMode::domain_modulated: return 3 * m * l * t;
    case CrseMode::vm_domain_modulated:
      if (signal_count % 3 != 0) throw ShapeError("vm tables need a signal count divisible by 3");
      return 3 * l * (m / 3) * (3 * t + 3 * t2 * t2);
    default: return 0;
  }
}

void init_tables(LookupTableSet& tables, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(kTableInitVariance));
  for (double& x : tables.shared_data()) x = gauss(rng);
  for (double& x : tables.modulation_data()) x = 1.0;
}

// ---------------------------------------------------------------------------------------

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  out.write(b, sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  char b[sizeof(T)];
  if (!in.read(b, sizeof(T))) throw ParseError("table stream ended early");
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace

void write_tables(std::ostream& out, const LookupTableSet& t) {
  out.write("VXLT", 4);
  put<std::uint32_t>(out, kTableFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.mode()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.channels()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.divisions()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.divisions_2d()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.domain_count()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.signal_count()));
  for (double x : t.shared_data()) put(out, x);
  for (double x : t.modulation_data()) put(out, x);
}

LookupTableSet read_tables(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != "VXLT") throw ParseError("not a lookup-table stream");
  const auto version = get<std::uint32_t>(in);
  if (version != kTableFormatVersion) throw ParseError("unsupported table format version " + std::to_string(version));
  const auto mode = get<std::uint32_t>(in);
  if (mode > 3) throw ParseError("invalid table mode");
  const auto d = get<std::uint32_t>(in);
  const auto t = get<std::uint32_t>(in);
  const auto t2 = get<std::uint32_t>(in);
  const auto l = get<std::uint32_t>(in);
  const auto m = get<std::uint32_t>(in);
  LookupTableSet tables(static_cast<CrseMode>(mode), static_cast<int>(d), static_cast<int>(m), static_cast<int>(t),
                        static_cast<int>(t2), static_cast<int>(l));
  for (double& x : tables.shared_data()) x = get<double>(in);
  for (double& x : tables.modulation_data()) x = get<double>(in);
  return tables;
}

}  // namespace voxattn
