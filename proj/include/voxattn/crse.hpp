#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "voxattn/signals.hpp"

namespace voxattn {

// Contextual relative signal encodings: learnable look-up tables that turn quantized
// per-pair signal differences into d-dimensional bias vectors for Q, K and V.
//
//   base                 t_R(ds) = sum_m t_m(q_m)
//   domain_modulated     t_R(ds) = sum_m s^l_m(q_m) * t_m(q_m)
//   vm                   t_R(ds) = sum_r sum_k t_{r,k}(q_k) * t_{r,ij}(q_i, q_j)      (cyclic k,i,j)
//   vm_domain_modulated  each vm factor scaled by its own per-domain scalar table
//
// The vm modes group the signal channels in triples (position, color, normal), replacing a
// full T^3 table per group with three vector-matrix products.

enum class CrseMode : std::uint8_t { base = 0, domain_modulated = 1, vm = 2, vm_domain_modulated = 3 };
enum class Role : std::uint8_t { q = 0, k = 1, v = 2 };

inline constexpr std::array<CrseMode, 4> kAllCrseModes{CrseMode::base, CrseMode::domain_modulated, CrseMode::vm,
                                                       CrseMode::vm_domain_modulated};
inline constexpr std::array<Role, 3> kAllRoles{Role::q, Role::k, Role::v};

constexpr bool is_modulated(CrseMode m) { return m == CrseMode::domain_modulated || m == CrseMode::vm_domain_modulated; }
constexpr bool is_vm(CrseMode m) { return m == CrseMode::vm || m == CrseMode::vm_domain_modulated; }

std::string_view to_string(CrseMode mode);
std::string_view to_string(Role role);
CrseMode parse_crse_mode(std::string_view text);

struct QuantizerSpec {
  std::vector<double> lower;  // per signal component
  std::vector<double> upper;
  int divisions = 16;         // T, bins of 1D tables
  int divisions_2d = 4;       // T2, bins per axis of 2D tables

  int signal_count() const { return static_cast<int>(lower.size()); }
  void validate() const;

  /// Bounds [-w, w] per component.
  static QuantizerSpec symmetric(const std::vector<double>& half_widths, int divisions = 16, int divisions_2d = 4);

  /// Nine-channel bounds for in-window deltas: position +-(window_size-1) voxels, color
  /// +-1, normal components +-2.
  static QuantizerSpec for_window(int window_size, double voxel_size, int divisions = 16, int divisions_2d = 4);
};

inline constexpr int kMaxSignals = 16;

/// A delta quantized for both table resolutions.
struct QuantizedDelta {
  int count = 0;
  std::array<int, kMaxSignals> bins{};     // T divisions
  std::array<int, kMaxSignals> bins_2d{};  // T2 divisions
};

/// clamp(floor((delta - lo) / (hi - lo) * divisions), 0, divisions - 1)
int quantize_component(double delta, double lo, double hi, int divisions);

std::vector<int> quantize(std::span<const double> delta, const QuantizerSpec& spec);
std::vector<int> quantize_2d(std::span<const double> delta, const QuantizerSpec& spec);
QuantizedDelta quantize_delta(std::span<const double> delta, const QuantizerSpec& spec);

/// Shared tables and per-domain modulation scalars for the three roles.
///
/// Shared entries are d-vectors addressed by (role, group, factor, index). Cross modes
/// (base / domain_modulated) have one group per signal component with a single factor of
/// T entries. vm modes have one group per signal triple with six factors: three 1D
/// factors of T entries, then the 2D factors (1,2), (2,0), (0,1) of T2*T2 entries,
/// index = T2 * bin_first + bin_second. Modulation scalars mirror the shared layout, one
/// per entry, per domain.
class LookupTableSet {
 public:
  LookupTableSet() = default;
  LookupTableSet(CrseMode mode, int channels, int signal_count, int divisions, int divisions_2d, int domains);

  CrseMode mode() const { return mode_; }
  int channels() const { return channels_; }
  int signal_count() const { return signals_; }
  int divisions() const { return divisions_; }
  int divisions_2d() const { return divisions_2d_; }
  int domain_count() const { return domains_; }
  int group_count() const { return groups_; }
  int factor_count() const { return static_cast<int>(factor_offset_.size()) - 1; }
  int factor_size(int factor) const { return static_cast<int>(factor_offset_[factor + 1] - factor_offset_[factor]); }

  /// Shared d-vectors per role.
  std::size_t entries_per_role() const { return role_entries_; }
  std::size_t shared_parameter_count() const { return shared_.size(); }
  std::size_t modulation_count() const { return modulation_.size(); }

  std::span<double> entry(Role r, int group, int factor, int index) {
    return {shared_.data() + entry_offset(r, group, factor, index) * static_cast<std::size_t>(channels_),
            static_cast<std::size_t>(channels_)};
  }
  std::span<const double> entry(Role r, int group, int factor, int index) const {
    return {shared_.data() + entry_offset(r, group, factor, index) * static_cast<std::size_t>(channels_),
            static_cast<std::size_t>(channels_)};
  }
  double& modulation(int domain, Role r, int group, int factor, int index) {
    return modulation_[modulation_offset(domain, r, group, factor, index)];
  }
  double modulation(int domain, Role r, int group, int factor, int index) const {
    return modulation_[modulation_offset(domain, r, group, factor, index)];
  }

  /// Flat storage in serialization order: role -> group -> factor -> index -> channel,
  /// and domain -> role -> group -> factor -> index for modulation.
  std::span<double> shared_data() { return shared_; }
  std::span<const double> shared_data() const { return shared_; }
  std::span<double> modulation_data() { return modulation_; }
  std::span<const double> modulation_data() const { return modulation_; }

  /// Same shape, all values zero (gradient accumulator).
  LookupTableSet zeros_like() const;
  bool same_shape(const LookupTableSet& other) const;

  /// Throws DomainError unless the mode is unmodulated or `domain` is registered.
  void check_domain(int domain) const;

  std::size_t entry_offset(Role r, int group, int factor, int index) const {
    return static_cast<std::size_t>(r) * role_entries_ + static_cast<std::size_t>(group) * group_entries_ +
           factor_offset_[factor] + static_cast<std::size_t>(index);
  }
  std::size_t modulation_offset(int domain, Role r, int group, int factor, int index) const {
    return static_cast<std::size_t>(domain) * 3 * role_entries_ + entry_offset(r, group, factor, index);
  }

 private:
  CrseMode mode_ = CrseMode::base;
  int channels_ = 0;
  int signals_ = 0;
  int divisions_ = 0;
  int divisions_2d_ = 0;
  int domains_ = 0;
  int groups_ = 0;
  std::vector<std::size_t> factor_offset_{0};
  std::size_t group_entries_ = 0;
  std::size_t role_entries_ = 0;
  std::vector<double> shared_;
  std::vector<double> modulation_;
};

/// Adds the encoding of `delta` to `out` (length = channels). `domain` is ignored by the
/// unmodulated modes.
void crse_accumulate(const LookupTableSet& tables, Role role, const QuantizedDelta& delta, int domain,
                     std::span<double> out);

/// Mode-dispatching lookup.
Vec crse_lookup(const LookupTableSet& tables, Role role, const QuantizedDelta& delta, int domain = 0);

// Mode-checked entry points; ModeError if the table mode differs.
Vec crse_base(const QuantizedDelta& delta, const LookupTableSet& tables, Role role);
Vec crse_domain_modulated(const QuantizedDelta& delta, const LookupTableSet& tables, Role role, int domain);
Vec vm_crse(const QuantizedDelta& delta, const LookupTableSet& tables, Role role);
Vec vm_crse_domain_modulated(const QuantizedDelta& delta, const LookupTableSet& tables, Role role, int domain);

/// Accumulates d(loss)/d(entries) into `grad` (same shape as `tables`) given
/// d(loss)/d(lookup output) = `upstream`.
void crse_backward(const LookupTableSet& tables, Role role, const QuantizedDelta& delta, int domain,
                   std::span<const double> upstream, LookupTableSet& grad);

/// Number of domain-modulation scalars in one block's tables: 3*M*L*T for
/// domain_modulated, 3*L*(M/3)*(3*T + 3*T2^2) for vm_domain_modulated, 0 otherwise.
std::int64_t modulation_param_count(int signal_count, int domains, int divisions, CrseMode mode, int divisions_2d = 4);

inline constexpr double kTableInitVariance = 0.02;

/// Shared entries ~ Normal(0, variance 0.02); modulation scalars = 1. Deterministic per seed.
void init_tables(LookupTableSet& tables, std::uint64_t seed);

inline constexpr std::uint32_t kTableFormatVersion = 1;

/// Binary layout: "VXLT", u32 version, u32 mode, u32 channels, u32 T, u32 T2, u32 domains,
/// u32 signals, shared entries then modulation scalars as little-endian float64.
void write_tables(std::ostream& out, const LookupTableSet& tables);
LookupTableSet read_tables(std::istream& in);

}  // namespace voxattn
