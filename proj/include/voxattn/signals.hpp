#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace voxattn {

using Vec3 = std::array<double, 3>;

/// Row-major dense matrix; rows index voxels (or prompts), columns index channels.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Point signal channels. Position is mandatory for every cloud.
enum class Signal : std::uint8_t { position = 1, color = 2, normal = 4 };

class SignalMask {
 public:
  constexpr SignalMask() = default;
  constexpr explicit SignalMask(std::uint8_t bits) : bits_(bits & 7u) {}
  constexpr SignalMask(Signal s) : bits_(static_cast<std::uint8_t>(s)) {}  // NOLINT

  static constexpr SignalMask p() { return SignalMask(1); }
  static constexpr SignalMask pc() { return SignalMask(3); }
  static constexpr SignalMask pn() { return SignalMask(5); }
  static constexpr SignalMask pcn() { return SignalMask(7); }

  /// Parses the compact spelling used on the command line: "p", "pc", "pn", "pcn".
  static SignalMask parse(std::string_view text);

  constexpr bool has(Signal s) const { return (bits_ & static_cast<std::uint8_t>(s)) != 0; }
  constexpr bool contains(SignalMask other) const { return (bits_ & other.bits_) == other.bits_; }
  constexpr SignalMask with(Signal s) const { return SignalMask(bits_ | static_cast<std::uint8_t>(s)); }
  constexpr std::uint8_t bits() const { return bits_; }

  /// Raw channel count of the embedding input: 3 offset channels plus 3 per optional signal.
  constexpr int embedding_channels() const {
    return 3 + (has(Signal::color) ? 3 : 0) + (has(Signal::normal) ? 3 : 0);
  }

  std::string str() const;

  friend constexpr bool operator==(SignalMask a, SignalMask b) { return a.bits_ == b.bits_; }

 private:
  std::uint8_t bits_ = 1;
};

struct PointRecord {
  Vec3 position{};
  std::optional<Vec3> color;   // components in [0, 1]
  std::optional<Vec3> normal;  // unit length

  friend bool operator==(const PointRecord&, const PointRecord&) = default;
};

struct PointCloud {
  std::vector<PointRecord> points;
  SignalMask mask = SignalMask::p();
  std::optional<int> domain_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  /// Throws DataError if any point violates the cloud invariants.
  void validate() const;

  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

/// Total signal channel count fed to the relative encodings (position, color, normal).
inline constexpr int kSignalChannels = 9;

/// Values assumed for signals a cloud does not carry. Identical for every point, so
/// relative changes on these channels are exactly zero.
inline constexpr Vec3 kVirtualColor{0.5, 0.5, 0.5};
inline constexpr Vec3 kVirtualNormal{0.0, 0.0, 1.0};

/// Nine-channel signal vector (p, c, n) with virtual fill for absent channels.
std::array<double, kSignalChannels> signal_vector(const PointRecord& point);

/// Offset of `signal` within the nine-channel vector.
constexpr int signal_offset(Signal s) {
  return s == Signal::position ? 0 : (s == Signal::color ? 3 : 6);
}

std::string_view signal_name(Signal s);
Signal parse_signal(std::string_view name);

}  // namespace voxattn
