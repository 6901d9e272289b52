#include "voxattn/signals.hpp"

#include <cmath>

#include "voxattn/errors.hpp"

namespace voxattn {

SignalMask SignalMask::parse(std::string_view text) {
  std::uint8_t bits = 0;
  for (char c : text) {
    std::uint8_t bit = 0;
    switch (c) {
      case 'p': bit = 1; break;
      case 'c': bit = 2; break;
      case 'n': bit = 4; break;
      default: throw SubsetError("unknown signal letter '" + std::string(1, c) + "' in '" + std::string(text) + "'");
    }
    if (bits & bit) throw SubsetError("duplicate signal letter in '" + std::string(text) + "'");
    bits |= bit;
  }
  if (!(bits & 1u)) throw SubsetError("signal subset '" + std::string(text) + "' must contain p");
  return SignalMask(bits);
}

std::string SignalMask::str() const {
  std::string s = "p";
  if (has(Signal::color)) s += 'c';
  if (has(Signal::normal)) s += 'n';
  return s;
}

void PointCloud::validate() const {
  auto finite = [](const Vec3& v) { return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]); };
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& pt = points[i];
    const auto where = " at point " + std::to_string(i);
    if (!finite(pt.position)) throw DataError("non-finite position" + where);
    if (pt.color.has_value() != mask.has(Signal::color)) throw DataError("color presence disagrees with mask" + where);
    if (pt.normal.has_value() != mask.has(Signal::normal)) throw DataError("normal presence disagrees with mask" + where);
    if (pt.color) {
      if (!finite(*pt.color)) throw DataError("non-finite color" + where);
      for (double c : *pt.color)
        if (c < 0.0 || c > 1.0) throw DataError("color outside [0,1]" + where);
    }
    if (pt.normal) {
      if (!finite(*pt.normal)) throw DataError("non-finite normal" + where);
      const auto& n = *pt.normal;
      const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
      if (std::abs(len - 1.0) > 1e-4) throw DataError("normal is not unit length" + where);
    }
  }
}

std::array<double, kSignalChannels> signal_vector(const PointRecord& point) {
  const Vec3& c = point.color ? *point.color : kVirtualColor;
  const Vec3& n = point.normal ? *point.normal : kVirtualNormal;
  return {point.position[0], point.position[1], point.position[2], c[0], c[1], c[2], n[0], n[1], n[2]};
}

std::string_view signal_name(Signal s) {
  switch (s) {
    case Signal::position: return "position";
    case Signal::color: return "color";
    case Signal::normal: return "normal";
  }
  return "?";
}

Signal parse_signal(std::string_view name) {
  if (name == "position" || name == "p") return Signal::position;
  if (name == "color" || name == "c") return Signal::color;
  if (name == "normal" || name == "n") return Signal::normal;
  throw SignalMaskError("unknown signal '" + std::string(name) + "'");
}

}  // namespace voxattn
