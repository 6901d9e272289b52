#include "voxattn/augmentation.hpp"

#include <algorithm>

#include "voxattn/errors.hpp"

namespace voxattn {

int DomainRegistry::add(const std::string& dataset, SignalMask subset) {
  for (const auto& s : sources_)
    if (s.dataset == dataset && s.subset == subset) return s.domain_id;
  const int id = size();
  sources_.push_back({dataset, subset, id});
  return id;
}

const SourceDescriptor& DomainRegistry::at(int domain) const {
  if (domain < 0 || domain >= size())
    throw DomainError("domain " + std::to_string(domain) + " outside the valid range [0, " + std::to_string(size()) + ")");
  return sources_[static_cast<std::size_t>(domain)];
}

std::vector<SignalMask> default_subsets(SignalMask available) {
  std::vector<SignalMask> out;
  for (SignalMask m : {SignalMask::p(), SignalMask::pc(), SignalMask::pn(), SignalMask::pcn()})
    if (available.contains(m)) out.push_back(m);
  return out;
}

std::vector<SourceDescriptor> augment_sources(DomainRegistry& registry, const std::string& dataset, SignalMask available,
                                              const std::vector<SignalMask>& subsets) {
  // Validate everything before registering anything.
  for (SignalMask m : subsets) {
    if (!m.has(Signal::position)) throw SubsetError("subset '" + m.str() + "' does not contain positions");
    if (!available.contains(m))
      throw MaskError("subset '" + m.str() + "' needs signals dataset '" + dataset + "' (" + available.str() + ") lacks");
  }
  std::vector<SourceDescriptor> out;
  for (SignalMask m : subsets) out.push_back(registry.at(registry.add(dataset, m)));
  return out;
}

std::vector<SourceDescriptor> augment_sources(DomainRegistry& registry, const std::string& dataset, SignalMask available) {
  return augment_sources(registry, dataset, available, default_subsets(available));
}

PointCloud virtualize_signals(const PointCloud& cloud, SignalMask target) {
  if (!target.contains(cloud.mask))
    throw MaskError("cannot virtualize '" + cloud.mask.str() + "' to '" + target.str() + "'; project instead");
  PointCloud out = cloud;
  out.mask = target;
  const bool add_color = target.has(Signal::color) && !cloud.mask.has(Signal::color);
  const bool add_normal = target.has(Signal::normal) && !cloud.mask.has(Signal::normal);
  for (auto& p : out.points) {
    if (add_color) p.color = kVirtualColor;
    if (add_normal) p.normal = kVirtualNormal;
  }
  return out;
}

PointCloud project_signals(const PointCloud& cloud, SignalMask target) {
  if (!target.has(Signal::position)) throw SubsetError("subset '" + target.str() + "' does not contain positions");
  if (!cloud.mask.contains(target))
    throw MaskError("cannot project '" + cloud.mask.str() + "' to '" + target.str() + "'; virtualize instead");
  PointCloud out = cloud;
  out.mask = target;
  for (auto& p : out.points) {
    if (!target.has(Signal::color)) p.color.reset();
    if (!target.has(Signal::normal)) p.normal.reset();
  }
  return out;
}

MixSchedule::MixSchedule(std::vector<SourceRatio> ratios) {
  if (ratios.empty()) throw RangeError("mix schedule needs at least one source");
  for (const auto& r : ratios)
    if (r.ratio <= 0) throw RangeError("mix ratios must be positive");
  std::stable_sort(ratios.begin(), ratios.end(), [](const SourceRatio& a, const SourceRatio& b) {
    return a.ratio != b.ratio ? a.ratio > b.ratio : a.source < b.source;
  });
  for (const auto& r : ratios) cycle_.insert(cycle_.end(), static_cast<std::size_t>(r.ratio), r.source);
}

std::vector<int> MixSchedule::take(long long count) const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0LL)));
  for (long long b = 0; b < count; ++b) out.push_back(source_at(b));
  return out;
}

}  // namespace voxattn
