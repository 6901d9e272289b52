#pragma once

#include <string>
#include <vector>

#include "voxattn/signals.hpp"

namespace voxattn {

struct SourceDescriptor {
  std::string dataset;
  SignalMask subset;
  int domain_id = 0;

  friend bool operator==(const SourceDescriptor&, const SourceDescriptor&) = default;
};

/// Hands out consecutive domain ids; the same (dataset, subset) pair keeps its id.
class DomainRegistry {
 public:
  int add(const std::string& dataset, SignalMask subset);
  int size() const { return static_cast<int>(sources_.size()); }
  const std::vector<SourceDescriptor>& sources() const { return sources_; }
  const SourceDescriptor& at(int domain) const;

 private:
  std::vector<SourceDescriptor> sources_;
};

/// {p}, {p,c}, {p,n}, {p,c,n} restricted to what `available` carries.
std::vector<SignalMask> default_subsets(SignalMask available);

/// One descriptor per subset, registered in order. Throws SubsetError when a subset lacks
/// position and MaskError when it asks for a signal the dataset does not carry.
std::vector<SourceDescriptor> augment_sources(DomainRegistry& registry, const std::string& dataset, SignalMask available,
                                              const std::vector<SignalMask>& subsets);
std::vector<SourceDescriptor> augment_sources(DomainRegistry& registry, const std::string& dataset, SignalMask available);

/// Fills signals missing from `cloud` with the constant virtual values. Existing channels
/// are copied untouched. Throws MaskError when `target` drops a signal the cloud carries.
PointCloud virtualize_signals(const PointCloud& cloud, SignalMask target);

/// Removes the signals not in `target`. Throws MaskError unless `target` is a subset of
/// the cloud's mask and SubsetError when it lacks position.
PointCloud project_signals(const PointCloud& cloud, SignalMask target);

struct SourceRatio {
  int source = 0;
  int ratio = 1;
};

/// Repeating batch-source cycle. Slots are ordered by descending ratio, then source id.
class MixSchedule {
 public:
  explicit MixSchedule(std::vector<SourceRatio> ratios);

  const std::vector<int>& cycle() const { return cycle_; }
  int source_at(long long batch) const { return cycle_[static_cast<std::size_t>(batch % static_cast<long long>(cycle_.size()))]; }
  /// The first `count` batch sources.
  std::vector<int> take(long long count) const;

 private:
  std::vector<int> cycle_;
};

}  // namespace voxattn
