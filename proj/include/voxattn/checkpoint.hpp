#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "voxattn/encoder.hpp"

namespace voxattn {

// Checkpoint layout (little endian):
//   "VXCK" u32 version
//   u64 config length, config JSON bytes
//   u32 blob count, then per blob: u32 name length, name, u64 value count, f64 values
// Blobs follow for_each_parameter order. Frozen embedding statistics are optional blobs
// named embedding.d<l>.frozen_mean / frozen_var.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Model& model);
Model read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

// Feature dump layout (little endian):
//   "VXFD" u32 version, u32 level count
//   per level: u32 voxel count, u32 channels, voxel count x 3 i32 coords, then
//   voxel count x channels f32 features, row-major
inline constexpr std::uint32_t kFeatureDumpVersion = 1;

struct FeatureLevel {
  std::vector<VoxelCoord> coords;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> features;
};

void write_feature_dump(std::ostream& out, const EncoderOutput& output);
std::vector<FeatureLevel> read_feature_dump(std::istream& in);

}  // namespace voxattn
