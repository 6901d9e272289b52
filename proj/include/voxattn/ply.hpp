#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string_view>

#include "voxattn/signals.hpp"

namespace voxattn {

enum class PlyFormat { ascii, binary_little_endian };

std::string_view to_string(PlyFormat format);

// Supported subset: a `vertex` element with x,y,z; optionally red,green,blue (uchar,
// rescaled to [0,1]) and nx,ny,nz. Other elements are parsed and skipped.
// When `expected` is set, a file in the other flavor is rejected with ParseError.
PointCloud read_ply(std::istream& in, std::optional<PlyFormat> expected = std::nullopt);
PointCloud load_ply(const std::filesystem::path& path, std::optional<PlyFormat> expected = std::nullopt);

// Writes float32 x,y,z and nx,ny,nz, uchar colors. The ascii flavor prints positions and
// normals with full double precision.
void write_ply(std::ostream& out, const PointCloud& cloud, PlyFormat format);
void save_ply(const std::filesystem::path& path, const PointCloud& cloud, PlyFormat format);

}  // namespace voxattn
