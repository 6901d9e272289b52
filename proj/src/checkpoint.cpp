#include "voxattn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include "voxattn/errors.hpp"

namespace voxattn {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError(std::string("truncated ") + what);
  return v;
}

void put_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void get_bytes(std::istream& in, void* data, std::size_t n, const char* what) {
  if (!in.read(static_cast<char*>(data), static_cast<std::streamsize>(n))) throw ParseError(std::string("truncated ") + what);
}

void check_magic(std::istream& in, const char* magic, const char* what) {
  char m[4];
  get_bytes(in, m, 4, what);
  if (std::memcmp(m, magic, 4) != 0) throw ParseError(std::string("not a ") + what + " (bad magic)");
}

// Rejects absurd sizes before allocating.
constexpr std::uint64_t kMaxBlobValues = std::uint64_t{1} << 32;

}  // namespace

void write_checkpoint(std::ostream& out, const Model& model) {
  out.write("VXCK", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = model.config.to_json();
  put<std::uint64_t>(out, cfg.size());
  put_bytes(out, cfg.data(), cfg.size());

  std::vector<std::pair<std::string, std::span<const double>>> blobs;
  for_each_parameter(model, [&](const std::string& name, ParamCategory, std::span<const double> v) { blobs.emplace_back(name, v); });
  for (std::size_t l = 0; l < model.embedding.domains.size(); ++l) {
    const auto& e = model.embedding.domains[l];
    const std::string p = "embedding.d" + std::to_string(l) + ".";
    if (e.frozen_mean) blobs.emplace_back(p + "frozen_mean", std::span<const double>(e.frozen_mean->data(), e.frozen_mean->size()));
    if (e.frozen_var) blobs.emplace_back(p + "frozen_var", std::span<const double>(e.frozen_var->data(), e.frozen_var->size()));
  }

  put<std::uint32_t>(out, static_cast<std::uint32_t>(blobs.size()));
  for (const auto& [name, v] : blobs) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put<std::uint64_t>(out, v.size());
    put_bytes(out, v.data(), v.size() * sizeof(double));
  }
  if (!out) throw DataError("failed to write checkpoint");
}

Model read_checkpoint(std::istream& in) {
  check_magic(in, "VXCK", "checkpoint");
  const auto version = get<std::uint32_t>(in, "checkpoint header");
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const auto cfg_len = get<std::uint64_t>(in, "checkpoint header");
  if (cfg_len > (std::uint64_t{1} << 24)) throw ParseError("checkpoint config too large");
  std::string cfg(cfg_len, '\0');
  get_bytes(in, cfg.data(), cfg.size(), "checkpoint config");

  std::map<std::string, std::vector<double>> blobs;
  const auto count = get<std::uint32_t>(in, "checkpoint blob table");
  for (std::uint32_t b = 0; b < count; ++b) {
    const auto name_len = get<std::uint32_t>(in, "checkpoint blob");
    if (name_len > 4096) throw ParseError("checkpoint blob name too long");
    std::string name(name_len, '\0');
    get_bytes(in, name.data(), name.size(), "checkpoint blob");
    const auto n = get<std::uint64_t>(in, "checkpoint blob");
    if (n > kMaxBlobValues) throw ParseError("checkpoint blob '" + name + "' too large");
    std::vector<double> values(n);
    get_bytes(in, values.data(), n * sizeof(double), "checkpoint blob");
    if (!blobs.emplace(std::move(name), std::move(values)).second) throw ParseError("duplicate checkpoint blob");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("trailing bytes after checkpoint");

  Model model = allocate_model(ModelConfig::from_json(cfg));
  for_each_parameter(model, [&](const std::string& name, ParamCategory, std::span<double> dst) {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw ParseError("checkpoint is missing blob '" + name + "'");
    if (it->second.size() != dst.size())
      throw ParseError("checkpoint blob '" + name + "' has " + std::to_string(it->second.size()) + " values, expected " +
                       std::to_string(dst.size()));
    std::copy(it->second.begin(), it->second.end(), dst.begin());
    blobs.erase(it);
  });
  for (std::size_t l = 0; l < model.embedding.domains.size(); ++l) {
    auto& e = model.embedding.domains[l];
    const std::string p = "embedding.d" + std::to_string(l) + ".";
    for (auto [suffix, slot] : {std::pair{"frozen_mean", &e.frozen_mean}, std::pair{"frozen_var", &e.frozen_var}}) {
      auto it = blobs.find(p + suffix);
      if (it == blobs.end()) continue;
      if (static_cast<int>(it->second.size()) != e.channels()) throw ParseError("checkpoint blob '" + it->first + "' has the wrong size");
      *slot = Eigen::Map<const Vec>(it->second.data(), static_cast<Eigen::Index>(it->second.size()));
      blobs.erase(it);
    }
  }
  if (!blobs.empty()) throw ParseError("checkpoint has unknown blob '" + blobs.begin()->first + "'");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, model);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

void write_feature_dump(std::ostream& out, const EncoderOutput& output) {
  if (output.grids.size() != output.features.size()) throw InternalError("feature/grid level mismatch");
  out.write("VXFD", 4);
  put<std::uint32_t>(out, kFeatureDumpVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(output.grids.size()));
  for (std::size_t s = 0; s < output.grids.size(); ++s) {
    const auto& grid = output.grids[s];
    const Mat& f = output.features[s];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(grid.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(f.cols()));
    for (const auto& c : grid.cells())
      for (int a = 0; a < 3; ++a) put<std::int32_t>(out, c.coord[static_cast<std::size_t>(a)]);
    for (Eigen::Index i = 0; i < f.size(); ++i) put<float>(out, static_cast<float>(f.data()[i]));
  }
  if (!out) throw DataError("failed to write feature dump");
}

std::vector<FeatureLevel> read_feature_dump(std::istream& in) {
  check_magic(in, "VXFD", "feature dump");
  const auto version = get<std::uint32_t>(in, "feature dump header");
  if (version != kFeatureDumpVersion) throw ParseError("unsupported feature dump version " + std::to_string(version));
  const auto levels = get<std::uint32_t>(in, "feature dump header");
  std::vector<FeatureLevel> out(levels);
  for (auto& level : out) {
    const auto n = get<std::uint32_t>(in, "feature dump level");
    const auto d = get<std::uint32_t>(in, "feature dump level");
    level.coords.resize(n);
    for (auto& c : level.coords)
      for (auto& a : c) a = get<std::int32_t>(in, "feature dump coords");
    level.features.resize(n, d);
    get_bytes(in, level.features.data(), static_cast<std::size_t>(n) * d * sizeof(float), "feature dump features");
  }
  return out;
}

}  // namespace voxattn
