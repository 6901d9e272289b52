#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "voxattn/attention.hpp"
#include "voxattn/crse.hpp"
#include "voxattn/domain_layers.hpp"
#include "voxattn/signals.hpp"
#include "voxattn/voxel_grid.hpp"

namespace voxattn {

struct DomainSpec {
  std::string name;
  SignalMask mask = SignalMask::pcn();
};

struct ModelConfig {
  int levels = 5;
  std::vector<int> layer_counts{2, 4, 9, 4, 4};
  std::vector<int> window_sizes{5, 7, 7, 7, 7};
  std::vector<int> channels{48, 96, 192, 384, 384};
  std::vector<int> heads{6, 6, 12, 24, 24};
  CrseMode crse_mode = CrseMode::vm_domain_modulated;
  int prompt_count = kDefaultPromptCount;
  std::vector<DomainSpec> domains{{"source0", SignalMask::pcn()}, {"source1", SignalMask::pcn()}};
  double voxel_size = 0.02;  // finest level, meters
  int divisions = 16;
  int divisions_2d = 4;
  int pool_neighbors = kDefaultPoolNeighbors;
  int mlp_ratio = 4;

  int domain_count() const { return static_cast<int>(domains.size()); }
  int block_count() const;
  /// Throws ConfigError on inconsistent settings.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
  static ModelConfig load(const std::filesystem::path& path);

  friend bool operator==(const ModelConfig&, const ModelConfig&);
};

struct Mlp {
  Mat w1;  // d x (ratio * d)
  Vec b1;
  Mat w2;  // (ratio * d) x d
  Vec b2;
};

struct BlockParams {
  ProjectionSet proj;
  LookupTableSet tables;
  PromptBank prompts;
  DomainLayerNorm norm1;  // before attention
  DomainLayerNorm norm2;  // before the MLP
  Mlp mlp;
};

struct DownsampleParams {
  DomainLayerNorm norm;
  Mat weight;  // d_in x d_out
  Vec bias;
};

struct StageParams {
  std::vector<BlockParams> blocks;
  std::optional<DownsampleParams> downsample;  // absent on the last stage
};

struct Model {
  ModelConfig config;
  DomainEmbedding embedding;
  std::vector<StageParams> stages;
};

/// All parameters with their shapes, zero-filled (DSLN gains and modulation scalars at 1).
Model allocate_model(const ModelConfig& config);

/// Projections, MLP weights, prompts and embedding kernels ~ Normal(0, std 0.02); tables per
/// init_tables; biases zero; normalization gains one.
void initialize_parameters(Model& model, std::uint64_t seed);

Model build_model(const ModelConfig& config, std::uint64_t seed);

enum class ParamCategory { embedding, block_shared, block_domain, other_shared, other_domain };

using ParamVisitor = std::function<void(const std::string& name, ParamCategory category, std::span<double> values)>;
using ConstParamVisitor =
    std::function<void(const std::string& name, ParamCategory category, std::span<const double> values)>;

/// Visits every trainable parameter blob in a fixed order.
void for_each_parameter(Model& model, const ParamVisitor& visit);
void for_each_parameter(const Model& model, const ConstParamVisitor& visit);

struct ParameterBreakdown {
  std::int64_t embedding = 0;
  std::int64_t blocks_shared = 0;
  std::int64_t blocks_domain_specific = 0;
  std::int64_t other = 0;  // downsample layers
  std::vector<std::int64_t> modulation_per_block;

  std::int64_t total() const { return embedding + blocks_shared + blocks_domain_specific + other; }
};

ParameterBreakdown count_parameters(const Model& model);

/// FNV-1a over the bytes of every parameter, in visiting order.
std::uint64_t parameter_checksum(const Model& model);

/// Nine-channel signal matrix (virtual fill for absent signals) of the representatives.
Mat grid_signals(const SparseVoxelGrid& grid);

/// One block: x + attn(dsln1(x)), then + mlp(dsln2(x)). Windows are shifted when `shifted`.
Mat block_forward(const BlockParams& block, const SparseVoxelGrid& grid, const Mat& signals, const Mat& features,
                  int domain, const AttentionConfig& attention, const QuantizerSpec& quantizer, bool shifted);

struct EncoderOutput {
  std::vector<SparseVoxelGrid> grids;  // one per level
  std::vector<Mat> features;           // rows follow grid cell order
};

/// Embedding, then per stage its blocks (regular, shifted, regular, ...), then
/// dsln -> linear -> KNN pooling into the next level.
EncoderOutput forward(const Model& model, const PointCloud& cloud, int domain);

/// Throws DomainError / SignalMaskError when `cloud` cannot be fed as `domain`.
void check_domain_input(const ModelConfig& config, const PointCloud& cloud, int domain);

}  // namespace voxattn
