#pragma once

#include <optional>
#include <span>
#include <vector>

#include "voxattn/signals.hpp"
#include "voxattn/voxel_grid.hpp"

namespace voxattn {

inline constexpr double kLayerNormEpsilon = 1e-5;

/// LayerNorm over channels with one (gamma, beta) pair per domain.
struct DomainLayerNorm {
  Mat gamma;  // L x d
  Mat beta;   // L x d
  double epsilon = kLayerNormEpsilon;

  static DomainLayerNorm identity(int domains, int channels);
  int domain_count() const { return static_cast<int>(gamma.rows()); }
  int channels() const { return static_cast<int>(gamma.cols()); }
};

/// (f - mean(f)) / sqrt(var(f) + eps) * gamma_l + beta_l for every row f.
Mat dsln(const Mat& features, int domain, const DomainLayerNorm& params);

inline constexpr int kEmbeddingTaps = 27;

/// Tap of neighbor offset (dx, dy, dz) in {-1, 0, 1}^3.
constexpr int embedding_tap(int dx, int dy, int dz) { return (dx + 1) * 9 + (dy + 1) * 3 + (dz + 1); }

/// One domain's 3x3x3 sparse convolution, channel normalization and rectifier.
struct EmbeddingParams {
  SignalMask mask;
  Mat kernel;     // (27 * in_channels) x d, rows [tap * in_channels, (tap + 1) * in_channels)
  Vec bias;       // d
  Vec norm_gain;  // d
  Vec norm_bias;  // d
  std::optional<Vec> frozen_mean;  // set by calibrate_embedding
  std::optional<Vec> frozen_var;
  double epsilon = kLayerNormEpsilon;

  static EmbeddingParams zeros(SignalMask mask, int channels);
  int in_channels() const { return mask.embedding_channels(); }
  int channels() const { return static_cast<int>(bias.size()); }
};

struct DomainEmbedding {
  std::vector<EmbeddingParams> domains;

  int domain_count() const { return static_cast<int>(domains.size()); }
  const EmbeddingParams& for_domain(int domain) const;
  EmbeddingParams& for_domain(int domain);
};

/// Raw per-voxel input: representative offset from the voxel center in voxel units
/// ([-0.5, 0.5]), then color and normal when the grid carries them.
Mat embedding_inputs(const SparseVoxelGrid& grid);

/// Sparse 3x3x3 convolution over occupied neighbors only (before normalization).
Mat sparse_conv3(const SparseVoxelGrid& grid, const Mat& inputs, const EmbeddingParams& params);

/// Convolution, per-channel normalization (frozen statistics if calibrated, otherwise the
/// statistics of this grid), affine, then max(0, x).
Mat initial_embed(const SparseVoxelGrid& grid, int domain, const DomainEmbedding& params);

/// Freezes the normalization statistics of `domain` from the pooled voxels of `grids`.
void calibrate_embedding(std::span<const SparseVoxelGrid> grids, int domain, DomainEmbedding& params);

}  // namespace voxattn
