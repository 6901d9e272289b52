#pragma once

#include <span>
#include <vector>

#include "voxattn/crse.hpp"
#include "voxattn/signals.hpp"

namespace voxattn {

inline constexpr int kDefaultPromptCount = 5;

struct AttentionConfig {
  int channels = 0;  // d
  int heads = 1;
  int window_size = 5;
  int prompt_count = kDefaultPromptCount;  // B
  CrseMode mode = CrseMode::vm_domain_modulated;

  int head_dim() const { return channels / heads; }
  /// Scores are divided by sqrt(d) of the full channel width, not of one head.
  double scale() const;
  void validate() const;
};

/// Row-vector convention: projected query of voxel i is features.row(i) * q.
struct ProjectionSet {
  Mat q, k, v;  // d x d

  static ProjectionSet zeros(int channels);
};

/// Learnable virtual key/value voxels of one block, one B x d matrix per domain.
struct PromptBank {
  std::vector<Mat> features;

  static PromptBank zeros(int domains, int prompts, int channels);
  int domain_count() const { return static_cast<int>(features.size()); }
  int prompt_count() const { return features.empty() ? 0 : static_cast<int>(features.front().rows()); }
  /// DomainError for unregistered domains.
  const Mat& for_domain(int domain) const;
};

/// Features and signal vectors of the nonempty voxels in one window.
struct WindowInputs {
  Mat features;  // N x d
  Mat signals;   // N x M, relative encodings see signals.row(i) - signals.row(j)
};

/// Parameters shared by all windows of one block for one domain.
struct AttentionParams {
  const ProjectionSet& proj;
  const LookupTableSet& tables;
  const QuantizerSpec& quantizer;
  const Mat& prompts;  // B x d for the active domain; zero rows disables prompts
  int domain = 0;
};

/// Row-by-row score evaluation without materializing an N x N matrix.
class ScoreSupplier {
 public:
  ScoreSupplier(const WindowInputs& in, const AttentionParams& params, const AttentionConfig& config);

  std::size_t voxel_count() const;
  std::size_t prompt_count() const;
  /// Scores of query i against every real voxel (`real`, length N) and prompt (`prompt`, length B) in `head`.
  void row(std::size_t i, int head, std::span<double> real, std::span<double> prompt) const;

 private:
  const WindowInputs& in_;
  AttentionParams params_;
  AttentionConfig config_;
  Mat q_, k_, pk_;
};

/// Intermediates kept by the forward pass for the backward pass. Memory is linear in N + B.
struct ForwardCache {
  Mat q, k, v;       // N x d projections
  Mat pk, pv;        // B x d projected prompts
  Mat row_max;       // N x H softmax statistics
  Mat row_sum;
  Mat output;        // N x d
};

/// Streaming two-pass windowed attention with relative encodings and prompts.
Mat window_attention_forward(const WindowInputs& in, const AttentionParams& params, const AttentionConfig& config,
                             ForwardCache* cache = nullptr);

struct ReferenceResult {
  Mat output;                 // N x d
  std::vector<Mat> weights;   // per head, N x (N + B): real voxels first, then prompts
};

/// Dense oracle: materializes every encoding and full score rows, then applies an explicit softmax.
ReferenceResult window_attention_reference(const WindowInputs& in, const AttentionParams& params,
                                           const AttentionConfig& config);

struct WindowGradients {
  Mat features;  // N x d
  Mat q, k, v;   // d x d
  Mat prompts;   // B x d
  LookupTableSet tables;  // same shape as the forward tables
};

/// Gradients of sum(upstream .* output) given the forward cache of the same inputs.
WindowGradients window_attention_backward(const WindowInputs& in, const AttentionParams& params,
                                          const AttentionConfig& config, const ForwardCache& cache,
                                          const Mat& upstream);

/// Softmax mass on the prompts for every query voxel, averaged over heads.
Vec prompt_attention_mass(const WindowInputs& in, const AttentionParams& params, const AttentionConfig& config);

}  // namespace voxattn
