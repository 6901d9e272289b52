#include "voxattn/domain_layers.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "voxattn/errors.hpp"

namespace voxattn {

DomainLayerNorm DomainLayerNorm::identity(int domains, int channels) {
  return {Mat::Ones(domains, channels), Mat::Zero(domains, channels), kLayerNormEpsilon};
}

Mat dsln(const Mat& features, int domain, const DomainLayerNorm& p) {
  if (domain < 0 || domain >= p.domain_count())
    throw DomainError("domain " + std::to_string(domain) + " outside [0, " + std::to_string(p.domain_count()) + ")");
  if (features.cols() != p.channels()) throw ShapeError("feature width differs from the normalization channels");
  const auto d = static_cast<double>(features.cols());
  Mat out(features.rows(), features.cols());
  const auto gamma = p.gamma.row(domain).array();
  const auto beta = p.beta.row(domain).array();
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const auto f = features.row(i).array();
    const double mean = f.sum() / d;
    const double var = (f - mean).square().sum() / d;
    out.row(i) = ((f - mean) / std::sqrt(var + p.epsilon) * gamma + beta).matrix();
  }
  return out;
}

EmbeddingParams EmbeddingParams::zeros(SignalMask mask, int channels) {
  EmbeddingParams e;
  e.mask = mask;
  e.kernel = Mat::Zero(kEmbeddingTaps * mask.embedding_channels(), channels);
  e.bias = Vec::Zero(channels);
  e.norm_gain = Vec::Ones(channels);
  e.norm_bias = Vec::Zero(channels);
  return e;
}

const EmbeddingParams& DomainEmbedding::for_domain(int domain) const {
  if (domain < 0 || domain >= domain_count())
    throw DomainError("domain " + std::to_string(domain) + " outside [0, " + std::to_string(domain_count()) + ")");
  return domains[static_cast<std::size_t>(domain)];
}

EmbeddingParams& DomainEmbedding::for_domain(int domain) {
  return const_cast<EmbeddingParams&>(std::as_const(*this).for_domain(domain));
}

Mat embedding_inputs(const SparseVoxelGrid& grid) {
  const SignalMask mask = grid.mask();
  Mat x(static_cast<Eigen::Index>(grid.size()), mask.embedding_channels());
  const double vs = grid.voxel_size();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& cell = grid.cell(i);
    const auto r = static_cast<Eigen::Index>(i);
    for (int a = 0; a < 3; ++a) x(r, a) = cell.representative.position[a] / vs - cell.coord[a] - 0.5;
    int col = 3;
    if (mask.has(Signal::color))
      for (double c : cell.representative.color.value()) x(r, col++) = c;
    if (mask.has(Signal::normal))
      for (double c : cell.representative.normal.value()) x(r, col++) = c;
  }
  return x;
}

Mat sparse_conv3(const SparseVoxelGrid& grid, const Mat& inputs, const EmbeddingParams& p) {
  const int cin = p.in_channels();
  if (inputs.cols() != cin || static_cast<std::size_t>(inputs.rows()) != grid.size())
    throw ShapeError("embedding inputs do not match the grid and kernel");
  if (p.kernel.rows() != kEmbeddingTaps * cin) throw ShapeError("embedding kernel has the wrong number of rows");
  Mat out(inputs.rows(), p.channels());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& c = grid.cell(i).coord;
    auto row = out.row(static_cast<Eigen::Index>(i));
    row = p.bias.transpose();
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto nb = grid.find({c[0] + dx, c[1] + dy, c[2] + dz});
          if (!nb) continue;
          row.noalias() += inputs.row(static_cast<Eigen::Index>(*nb)) *
                           p.kernel.middleRows(embedding_tap(dx, dy, dz) * cin, cin);
        }
  }
  return out;
}

namespace {

void require_mask(const SparseVoxelGrid& grid, const EmbeddingParams& p, int domain) {
  if (!(grid.mask() == p.mask))
    throw SignalMaskError("grid signals '" + grid.mask().str() + "' do not match domain " + std::to_string(domain) +
                          " signals '" + p.mask.str() + "'");
}

}  // namespace

Mat initial_embed(const SparseVoxelGrid& grid, int domain, const DomainEmbedding& params) {
  const EmbeddingParams& p = params.for_domain(domain);
  require_mask(grid, p, domain);
  if (grid.empty()) throw EmptyInputError("cannot embed an empty grid");
  Mat x = sparse_conv3(grid, embedding_inputs(grid), p);
  Eigen::RowVectorXd mean, var;
  if (p.frozen_mean && p.frozen_var) {
    mean = p.frozen_mean->transpose();
    var = p.frozen_var->transpose();
  } else {
    mean = x.colwise().mean();
    var = (x.rowwise() - mean).array().square().colwise().mean();
  }
  const Eigen::RowVectorXd inv = (var.array() + p.epsilon).rsqrt();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    auto row = x.row(i).array();
    row = ((row - mean.array()) * inv.array() * p.norm_gain.transpose().array() + p.norm_bias.transpose().array())
              .max(0.0);
  }
  return x;
}

void calibrate_embedding(std::span<const SparseVoxelGrid> grids, int domain, DomainEmbedding& params) {
  EmbeddingParams& p = params.for_domain(domain);
  p.frozen_mean.reset();
  p.frozen_var.reset();
  const int d = p.channels();
  Vec sum = Vec::Zero(d), sq = Vec::Zero(d);
  double count = 0.0;
  std::vector<Mat> pre;
  for (const auto& g : grids) {
    require_mask(g, p, domain);
    pre.push_back(sparse_conv3(g, embedding_inputs(g), p));
    sum += pre.back().colwise().sum().transpose();
    count += static_cast<double>(pre.back().rows());
  }
  if (count == 0.0) throw EmptyInputError("calibration needs at least one voxel");
  const Vec mean = sum / count;
  for (const auto& x : pre) sq += (x.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
  p.frozen_mean = mean;
  p.frozen_var = sq / count;
}

}  // namespace voxattn
