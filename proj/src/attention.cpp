#include "voxattn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "voxattn/errors.hpp"

namespace voxattn {

double AttentionConfig::scale() const { return 1.0 / std::sqrt(static_cast<double>(channels)); }

void AttentionConfig::validate() const {
  if (channels < 1 || heads < 1) throw ConfigError("attention needs positive channels and heads");
  if (channels % heads != 0)
    throw ConfigError("channels " + std::to_string(channels) + " not divisible by heads " + std::to_string(heads));
  if (prompt_count < 0) throw ConfigError("prompt count must be non-negative");
  if (window_size < 1) throw ConfigError("window size must be positive");
}

ProjectionSet ProjectionSet::zeros(int channels) {
  return {Mat::Zero(channels, channels), Mat::Zero(channels, channels), Mat::Zero(channels, channels)};
}

PromptBank PromptBank::zeros(int domains, int prompts, int channels) {
  PromptBank bank;
  bank.features.assign(static_cast<std::size_t>(domains), Mat::Zero(prompts, channels));
  return bank;
}

const Mat& PromptBank::for_domain(int domain) const {
  if (domain < 0 || domain >= domain_count())
    throw DomainError("domain " + std::to_string(domain) + " outside [0, " + std::to_string(domain_count()) + ")");
  return features[static_cast<std::size_t>(domain)];
}

namespace {

void check_inputs(const WindowInputs& in, const AttentionParams& p, const AttentionConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = cfg.channels;
  if (in.features.rows() == 0) throw EmptyWindowError("attention window has no voxels");
  if (in.features.cols() != d) throw ShapeError("feature width differs from the attention channels");
  if (in.signals.rows() != in.features.rows()) throw ShapeError("one signal vector per voxel is required");
  if (in.signals.cols() != p.tables.signal_count() || p.quantizer.signal_count() != p.tables.signal_count())
    throw ShapeError("signal width differs from the table signal count");
  if (p.tables.channels() != d) throw ShapeError("table channels differ from the attention channels");
  if (p.tables.mode() != cfg.mode) throw ModeError("table mode differs from the attention configuration");
  for (const Mat* m : {&p.proj.q, &p.proj.k, &p.proj.v})
    if (m->rows() != d || m->cols() != d) throw ShapeError("projection matrices must be d x d");
  if (p.prompts.rows() > 0 && p.prompts.cols() != d) throw ShapeError("prompt width differs from the channels");
  p.tables.check_domain(p.domain);
}

QuantizedDelta pair_delta(const Mat& s, Eigen::Index i, Eigen::Index j, const QuantizerSpec& spec) {
  std::array<double, kMaxSignals> buf{};
  const auto m = static_cast<std::size_t>(s.cols());
  for (std::size_t c = 0; c < m; ++c) buf[c] = s(i, static_cast<Eigen::Index>(c)) - s(j, static_cast<Eigen::Index>(c));
  return quantize_delta({buf.data(), m}, spec);
}

// Relative encodings of one (i, j) pair for the three roles.
struct PairTables {
  explicit PairTables(int d) : tq(static_cast<std::size_t>(d)), tk(static_cast<std::size_t>(d)), tv(static_cast<std::size_t>(d)) {}
  std::vector<double> tq, tk, tv;

  void eval(const AttentionParams& p, const QuantizedDelta& q, bool with_value) {
    std::fill(tq.begin(), tq.end(), 0.0);
    std::fill(tk.begin(), tk.end(), 0.0);
    crse_accumulate(p.tables, Role::q, q, p.domain, tq);
    crse_accumulate(p.tables, Role::k, q, p.domain, tk);
    if (with_value) {
      std::fill(tv.begin(), tv.end(), 0.0);
      crse_accumulate(p.tables, Role::v, q, p.domain, tv);
    }
  }
};

// (q_i . k_j + q_i . tK_ij + k_j . tQ_ij) restricted to one head slice, before scaling.
inline double real_logit(const double* qi, const double* kj, const double* tk, const double* tq, int off, int dh) {
  double s = 0.0;
  for (int c = off; c < off + dh; ++c) s += qi[c] * (kj[c] + tk[c]) + kj[c] * tq[c];
  return s;
}

inline double dot(const double* a, const double* b, int off, int dh) {
  double s = 0.0;
  for (int c = off; c < off + dh; ++c) s += a[c] * b[c];
  return s;
}

inline void require_finite(double e) {
  if (!std::isfinite(e)) throw NumericsError("non-finite attention score");
}

struct Projected {
  Mat q, k, v, pk, pv;
};

Projected project(const WindowInputs& in, const AttentionParams& p, bool values) {
  Projected out;
  out.q = in.features * p.proj.q;
  out.k = in.features * p.proj.k;
  if (values) out.v = in.features * p.proj.v;
  if (p.prompts.rows() > 0) {
    out.pk = p.prompts * p.proj.k;
    if (values) out.pv = p.prompts * p.proj.v;
  } else {
    out.pk = Mat(0, in.features.cols());
    out.pv = Mat(0, in.features.cols());
  }
  return out;
}

// Online max/sum over every real and prompt logit of row i, per head.
void row_statistics(const WindowInputs& in, const AttentionParams& p, const AttentionConfig& cfg, const Projected& pr,
                    Eigen::Index i, PairTables& pt, double* row_max, double* row_sum) {
  const int heads = cfg.heads, dh = cfg.head_dim();
  const double alpha = cfg.scale();
  const Eigen::Index n = in.features.rows();
  for (int h = 0; h < heads; ++h) {
    row_max[h] = -std::numeric_limits<double>::infinity();
    row_sum[h] = 0.0;
  }
  auto push = [&](int h, double e) {
    require_finite(e);
    if (e > row_max[h]) {
      row_sum[h] = row_sum[h] * std::exp(row_max[h] - e) + 1.0;
      row_max[h] = e;
    } else {
      row_sum[h] += std::exp(e - row_max[h]);
    }
  };
  const double* qi = pr.q.row(i).data();
  for (Eigen::Index j = 0; j < n; ++j) {
    pt.eval(p, pair_delta(in.signals, i, j, p.quantizer), false);
    const double* kj = pr.k.row(j).data();
    for (int h = 0; h < heads; ++h) push(h, alpha * real_logit(qi, kj, pt.tk.data(), pt.tq.data(), h * dh, dh));
  }
  for (Eigen::Index b = 0; b < pr.pk.rows(); ++b) {
    const double* kb = pr.pk.row(b).data();
    for (int h = 0; h < heads; ++h) push(h, alpha * dot(qi, kb, h * dh, dh));
  }
}

}  // namespace

// ---------------------------------------------------------------------------------------

ScoreSupplier::ScoreSupplier(const WindowInputs& in, const AttentionParams& params, const AttentionConfig& config)
    : in_(in), params_(params), config_(config) {
  check_inputs(in, params, config);
  q_ = in.features * params.proj.q;
  k_ = in.features * params.proj.k;
  pk_ = params.prompts.rows() > 0 ? Mat(params.prompts * params.proj.k) : Mat(0, config.channels);
}

std::size_t ScoreSupplier::voxel_count() const { return static_cast<std::size_t>(in_.features.rows()); }
std::size_t ScoreSupplier::prompt_count() const { return static_cast<std::size_t>(pk_.rows()); }

void ScoreSupplier::row(std::size_t i, int head, std::span<double> real, std::span<double> prompt) const {
  if (i >= voxel_count() || head < 0 || head >= config_.heads) throw RangeError("score row out of range");
  if (real.size() != voxel_count() || prompt.size() != prompt_count()) throw ShapeError("score buffers sized wrongly");
  const int dh = config_.head_dim(), off = head * dh;
  const double alpha = config_.scale();
  const auto ii = static_cast<Eigen::Index>(i);
  PairTables pt(config_.channels);
  const double* qi = q_.row(ii).data();
  for (Eigen::Index j = 0; j < k_.rows(); ++j) {
    pt.eval(params_, pair_delta(in_.signals, ii, j, params_.quantizer), false);
    real[static_cast<std::size_t>(j)] = alpha * real_logit(qi, k_.row(j).data(), pt.tk.data(), pt.tq.data(), off, dh);
    require_finite(real[static_cast<std::size_t>(j)]);
  }
  for (Eigen::Index b = 0; b < pk_.rows(); ++b) {
    prompt[static_cast<std::size_t>(b)] = alpha * dot(qi, pk_.row(b).data(), off, dh);
    require_finite(prompt[static_cast<std::size_t>(b)]);
  }
}

Mat window_attention_forward(const WindowInputs& in, const AttentionParams& p, const AttentionConfig& cfg,
                             ForwardCache* cache) {
  check_inputs(in, p, cfg);
  const Eigen::Index n = in.features.rows();
  const int d = cfg.channels, heads = cfg.heads, dh = cfg.head_dim();
  const double alpha = cfg.scale();
  const Projected pr = project(in, p, true);

  Mat out = Mat::Zero(n, d);
  Mat row_max(n, heads), row_sum(n, heads);
  PairTables pt(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    double* m = row_max.row(i).data();
    double* l = row_sum.row(i).data();
    row_statistics(in, p, cfg, pr, i, pt, m, l);

    const double* qi = pr.q.row(i).data();
    double* oi = out.row(i).data();
    for (Eigen::Index j = 0; j < n; ++j) {
      pt.eval(p, pair_delta(in.signals, i, j, p.quantizer), true);
      const double* kj = pr.k.row(j).data();
      const double* vj = pr.v.row(j).data();
      for (int h = 0; h < heads; ++h) {
        const int off = h * dh;
        const double w = std::exp(alpha * real_logit(qi, kj, pt.tk.data(), pt.tq.data(), off, dh) - m[h]) / l[h];
        for (int c = off; c < off + dh; ++c) oi[c] += w * (vj[c] + pt.tv[static_cast<std::size_t>(c)]);
      }
    }
    for (Eigen::Index b = 0; b < pr.pk.rows(); ++b) {
      const double* kb = pr.pk.row(b).data();
      const double* vb = pr.pv.row(b).data();
      for (int h = 0; h < heads; ++h) {
        const int off = h * dh;
        const double w = std::exp(alpha * dot(qi, kb, off, dh) - m[h]) / l[h];
        for (int c = off; c < off + dh; ++c) oi[c] += w * vb[c];
      }
    }
  }

  if (cache) {
    cache->q = pr.q;
    cache->k = pr.k;
    cache->v = pr.v;
    cache->pk = pr.pk;
    cache->pv = pr.pv;
    cache->row_max = row_max;
    cache->row_sum = row_sum;
    cache->output = out;
  }
  return out;
}

ReferenceResult window_attention_reference(const WindowInputs& in, const AttentionParams& p,
                                           const AttentionConfig& cfg) {
  check_inputs(in, p, cfg);
  const Eigen::Index n = in.features.rows();
  const Eigen::Index nb = p.prompts.rows();
  const int d = cfg.channels, heads = cfg.heads, dh = cfg.head_dim();
  const double alpha = cfg.scale();

  const Mat q = in.features * p.proj.q;
  const Mat k = in.features * p.proj.k;
  const Mat v = in.features * p.proj.v;
  const Mat pk = nb > 0 ? Mat(p.prompts * p.proj.k) : Mat(0, d);
  const Mat pv = nb > 0 ? Mat(p.prompts * p.proj.v) : Mat(0, d);

  // Every pair encoding, indexed [i](j, channel).
  std::vector<Mat> tq(static_cast<std::size_t>(n)), tk(static_cast<std::size_t>(n)), tv(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& qi = tq[static_cast<std::size_t>(i)];
    auto& ki = tk[static_cast<std::size_t>(i)];
    auto& vi = tv[static_cast<std::size_t>(i)];
    qi.resize(n, d);
    ki.resize(n, d);
    vi.resize(n, d);
    for (Eigen::Index j = 0; j < n; ++j) {
      const QuantizedDelta qd = pair_delta(in.signals, i, j, p.quantizer);
      qi.row(j) = crse_lookup(p.tables, Role::q, qd, p.domain).transpose();
      ki.row(j) = crse_lookup(p.tables, Role::k, qd, p.domain).transpose();
      vi.row(j) = crse_lookup(p.tables, Role::v, qd, p.domain).transpose();
    }
  }

  ReferenceResult res;
  res.output = Mat::Zero(n, d);
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * dh;
    const Mat qh = q.middleCols(off, dh);
    const Mat kh = k.middleCols(off, dh);
    Mat scores(n, n + nb);
    scores.leftCols(n) = qh * kh.transpose();
    if (nb > 0) scores.rightCols(nb) = qh * pk.middleCols(off, dh).transpose();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double bias = qh.row(i).dot(tk[static_cast<std::size_t>(i)].row(j).segment(off, dh)) +
                            kh.row(j).dot(tq[static_cast<std::size_t>(i)].row(j).segment(off, dh));
        scores(i, j) += bias;
      }
    }
    scores *= alpha;
    if (!scores.allFinite()) throw NumericsError("non-finite attention score");

    Mat w(n, n + nb);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = scores.row(i).maxCoeff();
      w.row(i) = (scores.row(i).array() - mx).exp().matrix();
      w.row(i) /= w.row(i).sum();
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(dh);
      for (Eigen::Index j = 0; j < n; ++j)
        acc += w(i, j) * (v.row(j).segment(off, dh) + tv[static_cast<std::size_t>(i)].row(j).segment(off, dh));
      for (Eigen::Index b = 0; b < nb; ++b) acc += w(i, n + b) * pv.row(b).segment(off, dh);
      res.output.row(i).segment(off, dh) = acc;
    }
    res.weights.push_back(std::move(w));
  }
  return res;
}

WindowGradients window_attention_backward(const WindowInputs& in, const AttentionParams& p,
                                          const AttentionConfig& cfg, const ForwardCache& cache,
                                          const Mat& upstream) {
  check_inputs(in, p, cfg);
  const Eigen::Index n = in.features.rows();
  const Eigen::Index nb = cache.pk.rows();
  const int d = cfg.channels, heads = cfg.heads, dh = cfg.head_dim();
  const double alpha = cfg.scale();
  if (upstream.rows() != n || upstream.cols() != d) throw ShapeError("upstream gradient must be N x d");
  if (cache.output.rows() != n || cache.row_max.cols() != heads || nb != p.prompts.rows())
    throw ShapeError("forward cache does not match the inputs");

  Mat dq = Mat::Zero(n, d), dk = Mat::Zero(n, d), dv = Mat::Zero(n, d);
  Mat dpk = Mat::Zero(nb, d), dpv = Mat::Zero(nb, d);
  WindowGradients g;
  g.tables = p.tables.zeros_like();

  PairTables pt(d);
  std::vector<double> gtq(static_cast<std::size_t>(d)), gtk(static_cast<std::size_t>(d)), gtv(static_cast<std::size_t>(d));
  std::vector<double> delta_row(static_cast<std::size_t>(heads));

  for (Eigen::Index i = 0; i < n; ++i) {
    const double* qi = cache.q.row(i).data();
    const double* gi = upstream.row(i).data();
    const double* oi = cache.output.row(i).data();
    const double* m = cache.row_max.row(i).data();
    const double* l = cache.row_sum.row(i).data();
    double* dqi = dq.row(i).data();
    for (int h = 0; h < heads; ++h) delta_row[static_cast<std::size_t>(h)] = dot(gi, oi, h * dh, dh);

    for (Eigen::Index j = 0; j < n; ++j) {
      const QuantizedDelta qd = pair_delta(in.signals, i, j, p.quantizer);
      pt.eval(p, qd, true);
      const double* kj = cache.k.row(j).data();
      const double* vj = cache.v.row(j).data();
      double* dkj = dk.row(j).data();
      double* dvj = dv.row(j).data();
      for (int h = 0; h < heads; ++h) {
        const int off = h * dh;
        const double pij = std::exp(alpha * real_logit(qi, kj, pt.tk.data(), pt.tq.data(), off, dh) - m[h]) / l[h];
        double dp = 0.0;
        for (int c = off; c < off + dh; ++c) dp += gi[c] * (vj[c] + pt.tv[static_cast<std::size_t>(c)]);
        const double ds = alpha * pij * (dp - delta_row[static_cast<std::size_t>(h)]);
        for (int c = off; c < off + dh; ++c) {
          const auto cc = static_cast<std::size_t>(c);
          dvj[c] += pij * gi[c];
          gtv[cc] = pij * gi[c];
          dqi[c] += ds * (kj[c] + pt.tk[cc]);
          dkj[c] += ds * (qi[c] + pt.tq[cc]);
          gtk[cc] = ds * qi[c];
          gtq[cc] = ds * kj[c];
        }
      }
      crse_backward(p.tables, Role::q, qd, p.domain, gtq, g.tables);
      crse_backward(p.tables, Role::k, qd, p.domain, gtk, g.tables);
      crse_backward(p.tables, Role::v, qd, p.domain, gtv, g.tables);
    }
    for (Eigen::Index b = 0; b < nb; ++b) {
      const double* kb = cache.pk.row(b).data();
      const double* vb = cache.pv.row(b).data();
      double* dkb = dpk.row(b).data();
      double* dvb = dpv.row(b).data();
      for (int h = 0; h < heads; ++h) {
        const int off = h * dh;
        const double pib = std::exp(alpha * dot(qi, kb, off, dh) - m[h]) / l[h];
        const double ds = alpha * pib * (dot(gi, vb, off, dh) - delta_row[static_cast<std::size_t>(h)]);
        for (int c = off; c < off + dh; ++c) {
          dvb[c] += pib * gi[c];
          dqi[c] += ds * kb[c];
          dkb[c] += ds * qi[c];
        }
      }
    }
  }

  const Mat& f = in.features;
  g.q = f.transpose() * dq;
  g.k = f.transpose() * dk;
  g.v = f.transpose() * dv;
  g.features = dq * p.proj.q.transpose() + dk * p.proj.k.transpose() + dv * p.proj.v.transpose();
  if (nb > 0) {
    g.k += p.prompts.transpose() * dpk;
    g.v += p.prompts.transpose() * dpv;
    g.prompts = dpk * p.proj.k.transpose() + dpv * p.proj.v.transpose();
  } else {
    g.prompts = Mat(0, d);
  }
  return g;
}

Vec prompt_attention_mass(const WindowInputs& in, const AttentionParams& p, const AttentionConfig& cfg) {
  check_inputs(in, p, cfg);
  if (p.prompts.rows() < 1) throw ShapeError("prompt attention mass needs at least one prompt");
  const Eigen::Index n = in.features.rows();
  const int heads = cfg.heads, dh = cfg.head_dim();
  const double alpha = cfg.scale();
  const Projected pr = project(in, p, false);
  PairTables pt(cfg.channels);
  std::vector<double> m(static_cast<std::size_t>(heads)), l(static_cast<std::size_t>(heads));
  Vec mass(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    row_statistics(in, p, cfg, pr, i, pt, m.data(), l.data());
    const double* qi = pr.q.row(i).data();
    double total = 0.0;
    for (int h = 0; h < heads; ++h) {
      double s = 0.0;
      for (Eigen::Index b = 0; b < pr.pk.rows(); ++b)
        s += std::exp(alpha * dot(qi, pr.pk.row(b).data(), h * dh, dh) - m[static_cast<std::size_t>(h)]);
      total += s / l[static_cast<std::size_t>(h)];
    }
    mass(i) = total / heads;
  }
  return mass;
}

}  // namespace voxattn
