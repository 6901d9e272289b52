#include "voxattn/encoder.hpp"

#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "voxattn/errors.hpp"

namespace voxattn {

using json = nlohmann::json;

// ---------------------------------------------------------------------------------------
// Configuration

int ModelConfig::block_count() const {
  int n = 0;
  for (int c : layer_counts) n += c;
  return n;
}

void ModelConfig::validate() const {
  auto per_level = [&](const std::vector<int>& v, const char* what) {
    if (static_cast<int>(v.size()) != levels)
      throw ConfigError(std::string(what) + " needs one entry per level (" + std::to_string(levels) + ")");
  };
  if (levels < 1) throw ConfigError("at least one level is required");
  per_level(layer_counts, "layer_counts");
  per_level(window_sizes, "window_sizes");
  per_level(channels, "channels");
  per_level(heads, "heads");
  for (int s = 0; s < levels; ++s) {
    if (layer_counts[s] < 0) throw ConfigError("layer counts must be non-negative");
    if (window_sizes[s] < 2) throw ConfigError("window sizes must be >= 2");
    if (channels[s] < 1 || heads[s] < 1) throw ConfigError("channels and heads must be positive");
    if (channels[s] % heads[s] != 0)
      throw ConfigError("stage " + std::to_string(s) + ": channels " + std::to_string(channels[s]) +
                        " not divisible by heads " + std::to_string(heads[s]));
  }
  if (prompt_count < 0) throw ConfigError("prompt_count must be non-negative");
  if (domains.empty()) throw ConfigError("at least one domain is required");
  for (const auto& d : domains)
    if (!d.mask.has(Signal::position)) throw ConfigError("every domain needs position signals");
  if (!(voxel_size > 0.0)) throw ConfigError("voxel_size must be positive");
  if (divisions < 2 || divisions_2d < 2) throw ConfigError("table divisions must be >= 2");
  if (pool_neighbors < 1) throw ConfigError("pool_neighbors must be >= 1");
  if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
}

bool operator==(const ModelConfig& a, const ModelConfig& b) { return a.to_json() == b.to_json(); }

std::string ModelConfig::to_json() const {
  json j;
  j["format_version"] = 1;
  j["levels"] = levels;
  j["layer_counts"] = layer_counts;
  j["window_sizes"] = window_sizes;
  j["channels"] = channels;
  j["heads"] = heads;
  j["crse_mode"] = std::string(to_string(crse_mode));
  j["prompt_count"] = prompt_count;
  json doms = json::array();
  for (const auto& d : domains) doms.push_back({{"name", d.name}, {"signals", d.mask.str()}});
  j["domains"] = doms;
  j["voxel_size"] = voxel_size;
  j["divisions"] = divisions;
  j["divisions_2d"] = divisions_2d;
  j["pool_neighbors"] = pool_neighbors;
  j["mlp_ratio"] = mlp_ratio;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  ModelConfig c;
  try {
    if (j.contains("format_version") && j["format_version"].get<int>() != 1)
      throw ParseError("unsupported model config format_version");
    if (j.contains("levels")) c.levels = j["levels"].get<int>();
    if (j.contains("layer_counts")) c.layer_counts = j["layer_counts"].get<std::vector<int>>();
    if (j.contains("window_sizes")) c.window_sizes = j["window_sizes"].get<std::vector<int>>();
    if (j.contains("channels")) c.channels = j["channels"].get<std::vector<int>>();
    if (j.contains("heads")) c.heads = j["heads"].get<std::vector<int>>();
    if (j.contains("crse_mode")) c.crse_mode = parse_crse_mode(j["crse_mode"].get<std::string>());
    if (j.contains("prompt_count")) c.prompt_count = j["prompt_count"].get<int>();
    if (j.contains("domains")) {
      c.domains.clear();
      for (const auto& d : j["domains"])
        c.domains.push_back({d.value("name", "domain" + std::to_string(c.domains.size())),
                             SignalMask::parse(d.value("signals", std::string("pcn")))});
    }
    if (j.contains("voxel_size")) c.voxel_size = j["voxel_size"].get<double>();
    if (j.contains("divisions")) c.divisions = j["divisions"].get<int>();
    if (j.contains("divisions_2d")) c.divisions_2d = j["divisions_2d"].get<int>();
    if (j.contains("pool_neighbors")) c.pool_neighbors = j["pool_neighbors"].get<int>();
    if (j.contains("mlp_ratio")) c.mlp_ratio = j["mlp_ratio"].get<int>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  } catch (const SubsetError& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

// ---------------------------------------------------------------------------------------
// Construction

namespace {

constexpr double kWeightStd = 0.02;

AttentionConfig stage_attention(const ModelConfig& c, int s) {
  return {c.channels[s], c.heads[s], c.window_sizes[s], c.prompt_count, c.crse_mode};
}

double stage_voxel_size(const ModelConfig& c, int s) { return c.voxel_size * static_cast<double>(1 << s); }

QuantizerSpec stage_quantizer(const ModelConfig& c, int s) {
  return QuantizerSpec::for_window(c.window_sizes[s], stage_voxel_size(c, s), c.divisions, c.divisions_2d);
}

}  // namespace

Model allocate_model(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  const int nd = config.domain_count();
  for (const auto& d : config.domains) m.embedding.domains.push_back(EmbeddingParams::zeros(d.mask, config.channels[0]));
  for (int s = 0; s < config.levels; ++s) {
    const int d = config.channels[s];
    const int hidden = config.mlp_ratio * d;
    StageParams stage;
    for (int b = 0; b < config.layer_counts[s]; ++b) {
      BlockParams blk{ProjectionSet::zeros(d),
                      LookupTableSet(config.crse_mode, d, kSignalChannels, config.divisions, config.divisions_2d, nd),
                      PromptBank::zeros(nd, config.prompt_count, d),
                      DomainLayerNorm::identity(nd, d),
                      DomainLayerNorm::identity(nd, d),
                      Mlp{Mat::Zero(d, hidden), Vec::Zero(hidden), Mat::Zero(hidden, d), Vec::Zero(d)}};
      stage.blocks.push_back(std::move(blk));
    }
    if (s + 1 < config.levels) {
      const int dn = config.channels[s + 1];
      stage.downsample = DownsampleParams{DomainLayerNorm::identity(nd, d), Mat::Zero(d, dn), Vec::Zero(dn)};
    }
    m.stages.push_back(std::move(stage));
  }
  return m;
}

void initialize_parameters(Model& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, kWeightStd);
  auto fill = [&](Mat& x) {
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);
  };
  for (auto& e : model.embedding.domains) {
    fill(e.kernel);
    e.bias.setZero();
    e.norm_gain.setOnes();
    e.norm_bias.setZero();
    e.frozen_mean.reset();
    e.frozen_var.reset();
  }
  for (auto& stage : model.stages) {
    for (auto& blk : stage.blocks) {
      fill(blk.proj.q);
      fill(blk.proj.k);
      fill(blk.proj.v);
      init_tables(blk.tables, rng());
      for (auto& p : blk.prompts.features) fill(p);
      for (DomainLayerNorm* n : {&blk.norm1, &blk.norm2}) {
        n->gamma.setOnes();
        n->beta.setZero();
      }
      fill(blk.mlp.w1);
      blk.mlp.b1.setZero();
      fill(blk.mlp.w2);
      blk.mlp.b2.setZero();
    }
    if (stage.downsample) {
      stage.downsample->norm.gamma.setOnes();
      stage.downsample->norm.beta.setZero();
      fill(stage.downsample->weight);
      stage.downsample->bias.setZero();
    }
  }
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  Model m = allocate_model(config);
  initialize_parameters(m, seed);
  return m;
}

// ---------------------------------------------------------------------------------------
// Parameter traversal

namespace {

template <typename M, typename Visit>
void visit_params(M& model, Visit&& visit) {
  auto blob = [&](const std::string& name, ParamCategory cat, auto& x) { visit(name, cat, x.data(), static_cast<std::size_t>(x.size())); };
  for (std::size_t l = 0; l < model.embedding.domains.size(); ++l) {
    auto& e = model.embedding.domains[l];
    const std::string p = "embedding.d" + std::to_string(l) + ".";
    blob(p + "kernel", ParamCategory::embedding, e.kernel);
    blob(p + "bias", ParamCategory::embedding, e.bias);
    blob(p + "norm_gain", ParamCategory::embedding, e.norm_gain);
    blob(p + "norm_bias", ParamCategory::embedding, e.norm_bias);
  }
  for (std::size_t s = 0; s < model.stages.size(); ++s) {
    auto& stage = model.stages[s];
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
      auto& blk = stage.blocks[b];
      const std::string p = "stage" + std::to_string(s) + ".block" + std::to_string(b) + ".";
      blob(p + "proj.q", ParamCategory::block_shared, blk.proj.q);
      blob(p + "proj.k", ParamCategory::block_shared, blk.proj.k);
      blob(p + "proj.v", ParamCategory::block_shared, blk.proj.v);
      auto shared = blk.tables.shared_data();
      visit(p + "tables.shared", ParamCategory::block_shared, shared.data(), shared.size());
      auto mod = blk.tables.modulation_data();
      if (!mod.empty()) visit(p + "tables.modulation", ParamCategory::block_domain, mod.data(), mod.size());
      for (std::size_t l = 0; l < blk.prompts.features.size(); ++l)
        blob(p + "prompts.d" + std::to_string(l), ParamCategory::block_domain, blk.prompts.features[l]);
      blob(p + "norm1.gamma", ParamCategory::block_domain, blk.norm1.gamma);
      blob(p + "norm1.beta", ParamCategory::block_domain, blk.norm1.beta);
      blob(p + "norm2.gamma", ParamCategory::block_domain, blk.norm2.gamma);
      blob(p + "norm2.beta", ParamCategory::block_domain, blk.norm2.beta);
      blob(p + "mlp.w1", ParamCategory::block_shared, blk.mlp.w1);
      blob(p + "mlp.b1", ParamCategory::block_shared, blk.mlp.b1);
      blob(p + "mlp.w2", ParamCategory::block_shared, blk.mlp.w2);
      blob(p + "mlp.b2", ParamCategory::block_shared, blk.mlp.b2);
    }
    if (stage.downsample) {
      auto& ds = *stage.downsample;
      const std::string p = "stage" + std::to_string(s) + ".downsample.";
      blob(p + "norm.gamma", ParamCategory::other_domain, ds.norm.gamma);
      blob(p + "norm.beta", ParamCategory::other_domain, ds.norm.beta);
      blob(p + "weight", ParamCategory::other_shared, ds.weight);
      blob(p + "bias", ParamCategory::other_shared, ds.bias);
    }
  }
}

}  // namespace

void for_each_parameter(Model& model, const ParamVisitor& visit) {
  visit_params(model, [&](const std::string& n, ParamCategory c, double* p, std::size_t k) { visit(n, c, {p, k}); });
}

void for_each_parameter(const Model& model, const ConstParamVisitor& visit) {
  visit_params(model, [&](const std::string& n, ParamCategory c, const double* p, std::size_t k) { visit(n, c, {p, k}); });
}

ParameterBreakdown count_parameters(const Model& model) {
  ParameterBreakdown b;
  for_each_parameter(model, [&](const std::string&, ParamCategory cat, std::span<const double> v) {
    const auto n = static_cast<std::int64_t>(v.size());
    switch (cat) {
      case ParamCategory::embedding: b.embedding += n; break;
      case ParamCategory::block_shared: b.blocks_shared += n; break;
      case ParamCategory::block_domain: b.blocks_domain_specific += n; break;
      case ParamCategory::other_shared:
      case ParamCategory::other_domain: b.other += n; break;
    }
  });
  for (const auto& stage : model.stages)
    for (const auto& blk : stage.blocks) b.modulation_per_block.push_back(static_cast<std::int64_t>(blk.tables.modulation_count()));
  return b;
}

std::uint64_t parameter_checksum(const Model& model) {
  std::uint64_t h = 1469598103934665603ull;
  for_each_parameter(model, [&](const std::string&, ParamCategory, std::span<const double> v) {
    for (double x : v) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &x, sizeof(double));
      for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
      }
    }
  });
  return h;
}

// ---------------------------------------------------------------------------------------
// Forward

Mat grid_signals(const SparseVoxelGrid& grid) {
  Mat s(static_cast<Eigen::Index>(grid.size()), kSignalChannels);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto v = signal_vector(grid.cell(i).representative);
    for (int c = 0; c < kSignalChannels; ++c) s(static_cast<Eigen::Index>(i), c) = v[static_cast<std::size_t>(c)];
  }
  return s;
}

Mat block_forward(const BlockParams& blk, const SparseVoxelGrid& grid, const Mat& signals, const Mat& features,
                  int domain, const AttentionConfig& attention, const QuantizerSpec& quantizer, bool shifted) {
  const Mat normed = dsln(features, domain, blk.norm1);
  const Mat& prompts = blk.prompts.for_domain(domain);
  const AttentionParams params{blk.proj, blk.tables, quantizer, prompts, domain};
  const WindowPartition part = partition_windows(grid, attention.window_size, shifted);

  Mat x = features;
  WindowInputs win;
  for (const auto& w : part.windows) {
    const auto n = static_cast<Eigen::Index>(w.members.size());
    win.features.resize(n, features.cols());
    win.signals.resize(n, signals.cols());
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto idx = static_cast<Eigen::Index>(w.members[static_cast<std::size_t>(r)]);
      win.features.row(r) = normed.row(idx);
      win.signals.row(r) = signals.row(idx);
    }
    const Mat out = window_attention_forward(win, params, attention);
    for (Eigen::Index r = 0; r < n; ++r) x.row(static_cast<Eigen::Index>(w.members[static_cast<std::size_t>(r)])) += out.row(r);
  }

  const Mat h = dsln(x, domain, blk.norm2);
  Mat hidden = (h * blk.mlp.w1).rowwise() + blk.mlp.b1.transpose();
  hidden = hidden.cwiseMax(0.0);
  x += (hidden * blk.mlp.w2).rowwise() + blk.mlp.b2.transpose();
  return x;
}

void check_domain_input(const ModelConfig& config, const PointCloud& cloud, int domain) {
  if (domain < 0 || domain >= config.domain_count())
    throw DomainError("domain " + std::to_string(domain) + " outside the valid range [0, " +
                      std::to_string(config.domain_count()) + ")");
  const SignalMask want = config.domains[static_cast<std::size_t>(domain)].mask;
  if (!(cloud.mask == want))
    throw SignalMaskError("cloud signals '" + cloud.mask.str() + "' do not match domain " + std::to_string(domain) +
                          " signals '" + want.str() + "'");
}

EncoderOutput forward(const Model& model, const PointCloud& cloud, int domain) {
  const ModelConfig& c = model.config;
  check_domain_input(c, cloud, domain);
  if (cloud.empty()) throw EmptyInputError("cannot run the encoder on an empty cloud");

  EncoderOutput out;
  out.grids = build_hierarchy(voxelize(cloud, c.voxel_size), c.levels);
  Mat x = initial_embed(out.grids[0], domain, model.embedding);
  for (int s = 0; s < c.levels; ++s) {
    const auto& grid = out.grids[static_cast<std::size_t>(s)];
    const auto& stage = model.stages[static_cast<std::size_t>(s)];
    const Mat signals = grid_signals(grid);
    const AttentionConfig att = stage_attention(c, s);
    const QuantizerSpec quant = stage_quantizer(c, s);
    for (std::size_t b = 0; b < stage.blocks.size(); ++b)
      x = block_forward(stage.blocks[b], grid, signals, x, domain, att, quant, b % 2 == 1);
    if (!x.allFinite()) throw NumericsError("non-finite features at level " + std::to_string(s));
    out.features.push_back(x);
    if (stage.downsample) {
      const auto& ds = *stage.downsample;
      Mat y = (dsln(x, domain, ds.norm) * ds.weight).rowwise() + ds.bias.transpose();
      x = knn_pool_downsample(y, grid, out.grids[static_cast<std::size_t>(s) + 1], c.pool_neighbors);
    }
  }
  return out;
}

}  // namespace voxattn
