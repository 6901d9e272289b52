#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "voxattn/augmentation.hpp"
#include "voxattn/checkpoint.hpp"
#include "voxattn/discrepancy.hpp"
#include "voxattn/encoder.hpp"
#include "voxattn/errors.hpp"
#include "voxattn/gradcheck.hpp"
#include "voxattn/ply.hpp"
#include "voxattn/synthetic.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace voxattn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitData = 2;
constexpr int kExitSemantic = 3;
constexpr int kExitUsage = 64;
constexpr int kExitInternal = 70;

constexpr int kCliFormatVersion = 1;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse:
    case ErrorKind::data:
      return kExitData;
    case ErrorKind::semantic:
      return kExitSemantic;
    case ErrorKind::internal:
      break;
  }
  return kExitInternal;
}

// Files are taken as given; directories contribute their *.ply entries in name order.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& s : inputs) {
    const fs::path p(s);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".ply") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  if (out.empty()) throw EmptyInputError("no .ply clouds found in the given inputs");
  return out;
}

std::vector<PointCloud> load_clouds(const std::vector<std::string>& inputs) {
  std::vector<PointCloud> clouds;
  for (const auto& p : expand_inputs(inputs)) clouds.push_back(load_ply(p));
  return clouds;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

// a.json + "color" -> a_color.json
std::string suffixed(const std::string& path, const std::string& tag) {
  const fs::path p(path);
  return (p.parent_path() / (p.stem().string() + "_" + tag + p.extension().string())).string();
}

std::vector<SignalMask> parse_subsets(const std::vector<std::string>& names) {
  std::vector<SignalMask> out;
  for (const auto& n : names) out.push_back(SignalMask::parse(n));
  return out;
}

struct AnalyzeArgs {
  std::vector<std::string> inputs;
  double voxel_size = 0.02;
  int window = 5;
  int bins = kDefaultHistogramBins;
  bool interior = false;
  std::vector<std::string> signals;
  std::string out;
};

int run_analyze(const AnalyzeArgs& a, bool variance) {
  const auto clouds = load_clouds(a.inputs);
  if (!variance) {
    std::vector<NormalizedCumulativeHistogram> per_scene;
    for (const auto& c : clouds) per_scene.push_back(window_occupancy_stats(c, a.voxel_size, a.window, a.bins, a.interior));
    write_text(a.out, average_histograms(per_scene).to_json());
    return kExitOk;
  }
  for (const auto& name : a.signals) {
    const Signal s = parse_signal(name);
    std::vector<NormalizedCumulativeHistogram> per_scene;
    for (const auto& c : clouds)
      per_scene.push_back(signal_variance_stats(c, a.voxel_size, a.window, s, a.bins, a.interior));
    const std::string out = (a.signals.size() > 1 && !a.out.empty() && a.out != "-") ? suffixed(a.out, name) : a.out;
    write_text(out, average_histograms(per_scene).to_json());
  }
  return kExitOk;
}

struct ForwardArgs {
  std::string checkpoint;
  std::string config;
  std::string input;
  int domain = 0;
  std::string out;
};

int run_forward(const ForwardArgs& a) {
  const Model model = load_checkpoint(a.checkpoint);
  if (!a.config.empty() && !(ModelConfig::load(a.config) == model.config))
    throw ConfigError("--config does not match the configuration stored in " + a.checkpoint);
  const PointCloud cloud = load_ply(a.input);
  const EncoderOutput out = forward(model, cloud, a.domain);
  std::ofstream f(a.out, std::ios::binary);
  if (!f) throw DataError("cannot write " + a.out);
  write_feature_dump(f, out);
  f.close();
  for (std::size_t l = 0; l < out.grids.size(); ++l)
    std::printf("level %zu: %zu voxels x %ld channels\n", l, out.grids[l].size(), static_cast<long>(out.features[l].cols()));
  return kExitOk;
}

struct InitArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> calibrate;
  int calibrate_domain = 0;
};

int run_init(const InitArgs& a) {
  const ModelConfig cfg = a.config.empty() ? ModelConfig{} : ModelConfig::load(a.config);
  cfg.validate();
  Model model = build_model(cfg, *a.seed);
  if (!a.calibrate.empty()) {
    std::vector<SparseVoxelGrid> grids;
    for (const auto& c : load_clouds(a.calibrate)) {
      check_domain_input(cfg, c, a.calibrate_domain);
      grids.push_back(voxelize(c, cfg.voxel_size));
    }
    calibrate_embedding(grids, a.calibrate_domain, model.embedding);
  }
  save_checkpoint(a.out, model);
  std::printf("wrote %s (%lld parameters, checksum %016llx)\n", a.out.c_str(),
              static_cast<long long>(count_parameters(model).total()),
              static_cast<unsigned long long>(parameter_checksum(model)));
  return kExitOk;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  int trials = 50;
  double tolerance = 1e-4;
  std::vector<std::string> modes;
  bool corrupt = false;
};

int run_gradcheck_cmd(const GradcheckArgs& a) {
  GradcheckOptions o;
  o.seed = a.seed;
  o.trials = a.trials;
  o.tolerance = a.tolerance;
  o.corrupt = a.corrupt;
  if (!a.modes.empty()) {
    o.modes.clear();
    for (const auto& m : a.modes) o.modes.push_back(parse_crse_mode(m));
  }
  const GradcheckReport r = run_gradcheck(o);
  std::cout << r.text();
  return r.passed ? kExitOk : kExitCheckFailed;
}

struct ParamsArgs {
  std::string config;
  std::string mode;
  int domains = 0;
  std::string out;
};

int run_params(const ParamsArgs& a) {
  ModelConfig cfg = a.config.empty() ? ModelConfig{} : ModelConfig::load(a.config);
  if (!a.mode.empty()) cfg.crse_mode = parse_crse_mode(a.mode);
  if (a.domains > 0) {
    const SignalMask mask = cfg.domains.empty() ? SignalMask::pcn() : cfg.domains.front().mask;
    cfg.domains.clear();
    for (int l = 0; l < a.domains; ++l) cfg.domains.push_back({"source" + std::to_string(l), mask});
  }
  cfg.validate();
  const ParameterBreakdown b = count_parameters(allocate_model(cfg));
  json j;
  j["format_version"] = kCliFormatVersion;
  j["crse_mode"] = std::string(to_string(cfg.crse_mode));
  j["domains"] = cfg.domain_count();
  j["blocks"] = cfg.block_count();
  j["embedding"] = b.embedding;
  j["blocks_shared"] = b.blocks_shared;
  j["blocks_domain_specific"] = b.blocks_domain_specific;
  j["other"] = b.other;
  j["total"] = b.total();
  j["modulation_per_block"] = b.modulation_per_block;
  write_text(a.out, j.dump(2));
  return kExitOk;
}

struct AugmentArgs {
  std::string input;
  std::string dataset;
  std::vector<std::string> subsets;
  std::string out_dir;
  bool virtualize = false;
  bool binary = false;
};

int run_augment(const AugmentArgs& a) {
  const PointCloud cloud = load_ply(a.input);
  const std::string dataset = a.dataset.empty() ? fs::path(a.input).stem().string() : a.dataset;
  DomainRegistry reg;
  const auto sources = a.subsets.empty() ? augment_sources(reg, dataset, cloud.mask)
                                         : augment_sources(reg, dataset, cloud.mask, parse_subsets(a.subsets));
  fs::create_directories(a.out_dir);
  json list = json::array();
  for (const auto& s : sources) {
    PointCloud variant = project_signals(cloud, s.subset);
    if (a.virtualize) variant = virtualize_signals(variant, SignalMask::pcn());
    variant.domain_id = s.domain_id;
    const fs::path out = fs::path(a.out_dir) / (fs::path(a.input).stem().string() + "_" + s.subset.str() + ".ply");
    save_ply(out, variant, a.binary ? PlyFormat::binary_little_endian : PlyFormat::ascii);
    list.push_back({{"dataset", s.dataset}, {"subset", s.subset.str()}, {"domain_id", s.domain_id}, {"path", out.string()}});
  }
  json j;
  j["format_version"] = kCliFormatVersion;
  j["sources"] = list;
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

struct DivergenceArgs {
  std::optional<double> err_s, err_t;
  std::vector<std::string> source, target;
  std::optional<std::uint64_t> seed;
  int crops = 200;
  double edge = 5.0;
  bool as_json = false;
};

std::vector<PointCloud> sample_crops(const std::vector<PointCloud>& scenes, int count, double edge, std::mt19937_64& rng) {
  std::vector<PointCloud> crops;
  // Bounded retries so a cloud smaller than the crop cannot loop forever.
  long long attempts = 0;
  while (static_cast<int>(crops.size()) < count) {
    if (++attempts > 100LL * count) throw DataError("too many empty crops; is --edge larger than the scenes?");
    PointCloud c = crop_cube(scenes[static_cast<std::size_t>(attempts) % scenes.size()], edge, rng);
    if (!c.empty()) crops.push_back(std::move(c));
  }
  return crops;
}

int run_divergence(const DivergenceArgs& a) {
  DivergenceReport r;
  json j;
  j["format_version"] = kCliFormatVersion;
  if (a.err_s || a.err_t) {
    if (!a.err_s || !a.err_t) throw RangeError("--err-s and --err-t must be given together");
    r = h_divergence(*a.err_s, *a.err_t);
  } else {
    std::mt19937_64 rng(*a.seed);
    const auto src = sample_crops(load_clouds(a.source), a.crops, a.edge, rng);
    const auto tgt = sample_crops(load_clouds(a.target), a.crops, a.edge, rng);
    const ClassifierResult c = baseline_domain_classifier(src, tgt, *a.seed);
    r = c.report;
    j["train_source"] = c.train_source;
    j["train_target"] = c.train_target;
  }
  if (a.as_json) {
    j["err_source"] = r.err_source;
    j["err_target"] = r.err_target;
    j["d_h"] = r.d_h;
    j["worse_than_chance"] = r.worse_than_chance;
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("%.3f\n", r.d_h);
    if (r.worse_than_chance) std::fprintf(stderr, "warning: classifier is worse than chance\n");
  }
  return kExitOk;
}

struct GenerateArgs {
  double extent = 1.0;
  double spacing = 0.02;
  std::string axis = "z";
  std::size_t count = 1000;
  std::vector<double> box{1.0, 1.0, 1.0};
  std::optional<std::uint64_t> seed;
  std::string mask = "pcn";
  std::string out;
  bool binary = false;
};

int run_generate(const GenerateArgs& a, bool plane) {
  PointCloud pc;
  if (plane) {
    const Axis axis = a.axis == "x" ? Axis::x : (a.axis == "y" ? Axis::y : Axis::z);
    pc = generate_plane_scene(a.extent, a.spacing, axis);
  } else {
    NoisyVolumeOptions o;
    o.count = a.count;
    o.box = {a.box[0], a.box[1], a.box[2]};
    o.seed = *a.seed;
    pc = generate_noisy_volume_scene(o);
  }
  pc = project_signals(pc, SignalMask::parse(a.mask));
  save_ply(a.out, pc, a.binary ? PlyFormat::binary_little_endian : PlyFormat::ascii);
  return kExitOk;
}

void require_seed(const std::optional<std::uint64_t>& seed, const char* command) {
  if (!seed) throw CLI::RequiredError(std::string("--seed (required by ") + command + ")");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-source sparse-voxel attention toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "voxattn 0.1.0");

  // analyze
  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Window sparsity and signal variance histograms");
  analyze->require_subcommand(1);
  auto add_common = [&](CLI::App* c) {
    c->add_option("inputs", an.inputs, "PLY files or directories of them")->required()->check(CLI::ExistingPath);
    c->add_option("--voxel-size", an.voxel_size, "Voxel edge in meters")->capture_default_str();
    c->add_option("--window", an.window, "Window size in voxels")->capture_default_str();
    c->add_option("--bins", an.bins, "Histogram bins")->capture_default_str();
    c->add_flag("--interior", an.interior, "Skip windows touching the scene boundary");
    c->add_option("-o,--out", an.out, "Output file (stdout if omitted)");
  };
  auto* sparsity = analyze->add_subcommand("sparsity", "Window occupancy ratio NCH");
  add_common(sparsity);
  auto* variance = analyze->add_subcommand("variance", "Per-window signal variance NCH");
  add_common(variance);
  variance->add_option("--signal", an.signals, "position, color or normal (repeatable)")->required();

  ForwardArgs fw;
  auto* fwd = app.add_subcommand("forward", "Run the encoder and write a feature dump");
  fwd->add_option("--checkpoint", fw.checkpoint)->required()->check(CLI::ExistingFile);
  fwd->add_option("--config", fw.config, "Must match the checkpoint's configuration")->check(CLI::ExistingFile);
  fwd->add_option("--input", fw.input)->required()->check(CLI::ExistingFile);
  fwd->add_option("--domain", fw.domain)->required();
  fwd->add_option("-o,--out", fw.out)->required();

  InitArgs in;
  auto* init = app.add_subcommand("init-model", "Write a freshly initialized checkpoint");
  init->add_option("--config", in.config, "Model config JSON (defaults if omitted)")->check(CLI::ExistingFile);
  init->add_option("--seed", in.seed);
  init->add_option("--calibrate", in.calibrate, "Clouds used to freeze embedding statistics")->check(CLI::ExistingPath);
  init->add_option("--calibrate-domain", in.calibrate_domain)->capture_default_str();
  init->add_option("-o,--out", in.out)->required();

  GradcheckArgs gc;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the attention backward pass");
  grad->add_option("--seed", gc.seed)->capture_default_str();
  grad->add_option("--trials", gc.trials, "Windows per mode")->capture_default_str()->check(CLI::PositiveNumber);
  grad->add_option("--tolerance", gc.tolerance)->capture_default_str()->check(CLI::PositiveNumber);
  grad->add_option("--mode", gc.modes, "Restrict to these encoding modes (repeatable)");
  grad->add_flag("--corrupt-gradient", gc.corrupt)->group("");  // test hook

  ParamsArgs pa;
  auto* params = app.add_subcommand("params", "Parameter accounting");
  params->add_option("--config", pa.config)->check(CLI::ExistingFile);
  params->add_option("--mode", pa.mode, "Override the encoding mode");
  params->add_option("--domains", pa.domains, "Override the number of domains")->check(CLI::PositiveNumber);
  params->add_option("-o,--out", pa.out);

  AugmentArgs au;
  auto* aug = app.add_subcommand("augment", "Write one cloud per signal subset");
  aug->add_option("--input", au.input)->required()->check(CLI::ExistingFile);
  aug->add_option("--dataset", au.dataset, "Dataset name (input stem by default)");
  aug->add_option("--subsets", au.subsets, "Comma separated, e.g. p,pc,pn,pcn")->delimiter(',');
  aug->add_option("--out-dir", au.out_dir)->required();
  aug->add_flag("--virtualize", au.virtualize, "Fill dropped signals with the constant virtual values");
  aug->add_flag("--binary", au.binary);

  DivergenceArgs dv;
  auto* div = app.add_subcommand("divergence", "H-divergence from errors or from a baseline classifier");
  auto* es = div->add_option("--err-s", dv.err_s);
  auto* et = div->add_option("--err-t", dv.err_t);
  auto* src = div->add_option("--source", dv.source)->check(CLI::ExistingPath);
  auto* tgt = div->add_option("--target", dv.target)->check(CLI::ExistingPath);
  es->excludes(src)->excludes(tgt);
  et->excludes(src)->excludes(tgt);
  div->add_option("--seed", dv.seed);
  div->add_option("--crops", dv.crops, "Crops per source")->capture_default_str()->check(CLI::PositiveNumber);
  div->add_option("--edge", dv.edge, "Crop cube edge in meters")->capture_default_str()->check(CLI::PositiveNumber);
  div->add_flag("--json", dv.as_json);

  GenerateArgs ge;
  auto* gen = app.add_subcommand("generate", "Synthetic fixtures");
  gen->require_subcommand(1);
  auto* plane = gen->add_subcommand("plane", "Axis-aligned planar lattice");
  plane->add_option("--extent", ge.extent)->capture_default_str();
  plane->add_option("--spacing", ge.spacing)->capture_default_str();
  plane->add_option("--axis", ge.axis)->capture_default_str()->check(CLI::IsMember({"x", "y", "z"}));
  auto* noisy = gen->add_subcommand("noisy", "Uniform noise volume");
  noisy->add_option("--count", ge.count)->capture_default_str();
  noisy->add_option("--box", ge.box)->expected(3)->capture_default_str();
  noisy->add_option("--seed", ge.seed);
  for (auto* c : {plane, noisy}) {
    c->add_option("--mask", ge.mask, "Signals to keep")->capture_default_str();
    c->add_option("-o,--out", ge.out)->required();
    c->add_flag("--binary", ge.binary);
  }

  try {
    app.parse(argc, argv);
    if (*init) require_seed(in.seed, "init-model");
    if (*noisy) require_seed(ge.seed, "generate noisy");
    if (*div && !dv.err_s && !dv.err_t) {
      if (dv.source.empty() || dv.target.empty())
        throw CLI::ValidationError("divergence", "give --err-s/--err-t or --source/--target");
      require_seed(dv.seed, "divergence");
    }
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sparsity) return run_analyze(an, false);
    if (*variance) return run_analyze(an, true);
    if (*fwd) return run_forward(fw);
    if (*init) return run_init(in);
    if (*grad) return run_gradcheck_cmd(gc);
    if (*params) return run_params(pa);
    if (*aug) return run_augment(au);
    if (*div) return run_divergence(dv);
    if (*plane) return run_generate(ge, true);
    if (*noisy) return run_generate(ge, false);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitUsage;
}
