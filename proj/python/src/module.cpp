#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>

#include "voxattn/attention.hpp"
#include "voxattn/augmentation.hpp"
#include "voxattn/checkpoint.hpp"
#include "voxattn/crse.hpp"
#include "voxattn/discrepancy.hpp"
#include "voxattn/encoder.hpp"
#include "voxattn/errors.hpp"
#include "voxattn/gradcheck.hpp"
#include "voxattn/ply.hpp"
#include "voxattn/synthetic.hpp"
#include "voxattn/voxel_grid.hpp"

namespace py = pybind11;
using namespace voxattn;

namespace {

using Rows3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Coords = Eigen::Matrix<std::int32_t, Eigen::Dynamic, 3, Eigen::RowMajor>;

PointCloud cloud_from_arrays(const Rows3& positions, std::optional<Rows3> colors, std::optional<Rows3> normals) {
  const auto n = positions.rows();
  if ((colors && colors->rows() != n) || (normals && normals->rows() != n))
    throw ShapeError("colors and normals need one row per position");
  PointCloud pc;
  pc.mask = SignalMask::p();
  if (colors) pc.mask = pc.mask.with(Signal::color);
  if (normals) pc.mask = pc.mask.with(Signal::normal);
  pc.points.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& p = pc.points[static_cast<std::size_t>(i)];
    p.position = {positions(i, 0), positions(i, 1), positions(i, 2)};
    if (colors) p.color = Vec3{(*colors)(i, 0), (*colors)(i, 1), (*colors)(i, 2)};
    if (normals) p.normal = Vec3{(*normals)(i, 0), (*normals)(i, 1), (*normals)(i, 2)};
  }
  pc.validate();
  return pc;
}

std::optional<Rows3> channel(const PointCloud& pc, Signal s) {
  if (!pc.mask.has(s)) return std::nullopt;
  Rows3 out(static_cast<Eigen::Index>(pc.size()), 3);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const auto& p = pc.points[i];
    const Vec3& v = s == Signal::position ? p.position : (s == Signal::color ? *p.color : *p.normal);
    for (int a = 0; a < 3; ++a) out(static_cast<Eigen::Index>(i), a) = v[static_cast<std::size_t>(a)];
  }
  return out;
}

Coords grid_coords(const SparseVoxelGrid& g) {
  Coords c(static_cast<Eigen::Index>(g.size()), 3);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (int a = 0; a < 3; ++a) c(static_cast<Eigen::Index>(i), a) = g.cell(i).coord[static_cast<std::size_t>(a)];
  return c;
}

// Writable numpy view over a span owned by `owner`.
py::array_t<double> view(std::span<double> data, py::handle owner) {
  return py::array_t<double>({static_cast<py::ssize_t>(data.size())}, {static_cast<py::ssize_t>(sizeof(double))},
                             data.data(), owner);
}

QuantizedDelta quantized(const Eigen::VectorXd& delta, const QuantizerSpec& q) {
  if (delta.size() != q.signal_count()) throw ShapeError("delta length must match the quantizer's signal count");
  return quantize_delta(std::span<const double>(delta.data(), static_cast<std::size_t>(delta.size())), q);
}

py::dict histogram_dict(const NormalizedCumulativeHistogram& h) {
  py::dict d;
  d["signal"] = h.signal;
  d["voxel_size"] = h.voxel_size;
  d["window_size"] = h.window_size;
  d["bin_edges"] = h.bin_edges;
  d["cumulative"] = h.cumulative;
  d["samples"] = h.samples;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sparse-voxel windowed attention with relative signal encodings";

  // Leaked on purpose: exception types must outlive the module during interpreter teardown.
  static py::handle base = py::exception<Error>(m, "VoxattnError", PyExc_RuntimeError).release();
  static py::handle parse_exc = py::exception<Error>(m, "ParseError", base.ptr()).release();
  static py::handle data_exc = py::exception<Error>(m, "DataError", base.ptr()).release();
  static py::handle semantic_exc = py::exception<Error>(m, "SemanticError", base.ptr()).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      switch (e.kind()) {
        case ErrorKind::parse: py::set_error(parse_exc, e.what()); return;
        case ErrorKind::data: py::set_error(data_exc, e.what()); return;
        case ErrorKind::semantic: py::set_error(semantic_exc, e.what()); return;
        case ErrorKind::internal: break;
      }
      py::set_error(base, e.what());
    }
  });

  // Point clouds
  py::class_<PointCloud>(m, "PointCloud")
      .def(py::init(&cloud_from_arrays), py::arg("positions"), py::arg("colors") = py::none(),
           py::arg("normals") = py::none())
      .def("__len__", &PointCloud::size)
      .def_property_readonly("mask", [](const PointCloud& pc) { return pc.mask.str(); })
      .def_property_readonly("positions", [](const PointCloud& pc) { return *channel(pc, Signal::position); })
      .def_property_readonly("colors", [](const PointCloud& pc) { return channel(pc, Signal::color); })
      .def_property_readonly("normals", [](const PointCloud& pc) { return channel(pc, Signal::normal); })
      .def("__eq__", [](const PointCloud& a, const PointCloud& b) { return a == b; });

  m.def("load_ply", [](const std::filesystem::path& p) { return load_ply(p); }, py::arg("path"));
  m.def(
      "save_ply",
      [](const std::filesystem::path& p, const PointCloud& pc, bool binary) {
        save_ply(p, pc, binary ? PlyFormat::binary_little_endian : PlyFormat::ascii);
      },
      py::arg("path"), py::arg("cloud"), py::arg("binary") = false);
  m.def(
      "plane_scene",
      [](double extent, double spacing, const std::string& axis) {
        return generate_plane_scene(extent, spacing, axis == "x" ? Axis::x : (axis == "y" ? Axis::y : Axis::z));
      },
      py::arg("extent") = 1.0, py::arg("spacing") = 0.02, py::arg("axis") = "z");
  m.def(
      "noisy_scene",
      [](std::size_t count, std::array<double, 3> box, std::uint64_t seed) {
        NoisyVolumeOptions o;
        o.count = count;
        o.box = box;
        o.seed = seed;
        return generate_noisy_volume_scene(o);
      },
      py::arg("count"), py::arg("box"), py::arg("seed"));

  // Voxels
  m.def(
      "voxel_hierarchy",
      [](const PointCloud& pc, double voxel_size, int levels) {
        std::vector<Coords> out;
        for (const auto& g : build_hierarchy(voxelize(pc, voxel_size), levels)) out.push_back(grid_coords(g));
        return out;
      },
      py::arg("cloud"), py::arg("voxel_size"), py::arg("levels"),
      "Occupied voxel coordinates of every level, finest first.");

  // Relative encodings
  py::class_<QuantizerSpec>(m, "Quantizer")
      .def_static("for_window", &QuantizerSpec::for_window, py::arg("window_size"), py::arg("voxel_size"),
                  py::arg("divisions") = 16, py::arg("divisions_2d") = 4)
      .def_readonly("lower", &QuantizerSpec::lower)
      .def_readonly("upper", &QuantizerSpec::upper)
      .def("quantize", [](const QuantizerSpec& q, const Eigen::VectorXd& d) {
        return quantize(std::span<const double>(d.data(), static_cast<std::size_t>(d.size())), q);
      });

  py::class_<LookupTableSet>(m, "LookupTables")
      .def(py::init([](const std::string& mode, int channels, int domains, int divisions, int divisions_2d) {
             return LookupTableSet(parse_crse_mode(mode), channels, kSignalChannels, divisions, divisions_2d, domains);
           }),
           py::arg("mode"), py::arg("channels"), py::arg("domains") = 1, py::arg("divisions") = 16,
           py::arg("divisions_2d") = 4)
      .def_property_readonly("mode", [](const LookupTableSet& t) { return std::string(to_string(t.mode())); })
      .def_property_readonly("shared", [](py::object self) { return view(self.cast<LookupTableSet&>().shared_data(), self); })
      .def_property_readonly("modulation",
                             [](py::object self) { return view(self.cast<LookupTableSet&>().modulation_data(), self); })
      .def("init", &init_tables, py::arg("seed"))
      .def(
          "lookup",
          [](const LookupTableSet& t, const std::string& role, const Eigen::VectorXd& delta, const QuantizerSpec& q,
             int domain) {
            const Role r = role == "q" ? Role::q : (role == "k" ? Role::k : Role::v);
            return crse_lookup(t, r, quantized(delta, q), domain);
          },
          py::arg("role"), py::arg("delta"), py::arg("quantizer"), py::arg("domain") = 0);

  m.def(
      "modulation_param_count",
      [](int signals, int domains, int divisions, const std::string& mode, int d2) {
        return modulation_param_count(signals, domains, divisions, parse_crse_mode(mode), d2);
      },
      py::arg("signal_count"), py::arg("domains"), py::arg("divisions"), py::arg("mode"), py::arg("divisions_2d") = 4);

  // Attention
  m.def(
      "window_attention",
      [](const Mat& features, const Mat& signals, const Mat& q, const Mat& k, const Mat& v, const LookupTableSet& tables,
         const QuantizerSpec& quantizer, std::optional<Mat> prompts, int domain, int heads, bool reference) -> py::object {
        const int d = static_cast<int>(features.cols());
        const Mat p = prompts ? *prompts : Mat(0, d);
        const ProjectionSet proj{q, k, v};
        AttentionConfig cfg{d, heads, 5, static_cast<int>(p.rows()), tables.mode()};
        const AttentionParams params{proj, tables, quantizer, p, domain};
        const WindowInputs in{features, signals};
        if (!reference) return py::cast(window_attention_forward(in, params, cfg));
        ReferenceResult r = window_attention_reference(in, params, cfg);
        return py::make_tuple(r.output, r.weights);
      },
      py::arg("features"), py::arg("signals"), py::arg("q"), py::arg("k"), py::arg("v"), py::arg("tables"),
      py::arg("quantizer"), py::arg("prompts") = py::none(), py::arg("domain") = 0, py::arg("heads") = 1,
      py::arg("reference") = false,
      "Attention over one window. With reference=True returns (output, per-head weights) from the dense path.");

  // Encoder
  py::class_<Model>(m, "Encoder")
      .def(py::init([](std::optional<std::string> config_json, std::uint64_t seed) {
             return build_model(config_json ? ModelConfig::from_json(*config_json) : ModelConfig{}, seed);
           }),
           py::arg("config_json") = py::none(), py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); })
      .def("save", [](const Model& mdl, const std::filesystem::path& p) { save_checkpoint(p, mdl); })
      .def_property_readonly("config_json", [](const Model& mdl) { return mdl.config.to_json(); })
      .def("checksum", &parameter_checksum)
      .def("parameter_counts",
           [](const Model& mdl) {
             const ParameterBreakdown b = count_parameters(mdl);
             py::dict d;
             d["embedding"] = b.embedding;
             d["blocks_shared"] = b.blocks_shared;
             d["blocks_domain_specific"] = b.blocks_domain_specific;
             d["other"] = b.other;
             d["total"] = b.total();
             d["modulation_per_block"] = b.modulation_per_block;
             return d;
           })
      .def(
          "forward",
          [](const Model& mdl, const PointCloud& pc, int domain) {
            EncoderOutput out;
            {
              py::gil_scoped_release nogil;
              out = forward(mdl, pc, domain);
            }
            py::list levels;
            for (std::size_t l = 0; l < out.grids.size(); ++l)
              levels.append(py::make_tuple(grid_coords(out.grids[l]), out.features[l]));
            return levels;
          },
          py::arg("cloud"), py::arg("domain"), "Per level (coords, features), finest first.");

  m.def(
      "read_feature_dump",
      [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw DataError("cannot open " + p.string());
        py::list levels;
        for (auto& lvl : read_feature_dump(in)) {
          Coords c(static_cast<Eigen::Index>(lvl.coords.size()), 3);
          for (std::size_t i = 0; i < lvl.coords.size(); ++i)
            for (int a = 0; a < 3; ++a) c(static_cast<Eigen::Index>(i), a) = lvl.coords[i][static_cast<std::size_t>(a)];
          levels.append(py::make_tuple(c, lvl.features));
        }
        return levels;
      },
      py::arg("path"));

  // Augmentation
  m.def("default_subsets", [](const std::string& available) {
    std::vector<std::string> out;
    for (auto s : default_subsets(SignalMask::parse(available))) out.push_back(s.str());
    return out;
  });
  m.def("project_signals", [](const PointCloud& pc, const std::string& t) { return project_signals(pc, SignalMask::parse(t)); });
  m.def("virtualize_signals",
        [](const PointCloud& pc, const std::string& t) { return virtualize_signals(pc, SignalMask::parse(t)); });
  m.def(
      "mix_schedule",
      [](const std::vector<std::pair<int, int>>& ratios, long long count) {
        std::vector<SourceRatio> r;
        for (auto [s, w] : ratios) r.push_back({s, w});
        return MixSchedule(r).take(count);
      },
      py::arg("ratios"), py::arg("count"), "First `count` batch sources for (source, ratio) pairs.");

  // Discrepancy
  m.def(
      "occupancy_histogram",
      [](const PointCloud& pc, double vs, int window, int bins, bool interior) {
        return histogram_dict(window_occupancy_stats(pc, vs, window, bins, interior));
      },
      py::arg("cloud"), py::arg("voxel_size"), py::arg("window_size"), py::arg("bins") = kDefaultHistogramBins,
      py::arg("interior_only") = false);
  m.def(
      "variance_histogram",
      [](const PointCloud& pc, double vs, int window, const std::string& signal, int bins, bool interior) {
        return histogram_dict(signal_variance_stats(pc, vs, window, parse_signal(signal), bins, interior));
      },
      py::arg("cloud"), py::arg("voxel_size"), py::arg("window_size"), py::arg("signal"),
      py::arg("bins") = kDefaultHistogramBins, py::arg("interior_only") = false);
  m.def("pairwise_variance", &pairwise_variance, py::arg("samples"));
  m.def("centroid_variance", &centroid_variance, py::arg("samples"));
  m.def(
      "h_divergence", [](double es, double et) { return h_divergence(es, et).d_h; }, py::arg("err_source"),
      py::arg("err_target"));

  // Gradient check
  m.def(
      "gradcheck",
      [](std::uint64_t seed, int trials, double tolerance) {
        GradcheckOptions o;
        o.seed = seed;
        o.trials = trials;
        o.tolerance = tolerance;
        GradcheckReport r;
        {
          py::gil_scoped_release nogil;
          r = run_gradcheck(o);
        }
        return py::make_tuple(r.passed, r.max_error, r.text());
      },
      py::arg("seed") = 0, py::arg("trials") = 50, py::arg("tolerance") = 1e-4);
}
