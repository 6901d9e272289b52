#include "voxattn/ply.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "voxattn/errors.hpp"

namespace voxattn {

namespace {

enum class ScalarType { i8, u8, i16, u16, i32, u32, f32, f64 };

std::optional<ScalarType> parse_type(std::string_view name) {
  if (name == "char" || name == "int8") return ScalarType::i8;
  if (name == "uchar" || name == "uint8") return ScalarType::u8;
  if (name == "short" || name == "int16") return ScalarType::i16;
  if (name == "ushort" || name == "uint16") return ScalarType::u16;
  if (name == "int" || name == "int32") return ScalarType::i32;
  if (name == "uint" || name == "uint32") return ScalarType::u32;
  if (name == "float" || name == "float32") return ScalarType::f32;
  if (name == "double" || name == "float64") return ScalarType::f64;
  return std::nullopt;
}

std::size_t type_size(ScalarType t) {
  switch (t) {
    case ScalarType::i8:
    case ScalarType::u8: return 1;
    case ScalarType::i16:
    case ScalarType::u16: return 2;
    case ScalarType::i32:
    case ScalarType::u32:
    case ScalarType::f32: return 4;
    case ScalarType::f64: return 8;
  }
  return 0;
}

struct Property {
  std::string name;
  ScalarType type = ScalarType::f32;
  bool is_list = false;
  ScalarType count_type = ScalarType::u8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

struct Header {
  PlyFormat format = PlyFormat::ascii;
  std::vector<Element> elements;
  std::size_t lines = 0;
};

std::vector<std::string> split(const std::string& line) {
  std::istringstream ss(line);
  return {std::istream_iterator<std::string>(ss), std::istream_iterator<std::string>()};
}

Header parse_header(std::istream& in) {
  Header h;
  std::string line;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++h.lines;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next() || line != "ply") throw ParseError("missing 'ply' magic", 1);
  bool have_format = false;
  for (;;) {
    if (!next()) throw ParseError("unexpected end of header", h.lines + 1);
    auto tok = split(line);
    if (tok.empty()) continue;
    const auto& kw = tok[0];
    if (kw == "end_header") break;
    if (kw == "comment" || kw == "obj_info") continue;
    if (kw == "format") {
      if (tok.size() != 3) throw ParseError("malformed format line", h.lines);
      if (tok[1] == "ascii") {
        h.format = PlyFormat::ascii;
      } else if (tok[1] == "binary_little_endian") {
        h.format = PlyFormat::binary_little_endian;
      } else {
        throw ParseError("unsupported format '" + tok[1] + "'", h.lines);
      }
      have_format = true;
    } else if (kw == "element") {
      if (tok.size() != 3) throw ParseError("malformed element line", h.lines);
      Element e;
      e.name = tok[1];
      try {
        std::size_t used = 0;
        const long long n = std::stoll(tok[2], &used);
        if (used != tok[2].size() || n < 0) throw std::invalid_argument("count");
        e.count = static_cast<std::size_t>(n);
      } catch (const std::exception&) {
        throw ParseError("invalid element count '" + tok[2] + "'", h.lines);
      }
      h.elements.push_back(std::move(e));
    } else if (kw == "property") {
      if (h.elements.empty()) throw ParseError("property before any element", h.lines);
      Property p;
      if (tok.size() == 5 && tok[1] == "list") {
        auto ct = parse_type(tok[2]);
        auto it = parse_type(tok[3]);
        if (!ct || !it) throw ParseError("unknown list property type", h.lines);
        p.is_list = true;
        p.count_type = *ct;
        p.type = *it;
        p.name = tok[4];
      } else if (tok.size() == 3) {
        auto t = parse_type(tok[1]);
        if (!t) throw ParseError("unknown property type '" + tok[1] + "'", h.lines);
        p.type = *t;
        p.name = tok[2];
      } else {
        throw ParseError("malformed property line", h.lines);
      }
      h.elements.back().properties.push_back(std::move(p));
    } else {
      throw ParseError("unknown header keyword '" + kw + "'", h.lines);
    }
  }
  if (!have_format) throw ParseError("header lacks a format line", h.lines);
  return h;
}

// Column indices of the recognised vertex properties.
struct VertexLayout {
  int xyz[3] = {-1, -1, -1};
  int rgb[3] = {-1, -1, -1};
  int nrm[3] = {-1, -1, -1};
  bool color_bytes = true;
  SignalMask mask = SignalMask::p();
};

VertexLayout vertex_layout(const Element& vertex, std::size_t header_lines) {
  VertexLayout v;
  static constexpr const char* kXyz[3] = {"x", "y", "z"};
  static constexpr const char* kRgb[3] = {"red", "green", "blue"};
  static constexpr const char* kNrm[3] = {"nx", "ny", "nz"};
  for (std::size_t i = 0; i < vertex.properties.size(); ++i) {
    const auto& p = vertex.properties[i];
    for (int a = 0; a < 3; ++a) {
      const bool hit = p.name == kXyz[a] || p.name == kRgb[a] || p.name == kNrm[a];
      if (hit && p.is_list) throw ParseError("vertex property '" + p.name + "' must be scalar", header_lines);
      if (p.name == kXyz[a]) v.xyz[a] = static_cast<int>(i);
      if (p.name == kRgb[a]) v.rgb[a] = static_cast<int>(i);
      if (p.name == kNrm[a]) v.nrm[a] = static_cast<int>(i);
    }
  }
  auto count = [](const int (&idx)[3]) { return (idx[0] >= 0) + (idx[1] >= 0) + (idx[2] >= 0); };
  if (count(v.xyz) != 3) throw ParseError("vertex element must declare x, y and z", header_lines);
  const int nc = count(v.rgb);
  const int nn = count(v.nrm);
  if (nc != 0 && nc != 3) throw ParseError("incomplete red/green/blue properties", header_lines);
  if (nn != 0 && nn != 3) throw ParseError("incomplete nx/ny/nz properties", header_lines);
  if (nc == 3) {
    v.mask = v.mask.with(Signal::color);
    const auto t = vertex.properties[v.rgb[0]].type;
    v.color_bytes = !(t == ScalarType::f32 || t == ScalarType::f64);
    for (int a = 1; a < 3; ++a)
      if (vertex.properties[v.rgb[a]].type != t) throw ParseError("color channels must share one type", header_lines);
  }
  if (nn == 3) v.mask = v.mask.with(Signal::normal);
  return v;
}

PointRecord make_point(const std::vector<double>& values, const VertexLayout& layout, std::size_t index) {
  PointRecord pt;
  for (int a = 0; a < 3; ++a) pt.position[a] = values[layout.xyz[a]];
  for (double c : pt.position)
    if (!std::isfinite(c)) throw DataError("non-finite coordinate in vertex " + std::to_string(index));
  if (layout.mask.has(Signal::color)) {
    Vec3 c;
    for (int a = 0; a < 3; ++a) {
      c[a] = values[layout.rgb[a]];
      if (layout.color_bytes) c[a] /= 255.0;
      if (!std::isfinite(c[a]) || c[a] < 0.0 || c[a] > 1.0)
        throw DataError("color outside [0,1] in vertex " + std::to_string(index));
    }
    pt.color = c;
  }
  if (layout.mask.has(Signal::normal)) {
    Vec3 n;
    for (int a = 0; a < 3; ++a) n[a] = values[layout.nrm[a]];
    const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    if (!std::isfinite(len)) throw DataError("non-finite normal in vertex " + std::to_string(index));
    if (len == 0.0) throw DataError("zero-length normal in vertex " + std::to_string(index));
    // Float-stored unit normals are kept verbatim so binary round trips stay exact.
    if (std::abs(len - 1.0) > 1e-6)
      for (double& x : n) x /= len;
    pt.normal = n;
  }
  return pt;
}

template <typename T>
T load_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  }
  return v;
}

double decode(ScalarType t, const char* p) {
  switch (t) {
    case ScalarType::i8: return load_le<std::int8_t>(p);
    case ScalarType::u8: return load_le<std::uint8_t>(p);
    case ScalarType::i16: return load_le<std::int16_t>(p);
    case ScalarType::u16: return load_le<std::uint16_t>(p);
    case ScalarType::i32: return load_le<std::int32_t>(p);
    case ScalarType::u32: return load_le<std::uint32_t>(p);
    case ScalarType::f32: return load_le<float>(p);
    case ScalarType::f64: return load_le<double>(p);
  }
  return 0.0;
}

class BinaryCursor {
 public:
  explicit BinaryCursor(std::string data) : data_(std::move(data)) {}
  double read(ScalarType t, const std::string& what) {
    const auto n = type_size(t);
    if (pos_ + n > data_.size())
      throw ParseError("binary payload ended early while reading " + what +
                       " (declared element counts exceed payload length)");
    const double v = decode(t, data_.data() + pos_);
    pos_ += n;
    return v;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(PlyFormat format) {
  return format == PlyFormat::ascii ? "ascii" : "binary_little_endian";
}

PointCloud read_ply(std::istream& in, std::optional<PlyFormat> expected) {
  const Header h = parse_header(in);
  if (expected && *expected != h.format)
    throw ParseError("expected " + std::string(to_string(*expected)) + " PLY, found " +
                     std::string(to_string(h.format)));
  const Element* vertex = nullptr;
  for (const auto& e : h.elements)
    if (e.name == "vertex") vertex = &e;
  if (!vertex) throw ParseError("header declares no vertex element", h.lines);
  const VertexLayout layout = vertex_layout(*vertex, h.lines);

  PointCloud cloud;
  cloud.mask = layout.mask;
  cloud.points.reserve(vertex->count);

  if (h.format == PlyFormat::ascii) {
    std::size_t line_no = h.lines;
    std::string line;
    for (const auto& e : h.elements) {
      for (std::size_t r = 0; r < e.count; ++r) {
        do {
          if (!std::getline(in, line))
            throw ParseError("file ended before all " + e.name + " records were read", line_no + 1);
          ++line_no;
        } while (line.find_first_not_of(" \t\r") == std::string::npos);
        std::istringstream ss(line);
        std::vector<double> values;
        values.reserve(e.properties.size());
        for (const auto& p : e.properties) {
          std::string tok;
          if (!(ss >> tok)) throw ParseError("too few values in " + e.name + " record", line_no);
          double v = 0.0;
          try {
            std::size_t used = 0;
            v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
          } catch (const std::out_of_range&) {
            v = HUGE_VAL;
          } catch (const std::exception&) {
            if (tok == "nan" || tok == "-nan") v = NAN;
            else if (tok == "inf") v = INFINITY;
            else if (tok == "-inf") v = -INFINITY;
            else throw ParseError("invalid number '" + tok + "'", line_no);
          }
          if (p.is_list) {
            const auto n = static_cast<long long>(v);
            for (long long k = 0; k < n; ++k)
              if (!(ss >> tok)) throw ParseError("list shorter than its count", line_no);
            values.push_back(0.0);
          } else {
            values.push_back(v);
          }
        }
        std::string extra;
        if (ss >> extra) throw ParseError("extra values in " + e.name + " record", line_no);
        if (&e == vertex) cloud.points.push_back(make_point(values, layout, r));
      }
    }
  } else {
    BinaryCursor cur(std::string(std::istreambuf_iterator<char>(in), {}));
    std::vector<double> values;
    for (const auto& e : h.elements) {
      for (std::size_t r = 0; r < e.count; ++r) {
        values.clear();
        for (const auto& p : e.properties) {
          if (p.is_list) {
            const double n = cur.read(p.count_type, e.name + " list count");
            for (long long k = 0; k < static_cast<long long>(n); ++k) cur.read(p.type, e.name + " list item");
            values.push_back(0.0);
          } else {
            values.push_back(cur.read(p.type, e.name + "." + p.name));
          }
        }
        if (&e == vertex) cloud.points.push_back(make_point(values, layout, r));
      }
    }
    if (cur.remaining() != 0)
      throw ParseError("binary payload has " + std::to_string(cur.remaining()) +
                       " bytes beyond the declared element counts");
  }
  return cloud;
}

PointCloud load_ply(const std::filesystem::path& path, std::optional<PlyFormat> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return read_ply(in, expected);
}

namespace {

template <typename T>
void put_le(std::ostream& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  out.write(b, sizeof(T));
}

std::uint8_t color_byte(double c) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_ply(std::ostream& out, const PointCloud& cloud, PlyFormat format) {
  const bool has_c = cloud.mask.has(Signal::color);
  const bool has_n = cloud.mask.has(Signal::normal);
  out << "ply\nformat " << to_string(format) << " 1.0\n"
      << "comment written by voxattn\n"
      << "element vertex " << cloud.points.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n";
  if (has_c) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (has_n) out << "property float nx\nproperty float ny\nproperty float nz\n";
  out << "end_header\n";

  if (format == PlyFormat::ascii) {
    out << std::setprecision(17);
    for (const auto& pt : cloud.points) {
      out << pt.position[0] << ' ' << pt.position[1] << ' ' << pt.position[2];
      if (has_c) {
        const auto& c = pt.color.value();
        out << ' ' << int(color_byte(c[0])) << ' ' << int(color_byte(c[1])) << ' ' << int(color_byte(c[2]));
      }
      if (has_n) {
        const auto& n = pt.normal.value();
        out << ' ' << n[0] << ' ' << n[1] << ' ' << n[2];
      }
      out << '\n';
    }
  } else {
    for (const auto& pt : cloud.points) {
      for (double x : pt.position) put_le(out, static_cast<float>(x));
      if (has_c)
        for (double c : pt.color.value()) put_le(out, color_byte(c));
      if (has_n)
        for (double x : pt.normal.value()) put_le(out, static_cast<float>(x));
    }
  }
}

void save_ply(const std::filesystem::path& path, const PointCloud& cloud, PlyFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  write_ply(out, cloud, format);
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

}  // namespace voxattn
