#include "gsalign/ply.hpp"

#include "gsalign/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gsalign {
namespace {

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

enum class ScalarType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

ScalarType parse_type(const std::string& t) {
    if (t == "char" || t == "int8") return ScalarType::Int8;
    if (t == "uchar" || t == "uint8") return ScalarType::UInt8;
    if (t == "short" || t == "int16") return ScalarType::Int16;
    if (t == "ushort" || t == "uint16") return ScalarType::UInt16;
    if (t == "int" || t == "int32") return ScalarType::Int32;
    if (t == "uint" || t == "uint32") return ScalarType::UInt32;
    if (t == "float" || t == "float32") return ScalarType::Float32;
    if (t == "double" || t == "float64") return ScalarType::Float64;
    throw FormatError("unknown PLY property type '" + t + "'");
}

std::size_t type_size(ScalarType t) {
    switch (t) {
    case ScalarType::Int8:
    case ScalarType::UInt8:
        return 1;
    case ScalarType::Int16:
    case ScalarType::UInt16:
        return 2;
    case ScalarType::Int32:
    case ScalarType::UInt32:
    case ScalarType::Float32:
        return 4;
    case ScalarType::Float64:
        return 8;
    }
    return 0;
}

template <typename T>
double load_as(const unsigned char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
}

double decode(ScalarType t, const unsigned char* p) {
    switch (t) {
    case ScalarType::Int8: return load_as<std::int8_t>(p);
    case ScalarType::UInt8: return load_as<std::uint8_t>(p);
    case ScalarType::Int16: return load_as<std::int16_t>(p);
    case ScalarType::UInt16: return load_as<std::uint16_t>(p);
    case ScalarType::Int32: return load_as<std::int32_t>(p);
    case ScalarType::UInt32: return load_as<std::uint32_t>(p);
    case ScalarType::Float32: return load_as<float>(p);
    case ScalarType::Float64: return load_as<double>(p);
    }
    return 0.0;
}

struct Property {
    std::string name;
    ScalarType type = ScalarType::Float32;
    bool is_list = false;
    ScalarType count_type = ScalarType::UInt8;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> props;
};

enum class Format { Ascii, BinaryLE };

struct Header {
    Format format = Format::BinaryLE;
    std::vector<Element> elements;
};

Header parse_header(std::istream& in, const std::filesystem::path& path) {
    std::string line;
    if (!std::getline(in, line) || line.substr(0, 3) != "ply") {
        throw FormatError(path.string() + ": not a PLY file");
    }
    Header h;
    bool have_format = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        if (kw == "end_header") {
            if (!have_format) throw FormatError(path.string() + ": missing format line");
            return h;
        }
        if (kw == "comment" || kw == "obj_info" || kw.empty()) continue;
        if (kw == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "ascii") h.format = Format::Ascii;
            else if (fmt == "binary_little_endian") h.format = Format::BinaryLE;
            else throw FormatError(path.string() + ": unsupported PLY format '" + fmt + "'");
            have_format = true;
        } else if (kw == "element") {
            Element e;
            ls >> e.name >> e.count;
            if (!ls) throw FormatError(path.string() + ": malformed element line");
            h.elements.push_back(std::move(e));
        } else if (kw == "property") {
            if (h.elements.empty()) throw FormatError(path.string() + ": property before element");
            Property p;
            std::string t;
            ls >> t;
            if (t == "list") {
                std::string ct, it;
                ls >> ct >> it >> p.name;
                p.is_list = true;
                p.count_type = parse_type(ct);
                p.type = parse_type(it);
            } else {
                p.type = parse_type(t);
                ls >> p.name;
            }
            if (!ls) throw FormatError(path.string() + ": malformed property line");
            h.elements.back().props.push_back(std::move(p));
        } else {
            throw FormatError(path.string() + ": unexpected header keyword '" + kw + "'");
        }
    }
    throw FormatError(path.string() + ": header has no end_header");
}

void write_float(std::ostream& out, double v) {
    const float f = static_cast<float>(v);
    char buf[4];
    std::memcpy(buf, &f, 4);
    out.write(buf, 4);
}

double logit(double a) { return std::log(a / (1.0 - a)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

const std::vector<double>* PlyVertexTable::find(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return &columns[i];
    }
    return nullptr;
}

const std::vector<double>& PlyVertexTable::require(const std::string& name) const {
    if (const auto* col = find(name)) return *col;
    throw FormatError("PLY vertex element is missing required property '" + name + "'");
}

PlyVertexTable read_ply_vertices(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open PLY file " + path.string());
    const Header h = parse_header(in, path);

    PlyVertexTable table;
    bool found = false;
    for (const Element& e : h.elements) {
        const bool is_vertex = e.name == "vertex";
        if (is_vertex) {
            for (const Property& p : e.props) {
                if (p.is_list) {
                    throw FormatError(path.string() + ": list property '" + p.name +
                                      "' in vertex element is unsupported");
                }
                table.names.push_back(p.name);
                table.columns.emplace_back();
                table.columns.back().reserve(e.count);
            }
            table.count = e.count;
        }
        if (h.format == Format::BinaryLE) {
            bool fixed = std::none_of(e.props.begin(), e.props.end(),
                                      [](const Property& p) { return p.is_list; });
            if (fixed) {
                std::size_t stride = 0;
                for (const Property& p : e.props) stride += type_size(p.type);
                std::vector<unsigned char> row(stride);
                for (std::size_t r = 0; r < e.count; ++r) {
                    if (!in.read(reinterpret_cast<char*>(row.data()),
                                 static_cast<std::streamsize>(stride))) {
                        throw FormatError(path.string() + ": truncated data in element '" +
                                          e.name + "'");
                    }
                    if (!is_vertex) continue;
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < e.props.size(); ++k) {
                        table.columns[k].push_back(decode(e.props[k].type, row.data() + off));
                        off += type_size(e.props[k].type);
                    }
                }
            } else {
                // Only non-vertex elements can reach here; skip them entry by entry.
                unsigned char buf[8];
                for (std::size_t r = 0; r < e.count; ++r) {
                    for (const Property& p : e.props) {
                        std::size_t items = 1;
                        if (p.is_list) {
                            if (!in.read(reinterpret_cast<char*>(buf),
                                         static_cast<std::streamsize>(type_size(p.count_type)))) {
                                throw FormatError(path.string() + ": truncated list data");
                            }
                            items = static_cast<std::size_t>(decode(p.count_type, buf));
                        }
                        in.ignore(static_cast<std::streamsize>(items * type_size(p.type)));
                    }
                }
                if (!in) throw FormatError(path.string() + ": truncated data");
            }
        } else {
            std::string line;
            for (std::size_t r = 0; r < e.count; ++r) {
                if (!std::getline(in, line)) {
                    throw FormatError(path.string() + ": truncated ASCII data in element '" +
                                      e.name + "'");
                }
                if (!is_vertex) continue;
                std::istringstream ls(line);
                for (std::size_t k = 0; k < e.props.size(); ++k) {
                    std::string tok;
                    char* end = nullptr;
                    const double v = (ls >> tok) ? std::strtod(tok.c_str(), &end) : 0.0;
                    if (tok.empty() || end != tok.c_str() + tok.size()) {
                        throw FormatError(path.string() + ": malformed ASCII vertex row " +
                                          std::to_string(r));
                    }
                    table.columns[k].push_back(v);
                }
            }
        }
        if (is_vertex) {
            found = true;
            break;
        }
    }
    if (!found) throw FormatError(path.string() + ": no 'vertex' element");
    return table;
}

namespace {

Quat unit_from_stored(const Quat& q) {
    const double n = q.norm();
    return {q.w / n, q.x / n, q.y / n, q.z / n};
}

// Loading renormalizes, so plain float rounding of a unit quaternion can
// come back a few ulps off. Prefer a nearby float32 quadruple that
// normalizes to exactly `q`, which makes load(save(load(f))) == load(f).
std::array<float, 4> stored_rotation(const Quat& q) {
    const std::array<float, 4> base{static_cast<float>(q.w), static_cast<float>(q.x),
                                    static_cast<float>(q.y), static_cast<float>(q.z)};
    auto reproduces = [&](const std::array<float, 4>& f) {
        return unit_from_stored({f[0], f[1], f[2], f[3]}) == q;
    };
    if (reproduces(base)) return base;
    constexpr int kReach = 2;
    std::array<float, 4> f{};
    for (int a = -kReach; a <= kReach; ++a) {
        for (int b = -kReach; b <= kReach; ++b) {
            for (int c = -kReach; c <= kReach; ++c) {
                for (int d = -kReach; d <= kReach; ++d) {
                    const int off[4] = {a, b, c, d};
                    for (int k = 0; k < 4; ++k) {
                        f[k] = base[k];
                        for (int s = 0; s < std::abs(off[k]); ++s) {
                            f[k] = std::nextafter(f[k], off[k] > 0 ? 2.0f : -2.0f);
                        }
                    }
                    if (reproduces(f)) return f;
                }
            }
        }
    }
    return base;
}

} // namespace

GaussianCloud load_ply(const std::filesystem::path& path) {
    const PlyVertexTable t = read_ply_vertices(path);
    const char* required[] = {"x",       "y",       "z",       "f_dc_0", "f_dc_1",
                              "f_dc_2",  "opacity", "scale_0", "scale_1", "scale_2",
                              "rot_0",   "rot_1",   "rot_2",   "rot_3"};
    std::vector<const std::vector<double>*> cols;
    for (const char* name : required) cols.push_back(&t.require(name));

    GaussianCloud cloud;
    cloud.id = path.stem().string();
    cloud.primitives.reserve(t.count);
    for (std::size_t i = 0; i < t.count; ++i) {
        double raw[14];
        for (std::size_t k = 0; k < 14; ++k) {
            raw[k] = (*cols[k])[i];
            if (!std::isfinite(raw[k])) {
                throw DataError(path.string() + ": non-finite '" + required[k] +
                                "' at primitive " + std::to_string(i));
            }
        }
        GaussianPrimitive g;
        g.mu = {raw[0], raw[1], raw[2]};
        for (std::size_t k = 0; k < 3; ++k) {
            g.color[k] = std::clamp(0.5 + kSHC0 * raw[3 + k], 0.0, 1.0);
        }
        g.opacity = sigmoid(raw[6]);
        for (std::size_t k = 0; k < 3; ++k) {
            g.scale[k] = std::exp(raw[7 + k]);
            if (!(g.scale[k] > 0.0) || !std::isfinite(g.scale[k])) {
                throw DataError(path.string() + ": scale out of range at primitive " +
                                std::to_string(i));
            }
        }
        const Quat q{raw[10], raw[11], raw[12], raw[13]};
        if (!(q.norm() > 0.0)) {
            throw DataError(path.string() + ": zero-norm rotation at primitive " +
                            std::to_string(i));
        }
        g.rotation = unit_from_stored(q);
        cloud.primitives.push_back(g);
    }
    return cloud;
}

void save_ply(const GaussianCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write PLY file " + path.string());
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size() << "\n";
    for (const char* name : {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0",
                             "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"}) {
        out << "property float " << name << "\n";
    }
    out << "end_header\n";
    constexpr double kOpacityClamp = 1e-7;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const GaussianPrimitive& g = cloud.primitives[i];
        for (double v : g.mu) write_float(out, v);
        for (double c : g.color) write_float(out, (c - 0.5) / kSHC0);
        write_float(out, logit(std::clamp(g.opacity, kOpacityClamp, 1.0 - kOpacityClamp)));
        for (double s : g.scale) {
            if (!(s > 0.0)) {
                throw DataError("non-positive scale at primitive " + std::to_string(i));
            }
            write_float(out, std::log(s));
        }
        for (float v : stored_rotation(g.rotation)) write_float(out, v);
    }
    if (!out) throw FormatError("failed writing PLY file " + path.string());
}

PointCloud load_point_cloud_ply(const std::filesystem::path& path) {
    const PlyVertexTable t = read_ply_vertices(path);
    const auto& xs = t.require("x");
    const auto& ys = t.require("y");
    const auto& zs = t.require("z");
    const auto* r = t.find("red");
    const auto* g = t.find("green");
    const auto* b = t.find("blue");
    const bool has_color = r && g && b;
    double color_scale = 1.0;
    if (has_color) {
        const double peak = std::max({r->empty() ? 0.0 : *std::max_element(r->begin(), r->end()),
                                      g->empty() ? 0.0 : *std::max_element(g->begin(), g->end()),
                                      b->empty() ? 0.0 : *std::max_element(b->begin(), b->end())});
        if (peak > 1.0) color_scale = 1.0 / 255.0;
    }
    PointCloud pc;
    pc.points.reserve(t.count);
    pc.colors.reserve(t.count);
    for (std::size_t i = 0; i < t.count; ++i) {
        pc.points.push_back({xs[i], ys[i], zs[i]});
        for (double v : pc.points.back()) {
            if (!std::isfinite(v)) {
                throw DataError(path.string() + ": non-finite position at point " +
                                std::to_string(i));
            }
        }
        if (has_color) {
            pc.colors.push_back({std::clamp((*r)[i] * color_scale, 0.0, 1.0),
                                 std::clamp((*g)[i] * color_scale, 0.0, 1.0),
                                 std::clamp((*b)[i] * color_scale, 0.0, 1.0)});
        } else {
            pc.colors.push_back({0.5, 0.5, 0.5});
        }
    }
    return pc;
}

void save_point_cloud_ply(const PointCloud& cloud, const std::filesystem::path& path) {
    if (cloud.points.size() != cloud.colors.size()) {
        throw InputError("point cloud positions and colors differ in length");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write PLY file " + path.string());
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.points.size()
        << "\nproperty float x\nproperty float y\nproperty float z\n"
           "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        for (double v : cloud.points[i]) write_float(out, v);
        for (double c : cloud.colors[i]) {
            const auto byte = static_cast<unsigned char>(
                std::clamp(std::floor(c * 255.0 + 0.5), 0.0, 255.0));
            out.put(static_cast<char>(byte));
        }
    }
}

} // namespace gsalign
