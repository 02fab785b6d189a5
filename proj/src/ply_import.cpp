#include "goi/binary_io.hpp"
#include "goi/errors.hpp"
#include "goi/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace goi {

namespace {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

std::optional<PlyType> parse_type(const std::string& name) {
    static const std::map<std::string, PlyType> table = {
        {"char", PlyType::Int8},     {"int8", PlyType::Int8},       {"uchar", PlyType::UInt8},
        {"uint8", PlyType::UInt8},   {"short", PlyType::Int16},     {"int16", PlyType::Int16},
        {"ushort", PlyType::UInt16}, {"uint16", PlyType::UInt16},   {"int", PlyType::Int32},
        {"int32", PlyType::Int32},   {"uint", PlyType::UInt32},     {"uint32", PlyType::UInt32},
        {"float", PlyType::Float32}, {"float32", PlyType::Float32}, {"double", PlyType::Float64},
        {"float64", PlyType::Float64},
    };
    auto it = table.find(name);
    if (it == table.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::size_t type_size(PlyType t) {
    switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8:
        return 1;
    case PlyType::Int16:
    case PlyType::UInt16:
        return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32:
        return 4;
    case PlyType::Float64:
        return 8;
    }
    return 0;
}

template <typename T>
double load_as(const std::uint8_t* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
}

double decode_binary(PlyType t, const std::uint8_t* p) {
    switch (t) {
    case PlyType::Int8:
        return load_as<std::int8_t>(p);
    case PlyType::UInt8:
        return load_as<std::uint8_t>(p);
    case PlyType::Int16:
        return load_as<std::int16_t>(p);
    case PlyType::UInt16:
        return load_as<std::uint16_t>(p);
    case PlyType::Int32:
        return load_as<std::int32_t>(p);
    case PlyType::UInt32:
        return load_as<std::uint32_t>(p);
    case PlyType::Float32:
        return load_as<float>(p);
    case PlyType::Float64:
        return load_as<double>(p);
    }
    return 0.0;
}

struct Property {
    std::string name;
    PlyType type;
    bool is_list = false;
    PlyType count_type = PlyType::UInt8;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> properties;
};

struct Header {
    bool binary = false;
    std::vector<Element> elements;
    std::size_t body_offset = 0;
};

[[noreturn]] void malformed(const std::string& context, const std::string& what) {
    throw FormatError(FormatError::Kind::Malformed, context + ": " + what);
}

Header parse_header(std::span<const std::uint8_t> bytes, const std::string& context) {
    Header h;
    std::size_t pos = 0;
    auto next_line = [&]() -> std::optional<std::string> {
        if (pos >= bytes.size()) {
            return std::nullopt;
        }
        std::size_t end = pos;
        while (end < bytes.size() && bytes[end] != '\n') {
            ++end;
        }
        std::string line(reinterpret_cast<const char*>(bytes.data() + pos), end - pos);
        pos = std::min(bytes.size(), end + 1);
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        return line;
    };

    auto first = next_line();
    if (!first || *first != "ply") {
        throw FormatError(FormatError::Kind::WrongMagic, context + ": missing 'ply' signature");
    }
    bool have_format = false;
    while (true) {
        auto line = next_line();
        if (!line) {
            throw FormatError(FormatError::Kind::Truncated, context + ": header has no end_header");
        }
        std::istringstream ls(*line);
        std::string keyword;
        ls >> keyword;
        if (keyword.empty() || keyword == "comment" || keyword == "obj_info") {
            continue;
        }
        if (keyword == "end_header") {
            break;
        }
        if (keyword == "format") {
            std::string fmt, version;
            ls >> fmt >> version;
            if (fmt == "ascii") {
                h.binary = false;
            } else if (fmt == "binary_little_endian") {
                h.binary = true;
            } else {
                malformed(context, "unsupported PLY format '" + fmt + "'");
            }
            have_format = true;
        } else if (keyword == "element") {
            Element e;
            ls >> e.name >> e.count;
            if (!ls) {
                malformed(context, "bad element line '" + *line + "'");
            }
            h.elements.push_back(std::move(e));
        } else if (keyword == "property") {
            if (h.elements.empty()) {
                malformed(context, "property before any element");
            }
            Property p;
            std::string type_name;
            ls >> type_name;
            if (type_name == "list") {
                std::string count_name, item_name;
                ls >> count_name >> item_name >> p.name;
                auto ct = parse_type(count_name);
                auto it = parse_type(item_name);
                if (!ct || !it) {
                    malformed(context, "bad list property '" + *line + "'");
                }
                p.is_list = true;
                p.count_type = *ct;
                p.type = *it;
            } else {
                auto t = parse_type(type_name);
                ls >> p.name;
                if (!t || p.name.empty()) {
                    malformed(context, "bad property '" + *line + "'");
                }
                p.type = *t;
            }
            h.elements.back().properties.push_back(std::move(p));
        } else {
            malformed(context, "unknown header keyword '" + keyword + "'");
        }
    }
    if (!have_format) {
        malformed(context, "missing format line");
    }
    h.body_offset = pos;
    return h;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

} // namespace

Scene import_ply_bytes(std::span<const std::uint8_t> bytes, std::size_t feature_dim, const std::string& context) {
    const Header header = parse_header(bytes, context);

    std::size_t vertex_element = header.elements.size();
    for (std::size_t i = 0; i < header.elements.size(); ++i) {
        if (header.elements[i].name == "vertex") {
            vertex_element = i;
            break;
        }
    }
    if (vertex_element == header.elements.size()) {
        malformed(context, "no vertex element");
    }
    const Element& vertex = header.elements[vertex_element];

    static const char* required[] = {"x",       "y",       "z",       "rot_0",   "rot_1",   "rot_2",  "rot_3",
                                     "scale_0", "scale_1", "scale_2", "opacity", "f_dc_0", "f_dc_1", "f_dc_2"};
    std::map<std::string, std::size_t> column;
    for (std::size_t i = 0; i < vertex.properties.size(); ++i) {
        column.emplace(vertex.properties[i].name, i);
    }
    std::vector<std::size_t> slots;
    for (const char* name : required) {
        auto it = column.find(name);
        if (it == column.end()) {
            throw ValidationError(context + ": missing vertex property '" + std::string(name) + "'");
        }
        if (vertex.properties[it->second].is_list) {
            malformed(context, "vertex property '" + std::string(name) + "' is a list");
        }
        slots.push_back(it->second);
    }

    std::vector<double> values(vertex.properties.size());
    std::size_t pos = header.body_offset;

    // Reads one row of `element` into `values` (only for scalar properties; list
    // payloads are skipped).
    std::istringstream ascii;
    if (!header.binary) {
        ascii.str(std::string(reinterpret_cast<const char*>(bytes.data() + pos), bytes.size() - pos));
    }
    auto read_row = [&](const Element& element, bool keep) {
        for (std::size_t k = 0; k < element.properties.size(); ++k) {
            const Property& p = element.properties[k];
            if (header.binary) {
                if (p.is_list) {
                    const std::size_t cs = type_size(p.count_type);
                    if (bytes.size() - pos < cs) {
                        throw FormatError(FormatError::Kind::Truncated, context + ": body ends inside a list");
                    }
                    const auto n = static_cast<std::size_t>(decode_binary(p.count_type, bytes.data() + pos));
                    pos += cs;
                    const std::size_t payload = n * type_size(p.type);
                    if (bytes.size() - pos < payload) {
                        throw FormatError(FormatError::Kind::Truncated, context + ": body ends inside a list");
                    }
                    pos += payload;
                    continue;
                }
                const std::size_t sz = type_size(p.type);
                if (bytes.size() - pos < sz) {
                    throw FormatError(FormatError::Kind::Truncated,
                                      context + ": body ends inside element '" + element.name + "'");
                }
                if (keep) {
                    values[k] = decode_binary(p.type, bytes.data() + pos);
                }
                pos += sz;
            } else {
                if (p.is_list) {
                    double n = 0;
                    if (!(ascii >> n)) {
                        throw FormatError(FormatError::Kind::Truncated, context + ": body ends inside a list");
                    }
                    for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j) {
                        double skip;
                        if (!(ascii >> skip)) {
                            throw FormatError(FormatError::Kind::Truncated, context + ": body ends inside a list");
                        }
                    }
                    continue;
                }
                double v;
                if (!(ascii >> v)) {
                    if (ascii.eof()) {
                        throw FormatError(FormatError::Kind::Truncated,
                                          context + ": body ends inside element '" + element.name + "'");
                    }
                    malformed(context, "non-numeric value in element '" + element.name + "'");
                }
                if (keep) {
                    values[k] = v;
                }
            }
        }
    };

    // Skip elements stored ahead of the vertices.
    for (std::size_t e = 0; e < vertex_element; ++e) {
        for (std::size_t row = 0; row < header.elements[e].count; ++row) {
            read_row(header.elements[e], false);
        }
    }

    Scene scene;
    scene.feature_dim = feature_dim;
    scene.gaussians.reserve(vertex.count);
    constexpr double kShC0 = 0.28209479177387814;
    for (std::size_t row = 0; row < vertex.count; ++row) {
        read_row(vertex, true);
        auto v = [&](std::size_t slot) { return values[slots[slot]]; };

        Gaussian g;
        g.centroid = {static_cast<float>(v(0)), static_cast<float>(v(1)), static_cast<float>(v(2))};

        double q[4] = {v(3), v(4), v(5), v(6)};
        double qn = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        if (!(qn > 0.0) || !std::isfinite(qn)) {
            q[0] = 1.0;
            q[1] = q[2] = q[3] = 0.0;
            qn = 1.0;
        }
        for (std::size_t k = 0; k < 4; ++k) {
            g.rotation[k] = static_cast<float>(q[k] / qn);
        }

        for (std::size_t k = 0; k < 3; ++k) {
            double s = std::exp(v(7 + k));
            // Keep the result a positive finite f32 whatever the stored log-scale was.
            s = std::clamp(s, double{std::numeric_limits<float>::min()}, double{std::numeric_limits<float>::max()});
            if (!std::isfinite(s)) {
                s = 1.0;
            }
            g.scale[k] = static_cast<float>(s);
        }

        const double logit = v(10);
        g.opacity = std::isnan(logit) ? 0.5f : clamp01(sigmoid(logit));
        for (std::size_t k = 0; k < 3; ++k) {
            const double dc = v(11 + k);
            g.rgb[k] = std::isnan(dc) ? 0.5f : clamp01(0.5 + kShC0 * dc);
        }
        if (!std::isfinite(g.centroid[0]) || !std::isfinite(g.centroid[1]) || !std::isfinite(g.centroid[2])) {
            throw ValidationError(context + ": vertex " + std::to_string(row) + " has a non-finite position");
        }
        g.feature.assign(feature_dim, 0.f);
        scene.gaussians.push_back(std::move(g));
    }
    scene.validate();
    return scene;
}

Scene import_ply(const std::filesystem::path& path, std::size_t feature_dim) {
    const auto bytes = read_file_bytes(path);
    return import_ply_bytes(bytes, feature_dim, path.string());
}

} // namespace goi
