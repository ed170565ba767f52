#include "defuse/ply.hpp"

#include "defuse/raster_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace defuse {
namespace {

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> properties;
    bool has_list = false;
};

struct PlyHeader {
    std::vector<PlyElement> elements;
};

PlyHeader parse_header(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
        throw IoError("PLY: missing magic");
    }
    PlyHeader header;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string format;
            ls >> format;
            if (format != "ascii") {
                throw IoError("PLY: only ascii format is supported");
            }
        } else if (word == "element") {
            PlyElement e;
            ls >> e.name >> e.count;
            header.elements.push_back(e);
        } else if (word == "property") {
            if (header.elements.empty()) {
                throw IoError("PLY: property before element");
            }
            std::string type;
            ls >> type;
            std::string name;
            if (type == "list") {
                std::string count_type;
                std::string item_type;
                ls >> count_type >> item_type >> name;
                header.elements.back().has_list = true;
            } else {
                ls >> name;
            }
            header.elements.back().properties.push_back(name);
        } else if (word == "end_header") {
            return header;
        }
    }
    throw IoError("PLY: missing end_header");
}

int property_index(const PlyElement& e, const std::string& name) {
    for (std::size_t i = 0; i < e.properties.size(); ++i) {
        if (e.properties[i] == name) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

std::string read_all(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

}  // namespace

std::string model_to_ply(const PointModel& model) {
    std::string out;
    out.reserve(model.size() * 110 + 400);
    out += "ply\nformat ascii 1.0\n";
    out += "element vertex " + std::to_string(model.size()) + "\n";
    out += "property float x\nproperty float y\nproperty float z\n";
    out += "property float nx\nproperty float ny\nproperty float nz\n";
    out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out += "property float weight\nproperty int timestamp\nproperty uchar stable\n";
    out += "end_header\n";
    char buf[256];
    for (const auto& p : model) {
        auto channel = [](double c) { return static_cast<int>(std::lround(std::clamp(c, 0.0, 255.0))); };
        std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %.6f %.6f %.6f %d %d %d %.6f %d %d\n", p.position.x(),
                      p.position.y(), p.position.z(), p.normal.x(), p.normal.y(), p.normal.z(), channel(p.color.x()),
                      channel(p.color.y()), channel(p.color.z()), p.weight, p.timestamp, p.stable ? 1 : 0);
        out += buf;
    }
    return out;
}

PointModel model_from_ply(const std::string& text) {
    std::istringstream in(text);
    const PlyHeader header = parse_header(in);
    PointModel model;
    for (const auto& e : header.elements) {
        std::vector<double> values(e.properties.size());
        if (e.name != "vertex") {
            std::string skip;
            for (std::size_t i = 0; i < e.count; ++i) {
                std::getline(in >> std::ws, skip);
            }
            continue;
        }
        const int ix = property_index(e, "x");
        const int iy = property_index(e, "y");
        const int iz = property_index(e, "z");
        if (ix < 0 || iy < 0 || iz < 0) {
            throw IoError("PLY: vertex element lacks x/y/z");
        }
        const int inx = property_index(e, "nx");
        const int ir = property_index(e, "red");
        const int iw = property_index(e, "weight");
        const int it = property_index(e, "timestamp");
        const int is = property_index(e, "stable");
        model.reserve(e.count);
        for (std::size_t i = 0; i < e.count; ++i) {
            for (auto& v : values) {
                if (!(in >> v)) {
                    throw IoError("PLY: truncated vertex data");
                }
            }
            ModelPoint p;
            p.position = Vec3(values[ix], values[iy], values[iz]);
            if (inx >= 0) {
                p.normal = Vec3(values[inx], values[inx + 1], values[inx + 2]);
            }
            if (ir >= 0) {
                p.color = Color(values[ir], values[ir + 1], values[ir + 2]);
            }
            if (iw >= 0) {
                p.weight = values[iw];
            }
            if (it >= 0) {
                p.timestamp = static_cast<int>(values[it]);
            }
            if (is >= 0) {
                p.stable = values[is] != 0.0;
            }
            model.push_back(p);
        }
    }
    return model;
}

void write_model_ply(const std::filesystem::path& path, const PointModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << model_to_ply(model);
}

PointModel read_model_ply(const std::filesystem::path& path) { return model_from_ply(read_all(path)); }

TriangleMesh mesh_from_ply(const std::string& text) {
    std::istringstream in(text);
    const PlyHeader header = parse_header(in);
    TriangleMesh mesh;
    for (const auto& e : header.elements) {
        if (e.name == "vertex") {
            const int ix = property_index(e, "x");
            const int iy = property_index(e, "y");
            const int iz = property_index(e, "z");
            if (ix < 0 || iy < 0 || iz < 0) {
                throw IoError("PLY: vertex element lacks x/y/z");
            }
            std::vector<double> values(e.properties.size());
            for (std::size_t i = 0; i < e.count; ++i) {
                for (auto& v : values) {
                    if (!(in >> v)) {
                        throw IoError("PLY: truncated vertex data");
                    }
                }
                mesh.vertices.emplace_back(values[ix], values[iy], values[iz]);
            }
        } else if (e.name == "face") {
            for (std::size_t i = 0; i < e.count; ++i) {
                std::size_t n = 0;
                if (!(in >> n) || n < 3) {
                    throw IoError("PLY: bad face");
                }
                std::vector<int> idx(n);
                for (auto& v : idx) {
                    in >> v;
                }
                for (std::size_t t = 1; t + 1 < n; ++t) {
                    mesh.faces.push_back({idx[0], idx[t], idx[t + 1]});
                }
            }
        } else {
            std::string skip;
            for (std::size_t i = 0; i < e.count; ++i) {
                std::getline(in >> std::ws, skip);
            }
        }
    }
    if (!in && !in.eof()) {
        throw IoError("PLY: malformed body");
    }
    for (const auto& f : mesh.faces) {
        for (int v : f) {
            if (v < 0 || v >= static_cast<int>(mesh.vertices.size())) {
                throw IoError("PLY: face index out of range");
            }
        }
    }
    return mesh;
}

TriangleMesh read_mesh_ply(const std::filesystem::path& path) { return mesh_from_ply(read_all(path)); }

}  // namespace defuse
