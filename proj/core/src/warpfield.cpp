#include "defuse/warpfield.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace defuse {
namespace {

struct Candidate {
    double dist2;
    int index;
    bool operator<(const Candidate& o) const {
        return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
    }
};

// The `count` nearest nodes to v in ascending (distance, index) order, skipping `exclude`.
std::vector<Candidate> nearest_nodes(const Vec3& v, const std::vector<EDNode>& nodes, std::size_t count,
                                     int exclude = -1) {
    std::vector<Candidate> best;
    best.reserve(count + 1);
    for (int j = 0; j < static_cast<int>(nodes.size()); ++j) {
        if (j == exclude) {
            continue;
        }
        const Candidate c{(nodes[j].position - v).squaredNorm(), j};
        if (best.size() == count && !(c < best.back())) {
            continue;
        }
        best.insert(std::upper_bound(best.begin(), best.end(), c), c);
        if (best.size() > count) {
            best.pop_back();
        }
    }
    return best;
}

}  // namespace

void WarpField::reset_nodes() {
    for (auto& node : nodes) {
        node.affine.setIdentity();
        node.translation.setZero();
    }
}

std::vector<EDNode> build_node_graph(std::span<const Vec3> points, double grid, int neighbor_count) {
    if (points.empty()) {
        throw std::invalid_argument("build_node_graph: no points");
    }
    if (!(grid > 0.0)) {
        throw std::invalid_argument("build_node_graph: grid must be positive");
    }
    struct Cell {
        Vec3 sum = Vec3::Zero();
        int count = 0;
    };
    std::map<std::array<long long, 3>, Cell> cells;
    for (const auto& p : points) {
        const std::array<long long, 3> key{static_cast<long long>(std::floor(p.x() / grid)),
                                           static_cast<long long>(std::floor(p.y() / grid)),
                                           static_cast<long long>(std::floor(p.z() / grid))};
        auto& cell = cells[key];
        cell.sum += p;
        ++cell.count;
    }
    std::vector<EDNode> nodes;
    nodes.reserve(cells.size());
    for (const auto& [key, cell] : cells) {
        EDNode node;
        node.position = cell.sum / cell.count;
        nodes.push_back(std::move(node));
    }
    const auto wanted = static_cast<std::size_t>(std::max(0, neighbor_count));
    const std::size_t count = std::min(wanted, nodes.size() - 1);
    for (int j = 0; j < static_cast<int>(nodes.size()); ++j) {
        for (const auto& c : nearest_nodes(nodes[j].position, nodes, count, j)) {
            nodes[j].neighbors.push_back(c.index);
        }
    }
    return nodes;
}

WarpField make_warp_field(std::span<const Vec3> points, double grid, int k, int neighbor_count) {
    WarpField field;
    field.nodes = build_node_graph(points, grid, neighbor_count);
    field.k = k;
    field.grid = grid;
    return field;
}

Skinning compute_skinning(const Vec3& v, const WarpField& field) {
    if (field.nodes.empty()) {
        throw std::invalid_argument("compute_skinning: empty warp field");
    }
    const auto k = static_cast<std::size_t>(std::max(1, field.k));
    Skinning skin;
    std::vector<Candidate> near;
    double d_max = 0.0;
    if (field.nodes.size() >= k + 1) {
        near = nearest_nodes(v, field.nodes, k + 1);
        d_max = std::sqrt(near.back().dist2);
        near.pop_back();
    } else {
        near = nearest_nodes(v, field.nodes, field.nodes.size());
        d_max = 1.05 * std::sqrt(near.back().dist2);
    }
    skin.node_ids.reserve(near.size());
    skin.weights.reserve(near.size());
    double sum = 0.0;
    for (const auto& c : near) {
        const double w = d_max > 0.0 ? std::max(0.0, 1.0 - std::sqrt(c.dist2) / d_max) : 0.0;
        skin.node_ids.push_back(c.index);
        skin.weights.push_back(w);
        sum += w;
    }
    if (sum > 0.0) {
        for (auto& w : skin.weights) {
            w /= sum;
        }
    } else {
        // d_max == 0 or every kept node sits at the truncation distance.
        std::fill(skin.weights.begin(), skin.weights.end(), 1.0 / static_cast<double>(near.size()));
    }
    return skin;
}

std::vector<Skinning> compute_skinning(std::span<const Vec3> points, const WarpField& field) {
    std::vector<Skinning> out;
    out.reserve(points.size());
    for (const auto& p : points) {
        out.push_back(compute_skinning(p, field));
    }
    return out;
}

Vec3 deform_point(const Vec3& v, const Skinning& skin, const WarpField& field) {
    Vec3 s = Vec3::Zero();
    for (std::size_t i = 0; i < skin.node_ids.size(); ++i) {
        const auto& node = field.nodes[skin.node_ids[i]];
        s += skin.weights[i] * (node.affine * (v - node.position) + node.position + node.translation);
    }
    return s;
}

Vec3 warp_point(const Vec3& v, const Skinning& skin, const WarpField& field) {
    return field.rotation * deform_point(v, skin, field) + field.translation;
}

Vec3 deform_normal(const Vec3& n, const Skinning& skin, const WarpField& field) {
    Vec3 s = Vec3::Zero();
    for (std::size_t i = 0; i < skin.node_ids.size(); ++i) {
        const Mat3& a = field.nodes[skin.node_ids[i]].affine;
        if (std::abs(a.determinant()) < 1e-9) {
            s += skin.weights[i] * (a * n);
        } else {
            s += skin.weights[i] * (a.inverse().transpose() * n);
        }
    }
    const double len = s.norm();
    if (!(len > 1e-12)) {
        throw GeometryError("degenerate normal warp");
    }
    return s / len;
}

Vec3 warp_normal(const Vec3& n, const Skinning& skin, const WarpField& field) {
    return (field.rotation * deform_normal(n, skin, field)).normalized();
}

double nearest_node_distance(const Vec3& v, const WarpField& field) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& node : field.nodes) {
        best = std::min(best, (node.position - v).squaredNorm());
    }
    return std::sqrt(best);
}

std::string dump_warp_field(const WarpField& field) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "warpfield 1\n";
    out << "k " << field.k << "\ngrid " << field.grid << "\nrotation";
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            out << ' ' << field.rotation(r, c);
        }
    }
    out << "\ntranslation " << field.translation.x() << ' ' << field.translation.y() << ' '
        << field.translation.z() << "\nnodes " << field.nodes.size() << '\n';
    for (const auto& node : field.nodes) {
        out << node.position.x() << ' ' << node.position.y() << ' ' << node.position.z();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                out << ' ' << node.affine(r, c);
            }
        }
        out << ' ' << node.translation.x() << ' ' << node.translation.y() << ' ' << node.translation.z();
        out << ' ' << node.neighbors.size();
        for (int n : node.neighbors) {
            out << ' ' << n;
        }
        out << '\n';
    }
    return out.str();
}

WarpField parse_warp_field_dump(const std::string& text) {
    std::istringstream in(text);
    auto expect = [&in](const char* word) {
        std::string token;
        if (!(in >> token) || token != word) {
            throw std::runtime_error(std::string("warp field dump: expected '") + word + "'");
        }
    };
    WarpField field;
    int version = 0;
    expect("warpfield");
    in >> version;
    expect("k");
    in >> field.k;
    expect("grid");
    in >> field.grid;
    expect("rotation");
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            in >> field.rotation(r, c);
        }
    }
    expect("translation");
    in >> field.translation.x() >> field.translation.y() >> field.translation.z();
    expect("nodes");
    std::size_t count = 0;
    in >> count;
    field.nodes.resize(count);
    for (auto& node : field.nodes) {
        in >> node.position.x() >> node.position.y() >> node.position.z();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                in >> node.affine(r, c);
            }
        }
        in >> node.translation.x() >> node.translation.y() >> node.translation.z();
        std::size_t nbrs = 0;
        in >> nbrs;
        node.neighbors.resize(nbrs);
        for (auto& n : node.neighbors) {
            in >> n;
        }
    }
    if (!in) {
        throw std::runtime_error("warp field dump: truncated");
    }
    return field;
}

}  // namespace defuse
