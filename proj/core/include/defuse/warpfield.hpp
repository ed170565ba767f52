#pragma once

#include "defuse/geometry.hpp"

#include <span>
#include <string>
#include <vector>

namespace defuse {

/// Embedded-deformation node: position g, affine A and translation t, plus its graph neighbours.
struct EDNode {
    Vec3 position = Vec3::Zero();
    Mat3 affine = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    std::vector<int> neighbors;
};

/// Global rigid pose (world -> camera) plus the node set. This is the full optimisation state.
struct WarpField {
    std::vector<EDNode> nodes;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    int k = 4;           // nodes blended per point
    double grid = 4.0;   // node grid size in mm

    std::size_t node_count() const { return nodes.size(); }
    /// Number of optimisation variables: 12 per node + 6 global.
    std::size_t variable_count() const { return 12 * nodes.size() + 6; }

    /// Resets every node to the identity transform, keeping the global pose.
    void reset_nodes();
};

struct Skinning {
    std::vector<int> node_ids;
    std::vector<double> weights;
};

/// Nodes at the centroids of occupied `grid`-sized cells, ordered by cell index, each linked to
/// its `neighbor_count` nearest other nodes (ties broken by lower index). Throws on empty input.
std::vector<EDNode> build_node_graph(std::span<const Vec3> points, double grid, int neighbor_count);

WarpField make_warp_field(std::span<const Vec3> points, double grid, int k, int neighbor_count);

/// Normalised skinning weights over the k nearest nodes, truncated by the distance to the
/// (k+1)-th nearest node. With fewer than k+1 nodes all nodes are used and the truncation
/// distance is 1.05x the farthest one.
Skinning compute_skinning(const Vec3& v, const WarpField& field);
std::vector<Skinning> compute_skinning(std::span<const Vec3> points, const WarpField& field);

/// Non-rigid part only: sum_j w_j [A_j (v - g_j) + g_j + t_j].
Vec3 deform_point(const Vec3& v, const Skinning& skin, const WarpField& field);

/// Full warp into the camera frame: R * deform_point(v) + T.
Vec3 warp_point(const Vec3& v, const Skinning& skin, const WarpField& field);

/// Non-rigid normal transform: normalize(sum_j w_j A_j^{-T} n). Throws GeometryError if degenerate.
Vec3 deform_normal(const Vec3& n, const Skinning& skin, const WarpField& field);

/// normalize(R * deform_normal(n)).
Vec3 warp_normal(const Vec3& n, const Skinning& skin, const WarpField& field);

/// Euclidean distance from v to the closest node position.
double nearest_node_distance(const Vec3& v, const WarpField& field);

/// Plain-text dump of pose and nodes (full double precision) and its parser.
std::string dump_warp_field(const WarpField& field);
WarpField parse_warp_field_dump(const std::string& text);

}  // namespace defuse
