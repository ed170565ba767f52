#include "defuse/fusion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

namespace defuse {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Pose field_pose(const WarpField& field) { return {field.rotation, field.translation}; }

}  // namespace

void FusionParams::validate() const {
    if (!(node_grid > 0.0 && depth_gate > 0.0 && angle_gate > 0.0 && truncation > 0.0 && point_grid > 0.0)) {
        throw std::invalid_argument("fusion gates and grid sizes must be positive");
    }
    if (!(max_weight >= 1.0)) {
        throw std::invalid_argument("max_weight must be >= 1");
    }
    if (time_threshold <= 0 || !(weight_threshold > 0.0)) {
        throw std::invalid_argument("time and weight thresholds must be positive");
    }
    if (k < 1 || graph_neighbors < 1) {
        throw std::invalid_argument("k and graph_neighbors must be >= 1");
    }
}

std::size_t RegistrationMap::registered_count() const {
    return static_cast<std::size_t>(std::count_if(pixel_point.begin(), pixel_point.end(), [](int p) { return p >= 0; }));
}

RegistrationMap register_model(std::span<const ModelPoint> model, std::span<const Skinning> skins,
                               const WarpField& field, const DepthScan& scan, const FusionParams& params) {
    RegistrationMap reg;
    reg.width = scan.depth.width();
    reg.height = scan.depth.height();
    reg.point_pixel.assign(model.size(), -1);
    reg.pixel_point.assign(scan.depth.size(), -1);
    std::vector<double> best(scan.depth.size(), 0.0);
    const double cos_gate = std::cos(params.angle_gate * kDeg);

    for (int i = 0; i < static_cast<int>(model.size()); ++i) {
        const Vec3 warped = warp_point(model[i].position, skins[i], field);
        const auto px = project_to_pixel(warped, scan.intrinsics);
        if (!px || !scan.valid_pixel(px->u, px->v)) {
            continue;
        }
        const double dz = std::abs(warped.z() - scan.depth(px->u, px->v));
        if (!(dz < params.depth_gate)) {
            continue;
        }
        Vec3 n;
        try {
            n = warp_normal(model[i].normal, skins[i], field);
        } catch (const GeometryError&) {
            continue;
        }
        if (!(n.dot(scan.normals(px->u, px->v)) > cos_gate)) {
            continue;
        }
        const auto pix = scan.depth.index(px->u, px->v);
        const int owner = reg.pixel_point[pix];
        // Points are visited in index order, so a tie keeps the earlier owner.
        if (owner >= 0 && !(dz < best[pix])) {
            continue;
        }
        if (owner >= 0) {
            reg.point_pixel[owner] = -1;
        }
        reg.pixel_point[pix] = i;
        reg.point_pixel[i] = static_cast<int>(pix);
        best[pix] = dz;
    }
    return reg;
}

double tsdw(const ModelPoint& point, const Skinning& skin, const WarpField& field, const DepthScan& scan,
            const FusionParams& params) {
    const Vec3 warped = warp_point(point.position, skin, field);
    const auto px = project_to_pixel(warped, scan.intrinsics);
    if (!px || !valid_depth(scan.depth(px->u, px->v))) {
        return 0.0;
    }
    if (!(std::abs(warped.z() - scan.depth(px->u, px->v)) < params.truncation)) {
        return 0.0;
    }
    return nearest_node_distance(point.position, field) / (0.5 * params.node_grid);
}

PointModel fuse_registered(std::span<const ModelPoint> model, std::span<const Skinning> skins,
                           const WarpField& field, const DepthScan& scan, const RegistrationMap& reg,
                           const FusionParams& params, int frame, FuseStats* stats) {
    const Pose pose = field_pose(field);
    PointModel out;
    out.reserve(model.size());
    FuseStats local;
    for (std::size_t i = 0; i < model.size(); ++i) {
        ModelPoint p = model[i];
        p.position = deform_point(model[i].position, skins[i], field);
        try {
            p.normal = deform_normal(model[i].normal, skins[i], field);
        } catch (const GeometryError&) {
            // keep the previous normal
        }
        const int pix = reg.point_pixel[i];
        if (pix >= 0) {
            ++local.registered;
            const int u = pix % reg.width;
            const int v = pix / reg.width;
            if (tsdw(model[i], skins[i], field, scan, params) > 0.0) {
                const double w = p.weight;
                const Vec3 cam = pose.apply(p.position);
                const double depth = (cam.z() * w + scan.depth(u, v)) / (w + 1.0);
                const Vec3 fused = back_project(Pixel{u, v}, depth, scan.intrinsics);
                p.position = pose.apply_inverse(fused);
                if (!scan.color.empty()) {
                    p.color = (p.color * w + scan.color(u, v)) / (w + 1.0);
                }
                const Vec3 cam_normal = pose.rotation * p.normal;
                Vec3 n = (cam_normal * w + scan.normals(u, v)) / (w + 1.0);
                if (n.norm() > 1e-12) {
                    p.normal = pose.rotation.transpose() * n.normalized();
                }
                p.weight = std::min(w + 1.0, params.max_weight);
                ++local.fused;
            }
            // Observed this frame even when the zero weight blocked the blend.
            p.timestamp = frame;
        }
        out.push_back(p);
    }
    if (stats) {
        stats->registered += local.registered;
        stats->fused += local.fused;
    }
    return out;
}

PointModel lift_unregistered(const WarpField& field, const DepthScan& scan, const RegistrationMap& reg, int frame) {
    const Pose pose = field_pose(field);
    PointModel out;
    for (int v = 0; v < scan.depth.height(); ++v) {
        for (int u = 0; u < scan.depth.width(); ++u) {
            if (!scan.valid_pixel(u, v) || reg.pixel_point[scan.depth.index(u, v)] >= 0) {
                continue;
            }
            ModelPoint p;
            p.position = pose.apply_inverse(back_project(Pixel{u, v}, scan.depth(u, v), scan.intrinsics));
            p.normal = pose.rotation.transpose() * scan.normals(u, v);
            p.color = scan.color.empty() ? Color::Zero() : scan.color(u, v);
            p.weight = 1.0;
            p.timestamp = frame;
            p.stable = false;
            out.push_back(p);
        }
    }
    return out;
}

PointModel lift_scan(const DepthScan& scan, const Pose& pose, int frame) {
    WarpField rigid;
    rigid.rotation = pose.rotation;
    rigid.translation = pose.translation;
    RegistrationMap none;
    none.width = scan.depth.width();
    none.height = scan.depth.height();
    none.pixel_point.assign(scan.depth.size(), -1);
    return lift_unregistered(rigid, scan, none, frame);
}

PointModel filter_points(std::span<const ModelPoint> model, int frame, const FusionParams& params, FuseStats* stats) {
    struct Cell {
        Vec3 position = Vec3::Zero();
        Vec3 normal = Vec3::Zero();
        Color color = Color::Zero();
        double weight = 0.0;
        int timestamp = 0;
        int count = 0;
        int first = 0;
    };
    std::map<std::array<long long, 3>, Cell> cells;
    for (int i = 0; i < static_cast<int>(model.size()); ++i) {
        const auto& p = model[i];
        const std::array<long long, 3> key{static_cast<long long>(std::floor(p.position.x() / params.point_grid)),
                                           static_cast<long long>(std::floor(p.position.y() / params.point_grid)),
                                           static_cast<long long>(std::floor(p.position.z() / params.point_grid))};
        auto [it, inserted] = cells.try_emplace(key);
        auto& cell = it->second;
        if (inserted) {
            cell.first = i;
            cell.timestamp = p.timestamp;
        }
        const double w = std::max(p.weight, 0.0);
        cell.position += w * p.position;
        cell.normal += w * p.normal;
        cell.color += w * p.color;
        cell.weight += w;
        cell.timestamp = std::max(cell.timestamp, p.timestamp);
        ++cell.count;
    }

    PointModel out;
    out.reserve(cells.size());
    std::size_t merged = 0;
    std::size_t deleted = 0;
    for (const auto& [key, cell] : cells) {
        const ModelPoint& first = model[cell.first];
        ModelPoint p;
        if (cell.count == 1) {
            p = first;
        } else if (cell.weight > 0.0) {
            p.position = cell.position / cell.weight;
            p.color = cell.color / cell.weight;
            p.normal = cell.normal.norm() > 1e-12 ? Vec3(cell.normal.normalized()) : first.normal;
        } else {
            p = first;
        }
        p.weight = std::min(cell.weight, params.max_weight);
        p.timestamp = cell.timestamp;
        merged += static_cast<std::size_t>(cell.count - 1);
        if (p.timestamp < frame - params.time_threshold && p.weight < params.weight_threshold) {
            ++deleted;
            continue;
        }
        p.stable = p.weight >= params.weight_threshold;
        out.push_back(p);
    }
    if (stats) {
        stats->merged += merged;
        stats->deleted += deleted;
    }
    return out;
}

FuseResult fuse_frame(std::span<const ModelPoint> model, std::span<const Skinning> skins, const WarpField& field,
                      const DepthScan& scan, const RegistrationMap& reg, const FusionParams& params, int frame) {
    FuseResult result;
    for (int v = 0; v < scan.depth.height(); ++v) {
        for (int u = 0; u < scan.depth.width(); ++u) {
            result.stats.valid_pixels += scan.valid_pixel(u, v) ? 1 : 0;
        }
    }
    PointModel merged = fuse_registered(model, skins, field, scan, reg, params, frame, &result.stats);
    PointModel fresh = lift_unregistered(field, scan, reg, frame);
    result.stats.spawned = fresh.size();
    merged.insert(merged.end(), fresh.begin(), fresh.end());
    result.model = filter_points(merged, frame, params, &result.stats);

    result.field.rotation = field.rotation;
    result.field.translation = field.translation;
    result.field.k = params.k;
    result.field.grid = params.node_grid;
    if (!result.model.empty()) {
        std::vector<Vec3> positions;
        positions.reserve(result.model.size());
        for (const auto& p : result.model) {
            positions.push_back(p.position);
        }
        result.field.nodes = build_node_graph(positions, params.node_grid, params.graph_neighbors);
    }
    return result;
}

}  // namespace defuse
