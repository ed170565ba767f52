#pragma once

#include "defuse/geometry.hpp"
#include "defuse/model.hpp"
#include "defuse/warpfield.hpp"

#include <span>
#include <vector>

namespace defuse {

struct FusionParams {
    double node_grid = 4.0;        // node spacing; also the distance scale of the fusion weight
    double depth_gate = 10.0;      // registration |z - D| gate, mm
    double angle_gate = 10.0;      // registration normal gate, degrees
    double truncation = 40.0;      // fusion-weight depth truncation, mm
    double max_weight = 10.0;
    int time_threshold = 10;       // frames
    double weight_threshold = 3.0; // stability weight
    double point_grid = 1.0;       // downsampling cell, mm
    int k = 4;                     // nodes per point
    int graph_neighbors = 4;       // regularisation edges per node

    void validate() const;
};

/// Point <-> pixel association for one frame; -1 means unregistered.
struct RegistrationMap {
    int width = 0;
    int height = 0;
    std::vector<int> point_pixel;  // per model point: linear pixel index
    std::vector<int> pixel_point;  // per pixel: model point index

    std::size_t registered_count() const;
    friend bool operator==(const RegistrationMap&, const RegistrationMap&) = default;
};

/// Projective point-to-depth registration. A point claims the pixel it projects onto when the
/// pixel is valid, the depth difference is below depth_gate and the warped normal is within
/// angle_gate of the scan normal. On collisions the smaller depth difference wins, then the
/// lower point index.
RegistrationMap register_model(std::span<const ModelPoint> model, std::span<const Skinning> skins,
                               const WarpField& field, const DepthScan& scan, const FusionParams& params);

/// Truncated fusion weight: nearest-node distance / (0.5 * node_grid) when the warped point's
/// depth is within `truncation` of the scan depth at its pixel, else 0.
double tsdw(const ModelPoint& point, const Skinning& skin, const WarpField& field, const DepthScan& scan,
            const FusionParams& params);

struct FuseStats {
    std::size_t registered = 0;  // pixels owned by an existing point
    std::size_t fused = 0;       // registered points whose observation was blended in
    std::size_t spawned = 0;     // new points lifted from unregistered pixels
    std::size_t valid_pixels = 0;
    std::size_t merged = 0;      // points removed by grid averaging
    std::size_t deleted = 0;     // stale, light points dropped
};

/// Blends registered observations with a positive TSDW into their points (running weighted
/// averages, weight + 1 capped at max_weight) and applies the non-rigid deformation to the rest.
/// Every registered point gets timestamp = frame.
/// Output is in world coordinates and keeps the input order.
PointModel fuse_registered(std::span<const ModelPoint> model, std::span<const Skinning> skins,
                           const WarpField& field, const DepthScan& scan, const RegistrationMap& reg,
                           const FusionParams& params, int frame, FuseStats* stats = nullptr);

/// New unstable points for every valid pixel that no model point registered to.
PointModel lift_unregistered(const WarpField& field, const DepthScan& scan, const RegistrationMap& reg, int frame);

/// Grid-average downsampling followed by removal of points that are both stale
/// (timestamp < frame - time_threshold) and light (weight < weight_threshold).
PointModel filter_points(std::span<const ModelPoint> model, int frame, const FusionParams& params,
                         FuseStats* stats = nullptr);

struct FuseResult {
    PointModel model;
    WarpField field;  // regenerated node graph, global pose carried over
    FuseStats stats;
};

/// fuse_registered + lift_unregistered + filter_points + node regeneration.
FuseResult fuse_frame(std::span<const ModelPoint> model, std::span<const Skinning> skins, const WarpField& field,
                      const DepthScan& scan, const RegistrationMap& reg, const FusionParams& params, int frame);

/// Lifts every valid pixel of the scan into world coordinates through `pose`.
PointModel lift_scan(const DepthScan& scan, const Pose& pose, int frame);

}  // namespace defuse
