#pragma once

#include "defuse/geometry.hpp"

#include <vector>

namespace defuse {

/// One surface element of the fused model, stored in world coordinates.
struct ModelPoint {
    Vec3 position = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
    Color color = Color::Zero();
    double weight = 1.0;
    int timestamp = 0;  // frame index of the last fusion
    bool stable = false;

    friend bool operator==(const ModelPoint&, const ModelPoint&) = default;
};

using PointModel = std::vector<ModelPoint>;

/// Rigid pose mapping world coordinates into the camera frame: x_cam = rotation * x + translation.
struct Pose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
    Vec3 apply_inverse(const Vec3& x) const { return rotation.transpose() * (x - translation); }
};

/// Externally supplied global pose estimate for one frame (world -> camera).
struct PosePrior {
    Pose pose;
    int frame_index = 0;
};

/// Sparse feature track: the model-side point from the previous frame (world coordinates) and
/// its current observation (camera coordinates).
struct FeatureCorrespondence {
    Vec3 model_point = Vec3::Zero();
    Vec3 target = Vec3::Zero();
    int id = 0;
};

}  // namespace defuse
