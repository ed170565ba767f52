#pragma once

#include "defuse/config.hpp"
#include "defuse/geometry.hpp"
#include "defuse/model.hpp"
#include "defuse/ply.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace defuse {

class SceneError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class SurfaceKind { plane, sinusoid, hemisphere, mesh };

/// Synthetic deforming scene seen by a moving pinhole camera. The surface is a height field
/// z = h(x, y, frame) in world coordinates (material points move along z only); the camera
/// starts at the world origin looking down +z.
struct SceneSpec {
    SurfaceKind surface = SurfaceKind::sinusoid;
    double extent = 80.0;         // side of the square surface patch, mm
    double distance = 50.0;       // base height of the surface, mm
    double amplitude = 0.0;       // deformation amplitude, mm
    double wavelength = 40.0;     // sinusoid spatial wavelength, mm
    double frequency = 0.0;       // deformation temporal frequency, cycles per frame
    double radius = 30.0;         // hemisphere radius, mm
    double perturbation = 0.0;    // per-frame random push magnitude (drawn from [p, 1.5p]), mm
    double perturbation_radius = 6.0;

    Vec3 trajectory_translation = Vec3::Zero();  // camera-centre oscillation amplitude, mm
    Vec3 trajectory_rotation = Vec3::Zero();     // camera orientation oscillation amplitude, degrees
    double trajectory_period = 40.0;             // frames
    double jump = 0.0;                           // lateral x jump on odd frames, mm

    double noise_sigma = 0.0;          // depth noise, mm
    double prior_rotation_noise = 0.0; // degrees
    double prior_translation_noise = 0.0;  // mm
    int correspondences = 20;
    int frames = 30;
    std::uint64_t seed = 1;
    CameraIntrinsics intrinsics{300.0, 300.0, 159.5, 119.5, 320, 240};
    std::string mesh_path;  // ASCII PLY, used when surface == mesh

    void validate() const;
};

SceneSpec scene_from_config(const KeyValueConfig& cfg);
KeyValueConfig scene_to_config(const SceneSpec& spec);
std::string surface_name(SurfaceKind kind);

struct GroundTruthFrame {
    int frame = 0;
    Pose pose;                    // true world -> camera pose
    std::vector<Vec3> surface;    // dense true surface samples, world coordinates
    std::vector<FeatureCorrespondence> correspondences;  // exact tracks (before any noise)
};

struct RenderedFrame {
    DepthScan scan;
    PosePrior prior;
    std::vector<FeatureCorrespondence> correspondences;
    GroundTruthFrame truth;
};

/// Deterministic scene generator. Construction precomputes the random perturbation history and
/// loads the mesh, if any.
class SceneGenerator {
public:
    explicit SceneGenerator(SceneSpec spec);

    const SceneSpec& spec() const { return spec_; }

    /// Renders frame `frame`; `truth_spacing` > 0 also samples the true surface at that spacing.
    /// Throws SceneError when the frame is out of range or no pixel sees the surface.
    RenderedFrame render_frame(int frame, double truth_spacing = 0.0) const;

    Pose camera_pose(int frame) const;
    /// Surface height at material coordinates (x, y); nullopt outside the patch.
    std::optional<double> height(double x, double y, int frame) const;
    std::vector<Vec3> surface_samples(int frame, double spacing) const;

private:
    struct Bump {
        double x, y, magnitude;
    };

    double bump_height(double x, double y, int frame) const;
    double lipschitz_bound(int frame) const;
    std::optional<double> cast_ray(const Vec3& origin, const Vec3& dir, int frame, double lipschitz) const;
    void render_mesh(int frame, const Pose& pose, DepthMap& depth, ColorMap& color) const;
    std::vector<Vec3> mesh_vertices(int frame) const;

    SceneSpec spec_;
    std::vector<Bump> bumps_;            // bumps_[f - 1] is applied from frame f onwards
    TriangleMesh mesh_;
    std::vector<std::vector<int>> mesh_neighbors_;
};

/// Material colour at world (x, y).
Color surface_color(double x, double y);

struct ErrorReport {
    double mean_truth_distance = 0.0;  // model point to nearest true surface sample, mm
    double mean_point_to_plane = 0.0;  // back-projection residual against the scan, mm
    std::size_t residual_points = 0;
    double rotation_error_deg = 0.0;
    double translation_error_mm = 0.0;
};

struct EvaluateOptions {
    std::optional<Pose> estimated_pose;  // enables pose error and residual terms
    const DepthScan* scan = nullptr;     // enables the point-to-plane residual
    double residual_gate = 15.0;         // mm, points farther from their pixel are ignored
};

/// Throws SceneError on an empty model.
ErrorReport evaluate(std::span<const ModelPoint> model, const GroundTruthFrame& truth,
                     const EvaluateOptions& options = {});

/// Mean |n . (p - lift(P(p)))| of model points projected through `pose` onto `scan`.
double mean_back_projection_residual(std::span<const ModelPoint> model, const Pose& pose, const DepthScan& scan,
                                     double gate, std::size_t* count = nullptr);

}  // namespace defuse
