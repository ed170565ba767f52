#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/LU>

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace defuse {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// RGB triple, channels in [0, 255] stored as doubles so they can be averaged.
using Color = Eigen::Vector3d;

class GeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CameraIntrinsics {
    double fx = 500.0;
    double fy = 500.0;
    double cx = 320.0;
    double cy = 240.0;
    int width = 640;
    int height = 480;

    /// Throws GeometryError when focal lengths or principal point are out of range.
    void validate() const;
};

/// Row-major 2D image of T.
template <typename T>
class Raster {
public:
    Raster() = default;
    Raster(int width, int height, const T& fill = T{})
        : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {}

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int u, int v) { return data_[index(u, v)]; }
    const T& operator()(int u, int v) const { return data_[index(u, v)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width_ + u; }
    bool contains(int u, int v) const { return u >= 0 && v >= 0 && u < width_ && v < height_; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    friend bool operator==(const Raster&, const Raster&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

/// Depth in millimetres; zero (or any non-positive / non-finite value) marks an absent sample.
using DepthMap = Raster<double>;
using ColorMap = Raster<Color>;
/// Zero vector marks an invalid normal.
using NormalMap = Raster<Vec3>;

inline bool valid_depth(double d) { return d > 0.0 && d < 1e30; }
inline bool valid_normal(const Vec3& n) { return n.squaredNorm() > 0.5; }

struct DepthScan {
    DepthMap depth;
    ColorMap color;
    NormalMap normals;
    CameraIntrinsics intrinsics;
    int frame_index = 0;

    /// A pixel takes part in registration and fusion only if both depth and normal are valid.
    bool valid_pixel(int u, int v) const {
        return depth.contains(u, v) && valid_depth(depth(u, v)) && valid_normal(normals(u, v));
    }
};

struct Pixel {
    int u = 0;
    int v = 0;
    friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Continuous pinhole projection; nullopt when the point lands outside the raster.
/// Throws GeometryError for z <= 0.
std::optional<Vec2> project(const Vec3& point, const CameraIntrinsics& intrinsics);

/// Nearest-integer pixel hit by `point`, or nullopt if behind the camera or out of frame.
std::optional<Pixel> project_to_pixel(const Vec3& point, const CameraIntrinsics& intrinsics);

/// Inverse of project for a given depth. Throws GeometryError on invalid depth.
Vec3 back_project(const Vec2& pixel, double depth, const CameraIntrinsics& intrinsics);

inline Vec3 back_project(const Pixel& pixel, double depth, const CameraIntrinsics& intrinsics) {
    return back_project(Vec2(pixel.u, pixel.v), depth, intrinsics);
}

struct NormalOptions {
    int step = 1;                  // central-difference half width in pixels
    double smoothing_sigma = 0.0;  // Gaussian pre-smoothing of depth in pixels, 0 = off
};

/// Depth smoothed by a Gaussian over valid pixels only; invalid pixels stay invalid.
DepthMap smooth_depth(const DepthMap& depth, double sigma);

/// Per-pixel normals from central differences of back-projected neighbours, oriented
/// toward the camera. Pixels whose stencil leaves the raster or touches invalid depth get a
/// zero normal.
NormalMap normals_from_depth(const DepthMap& depth, const CameraIntrinsics& intrinsics,
                             const NormalOptions& options = {});

inline NormalMap normals_from_depth(const DepthScan& scan, const NormalOptions& options = {}) {
    return normals_from_depth(scan.depth, scan.intrinsics, options);
}

/// Angle in degrees between two unit vectors.
double angle_deg(const Vec3& a, const Vec3& b);

}  // namespace defuse
