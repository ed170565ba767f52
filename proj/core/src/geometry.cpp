#include "defuse/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace defuse {

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw GeometryError("focal lengths must be positive");
    }
    if (width <= 0 || height <= 0) {
        throw GeometryError("raster size must be positive");
    }
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
        throw GeometryError("principal point outside the raster");
    }
}

std::optional<Vec2> project(const Vec3& point, const CameraIntrinsics& intrinsics) {
    if (!(point.z() > 0.0)) {
        throw GeometryError("point behind camera");
    }
    const Vec2 uv(intrinsics.fx * point.x() / point.z() + intrinsics.cx,
                  intrinsics.fy * point.y() / point.z() + intrinsics.cy);
    // Half-open pixel footprint so that in-frame agrees with nearest-integer rounding.
    if (uv.x() < -0.5 || uv.y() < -0.5 || uv.x() >= intrinsics.width - 0.5 ||
        uv.y() >= intrinsics.height - 0.5) {
        return std::nullopt;
    }
    return uv;
}

std::optional<Pixel> project_to_pixel(const Vec3& point, const CameraIntrinsics& intrinsics) {
    if (!(point.z() > 0.0)) {
        return std::nullopt;
    }
    const auto uv = project(point, intrinsics);
    if (!uv) {
        return std::nullopt;
    }
    Pixel px{static_cast<int>(std::floor(uv->x() + 0.5)), static_cast<int>(std::floor(uv->y() + 0.5))};
    if (px.u < 0 || px.v < 0 || px.u >= intrinsics.width || px.v >= intrinsics.height) {
        return std::nullopt;
    }
    return px;
}

Vec3 back_project(const Vec2& pixel, double depth, const CameraIntrinsics& intrinsics) {
    if (!valid_depth(depth)) {
        throw GeometryError("invalid depth");
    }
    return {(pixel.x() - intrinsics.cx) * depth / intrinsics.fx,
            (pixel.y() - intrinsics.cy) * depth / intrinsics.fy, depth};
}

DepthMap smooth_depth(const DepthMap& depth, double sigma) {
    if (!(sigma > 0.0)) {
        return depth;
    }
    const int radius = static_cast<int>(std::ceil(2.5 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    }
    const int w = depth.width();
    const int h = depth.height();
    // Normalised convolution: blur depth*mask and mask separately, then divide.
    Raster<double> num(w, h, 0.0);
    Raster<double> den(w, h, 0.0);
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            double a = 0.0;
            double b = 0.0;
            for (int i = std::max(-radius, -u); i <= std::min(radius, w - 1 - u); ++i) {
                const double d = depth(u + i, v);
                if (valid_depth(d)) {
                    a += kernel[i + radius] * d;
                    b += kernel[i + radius];
                }
            }
            num(u, v) = a;
            den(u, v) = b;
        }
    }
    DepthMap out(w, h, 0.0);
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            if (!valid_depth(depth(u, v))) {
                continue;
            }
            double a = 0.0;
            double b = 0.0;
            for (int i = std::max(-radius, -v); i <= std::min(radius, h - 1 - v); ++i) {
                a += kernel[i + radius] * num(u, v + i);
                b += kernel[i + radius] * den(u, v + i);
            }
            out(u, v) = a / b;
        }
    }
    return out;
}

NormalMap normals_from_depth(const DepthMap& raw, const CameraIntrinsics& intrinsics, const NormalOptions& options) {
    if (options.step < 1) {
        throw GeometryError("normal step must be >= 1");
    }
    const DepthMap depth = smooth_depth(raw, options.smoothing_sigma);
    const int s = options.step;
    NormalMap normals(depth.width(), depth.height(), Vec3::Zero());
    for (int v = s; v + s < depth.height(); ++v) {
        for (int u = s; u + s < depth.width(); ++u) {
            const double dc = depth(u, v);
            const double dl = depth(u - s, v);
            const double dr = depth(u + s, v);
            const double du = depth(u, v - s);
            const double dd = depth(u, v + s);
            if (!valid_depth(dc) || !valid_depth(dl) || !valid_depth(dr) || !valid_depth(du) ||
                !valid_depth(dd)) {
                continue;
            }
            const Vec3 tx = back_project(Vec2(u + s, v), dr, intrinsics) -
                            back_project(Vec2(u - s, v), dl, intrinsics);
            const Vec3 ty = back_project(Vec2(u, v + s), dd, intrinsics) -
                            back_project(Vec2(u, v - s), du, intrinsics);
            Vec3 n = tx.cross(ty);
            const double len = n.norm();
            if (!(len > 0.0)) {
                continue;
            }
            n /= len;
            if (n.dot(back_project(Vec2(u, v), dc, intrinsics)) > 0.0) {
                n = -n;
            }
            normals(u, v) = n;
        }
    }
    return normals;
}

double angle_deg(const Vec3& a, const Vec3& b) {
    const double c = std::clamp(a.dot(b), -1.0, 1.0);
    return std::acos(c) * 180.0 / std::numbers::pi;
}

}  // namespace defuse
