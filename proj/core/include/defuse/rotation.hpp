#pragma once

#include "defuse/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace defuse {

inline Mat3 skew(const Vec3& w) {
    Mat3 m;
    m << 0.0, -w.z(), w.y(),
         w.z(), 0.0, -w.x(),
         -w.y(), w.x(), 0.0;
    return m;
}

inline Mat3 so3_exp(const Vec3& w) {
    const double theta = w.norm();
    if (theta < 1e-12) {
        return Mat3::Identity() + skew(w);
    }
    return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

inline Vec3 so3_log(const Mat3& r) {
    const Eigen::AngleAxisd aa(r);
    return aa.angle() * aa.axis();
}

/// Inverse of the left Jacobian of SO(3) at `phi`.
inline Mat3 so3_left_jacobian_inverse(const Vec3& phi) {
    const double theta = phi.norm();
    const Mat3 k = skew(phi);
    if (theta < 1e-8) {
        return Mat3::Identity() - 0.5 * k + k * k / 12.0;
    }
    const double coeff = 1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
    return Mat3::Identity() - 0.5 * k + coeff * k * k;
}

/// Nearest rotation in the Frobenius sense.
inline Mat3 orthonormalize(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    const Mat3 v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) {
        u.col(2) *= -1.0;
    }
    return u * v.transpose();
}

/// (yaw, pitch, roll) with R = Rz(yaw) * Ry(pitch) * Rx(roll).
inline Vec3 euler_zyx(const Mat3& r) {
    const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
    const double yaw = std::atan2(r(1, 0), r(0, 0));
    const double roll = std::atan2(r(2, 1), r(2, 2));
    return {yaw, pitch, roll};
}

inline Mat3 from_euler_zyx(const Vec3& ypr) {
    return (Eigen::AngleAxisd(ypr.x(), Vec3::UnitZ()) * Eigen::AngleAxisd(ypr.y(), Vec3::UnitY()) *
            Eigen::AngleAxisd(ypr.z(), Vec3::UnitX()))
        .toRotationMatrix();
}

/// Rotation angle of r in degrees.
inline double rotation_angle_deg(const Mat3& r) {
    // atan2 keeps full precision for small angles, where acos of the trace does not.
    const Vec3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    return std::atan2(0.5 * axis.norm(), 0.5 * (r.trace() - 1.0)) * 180.0 / std::numbers::pi;
}

}  // namespace defuse
