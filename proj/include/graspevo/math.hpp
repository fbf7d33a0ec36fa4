#ifndef GRASPEVO_MATH_HPP
#define GRASPEVO_MATH_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace graspevo {

using Vec3 = Eigen::Vector3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Quat = Eigen::Quaterniond;
using Transform = Eigen::Isometry3d;

inline constexpr double kPi = std::numbers::pi;

/// Roll/pitch/yaw with intrinsic XYZ convention: R = Rx(roll) * Ry(pitch) * Rz(yaw).
struct Euler {
    double roll = 0.0;
    double pitch = 0.0;
    double yaw = 0.0;
};

inline Quat quaternion_from_euler(const Euler& e)
{
    Quat q = Eigen::AngleAxisd(e.roll, Vec3::UnitX()) * Eigen::AngleAxisd(e.pitch, Vec3::UnitY())
        * Eigen::AngleAxisd(e.yaw, Vec3::UnitZ());
    q.normalize();
    return q;
}

/// Canonical angles: pitch in [-pi/2, pi/2], roll and yaw in (-pi, pi].
inline Euler euler_from_quaternion(const Quat& q)
{
    const Eigen::Matrix3d r = q.normalized().toRotationMatrix();
    Euler e;
    e.pitch = std::asin(std::clamp(r(0, 2), -1.0, 1.0));
    e.roll = std::atan2(-r(1, 2), r(2, 2));
    e.yaw = std::atan2(-r(0, 1), r(0, 0));
    return e;
}

inline Transform make_transform(const Vec3& position, const Quat& orientation)
{
    Transform t = Transform::Identity();
    t.linear() = orientation.normalized().toRotationMatrix();
    t.translation() = position;
    return t;
}

inline bool is_unit(const Quat& q, double tol = 1e-9) { return std::abs(q.norm() - 1.0) <= tol; }

/// Wrap an angle into (-pi, pi].
inline double wrap_angle(double a)
{
    a = std::remainder(a, 2.0 * kPi);
    return a <= -kPi ? a + 2.0 * kPi : a;
}

} // namespace graspevo

#endif
