#pragma once

#include <Eigen/Core>

namespace flowsam {

// Wraps an angle to [-pi, pi).
double wrap_angle(double theta);

// Planar rigid transform, theta kept in [-pi, pi).
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double theta_);

  Pose2 compose(const Pose2& other) const;  // this * other
  Pose2 inverse() const;
  Eigen::Vector2d translation() const { return {x, y}; }
  Eigen::Vector3d vec() const { return {x, y, theta}; }
};

// Exponential map: tangent (vx, vy, vtheta) -> Pose2.
Pose2 se2_exp(const Eigen::Vector3d& xi);

// Logarithm map, inverse of se2_exp for theta in [-pi, pi).
Eigen::Vector3d se2_log(const Pose2& p);

}  // namespace flowsam
