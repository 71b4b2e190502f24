#include "flowsam/geometry.hpp"

#include <cmath>

namespace flowsam {

double wrap_angle(double theta) {
  double t = std::fmod(theta + M_PI, 2.0 * M_PI);
  if (t < 0) t += 2.0 * M_PI;
  return t - M_PI;
}

Pose2::Pose2(double x_, double y_, double theta_)
    : x(x_), y(y_), theta(wrap_angle(theta_)) {}

Pose2 Pose2::compose(const Pose2& o) const {
  double c = std::cos(theta), s = std::sin(theta);
  return Pose2(x + c * o.x - s * o.y, y + s * o.x + c * o.y, theta + o.theta);
}

Pose2 Pose2::inverse() const {
  double c = std::cos(theta), s = std::sin(theta);
  return Pose2(-(c * x + s * y), -(-s * x + c * y), -theta);
}

namespace {

// Left Jacobian of the translation part: t = V(theta) * rho.
Eigen::Matrix2d v_matrix(double theta) {
  double a, b;
  if (std::abs(theta) < 1e-8) {
    // series: sin t / t = 1 - t^2/6, (1 - cos t)/t = t/2 - t^3/24
    a = 1.0 - theta * theta / 6.0;
    b = theta / 2.0 - theta * theta * theta / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta;
  }
  Eigen::Matrix2d v;
  v << a, -b, b, a;
  return v;
}

}  // namespace

Pose2 se2_exp(const Eigen::Vector3d& xi) {
  Eigen::Vector2d t = v_matrix(xi[2]) * xi.head<2>();
  return Pose2(t[0], t[1], xi[2]);
}

Eigen::Vector3d se2_log(const Pose2& p) {
  double theta = wrap_angle(p.theta);
  Eigen::Matrix2d v = v_matrix(theta);
  // v = [[a, -b], [b, a]] => v^-1 = [[a, b], [-b, a]] / (a^2 + b^2)
  double a = v(0, 0), b = v(1, 0);
  double det = a * a + b * b;
  Eigen::Vector2d t = p.translation();
  return {(a * t[0] + b * t[1]) / det, (-b * t[0] + a * t[1]) / det, theta};
}

}  // namespace flowsam
