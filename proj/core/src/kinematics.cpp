#include "servo/kinematics.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>

#include "servo/common.hpp"
#include "servo/config.hpp"

namespace servo::kin {

Pose Pose::from_xyz_rpy(const Eigen::Vector3d& xyz, const Eigen::Vector3d& rpy) {
  Pose p;
  p.rotation = (Eigen::AngleAxisd(rpy.z(), Eigen::Vector3d::UnitZ()) *
                Eigen::AngleAxisd(rpy.y(), Eigen::Vector3d::UnitY()) *
                Eigen::AngleAxisd(rpy.x(), Eigen::Vector3d::UnitX()))
                   .toRotationMatrix();
  p.translation = xyz;
  return p;
}

Pose Pose::from_quaternion(const Eigen::Vector3d& xyz, const Eigen::Quaterniond& q) {
  Pose p;
  p.rotation = q.normalized().toRotationMatrix();
  p.translation = xyz;
  return p;
}

Pose Pose::operator*(const Pose& other) const {
  Pose p;
  p.rotation = rotation * other.rotation;
  p.translation = rotation * other.translation + translation;
  return p;
}

Pose Pose::inverse() const {
  Pose p;
  p.rotation = rotation.transpose();
  p.translation = -(p.rotation * translation);
  return p;
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Eigen::Quaterniond Pose::quaternion() const {
  Eigen::Quaterniond q(rotation);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

bool Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm();
  return ortho < tol && std::abs(rotation.determinant() - 1.0) < tol;
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Pose integrate_twist(const Pose& pose, const Vector6& twist, double dt) {
  const Eigen::Vector3d v = twist.head<3>() * dt;
  const Eigen::Vector3d w = twist.tail<3>() * dt;
  const double theta = w.norm();
  const Eigen::Matrix3d W = skew(w);
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d V = Eigen::Matrix3d::Identity();
  if (theta > 1e-12) {
    const double t2 = theta * theta;
    R += std::sin(theta) / theta * W + (1.0 - std::cos(theta)) / t2 * W * W;
    V += (1.0 - std::cos(theta)) / t2 * W + (theta - std::sin(theta)) / (t2 * theta) * W * W;
  } else {
    R += W + 0.5 * W * W;
    V += 0.5 * W;
  }
  Pose step;
  step.rotation = R;
  step.translation = V * v;
  Pose out = pose * step;
  // re-orthonormalise to keep long integrations on SO(3)
  Eigen::Quaterniond q(out.rotation);
  out.rotation = q.normalized().toRotationMatrix();
  return out;
}

DhChain DhChain::ur5e() {
  DhChain c;
  const double half_pi = EIGEN_PI / 2.0;
  const std::array<double, 6> a = {0.0, -0.425, -0.3922, 0.0, 0.0, 0.0};
  const std::array<double, 6> d = {0.1625, 0.0, 0.0, 0.1333, 0.0997, 0.0996};
  const std::array<double, 6> alpha = {half_pi, 0.0, 0.0, half_pi, -half_pi, 0.0};
  for (std::size_t i = 0; i < 6; ++i) c.joints[i] = {a[i], d[i], alpha[i], 0.0};
  return c;
}

namespace {

Vector6 six(const RunConfig& cfg, const std::string& key) {
  const auto v = cfg.get_doubles(key);
  if (v.size() != 6) throw ConfigError("config key '" + key + "' needs 6 values");
  return Vector6(v.data());
}

Eigen::Vector3d three(const RunConfig& cfg, const std::string& key) {
  const auto v = cfg.get_doubles(key);
  if (v.size() != 3) throw ConfigError("config key '" + key + "' needs 3 values");
  return Eigen::Vector3d(v[0], v[1], v[2]);
}

}  // namespace

DhChain DhChain::from_config(const RunConfig& cfg) {
  DhChain c;
  const Vector6 a = six(cfg, "dh.a");
  const Vector6 d = six(cfg, "dh.d");
  const Vector6 alpha = six(cfg, "dh.alpha");
  const Vector6 offset = six(cfg, "dh.theta_offset");
  for (int i = 0; i < 6; ++i) c.joints[std::size_t(i)] = {a[i], d[i], alpha[i], offset[i]};
  c.q_min = six(cfg, "joint.min");
  c.q_max = six(cfg, "joint.max");
  c.qdot_max = six(cfg, "joint.vel_limit");
  for (int i = 0; i < 6; ++i) {
    if (!(c.q_min[i] < c.q_max[i])) throw ConfigError("joint.min must be below joint.max");
    if (!(c.qdot_max[i] > 0.0)) throw ConfigError("joint.vel_limit must be positive");
  }
  c.hand_eye = Pose::from_xyz_rpy(three(cfg, "handeye.xyz"), three(cfg, "handeye.rpy"));
  return c;
}

bool JointState::violates_limits(const DhChain& chain) const {
  for (int i = 0; i < 6; ++i)
    if (q[i] < chain.q_min[i] || q[i] > chain.q_max[i] || std::abs(qdot[i]) > chain.qdot_max[i]) return true;
  return false;
}

Twist Twist::from_vector(const Vector6& v) { return {v.head<3>(), v.tail<3>()}; }

Vector6 Twist::vector() const {
  Vector6 v;
  v << linear, angular;
  return v;
}

std::array<Pose, 7> joint_frames(const DhChain& chain, const Vector6& q) {
  std::array<Pose, 7> frames;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto& j = chain.joints[i];
    const double th = q[Eigen::Index(i)] + j.theta_offset;
    const double ct = std::cos(th), st = std::sin(th);
    const double ca = std::cos(j.alpha), sa = std::sin(j.alpha);
    Pose link;
    link.rotation << ct, -st * ca, st * sa, st, ct * ca, -ct * sa, 0.0, sa, ca;
    link.translation << j.a * ct, j.a * st, j.d;
    frames[i + 1] = frames[i] * link;
  }
  return frames;
}

ArmPose forward_kinematics(const DhChain& chain, const Vector6& q) {
  const auto frames = joint_frames(chain, q);
  return {frames[6], frames[6] * chain.hand_eye};
}

Matrix6 geometric_jacobian(const DhChain& chain, const Vector6& q, JacobianFrame frame) {
  const auto frames = joint_frames(chain, q);
  const Eigen::Vector3d p_e = frames[6].translation;
  Matrix6 J;
  for (int i = 0; i < 6; ++i) {
    const Eigen::Vector3d z = frames[std::size_t(i)].rotation.col(2);
    const Eigen::Vector3d p = frames[std::size_t(i)].translation;
    J.block<3, 1>(0, i) = z.cross(p_e - p);
    J.block<3, 1>(3, i) = z;
  }
  if (frame == JacobianFrame::end_effector) {
    const Eigen::Matrix3d Rt = frames[6].rotation.transpose();
    J.topRows<3>() = (Rt * J.topRows<3>()).eval();
    J.bottomRows<3>() = (Rt * J.bottomRows<3>()).eval();
  }
  return J;
}

Matrix6 twist_transform(const Pose& parent_to_child) {
  const Eigen::Matrix3d& R = parent_to_child.rotation;
  Matrix6 V = Matrix6::Zero();
  V.topLeftCorner<3, 3>() = R;
  V.topRightCorner<3, 3>() = skew(parent_to_child.translation) * R;
  V.bottomRightCorner<3, 3>() = R;
  return V;
}

namespace {

Vector6 solve_camera_twist(const DhChain& chain, const Vector6& q, const Vector6& camera_twist,
                           double phi_jacobian) {
  const Matrix6 J = geometric_jacobian(chain, q, JacobianFrame::end_effector);
  const double det = J.determinant();
  if (!(std::abs(det) > phi_jacobian)) throw SingularityError(det, phi_jacobian);
  const Vector6 v_ee = twist_transform(chain.hand_eye) * camera_twist;
  return J.partialPivLu().solve(v_ee);
}

Eigen::Vector3d rotation_vector(const Eigen::Matrix3d& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.axis() * aa.angle();
}

}  // namespace

Vector6 resolve_joint_velocities(const DhChain& chain, const Vector6& q, const Twist& camera_twist,
                                 double phi_jacobian) {
  Vector6 qdot = solve_camera_twist(chain, q, camera_twist.vector(), phi_jacobian);
  double scale = 1.0;
  for (int i = 0; i < 6; ++i) scale = std::max(scale, std::abs(qdot[i]) / chain.qdot_max[i]);
  if (scale > 1.0) qdot /= scale;
  return qdot;
}

PoseError pose_errors(const Pose& current, const Pose& desired) {
  PoseError e;
  e.translation = (current.translation - desired.translation).norm();
  const Eigen::Matrix3d rel = desired.rotation.transpose() * current.rotation;
  // angle from the trace, clamped against rounding just outside [-1, 1]
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  e.rotation = std::acos(c);
  if (e.rotation < 1e-6 || e.rotation > EIGEN_PI - 1e-6) {
    e.rotation = Eigen::AngleAxisd(rel).angle();
  }
  return e;
}

Vector6 pose_difference(const Pose& current, const Pose& target) {
  const Pose rel = current.inverse() * target;
  Vector6 d;
  d << rel.translation, rotation_vector(rel.rotation);
  return d;
}

std::optional<Vector6> inverse_kinematics(const DhChain& chain, const Pose& camera_target,
                                          const Vector6& seed, double phi_jacobian,
                                          int max_iterations) {
  Vector6 q = seed;
  for (int it = 0; it < max_iterations; ++it) {
    const Pose current = forward_kinematics(chain, q).camera;
    Vector6 err = pose_difference(current, camera_target);
    const double norm = err.norm();
    if (norm < 1e-11) {
      for (int i = 0; i < 6; ++i) q[i] = std::remainder(q[i], 2.0 * EIGEN_PI);
      for (int i = 0; i < 6; ++i)
        if (q[i] < chain.q_min[i] || q[i] > chain.q_max[i]) return std::nullopt;
      return q;
    }
    if (norm > 0.2) err *= 0.2 / norm;
    try {
      q += solve_camera_twist(chain, q, err, phi_jacobian);
    } catch (const SingularityError&) {
      return std::nullopt;
    }
    if (!q.allFinite()) return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace servo::kin
