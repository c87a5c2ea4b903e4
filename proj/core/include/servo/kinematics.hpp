#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <optional>

namespace servo {
class RunConfig;
}

namespace servo::kin {

using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

// Rigid transform. Composition `a * b` maps frame-b coordinates through a.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }
  static Pose from_xyz_rpy(const Eigen::Vector3d& xyz, const Eigen::Vector3d& rpy);
  static Pose from_quaternion(const Eigen::Vector3d& xyz, const Eigen::Quaterniond& q);

  Pose operator*(const Pose& other) const;
  Pose inverse() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  Eigen::Matrix4d matrix() const;
  // Unit quaternion with non-negative scalar part.
  Eigen::Quaterniond quaternion() const;

  bool is_valid(double tol = 1e-9) const;
};

// Camera-frame rigid motion: pose * exp(twist * dt), twist held constant.
Pose integrate_twist(const Pose& pose, const Vector6& twist, double dt);

struct DhParameter {
  double a = 0.0;
  double d = 0.0;
  double alpha = 0.0;
  double theta_offset = 0.0;
};

struct DhChain {
  std::array<DhParameter, 6> joints{};
  Vector6 q_min = Vector6::Constant(-2.0 * EIGEN_PI);
  Vector6 q_max = Vector6::Constant(2.0 * EIGEN_PI);
  Vector6 qdot_max = Vector6::Constant(EIGEN_PI);
  Pose hand_eye;  // end-effector -> camera

  static DhChain ur5e();
  static DhChain from_config(const RunConfig& cfg);
};

struct JointState {
  Vector6 q = Vector6::Zero();
  Vector6 qdot = Vector6::Zero();

  bool violates_limits(const DhChain& chain) const;
};

struct Twist {
  Eigen::Vector3d linear = Eigen::Vector3d::Zero();
  Eigen::Vector3d angular = Eigen::Vector3d::Zero();

  static Twist from_vector(const Vector6& v);
  Vector6 vector() const;
};

struct ArmPose {
  Pose end_effector;
  Pose camera;
};

// Base frame followed by the frame after each joint (index 6 = end-effector).
std::array<Pose, 7> joint_frames(const DhChain& chain, const Vector6& q);

ArmPose forward_kinematics(const DhChain& chain, const Vector6& q);

enum class JacobianFrame { base, end_effector };

// Rows: linear velocity of the end-effector origin, then angular velocity.
Matrix6 geometric_jacobian(const DhChain& chain, const Vector6& q,
                           JacobianFrame frame = JacobianFrame::base);

// [R, [t]x R; 0, R] for T = (R, t): re-expresses a twist given in the child
// frame of T as a twist of the parent frame's origin, in parent coordinates.
Matrix6 twist_transform(const Pose& parent_to_child);

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

// Joint velocities realising `camera_twist` (camera frame). Throws
// SingularityError when |det J_ee| <= phi_jacobian. The result is scaled
// uniformly into the joint velocity limits.
Vector6 resolve_joint_velocities(const DhChain& chain, const Vector6& q, const Twist& camera_twist,
                                 double phi_jacobian);

struct PoseError {
  double translation = 0.0;  // m
  double rotation = 0.0;     // rad, in [0, pi]
};

PoseError pose_errors(const Pose& current, const Pose& desired);

// Camera-frame 6-vector (translation, rotation vector) taking `current` to `target`.
Vector6 pose_difference(const Pose& current, const Pose& target);

// Newton iteration on the camera pose. Returns nullopt when it fails to converge
// or passes through a singular configuration.
std::optional<Vector6> inverse_kinematics(const DhChain& chain, const Pose& camera_target,
                                          const Vector6& seed, double phi_jacobian = 1e-6,
                                          int max_iterations = 200);

}  // namespace servo::kin
