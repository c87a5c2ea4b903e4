#include <cmath>

#include "doctest.h"
#include "servo/config.hpp"
#include "servo/kinematics.hpp"
#include "support.hpp"

using namespace servo;
using namespace servo::kin;
namespace st = servo::testing;

namespace {

Vector6 random_q(Rng& rng) {
  std::uniform_real_distribution<double> u(-EIGEN_PI, EIGEN_PI);
  Vector6 q;
  for (int i = 0; i < 6; ++i) q[i] = u(rng);
  return q;
}

Pose random_pose(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond qr(n(rng), n(rng), n(rng), n(rng));
  return Pose::from_quaternion(Eigen::Vector3d(n(rng), n(rng), n(rng)), qr.normalized());
}

}  // namespace

TEST_SUITE("kinematics") {
  TEST_CASE("FK matches the per-joint transform chain") {
    const DhChain chain = DhChain::ur5e();
    Rng rng(11);
    for (int k = 0; k < 50; ++k) {
      const Vector6 q = random_q(rng);
      CHECK((forward_kinematics(chain, q).end_effector.matrix() - st::fk_oracle(chain, q)).cwiseAbs().maxCoeff() <
            1e-12);
    }
  }

  TEST_CASE("home configuration of the UR5e table") {
    // All joints zero: arm stretched along -x at shoulder height, tool pointing along -y.
    const auto ee = forward_kinematics(DhChain::ur5e(), Vector6::Zero()).end_effector;
    CHECK(ee.translation.x() == doctest::Approx(-0.8172));
    CHECK(ee.translation.y() == doctest::Approx(-0.2329));
    CHECK(ee.translation.z() == doctest::Approx(0.0628));
  }

  TEST_CASE("default config reproduces the built-in chain") {
    const DhChain a = DhChain::from_config(RunConfig());
    const DhChain b = DhChain::ur5e();
    for (int i = 0; i < 6; ++i) {
      CHECK(a.joints[std::size_t(i)].a == b.joints[std::size_t(i)].a);
      CHECK(a.joints[std::size_t(i)].d == b.joints[std::size_t(i)].d);
    }
  }

  TEST_CASE("geometric Jacobian matches FK finite differences") {
    const DhChain chain = DhChain::ur5e();
    Rng rng(12);
    for (int k = 0; k < 30; ++k) {
      const Vector6 q = random_q(rng);
      CHECK((geometric_jacobian(chain, q) - st::jacobian_fd_oracle(chain, q)).cwiseAbs().maxCoeff() < 1e-6);
    }
  }

  TEST_CASE("end-effector Jacobian is the base Jacobian rotated into the tool frame") {
    const DhChain chain = DhChain::ur5e();
    Rng rng(13);
    const Vector6 q = random_q(rng);
    const Eigen::Matrix3d R = forward_kinematics(chain, q).end_effector.rotation;
    const Matrix6 Jb = geometric_jacobian(chain, q);
    const Matrix6 Je = geometric_jacobian(chain, q, JacobianFrame::end_effector);
    CHECK((Je.topRows<3>() - R.transpose() * Jb.topRows<3>()).norm() < 1e-12);
    CHECK((Je.bottomRows<3>() - R.transpose() * Jb.bottomRows<3>()).norm() < 1e-12);
  }

  TEST_CASE("twist transform is a homomorphism and inverts") {
    Rng rng(14);
    for (int k = 0; k < 20; ++k) {
      const Pose a = random_pose(rng), b = random_pose(rng);
      CHECK((twist_transform(a * b) - twist_transform(a) * twist_transform(b)).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((twist_transform(a.inverse()) * twist_transform(a) - Matrix6::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("integrating a twist with a pure rotation keeps the position") {
    Pose p = Pose::from_xyz_rpy({0.1, 0.2, 0.3}, {0.1, -0.2, 0.3});
    Vector6 w;
    w << 0, 0, 0, 0, 0, 0.5;
    const Pose r = integrate_twist(p, w, 2.0);
    CHECK((r.translation - p.translation).norm() < 1e-12);
    CHECK(pose_errors(p, r).rotation == doctest::Approx(1.0));
    CHECK(r.is_valid());
  }

  TEST_CASE("pose errors and difference") {
    const Pose a = Pose::from_xyz_rpy({0, 0, 0}, {0, 0, 0});
    const Pose b = Pose::from_xyz_rpy({0.03, 0.04, 0}, {0, 0, 0.2});
    const auto e = pose_errors(a, b);
    CHECK(e.translation == doctest::Approx(0.05));
    CHECK(e.rotation == doctest::Approx(0.2));
    const Vector6 d = pose_difference(a, b);
    CHECK(d.head<3>().norm() == doctest::Approx(0.05));
    CHECK(d.tail<3>().z() == doctest::Approx(0.2));
    // translation part is expressed in the current frame
    CHECK((a.rotation * d.head<3>() + a.translation - b.translation).norm() < 1e-12);
  }

  TEST_CASE("resolved joint velocities reproduce the camera twist") {
    const DhChain chain = DhChain::ur5e();
    Vector6 q;
    q << 0.3, -1.2, 1.4, -1.8, -1.5, 0.2;
    const Twist t = Twist::from_vector((Vector6() << 0.01, -0.02, 0.015, 0.05, -0.03, 0.04).finished());
    const Vector6 qd = resolve_joint_velocities(chain, q, t, 1e-6);
    const double dt = 1e-6;
    const Pose c0 = forward_kinematics(chain, q).camera;
    const Pose c1 = forward_kinematics(chain, q + qd * dt).camera;
    const Vector6 achieved = pose_difference(c0, c1) / dt;
    CHECK((achieved - t.vector()).norm() < 1e-5);
  }

  TEST_CASE("singular configurations throw") {
    // Wrist aligned with the shoulder (q5 = 0) is a wrist singularity of the UR arm.
    Vector6 q;
    q << 0.0, -1.0, 1.0, 0.0, 0.0, 0.0;
    CHECK_THROWS_AS(resolve_joint_velocities(DhChain::ur5e(), q, Twist{}, 1e-4), SingularityError);
  }

  TEST_CASE("joint limits") {
    DhChain chain = DhChain::ur5e();
    JointState s;
    CHECK_FALSE(s.violates_limits(chain));
    s.q[2] = 7.0;
    CHECK(s.violates_limits(chain));
    s.q[2] = 0.0;
    s.qdot[0] = 4.0;
    CHECK(s.violates_limits(chain));
  }

  TEST_CASE("IK recovers a reachable camera pose") {
    const DhChain chain = DhChain::ur5e();
    Vector6 q;
    q << 0.2, -1.3, 1.5, -1.7, -1.4, 0.3;
    const Pose target = forward_kinematics(chain, q).camera;
    Vector6 seed = q;
    seed.array() += 0.1;
    const auto sol = inverse_kinematics(chain, target, seed);
    REQUIRE(sol.has_value());
    const auto e = pose_errors(forward_kinematics(chain, *sol).camera, target);
    CHECK(e.translation < 1e-8);
    CHECK(e.rotation < 1e-8);
  }
}
