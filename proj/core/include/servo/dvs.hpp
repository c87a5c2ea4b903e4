#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <span>
#include <vector>

#include "servo/goal_env.hpp"
#include "servo/kinematics.hpp"
#include "servo/scene.hpp"

namespace servo {
class RunConfig;
}

namespace servo::env {
class ServoEnv;
}

namespace servo::dvs {

using InteractionMatrix = Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor>;

struct DvsConfig {
  double gain = 1.0;
  int max_iterations = 200;
  double converge_trans = 0.002;
  double damping = 1e-6;
  // Include the depth-rate term of a z-depth image (see interaction_matrix).
  bool depth_term = true;

  static DvsConfig from_config(const RunConfig& cfg);
};

// Central-difference gradients of the normalized image in normalized image
// coordinates (x = (u - cx) / fx). Pixels on the border, missing the scene, or
// with a missing neighbour get a zero gradient and are flagged invalid.
struct ImageGradients {
  std::vector<double> dx;
  std::vector<double> dy;
  std::vector<unsigned char> valid;
};
ImageGradients image_gradients(const scene::DepthImage& image, const scene::CameraModel& cam);

// Photometric rows -grad(I)(p)^T L_x(p, Z_p) treating the normalized depth as
// intensity. Linear in the gradients.
InteractionMatrix photometric_interaction(const scene::DepthImage& image, const scene::CameraModel& cam,
                                          const ImageGradients& grad);
InteractionMatrix interaction_matrix(const scene::DepthImage& image, const scene::CameraModel& cam);

// Photometric rows plus the rate of the depth value itself: a z-depth pixel
// changes with camera motion even where the image gradient vanishes
// (dZ/dt = -v_z - y Z w_x + x Z w_y at fixed pixel). Invalid pixels get zero rows.
InteractionMatrix depth_interaction_matrix(const scene::DepthImage& image, const scene::CameraModel& cam);

// Normalized current - desired, row-major.
Eigen::VectorXd visual_error(const scene::DepthImage& current, std::span<const float> desired,
                             const scene::CameraModel& cam);

// (L^T L + mu I)^-1 L^T
Eigen::Matrix<double, 6, Eigen::Dynamic> damped_pseudo_inverse(const InteractionMatrix& L, double mu);

// -gain * pinv(L) * e, camera frame.
kin::Twist dvs_step(const scene::DepthImage& current, std::span<const float> desired,
                    const scene::CameraModel& cam, const DvsConfig& cfg);
kin::Twist dvs_step(const scene::DepthImage& current, const scene::DepthImage& desired,
                    const scene::CameraModel& cam, const DvsConfig& cfg);

struct TrajectoryStep {
  int step = 0;
  env::Errors errors;
  kin::Vector6 twist = kin::Vector6::Zero();
  kin::Pose camera;
  double visual_error_norm = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;  // steps[0] is the start state, zero twist
  std::vector<env::Transition> transitions;
  bool converged = false;
  env::Outcome outcome = env::Outcome::running;
  int control_steps() const { return int(transitions.size()); }
};

// Runs the control law through the environment's step path until the
// translation error drops below cfg.converge_trans, the episode terminates,
// or cfg.max_iterations control steps elapse. A start already inside the
// threshold takes zero control steps.
Trajectory run_dvs_servo(env::ServoEnv& env, const DvsConfig& cfg);

// Trajectory CSV: step,e_trans,e_rot,e_img,vx,vy,vz,wx,wy,wz,converged
void write_trajectory_csv(const Trajectory& t, const std::filesystem::path& path);

// Near-goal episodes driven by DVS. Every episode takes at least one step;
// only episodes ending in terminal success are kept.
std::vector<std::vector<env::Transition>> collect_demonstrations(env::ServoEnv& env, const DvsConfig& cfg,
                                                                 double radius, int episodes, Rng& rng);

}  // namespace servo::dvs
