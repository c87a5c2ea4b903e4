#include "servo/dvs.hpp"

#include <Eigen/Cholesky>
#include <cstdio>
#include <fstream>

#include "servo/config.hpp"
#include "servo/env.hpp"

namespace servo::dvs {

DvsConfig DvsConfig::from_config(const RunConfig& cfg) {
  DvsConfig c;
  c.gain = cfg.get_double("dvs.gain");
  c.max_iterations = int(cfg.get_int("dvs.max_iterations"));
  c.converge_trans = cfg.get_double("dvs.converge_trans");
  c.damping = cfg.get_double("dvs.damping");
  if (!(c.gain > 0)) throw ConfigError("dvs.gain must be positive");
  if (c.max_iterations < 0 || c.damping < 0) throw ConfigError("dvs.max_iterations and dvs.damping must be >= 0");
  return c;
}

namespace {

bool hit(const scene::DepthImage& img, const scene::CameraModel& cam, int u, int v) {
  return img.at(u, v) < cam.far;
}

double pixel_x(const scene::CameraModel& cam, int u) { return (u + 0.5 - cam.cx) / cam.fx; }
double pixel_y(const scene::CameraModel& cam, int v) { return (v + 0.5 - cam.cy) / cam.fy; }

void check_image(const scene::DepthImage& image, const scene::CameraModel& cam) {
  if (image.width != cam.width || image.height != cam.height ||
      image.depth.size() != cam.pixel_count())
    throw DimensionError("depth image does not match the camera model");
}

}  // namespace

ImageGradients image_gradients(const scene::DepthImage& image, const scene::CameraModel& cam) {
  check_image(image, cam);
  const std::size_t n = cam.pixel_count();
  ImageGradients g{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<unsigned char>(n, 0)};
  const double scale = 1.0 / (cam.far - cam.near);
  for (int v = 1; v + 1 < cam.height; ++v) {
    for (int u = 1; u + 1 < cam.width; ++u) {
      if (!hit(image, cam, u, v) || !hit(image, cam, u - 1, v) || !hit(image, cam, u + 1, v) ||
          !hit(image, cam, u, v - 1) || !hit(image, cam, u, v + 1))
        continue;
      const std::size_t p = std::size_t(v) * std::size_t(cam.width) + std::size_t(u);
      // d/du -> d/dx through x = (u - cx) / fx
      g.dx[p] = 0.5 * (image.at(u + 1, v) - image.at(u - 1, v)) * cam.fx * scale;
      g.dy[p] = 0.5 * (image.at(u, v + 1) - image.at(u, v - 1)) * cam.fy * scale;
      g.valid[p] = 1;
    }
  }
  return g;
}

InteractionMatrix photometric_interaction(const scene::DepthImage& image, const scene::CameraModel& cam,
                                          const ImageGradients& grad) {
  check_image(image, cam);
  const std::size_t n = cam.pixel_count();
  if (grad.dx.size() != n || grad.dy.size() != n) throw DimensionError("gradient size does not match image");
  InteractionMatrix L = InteractionMatrix::Zero(Eigen::Index(n), 6);
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const std::size_t p = std::size_t(v) * std::size_t(cam.width) + std::size_t(u);
      const double Ix = grad.dx[p], Iy = grad.dy[p];
      if (Ix == 0.0 && Iy == 0.0) continue;
      const double x = pixel_x(cam, u), y = pixel_y(cam, v);
      const double iz = 1.0 / image.depth[p];
      Eigen::Matrix<double, 1, 6> Lx, Ly;
      Lx << -iz, 0.0, x * iz, x * y, -(1.0 + x * x), y;
      Ly << 0.0, -iz, y * iz, 1.0 + y * y, -x * y, -x;
      L.row(Eigen::Index(p)) = -(Ix * Lx + Iy * Ly);
    }
  }
  return L;
}

InteractionMatrix interaction_matrix(const scene::DepthImage& image, const scene::CameraModel& cam) {
  return photometric_interaction(image, cam, image_gradients(image, cam));
}

InteractionMatrix depth_interaction_matrix(const scene::DepthImage& image, const scene::CameraModel& cam) {
  const ImageGradients grad = image_gradients(image, cam);
  InteractionMatrix L = photometric_interaction(image, cam, grad);
  const double scale = 1.0 / (cam.far - cam.near);
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const std::size_t p = std::size_t(v) * std::size_t(cam.width) + std::size_t(u);
      if (!grad.valid[p]) continue;
      const double x = pixel_x(cam, u), y = pixel_y(cam, v), Z = image.depth[p];
      Eigen::Matrix<double, 1, 6> Lz;
      Lz << 0.0, 0.0, -1.0, -y * Z, x * Z, 0.0;
      L.row(Eigen::Index(p)) += scale * Lz;
    }
  }
  return L;
}

Eigen::VectorXd visual_error(const scene::DepthImage& current, std::span<const float> desired,
                             const scene::CameraModel& cam) {
  check_image(current, cam);
  if (desired.size() != cam.pixel_count()) throw DimensionError("desired image size does not match camera");
  Eigen::VectorXd e(Eigen::Index(desired.size()));
  for (std::size_t i = 0; i < desired.size(); ++i)
    e[Eigen::Index(i)] = double(float(cam.normalize(current.depth[i]))) - double(desired[i]);
  return e;
}

Eigen::Matrix<double, 6, Eigen::Dynamic> damped_pseudo_inverse(const InteractionMatrix& L, double mu) {
  const kin::Matrix6 H = L.transpose() * L + mu * kin::Matrix6::Identity();
  return H.ldlt().solve(L.transpose());
}

kin::Twist dvs_step(const scene::DepthImage& current, std::span<const float> desired,
                    const scene::CameraModel& cam, const DvsConfig& cfg) {
  const Eigen::VectorXd e = visual_error(current, desired, cam);
  const InteractionMatrix L =
      cfg.depth_term ? depth_interaction_matrix(current, cam) : interaction_matrix(current, cam);
  const kin::Matrix6 H = L.transpose() * L + cfg.damping * kin::Matrix6::Identity();
  const kin::Vector6 g = L.transpose() * e;
  return kin::Twist::from_vector(-cfg.gain * H.ldlt().solve(g));
}

kin::Twist dvs_step(const scene::DepthImage& current, const scene::DepthImage& desired,
                    const scene::CameraModel& cam, const DvsConfig& cfg) {
  check_image(desired, cam);
  return dvs_step(current, desired.normalized_f32(cam), cam, cfg);
}

Trajectory run_dvs_servo(env::ServoEnv& env, const DvsConfig& cfg) {
  Trajectory t;
  if (env.done()) throw Error("run_dvs_servo needs an active episode");
  const auto record = [&](int step, const kin::Vector6& twist) {
    TrajectoryStep s;
    s.step = step;
    s.errors = env.errors();
    s.twist = twist;
    s.camera = env.camera_pose();
    s.visual_error_norm = visual_error(env.image(), env.goal()->image, env.camera()).norm();
    t.steps.push_back(s);
  };
  record(0, kin::Vector6::Zero());
  if (env.errors().trans < cfg.converge_trans) {
    t.converged = true;
    t.outcome = env.outcome();
    return t;
  }
  for (int i = 0; i < cfg.max_iterations && !env.done(); ++i) {
    const kin::Twist twist = dvs_step(env.image(), env.goal()->image, env.camera(), cfg);
    env::StepResult r = env.step_twist(twist);
    t.transitions.push_back(std::move(r.transition));
    // the twist actually applied, after scaling into the action bounds
    record(i + 1, env.config().bounds.to_twist(t.transitions.back().action).vector());
    if (r.errors.trans < cfg.converge_trans) {
      t.converged = true;
      break;
    }
  }
  t.outcome = env.outcome();
  return t;
}

void write_trajectory_csv(const Trajectory& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,e_trans,e_rot,e_img,vx,vy,vz,wx,wy,wz,converged\n";
  char buf[512];
  for (const auto& s : t.steps) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", s.step,
                  s.errors.trans, s.errors.rot, s.errors.img, s.twist[0], s.twist[1], s.twist[2], s.twist[3],
                  s.twist[4], s.twist[5], int(t.converged));
    out << buf;
  }
}

std::vector<std::vector<env::Transition>> collect_demonstrations(env::ServoEnv& env, const DvsConfig& cfg,
                                                                 double radius, int episodes, Rng& rng) {
  std::vector<std::vector<env::Transition>> kept;
  for (int e = 0; e < episodes; ++e) {
    env.reset_near_goal(rng, radius);
    std::vector<env::Transition> episode;
    do {
      const kin::Twist twist = dvs_step(env.image(), env.goal()->image, env.camera(), cfg);
      episode.push_back(env.step_twist(twist).transition);
    } while (!env.done());
    if (env.outcome() == env::Outcome::success) kept.push_back(std::move(episode));
  }
  return kept;
}

}  // namespace servo::dvs
