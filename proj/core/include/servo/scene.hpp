#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "servo/common.hpp"
#include "servo/kinematics.hpp"

namespace servo {
class RunConfig;
}

namespace servo::scene {

using kin::Pose;

struct Table {
  double height = 0.0;  // z of the table top
  Eigen::Vector2d center{0.5, 0.0};
  Eigen::Vector2d half_extent{0.4, 0.5};

  bool contains(const Eigen::Vector2d& xy, double margin = 0.0) const;
};

// Capped cylinder standing on the table, with a box handle on its local +x
// side. The handle is what makes the cup's yaw (and a camera orbiting the
// cup axis) visible; handle.x() = 0 gives a bare cylinder.
struct Cup {
  Eigen::Vector2d xy{0.45, 0.0};
  double yaw = 0.0;
  double radius = 0.04;
  double height = 0.10;
  Eigen::Vector3d handle{0.035, 0.02, 0.06};  // reach past the rim, width, height
};

struct Scene {
  Table table;
  Cup cup;

  static Scene from_config(const RunConfig& cfg);
  // Middle of the cup's bounding cylinder.
  Eigen::Vector3d cup_center() const;
  bool valid() const;
};

struct CameraModel {
  int width = 32;
  int height = 32;
  double fx = 0.0;
  double fy = 0.0;
  double cx = 16.0;
  double cy = 16.0;
  double near = 0.05;
  double far = 1.5;
  // Rays per pixel side; depth is averaged over supersample^2 sub-pixel rays.
  int supersample = 1;

  // Square pixels, principal point at the image centre.
  static CameraModel from_vfov(int width, int height, double vfov_rad, double near, double far,
                               int supersample = 1);
  static CameraModel from_config(const RunConfig& cfg);

  std::size_t pixel_count() const { return std::size_t(width) * std::size_t(height); }
  double normalize(double depth) const { return (depth - near) / (far - near); }
  bool valid() const;
};

// z-depth image in metres, row-major (v * width + u). Misses and hits outside
// [near, far] read as `far`.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<double> depth;

  double at(int u, int v) const { return depth[std::size_t(v) * std::size_t(width) + std::size_t(u)]; }
  std::vector<double> normalized(const CameraModel& cam) const;
  std::vector<float> normalized_f32(const CameraModel& cam) const;

  friend bool operator==(const DepthImage&, const DepthImage&) = default;
};

DepthImage render_depth(const Scene& scene, const Pose& camera_pose, const CameraModel& cam);

// Depth along the optical axis of the first surface hit by the ray through
// continuous pixel coordinate (u, v), or nullopt-like +inf on a miss.
double cast_ray(const Scene& scene, const Pose& camera_pose, const CameraModel& cam, double u,
                double v);

// Optical axis (+z) through `target`; x axis spun by `roll` about that axis.
Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, double roll);

struct CapRange {
  double radius_min = 0.05;
  double radius_max = 0.85;
  double polar_max = EIGEN_PI / 2.0;  // from vertical; pi/2 = full upper hemisphere
};

// Position uniform (by area) on the upper cap at a uniform random radius,
// looking at `target` with uniform random roll.
Pose sample_camera_pose_on_cap(Rng& rng, const CapRange& range, const Eigen::Vector3d& target);

// Shift the cup uniformly within +-range in x and y, draw yaw uniform in [0, 2pi).
Scene perturb_object(const Scene& scene, Rng& rng, double range);

// Continuous pixel coordinates (u right, v down) and depth of a world point.
struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};
Projection project(const Pose& camera_pose, const CameraModel& cam, const Eigen::Vector3d& p);

// Image bounds are closed: 0 <= u <= width, 0 <= v <= height.
bool inside_image(const Projection& p, const CameraModel& cam);

// Cup centre and at least one silhouette sample (rim rings, mid ring, cap
// centres) project inside the closed image bounds with positive depth.
bool object_in_fov(const Scene& scene, const Pose& camera_pose, const CameraModel& cam);

struct DatasetSpec {
  int n_cam = 100;
  int n_obj = 100;
  std::uint64_t seed = 0;
  CapRange cap;
  double object_range = 0.10;
  Scene scene;
  CameraModel camera;
};

struct SampleMeta {
  Pose camera;
  Cup cup;
};

struct Dataset {
  int width = 0;
  int height = 0;
  double near = 0.0;
  double far = 0.0;
  std::vector<float> pixels;  // normalized depth, image-major
  std::vector<SampleMeta> meta;

  std::size_t count() const { return meta.size(); }
  std::size_t pixel_count() const { return std::size_t(width) * std::size_t(height); }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(pixels).subspan(i * pixel_count(), pixel_count());
  }
};

// Sample i uses camera pose (i / n_obj) and object draw (i % n_obj); each draw
// is seeded from (seed, index) so worker count never changes output.
Dataset generate_dataset(const DatasetSpec& spec, unsigned threads = 1);

// Writes manifest.json, samples.bin (little-endian float32), poses.csv.
void write_dataset(const Dataset& data, const DatasetSpec& spec, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

Dataset generate_autoencoder_dataset(const DatasetSpec& spec, const std::filesystem::path& dir,
                                     unsigned threads = 1);

}  // namespace servo::scene
