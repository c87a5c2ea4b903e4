#include "servo/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "servo/config.hpp"

namespace servo::scene {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

bool Table::contains(const Eigen::Vector2d& xy, double margin) const {
  return std::abs(xy.x() - center.x()) <= half_extent.x() + margin &&
         std::abs(xy.y() - center.y()) <= half_extent.y() + margin;
}

Scene Scene::from_config(const RunConfig& cfg) {
  Scene s;
  s.table.height = cfg.get_double("scene.table_height");
  const auto c = cfg.get_doubles("scene.table_center");
  const auto e = cfg.get_doubles("scene.table_half_extent");
  const auto xy = cfg.get_doubles("scene.cup_xy");
  if (c.size() != 2 || e.size() != 2 || xy.size() != 2)
    throw ConfigError("scene.table_center, scene.table_half_extent, scene.cup_xy need 2 values");
  s.table.center = {c[0], c[1]};
  s.table.half_extent = {e[0], e[1]};
  s.cup.xy = {xy[0], xy[1]};
  s.cup.radius = cfg.get_double("scene.cup_radius");
  s.cup.height = cfg.get_double("scene.cup_height");
  const auto hd = cfg.get_doubles("scene.cup_handle");
  if (hd.size() != 3 || hd[0] < 0 || hd[1] < 0 || hd[2] < 0 || hd[2] > s.cup.height)
    throw ConfigError("scene.cup_handle needs reach,width,height >= 0 with height <= cup height");
  s.cup.handle = {hd[0], hd[1], hd[2]};
  if (!s.valid()) throw ConfigError("scene: cup must stand inside the table extent");
  return s;
}

Eigen::Vector3d Scene::cup_center() const {
  return {cup.xy.x(), cup.xy.y(), table.height + 0.5 * cup.height};
}

bool Scene::valid() const {
  return cup.radius > 0.0 && cup.height > 0.0 && table.half_extent.minCoeff() > 0.0 &&
         table.contains(cup.xy, -cup.radius);
}

CameraModel CameraModel::from_vfov(int width, int height, double vfov_rad, double near,
                                   double far, int supersample) {
  CameraModel c;
  c.width = width;
  c.height = height;
  c.fy = 0.5 * height / std::tan(0.5 * vfov_rad);
  c.fx = c.fy;
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  c.near = near;
  c.far = far;
  c.supersample = supersample;
  return c;
}

CameraModel CameraModel::from_config(const RunConfig& cfg) {
  const auto w = cfg.get_int("camera.width");
  const auto h = cfg.get_int("camera.height");
  if (w < 2 || h < 2 || w > 64 || h > 64)
    throw ConfigError("camera.width/height must lie in [2, 64]");
  CameraModel c = from_vfov(int(w), int(h), cfg.get_double("camera.vfov_deg") * EIGEN_PI / 180.0,
                            cfg.get_double("camera.near"), cfg.get_double("camera.far"),
                            int(cfg.get_int("camera.supersample")));
  if (!c.valid()) throw ConfigError("camera: need fx, fy > 0, near < far, supersample >= 1");
  return c;
}

bool CameraModel::valid() const {
  return width > 0 && height > 0 && fx > 0.0 && fy > 0.0 && near > 0.0 && near < far &&
         supersample >= 1;
}

std::vector<double> DepthImage::normalized(const CameraModel& cam) const {
  std::vector<double> out(depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) out[i] = cam.normalize(depth[i]);
  return out;
}

std::vector<float> DepthImage::normalized_f32(const CameraModel& cam) const {
  std::vector<float> out(depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) out[i] = static_cast<float>(cam.normalize(depth[i]));
  return out;
}

namespace {

// Smallest positive ray parameter hitting the scene. With a camera-frame ray
// direction of unit z component, the parameter is the optical-axis depth.
double intersect(const Scene& scene, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  double best = kInf;
  const double h = scene.table.height;
  const double top = h + scene.cup.height;
  const double r = scene.cup.radius;
  const double cx = scene.cup.xy.x();
  const double cy = scene.cup.xy.y();

  if (d.z() != 0.0) {
    const double s = (h - o.z()) / d.z();
    if (s > 0.0) {
      const Eigen::Vector2d p(o.x() + s * d.x(), o.y() + s * d.y());
      if (scene.table.contains(p)) best = s;
    }
    for (double zc : {top, h}) {
      const double sc = (zc - o.z()) / d.z();
      if (sc > 0.0 && sc < best) {
        const double px = o.x() + sc * d.x() - cx;
        const double py = o.y() + sc * d.y() - cy;
        if (px * px + py * py <= r * r) best = sc;
      }
    }
  }

  const double ox = o.x() - cx;
  const double oy = o.y() - cy;
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 0.0) {
    const double b = 2.0 * (ox * d.x() + oy * d.y());
    const double c = ox * ox + oy * oy - r * r;
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (double s : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
        if (s > 0.0 && s < best) {
          const double z = o.z() + s * d.z();
          if (z >= h && z <= top) {
            best = s;
            break;
          }
        }
      }
    }
  }

  const Eigen::Vector3d& hd = scene.cup.handle;
  if (hd.x() > 0.0 && hd.y() > 0.0 && hd.z() > 0.0) {
    // slab test in the cup frame; the box starts slightly inside the wall
    const double c = std::cos(scene.cup.yaw), sn = std::sin(scene.cup.yaw);
    const Eigen::Vector3d ol(c * ox + sn * oy, -sn * ox + c * oy, o.z());
    const Eigen::Vector3d dl(c * d.x() + sn * d.y(), -sn * d.x() + c * d.y(), d.z());
    const double zmid = h + 0.5 * scene.cup.height;
    const Eigen::Vector3d lo(0.75 * r, -0.5 * hd.y(), zmid - 0.5 * hd.z());
    const Eigen::Vector3d hi(r + hd.x(), 0.5 * hd.y(), zmid + 0.5 * hd.z());
    double t0 = 0.0, t1 = best;
    bool miss = false;
    for (int k = 0; k < 3 && !miss; ++k) {
      if (dl[k] == 0.0) {
        miss = ol[k] < lo[k] || ol[k] > hi[k];
        continue;
      }
      double ta = (lo[k] - ol[k]) / dl[k], tb = (hi[k] - ol[k]) / dl[k];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      miss = t0 > t1;
    }
    if (!miss && t0 > 0.0 && t0 < best) best = t0;
  }
  return best;
}

}  // namespace

double cast_ray(const Scene& scene, const Pose& camera_pose, const CameraModel& cam, double u,
                double v) {
  const Eigen::Vector3d dc((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  return intersect(scene, camera_pose.translation, camera_pose.rotation * dc);
}

DepthImage render_depth(const Scene& scene, const Pose& camera_pose, const CameraModel& cam) {
  DepthImage img;
  img.width = cam.width;
  img.height = cam.height;
  img.depth.assign(cam.pixel_count(), cam.far);
  const int ss = std::max(1, cam.supersample);
  const double inv = 1.0 / (double(ss) * double(ss));
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      double acc = 0.0;
      for (int j = 0; j < ss; ++j) {
        for (int i = 0; i < ss; ++i) {
          const double su = u + (i + 0.5) / ss;
          const double sv = v + (j + 0.5) / ss;
          double z = cast_ray(scene, camera_pose, cam, su, sv);
          if (!(z >= cam.near && z <= cam.far)) z = cam.far;
          acc += z;
        }
      }
      img.depth[std::size_t(v) * std::size_t(cam.width) + std::size_t(u)] =
          ss == 1 ? acc : std::clamp(acc * inv, cam.near, cam.far);
    }
  }
  return img;
}

Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, double roll) {
  const Eigen::Vector3d z = (target - eye).normalized();
  // image "down" follows world -z where that is defined, world x otherwise
  Eigen::Vector3d helper = -Eigen::Vector3d::UnitZ();
  if (std::abs(z.z()) > 0.999) helper = Eigen::Vector3d::UnitX();
  const Eigen::Vector3d y0 = (helper - helper.dot(z) * z).normalized();
  const Eigen::Vector3d x0 = y0.cross(z);
  const Eigen::Vector3d x = std::cos(roll) * x0 + std::sin(roll) * y0;
  const Eigen::Vector3d y = z.cross(x);
  Pose p;
  p.rotation.col(0) = x;
  p.rotation.col(1) = y;
  p.rotation.col(2) = z;
  p.translation = eye;
  return p;
}

Pose sample_camera_pose_on_cap(Rng& rng, const CapRange& range, const Eigen::Vector3d& target) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double radius = range.radius_min + (range.radius_max - range.radius_min) * unit(rng);
  const double cos_min = std::cos(range.polar_max);
  const double cos_polar = cos_min + (1.0 - cos_min) * unit(rng);
  const double sin_polar = std::sqrt(std::max(0.0, 1.0 - cos_polar * cos_polar));
  const double azimuth = 2.0 * EIGEN_PI * unit(rng);
  const double roll = 2.0 * EIGEN_PI * unit(rng);
  const Eigen::Vector3d dir(sin_polar * std::cos(azimuth), sin_polar * std::sin(azimuth), cos_polar);
  return look_at(target + radius * dir, target, roll);
}

Scene perturb_object(const Scene& scene, Rng& rng, double range) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Scene out = scene;
  const double dx = range * (2.0 * unit(rng) - 1.0);
  const double dy = range * (2.0 * unit(rng) - 1.0);
  out.cup.yaw = 2.0 * EIGEN_PI * unit(rng);
  out.cup.xy += Eigen::Vector2d(dx, dy);
  if (!out.valid()) {
    const Eigen::Vector2d lo = scene.table.center - scene.table.half_extent +
                               Eigen::Vector2d::Constant(scene.cup.radius);
    const Eigen::Vector2d hi = scene.table.center + scene.table.half_extent -
                               Eigen::Vector2d::Constant(scene.cup.radius);
    out.cup.xy = out.cup.xy.cwiseMax(lo).cwiseMin(hi);
  }
  return out;
}

Projection project(const Pose& camera_pose, const CameraModel& cam, const Eigen::Vector3d& p) {
  const Eigen::Vector3d pc = camera_pose.rotation.transpose() * (p - camera_pose.translation);
  Projection out;
  out.depth = pc.z();
  out.u = cam.fx * pc.x() / pc.z() + cam.cx;
  out.v = cam.fy * pc.y() / pc.z() + cam.cy;
  return out;
}

bool inside_image(const Projection& p, const CameraModel& cam) {
  return p.depth > 0.0 && p.u >= 0.0 && p.u <= cam.width && p.v >= 0.0 && p.v <= cam.height;
}

bool object_in_fov(const Scene& scene, const Pose& camera_pose, const CameraModel& cam) {
  const Eigen::Vector3d center = scene.cup_center();
  if (!inside_image(project(camera_pose, cam, center), cam)) return false;
  const double h = scene.table.height;
  const double H = scene.cup.height;
  const double r = scene.cup.radius;
  const Eigen::Vector3d base(scene.cup.xy.x(), scene.cup.xy.y(), h);
  if (inside_image(project(camera_pose, cam, base), cam)) return true;
  if (inside_image(project(camera_pose, cam, base + Eigen::Vector3d(0, 0, H)), cam)) return true;
  constexpr int kRing = 16;
  for (double z : {0.0, 0.5 * H, H}) {
    for (int k = 0; k < kRing; ++k) {
      const double a = scene.cup.yaw + 2.0 * EIGEN_PI * k / kRing;
      const Eigen::Vector3d p = base + Eigen::Vector3d(r * std::cos(a), r * std::sin(a), z);
      if (inside_image(project(camera_pose, cam, p), cam)) return true;
    }
  }
  return false;
}

Dataset generate_dataset(const DatasetSpec& spec, unsigned threads) {
  if (spec.n_cam < 1 || spec.n_obj < 1) throw Error("dataset needs n_cam * n_obj >= 1");
  const std::size_t count = std::size_t(spec.n_cam) * std::size_t(spec.n_obj);
  Dataset data;
  data.width = spec.camera.width;
  data.height = spec.camera.height;
  data.near = spec.camera.near;
  data.far = spec.camera.far;
  data.pixels.assign(count * spec.camera.pixel_count(), 0.0f);
  data.meta.resize(count);

  std::vector<Pose> cameras(std::size_t(spec.n_cam));
  const Eigen::Vector3d target = spec.scene.cup_center();
  for (int c = 0; c < spec.n_cam; ++c) {
    Rng rng = make_rng(spec.seed, "dataset-camera", std::uint64_t(c));
    cameras[std::size_t(c)] = sample_camera_pose_on_cap(rng, spec.cap, target);
  }

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng = make_rng(spec.seed, "dataset-object", i);
      const Scene s = perturb_object(spec.scene, rng, spec.object_range);
      const Pose& cam_pose = cameras[i / std::size_t(spec.n_obj)];
      const auto img = render_depth(s, cam_pose, spec.camera).normalized_f32(spec.camera);
      std::copy(img.begin(), img.end(), data.pixels.begin() + std::ptrdiff_t(i * img.size()));
      data.meta[i] = {cam_pose, s.cup};
    }
  };

  threads = std::max(1u, std::min<unsigned>(threads, unsigned(count)));
  if (threads == 1) {
    work(0, count);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (count + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(count, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return data;
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_dataset(const Dataset& data, const DatasetSpec& spec, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  nlohmann::json m = {{"format", "servo-depth-dataset"},
                      {"version", 1},
                      {"count", data.count()},
                      {"n_cam", spec.n_cam},
                      {"n_obj", spec.n_obj},
                      {"width", data.width},
                      {"height", data.height},
                      {"dtype", "float32-le"},
                      {"layout", "image-major, row-major pixels"},
                      {"normalization", {{"near", data.near}, {"far", data.far},
                                         {"formula", "(depth - near) / (far - near)"}}},
                      {"seed", spec.seed},
                      {"radius_range", {spec.cap.radius_min, spec.cap.radius_max}},
                      {"polar_max", spec.cap.polar_max},
                      {"object_range", spec.object_range}};
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << m.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "samples.bin", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "samples.bin").string());
    out.write(reinterpret_cast<const char*>(data.pixels.data()),
              std::streamsize(data.pixels.size() * sizeof(float)));
    if (!out) throw IoError("short write to " + (dir / "samples.bin").string());
  }
  {
    std::ofstream out(dir / "poses.csv");
    if (!out) throw IoError("cannot write " + (dir / "poses.csv").string());
    out << "index,cam_x,cam_y,cam_z,cam_qw,cam_qx,cam_qy,cam_qz,cup_x,cup_y,cup_yaw\n";
    for (std::size_t i = 0; i < data.count(); ++i) {
      const auto& s = data.meta[i];
      const auto q = s.camera.quaternion();
      out << i << ',' << fmt17(s.camera.translation.x()) << ',' << fmt17(s.camera.translation.y())
          << ',' << fmt17(s.camera.translation.z()) << ',' << fmt17(q.w()) << ',' << fmt17(q.x())
          << ',' << fmt17(q.y()) << ',' << fmt17(q.z()) << ',' << fmt17(s.cup.xy.x()) << ','
          << fmt17(s.cup.xy.y()) << ',' << fmt17(s.cup.yaw) << '\n';
    }
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream min(dir / "manifest.json");
  if (!min) throw MissingArtifactError("dataset manifest not found: " + (dir / "manifest.json").string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(min);
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "manifest.json").string() + ": " + e.what());
  }
  Dataset data;
  data.width = m.at("width").get<int>();
  data.height = m.at("height").get<int>();
  data.near = m.at("normalization").at("near").get<double>();
  data.far = m.at("normalization").at("far").get<double>();
  const auto count = m.at("count").get<std::size_t>();

  std::ifstream bin(dir / "samples.bin", std::ios::binary | std::ios::ate);
  if (!bin) throw MissingArtifactError("dataset payload not found: " + (dir / "samples.bin").string());
  const auto bytes = std::size_t(bin.tellg());
  if (bytes != count * data.pixel_count() * sizeof(float))
    throw IoError((dir / "samples.bin").string() + ": size does not match manifest count");
  bin.seekg(0);
  data.pixels.resize(count * data.pixel_count());
  bin.read(reinterpret_cast<char*>(data.pixels.data()), std::streamsize(bytes));

  std::ifstream csv(dir / "poses.csv");
  if (!csv) throw MissingArtifactError("dataset poses not found: " + (dir / "poses.csv").string());
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 11) throw IoError((dir / "poses.csv").string() + ": malformed row");
    SampleMeta s;
    s.camera = Pose::from_quaternion({v[1], v[2], v[3]}, Eigen::Quaterniond(v[4], v[5], v[6], v[7]));
    s.cup.xy = {v[8], v[9]};
    s.cup.yaw = v[10];
    data.meta.push_back(s);
  }
  if (data.meta.size() != count) throw IoError((dir / "poses.csv").string() + ": row count mismatch");
  return data;
}

Dataset generate_autoencoder_dataset(const DatasetSpec& spec, const std::filesystem::path& dir,
                                     unsigned threads) {
  Dataset data = generate_dataset(spec, threads);
  write_dataset(data, spec, dir);
  return data;
}

}  // namespace servo::scene
