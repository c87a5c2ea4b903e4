#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. None of these call into the code they check.

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "servo/kinematics.hpp"
#include "servo/nn.hpp"

namespace servo::testing {

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
#ifdef SERVO_TEST_TMP
  auto p = std::filesystem::path(SERVO_TEST_TMP) / name;
#else
  auto p = std::filesystem::temp_directory_path() / ("servo-test-" + name);
#endif
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Elementary homogeneous transforms composed in DH order Rz(theta) Tz(d) Tx(a) Rx(alpha).
inline Eigen::Matrix4d dh_link_oracle(double theta, double d, double a, double alpha) {
  Eigen::Affine3d t = Eigen::Affine3d::Identity();
  t.rotate(Eigen::AngleAxisd(theta, Eigen::Vector3d::UnitZ()));
  t.translate(Eigen::Vector3d(0, 0, d));
  t.translate(Eigen::Vector3d(a, 0, 0));
  t.rotate(Eigen::AngleAxisd(alpha, Eigen::Vector3d::UnitX()));
  return t.matrix();
}

inline Eigen::Matrix4d fk_oracle(const kin::DhChain& chain, const kin::Vector6& q) {
  Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
  for (int i = 0; i < 6; ++i) {
    const auto& j = chain.joints[std::size_t(i)];
    T = T * dh_link_oracle(q[i] + j.theta_offset, j.d, j.a, j.alpha);
  }
  return T;
}

inline Eigen::Vector3d log_so3(const Eigen::Matrix3d& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.axis() * aa.angle();
}

// Central differences of the end-effector pose. Angular columns come from the
// rotation increment R(q + h) R(q - h)^T, expressed in the base frame.
inline kin::Matrix6 jacobian_fd_oracle(const kin::DhChain& chain, const kin::Vector6& q, double h = 1e-6) {
  kin::Matrix6 J;
  for (int i = 0; i < 6; ++i) {
    kin::Vector6 qp = q, qm = q;
    qp[i] += h;
    qm[i] -= h;
    const Eigen::Matrix4d Tp = fk_oracle(chain, qp), Tm = fk_oracle(chain, qm);
    J.block<3, 1>(0, i) = (Tp.block<3, 1>(0, 3) - Tm.block<3, 1>(0, 3)) / (2 * h);
    const Eigen::Matrix3d dR = Tp.topLeftCorner<3, 3>() * Tm.topLeftCorner<3, 3>().transpose();
    J.block<3, 1>(3, i) = log_so3(dR) / (2 * h);
  }
  return J;
}

// Norm-wise relative error, safe at zero.
inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

// Loss sum_ij c_ij * y_ij for a fixed random weighting c. dL/dy = c.
struct LinearProbe {
  nn::Tensor2 x;
  nn::Tensor2 c;
};

inline double probe_loss(const nn::MlpNet& net, const LinearProbe& p) {
  const nn::Tensor2 y = net.predict(p.x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * p.c.data()[i];
  return s;
}

// Central finite-difference gradient over the flat parameter vector.
inline Eigen::VectorXd fd_parameter_gradient(const nn::MlpNet& net, const LinearProbe& p, double h = 1e-6) {
  nn::MlpNet work = net;
  std::vector<double> theta = net.flatten();
  Eigen::VectorXd g(Eigen::Index(theta.size()));
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double keep = theta[k];
    theta[k] = keep + h;
    work.unflatten(theta);
    const double lp = probe_loss(work, p);
    theta[k] = keep - h;
    work.unflatten(theta);
    const double lm = probe_loss(work, p);
    theta[k] = keep;
    g[Eigen::Index(k)] = (lp - lm) / (2 * h);
  }
  return g;
}

inline Eigen::VectorXd fd_input_gradient(const nn::MlpNet& net, const LinearProbe& p, double h = 1e-6) {
  LinearProbe work = p;
  Eigen::VectorXd g(Eigen::Index(p.x.size()));
  for (std::size_t k = 0; k < p.x.size(); ++k) {
    const double keep = work.x.data()[k];
    work.x.storage()[k] = keep + h;
    const double lp = probe_loss(net, work);
    work.x.storage()[k] = keep - h;
    const double lm = probe_loss(net, work);
    work.x.storage()[k] = keep;
    g[Eigen::Index(k)] = (lp - lm) / (2 * h);
  }
  return g;
}

inline Eigen::VectorXd flat_gradient(const nn::Gradients& g) {
  std::vector<double> v;
  for (std::size_t l = 0; l < g.weight.size(); ++l) {
    v.insert(v.end(), g.weight[l].data().begin(), g.weight[l].data().end());
    v.insert(v.end(), g.bias[l].data().begin(), g.bias[l].data().end());
  }
  return Eigen::Map<Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

inline Eigen::VectorXd to_vector(std::span<const double> s) {
  return Eigen::Map<const Eigen::VectorXd>(s.data(), Eigen::Index(s.size()));
}

// Random MLP with at most ~1k parameters and a probe batch.
struct AutodiffCase {
  nn::MlpNet net;
  LinearProbe probe;
};

inline AutodiffCase random_autodiff_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> width(2, 12), depth(1, 3), batch(1, 4), act(0, 2);
  std::vector<std::size_t> sizes{std::size_t(width(rng))};
  const int layers = depth(rng);
  for (int i = 0; i < layers; ++i) sizes.push_back(std::size_t(width(rng)));
  sizes.push_back(std::size_t(width(rng)) / 2 + 1);
  const auto hidden = nn::Activation(act(rng));
  const auto output = nn::Activation(act(rng));
  nn::MlpNet net(sizes, hidden, output, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t b = std::size_t(batch(rng));
  LinearProbe p{nn::Tensor2(b, sizes.front()), nn::Tensor2(b, sizes.back())};
  for (auto& v : p.x.storage()) v = n(rng);
  for (auto& v : p.c.storage()) v = n(rng);
  return {std::move(net), std::move(p)};
}

}  // namespace servo::testing
