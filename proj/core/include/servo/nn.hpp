#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "servo/common.hpp"

namespace servo::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
// Vectorized Eigen kernels round differently depending on the start address, so
// every tensor starts on the packet boundary to keep results bit-reproducible.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

// Dense row-major matrix of doubles. Rows are batch samples wherever a tensor
// flows through a network.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2 row(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  Storage& storage() { return data_; }

  MatrixMap map() { return MatrixMap(data_.data(), Eigen::Index(rows_), Eigen::Index(cols_)); }
  ConstMatrixMap map() const {
    return ConstMatrixMap(data_.data(), Eigen::Index(rows_), Eigen::Index(cols_));
  }

  bool all_finite() const;
  bool same_shape(const Tensor2& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  void fill(double v);

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Storage data_;
};

enum class Activation { identity, tanh, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct Layer {
  Tensor2 weight;  // fan_in x fan_out
  Tensor2 bias;    // 1 x fan_out
  Activation activation = Activation::identity;

  friend bool operator==(const Layer&, const Layer&) = default;
};

// Parameter-shaped gradient (also reused for Adam moments).
struct Gradients {
  std::vector<Tensor2> weight;
  std::vector<Tensor2> bias;
  Tensor2 input;  // dL/dx, batch x input size

  void scale(double s);
  void add(const Gradients& other);
  double squared_norm() const;
};

// Fully connected network. `forward` caches activations for `backward`;
// `predict` is the cache-free, thread-safe path.
class MlpNet {
 public:
  MlpNet() = default;
  MlpNet(std::vector<std::size_t> sizes, Activation hidden, Activation output, Rng& rng);
  // Construct from explicit layers (checkpoint load, hand-built test nets).
  explicit MlpNet(std::vector<Layer> layers);

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t input_size() const { return sizes_.empty() ? 0 : sizes_.front(); }
  std::size_t output_size() const { return sizes_.empty() ? 0 : sizes_.back(); }
  std::size_t parameter_count() const;

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  Tensor2 forward(const Tensor2& x);
  Tensor2 predict(const Tensor2& x) const;
  std::vector<double> predict_one(std::span<const double> x) const;

  Gradients backward(const Tensor2& output_grad) const;
  bool has_cache() const { return !cache_.empty(); }
  void clear_cache() { cache_.clear(); }

  Gradients zero_gradients() const;

  // Flat parameter view in declaration order (W0, b0, W1, b1, ...).
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> params);

  bool same_shape(const MlpNet& other) const;
  bool all_finite() const;

  friend bool operator==(const MlpNet& a, const MlpNet& b) { return a.layers_ == b.layers_; }

 private:
  void check_input(const Tensor2& x) const;

  std::vector<Layer> layers_;
  std::vector<std::size_t> sizes_;
  // cache_[0] = input, cache_[i+1] = post-activation output of layer i
  std::vector<Tensor2> cache_;
};

struct AdamState {
  Gradients first;
  Gradients second;
  std::int64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_net(const MlpNet& net, double learning_rate);
};

void adam_step(MlpNet& net, const Gradients& grads, AdamState& opt);

// target <- tau * source + (1 - tau) * target
void soft_update(MlpNet& target, const MlpNet& source, double tau);

// Checkpoint: `<stem>.json` manifest + `<stem>.bin` little-endian float64 payload.
void save_checkpoint(const MlpNet& net, const std::filesystem::path& stem);
MlpNet load_checkpoint(const std::filesystem::path& stem);
void save_adam(const AdamState& opt, const std::filesystem::path& stem);
AdamState load_adam(const std::filesystem::path& stem);

}  // namespace servo::nn
