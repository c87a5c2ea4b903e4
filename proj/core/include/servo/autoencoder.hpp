#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "servo/nn.hpp"
#include "servo/scene.hpp"

namespace servo {
class RunConfig;
}

namespace servo::ae {

using LatentCode = std::vector<double>;

struct AeConfig {
  std::size_t latent_dim = 16;
  std::vector<std::size_t> hidden{256, 64};
  int epochs = 200;
  std::size_t batch = 32;
  double learning_rate = 1e-3;
  int patience = 20;         // early stop when val-mse improves by < min_delta over this many epochs
  double min_delta = 1e-5;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  bool wall_clock = true;

  static AeConfig from_config(const RunConfig& cfg);
};

// Encoder pixels -> hidden... -> L (tanh hidden, identity out) and the mirrored
// decoder. Images enter as normalized depth.
class AeModel {
 public:
  AeModel() = default;
  AeModel(int width, int height, double near, double far, const AeConfig& cfg, Rng& rng);
  AeModel(nn::MlpNet encoder, nn::MlpNet decoder, int width, int height, double near, double far);

  std::size_t latent_dim() const { return encoder_.output_size(); }
  std::size_t pixel_count() const { return std::size_t(width_) * std::size_t(height_); }
  int width() const { return width_; }
  int height() const { return height_; }
  double near() const { return near_; }
  double far() const { return far_; }

  LatentCode encode(const scene::DepthImage& image) const;
  LatentCode encode_normalized(std::span<const double> pixels) const;

  struct Reconstruction {
    scene::DepthImage image;
    double mse = 0.0;  // mean squared error in normalized pixels
  };
  Reconstruction reconstruct(const scene::DepthImage& image) const;
  // Normalized-pixel reconstruction of a batch (rows = images).
  nn::Tensor2 reconstruct_normalized(const nn::Tensor2& batch) const;

  nn::MlpNet& encoder() { return encoder_; }
  nn::MlpNet& decoder() { return decoder_; }
  const nn::MlpNet& encoder() const { return encoder_; }
  const nn::MlpNet& decoder() const { return decoder_; }

  void save(const std::filesystem::path& dir) const;
  static AeModel load(const std::filesystem::path& dir);

 private:
  void check_image(int width, int height) const;

  nn::MlpNet encoder_;
  nn::MlpNet decoder_;
  int width_ = 0;
  int height_ = 0;
  double near_ = 0.0;
  double far_ = 1.0;
};

// Mean over batch and pixels of the squared difference.
double reconstruction_loss(const nn::Tensor2& target, const nn::Tensor2& output);

struct CurvePoint {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double wall_seconds = 0.0;
};

struct AeTrainResult {
  AeModel model;
  std::vector<CurvePoint> curve;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
};

// Deterministic 90/10 shuffle split, minibatch Adam on the reconstruction loss.
AeTrainResult train_autoencoder(const scene::Dataset& data, const AeConfig& cfg);

// Loads the dataset, trains, writes the checkpoint under out_dir/ae and
// out_dir/ae_curve.csv.
AeTrainResult train_autoencoder(const std::filesystem::path& dataset_dir, const AeConfig& cfg,
                                const std::filesystem::path& out_dir);

void write_curve_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path);

// Mean val-mse over images of a dataset subset.
double evaluate_mse(const AeModel& model, const scene::Dataset& data,
                    std::span<const std::size_t> indices);

}  // namespace servo::ae
