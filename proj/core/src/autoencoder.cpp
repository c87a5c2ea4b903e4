#include "servo/autoencoder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "servo/config.hpp"

namespace servo::ae {

AeConfig AeConfig::from_config(const RunConfig& cfg) {
  AeConfig c;
  c.latent_dim = std::size_t(cfg.get_int("ae.latent_dim"));
  c.hidden = cfg.get_sizes("ae.hidden");
  c.epochs = int(cfg.get_int("ae.epochs"));
  c.batch = std::size_t(cfg.get_int("ae.batch"));
  c.learning_rate = cfg.get_double("ae.lr");
  c.patience = int(cfg.get_int("ae.patience"));
  c.min_delta = cfg.get_double("ae.min_delta");
  c.val_fraction = cfg.get_double("ae.val_fraction");
  c.seed = cfg.get_uint("seed");
  c.wall_clock = cfg.get_bool("log.wall_clock");
  if (c.latent_dim == 0 || c.batch == 0) throw ConfigError("ae.latent_dim and ae.batch must be positive");
  if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) throw ConfigError("ae.val_fraction must lie in (0, 1)");
  return c;
}

AeModel::AeModel(int width, int height, double near, double far, const AeConfig& cfg, Rng& rng)
    : width_(width), height_(height), near_(near), far_(far) {
  const std::size_t pixels = pixel_count();
  if (cfg.latent_dim >= pixels) throw DimensionError("latent dimension must be below the pixel count");
  std::vector<std::size_t> enc{pixels};
  enc.insert(enc.end(), cfg.hidden.begin(), cfg.hidden.end());
  enc.push_back(cfg.latent_dim);
  std::vector<std::size_t> dec(enc.rbegin(), enc.rend());
  encoder_ = nn::MlpNet(enc, nn::Activation::tanh, nn::Activation::identity, rng);
  decoder_ = nn::MlpNet(dec, nn::Activation::tanh, nn::Activation::identity, rng);
}

AeModel::AeModel(nn::MlpNet encoder, nn::MlpNet decoder, int width, int height, double near,
                 double far)
    : encoder_(std::move(encoder)),
      decoder_(std::move(decoder)),
      width_(width),
      height_(height),
      near_(near),
      far_(far) {
  if (encoder_.input_size() != pixel_count() || decoder_.output_size() != pixel_count())
    throw DimensionError("autoencoder input/output width must equal the pixel count");
  if (encoder_.output_size() != decoder_.input_size())
    throw DimensionError("encoder output and decoder input widths differ");
  if (latent_dim() >= pixel_count()) throw DimensionError("latent dimension must be below the pixel count");
}

void AeModel::check_image(int width, int height) const {
  if (width != width_ || height != height_)
    throw DimensionError("image is " + std::to_string(width) + "x" + std::to_string(height) +
                         ", model expects " + std::to_string(width_) + "x" + std::to_string(height_));
}

LatentCode AeModel::encode(const scene::DepthImage& image) const {
  check_image(image.width, image.height);
  std::vector<double> px(image.depth.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = (image.depth[i] - near_) / (far_ - near_);
  return encoder_.predict_one(px);
}

LatentCode AeModel::encode_normalized(std::span<const double> pixels) const {
  if (pixels.size() != pixel_count()) throw DimensionError("pixel count does not match model");
  return encoder_.predict_one(pixels);
}

nn::Tensor2 AeModel::reconstruct_normalized(const nn::Tensor2& batch) const {
  return decoder_.predict(encoder_.predict(batch));
}

AeModel::Reconstruction AeModel::reconstruct(const scene::DepthImage& image) const {
  check_image(image.width, image.height);
  nn::Tensor2 x(1, pixel_count());
  for (std::size_t i = 0; i < pixel_count(); ++i) x(0, i) = (image.depth[i] - near_) / (far_ - near_);
  const nn::Tensor2 y = reconstruct_normalized(x);
  Reconstruction r;
  r.mse = reconstruction_loss(x, y);
  r.image.width = width_;
  r.image.height = height_;
  r.image.depth.resize(pixel_count());
  for (std::size_t i = 0; i < pixel_count(); ++i) r.image.depth[i] = near_ + y(0, i) * (far_ - near_);
  return r;
}

void AeModel::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nn::save_checkpoint(encoder_, dir / "encoder");
  nn::save_checkpoint(decoder_, dir / "decoder");
  nlohmann::json m = {{"format", "servo-autoencoder"},
                      {"version", 1},
                      {"width", width_},
                      {"height", height_},
                      {"latent_dim", latent_dim()},
                      {"normalization", {{"near", near_}, {"far", far_}}},
                      {"encoder", "encoder"},
                      {"decoder", "decoder"}};
  std::ofstream out(dir / "autoencoder.json");
  if (!out) throw IoError("cannot write " + (dir / "autoencoder.json").string());
  out << m.dump(2) << '\n';
}

AeModel AeModel::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "autoencoder.json");
  if (!in) throw MissingArtifactError("autoencoder checkpoint not found: " + (dir / "autoencoder.json").string());
  const auto m = nlohmann::json::parse(in);
  return AeModel(nn::load_checkpoint(dir / "encoder"), nn::load_checkpoint(dir / "decoder"),
                 m.at("width").get<int>(), m.at("height").get<int>(),
                 m.at("normalization").at("near").get<double>(),
                 m.at("normalization").at("far").get<double>());
}

double reconstruction_loss(const nn::Tensor2& target, const nn::Tensor2& output) {
  if (!target.same_shape(output)) throw DimensionError("reconstruction_loss: shape mismatch");
  if (target.size() == 0) return 0.0;
  return (output.map() - target.map()).squaredNorm() / double(target.size());
}

namespace {

nn::Tensor2 gather(const scene::Dataset& data, std::span<const std::size_t> idx) {
  nn::Tensor2 batch(idx.size(), data.pixel_count());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto img = data.image(idx[r]);
    for (std::size_t c = 0; c < img.size(); ++c) batch(r, c) = img[c];
  }
  return batch;
}

}  // namespace

double evaluate_mse(const AeModel& model, const scene::Dataset& data,
                    std::span<const std::size_t> indices) {
  if (indices.empty()) return 0.0;
  double total = 0.0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t b = 0; b < indices.size(); b += kChunk) {
    const auto idx = indices.subspan(b, std::min(kChunk, indices.size() - b));
    const nn::Tensor2 x = gather(data, idx);
    total += reconstruction_loss(x, model.reconstruct_normalized(x)) * double(idx.size());
  }
  return total / double(indices.size());
}

AeTrainResult train_autoencoder(const scene::Dataset& data, const AeConfig& cfg) {
  if (data.count() < 100) throw Error("autoencoder training needs at least 100 samples");
  Rng rng = make_rng(cfg.seed, "ae");
  AeTrainResult result;
  result.model = AeModel(data.width, data.height, data.near, data.far, cfg, rng);
  AeModel& model = result.model;

  std::vector<std::size_t> order(data.count());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = make_rng(cfg.seed, "ae-split");
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_val = std::max<std::size_t>(1, std::size_t(std::llround(cfg.val_fraction * double(order.size()))));
  result.val_indices.assign(order.begin(), order.begin() + std::ptrdiff_t(n_val));
  result.train_indices.assign(order.begin() + std::ptrdiff_t(n_val), order.end());

  auto enc_opt = nn::AdamState::for_net(model.encoder(), cfg.learning_rate);
  auto dec_opt = nn::AdamState::for_net(model.decoder(), cfg.learning_rate);
  const auto t0 = std::chrono::steady_clock::now();

  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  std::vector<std::size_t> train = result.train_indices;
  Rng batch_rng = make_rng(cfg.seed, "ae-batches");

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), batch_rng);
    double train_sum = 0.0;
    for (std::size_t b = 0; b < train.size(); b += cfg.batch) {
      const auto idx = std::span<const std::size_t>(train).subspan(b, std::min(cfg.batch, train.size() - b));
      const nn::Tensor2 x = gather(data, idx);
      const nn::Tensor2 z = model.encoder().forward(x);
      const nn::Tensor2 y = model.decoder().forward(z);
      const double loss = reconstruction_loss(x, y);
      if (!std::isfinite(loss))
        throw NumericalError("autoencoder loss became non-finite at epoch " + std::to_string(epoch));
      train_sum += loss * double(idx.size());

      nn::Tensor2 dy(y.rows(), y.cols());
      dy.map() = (2.0 / double(y.size())) * (y.map() - x.map());
      const nn::Gradients gd = model.decoder().backward(dy);
      const nn::Gradients ge = model.encoder().backward(gd.input);
      nn::adam_step(model.decoder(), gd, dec_opt);
      nn::adam_step(model.encoder(), ge, enc_opt);
    }
    CurvePoint p;
    p.epoch = epoch;
    p.train_mse = train_sum / double(train.size());
    p.val_mse = evaluate_mse(model, data, result.val_indices);
    if (cfg.wall_clock)
      p.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(p.val_mse)) throw NumericalError("autoencoder validation loss became non-finite");
    result.curve.push_back(p);

    if (p.val_mse < best_val - cfg.min_delta) {
      best_val = p.val_mse;
      best_epoch = epoch;
    } else if (epoch - best_epoch >= cfg.patience) {
      break;
    }
  }
  model.encoder().clear_cache();
  model.decoder().clear_cache();
  return result;
}

void write_curve_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_mse,val_mse,wall_seconds\n";
  char buf[160];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.3f\n", p.epoch, p.train_mse, p.val_mse, p.wall_seconds);
    out << buf;
  }
}

AeTrainResult train_autoencoder(const std::filesystem::path& dataset_dir, const AeConfig& cfg,
                                const std::filesystem::path& out_dir) {
  const scene::Dataset data = scene::read_dataset(dataset_dir);
  AeTrainResult result = train_autoencoder(data, cfg);
  result.model.save(out_dir / "ae");
  write_curve_csv(result.curve, out_dir / "ae_curve.csv");
  return result;
}

}  // namespace servo::ae
