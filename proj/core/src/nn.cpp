#include "servo/nn.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include "json.hpp"

namespace servo::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as raw little-endian doubles");

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(data.begin(), data.end()) {
  if (data_.size() != rows_ * cols_)
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows_) + "x" + std::to_string(cols_));
}

Tensor2 Tensor2::row(std::span<const double> values) {
  return Tensor2(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

bool Tensor2::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor2::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw Error("unknown activation '" + s + "'");
}

void Gradients::scale(double s) {
  for (auto& w : weight) w.map() *= s;
  for (auto& b : bias) b.map() *= s;
  input.map() *= s;
}

void Gradients::add(const Gradients& other) {
  if (other.weight.size() != weight.size()) throw DimensionError("gradient layer count mismatch");
  for (std::size_t i = 0; i < weight.size(); ++i) {
    weight[i].map() += other.weight[i].map();
    bias[i].map() += other.bias[i].map();
  }
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& w : weight) s += w.map().squaredNorm();
  for (const auto& b : bias) s += b.map().squaredNorm();
  return s;
}

MlpNet::MlpNet(std::vector<std::size_t> sizes, Activation hidden, Activation output, Rng& rng)
    : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw DimensionError("an MLP needs at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    const std::size_t fan_in = sizes_[i];
    const std::size_t fan_out = sizes_[i + 1];
    if (fan_in == 0 || fan_out == 0) throw DimensionError("zero-width layer");
    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual dense-layer default.
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer layer;
    layer.weight = Tensor2(fan_in, fan_out);
    layer.bias = Tensor2(1, fan_out);
    for (double& w : layer.weight.data()) w = dist(rng);
    for (double& b : layer.bias.data()) b = dist(rng);
    layer.activation = (i + 2 == sizes_.size()) ? output : hidden;
    layers_.push_back(std::move(layer));
  }
}

MlpNet::MlpNet(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw DimensionError("an MLP needs at least one layer");
  sizes_.push_back(layers_.front().weight.rows());
  for (const auto& l : layers_) {
    if (l.weight.rows() != sizes_.back())
      throw DimensionError("layer fan-in " + std::to_string(l.weight.rows()) +
                           " does not match previous width " + std::to_string(sizes_.back()));
    if (l.bias.rows() != 1 || l.bias.cols() != l.weight.cols())
      throw DimensionError("bias shape does not match layer width");
    sizes_.push_back(l.weight.cols());
  }
}

std::size_t MlpNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

void MlpNet::check_input(const Tensor2& x) const {
  if (layers_.empty()) throw DimensionError("forward on an empty network");
  if (x.cols() != input_size())
    throw DimensionError("network input has " + std::to_string(x.cols()) + " columns, expected " +
                         std::to_string(input_size()));
}

namespace {

void apply_activation(Activation a, MatrixMap m) {
  switch (a) {
    case Activation::identity: break;
    case Activation::tanh: m = m.array().tanh(); break;
    case Activation::relu: m = m.array().max(0.0); break;
  }
}

Tensor2 affine(const Tensor2& x, const Layer& l) {
  Tensor2 out(x.rows(), l.weight.cols());
  auto o = out.map();
  o.noalias() = x.map() * l.weight.map();
  o.rowwise() += l.bias.map().row(0);
  apply_activation(l.activation, o);
  return out;
}

}  // namespace

Tensor2 MlpNet::forward(const Tensor2& x) {
  check_input(x);
  cache_.clear();
  cache_.reserve(layers_.size() + 1);
  cache_.push_back(x);
  for (const auto& l : layers_) cache_.push_back(affine(cache_.back(), l));
  return cache_.back();
}

Tensor2 MlpNet::predict(const Tensor2& x) const {
  check_input(x);
  Tensor2 h = x;
  for (const auto& l : layers_) h = affine(h, l);
  return h;
}

std::vector<double> MlpNet::predict_one(std::span<const double> x) const {
  Tensor2 out = predict(Tensor2::row(x));
  return std::vector<double>(out.data().begin(), out.data().end());
}

Gradients MlpNet::backward(const Tensor2& output_grad) const {
  if (cache_.empty()) throw Error("backward called without a cached forward pass");
  const Tensor2& out = cache_.back();
  if (!output_grad.same_shape(out))
    throw DimensionError("output gradient shape does not match cached forward output");

  Gradients g;
  g.weight.resize(layers_.size());
  g.bias.resize(layers_.size());

  RowMatrix delta = output_grad.map();
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Layer& l = layers_[i];
    const auto y = cache_[i + 1].map();
    switch (l.activation) {
      case Activation::identity: break;
      case Activation::tanh: delta.array() *= (1.0 - y.array().square()); break;
      case Activation::relu: delta.array() *= (y.array() > 0.0).cast<double>(); break;
    }
    const auto x = cache_[i].map();
    g.weight[i] = Tensor2(l.weight.rows(), l.weight.cols());
    g.weight[i].map().noalias() = x.transpose() * delta;
    g.bias[i] = Tensor2(1, l.bias.cols());
    g.bias[i].map() = delta.colwise().sum();
    RowMatrix prev = delta * l.weight.map().transpose();
    delta = std::move(prev);
  }
  g.input = Tensor2(cache_.front().rows(), cache_.front().cols());
  g.input.map() = delta;
  return g;
}

Gradients MlpNet::zero_gradients() const {
  Gradients g;
  for (const auto& l : layers_) {
    g.weight.emplace_back(l.weight.rows(), l.weight.cols());
    g.bias.emplace_back(1, l.bias.cols());
  }
  return g;
}

std::vector<double> MlpNet::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    out.insert(out.end(), l.bias.data().begin(), l.bias.data().end());
  }
  return out;
}

void MlpNet::unflatten(std::span<const double> params) {
  if (params.size() != parameter_count())
    throw DimensionError("parameter vector length does not match network");
  std::size_t k = 0;
  for (auto& l : layers_) {
    for (double& w : l.weight.data()) w = params[k++];
    for (double& b : l.bias.data()) b = params[k++];
  }
}

bool MlpNet::same_shape(const MlpNet& other) const { return sizes_ == other.sizes_; }

bool MlpNet::all_finite() const {
  for (const auto& l : layers_)
    if (!l.weight.all_finite() || !l.bias.all_finite()) return false;
  return true;
}

AdamState AdamState::for_net(const MlpNet& net, double learning_rate) {
  AdamState s;
  s.first = net.zero_gradients();
  s.second = net.zero_gradients();
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(MlpNet& net, const Gradients& grads, AdamState& opt) {
  auto& layers = net.layers();
  if (grads.weight.size() != layers.size() || opt.first.weight.size() != layers.size())
    throw DimensionError("adam_step: layer count mismatch");
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  auto update = [&](Tensor2& param, const Tensor2& g, Tensor2& m, Tensor2& v) {
    if (!param.same_shape(g) || !param.same_shape(m) || !param.same_shape(v))
      throw DimensionError("adam_step: parameter/gradient shape mismatch");
    auto p = param.map();
    auto gm = g.map();
    auto mm = m.map();
    auto vm = v.map();
    mm = opt.beta1 * mm + (1.0 - opt.beta1) * gm;
    vm = opt.beta2 * vm + (1.0 - opt.beta2) * gm.cwiseProduct(gm);
    p.array() -= opt.learning_rate * (mm.array() / c1) /
                 ((vm.array() / c2).sqrt() + opt.epsilon);
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    update(layers[i].weight, grads.weight[i], opt.first.weight[i], opt.second.weight[i]);
    update(layers[i].bias, grads.bias[i], opt.first.bias[i], opt.second.bias[i]);
  }
}

void soft_update(MlpNet& target, const MlpNet& source, double tau) {
  if (!target.same_shape(source)) throw DimensionError("soft_update: network shapes differ");
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error("soft_update: tau must lie in [0, 1]");
  auto& tl = target.layers();
  const auto& sl = source.layers();
  for (std::size_t i = 0; i < tl.size(); ++i) {
    if (tau == 1.0) {
      tl[i].weight = sl[i].weight;
      tl[i].bias = sl[i].bias;
      continue;
    }
    if (tau == 0.0) continue;
    tl[i].weight.map() = tau * sl[i].weight.map() + (1.0 - tau) * tl[i].weight.map();
    tl[i].bias.map() = tau * sl[i].bias.map() + (1.0 - tau) * tl[i].bias.map();
  }
}

namespace {

using nlohmann::json;

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

void write_doubles(const std::filesystem::path& path, const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<double> read_doubles(const std::filesystem::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw MissingArtifactError("missing checkpoint payload " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected * sizeof(double))
    throw IoError(path.string() + ": payload has " + std::to_string(bytes) + " bytes, expected " +
                  std::to_string(expected * sizeof(double)));
  in.seekg(0);
  std::vector<double> values(expected);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  return values;
}

json read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("missing checkpoint manifest " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

json layer_manifest(const std::vector<std::size_t>& sizes, const std::vector<Activation>& acts) {
  json layers = json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const std::size_t nw = sizes[i] * sizes[i + 1];
    layers.push_back({{"fan_in", sizes[i]},
                      {"fan_out", sizes[i + 1]},
                      {"activation", to_string(acts[i])},
                      {"weight_offset", offset},
                      {"bias_offset", offset + nw}});
    offset += nw + sizes[i + 1];
  }
  return layers;
}

}  // namespace

void save_checkpoint(const MlpNet& net, const std::filesystem::path& stem) {
  std::vector<Activation> acts;
  for (const auto& l : net.layers()) acts.push_back(l.activation);
  json m = {{"format", "servo-mlp"},
            {"version", 1},
            {"dtype", "float64-le"},
            {"layer_sizes", net.sizes()},
            {"parameter_count", net.parameter_count()},
            {"layers", layer_manifest(net.sizes(), acts)},
            {"payload", with_ext(stem, ".bin").filename().string()}};
  std::ofstream out(with_ext(stem, ".json"));
  if (!out) throw IoError("cannot write " + with_ext(stem, ".json").string());
  out << m.dump(2) << '\n';
  write_doubles(with_ext(stem, ".bin"), net.flatten());
}

MlpNet load_checkpoint(const std::filesystem::path& stem) {
  json m = read_manifest(with_ext(stem, ".json"));
  if (m.value("format", "") != "servo-mlp") throw IoError(stem.string() + ": not an MLP checkpoint");
  const auto sizes = m.at("layer_sizes").get<std::vector<std::size_t>>();
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    Layer l;
    l.weight = Tensor2(sizes[i], sizes[i + 1]);
    l.bias = Tensor2(1, sizes[i + 1]);
    l.activation = activation_from_string(m.at("layers").at(i).at("activation").get<std::string>());
    layers.push_back(std::move(l));
  }
  MlpNet net(std::move(layers));
  net.unflatten(read_doubles(with_ext(stem, ".bin"), net.parameter_count()));
  return net;
}

void save_adam(const AdamState& opt, const std::filesystem::path& stem) {
  std::vector<std::size_t> shapes;
  std::vector<double> payload;
  auto append = [&](const Gradients& g) {
    for (std::size_t i = 0; i < g.weight.size(); ++i) {
      payload.insert(payload.end(), g.weight[i].data().begin(), g.weight[i].data().end());
      payload.insert(payload.end(), g.bias[i].data().begin(), g.bias[i].data().end());
    }
  };
  for (const auto& w : opt.first.weight) {
    if (shapes.empty()) shapes.push_back(w.rows());
    shapes.push_back(w.cols());
  }
  append(opt.first);
  append(opt.second);
  json m = {{"format", "servo-adam"},
            {"version", 1},
            {"dtype", "float64-le"},
            {"layer_sizes", shapes},
            {"step", opt.step},
            {"learning_rate", opt.learning_rate},
            {"beta1", opt.beta1},
            {"beta2", opt.beta2},
            {"epsilon", opt.epsilon},
            {"payload", with_ext(stem, ".bin").filename().string()}};
  std::ofstream out(with_ext(stem, ".json"));
  if (!out) throw IoError("cannot write " + with_ext(stem, ".json").string());
  out << m.dump(2) << '\n';
  write_doubles(with_ext(stem, ".bin"), payload);
}

AdamState load_adam(const std::filesystem::path& stem) {
  json m = read_manifest(with_ext(stem, ".json"));
  if (m.value("format", "") != "servo-adam") throw IoError(stem.string() + ": not an Adam state");
  const auto sizes = m.at("layer_sizes").get<std::vector<std::size_t>>();
  AdamState s;
  s.step = m.at("step").get<std::int64_t>();
  s.learning_rate = m.at("learning_rate").get<double>();
  s.beta1 = m.at("beta1").get<double>();
  s.beta2 = m.at("beta2").get<double>();
  s.epsilon = m.at("epsilon").get<double>();
  std::size_t count = 0;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) count += sizes[i] * sizes[i + 1] + sizes[i + 1];
  const auto payload = read_doubles(with_ext(stem, ".bin"), 2 * count);
  std::size_t k = 0;
  auto fill = [&](Gradients& g) {
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      g.weight.emplace_back(sizes[i], sizes[i + 1]);
      g.bias.emplace_back(1, sizes[i + 1]);
      for (double& v : g.weight.back().data()) v = payload[k++];
      for (double& v : g.bias.back().data()) v = payload[k++];
    }
  };
  fill(s.first);
  fill(s.second);
  return s;
}

}  // namespace servo::nn
