#pragma once

// Pose-to-image decoder, the multi-input autoencoder whose decoder half is the same
// network, and weight transfer between them.

#include <bit>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "ussim/core/error.hpp"
#include "ussim/models/layers.hpp"

namespace ussim::models {

inline constexpr std::size_t kPoseDim = 7;
inline constexpr std::size_t kFcLayers = 5;
inline constexpr std::size_t kConvLayers = 7;  // 6 feature layers + final 1x1

struct DecoderConfig {
  std::size_t output_size = 256;
  std::vector<std::size_t> fc_hidden{64, 256, 1024, 2048};  // widths of FC layers 1-4
  std::size_t base_channels = 256;
  std::size_t base_size = 4;
  std::vector<std::size_t> conv_channels{256, 128, 64, 32, 32, 32};

  static DecoderConfig for_size(std::size_t size) {
    DecoderConfig c;
    c.output_size = size;
    return c;
  }

  std::size_t doubling_layers() const { return static_cast<std::size_t>(std::countr_zero(output_size / base_size)); }
  // Same-size layers that keep the conv count at 7 when the output is smaller than 256.
  std::size_t same_size_layers() const { return conv_channels.size() - doubling_layers(); }

  void validate() const {
    if (fc_hidden.size() + 1 != kFcLayers) throw ConfigError("decoder needs exactly 5 fully connected layers");
    if (conv_channels.size() + 1 != kConvLayers) throw ConfigError("decoder needs exactly 7 convolutional layers");
    for (auto w : fc_hidden)
      if (w == 0) throw ConfigError("FC widths must be positive");
    for (auto c : conv_channels)
      if (c == 0) throw ConfigError("conv channel counts must be positive");
    if (base_channels == 0 || base_size == 0) throw ConfigError("base feature map must be non-empty");
    if (output_size % base_size != 0 || !std::has_single_bit(output_size / base_size))
      throw ConfigError("output size must be base size times a power of two");
    if (doubling_layers() > conv_channels.size())
      throw ConfigError("output size needs more than 6 doubling layers");
  }

  nlohmann::json to_json() const {
    return {{"output_size", output_size},
            {"fc_hidden", fc_hidden},
            {"base_channels", base_channels},
            {"base_size", base_size},
            {"conv_channels", conv_channels}};
  }

  static DecoderConfig from_json(const nlohmann::json& j) {
    DecoderConfig c;
    c.output_size = j.at("output_size").get<std::size_t>();
    c.fc_hidden = j.at("fc_hidden").get<std::vector<std::size_t>>();
    c.base_channels = j.at("base_channels").get<std::size_t>();
    c.base_size = j.at("base_size").get<std::size_t>();
    c.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
    return c;
  }

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

inline const ConvGeometry kDoubling{4, 4, 2, 1};
inline const ConvGeometry kSameSize{3, 3, 1, 1};
inline const ConvGeometry kPointwise{1, 1, 1, 0};

template <class T = float>
class Decoder {
 public:
  Decoder() = default;
  Decoder(DecoderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    std::size_t in = kPoseDim;
    for (auto w : cfg_.fc_hidden) {
      fc_.emplace_back(in, w, true, rng);
      in = w;
    }
    fc_.emplace_back(in, cfg_.base_channels * cfg_.base_size * cfg_.base_size, true, rng);

    // Same-size layers run first, on the small base map, where they are cheapest.
    std::size_t c = cfg_.base_channels;
    for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
      const bool same = i < cfg_.same_size_layers();
      convs_.emplace_back(ConvKind::kTranspose, c, cfg_.conv_channels[i], same ? kSameSize : kDoubling, true, rng);
      c = cfg_.conv_channels[i];
    }
    convs_.emplace_back(ConvKind::kConv, c, 1, kPointwise, false, rng);
  }

  const DecoderConfig& config() const { return cfg_; }
  const std::vector<Dense<T>>& fc_layers() const { return fc_; }
  const std::vector<ConvLayer<T>>& conv_layers() const { return convs_; }
  std::vector<ConvLayer<T>>& conv_layers() { return convs_; }

  // [B, 7] -> [B, 1, S, S], raw (unclamped) output.
  Var<T> forward(const Var<T>& poses, Mode mode) {
    check_input(poses.shape());
    Var<T> h = poses;
    for (const auto& l : fc_) h = l.forward(h);
    h = tensor::reshape(h, {poses.shape()[0], cfg_.base_channels, cfg_.base_size, cfg_.base_size});
    for (auto& l : convs_) h = l.forward(h, mode);
    return h;
  }

  // Eval-mode forward on plain tensors; bitwise equal to forward(kEval), thread safe.
  Tensor<T> infer(const Tensor<T>& poses) const {
    check_input(poses.shape());
    Tensor<T> h = poses;
    for (const auto& l : fc_) h = l.infer(h);
    h.reshape({poses.shape()[0], cfg_.base_channels, cfg_.base_size, cfg_.base_size});
    for (const auto& l : convs_) h = l.infer(h);
    return h;
  }

  // Inference output in [0, 1].
  Tensor<T> simulate(const Tensor<T>& poses) const {
    auto y = infer(poses);
    for (auto& v : y.data()) v = std::clamp(v, T(0), T(1));
    return y;
  }

  void visit(const ParamVisitor<T>& fn, const std::string& prefix = "") {
    for (std::size_t i = 0; i < fc_.size(); ++i) fc_[i].visit(prefix + "fc" + std::to_string(i), fn);
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].visit(prefix + "conv" + std::to_string(i), fn);
  }

  void visit_buffers(const BufferVisitor<T>& fn, const std::string& prefix = "") {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].visit_buffers(prefix + "conv" + std::to_string(i), fn);
  }

  std::vector<Var<T>> parameters() {
    std::vector<Var<T>> out;
    visit([&](const std::string&, Var<T>& v) { out.push_back(v); });
    return out;
  }

 private:
  void check_input(const Shape& s) const {
    if (s.size() != 2 || s[1] != kPoseDim)
      throw DimensionError("decoder input must be [B, 7], got " + tensor::to_string(s));
  }

  DecoderConfig cfg_;
  std::vector<Dense<T>> fc_;
  std::vector<ConvLayer<T>> convs_;
};

// Encoder mirrors the decoder: 1x1 expansion, the six feature layers in reverse, then
// FC layers back down to the 7-d latent.
struct AutoencoderConfig {
  DecoderConfig decoder;
  double tracker_weight = 1.0;  // K

  void validate() const {
    decoder.validate();
    if (!(tracker_weight >= 0)) throw ConfigError("tracker loss weight K must be >= 0");
  }
};

template <class T = float>
struct AutoencoderOutput {
  Var<T> reconstruction;  // [B, 1, S, S]
  Var<T> latent;          // [B, 7]
};

template <class T = float>
class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(AutoencoderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto& d = cfg_.decoder;
    Rng rng(mix64(seed ^ 0xe4c0de7ULL));
    // Encoder channel path is the decoder's, reversed: 1 -> c5 -> c4 ... -> c0 -> base.
    std::vector<std::size_t> path(d.conv_channels.rbegin(), d.conv_channels.rend());
    path.push_back(d.base_channels);
    encoder_convs_.emplace_back(ConvKind::kConv, 1, path[0], kPointwise, true, rng);
    const std::size_t doubling = d.doubling_layers();
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      const bool halving = i < doubling;
      encoder_convs_.emplace_back(ConvKind::kConv, path[i], path[i + 1], halving ? kDoubling : kSameSize, true, rng);
    }
    std::size_t in = d.base_channels * d.base_size * d.base_size;
    for (auto it = d.fc_hidden.rbegin(); it != d.fc_hidden.rend(); ++it) {
      encoder_fc_.emplace_back(in, *it, true, rng);
      in = *it;
    }
    // Latent layer stays linear: tracker targets include negative quaternion components.
    encoder_fc_.emplace_back(in, kPoseDim, false, rng);
    decoder_ = Decoder<T>(d, seed);
  }

  const AutoencoderConfig& config() const { return cfg_; }
  Decoder<T>& decoder() { return decoder_; }
  const Decoder<T>& decoder() const { return decoder_; }
  const std::vector<ConvLayer<T>>& encoder_convs() const { return encoder_convs_; }
  const std::vector<Dense<T>>& encoder_fc() const { return encoder_fc_; }

  Var<T> encode(const Var<T>& images, Mode mode) {
    check_images(images.shape());
    Var<T> h = images;
    for (auto& l : encoder_convs_) h = l.forward(h, mode);
    h = tensor::reshape(h, {images.shape()[0], h.value().size() / images.shape()[0]});
    for (const auto& l : encoder_fc_) h = l.forward(h);
    return h;
  }

  AutoencoderOutput<T> forward(const Var<T>& images, Mode mode) {
    auto z = encode(images, mode);
    return {decoder_.forward(z, mode), z};
  }

  Tensor<T> infer_latent(const Tensor<T>& images) const {
    check_images(images.shape());
    Tensor<T> h = images;
    for (const auto& l : encoder_convs_) h = l.infer(h);
    h.reshape({images.shape()[0], h.size() / images.shape()[0]});
    for (const auto& l : encoder_fc_) h = l.infer(h);
    return h;
  }

  void visit(const ParamVisitor<T>& fn) {
    for (std::size_t i = 0; i < encoder_convs_.size(); ++i)
      encoder_convs_[i].visit("encoder.conv" + std::to_string(i), fn);
    for (std::size_t i = 0; i < encoder_fc_.size(); ++i) encoder_fc_[i].visit("encoder.fc" + std::to_string(i), fn);
    decoder_.visit(fn, "decoder.");
  }

  void visit_buffers(const BufferVisitor<T>& fn) {
    for (std::size_t i = 0; i < encoder_convs_.size(); ++i)
      encoder_convs_[i].visit_buffers("encoder.conv" + std::to_string(i), fn);
    decoder_.visit_buffers(fn, "decoder.");
  }

  std::vector<Var<T>> parameters() {
    std::vector<Var<T>> out;
    visit([&](const std::string&, Var<T>& v) { out.push_back(v); });
    return out;
  }

 private:
  void check_images(const Shape& s) const {
    const auto n = cfg_.decoder.output_size;
    if (s.size() != 4 || s[1] != 1 || s[2] != n || s[3] != n)
      throw DimensionError("autoencoder input must be [B, 1, " + std::to_string(n) + ", " + std::to_string(n) +
                           "], got " + tensor::to_string(s));
  }

  AutoencoderConfig cfg_;
  std::vector<ConvLayer<T>> encoder_convs_;
  std::vector<Dense<T>> encoder_fc_;
  Decoder<T> decoder_;
};

template <class Model>
std::size_t count_parameters(Model& model) {
  std::size_t n = 0;
  model.visit([&](const std::string&, auto& v) { n += v.value().size(); });
  return n;
}

// FNV-1a over every parameter and running statistic, in visiting order.
template <class T>
std::uint64_t parameter_hash(Decoder<T>& d) {
  Fnv1a h;
  d.visit([&](const std::string&, Var<T>& v) { h.update(v.value().data()); });
  d.visit_buffers([&](const std::string&, Tensor<T>& t) { h.update(std::as_const(t).data()); });
  return h.digest();
}

// Copies the autoencoder's decoder half into `decoder`, bit for bit.
template <class T>
void transfer_decoder_weights(Autoencoder<T>& ae, Decoder<T>& decoder) {
  if (!(ae.config().decoder == decoder.config()))
    throw DimensionError("transfer_decoder_weights: decoder configurations differ");
  std::vector<Tensor<T>> values, buffers;
  ae.decoder().visit([&](const std::string&, Var<T>& v) { values.push_back(v.value()); });
  ae.decoder().visit_buffers([&](const std::string&, Tensor<T>& t) { buffers.push_back(t); });
  std::size_t i = 0, j = 0;
  decoder.visit([&](const std::string&, Var<T>& v) {
    if (values[i].shape() != v.shape()) throw DimensionError("transfer_decoder_weights: parameter shape mismatch");
    v.mutable_value() = values[i++];
    v.zero_grad();
  });
  decoder.visit_buffers([&](const std::string&, Tensor<T>& t) { t = buffers[j++]; });
}

template <class T = float>
struct MultiInputLoss {
  Var<T> total;
  double reconstruction = 0;  // MSE(input, recon)
  double tracker = 0;         // MSE(t, Z)
};

// L = MSE(input, recon) + K * MSE(t, Z). With use_tracker off the tracker term is not formed.
template <class T>
MultiInputLoss<T> multi_input_loss(const Var<T>& recon, const Var<T>& input, const Var<T>& latent,
                                   const Var<T>& target_pose, double k, bool use_tracker = true) {
  if (!(k >= 0)) throw ConfigError("multi_input_loss: K must be >= 0");
  MultiInputLoss<T> out;
  auto rec = tensor::mse_loss(recon, input);
  out.reconstruction = static_cast<double>(rec.value()[0]);
  if (!use_tracker) {
    out.total = rec;
    return out;
  }
  auto trk = tensor::mse_loss(latent, target_pose);
  out.tracker = static_cast<double>(trk.value()[0]);
  out.total = tensor::add(rec, tensor::scale(trk, static_cast<T>(k)));
  return out;
}

}  // namespace ussim::models
