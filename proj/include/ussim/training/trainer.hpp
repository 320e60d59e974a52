#pragma once

// Mini-batch Adam training for the decoder, the multi-input autoencoder, and
// autoencoder pretraining followed by decoder fine-tuning.

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ussim/core/error.hpp"
#include "ussim/models/networks.hpp"
#include "ussim/tensor/adam.hpp"
#include "ussim/training/checkpoint.hpp"
#include "ussim/training/dataset.hpp"

namespace ussim {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t val_batch_size = 16;
  std::size_t epochs = 30;
  std::size_t pretrain_epochs = 40;
  double lr = 2e-4;
  std::uint64_t shuffle_seed = 0;
  double k = 1.0;
  std::optional<std::size_t> patience;   // epochs without validation improvement
  std::optional<std::size_t> max_steps;  // optimizer steps, across epochs

  void validate() const {
    if (batch_size == 0 || val_batch_size == 0) throw ConfigError("batch sizes must be >= 1");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
    if (!(k >= 0)) throw ConfigError("K must be >= 0");
    if (patience && *patience == 0) throw ConfigError("patience must be >= 1");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  std::optional<double> val_loss;
  double train_reconstruction = 0;
  double train_tracker = 0;
  double seconds = 0;
  std::size_t steps = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
  double seconds = 0;
  std::string checkpoint_hash;

  std::vector<double> train_losses() const {
    std::vector<double> v;
    for (const auto& e : epochs) v.push_back(e.train_loss);
    return v;
  }
  std::vector<double> val_losses() const {
    std::vector<double> v;
    for (const auto& e : epochs)
      if (e.val_loss) v.push_back(*e.val_loss);
    return v;
  }

  // One line per epoch: epoch, train_loss, val_loss, seconds.
  std::string to_text() const {
    std::ostringstream os;
    os.precision(9);
    for (const auto& e : epochs) {
      os << "epoch=" << e.epoch << " train_loss=" << e.train_loss << " val_loss=";
      if (e.val_loss)
        os << *e.val_loss;
      else
        os << "none";
      os << " seconds=" << e.seconds << '\n';
    }
    os << "best_epoch=" << best_epoch << " steps=" << steps << " seconds=" << seconds
       << " checkpoint=" << checkpoint_hash << '\n';
    return os.str();
  }
};

struct TrainResult {
  ModelCheckpoint checkpoint;
  TrainReport report;
};

// Which frames to train and validate on. Defaults to the dataset's own split.
struct TrainData {
  const FrameDataset& ds;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;

  explicit TrainData(const FrameDataset& d) : ds(d), train(d.split.train), validation(d.split.validation) {
    if (train.empty() && validation.empty())
      for (std::size_t i = 0; i < d.size(); ++i) train.push_back(i);
  }
  TrainData(const FrameDataset& d, std::vector<std::size_t> tr, std::vector<std::size_t> val)
      : ds(d), train(std::move(tr)), validation(std::move(val)) {}
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

inline tensor::Tensor<float> image_batch(const FrameDataset& ds, std::span<const std::size_t> idx) {
  const auto s = ds.image_size;
  tensor::Tensor<float> t({idx.size(), 1, s, s});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto px = ds.pixels(idx[b]);
    std::copy(px.begin(), px.end(), t.ptr() + b * px.size());
  }
  return t;
}

inline tensor::Tensor<float> pose_tensor(const FrameDataset& ds, std::span<const std::size_t> idx) {
  std::vector<NormalizedPoseVector> v;
  v.reserve(idx.size());
  for (auto i : idx) v.push_back(ds.pose_vector(i));
  return pose_batch<float>(std::span<const NormalizedPoseVector>(v));
}

inline void require_finite_loss(double v, const char* what, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(v))
    throw NumericError(std::string(what) + " became non-finite at epoch " + std::to_string(epoch) + ", step " +
                       std::to_string(step));
}

inline void check_image_size(const FrameDataset& ds, const models::DecoderConfig& cfg) {
  if (ds.image_size != cfg.output_size)
    throw DimensionError("dataset images are " + std::to_string(ds.image_size) + " px, model outputs " +
                         std::to_string(cfg.output_size));
}

// Per-sample loss terms of one batch.
struct BatchLoss {
  double total = 0, reconstruction = 0, tracker = 0;
};

// Generic epoch loop. `step(idx, mode, update)` returns the loss for the batch; in train
// mode it also backpropagates and updates. `snapshot()` captures the current weights.
template <class StepFn, class SnapshotFn>
TrainResult run_epochs(const TrainData& data, const TrainConfig& cfg, StepFn&& step, SnapshotFn&& snapshot,
                       const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty()) throw ConfigError("training set is empty");
  using Clock = std::chrono::steady_clock;
  const auto t_start = Clock::now();
  TrainResult out;
  std::optional<double> best_val;
  std::size_t since_best = 0;
  std::size_t steps = 0;
  std::vector<std::size_t> order = data.train;
  const Rng shuffler(cfg.shuffle_seed);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    auto rng = shuffler.fork(epoch);
    order = data.train;
    rng.shuffle(std::span<std::size_t>(order));

    EpochRecord rec;
    rec.epoch = epoch;
    double sum = 0, sum_rec = 0, sum_trk = 0;
    std::size_t seen = 0;
    bool budget_hit = false;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      if (cfg.max_steps && steps >= *cfg.max_steps) {
        budget_hit = true;
        break;
      }
      const auto n = std::min(cfg.batch_size, order.size() - at);
      const std::span<const std::size_t> idx(order.data() + at, n);
      const BatchLoss l = step(idx, tensor::Mode::kTrain);
      require_finite_loss(l.total, "training loss", epoch, steps);
      ++steps;
      ++rec.steps;
      sum += l.total * static_cast<double>(n);
      sum_rec += l.reconstruction * static_cast<double>(n);
      sum_trk += l.tracker * static_cast<double>(n);
      seen += n;
    }
    if (seen == 0) break;
    rec.train_loss = sum / static_cast<double>(seen);
    rec.train_reconstruction = sum_rec / static_cast<double>(seen);
    rec.train_tracker = sum_trk / static_cast<double>(seen);

    if (!data.validation.empty()) {
      tensor::NoGradGuard no_grad;
      double vsum = 0;
      for (std::size_t at = 0; at < data.validation.size(); at += cfg.val_batch_size) {
        const auto n = std::min(cfg.val_batch_size, data.validation.size() - at);
        const std::span<const std::size_t> idx(data.validation.data() + at, n);
        vsum += step(idx, tensor::Mode::kEval).total * static_cast<double>(n);
      }
      rec.val_loss = vsum / static_cast<double>(data.validation.size());
      require_finite_loss(*rec.val_loss, "validation loss", epoch, steps);
    }
    rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    out.report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    // Best-validation selection; without a validation set the last epoch wins.
    const bool improved = !rec.val_loss || !best_val || *rec.val_loss < *best_val;
    if (improved) {
      if (rec.val_loss) best_val = rec.val_loss;
      out.report.best_epoch = epoch;
      out.checkpoint = snapshot();
      since_best = 0;
    } else if (cfg.patience && ++since_best >= *cfg.patience) {
      break;
    }
    if (budget_hit || (cfg.max_steps && steps >= *cfg.max_steps)) break;
  }
  out.report.steps = steps;
  out.report.seconds = std::chrono::duration<double>(Clock::now() - t_start).count();
  out.checkpoint.epoch = out.report.best_epoch;
  out.checkpoint.train_loss = out.report.train_losses();
  out.checkpoint.val_loss = out.report.val_losses();
  out.report.checkpoint_hash = out.checkpoint.weights_hash();
  return out;
}

}  // namespace detail

// Trains `model` in place; on return it holds the best-validation weights.
inline TrainResult fit_decoder(models::Decoder<float>& model, const TrainData& data, const TrainConfig& cfg,
                               std::uint64_t seed, const EpochCallback& on_epoch = {}, std::string arch = "decoder") {
  detail::check_image_size(data.ds, model.config());
  auto params = model.parameters();
  tensor::AdamState<float> adam;
  adam.options.lr = cfg.lr;
  auto step = [&](std::span<const std::size_t> idx, tensor::Mode mode) {
    const tensor::Var<float> poses(detail::pose_tensor(data.ds, idx));
    const tensor::Var<float> target(detail::image_batch(data.ds, idx));
    auto loss = tensor::mse_loss(model.forward(poses, mode), target);
    const double v = static_cast<double>(loss.value()[0]);
    if (mode == tensor::Mode::kTrain) {
      for (auto& p : params) p.zero_grad();
      tensor::backward(loss);
      tensor::adam_step(params, adam);
    }
    return detail::BatchLoss{v, v, 0};
  };
  auto snapshot = [&] { return capture_checkpoint(model, seed, arch); };
  auto result = detail::run_epochs(data, cfg, step, snapshot, on_epoch);
  restore_checkpoint(result.checkpoint, model);
  return result;
}

inline TrainResult train_decoder(const TrainData& data, const TrainConfig& cfg, const models::DecoderConfig& model_cfg,
                                 std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  models::Decoder<float> model(model_cfg, seed);
  return fit_decoder(model, data, cfg, seed, on_epoch);
}

// With use_tracker off the loss is reconstruction only and poses are never read, so
// untracked frames are accepted.
inline TrainResult fit_autoencoder(models::Autoencoder<float>& model, const TrainData& data, const TrainConfig& cfg,
                                   bool use_tracker, std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  detail::check_image_size(data.ds, model.config().decoder);
  auto params = model.parameters();
  tensor::AdamState<float> adam;
  adam.options.lr = cfg.lr;
  auto step = [&](std::span<const std::size_t> idx, tensor::Mode mode) {
    const tensor::Var<float> images(detail::image_batch(data.ds, idx));
    const tensor::Var<float> poses = use_tracker ? tensor::Var<float>(detail::pose_tensor(data.ds, idx)) : tensor::Var<float>();
    auto out = model.forward(images, mode);
    auto l = models::multi_input_loss(out.reconstruction, images, out.latent, poses, cfg.k, use_tracker);
    const double v = static_cast<double>(l.total.value()[0]);
    if (mode == tensor::Mode::kTrain) {
      for (auto& p : params) p.zero_grad();
      tensor::backward(l.total);
      tensor::adam_step(params, adam);
    }
    return detail::BatchLoss{v, l.reconstruction, l.tracker};
  };
  auto snapshot = [&] { return capture_checkpoint(model, seed); };
  auto result = detail::run_epochs(data, cfg, step, snapshot, on_epoch);
  result.checkpoint.tracker_weight = cfg.k;
  restore_checkpoint(result.checkpoint, model);
  return result;
}

inline TrainResult train_autoencoder(const TrainData& data, const TrainConfig& cfg,
                                     const models::DecoderConfig& model_cfg, bool use_tracker, std::uint64_t seed,
                                     const EpochCallback& on_epoch = {}) {
  models::Autoencoder<float> model(models::AutoencoderConfig{model_cfg, cfg.k}, seed);
  return fit_autoencoder(model, data, cfg, use_tracker, seed, on_epoch);
}

struct PretrainResult {
  TrainResult pretrain;           // reconstruction-only autoencoder run (empty when 0 epochs)
  ModelCheckpoint transferred;    // decoder right after weight transfer, before fine-tuning
  TrainResult finetune;           // final decoder
};

inline PretrainResult pretrain_then_finetune(const TrainData& untracked, const TrainData& tracked,
                                             const TrainConfig& cfg, const models::DecoderConfig& model_cfg,
                                             std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  PretrainResult out;
  models::Autoencoder<float> ae(models::AutoencoderConfig{model_cfg, cfg.k}, seed);
  if (cfg.pretrain_epochs > 0) {
    TrainConfig pre = cfg;
    pre.epochs = cfg.pretrain_epochs;
    pre.max_steps.reset();
    out.pretrain = fit_autoencoder(ae, untracked, pre, false, seed, on_epoch);
  }
  models::Decoder<float> decoder(model_cfg, seed);
  models::transfer_decoder_weights(ae, decoder);
  out.transferred = capture_checkpoint(decoder, seed, "pretrained");
  out.finetune = fit_decoder(decoder, tracked, cfg, seed, on_epoch, "pretrained");
  return out;
}

}  // namespace ussim
