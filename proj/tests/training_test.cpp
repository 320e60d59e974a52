#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "ussim/training/checkpoint.hpp"
#include "ussim/training/dataset.hpp"
#include "ussim/training/preprocess.hpp"
#include "ussim/training/trainer.hpp"

namespace ussim {
namespace {

namespace fs = std::filesystem;
using models::DecoderConfig;

DecoderConfig tiny_config() {
  DecoderConfig c;
  c.output_size = 16;
  c.fc_hidden = {8, 16, 16, 32};
  c.base_channels = 4;
  c.base_size = 4;
  c.conv_channels = {8, 8, 4, 4, 4, 4};
  return c;
}

// Images are a smooth function of the pose so small models have something to fit.
std::vector<Frame> synthetic_frames(std::size_t n, std::uint64_t seed, std::size_t size = 16) {
  const auto spec = default_phantom_spec(1);
  PoseSampler sampler(SamplerSpec{}, seed);
  std::vector<Frame> frames(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& f = frames[i];
    f.index = i;
    f.surface = sampler.next();
    f.pose = surface_pose(f.surface, spec);
    f.image = Image(size, size);
    const auto& q = f.pose.orientation;
    for (std::size_t r = 0; r < size; ++r)
      for (std::size_t c = 0; c < size; ++c)
        f.image(r, c) = static_cast<float>(std::clamp(
            0.5 + 0.3 * std::sin(0.4 * r + 4 * q.x()) * std::cos(0.3 * c + f.pose.position.y() / 30), 0.0, 1.0));
  }
  return frames;
}

FrameDataset synthetic_dataset(std::size_t n, std::uint64_t seed = 1, bool tracked = true) {
  return make_dataset(synthetic_frames(n, seed), seed, seed + 100, "synthetic", tracked);
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("ussim_training_" + std::to_string(::getpid()) + "_" +
                                                 std::to_string(counter()++))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  fs::path path_;
};

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

// ---------------------------------------------------------------------------
// Preprocessing

TEST(Preprocess, Constant255BecomesOne) {
  RawFrame raw{300, 200, std::vector<std::uint8_t>(300 * 200, 255)};
  const auto img = preprocess_image(raw, 0.5, 128);
  ASSERT_EQ(img.width, 128u);
  for (float v : img.pixels) EXPECT_EQ(v, 1.0f);
}

TEST(Preprocess, NativeSpacingAndSizeOnlyRescales) {
  RawFrame raw{256, 256, std::vector<std::uint8_t>(256 * 256)};
  Rng rng(3);
  for (auto& p : raw.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  const auto img = preprocess_image(raw, 0.5, 256);
  ASSERT_EQ(img.size(), raw.pixels.size());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(img.pixels[i], raw.pixels[i] / 255.f);
}

TEST(Preprocess, CheckerboardUpsampleMatchesHandBilinear) {
  // 2x2 at 1 mm -> 4x4 at 0.5 mm. Output pixel centre (1, 1) maps to source (0.25, 0.25):
  // top = 0.75*0 + 0.25*255, bottom = 0.75*255 + 0.25*0, value = 0.75*top + 0.25*bottom = 95.625.
  RawFrame raw{2, 2, {0, 255, 255, 0}};
  const auto img = preprocess_image(raw, 1.0, 4);
  EXPECT_NEAR(img(1, 1), 95.625 / 255.0, 1e-6);
  EXPECT_NEAR(img(2, 2), 95.625 / 255.0, 1e-6);
  EXPECT_NEAR(img(1, 2), (255 - 95.625) / 255.0, 1e-6);
  EXPECT_NEAR(img(0, 0), 0.0, 1e-6);  // clamped edge reproduces the corner value
  EXPECT_NEAR(img(0, 3), 1.0, 1e-6);
}

TEST(Preprocess, CropsLargeAndPadsSmall) {
  RawFrame big{10, 10, std::vector<std::uint8_t>(100)};
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < 10; ++c) big.pixels[r * 10 + c] = static_cast<std::uint8_t>(r * 10 + c);
  const auto cropped = preprocess_image(big, 0.5, 4);
  EXPECT_FLOAT_EQ(cropped(0, 0), 33 / 255.f);
  EXPECT_FLOAT_EQ(cropped(3, 3), 66 / 255.f);

  RawFrame small{2, 2, {255, 255, 255, 255}};
  const auto padded = preprocess_image(small, 0.5, 4);
  EXPECT_EQ(padded(0, 0), 0.f);
  EXPECT_EQ(padded(1, 1), 1.f);
  EXPECT_EQ(padded(2, 2), 1.f);
  EXPECT_EQ(padded(3, 3), 0.f);
}

TEST(Preprocess, RejectsBadInput) {
  RawFrame raw{2, 2, {1, 2, 3, 4}};
  EXPECT_THROW(preprocess_image(raw, 0.0), ConfigError);
  EXPECT_THROW(preprocess_image(raw, -1.0), ConfigError);
  EXPECT_THROW(preprocess_image(raw, std::nan("")), ConfigError);
  EXPECT_THROW(preprocess_image(RawFrame{}, 0.5), DimensionError);
}

TEST(Preprocess, QuantizeInvertsScaling) {
  RawFrame raw{3, 3, {0, 1, 2, 127, 128, 129, 253, 254, 255}};
  EXPECT_EQ(quantize(preprocess_image(raw, 0.5, 3)).pixels, raw.pixels);
}

// ---------------------------------------------------------------------------
// Splits and dataset files

TEST(Split, ProportionsFollowRounding) {
  for (auto [n, val] : {std::pair<std::size_t, std::size_t>{100, 5}, {1000, 50}, {20, 1}, {30, 2}, {2000, 100}}) {
    const auto s = split_dataset(n, 7);
    EXPECT_EQ(s.validation.size(), val) << n;
    EXPECT_EQ(s.train.size(), n - val) << n;
  }
}

TEST(Split, DeterministicDisjointAndComplete) {
  const auto a = split_dataset(500, 42), b = split_dataset(500, 42), c = split_dataset(500, 43);
  EXPECT_EQ(a.validation, b.validation);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(a.validation, c.validation);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  for (auto i : a.validation) EXPECT_TRUE(all.insert(i).second) << "index " << i << " in both sets";
  EXPECT_EQ(all.size(), 500u);
  EXPECT_EQ(*all.rbegin(), 499u);
}

TEST(Split, RejectsTinyDatasets) { EXPECT_THROW(split_dataset(19, 1), ConfigError); }

TEST(Dataset, SaveLoadRoundTrip) {
  TempDir dir;
  auto ds = synthetic_dataset(24);
  ds.generator = {{"note", "synthetic"}};
  save_dataset(ds, dir.path() / "set.json");
  const auto back = load_dataset(dir.path() / "set.json");
  EXPECT_EQ(back.images, ds.images);
  EXPECT_EQ(back.image_size, 16u);
  EXPECT_EQ(back.split.train, ds.split.train);
  EXPECT_EQ(back.split.validation, ds.split.validation);
  EXPECT_EQ(back.generator, ds.generator);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.frames[i].pose.to_array(), ds.frames[i].pose.to_array());
    EXPECT_EQ(back.frames[i].surface.u, ds.frames[i].surface.u);
    EXPECT_EQ(back.frames[i].hash, ds.frames[i].hash);
  }
}

TEST(Dataset, ImageFileIsRawLittleEndianFloat32) {
  TempDir dir;
  const auto ds = synthetic_dataset(20);
  save_dataset(ds, dir.path() / "set.json");
  const auto bytes = read_bytes(dir.path() / "set.f32");
  ASSERT_EQ(bytes.size(), 20u * 16 * 16 * 4);
  const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t first = u[0] | (u[1] << 8) | (u[2] << 16) | (static_cast<std::uint32_t>(u[3]) << 24);
  EXPECT_EQ(std::bit_cast<float>(first), ds.images[0]);
}

TEST(Dataset, DetectsCorruption) {
  TempDir dir;
  const auto ds = synthetic_dataset(20);
  const auto manifest = dir.path() / "set.json";
  save_dataset(ds, manifest);
  auto bytes = read_bytes(dir.path() / "set.f32");

  auto flipped = bytes;
  flipped[16 * 16 * 4 * 3 + 5] ^= 0x40;  // inside image 3
  write_bytes(dir.path() / "set.f32", flipped);
  try {
    load_dataset(manifest);
    FAIL() << "corrupted image accepted";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 16u * 16 * 4 * 3);
  }

  write_bytes(dir.path() / "set.f32", std::vector<char>(bytes.begin(), bytes.end() - 7));
  EXPECT_THROW(load_dataset(manifest), FormatError);

  write_bytes(dir.path() / "set.f32", bytes);
  auto text = read_bytes(manifest);
  write_bytes(manifest, std::vector<char>(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(text.size() / 2)));
  EXPECT_THROW(load_dataset(manifest), FormatError);
}

TEST(Dataset, UntrackedFramesHaveNoPose) {
  TempDir dir;
  const auto ds = synthetic_dataset(20, 2, false);
  EXPECT_THROW(ds.pose_vector(0), ConfigError);
  save_dataset(ds, dir.path() / "u.json");
  const auto back = load_dataset(dir.path() / "u.json");
  EXPECT_FALSE(back.frames[0].tracked);
  EXPECT_EQ(back.images, ds.images);
}

TEST(Dataset, EveryStoredPoseNormalizesIntoUnitBox) {
  const auto ds = synthetic_dataset(200, 9);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto v = ds.pose_vector(i);
    EXPECT_NEAR(std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]), 1.0, 1e-6);
    EXPECT_LE(std::abs(v[4]), 1.0);
    EXPECT_LE(std::abs(v[5]), 1.0);
    EXPECT_GE(v[6], 0.0);
    EXPECT_LE(v[6], 1.0);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir dir;
  models::Decoder<float> d(tiny_config(), 4);
  auto c = capture_checkpoint(d, 4);
  c.train_loss = {0.1, 1.0 / 3.0};
  c.val_loss = {0.2, 2.0 / 7.0};
  c.epoch = 2;
  save_checkpoint(c, dir.path() / "a.ckpt");
  const auto back = load_checkpoint(dir.path() / "a.ckpt");
  EXPECT_TRUE(back == c);
  save_checkpoint(back, dir.path() / "b.ckpt");
  EXPECT_EQ(read_bytes(dir.path() / "a.ckpt"), read_bytes(dir.path() / "b.ckpt"));
}

TEST(Checkpoint, LoadedModelForwardIsBitwiseEqual) {
  TempDir dir;
  const auto ds = synthetic_dataset(24);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  auto res = train_decoder(TrainData(ds), cfg, tiny_config(), 3);
  save_checkpoint(res.checkpoint, dir.path() / "m.ckpt");
  const auto a = decoder_from_checkpoint(res.checkpoint);
  const auto b = decoder_from_checkpoint(load_checkpoint(dir.path() / "m.ckpt"));
  const auto poses = pose_batch<float>(ds.pose_vector(5));
  EXPECT_EQ(a.infer(poses), b.infer(poses));
}

TEST(Checkpoint, TruncationReportsOffset) {
  models::Decoder<float> d(tiny_config(), 4);
  const auto bytes = serialize_checkpoint(capture_checkpoint(d, 4));
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{13}, std::size_t{100}, bytes.size() / 2,
                          bytes.size() - 1}) {
    try {
      deserialize_checkpoint(std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)));
      FAIL() << "truncated at " << cut << " accepted";
    } catch (const FormatError& e) {
      EXPECT_LE(e.offset(), cut);
    }
  }
}

TEST(Checkpoint, DetectsBadMagicVersionAndBitFlips) {
  models::Decoder<float> d(tiny_config(), 4);
  const auto bytes = serialize_checkpoint(capture_checkpoint(d, 4));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  bad = bytes;
  bad[8] = 9;
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  bad = bytes;
  bad[bytes.size() - 20] ^= 1;
  try {
    deserialize_checkpoint(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), bytes.size() - 8);
  }
}

TEST(Checkpoint, AutoencoderRoundTripAndDecoderHalf) {
  models::Autoencoder<float> ae(models::AutoencoderConfig{tiny_config(), 1.0}, 8);
  const auto c = deserialize_checkpoint(serialize_checkpoint(capture_checkpoint(ae, 8)));
  models::Autoencoder<float> other(models::AutoencoderConfig{tiny_config(), 1.0}, 99);
  restore_checkpoint(c, other);
  EXPECT_EQ(detail::collect_tensors(other), detail::collect_tensors(ae));
  const auto dec = decoder_from_checkpoint(c);
  Rng rng(1);
  const auto poses = pose_batch<float>(normalize_pose(surface_pose(10, 5, 2, 1, default_phantom_spec())));
  EXPECT_EQ(dec.infer(poses), ae.decoder().infer(poses));
}

TEST(Checkpoint, RejectsMismatchedModel) {
  models::Decoder<float> d(tiny_config(), 4);
  auto c = capture_checkpoint(d, 4);
  auto cfg = tiny_config();
  cfg.fc_hidden[0] = 9;
  models::Decoder<float> other(cfg, 4);
  EXPECT_THROW(restore_checkpoint(c, other), DimensionError);
  models::Autoencoder<float> ae(models::AutoencoderConfig{tiny_config(), 1.0}, 8);
  EXPECT_THROW(restore_checkpoint(c, ae), ConfigError);
}

// ---------------------------------------------------------------------------
// Training regimes

TEST(TrainConfigTest, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lr = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.k = -0.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainDecoder, ZeroLearningRateLeavesParametersUnchanged) {
  const auto ds = synthetic_dataset(40);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.lr = 0;
  const auto res = train_decoder(TrainData(ds), cfg, tiny_config(), 6);
  models::Decoder<float> fresh(tiny_config(), 6);
  const auto before = capture_checkpoint(fresh, 6).tensors;
  for (std::size_t i = 0; i < before.size(); ++i)
    if (!before[i].buffer) EXPECT_EQ(res.checkpoint.tensors[i].data, before[i].data) << before[i].name;
}

TEST(TrainDecoder, DeterministicEndToEnd) {
  const auto run = [] {
    const auto ds = synthetic_dataset(40, 3);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.shuffle_seed = 12;
    return train_decoder(TrainData(ds), cfg, tiny_config(), 6);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.report.train_losses(), b.report.train_losses());
  EXPECT_EQ(a.report.val_losses(), b.report.val_losses());
  EXPECT_EQ(a.report.checkpoint_hash, b.report.checkpoint_hash);
  EXPECT_EQ(serialize_checkpoint(a.checkpoint), serialize_checkpoint(b.checkpoint));
}

TEST(TrainDecoder, ShuffleSeedChangesTrajectory) {
  const auto ds = synthetic_dataset(40, 3);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.shuffle_seed = 1;
  const auto a = train_decoder(TrainData(ds), cfg, tiny_config(), 6);
  cfg.shuffle_seed = 2;
  const auto b = train_decoder(TrainData(ds), cfg, tiny_config(), 6);
  EXPECT_NE(a.report.train_losses(), b.report.train_losses());
}

TEST(TrainDecoder, LossDecreasesAndReportIsComplete) {
  const auto ds = synthetic_dataset(60, 4);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 8;
  cfg.lr = 2e-3;
  std::size_t callbacks = 0;
  const auto res = train_decoder(TrainData(ds), cfg, tiny_config(), 2, [&](const EpochRecord&) { ++callbacks; });
  ASSERT_EQ(res.report.epochs.size(), 15u);
  EXPECT_EQ(callbacks, 15u);
  EXPECT_LT(res.report.epochs.back().train_loss, res.report.epochs.front().train_loss);
  for (const auto& e : res.report.epochs) {
    EXPECT_TRUE(std::isfinite(e.train_loss));
    ASSERT_TRUE(e.val_loss.has_value());
    EXPECT_EQ(e.steps, 8u);  // ceil(57 / 8)
  }
  const auto vals = res.report.val_losses();
  const auto best = static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin()) + 1;
  EXPECT_EQ(res.report.best_epoch, best);
  EXPECT_EQ(res.checkpoint.epoch, best);
  EXPECT_EQ(res.checkpoint.val_loss, vals);
}

TEST(TrainDecoder, ReturnedWeightsAreTheBestValidationEpoch) {
  const auto ds = synthetic_dataset(40, 4);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 8;
  cfg.lr = 5e-2;  // large steps make the validation curve non-monotone
  const auto res = train_decoder(TrainData(ds), cfg, tiny_config(), 2);
  auto model = decoder_from_checkpoint(res.checkpoint);
  double sum = 0;
  for (auto i : ds.split.validation) {
    const auto out = model.infer(pose_batch<float>(ds.pose_vector(i)));
    for (std::size_t k = 0; k < out.size(); ++k) sum += std::pow(out[k] - ds.pixels(i)[k], 2);
  }
  const double val = sum / static_cast<double>(ds.split.validation.size() * 256);
  EXPECT_NEAR(val, res.report.val_losses()[res.report.best_epoch - 1], 1e-6);
}

TEST(TrainDecoder, MaxStepsAndPatienceStopEarly) {
  const auto ds = synthetic_dataset(40, 4);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 8;
  cfg.max_steps = 7;
  auto res = train_decoder(TrainData(ds), cfg, tiny_config(), 2);
  EXPECT_EQ(res.report.steps, 7u);
  EXPECT_EQ(res.report.epochs.size(), 2u);

  cfg.max_steps.reset();
  cfg.epochs = 30;
  cfg.lr = 5e-2;
  cfg.patience = 2;
  res = train_decoder(TrainData(ds), cfg, tiny_config(), 2);
  const auto after_best = res.report.epochs.size() - res.report.best_epoch;
  if (res.report.epochs.size() < 30) {
    EXPECT_EQ(after_best, 2u);
  } else {
    EXPECT_LT(after_best, 2u);
  }
}

TEST(TrainDecoder, NonFiniteLossAborts) {
  auto ds = synthetic_dataset(40, 4);
  ds.images[ds.split.train[0] * 256 + 3] = std::nanf("");
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 64;
  EXPECT_THROW(train_decoder(TrainData(ds), cfg, tiny_config(), 2), NumericError);
}

TEST(TrainDecoder, RefusesUntrackedFramesAndWrongSize) {
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train_decoder(TrainData(synthetic_dataset(20, 1, false)), cfg, tiny_config(), 1), ConfigError);
  EXPECT_THROW(train_decoder(TrainData(synthetic_dataset(20)), cfg, DecoderConfig::for_size(64), 1), DimensionError);
}

TEST(TrainAutoencoder, EpochLossIsReconstructionPlusKTracker) {
  const auto ds = synthetic_dataset(40, 5);
  for (double k : {1.0, 2.5}) {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.k = k;
    const auto res = train_autoencoder(TrainData(ds), cfg, tiny_config(), true, 3);
    for (const auto& e : res.report.epochs) {
      EXPECT_GT(e.train_tracker, 0);
      EXPECT_NEAR(e.train_loss, e.train_reconstruction + k * e.train_tracker, 1e-6);
    }
  }
}

TEST(TrainAutoencoder, WithoutTrackerLossPosesAreIgnored) {
  const auto ds = synthetic_dataset(40, 5);
  auto permuted = ds;
  for (std::size_t i = 0; i < permuted.size(); ++i) permuted.frames[i].pose = ds.frames[(i + 7) % ds.size()].pose;
  const auto untracked = make_dataset(synthetic_frames(40, 5), 5, 105, "synthetic", false);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  const auto a = train_autoencoder(TrainData(ds), cfg, tiny_config(), false, 3);
  const auto b = train_autoencoder(TrainData(permuted), cfg, tiny_config(), false, 3);
  const auto c = train_autoencoder(TrainData(untracked), cfg, tiny_config(), false, 3);
  EXPECT_EQ(a.report.train_losses(), b.report.train_losses());
  EXPECT_EQ(a.report.train_losses(), c.report.train_losses());
  EXPECT_EQ(a.report.val_losses(), b.report.val_losses());
  for (const auto& e : a.report.epochs) EXPECT_EQ(e.train_tracker, 0);
}

TEST(TrainAutoencoder, TrackerFlagAddsExactlyKTimesTrackerMse) {
  const auto ds = synthetic_dataset(20, 5);
  models::Autoencoder<float> ae(models::AutoencoderConfig{tiny_config(), 2.5}, 3);
  const std::vector<std::size_t> idx{0, 3, 5, 9};
  const tensor::Var<float> images(detail::image_batch(ds, idx));
  const tensor::Var<float> poses(detail::pose_tensor(ds, idx));
  tensor::NoGradGuard guard;
  const auto out = ae.forward(images, tensor::Mode::kEval);
  const auto on = models::multi_input_loss(out.reconstruction, images, out.latent, poses, 2.5, true);
  const auto off = models::multi_input_loss(out.reconstruction, images, out.latent, poses, 2.5, false);
  double trk = 0;
  for (std::size_t i = 0; i < poses.value().size(); ++i)
    trk += std::pow(static_cast<double>(out.latent.value()[i]) - poses.value()[i], 2);
  trk /= static_cast<double>(poses.value().size());
  EXPECT_NEAR(on.total.value()[0] - off.total.value()[0], 2.5 * trk, 1e-6);
}

TEST(Pretrain, ZeroPretrainEpochsEqualsTrainDecoder) {
  const auto ds = synthetic_dataset(40, 6);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.pretrain_epochs = 0;
  const auto pre = pretrain_then_finetune(TrainData(ds), TrainData(ds), cfg, tiny_config(), 11);
  const auto plain = train_decoder(TrainData(ds), cfg, tiny_config(), 11);
  EXPECT_TRUE(pre.pretrain.report.epochs.empty());
  EXPECT_EQ(pre.finetune.report.train_losses(), plain.report.train_losses());
  EXPECT_EQ(pre.finetune.report.val_losses(), plain.report.val_losses());
  EXPECT_EQ(pre.finetune.checkpoint.tensors, plain.checkpoint.tensors);
}

TEST(Pretrain, TransferredCheckpointIsPretrainedDecoderHalf) {
  const auto untracked = make_dataset(synthetic_frames(40, 8), 8, 108, "synthetic", false);
  const auto tracked = synthetic_dataset(40, 6);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.pretrain_epochs = 2;
  const auto res = pretrain_then_finetune(TrainData(untracked), TrainData(tracked), cfg, tiny_config(), 11);
  EXPECT_EQ(res.pretrain.report.epochs.size(), 2u);
  EXPECT_EQ(res.transferred.arch, "pretrained");
  std::vector<NamedTensor> half;
  for (const auto& t : res.pretrain.checkpoint.tensors)
    if (t.name.rfind("decoder.", 0) == 0) half.push_back({t.name.substr(8), t.shape, t.data, t.buffer});
  EXPECT_EQ(half, res.transferred.tensors);

  const auto scratch = train_decoder(TrainData(tracked), cfg, tiny_config(), 11);
  EXPECT_NE(res.finetune.report.epochs[0].train_loss, scratch.report.epochs[0].train_loss);
}

}  // namespace
}  // namespace ussim
