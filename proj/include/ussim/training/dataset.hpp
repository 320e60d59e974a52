#pragma once

// Frame datasets on disk: a JSON manifest (poses, split, per-frame content hashes) next to
// a raw little-endian float32 file holding the images back to back.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ussim/core/error.hpp"
#include "ussim/core/hash.hpp"
#include "ussim/core/image.hpp"
#include "ussim/models/pose_vector.hpp"
#include "ussim/phantom/sampling.hpp"
#include "ussim/tensor/rng.hpp"

namespace ussim {

inline constexpr double kValidationFraction = 0.05;
inline constexpr std::size_t kMinSplitSize = 20;

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Deterministic 95/5 split with |validation| = round(0.05 N).
inline DatasetSplit split_dataset(std::size_t n, std::uint64_t seed) {
  if (n < kMinSplitSize) throw ConfigError("split_dataset: need at least 20 frames, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_val = static_cast<std::size_t>(std::llround(kValidationFraction * static_cast<double>(n)));
  DatasetSplit s;
  s.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

struct FrameRecord {
  std::size_t index = 0;
  Pose pose;
  SurfaceSample surface;
  bool tracked = true;
  std::string hash;  // FNV-1a of the image's float32 bytes
};

struct FrameDataset {
  std::size_t image_size = 0;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  std::string phantom_hash;
  nlohmann::json generator = nlohmann::json::object();
  std::vector<FrameRecord> frames;
  std::vector<float> images;  // frames.size() * image_size^2
  DatasetSplit split;

  std::size_t size() const { return frames.size(); }
  std::size_t pixels_per_image() const { return image_size * image_size; }

  std::span<const float> pixels(std::size_t i) const {
    return std::span<const float>(images).subspan(i * pixels_per_image(), pixels_per_image());
  }

  Image image(std::size_t i) const {
    const auto px = pixels(i);
    return Image(image_size, image_size, std::vector<float>(px.begin(), px.end()));
  }

  NormalizedPoseVector pose_vector(std::size_t i) const {
    if (!frames[i].tracked) throw ConfigError("frame " + std::to_string(i) + " has no tracker pose");
    return normalize_pose(frames[i].pose);
  }
};

inline std::string image_hash(std::span<const float> px) { return hash_hex(px.data(), px.size_bytes()); }

// Takes ownership of rendered frames. Untracked frames keep their image but lose the pose.
inline FrameDataset make_dataset(std::vector<Frame> frames, std::uint64_t seed, std::uint64_t split_seed,
                                 std::string phantom_hash, bool tracked = true) {
  if (frames.empty()) throw ConfigError("make_dataset: no frames");
  FrameDataset ds;
  ds.image_size = frames.front().image.width;
  ds.seed = seed;
  ds.split_seed = split_seed;
  ds.phantom_hash = std::move(phantom_hash);
  ds.images.reserve(frames.size() * ds.pixels_per_image());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (f.image.width != ds.image_size || f.image.height != ds.image_size)
      throw DimensionError("make_dataset: frames differ in size");
    FrameRecord r;
    r.index = i;
    r.tracked = tracked;
    if (tracked) {
      r.pose = f.pose;
      r.surface = f.surface;
    }
    r.hash = image_hash(f.image.view());
    ds.frames.push_back(r);
    ds.images.insert(ds.images.end(), f.image.pixels.begin(), f.image.pixels.end());
  }
  if (ds.size() >= kMinSplitSize) ds.split = split_dataset(ds.size(), split_seed);
  return ds;
}

namespace detail {

inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

inline void write_f32_le(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) {
      const auto u = to_little(std::bit_cast<std::uint32_t>(v));
      out.write(reinterpret_cast<const char*>(&u), 4);
    }
  }
}

inline void read_f32_le(const std::vector<char>& bytes, std::vector<float>& out) {
  out.resize(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, bytes.data() + 4 * i, 4);
    out[i] = std::bit_cast<float>(to_little(u));
  }
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

inline std::filesystem::path images_path_for(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".f32");
  return p;
}

inline void save_dataset(const FrameDataset& ds, const std::filesystem::path& manifest_path) {
  const auto images_path = images_path_for(manifest_path);
  {
    std::ofstream out(images_path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + images_path.string());
    detail::write_f32_le(out, ds.images);
  }
  std::vector<std::string> split(ds.size(), "train");
  for (auto i : ds.split.validation) split[i] = "validation";
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : ds.frames) {
    nlohmann::json j{{"index", f.index}, {"tracked", f.tracked}, {"hash", f.hash}, {"split", split[f.index]}};
    if (f.tracked) {
      j["pose"] = f.pose.to_array();
      j["surface"] = {f.surface.u, f.surface.v, f.surface.tilt, f.surface.roll};
    } else {
      j["pose"] = nullptr;
    }
    frames.push_back(std::move(j));
  }
  const nlohmann::json manifest{{"format", "ussim-dataset"},
                                {"version", 1},
                                {"count", ds.size()},
                                {"image_size", ds.image_size},
                                {"seed", ds.seed},
                                {"split_seed", ds.split_seed},
                                {"phantom_hash", ds.phantom_hash},
                                {"generator", ds.generator},
                                {"images_file", images_path.filename().string()},
                                {"images_hash", hash_hex(ds.images.data(), ds.images.size() * sizeof(float))},
                                {"frames", frames}};
  std::ofstream out(manifest_path);
  if (!out) throw ConfigError("cannot write " + manifest_path.string());
  out << manifest.dump(1) << '\n';
}

inline FrameDataset load_dataset(const std::filesystem::path& manifest_path) {
  const auto text = detail::read_file(manifest_path);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("dataset manifest " + manifest_path.string() + ": " + e.what(), e.byte);
  }
  FrameDataset ds;
  try {
    if (m.at("format") != "ussim-dataset" || m.at("version") != 1)
      throw FormatError("unsupported dataset manifest format", 0);
    ds.image_size = m.at("image_size").get<std::size_t>();
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.split_seed = m.at("split_seed").get<std::uint64_t>();
    ds.phantom_hash = m.at("phantom_hash").get<std::string>();
    ds.generator = m.value("generator", nlohmann::json::object());
    const auto count = m.at("count").get<std::size_t>();
    const auto& frames = m.at("frames");
    if (frames.size() != count) throw FormatError("manifest frame list does not match count", 0);
    for (std::size_t i = 0; i < count; ++i) {
      const auto& j = frames[i];
      FrameRecord r;
      r.index = j.at("index").get<std::size_t>();
      if (r.index != i) throw FormatError("manifest frames out of order at entry " + std::to_string(i), 0);
      r.tracked = j.at("tracked").get<bool>();
      r.hash = j.at("hash").get<std::string>();
      if (r.tracked) {
        r.pose = Pose::from_array(j.at("pose").get<std::array<double, 7>>());
        const auto s = j.at("surface").get<std::array<double, 4>>();
        r.surface = {s[0], s[1], s[2], s[3]};
        validate_pose(r.pose);
      }
      const auto split = j.at("split").get<std::string>();
      if (split == "validation") {
        ds.split.validation.push_back(i);
      } else if (split == "train") {
        ds.split.train.push_back(i);
      } else {
        throw FormatError("unknown split '" + split + "' for frame " + std::to_string(i), 0);
      }
      ds.frames.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset manifest " + manifest_path.string() + ": " + e.what(), 0);
  } catch (const GeometryError& e) {
    throw FormatError(std::string("dataset manifest pose invalid: ") + e.what(), 0);
  }

  const auto images_path = manifest_path.parent_path() / m.at("images_file").get<std::string>();
  const auto bytes = detail::read_file(images_path);
  const std::size_t expected = ds.size() * ds.pixels_per_image() * sizeof(float);
  if (bytes.size() != expected)
    throw FormatError("image file " + images_path.string() + " has " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(expected),
                      std::min(bytes.size(), expected));
  detail::read_f32_le(bytes, ds.images);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t offset = i * ds.pixels_per_image() * sizeof(float);
    if (image_hash(ds.pixels(i)) != ds.frames[i].hash)
      throw FormatError("image " + std::to_string(i) + " does not match its manifest hash", offset);
    for (float v : ds.pixels(i))
      if (!(v >= 0.f && v <= 1.f)) throw FormatError("image " + std::to_string(i) + " has values outside [0, 1]", offset);
  }
  return ds;
}

}  // namespace ussim
