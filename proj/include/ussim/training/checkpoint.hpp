#pragma once

// Checkpoint file:
//   "USSIMCKP" | u32 version | u32 header length | header JSON | f32 tensor blocks | u64 FNV-1a
// All integers and floats little-endian. The header lists tensors in file order with their
// shapes; the trailing hash covers every preceding byte.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "ussim/core/error.hpp"
#include "ussim/core/hash.hpp"
#include "ussim/models/networks.hpp"

namespace ussim {

inline constexpr char kCheckpointMagic[8] = {'U', 'S', 'S', 'I', 'M', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  tensor::Shape shape;
  std::vector<float> data;
  bool buffer = false;  // running statistic rather than trainable parameter

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct ModelCheckpoint {
  std::string arch = "decoder";  // decoder | autoencoder | pretrained
  models::DecoderConfig config;
  double tracker_weight = 1.0;
  tensor::BatchNormOptions batchnorm;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<NamedTensor> tensors;

  // Content hash of the weights and config; doubles as the model id.
  std::string weights_hash() const {
    Fnv1a h;
    h.update(config.to_json().dump());
    for (const auto& t : tensors) {
      h.update(t.name);
      h.update(std::span<const float>(t.data));
    }
    return to_hex(h.digest());
  }

  friend bool operator==(const ModelCheckpoint& a, const ModelCheckpoint& b) {
    return a.arch == b.arch && a.config == b.config && a.tracker_weight == b.tracker_weight &&
           a.batchnorm.momentum == b.batchnorm.momentum && a.batchnorm.eps == b.batchnorm.eps && a.seed == b.seed &&
           a.epoch == b.epoch && a.train_loss == b.train_loss && a.val_loss == b.val_loss && a.tensors == b.tensors;
  }
};

namespace detail {

template <class Model>
std::vector<NamedTensor> collect_tensors(Model& model) {
  std::vector<NamedTensor> out;
  model.visit([&](const std::string& name, tensor::Var<float>& v) {
    out.push_back({name, v.shape(), v.value().vec(), false});
  });
  model.visit_buffers([&](const std::string& name, tensor::Tensor<float>& t) {
    out.push_back({name, t.shape(), t.vec(), true});
  });
  return out;
}

// Writes tensors whose names start with `prefix` (stripped) into the model.
template <class Model>
void assign_tensors(const std::vector<NamedTensor>& tensors, const std::string& prefix, Model& model) {
  std::vector<const NamedTensor*> params, buffers;
  for (const auto& t : tensors) {
    if (t.name.rfind(prefix, 0) != 0) continue;
    (t.buffer ? buffers : params).push_back(&t);
  }
  std::size_t i = 0, j = 0;
  auto check = [&](const NamedTensor* src, const std::string& name, const tensor::Shape& shape) {
    if (!src || src->name.substr(prefix.size()) != name || src->shape != shape)
      throw DimensionError("checkpoint tensor does not match model slot '" + name + "'");
  };
  model.visit([&](const std::string& name, tensor::Var<float>& v) {
    const auto* src = i < params.size() ? params[i] : nullptr;
    check(src, name, v.shape());
    v.mutable_value() = tensor::Tensor<float>(src->shape, src->data);
    v.zero_grad();
    ++i;
  });
  model.visit_buffers([&](const std::string& name, tensor::Tensor<float>& t) {
    const auto* src = j < buffers.size() ? buffers[j] : nullptr;
    check(src, name, t.shape());
    t = tensor::Tensor<float>(src->shape, src->data);
    ++j;
  });
  if (i != params.size() || j != buffers.size()) throw DimensionError("checkpoint holds tensors the model lacks");
}

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class U>
  void scalar(U v) {
    static_assert(std::is_integral_v<U> || std::is_floating_point_v<U>);
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    bytes(&v, sizeof v);
  }
  std::vector<char>& buffer() { return buf_; }

  template <class U>
  static U byteswap_value(U v) {
    char b[sizeof(U)];
    std::memcpy(b, &v, sizeof v);
    std::reverse(b, b + sizeof(U));
    std::memcpy(&v, b, sizeof v);
    return v;
  }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<char>& buf) : buf_(buf) {}

  const char* take(std::size_t n, const char* what) {
    if (buf_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <class U>
  U scalar(const char* what) {
    U v;
    std::memcpy(&v, take(sizeof v, what), sizeof v);
    if constexpr (std::endian::native == std::endian::big) v = ByteWriter::byteswap_value(v);
    return v;
  }
  std::size_t offset() const { return pos_; }

 private:
  const std::vector<char>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline ModelCheckpoint capture_checkpoint(models::Decoder<float>& decoder, std::uint64_t seed,
                                          std::string arch = "decoder") {
  ModelCheckpoint c;
  c.arch = std::move(arch);
  c.config = decoder.config();
  c.seed = seed;
  c.tensors = detail::collect_tensors(decoder);
  return c;
}

inline ModelCheckpoint capture_checkpoint(models::Autoencoder<float>& ae, std::uint64_t seed) {
  ModelCheckpoint c;
  c.arch = "autoencoder";
  c.config = ae.config().decoder;
  c.tracker_weight = ae.config().tracker_weight;
  c.seed = seed;
  c.tensors = detail::collect_tensors(ae);
  return c;
}

inline void check_batchnorm_options(const ModelCheckpoint& c) {
  const tensor::BatchNormOptions built{};
  if (c.batchnorm.momentum != built.momentum || c.batchnorm.eps != built.eps)
    throw ConfigError("checkpoint batch-norm options differ from this build");
}

inline void restore_checkpoint(const ModelCheckpoint& c, models::Decoder<float>& decoder) {
  check_batchnorm_options(c);
  if (!(c.config == decoder.config())) throw DimensionError("checkpoint config does not match decoder");
  detail::assign_tensors(c.tensors, c.arch == "autoencoder" ? "decoder." : "", decoder);
}

inline void restore_checkpoint(const ModelCheckpoint& c, models::Autoencoder<float>& ae) {
  check_batchnorm_options(c);
  if (c.arch != "autoencoder") throw ConfigError("checkpoint holds a " + c.arch + ", not an autoencoder");
  if (!(c.config == ae.config().decoder)) throw DimensionError("checkpoint config does not match autoencoder");
  detail::assign_tensors(c.tensors, "", ae);
}

// Any architecture yields a decoder: for the autoencoder this is its decoder half.
inline models::Decoder<float> decoder_from_checkpoint(const ModelCheckpoint& c) {
  models::Decoder<float> d(c.config, c.seed);
  restore_checkpoint(c, d);
  return d;
}

inline std::vector<char> serialize_checkpoint(const ModelCheckpoint& c) {
  nlohmann::json dir = nlohmann::json::array();
  for (const auto& t : c.tensors) dir.push_back({{"name", t.name}, {"shape", t.shape}, {"buffer", t.buffer}});
  const nlohmann::json header{{"arch", c.arch},
                              {"config", c.config.to_json()},
                              {"tracker_weight", c.tracker_weight},
                              {"batchnorm", {{"momentum", c.batchnorm.momentum}, {"eps", c.batchnorm.eps}}},
                              {"seed", c.seed},
                              {"epoch", c.epoch},
                              {"train_loss", c.train_loss},
                              {"val_loss", c.val_loss},
                              {"tensors", dir}};
  const auto text = header.dump();
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.scalar<std::uint32_t>(kCheckpointVersion);
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  for (const auto& t : c.tensors) {
    if (tensor::numel(t.shape) != t.data.size()) throw DimensionError("checkpoint tensor '" + t.name + "' size mismatch");
    for (float v : t.data) w.scalar(v);
  }
  const auto sum = Fnv1a{}.update(w.buffer().data(), w.buffer().size()).digest();
  w.scalar<std::uint64_t>(sum);
  return std::move(w.buffer());
}

inline ModelCheckpoint deserialize_checkpoint(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes);
  if (std::memcmp(r.take(sizeof kCheckpointMagic, "magic"), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw FormatError("not a checkpoint file (bad magic)", 0);
  const auto version = r.scalar<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), r.offset() - 4);
  const auto header_len = r.scalar<std::uint32_t>("header length");
  const auto header_at = r.offset();
  const char* h = r.take(header_len, "header");
  ModelCheckpoint c;
  nlohmann::json dir;
  try {
    const auto header = nlohmann::json::parse(h, h + header_len);
    c.arch = header.at("arch").get<std::string>();
    c.config = models::DecoderConfig::from_json(header.at("config"));
    c.tracker_weight = header.at("tracker_weight").get<double>();
    c.batchnorm.momentum = header.at("batchnorm").at("momentum").get<double>();
    c.batchnorm.eps = header.at("batchnorm").at("eps").get<double>();
    c.seed = header.at("seed").get<std::uint64_t>();
    c.epoch = header.at("epoch").get<std::size_t>();
    c.train_loss = header.at("train_loss").get<std::vector<double>>();
    c.val_loss = header.at("val_loss").get<std::vector<double>>();
    dir = header.at("tensors");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what(), header_at);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what(), header_at);
  }
  for (const auto& d : dir) {
    NamedTensor t;
    t.name = d.at("name").get<std::string>();
    t.shape = d.at("shape").get<tensor::Shape>();
    t.buffer = d.at("buffer").get<bool>();
    t.data.resize(tensor::numel(t.shape));
    for (auto& v : t.data) v = r.scalar<float>(t.name.c_str());
    c.tensors.push_back(std::move(t));
  }
  const auto body_end = r.offset();
  const auto stored = r.scalar<std::uint64_t>("checksum");
  if (r.offset() != bytes.size()) throw FormatError("trailing bytes after checkpoint checksum", r.offset());
  if (Fnv1a{}.update(bytes.data(), body_end).digest() != stored)
    throw FormatError("checkpoint checksum mismatch", body_end);
  return c;
}

inline void save_checkpoint(const ModelCheckpoint& c, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write failed for " + path.string());
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  const std::vector<char> bytes(std::istreambuf_iterator<char>(in), {});
  return deserialize_checkpoint(bytes);
}

}  // namespace ussim
