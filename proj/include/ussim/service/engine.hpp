#pragma once

// The immutable model and oracle behind every endpoint. simulate() is const and safe to
// call from any number of threads.

#include <chrono>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>

#include "ussim/models/networks.hpp"
#include "ussim/models/pose_vector.hpp"
#include "ussim/phantom/phantom.hpp"
#include "ussim/phantom/render.hpp"
#include "ussim/service/protocol.hpp"
#include "ussim/training/checkpoint.hpp"

namespace ussim::service {

struct Oracle {
  std::shared_ptr<const Volume> volume;
  std::string phantom_hash;
};

class SimulationEngine {
 public:
  SimulationEngine(const ModelCheckpoint& ckpt, std::optional<Oracle> oracle = std::nullopt)
      : decoder_(decoder_from_checkpoint(ckpt)), oracle_(std::move(oracle)) {
    const auto s = decoder_.config().output_size;
    model_id_ = ckpt.arch + "-" + std::to_string(s) + "-" + ckpt.weights_hash().substr(0, 12);
    parameter_count_ = models::count_parameters(decoder_);
    if (oracle_) {
      if (!oracle_->volume) throw ConfigError("oracle has no volume");
      params_ = ImagingParams::for_size(s);
    }
  }

  const std::string& model_id() const { return model_id_; }
  std::size_t image_size() const { return decoder_.config().output_size; }
  bool has_oracle() const { return oracle_.has_value(); }

  nlohmann::json meta() const {
    return {{"model_id", model_id_},
            {"image_size", image_size()},
            {"parameter_count", parameter_count_},
            {"phantom_hash", oracle_ ? nlohmann::json(oracle_->phantom_hash) : nlohmann::json(nullptr)},
            {"oracle", has_oracle()},
            {"encodings", {"gray8", "f32"}},
            {"pose_layout", {"qw", "qx", "qy", "qz", "x_mm", "y_mm", "z_mm"}},
            {"quaternion_tolerance", kServerQuaternionTolerance}};
  }

  // Throws RequestError for anything the client got wrong.
  SimResponse simulate(const SimRequest& req) const {
    const Pose pose = validated_pose(req.pose);
    if (req.oracle && !oracle_) throw RequestError("no_oracle", "service was started without a phantom");
    SimResponse r;
    r.seq = req.seq;
    r.model_id = model_id_;
    r.pose = pose.to_array();
    const auto x = pose_batch<float>(normalize_pose(pose));
    const auto t0 = std::chrono::steady_clock::now();
    const auto y = decoder_.simulate(x);
    r.inference_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const auto s = image_size();
    r.simulated = Image(s, s, std::vector<float>(y.ptr(), y.ptr() + s * s));
    if (req.oracle) r.oracle = render_slice(*oracle_->volume, pose, params_).image;
    return r;
  }

  // Encoded frame, or an encoded error payload.
  struct Reply {
    std::string bytes;
    bool ok = false;
  };

  Reply handle(std::string_view request_text) const {
    std::optional<std::uint64_t> seq;
    try {
      const auto req = parse_request(request_text);
      seq = req.seq;
      return {encode_frame(simulate(req), req.encoding), true};
    } catch (const RequestError& e) {
      return {encode_error(e.code(), e.what(), seq), false};
    } catch (const Error& e) {
      return {encode_error("internal", e.what(), seq), false};
    }
  }

 private:
  models::Decoder<float> decoder_;
  std::optional<Oracle> oracle_;
  ImagingParams params_;
  std::string model_id_;
  std::size_t parameter_count_ = 0;
};

}  // namespace ussim::service
