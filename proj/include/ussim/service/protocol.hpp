#pragma once

// Wire format shared by POST /simulate and the /stream socket.
//
// Request: JSON {"pose": [qw, qx, qy, qz, x, y, z], "oracle": bool, "encoding": "gray8" | "f32", "seq": n}.
// Only "pose" is required. Position is in mm.
//
// Frame: one line of JSON header, a '\n', then the image blocks back to back. Each block
// is width*height pixels, row-major from the top-left corner. gray8 is one byte per
// pixel (round(255 v)); f32 is IEEE-754 binary32 little endian. The header lists every
// block with its byte offset from the start of the block area.
//
// Errors are JSON only: {"ok": false, "seq": n, "error": {"code": ..., "message": ...}}.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ussim/core/error.hpp"
#include "ussim/core/image.hpp"
#include "ussim/phantom/pose.hpp"

namespace ussim::service {

inline constexpr double kServerQuaternionTolerance = 1e-3;

enum class Encoding { kGray8, kFloat32 };

inline std::string to_string(Encoding e) { return e == Encoding::kGray8 ? "gray8" : "f32"; }

inline std::size_t bytes_per_pixel(Encoding e) { return e == Encoding::kGray8 ? 1 : 4; }

// Structured failure reported to the client instead of a dropped connection.
class RequestError : public Error {
 public:
  RequestError(std::string code, const std::string& message) : Error(message), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

struct SimRequest {
  std::array<double, 7> pose{1, 0, 0, 0, 0, 0, 0};
  bool oracle = false;
  Encoding encoding = Encoding::kGray8;
  std::optional<std::uint64_t> seq;
};

inline SimRequest request_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw RequestError("malformed", "request must be a JSON object");
  SimRequest r;
  if (j.contains("seq")) {
    if (!j["seq"].is_number_unsigned()) throw RequestError("malformed", "seq must be a non-negative integer");
    r.seq = j["seq"].get<std::uint64_t>();
  }
  if (!j.contains("pose")) throw RequestError("malformed", "missing field 'pose'");
  const auto& p = j["pose"];
  if (!p.is_array() || p.size() != 7) throw RequestError("malformed", "pose must be an array of 7 numbers");
  for (std::size_t i = 0; i < 7; ++i) {
    if (!p[i].is_number()) throw RequestError("malformed", "pose must be an array of 7 numbers");
    r.pose[i] = p[i].get<double>();
  }
  if (j.contains("oracle")) {
    if (!j["oracle"].is_boolean()) throw RequestError("malformed", "oracle must be a boolean");
    r.oracle = j["oracle"].get<bool>();
  }
  if (j.contains("encoding")) {
    const auto e = j["encoding"];
    if (e == "gray8")
      r.encoding = Encoding::kGray8;
    else if (e == "f32")
      r.encoding = Encoding::kFloat32;
    else
      throw RequestError("malformed", "encoding must be \"gray8\" or \"f32\"");
  }
  return r;
}

inline SimRequest parse_request(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw RequestError("malformed", std::string("request is not valid JSON: ") + e.what());
  }
  return request_from_json(j);
}

inline nlohmann::json to_json(const SimRequest& r) {
  nlohmann::json j{{"pose", r.pose}, {"oracle", r.oracle}, {"encoding", to_string(r.encoding)}};
  if (r.seq) j["seq"] = *r.seq;
  return j;
}

// Renormalizes a near-unit quaternion; anything further than the tolerance is refused.
inline Pose validated_pose(const std::array<double, 7>& raw) {
  for (double v : raw)
    if (!std::isfinite(v)) throw RequestError("invalid_pose", "pose contains a non-finite value");
  Pose p = Pose::from_array(raw);
  const double norm = p.orientation.norm();
  if (std::abs(norm - 1.0) > kServerQuaternionTolerance)
    throw RequestError("non_unit_quaternion", "quaternion norm " + std::to_string(norm) + " is not within 1e-3 of 1");
  p.orientation.normalize();
  if (!position_in_tracker_volume(p.position))
    throw RequestError("out_of_volume", "position outside the tracker volume (|x|,|y| <= 250, 0 <= z <= 500 mm)");
  return p;
}

// ---------------------------------------------------------------------------
// Image blocks

inline std::uint8_t to_gray8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

inline void append_block(std::string& out, const Image& img, Encoding enc) {
  if (enc == Encoding::kGray8) {
    for (float v : img.pixels) out.push_back(static_cast<char>(to_gray8(v)));
    return;
  }
  for (float v : img.pixels) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
  }
}

inline Image read_block(std::string_view bytes, std::size_t w, std::size_t h, Encoding enc) {
  if (bytes.size() != w * h * bytes_per_pixel(enc)) throw FormatError("image block has the wrong length", 0);
  Image img(w, h);
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (enc == Encoding::kGray8) {
      img.pixels[i] = static_cast<float>(static_cast<std::uint8_t>(bytes[i])) / 255.f;
    } else {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t(static_cast<std::uint8_t>(bytes[4 * i + b])) << (8 * b);
      img.pixels[i] = std::bit_cast<float>(bits);
    }
  }
  return img;
}

struct SimResponse {
  Image simulated;
  std::optional<Image> oracle;
  double inference_ms = 0;
  std::string model_id;
  std::optional<std::uint64_t> seq;
  std::array<double, 7> pose{};  // after server-side normalization
};

inline std::string encode_frame(const SimResponse& r, Encoding enc) {
  const std::size_t block = r.simulated.size() * bytes_per_pixel(enc);
  nlohmann::json blocks = nlohmann::json::array({{{"name", "simulated"}, {"offset", 0}, {"bytes", block}}});
  if (r.oracle) {
    require_same_size(r.simulated, *r.oracle, "encode_frame");
    blocks.push_back({{"name", "oracle"}, {"offset", block}, {"bytes", block}});
  }
  nlohmann::json header{{"ok", true},
                        {"model_id", r.model_id},
                        {"width", r.simulated.width},
                        {"height", r.simulated.height},
                        {"encoding", to_string(enc)},
                        {"inference_ms", r.inference_ms},
                        {"pose", r.pose},
                        {"blocks", blocks}};
  if (r.seq) header["seq"] = *r.seq;
  std::string out = header.dump();
  out.push_back('\n');
  append_block(out, r.simulated, enc);
  if (r.oracle) append_block(out, *r.oracle, enc);
  return out;
}

inline std::string encode_error(const std::string& code, const std::string& message,
                                std::optional<std::uint64_t> seq = std::nullopt) {
  nlohmann::json j{{"ok", false}, {"error", {{"code", code}, {"message", message}}}};
  if (seq) j["seq"] = *seq;
  return j.dump();
}

struct DecodedFrame {
  nlohmann::json header;
  Image simulated;
  std::optional<Image> oracle;
};

// Client-side reader for encode_frame output.
inline DecodedFrame decode_frame(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw FormatError("frame has no header line", bytes.size());
  DecodedFrame f;
  try {
    f.header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("frame header is not JSON: ") + e.what(), e.byte);
  }
  if (!f.header.value("ok", false)) throw FormatError("frame header reports an error", 0);
  const auto w = f.header.at("width").get<std::size_t>(), h = f.header.at("height").get<std::size_t>();
  const auto enc = f.header.at("encoding") == "gray8" ? Encoding::kGray8 : Encoding::kFloat32;
  const auto body = bytes.substr(nl + 1);
  std::size_t expected = 0;
  for (const auto& b : f.header.at("blocks")) {
    const auto off = b.at("offset").get<std::size_t>(), len = b.at("bytes").get<std::size_t>();
    if (off + len > body.size()) throw FormatError("image block runs past the end of the frame", nl + 1 + body.size());
    auto img = read_block(body.substr(off, len), w, h, enc);
    if (b.at("name") == "oracle")
      f.oracle = std::move(img);
    else
      f.simulated = std::move(img);
    expected = std::max(expected, off + len);
  }
  if (expected != body.size()) throw FormatError("frame has trailing bytes", nl + 1 + expected);
  return f;
}

}  // namespace ussim::service
