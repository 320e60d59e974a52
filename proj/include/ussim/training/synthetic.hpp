#pragma once

// Synthetic training sets: render oracle frames and package them with provenance.

#include <json.hpp>

#include "ussim/phantom/phantom.hpp"
#include "ussim/phantom/render.hpp"
#include "ussim/phantom/sampling.hpp"
#include "ussim/training/dataset.hpp"

namespace ussim {

struct GenerateConfig {
  std::size_t count = 2000;
  std::size_t image_size = 64;
  std::uint64_t seed = 7;        // pose sampler
  std::uint64_t split_seed = 11;
  SamplerSpec sampler;
  bool tracked = true;
};

inline nlohmann::json to_json(const SamplerSpec& s) {
  return {{"u", {s.u_min, s.u_max}}, {"v", {s.v_min, s.v_max}}, {"tilt_max", s.tilt_max}, {"roll_max", s.roll_max}};
}

inline FrameDataset generate_synthetic(const Volume& vol, const PhantomSpec& spec, const GenerateConfig& cfg) {
  cfg.sampler.validate();
  const auto params = ImagingParams::for_size(cfg.image_size);
  auto frames = generate_dataset(vol, spec, params, cfg.count, cfg.sampler, cfg.seed);
  auto ds = make_dataset(std::move(frames), cfg.seed, cfg.split_seed, spec_hash(spec), cfg.tracked);
  ds.generator = {{"phantom", to_json(spec)},
                  {"sampler", to_json(cfg.sampler)},
                  {"count", cfg.count},
                  {"image_size", cfg.image_size},
                  {"pixel_spacing_mm", params.pixel_spacing_mm},
                  {"supersample", params.supersample},
                  {"tracked", cfg.tracked}};
  return ds;
}

}  // namespace ussim
