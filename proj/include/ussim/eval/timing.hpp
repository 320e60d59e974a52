#pragma once

// Inference timing: n_repeat blocks of n_infer batch-1 forward passes, each block
// reduced to its mean time per inference.

#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ussim/models/networks.hpp"
#include "ussim/models/pose_vector.hpp"
#include "ussim/phantom/phantom.hpp"
#include "ussim/phantom/sampling.hpp"

namespace ussim {

struct TimingConfig {
  std::size_t n_infer = 500;
  std::size_t n_repeat = 20;
  std::size_t warmup = 10;
  std::uint64_t seed = 0;  // pose inputs
};

struct TimingReport {
  std::string model_id;
  std::size_t image_size = 0;
  std::size_t n_infer = 0;
  std::size_t warmup = 0;
  std::vector<double> repeat_mean_ms;
  double mean_ms = 0;
  double std_ms = 0;  // over the repeat means
  std::string hardware;

  nlohmann::json to_json() const {
    return {{"model_id", model_id}, {"image_size", image_size},       {"n_infer", n_infer},
            {"warmup", warmup},     {"repeat_mean_ms", repeat_mean_ms}, {"mean_ms", mean_ms},
            {"std_ms", std_ms},     {"hardware", hardware}};
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "model_id=" << model_id << "\nimage_size=" << image_size << "\nn_infer=" << n_infer
       << "\nn_repeat=" << repeat_mean_ms.size() << "\nwarmup=" << warmup << "\n";
    for (std::size_t i = 0; i < repeat_mean_ms.size(); ++i) os << "repeat" << i << "_ms=" << repeat_mean_ms[i] << '\n';
    os << "mean_ms=" << mean_ms << "\nstd_ms=" << std_ms << "\nhardware=" << hardware << '\n';
    return os.str();
  }
};

inline std::string hardware_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(colon + 2);
      break;
    }
  }
  std::ostringstream os;
  os << cpu << "; " << std::thread::hardware_concurrency() << " hw threads; measured on 1 thread";
#if defined(__VERSION__)
  os << "; compiler " << __VERSION__;
#endif
  return os.str();
}

// Distinct normalized inputs drawn from the surface sampler; built before timing starts.
inline std::vector<tensor::Tensor<float>> benchmark_inputs(std::size_t n, std::uint64_t seed) {
  const auto spec = default_phantom_spec();
  PoseSampler sampler(SamplerSpec{}, seed);
  std::vector<tensor::Tensor<float>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(pose_batch<float>(normalize_pose(surface_pose(sampler.next(), spec))));
  return out;
}

inline TimingReport timing_bench(const models::Decoder<float>& decoder, const TimingConfig& cfg = {},
                                 std::string model_id = "") {
  if (cfg.n_infer == 0 || cfg.n_repeat == 0) throw ConfigError("timing_bench: counts must be >= 1");
  using Clock = std::chrono::steady_clock;
  const auto inputs = benchmark_inputs(cfg.n_infer, cfg.seed);
  TimingReport r;
  r.model_id = std::move(model_id);
  r.image_size = decoder.config().output_size;
  r.n_infer = cfg.n_infer;
  r.warmup = cfg.warmup;
  r.hardware = hardware_descriptor();

  volatile float sink = 0;
  for (std::size_t w = 0; w < cfg.warmup; ++w) sink = sink + decoder.simulate(inputs[w % inputs.size()])[0];
  for (std::size_t rep = 0; rep < cfg.n_repeat; ++rep) {
    const auto t0 = Clock::now();
    for (const auto& x : inputs) sink = sink + decoder.simulate(x)[0];
    const auto total = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    r.repeat_mean_ms.push_back(total / static_cast<double>(cfg.n_infer));
  }
  for (double v : r.repeat_mean_ms) r.mean_ms += v;
  r.mean_ms /= static_cast<double>(cfg.n_repeat);
  double ss = 0;
  for (double v : r.repeat_mean_ms) ss += (v - r.mean_ms) * (v - r.mean_ms);
  r.std_ms = cfg.n_repeat > 1 ? std::sqrt(ss / static_cast<double>(cfg.n_repeat - 1)) : 0.0;
  return r;
}

}  // namespace ussim
