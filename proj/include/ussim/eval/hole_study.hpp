#pragma once

// Training-hole ablation: train with all frames and with the frames inside a sphere
// removed, then compare bed-plane loss maps on the same evaluation frames.

#include <Eigen/Core>
#include <optional>
#include <span>
#include <vector>

#include "ussim/eval/quality.hpp"
#include "ussim/phantom/sampling.hpp"
#include "ussim/training/trainer.hpp"

namespace ussim {

struct HoleStudyConfig {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius_mm = 30;
  TrainConfig train;
  models::DecoderConfig model = models::DecoderConfig::for_size(64);
  std::uint64_t seed = 0;
  LossMapGrid grid = LossMapGrid::covering(100, 100, 10);
  double max_removed_fraction = 0.5;
};

struct HoleStudyResult {
  std::vector<std::size_t> kept, removed;  // dataset indices from the training split
  double removed_fraction = 0;
  TrainResult full_run, holed_run;
  QualityReport full_eval, holed_eval;
  LossMap full, holed, relative;
  double inside_mean = 0, outside_mean = 0;  // mean relative increase (%) per bin
  std::size_t inside_bins = 0, outside_bins = 0;

  bool localized() const { return inside_bins > 0 && outside_bins > 0 && inside_mean > outside_mean; }
};

// Bins whose centre projects within the hole radius on the bed plane.
inline bool in_footprint(const LossMapGrid& g, std::size_t ix, std::size_t iy, const Eigen::Vector3d& center,
                         double radius) {
  const double dx = g.center_x(ix) - center.x(), dy = g.center_y(iy) - center.y();
  return dx * dx + dy * dy <= radius * radius;
}

// `full_run` may carry an already trained full-data model with the same config and seeds.
inline HoleStudyResult hole_study(const FrameDataset& ds, const FrameDataset& eval_ds,
                                  std::span<const std::size_t> eval_frames, const HoleStudyConfig& cfg,
                                  const std::optional<TrainResult>& full_run = std::nullopt,
                                  const EpochCallback& on_epoch = {}) {
  std::vector<Eigen::Vector3d> positions;
  for (auto i : ds.split.train) positions.push_back(ds.frames[i].pose.position);
  const auto split = carve_hole(positions, cfg.center, cfg.radius_mm);
  if (split.removed_fraction >= cfg.max_removed_fraction)
    throw ConfigError("hole removes " + std::to_string(100 * split.removed_fraction) +
                      "% of the training frames; the study needs less than " +
                      std::to_string(100 * cfg.max_removed_fraction) + "%");

  HoleStudyResult r;
  for (auto k : split.kept) r.kept.push_back(ds.split.train[k]);
  for (auto k : split.removed) r.removed.push_back(ds.split.train[k]);
  r.removed_fraction = split.removed_fraction;

  r.full_run = full_run ? *full_run : train_decoder(TrainData(ds), cfg.train, cfg.model, cfg.seed, on_epoch);
  r.holed_run = train_decoder(TrainData(ds, r.kept, ds.split.validation), cfg.train, cfg.model, cfg.seed, on_epoch);

  const auto full_model = decoder_from_checkpoint(r.full_run.checkpoint);
  const auto holed_model = decoder_from_checkpoint(r.holed_run.checkpoint);
  r.full_eval = evaluate_model(decoder_simulator(full_model), eval_ds, eval_frames, "validation");
  r.holed_eval = evaluate_model(decoder_simulator(holed_model), eval_ds, eval_frames, "validation");
  r.full = loss_map(r.full_eval, eval_ds, cfg.grid);
  r.holed = loss_map(r.holed_eval, eval_ds, cfg.grid);
  r.relative = relative_increase(r.full, r.holed);

  double in_sum = 0, out_sum = 0;
  for (std::size_t iy = 0; iy < cfg.grid.ny; ++iy)
    for (std::size_t ix = 0; ix < cfg.grid.nx; ++ix) {
      const auto v = r.relative.at(ix, iy);
      if (!v) continue;
      if (in_footprint(cfg.grid, ix, iy, cfg.center, cfg.radius_mm)) {
        in_sum += *v;
        ++r.inside_bins;
      } else {
        out_sum += *v;
        ++r.outside_bins;
      }
    }
  r.inside_mean = r.inside_bins ? in_sum / static_cast<double>(r.inside_bins) : 0;
  r.outside_mean = r.outside_bins ? out_sum / static_cast<double>(r.outside_bins) : 0;
  return r;
}

inline HoleStudyResult hole_study(const FrameDataset& ds, const HoleStudyConfig& cfg,
                                  const std::optional<TrainResult>& full_run = std::nullopt,
                                  const EpochCallback& on_epoch = {}) {
  return hole_study(ds, ds, ds.split.validation, cfg, full_run, on_epoch);
}

}  // namespace ussim
