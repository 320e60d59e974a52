#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>

#include "ussim/phantom/sampling.hpp"

namespace ussim {
namespace {

PhantomSpec small_spec() {
  PhantomSpec s;
  s.semi_axes = {20, 16, 10};
  s.speckle_amplitude = 0;
  return s;
}

// Cubic grid with constant content, coarse spacing so it stays small.
Volume uniform_volume(double half_extent, double spacing, float intensity, float attenuation) {
  Volume v;
  const auto n = static_cast<std::size_t>(2 * half_extent / spacing) + 1;
  v.dims = {n, n, n};
  v.spacing = spacing;
  v.origin = Eigen::Vector3d(-half_extent, -half_extent, 0);
  v.intensity.assign(v.voxel_count(), intensity);
  v.attenuation.assign(v.voxel_count(), attenuation);
  v.labels.assign(v.voxel_count(), kLabelTissue);
  v.label_intensity.assign(256, 0.f);
  v.label_reverberates.assign(256, false);
  return v;
}

// Probe above the grid centre, beam straight down.
Pose looking_down(double z = 150) {
  Pose p;
  p.position = {0, 0, z};
  return p;
}

ImagingParams coarse_params(std::size_t size = 32) {
  ImagingParams p;
  p.image_size = size;
  p.pixel_spacing_mm = 128.0 / static_cast<double>(size);
  p.supersample = 2;
  return p;
}

TEST(Phantom, NoPrimitivesNoSpeckleIsUniformBackground) {
  const auto spec = small_spec();
  const auto vol = build_phantom(spec);
  std::size_t inside = 0;
  for (std::size_t i = 0; i < vol.voxel_count(); ++i) {
    if (vol.labels[i] == kLabelOutside) {
      EXPECT_EQ(vol.intensity[i], 0.f);
    } else {
      ++inside;
      EXPECT_EQ(vol.intensity[i], static_cast<float>(spec.background_intensity));
      EXPECT_EQ(vol.attenuation[i], static_cast<float>(spec.background_attenuation));
    }
  }
  // Half-ellipsoid volume 2/3 pi abc over 0.125 mm^3 voxels, within lattice error.
  const double expected = 2.0 / 3.0 * std::numbers::pi * 20 * 16 * 10 / 0.125;
  EXPECT_NEAR(static_cast<double>(inside), expected, 0.05 * expected);
}

TEST(Phantom, SameSpecTwiceIsBitwiseIdentical) {
  auto small = small_spec();
  small.speckle_amplitude = 0.3;
  Primitive p;
  p.center = {2, 1, 4};
  p.semi_axes = {4, 3, 2};
  p.intensity = 0.9;
  small.primitives.push_back(p);
  const auto a = build_phantom(small), b = build_phantom(small);
  EXPECT_EQ(a.intensity, b.intensity);
  EXPECT_EQ(a.attenuation, b.attenuation);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.content_hash(), b.content_hash());
  small.seed = 2;
  EXPECT_NE(build_phantom(small).content_hash(), a.content_hash());
}

TEST(Phantom, BrightEllipsoidCentreVoxelHoldsItsIntensity) {
  auto spec = small_spec();
  Primitive p;
  p.center = {3.0, -2.5, 4.0};  // on the 0.5 mm lattice
  p.semi_axes = {3, 2, 2};
  p.intensity = 0.8;
  p.attenuation = 0.05;
  spec.primitives.push_back(p);
  const auto vol = build_phantom(spec);
  const Eigen::Vector3d f = (p.center - vol.origin) / vol.spacing;
  const auto idx = vol.index(static_cast<std::size_t>(std::lround(f.x())), static_cast<std::size_t>(std::lround(f.y())),
                             static_cast<std::size_t>(std::lround(f.z())));
  EXPECT_EQ(vol.intensity[idx], 0.8f);
  EXPECT_EQ(vol.attenuation[idx], 0.05f);
  EXPECT_EQ(vol.labels[idx], 1);
  EXPECT_FLOAT_EQ(vol.sample(vol.intensity, p.center), 0.8f);
}

TEST(Phantom, SpeckleKeepsIntensitiesInUnitRange) {
  auto spec = small_spec();
  spec.speckle_amplitude = 0.9;
  Primitive p;
  p.center = {0, 0, 4};
  p.semi_axes = {5, 5, 3};
  p.intensity = 1.0;
  spec.primitives.push_back(p);
  const auto vol = build_phantom(spec);
  float lo = 1, hi = 0;
  for (float v : vol.intensity) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_GE(lo, 0.f);
  EXPECT_LE(hi, 1.f);
  EXPECT_GT(hi, 0.9f);
}

TEST(Phantom, RejectsPrimitiveOutsideTheBody) {
  auto spec = small_spec();
  Primitive p;
  p.center = {18, 0, 2};
  p.semi_axes = {5, 2, 1};
  spec.primitives.push_back(p);
  EXPECT_THROW(build_phantom(spec), GeometryError);

  auto below = small_spec();
  Primitive t;
  t.kind = Primitive::Kind::kTube;
  t.start = {0, 0, 5};
  t.end = {0, 0, 0.5};
  t.radius = 1;
  below.primitives.push_back(t);
  EXPECT_THROW(build_phantom(below), GeometryError);
}

TEST(Phantom, RejectsInvalidValues) {
  auto spec = small_spec();
  spec.semi_axes.y() = 0;
  EXPECT_THROW(validate(spec), GeometryError);
  spec = small_spec();
  Primitive p;
  p.center = {0, 0, 4};
  p.semi_axes = {1, 1, 1};
  p.intensity = 1.5;
  spec.primitives.push_back(p);
  EXPECT_THROW(validate(spec), GeometryError);
  spec.primitives[0].intensity = 0.5;
  spec.primitives[0].attenuation = -0.1;
  EXPECT_THROW(validate(spec), GeometryError);
}

TEST(Phantom, DefaultSpecHasFourToEightValidPrimitives) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto spec = default_phantom_spec(seed);
    EXPECT_GE(spec.primitives.size(), 4u);
    EXPECT_LE(spec.primitives.size(), 8u);
    EXPECT_NO_THROW(validate(spec));
    EXPECT_EQ(spec.semi_axes, Eigen::Vector3d(100, 100, 120));
  }
  EXPECT_EQ(spec_hash(default_phantom_spec(4)), spec_hash(default_phantom_spec(4)));
  EXPECT_NE(spec_hash(default_phantom_spec(4)), spec_hash(default_phantom_spec(5)));
}

TEST(Phantom, ConfigRoundTripPreservesSpec) {
  const auto spec = default_phantom_spec(9);
  const auto back = phantom_spec_from_json(nlohmann::json::parse(to_json(spec).dump()));
  EXPECT_EQ(spec_hash(back), spec_hash(spec));
  EXPECT_EQ(back.primitives.size(), spec.primitives.size());

  auto j = to_json(spec);
  j["primitives"][0]["type"] = "cube";
  EXPECT_THROW(phantom_spec_from_json(j), ConfigError);
  j = to_json(spec);
  j.erase("semi_axes");
  EXPECT_THROW(phantom_spec_from_json(j), ConfigError);
  EXPECT_THROW(load_phantom_spec("/nonexistent/phantom.json"), ConfigError);
}

TEST(SurfacePose, ApexIsIdentityWithBeamAlongMinusNormal) {
  const auto spec = default_phantom_spec(1);
  const auto pose = surface_pose(0, 0, 0, 0, spec);
  EXPECT_NEAR((pose.position - Eigen::Vector3d(0, 0, 120)).norm(), 0.0, 1e-12);
  EXPECT_TRUE(same_rotation(pose.orientation, Eigen::Quaterniond::Identity(), 1e-12));
  EXPECT_NEAR((pose.beam_axis() - Eigen::Vector3d(0, 0, -1)).norm(), 0.0, 1e-12);
  EXPECT_NEAR(pose.orientation.norm(), 1.0, 1e-12);
}

TEST(SurfacePose, PositionsSatisfyTheEllipsoidEquation) {
  PhantomSpec spec;
  spec.semi_axes = {100, 80, 120};
  spec.base_z = 5;
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const SurfaceSample s{rng.uniform(-89, 89), rng.uniform(-89, 89), rng.uniform(-30, 30), rng.uniform(-30, 30)};
    const auto pose = surface_pose(s, spec);
    const Eigen::Vector3d q(pose.position.x() / 100, pose.position.y() / 80, (pose.position.z() - 5) / 120);
    EXPECT_NEAR(q.squaredNorm(), 1.0, 1e-6);
    EXPECT_GE(pose.position.z(), spec.base_z);
    EXPECT_NEAR(pose.orientation.norm(), 1.0, 1e-6);
    EXPECT_NO_THROW(validate_pose(pose));
  }
}

TEST(SurfacePose, ZeroTiltBeamPointsInward) {
  const auto spec = default_phantom_spec(1);
  for (double u : {-60.0, -20.0, 35.0}) {
    for (double v : {-40.0, 0.0, 50.0}) {
      const auto pose = surface_pose(u, v, 0, 17, spec);
      const Eigen::Vector3d& p = pose.position;
      const Eigen::Vector3d normal = Eigen::Vector3d(p.x() / 1e4, p.y() / 1e4, p.z() / 14400).normalized();
      EXPECT_NEAR((pose.beam_axis() + normal).norm(), 0.0, 1e-9);
    }
  }
  // Tilt swings the beam away from the normal by exactly the tilt angle.
  const auto tilted = surface_pose(10, 20, 25, 0, spec);
  const auto straight = surface_pose(10, 20, 0, 0, spec);
  EXPECT_NEAR(std::acos(tilted.beam_axis().dot(straight.beam_axis())) * 180 / std::numbers::pi, 25.0, 1e-9);
}

TEST(SurfacePose, RollHalfTurnTwiceIsIdentity) {
  const auto spec = default_phantom_spec(1);
  const auto base = surface_pose(30, -15, 5, 0, spec);
  const Eigen::Quaterniond half = axis_angle_deg(Eigen::Vector3d::UnitZ(), 180);
  const Eigen::Quaterniond twice = base.orientation * half * half;
  EXPECT_TRUE(same_rotation(twice, base.orientation, 1e-12));
  EXPECT_FALSE(same_rotation(base.orientation * half, base.orientation, 1e-3));
}

TEST(SurfacePose, RejectsOutOfRangeParameters) {
  const auto spec = default_phantom_spec(1);
  EXPECT_THROW(surface_pose(90, 0, 0, 0, spec), GeometryError);
  EXPECT_THROW(surface_pose(0, -95, 0, 0, spec), GeometryError);
  EXPECT_THROW(surface_pose(0, 0, 31, 0, spec), GeometryError);
  EXPECT_THROW(surface_pose(0, 0, 0, -30.5, spec), GeometryError);
  EXPECT_THROW(surface_pose(std::nan(""), 0, 0, 0, spec), GeometryError);
}

TEST(Render, UniformVolumeFillsSectorAndZeroesOutside) {
  const auto vol = uniform_volume(100, 2, 0.5f, 0.f);
  const auto params = coarse_params();
  const auto res = render_slice(vol, looking_down(), params);
  EXPECT_FALSE(res.blank);
  std::size_t in = 0, out = 0;
  for (std::size_t r = 0; r < params.image_size; ++r)
    for (std::size_t c = 0; c < params.image_size; ++c) {
      if (params.in_sector(r, c)) {
        EXPECT_EQ(res.image(r, c), 0.5f);
        ++in;
      } else {
        EXPECT_EQ(res.image(r, c), 0.f);
        ++out;
      }
    }
  EXPECT_GT(in, 0u);
  EXPECT_GT(out, 0u);
}

TEST(Render, SectorIsAFanOpeningWithDepth) {
  const auto params = ImagingParams::for_size(64);
  const auto mask = sector_mask(params);
  auto width = [&](std::size_t r) {
    std::size_t w = 0;
    for (std::size_t c = 0; c < 64; ++c) w += mask(r, c) > 0;
    return w;
  };
  for (std::size_t r = 1; r < 64; ++r) EXPECT_GE(width(r), width(r - 1));
  EXPECT_LT(width(0), 16u);
  EXPECT_EQ(width(63), 64u);
}

TEST(Render, IsADeterministicFunctionOfItsInputs) {
  const auto spec = default_phantom_spec(2);
  const auto vol = build_phantom(spec);
  const auto params = ImagingParams::for_size(64);
  const auto pose = surface_pose(12, -7, 4, -3, spec);
  const auto a = render_slice(vol, pose, params), b = render_slice(vol, pose, params);
  EXPECT_EQ(a.image, b.image);
  const auto other = render_slice(vol, surface_pose(13, -7, 4, -3, spec), params);
  EXPECT_NE(a.image, other.image);
  for (float v : a.image.pixels) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
}

TEST(Render, AttenuatingBlobDarkensTheDistalRegion) {
  auto clear = uniform_volume(100, 2, 0.5f, 0.f);
  auto blob = clear;
  const Eigen::Vector3d centre(0, 0, 110);
  for (std::size_t k = 0; k < blob.dims[2]; ++k)
    for (std::size_t j = 0; j < blob.dims[1]; ++j)
      for (std::size_t i = 0; i < blob.dims[0]; ++i) {
        const Eigen::Vector3d p = blob.origin + blob.spacing * Eigen::Vector3d(i, j, k);
        if ((p - centre).norm() <= 8) blob.attenuation[blob.index(i, j, k)] = 0.2f;
      }
  const auto params = coarse_params();
  const auto a = render_slice(clear, looking_down(), params).image;
  const auto b = render_slice(blob, looking_down(), params).image;
  // Distal region: depth 60..120 mm below the probe, central 8 mm.
  double ma = 0, mb = 0;
  int n = 0;
  for (std::size_t r = 0; r < params.image_size; ++r) {
    const double d = params.depth_mm(static_cast<double>(r));
    if (d < 60 || d > 120) continue;
    for (std::size_t c = 0; c < params.image_size; ++c) {
      if (std::abs(params.lateral_mm(static_cast<double>(c))) > 4) continue;
      ma += a(r, c);
      mb += b(r, c);
      ++n;
    }
  }
  ASSERT_GT(n, 0);
  EXPECT_LT(mb / n, ma / n);
  EXPECT_LT(mb / n, 0.1);
}

TEST(Render, AddingAttenuationNeverBrightensAnyPixel) {
  const auto params = coarse_params();
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    auto base = uniform_volume(100, 2, 0.f, 0.f);
    for (auto& v : base.intensity) v = static_cast<float>(rng.uniform());
    for (auto& v : base.attenuation) v = static_cast<float>(rng.uniform(0, 0.02));
    base.labels.assign(base.voxel_count(), 1);
    base.label_intensity[1] = 0.9f;
    base.label_reverberates[1] = trial % 2 == 1;
    auto more = base;
    for (auto& v : more.attenuation) v += static_cast<float>(rng.uniform(0, 0.05));
    Pose pose = looking_down(140);
    pose.orientation = axis_angle_deg(Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()), rng.uniform(0, 20));
    const auto a = render_slice(base, pose, params).image;
    const auto b = render_slice(more, pose, params).image;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(b.pixels[i], a.pixels[i]);
  }
}

TEST(Render, ReverberatingStructureAddsADeeperGhost) {
  auto vol = uniform_volume(100, 2, 0.2f, 0.f);
  for (std::size_t k = 0; k < vol.dims[2]; ++k)
    for (std::size_t j = 0; j < vol.dims[1]; ++j)
      for (std::size_t i = 0; i < vol.dims[0]; ++i) {
        const double z = vol.origin.z() + vol.spacing * k;
        if (z <= 120 && z >= 110) vol.labels[vol.index(i, j, k)] = 1;
      }
  vol.label_intensity[1] = 1.0f;
  auto params = coarse_params(64);
  params.reverb_thickness_mm = 4;
  const auto plain = render_slice(vol, looking_down(), params).image;
  vol.label_reverberates[1] = true;
  const auto ghost = render_slice(vol, looking_down(), params).image;
  // Layer entered at ~29.5 mm depth, so the ghost is centred near 59 mm.
  const auto row = static_cast<std::size_t>(58.5 / params.pixel_spacing_mm);
  EXPECT_GT(ghost(row, 32), plain(row, 32) + 0.2f);
  EXPECT_EQ(ghost(static_cast<std::size_t>(90.0 / params.pixel_spacing_mm), 32),
            plain(static_cast<std::size_t>(90.0 / params.pixel_spacing_mm), 32));
}

TEST(Render, PlaneOutsideTheVolumeIsFlaggedBlank) {
  const auto vol = uniform_volume(50, 2, 0.5f, 0.f);
  Pose far;
  far.position = {0, 0, 400};
  const auto res = render_slice(vol, far, coarse_params());
  EXPECT_TRUE(res.blank);
  for (float v : res.image.pixels) EXPECT_EQ(v, 0.f);
}

TEST(Render, ForSizeKeepsTheFieldOfView) {
  for (std::size_t s : {64u, 128u, 256u}) {
    const auto p = ImagingParams::for_size(s);
    EXPECT_DOUBLE_EQ(p.pixel_spacing_mm * s, 128.0);
    EXPECT_DOUBLE_EQ(p.pixel_spacing_mm / p.supersample, 0.5);
  }
  EXPECT_THROW(ImagingParams::for_size(100), ConfigError);
  ImagingParams bad;
  bad.sector_half_angle_deg = 90;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Dataset, SingleFrameMatchesDirectRender) {
  const auto spec = default_phantom_spec(1);
  const auto vol = build_phantom(spec);
  const auto params = ImagingParams::for_size(64);
  const auto frames = generate_dataset(vol, spec, params, 1, {}, 5);
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_EQ(frames[0].image, render_slice(vol, frames[0].pose, params).image);
  EXPECT_EQ(frames[0].pose, surface_pose(frames[0].surface, spec));
  EXPECT_THROW(generate_dataset(vol, spec, params, 0, {}, 5), ConfigError);
}

TEST(Dataset, SameSeedSameFramesAndUniformSurfaceHistogram) {
  const auto spec = small_spec();
  const auto vol = build_phantom(spec);
  ImagingParams params;
  params.image_size = 4;
  params.pixel_spacing_mm = 8;
  const SamplerSpec sampler{-60, 60, -40, 40, 20, 20};
  const auto a = generate_dataset(vol, spec, params, 2000, sampler, 77);
  const auto b = generate_dataset(vol, spec, params, 2000, sampler, 77);
  ASSERT_EQ(a.size(), 2000u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].image, b[i].image);
    ASSERT_EQ(a[i].pose, b[i].pose);
    ASSERT_NEAR(a[i].pose.orientation.norm(), 1.0, 1e-6);
    for (float v : a[i].image.pixels) ASSERT_TRUE(v >= 0.f && v <= 1.f);
  }

  constexpr int kBins = 10;
  std::vector<int> hist(kBins * kBins, 0);
  for (const auto& f : a) {
    const int bu = std::min(kBins - 1, static_cast<int>((f.surface.u + 60) / 120 * kBins));
    const int bv = std::min(kBins - 1, static_cast<int>((f.surface.v + 40) / 80 * kBins));
    ++hist[bu * kBins + bv];
    EXPECT_LE(std::abs(f.surface.tilt), 20);
  }
  const double expected = 2000.0 / (kBins * kBins);
  double chi2 = 0;
  for (int h : hist) chi2 += (h - expected) * (h - expected) / expected;
  const boost::math::chi_squared dist(kBins * kBins - 1);
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.01) << "chi2 = " << chi2;
}

TEST(Dataset, SamplerRejectsIllegalRanges) {
  EXPECT_THROW(PoseSampler(SamplerSpec{-90, 10, -10, 10, 5, 5}, 1), ConfigError);
  EXPECT_THROW(PoseSampler(SamplerSpec{10, -10, -10, 10, 5, 5}, 1), ConfigError);
  EXPECT_THROW(PoseSampler(SamplerSpec{-10, 10, -10, 10, 31, 5}, 1), ConfigError);
}

std::vector<Eigen::Vector3d> sampled_positions(std::size_t n, std::uint64_t seed) {
  const auto spec = default_phantom_spec(1);
  PoseSampler sampler({}, seed);
  std::vector<Eigen::Vector3d> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(surface_pose(sampler.next(), spec).position);
  return out;
}

TEST(CarveHole, TinyAndHugeRadii) {
  const auto pos = sampled_positions(300, 3);
  const auto none = carve_hole(std::span<const Eigen::Vector3d>(pos), Eigen::Vector3d(0, 0, 400), 1.0);
  EXPECT_EQ(none.removed_fraction, 0.0);
  EXPECT_EQ(none.kept.size(), pos.size());
  const auto all = carve_hole(std::span<const Eigen::Vector3d>(pos), Eigen::Vector3d(0, 0, 60), 500.0);
  EXPECT_EQ(all.removed_fraction, 1.0);
  EXPECT_TRUE(all.kept.empty());
  EXPECT_THROW(carve_hole(std::span<const Eigen::Vector3d>(pos), Eigen::Vector3d::Zero(), 0.0), GeometryError);
}

TEST(CarveHole, OutputsPartitionTheInput) {
  const auto pos = sampled_positions(400, 8);
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const Eigen::Vector3d c(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(0, 150));
    const auto h = carve_hole(std::span<const Eigen::Vector3d>(pos), c, rng.uniform(0.1, 150));
    std::vector<int> seen(pos.size(), 0);
    for (auto i : h.kept) ++seen[i];
    for (auto i : h.removed) ++seen[i];
    for (int s : seen) EXPECT_EQ(s, 1);
    EXPECT_DOUBLE_EQ(h.removed_fraction, static_cast<double>(h.removed.size()) / pos.size());
  }
}

TEST(CarveHole, FractionMatchesBruteForceScanAtASurfacePoint) {
  const auto pos = sampled_positions(2000, 12);
  const Eigen::Vector3d centre = surface_pose(10, -5, 0, 0, default_phantom_spec(1)).position;
  std::size_t inside = 0;
  for (const auto& p : pos) {
    const double dx = p.x() - centre.x(), dy = p.y() - centre.y(), dz = p.z() - centre.z();
    inside += std::sqrt(dx * dx + dy * dy + dz * dz) <= 30.0;
  }
  const auto h = carve_hole(std::span<const Eigen::Vector3d>(pos), centre, 30.0);
  EXPECT_EQ(h.removed.size(), inside);
  // Same order of magnitude as a 30 mm hole on a densely scanned phantom surface.
  EXPECT_GT(h.removed_fraction, 0.02);
  EXPECT_LT(h.removed_fraction, 0.5);
}

}  // namespace
}  // namespace ussim
