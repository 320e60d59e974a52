#pragma once

// Procedural half-ellipsoid phantom: a voxel volume of echo intensity, attenuation and
// structure labels, with speckle baked into the intensity so it is coherent across views.

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "ussim/core/error.hpp"
#include "ussim/core/hash.hpp"
#include "ussim/tensor/rng.hpp"

namespace ussim {

inline constexpr double kVoxelSpacingMm = 0.5;

struct Primitive {
  enum class Kind { kEllipsoid, kTube };

  Kind kind = Kind::kEllipsoid;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();     // ellipsoid
  Eigen::Vector3d semi_axes = Eigen::Vector3d::Ones();  // ellipsoid, axis aligned
  Eigen::Vector3d start = Eigen::Vector3d::Zero();      // tube
  Eigen::Vector3d end = Eigen::Vector3d::Zero();        // tube
  double radius = 1.0;                                  // tube
  double intensity = 0.5;
  double attenuation = 0.0;  // 1/mm
  bool reverberation = false;

  bool contains(const Eigen::Vector3d& p) const {
    if (kind == Kind::kEllipsoid) return ((p - center).array() / semi_axes.array()).square().sum() <= 1.0;
    const Eigen::Vector3d axis = end - start;
    const double len2 = axis.squaredNorm();
    const double t = len2 > 0 ? std::clamp((p - start).dot(axis) / len2, 0.0, 1.0) : 0.0;
    return (p - (start + t * axis)).squaredNorm() <= radius * radius;
  }

  // Axis-aligned bounding box (min, max).
  std::pair<Eigen::Vector3d, Eigen::Vector3d> bounds() const {
    if (kind == Kind::kEllipsoid) return {center - semi_axes, center + semi_axes};
    const Eigen::Vector3d r = Eigen::Vector3d::Constant(radius);
    return {start.cwiseMin(end) - r, start.cwiseMax(end) + r};
  }

  // Points that must lie inside the phantom body for the primitive to be accepted.
  std::vector<Eigen::Vector3d> extreme_points() const {
    std::vector<Eigen::Vector3d> pts;
    auto around = [&](const Eigen::Vector3d& c, const Eigen::Vector3d& r) {
      pts.push_back(c);
      for (int a = 0; a < 3; ++a) {
        Eigen::Vector3d d = Eigen::Vector3d::Zero();
        d[a] = r[a];
        pts.push_back(c + d);
        pts.push_back(c - d);
      }
    };
    if (kind == Kind::kEllipsoid) {
      around(center, semi_axes);
    } else {
      around(start, Eigen::Vector3d::Constant(radius));
      around(end, Eigen::Vector3d::Constant(radius));
    }
    return pts;
  }
};

struct PhantomSpec {
  // Body: upper half of an axis-aligned ellipsoid centred at (0, 0, base_z).
  Eigen::Vector3d semi_axes{100.0, 100.0, 120.0};
  double base_z = 0.0;
  double background_intensity = 0.35;
  double background_attenuation = 0.004;
  std::vector<Primitive> primitives;
  double speckle_scale_mm = 1.0;
  double speckle_amplitude = 0.3;
  std::uint64_t seed = 1;

  bool in_body(const Eigen::Vector3d& p) const {
    if (p.z() < base_z) return false;
    const Eigen::Vector3d q(p.x() / semi_axes.x(), p.y() / semi_axes.y(), (p.z() - base_z) / semi_axes.z());
    return q.squaredNorm() <= 1.0;
  }
};

// Throws GeometryError on invalid values or primitives that leave the body.
inline void validate(const PhantomSpec& spec) {
  if ((spec.semi_axes.array() <= 0).any()) throw GeometryError("phantom semi-axes must be positive");
  auto check_unit = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw GeometryError(std::string(what) + " must be in [0, 1]");
  };
  check_unit(spec.background_intensity, "background intensity");
  if (!(spec.background_attenuation >= 0)) throw GeometryError("background attenuation must be >= 0");
  if (!(spec.speckle_scale_mm > 0)) throw GeometryError("speckle scale must be positive");
  if (!(spec.speckle_amplitude >= 0 && spec.speckle_amplitude < 1)) throw GeometryError("speckle amplitude must be in [0, 1)");
  if (spec.primitives.size() > 254) throw GeometryError("at most 254 primitives");
  for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
    const auto& p = spec.primitives[i];
    const std::string tag = "primitive " + std::to_string(i);
    check_unit(p.intensity, (tag + " intensity").c_str());
    if (!(p.attenuation >= 0)) throw GeometryError(tag + " attenuation must be >= 0");
    if (p.kind == Primitive::Kind::kEllipsoid && (p.semi_axes.array() <= 0).any())
      throw GeometryError(tag + " semi-axes must be positive");
    if (p.kind == Primitive::Kind::kTube && !(p.radius > 0)) throw GeometryError(tag + " radius must be positive");
    for (const auto& q : p.extreme_points()) {
      if (!spec.in_body(q)) throw GeometryError(tag + " extends outside the phantom body");
    }
  }
}

inline constexpr std::uint8_t kLabelTissue = 0;
inline constexpr std::uint8_t kLabelOutside = 255;

// Voxel grid on a 0.5 mm lattice. Voxel (i, j, k) sits at origin + spacing * (i, j, k).
struct Volume {
  std::array<std::size_t, 3> dims{};
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  double spacing = kVoxelSpacingMm;
  std::vector<float> intensity;
  std::vector<float> attenuation;
  std::vector<std::uint8_t> labels;  // 0 tissue, k+1 primitive k, 255 outside the body

  // Per label (index = label): echo brightness used for reverberation ghosts.
  std::vector<float> label_intensity;
  std::vector<bool> label_reverberates;

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (k * dims[1] + j) * dims[0] + i; }
  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }

  Eigen::Vector3d extent_min() const { return origin; }
  Eigen::Vector3d extent_max() const {
    return origin + spacing * Eigen::Vector3d(dims[0] - 1.0, dims[1] - 1.0, dims[2] - 1.0);
  }

  bool inside(const Eigen::Vector3d& p) const {
    return (p.array() >= extent_min().array()).all() && (p.array() <= extent_max().array()).all();
  }

  // Trilinear interpolation; zero outside the grid.
  float sample(const std::vector<float>& grid, const Eigen::Vector3d& p) const {
    const Eigen::Vector3d f = (p - origin) / spacing;
    if ((f.array() < 0).any()) return 0.f;
    const auto i0 = static_cast<std::size_t>(f.x()), j0 = static_cast<std::size_t>(f.y()),
               k0 = static_cast<std::size_t>(f.z());
    if (i0 >= dims[0] || j0 >= dims[1] || k0 >= dims[2]) return 0.f;
    const std::size_t i1 = std::min(i0 + 1, dims[0] - 1), j1 = std::min(j0 + 1, dims[1] - 1),
                      k1 = std::min(k0 + 1, dims[2] - 1);
    const float tx = static_cast<float>(f.x() - i0), ty = static_cast<float>(f.y() - j0),
                tz = static_cast<float>(f.z() - k0);
    auto v = [&](std::size_t i, std::size_t j, std::size_t k) { return grid[index(i, j, k)]; };
    const float c00 = v(i0, j0, k0) + tx * (v(i1, j0, k0) - v(i0, j0, k0));
    const float c10 = v(i0, j1, k0) + tx * (v(i1, j1, k0) - v(i0, j1, k0));
    const float c01 = v(i0, j0, k1) + tx * (v(i1, j0, k1) - v(i0, j0, k1));
    const float c11 = v(i0, j1, k1) + tx * (v(i1, j1, k1) - v(i0, j1, k1));
    const float c0 = c00 + ty * (c10 - c00);
    const float c1 = c01 + ty * (c11 - c01);
    return c0 + tz * (c1 - c0);
  }

  std::uint8_t label_at(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d f = (p - origin) / spacing + Eigen::Vector3d::Constant(0.5);
    if ((f.array() < 0).any()) return kLabelOutside;
    const auto i = static_cast<std::size_t>(f.x()), j = static_cast<std::size_t>(f.y()),
               k = static_cast<std::size_t>(f.z());
    if (i >= dims[0] || j >= dims[1] || k >= dims[2]) return kLabelOutside;
    return labels[index(i, j, k)];
  }

  std::uint64_t content_hash() const {
    Fnv1a h;
    h.update(dims.data(), sizeof dims);
    h.update(origin.data(), 3 * sizeof(double));
    h.update(std::span<const float>(intensity));
    h.update(std::span<const float>(attenuation));
    h.update(std::span<const std::uint8_t>(labels));
    return h.digest();
  }
};

namespace detail {

// Lattice value noise in [-1, 1], smoothstep-interpolated, lattice pitch `scale` mm.
class SpeckleField {
 public:
  SpeckleField(std::uint64_t seed, double scale) : seed_(mix64(seed ^ 0x5eed5eed5eedULL)), inv_scale_(1.0 / scale) {}

  double operator()(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d q = p * inv_scale_;
    const Eigen::Vector3d fl = q.array().floor();
    const Eigen::Vector3d t = q - fl;
    const Eigen::Vector3d s = t.array().square() * (3.0 - 2.0 * t.array());
    const auto ix = static_cast<std::int64_t>(fl.x()), iy = static_cast<std::int64_t>(fl.y()),
               iz = static_cast<std::int64_t>(fl.z());
    double acc = 0;
    for (int c = 0; c < 8; ++c) {
      const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
      const double w = (dx ? s.x() : 1 - s.x()) * (dy ? s.y() : 1 - s.y()) * (dz ? s.z() : 1 - s.z());
      acc += w * lattice(ix + dx, iy + dy, iz + dz);
    }
    return acc;
  }

 private:
  double lattice(std::int64_t i, std::int64_t j, std::int64_t k) const {
    std::uint64_t h = seed_;
    h = mix64(h ^ static_cast<std::uint64_t>(i));
    h = mix64(h ^ static_cast<std::uint64_t>(j));
    h = mix64(h ^ static_cast<std::uint64_t>(k));
    return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
  }

  std::uint64_t seed_;
  double inv_scale_;
};

}  // namespace detail

inline Volume build_phantom(const PhantomSpec& spec) {
  validate(spec);
  Volume vol;
  const double h = kVoxelSpacingMm;
  vol.spacing = h;
  vol.origin = Eigen::Vector3d(-spec.semi_axes.x(), -spec.semi_axes.y(), spec.base_z);
  for (int a = 0; a < 3; ++a) {
    const double extent = a < 2 ? 2.0 * spec.semi_axes[a] : spec.semi_axes[a];
    vol.dims[a] = static_cast<std::size_t>(std::floor(extent / h + 1e-9)) + 1;
  }
  const std::size_t n = vol.voxel_count();
  vol.intensity.assign(n, 0.f);
  vol.attenuation.assign(n, 0.f);
  vol.labels.assign(n, kLabelOutside);

  auto position = [&](std::size_t i, std::size_t j, std::size_t k) {
    return Eigen::Vector3d(vol.origin.x() + h * i, vol.origin.y() + h * j, vol.origin.z() + h * k);
  };

  for (std::size_t k = 0; k < vol.dims[2]; ++k)
    for (std::size_t j = 0; j < vol.dims[1]; ++j)
      for (std::size_t i = 0; i < vol.dims[0]; ++i) {
        if (!spec.in_body(position(i, j, k))) continue;
        const auto idx = vol.index(i, j, k);
        vol.labels[idx] = kLabelTissue;
        vol.intensity[idx] = static_cast<float>(spec.background_intensity);
        vol.attenuation[idx] = static_cast<float>(spec.background_attenuation);
      }

  // Later primitives overwrite earlier ones where they overlap.
  for (std::size_t p = 0; p < spec.primitives.size(); ++p) {
    const auto& prim = spec.primitives[p];
    auto [lo, hi] = prim.bounds();
    std::array<std::size_t, 3> i0{}, i1{};
    for (int a = 0; a < 3; ++a) {
      const double l = std::max(0.0, std::floor((lo[a] - vol.origin[a]) / h));
      const double u = std::min(static_cast<double>(vol.dims[a] - 1), std::ceil((hi[a] - vol.origin[a]) / h));
      i0[a] = static_cast<std::size_t>(l);
      i1[a] = static_cast<std::size_t>(std::max(l, u));
    }
    for (std::size_t k = i0[2]; k <= i1[2]; ++k)
      for (std::size_t j = i0[1]; j <= i1[1]; ++j)
        for (std::size_t i = i0[0]; i <= i1[0]; ++i) {
          const auto idx = vol.index(i, j, k);
          if (vol.labels[idx] == kLabelOutside || !prim.contains(position(i, j, k))) continue;
          vol.labels[idx] = static_cast<std::uint8_t>(p + 1);
          vol.intensity[idx] = static_cast<float>(prim.intensity);
          vol.attenuation[idx] = static_cast<float>(prim.attenuation);
        }
  }

  if (spec.speckle_amplitude > 0) {
    const detail::SpeckleField speckle(spec.seed, spec.speckle_scale_mm);
    for (std::size_t k = 0; k < vol.dims[2]; ++k)
      for (std::size_t j = 0; j < vol.dims[1]; ++j)
        for (std::size_t i = 0; i < vol.dims[0]; ++i) {
          const auto idx = vol.index(i, j, k);
          if (vol.labels[idx] == kLabelOutside) continue;
          const double m = 1.0 + spec.speckle_amplitude * speckle(position(i, j, k));
          vol.intensity[idx] = static_cast<float>(std::clamp(vol.intensity[idx] * m, 0.0, 1.0));
        }
  }

  vol.label_intensity.assign(256, 0.f);
  vol.label_reverberates.assign(256, false);
  vol.label_intensity[kLabelTissue] = static_cast<float>(spec.background_intensity);
  for (std::size_t p = 0; p < spec.primitives.size(); ++p) {
    vol.label_intensity[p + 1] = static_cast<float>(spec.primitives[p].intensity);
    vol.label_reverberates[p + 1] = spec.primitives[p].reverberation;
  }
  return vol;
}

// Seeded default: 200 x 200 x 120 mm body with 4-8 interior structures, including one
// strongly attenuating reverberating structure and one tube.
inline PhantomSpec default_phantom_spec(std::uint64_t seed = 1) {
  PhantomSpec spec;
  spec.seed = seed;
  Rng rng(mix64(seed ^ 0xfa7a1ULL));
  const int count = 4 + static_cast<int>(rng.below(5));

  auto random_center = [&] {
    return Eigen::Vector3d(rng.uniform(-60, 60), rng.uniform(-60, 60), spec.base_z + rng.uniform(25, 85));
  };
  auto accept = [&](const Primitive& p) {
    for (const auto& q : p.extreme_points())
      if (!spec.in_body(q)) return false;
    return true;
  };

  for (int n = 0; n < count; ++n) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      Primitive p;
      if (n == 0) {
        p.center = random_center();
        p.semi_axes = Eigen::Vector3d(rng.uniform(30, 40), rng.uniform(25, 35), rng.uniform(18, 26));
        p.intensity = 0.75;
        p.attenuation = 0.01;
      } else if (n == 1) {
        p.center = random_center();
        p.semi_axes = Eigen::Vector3d(rng.uniform(8, 14), rng.uniform(8, 14), rng.uniform(4, 7));
        p.intensity = 0.95;
        p.attenuation = 0.35;
        p.reverberation = true;
      } else if (n == 2) {
        p.kind = Primitive::Kind::kTube;
        p.start = random_center();
        p.end = p.start + Eigen::Vector3d(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-20, 20));
        p.radius = rng.uniform(4, 8);
        p.intensity = 0.05;
        p.attenuation = 0.001;
      } else {
        p.center = random_center();
        p.semi_axes = Eigen::Vector3d(rng.uniform(12, 25), rng.uniform(12, 25), rng.uniform(10, 18));
        p.intensity = rng.uniform(0.1, 0.9);
        p.attenuation = rng.uniform(0.002, 0.03);
      }
      if (accept(p)) {
        spec.primitives.push_back(p);
        break;
      }
    }
  }
  return spec;
}

// ---- JSON config ------------------------------------------------------------

namespace detail {
inline nlohmann::json vec_json(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
inline Eigen::Vector3d json_vec(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != 3)
    throw ConfigError(std::string("phantom config: '") + key + "' must be a 3-element list");
  return {j[key][0].get<double>(), j[key][1].get<double>(), j[key][2].get<double>()};
}
}  // namespace detail

inline nlohmann::json to_json(const PhantomSpec& s) {
  nlohmann::json prims = nlohmann::json::array();
  for (const auto& p : s.primitives) {
    nlohmann::json j;
    if (p.kind == Primitive::Kind::kEllipsoid) {
      j["type"] = "ellipsoid";
      j["center"] = detail::vec_json(p.center);
      j["semi_axes"] = detail::vec_json(p.semi_axes);
    } else {
      j["type"] = "tube";
      j["start"] = detail::vec_json(p.start);
      j["end"] = detail::vec_json(p.end);
      j["radius"] = p.radius;
    }
    j["intensity"] = p.intensity;
    j["attenuation"] = p.attenuation;
    j["reverberation"] = p.reverberation;
    prims.push_back(j);
  }
  return {{"semi_axes", detail::vec_json(s.semi_axes)},
          {"base_z", s.base_z},
          {"background_intensity", s.background_intensity},
          {"background_attenuation", s.background_attenuation},
          {"speckle_scale_mm", s.speckle_scale_mm},
          {"speckle_amplitude", s.speckle_amplitude},
          {"seed", s.seed},
          {"primitives", prims}};
}

inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
  try {
    PhantomSpec s;
    s.semi_axes = detail::json_vec(j, "semi_axes");
    s.base_z = j.value("base_z", 0.0);
    s.background_intensity = j.value("background_intensity", s.background_intensity);
    s.background_attenuation = j.value("background_attenuation", s.background_attenuation);
    s.speckle_scale_mm = j.value("speckle_scale_mm", s.speckle_scale_mm);
    s.speckle_amplitude = j.value("speckle_amplitude", s.speckle_amplitude);
    s.seed = j.value("seed", std::uint64_t{1});
    for (const auto& pj : j.value("primitives", nlohmann::json::array())) {
      Primitive p;
      const auto type = pj.at("type").get<std::string>();
      if (type == "ellipsoid") {
        p.kind = Primitive::Kind::kEllipsoid;
        p.center = detail::json_vec(pj, "center");
        p.semi_axes = detail::json_vec(pj, "semi_axes");
      } else if (type == "tube") {
        p.kind = Primitive::Kind::kTube;
        p.start = detail::json_vec(pj, "start");
        p.end = detail::json_vec(pj, "end");
        p.radius = pj.at("radius").get<double>();
      } else {
        throw ConfigError("phantom config: unknown primitive type '" + type + "'");
      }
      p.intensity = pj.at("intensity").get<double>();
      p.attenuation = pj.at("attenuation").get<double>();
      p.reverberation = pj.value("reverberation", false);
      s.primitives.push_back(p);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("phantom config: ") + e.what());
  }
}

inline std::string spec_hash(const PhantomSpec& s) { return hash_hex(to_json(s).dump().data(), to_json(s).dump().size()); }

inline PhantomSpec load_phantom_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open phantom config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("phantom config " + path + ": " + e.what());
  }
  return phantom_spec_from_json(j);
}

inline void save_phantom_spec(const PhantomSpec& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write phantom config " + path);
  out << to_json(s).dump(2) << '\n';
}

}  // namespace ussim
