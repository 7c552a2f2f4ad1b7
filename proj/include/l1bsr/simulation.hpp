#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "l1bsr/core/errors.hpp"
#include "l1bsr/core/image.hpp"
#include "l1bsr/core/rng.hpp"
#include "l1bsr/geometry.hpp"
#include "l1bsr/imagery.hpp"

// Synthetic band-misaligned LR pairs with exact geometry from clean HR crops.
namespace l1bsr::simulation {

using geometry::Homography;

/// All distances in HR pixels unless stated otherwise.
struct SimulationParams {
  double blur_sigma = 0.7;
  double scene_corner_max = 5.8;         // per-corner displacement of each scene homography
  double band_translation_max = 4.0;     // per-component translation of band homographies
  double band_perturbation_max = 0.2;    // extra per-corner projective jitter of band homographies
  double noise_std = 0.001;              // fraction of the [0,1] range
  double source_band_misalignment = 0.0; // residual band shifts already in the clean crop
  std::uint64_t seed = 0;

  /// Worst-case per-component displacement between any band of I0 and any
  /// band of I1, in LR pixels.
  double max_distortion_lr() const {
    return scene_corner_max + band_translation_max + band_perturbation_max +
           source_band_misalignment;
  }

  void validate() const {
    if (!(blur_sigma >= 0)) throw ConfigError("simulation: blur_sigma must be >= 0");
    if (!(noise_std >= 0)) throw ConfigError("simulation: noise_std must be >= 0");
    if (scene_corner_max < 0 || band_translation_max < 0 || band_perturbation_max < 0 ||
        source_band_misalignment < 0)
      throw ConfigError("simulation: ranges must be >= 0");
    if (band_perturbation_max * 10.0 > band_translation_max && band_perturbation_max > 0)
      throw ConfigError("simulation: band perturbation must be at least 10x below the translation");
    if (max_distortion_lr() > 10.0 + 1e-12)
      throw ConfigError("simulation: total distortion exceeds 10 LR pixels");
  }
};

inline void to_json(nlohmann::json& j, const SimulationParams& p) {
  j = {{"blur_sigma", p.blur_sigma},
       {"scene_corner_max", p.scene_corner_max},
       {"band_translation_max", p.band_translation_max},
       {"band_perturbation_max", p.band_perturbation_max},
       {"noise_std", p.noise_std},
       {"source_band_misalignment", p.source_band_misalignment},
       {"seed", p.seed}};
}

inline std::array<std::array<double, 2>, 4> corners(int width, int height) {
  const double w = width - 1, h = height - 1;
  return {{{0, 0}, {w, 0}, {w, h}, {0, h}}};
}

/// Identity-centred projective map whose four image corners move by
/// independent uniform offsets in [-scene_corner_max, scene_corner_max].
inline Homography sample_scene_homography(Rng& rng, const SimulationParams& p, int width,
                                          int height) {
  const auto src = corners(width, height);
  auto dst = src;
  for (auto& c : dst) {
    c[0] += rng.uniform(-p.scene_corner_max, p.scene_corner_max);
    c[1] += rng.uniform(-p.scene_corner_max, p.scene_corner_max);
  }
  if (p.scene_corner_max == 0) return Homography::identity();
  return Homography::from_correspondences(src, dst);
}

/// Translation-dominant map: one uniform translation plus a much smaller
/// independent per-corner perturbation.
inline Homography sample_band_homography(Rng& rng, const SimulationParams& p, int width,
                                         int height) {
  const double tx = rng.uniform(-p.band_translation_max, p.band_translation_max);
  const double ty = rng.uniform(-p.band_translation_max, p.band_translation_max);
  if (p.band_perturbation_max == 0) return Homography::translation(tx, ty);
  const auto src = corners(width, height);
  auto dst = src;
  for (auto& c : dst) {
    c[0] += tx + rng.uniform(-p.band_perturbation_max, p.band_perturbation_max);
    c[1] += ty + rng.uniform(-p.band_perturbation_max, p.band_perturbation_max);
  }
  return Homography::from_correspondences(src, dst);
}

using geometry::gaussian_blur;

/// Homographies of one simulated pair, in HR pixel coordinates of the crop.
/// Image t is I_t^HR(p) = B(scene[t] p); band i of image t samples
/// I_t^HR(band[t][i] p). band[t][g] is always the identity.
struct PairGeometry {
  std::array<Homography, 2> scene;
  std::array<std::array<Homography, kNumBands>, 2> band;
};

/// Ground-truth LR flow F_{I1,tgt -> I0,ref}: on I1's band `tgt_band` grid,
/// pointing into I0's band `ref_band`.
inline FlowField<float> gt_flow(const PairGeometry& g, int ref_band, int tgt_band, int lr_height,
                                int lr_width) {
  const Homography to_ref = (g.scene[0] * g.band[0][ref_band]).inverse();
  const Homography hr_map = to_ref * (g.scene[1] * g.band[1][tgt_band]);
  return geometry::homography_to_flow<float>(hr_map.rescaled(2.0), lr_height, lr_width);
}

inline nlohmann::json to_json(const PairGeometry& g) {
  nlohmann::json j;
  for (int t = 0; t < 2; ++t) {
    j["scene"].push_back(g.scene[t].matrix());
    nlohmann::json bands;
    for (int i = 0; i < kNumBands; ++i) bands.push_back(g.band[t][i].matrix());
    j["band"].push_back(bands);
  }
  return j;
}

inline PairGeometry geometry_from_json(const nlohmann::json& j) {
  PairGeometry g;
  try {
    for (int t = 0; t < 2; ++t) {
      g.scene[t] = Homography(j.at("scene").at(t).get<std::array<double, 9>>());
      for (int i = 0; i < kNumBands; ++i)
        g.band[t][i] = Homography(j.at("band").at(t).at(i).get<std::array<double, 9>>());
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("malformed pair geometry: ") + ex.what());
  }
  return g;
}

struct SimulatedPair {
  MultiBandImage i0, i1;        // LR, H x W x 4
  MultiBandImage hr0, hr1;      // 2H x 2W x 4, aligned with I0,g and I1,g
  std::array<FlowField<float>, kNumBands> flows;  // F_{I1,i -> I0,g}
  PairGeometry geometry;
};

namespace detail {

inline void clamp01(Image<float>& im) {
  for (auto& v : im.data()) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace detail

/// One band-misaligned pair from a clean HR crop:
///   B = blur(crop); I_t^HR = H_t(B);
///   I_{t,g} = decimate(I_{t,g}^HR) + n;  I_{t,i} = decimate(H_{t,i}(I_{t,i}^HR)) + n.
/// Resampled HR images and noisy LR images are clamped into [0,1].
inline SimulatedPair simulate_pair(const MultiBandImage& hr_crop, const SimulationParams& p,
                                   Rng& rng) {
  p.validate();
  check_multiband(hr_crop);
  require(hr_crop.height() % 2 == 0 && hr_crop.width() % 2 == 0,
          "simulate_pair: HR crop dimensions must be even");
  require(std::all_of(hr_crop.data().begin(), hr_crop.data().end(),
                      [](float v) { return v >= 0.0f && v <= 1.0f; }),
          "simulate_pair: HR crop values must lie in [0,1]");
  const int h = hr_crop.height(), w = hr_crop.width();
  const int g = static_cast<int>(Band::g);

  MultiBandImage source = hr_crop;
  if (p.source_band_misalignment > 0) {
    for (int i = 0; i < kNumBands; ++i) {
      if (i == g) continue;
      const double tx = rng.uniform(-p.source_band_misalignment, p.source_band_misalignment);
      const double ty = rng.uniform(-p.source_band_misalignment, p.source_band_misalignment);
      source.set_channel(i, geometry::apply_homography(source.channel(i),
                                                       Homography::translation(tx, ty)));
    }
    detail::clamp01(source);
  }
  const MultiBandImage blurred = gaussian_blur(source, p.blur_sigma);

  SimulatedPair out;
  for (int t = 0; t < 2; ++t) out.geometry.scene[t] = sample_scene_homography(rng, p, w, h);
  for (int t = 0; t < 2; ++t)
    for (int i = 0; i < kNumBands; ++i)
      out.geometry.band[t][i] = i == g ? Homography::identity() : sample_band_homography(rng, p, w, h);

  std::array<MultiBandImage*, 2> lr = {&out.i0, &out.i1};
  std::array<MultiBandImage*, 2> hr = {&out.hr0, &out.hr1};
  for (int t = 0; t < 2; ++t) {
    *hr[t] = geometry::apply_homography(blurred, out.geometry.scene[t]);
    detail::clamp01(*hr[t]);
    *lr[t] = MultiBandImage(kNumBands, h / 2, w / 2);
    for (int i = 0; i < kNumBands; ++i) {
      const Image<float> band =
          i == g ? hr[t]->channel(i)
                 : geometry::apply_homography(hr[t]->channel(i), out.geometry.band[t][i]);
      lr[t]->set_channel(i, geometry::subsample(band));
    }
  }
  if (p.noise_std > 0)
    for (int t = 0; t < 2; ++t)
      for (auto& v : lr[t]->data()) v += static_cast<float>(p.noise_std * rng.normal());
  for (int t = 0; t < 2; ++t) detail::clamp01(*lr[t]);

  for (int i = 0; i < kNumBands; ++i) out.flows[i] = gt_flow(out.geometry, g, i, h / 2, w / 2);
  return out;
}

// ---------------------------------------------------------------------------
// Procedural clean HR scenes

/// Multi-octave value noise, octave amplitude growing as cell^0.6 (a little
/// flatter than 1/f), normalized to zero mean and unit deviation.
inline Image<double> fractal_noise(Rng& rng, int height, int width) {
  Image<double> out(1, height, width);
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  for (int cell = 2; cell <= 32; cell *= 2) {
    const int gh = height / cell + 2, gw = width / cell + 2;
    std::vector<double> lattice(static_cast<std::size_t>(gh) * gw);
    for (double& v : lattice) v = rng.normal();
    const double amp = std::pow(static_cast<double>(cell), 0.6);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const int cy = y / cell, cx = x / cell;
        const double ty = smooth((y % cell + 0.5) / cell), tx = smooth((x % cell + 0.5) / cell);
        auto at = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy) * gw + xx]; };
        const double top = at(cy, cx) + tx * (at(cy, cx + 1) - at(cy, cx));
        const double bot = at(cy + 1, cx) + tx * (at(cy + 1, cx + 1) - at(cy + 1, cx));
        out(0, y, x) += amp * (top + ty * (bot - top));
      }
  }
  double mean = 0, sq = 0;
  for (double v : out.data()) mean += v;
  mean /= static_cast<double>(out.size());
  for (double v : out.data()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(out.size())) + 1e-12;
  for (double& v : out.data()) v = (v - mean) / sd;
  return out;
}

/// Piecewise land-cover scene with per-material 4-band reflectance, fractal
/// texture, occasional crop rows, roads and small buildings. Bands share edges
/// but not contrasts (vegetation is dark in red and bright in near-infrared,
/// water is dark in near-infrared). Values in [0,1].
inline MultiBandImage synthesize_scene(Rng& rng, int height, int width) {
  struct Material {
    std::array<double, kNumBands> refl;
    double texture_amp;
    double row_amp;
    double period;
    double angle;
  };
  auto range = [&](double lo, double hi) { return rng.uniform(lo, hi); };
  auto make_material = [&](int kind) {
    Material m{};
    switch (kind) {
      case 0:  // vegetation
        m.refl = {range(0.06, 0.12), range(0.14, 0.26), range(0.06, 0.16), range(0.55, 0.85)};
        break;
      case 1:  // bare soil
        m.refl = {range(0.20, 0.30), range(0.27, 0.40), range(0.35, 0.55), range(0.45, 0.65)};
        break;
      case 2:  // water
        m.refl = {range(0.10, 0.16), range(0.08, 0.14), range(0.04, 0.10), range(0.01, 0.04)};
        break;
      case 3:  // built-up
        m.refl = {range(0.25, 0.40), range(0.25, 0.40), range(0.27, 0.44), range(0.30, 0.48)};
        break;
      default:  // bright roofs / sand
        m.refl = {range(0.55, 0.80), range(0.55, 0.82), range(0.58, 0.85), range(0.55, 0.85)};
        break;
    }
    m.texture_amp = range(0.05, 0.25);
    // Crop rows on some vegetation and soil parcels, well above the LR pitch.
    m.row_amp = kind <= 1 && rng.uniform_int(2) == 0 ? range(0.03, 0.12) : 0.0;
    m.period = range(8.0, 20.0);
    m.angle = range(0.0, M_PI);
    return m;
  };

  const int parcels = std::max(6, (height * width) / (28 * 28));
  std::vector<std::array<double, 2>> seeds(parcels);
  std::vector<Material> mats(parcels);
  for (int k = 0; k < parcels; ++k) {
    seeds[k] = {range(0, width), range(0, height)};
    mats[k] = make_material(rng.uniform_int(5));
  }

  const Image<double> noise = fractal_noise(rng, height, width);
  MultiBandImage out(kNumBands, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      int best = 0;
      double bd = 1e300;
      for (int k = 0; k < parcels; ++k) {
        const double dx = x - seeds[k][0], dy = y - seeds[k][1];
        const double d = dx * dx + dy * dy;
        if (d < bd) bd = d, best = k;
      }
      const Material& m = mats[best];
      const double phase = (x * std::cos(m.angle) + y * std::sin(m.angle)) * 2.0 * M_PI / m.period;
      const double tex = std::max(0.2, 1.0 + m.texture_amp * noise(0, y, x) + m.row_amp * std::sin(phase));
      for (int b = 0; b < kNumBands; ++b) out(b, y, x) = static_cast<float>(m.refl[b] * tex);
    }

  // Roads: straight bands 1-3 px wide.
  const int roads = 1 + rng.uniform_int(3);
  for (int r = 0; r < roads; ++r) {
    const double a = range(0, M_PI), c = range(0, std::hypot(width, height)) - 0.5 * std::hypot(width, height);
    const double half = range(0.5, 1.5);
    const Material m = make_material(3);
    const double cx = width / 2.0, cy = height / 2.0;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double d = (x - cx) * std::cos(a) + (y - cy) * std::sin(a) - c;
        if (std::abs(d) <= half)
          for (int b = 0; b < kNumBands; ++b) out(b, y, x) = static_cast<float>(m.refl[b]);
      }
  }

  // Small rotated buildings.
  const int buildings = (height * width) / 900;
  for (int k = 0; k < buildings; ++k) {
    const double cx = range(0, width), cy = range(0, height);
    const double hw = range(1.0, 4.0), hh = range(1.0, 4.0), a = range(0, M_PI);
    const Material m = make_material(rng.uniform_int(2) == 0 ? 4 : 3);
    const int x0 = std::max(0, static_cast<int>(cx - 6)), x1 = std::min(width - 1, static_cast<int>(cx + 6));
    const int y0 = std::max(0, static_cast<int>(cy - 6)), y1 = std::min(height - 1, static_cast<int>(cy + 6));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double u = (x - cx) * std::cos(a) + (y - cy) * std::sin(a);
        const double v = -(x - cx) * std::sin(a) + (y - cy) * std::cos(a);
        if (std::abs(u) <= hw && std::abs(v) <= hh)
          for (int b = 0; b < kNumBands; ++b) out(b, y, x) = static_cast<float>(m.refl[b]);
      }
  }

  // Fine multiplicative grain, shared across bands. The final affine map
  // keeps a margin to 0 and 1 so bicubic overshoot is not clipped later.
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double grain = 1.0 + 0.03 * rng.normal();
      for (int b = 0; b < kNumBands; ++b) {
        const double v = std::clamp(out(b, y, x) * grain, 0.0, 1.0);
        out(b, y, x) = static_cast<float>(0.05 + 0.9 * v);
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets on disk

/// Non-overlapping square crops of a multiband raster, row-major order.
inline std::vector<MultiBandImage> tile_crops(const MultiBandImage& image, int crop) {
  require(crop > 0 && crop % 2 == 0, "tile_crops: crop size must be positive and even");
  if (image.height() < crop || image.width() < crop)
    throw DataError("raster " + std::to_string(image.width()) + "x" +
                    std::to_string(image.height()) + " is smaller than crop " + std::to_string(crop));
  std::vector<MultiBandImage> out;
  for (int y = 0; y + crop <= image.height(); y += crop)
    for (int x = 0; x + crop <= image.width(); x += crop) out.push_back(image.crop(y, x, crop, crop));
  return out;
}

inline std::string pair_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

/// Simulates one pair per crop (seed of pair k = base seed XOR k) and writes
/// `<root>/manifest.json` and `<root>/pairs/<id>/...`.
inline imagery::DatasetManifest write_dataset(const std::vector<MultiBandImage>& crops,
                                              const SimulationParams& params,
                                              const std::filesystem::path& root,
                                              const std::string& split) {
  namespace fs = std::filesystem;
  params.validate();
  require(!crops.empty(), "write_dataset: no crops");
  imagery::DatasetManifest manifest;
  manifest.split = split;
  manifest.seed = params.seed;
  for (std::size_t k = 0; k < crops.size(); ++k) {
    Rng rng(params.seed ^ static_cast<std::uint64_t>(k));
    const SimulatedPair pair = simulate_pair(crops[k], params, rng);
    const std::string id = pair_id(k);
    const fs::path rel = fs::path("pairs") / id;
    const fs::path dir = root / rel;
    fs::create_directories(dir);
    imagery::save_raster(pair.i0, dir / "I0.tif", imagery::BitDepth::u16);
    imagery::save_raster(pair.i1, dir / "I1.tif", imagery::BitDepth::u16);
    imagery::save_raster(pair.hr0, dir / "hr0.tif", imagery::BitDepth::f32);
    imagery::save_raster(pair.hr1, dir / "hr1.tif", imagery::BitDepth::f32);
    std::map<std::string, std::string> flows;
    for (int i = 0; i < kNumBands; ++i) {
      const std::string name = std::string("flow_g_to_") + kBandNames[i] + ".tif";
      imagery::save_flow(pair.flows[i], dir / name);
      flows[std::string(1, kBandNames[i])] = (rel / name).generic_string();
    }
    imagery::write_text(dir / "geometry.json", to_json(pair.geometry).dump(2) + "\n");
    manifest.entries.push_back({id, (rel / "I0.tif").generic_string(),
                                (rel / "I1.tif").generic_string(), flows,
                                std::array<std::string, 2>{(rel / "hr0.tif").generic_string(),
                                                           (rel / "hr1.tif").generic_string()}});
  }
  imagery::write_manifest(root, manifest);
  return manifest;
}

/// One decoded manifest entry. Ground truth is present only for simulated data.
struct DatasetItem {
  std::string id;
  MultiBandImage i0, i1;
  std::optional<std::array<FlowField<float>, kNumBands>> flows;
  std::optional<std::array<MultiBandImage, 2>> hr;
  std::optional<PairGeometry> geometry;
};

struct Dataset {
  imagery::DatasetManifest manifest;
  std::vector<DatasetItem> items;
};

inline Dataset load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  Dataset ds;
  ds.manifest = imagery::read_manifest(root);
  for (const auto& e : ds.manifest.entries) {
    DatasetItem item;
    item.id = e.id;
    item.i0 = imagery::load_raster(root / e.i0);
    item.i1 = imagery::load_raster(root / e.i1);
    check_multiband(item.i0);
    check_multiband(item.i1);
    require(item.i0.same_shape(item.i1), "pair " + e.id + ": I0 and I1 shapes differ");
    if (e.flows) {
      std::array<FlowField<float>, kNumBands> flows;
      for (int i = 0; i < kNumBands; ++i) {
        auto it = e.flows->find(std::string(1, kBandNames[i]));
        require(it != e.flows->end(), "pair " + e.id + ": missing flow for band " + kBandNames[i]);
        flows[i] = imagery::load_flow(root / it->second);
        require(flows[i].same_grid(item.i0), "pair " + e.id + ": flow grid mismatch");
      }
      item.flows = std::move(flows);
    }
    if (e.hr) {
      std::array<MultiBandImage, 2> hr{imagery::load_raster(root / (*e.hr)[0]),
                                       imagery::load_raster(root / (*e.hr)[1])};
      for (const auto& h : hr)
        require(h.channels() == kNumBands && h.height() == 2 * item.i0.height() &&
                    h.width() == 2 * item.i0.width(),
                "pair " + e.id + ": HR ground truth must be twice the LR size");
      item.hr = std::move(hr);
    }
    const fs::path geo = (root / e.i0).parent_path() / "geometry.json";
    if (fs::exists(geo)) {
      try {
        item.geometry = geometry_from_json(nlohmann::json::parse(imagery::read_text(geo)));
      } catch (const nlohmann::json::parse_error& ex) {
        throw DataError("pair " + e.id + ": bad geometry.json: " + ex.what());
      }
    }
    ds.items.push_back(std::move(item));
  }
  require(!ds.items.empty(), "dataset " + root.string() + " has no entries");
  return ds;
}

}  // namespace l1bsr::simulation
