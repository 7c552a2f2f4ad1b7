#pragma once

#include <fftw3.h>
#include <tiffio.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "l1bsr/core/errors.hpp"
#include "l1bsr/core/image.hpp"

// Raster I/O, dataset manifests and integer pre-registration of overlapping
// acquisitions.
namespace l1bsr::imagery {

namespace fs = std::filesystem;

enum class BitDepth { u16, f32 };

/// How load_raster treats sample values.
enum class Ingest {
  normalized,  // imagery: u16 / 65535, float clamped into [0,1]
  raw,         // flows and other signed fields: float passed through
};

namespace detail {

struct TiffCloser {
  void operator()(TIFF* t) const {
    if (t) TIFFClose(t);
  }
};
using TiffHandle = std::unique_ptr<TIFF, TiffCloser>;

inline void quiet_libtiff() {
  static const bool once = [] {
    TIFFSetWarningHandler(nullptr);
    TIFFSetErrorHandler(nullptr);
    return true;
  }();
  (void)once;
}

}  // namespace detail

/// Writes a strip-organized, uncompressed, pixel-interleaved TIFF with one
/// sample per channel. u16 clamps into [0,1] and rounds to 1/65535 steps;
/// f32 stores the values verbatim.
inline void save_raster(const Image<float>& image, const fs::path& path, BitDepth depth) {
  detail::quiet_libtiff();
  require(image.channels() >= 1 && image.height() > 0 && image.width() > 0,
          "save_raster: empty image");
  require(image.channels() == 1 || image.channels() == 2 || image.channels() == kNumBands,
          "save_raster: plane count must be 1, 2 or 4");
  require(image.all_finite(), "save_raster: non-finite values");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::TiffHandle tif(TIFFOpen(path.string().c_str(), "w"));
  if (!tif) throw DataError("cannot open for writing: " + path.string());
  const int c = image.channels(), h = image.height(), w = image.width();
  const bool f32 = depth == BitDepth::f32;
  TIFF* t = tif.get();
  TIFFSetField(t, TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(w));
  TIFFSetField(t, TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(h));
  TIFFSetField(t, TIFFTAG_SAMPLESPERPIXEL, static_cast<std::uint16_t>(c));
  TIFFSetField(t, TIFFTAG_BITSPERSAMPLE, static_cast<std::uint16_t>(f32 ? 32 : 16));
  TIFFSetField(t, TIFFTAG_SAMPLEFORMAT, f32 ? SAMPLEFORMAT_IEEEFP : SAMPLEFORMAT_UINT);
  TIFFSetField(t, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
  TIFFSetField(t, TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
  TIFFSetField(t, TIFFTAG_COMPRESSION, COMPRESSION_NONE);
  TIFFSetField(t, TIFFTAG_ROWSPERSTRIP, static_cast<std::uint32_t>(1));
  if (c > 1) {
    std::vector<std::uint16_t> extra(c - 1, EXTRASAMPLE_UNSPECIFIED);
    TIFFSetField(t, TIFFTAG_EXTRASAMPLES, static_cast<std::uint16_t>(c - 1), extra.data());
  }
  std::vector<unsigned char> line(static_cast<std::size_t>(w) * c * (f32 ? 4 : 2));
  for (int y = 0; y < h; ++y) {
    if (f32) {
      auto* p = reinterpret_cast<float*>(line.data());
      for (int x = 0; x < w; ++x)
        for (int k = 0; k < c; ++k) p[x * c + k] = image(k, y, x);
    } else {
      auto* p = reinterpret_cast<std::uint16_t*>(line.data());
      for (int x = 0; x < w; ++x)
        for (int k = 0; k < c; ++k) {
          const double v = std::clamp(static_cast<double>(image(k, y, x)), 0.0, 1.0);
          p[x * c + k] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
        }
    }
    if (TIFFWriteScanline(t, line.data(), static_cast<std::uint32_t>(y), 0) < 0)
      throw DataError("write failed: " + path.string());
  }
}

/// Reads a 1, 2 or 4 plane TIFF of 16-bit unsigned or 32-bit float samples,
/// pixel-interleaved or planar. Planes keep their stored order.
inline Image<float> load_raster(const fs::path& path, Ingest mode = Ingest::normalized) {
  detail::quiet_libtiff();
  detail::TiffHandle tif(TIFFOpen(path.string().c_str(), "r"));
  if (!tif) throw DataError("cannot read raster: " + path.string());
  TIFF* t = tif.get();
  std::uint32_t w = 0, h = 0;
  std::uint16_t spp = 1, bps = 0, fmt = SAMPLEFORMAT_UINT, planar = PLANARCONFIG_CONTIG;
  TIFFGetField(t, TIFFTAG_IMAGEWIDTH, &w);
  TIFFGetField(t, TIFFTAG_IMAGELENGTH, &h);
  TIFFGetFieldDefaulted(t, TIFFTAG_SAMPLESPERPIXEL, &spp);
  TIFFGetFieldDefaulted(t, TIFFTAG_BITSPERSAMPLE, &bps);
  TIFFGetFieldDefaulted(t, TIFFTAG_SAMPLEFORMAT, &fmt);
  TIFFGetFieldDefaulted(t, TIFFTAG_PLANARCONFIG, &planar);
  if (spp != 1 && spp != 2 && spp != 4)
    throw DataError(path.string() + ": plane count " + std::to_string(spp) + " not in {1,2,4}");
  const bool is_u16 = bps == 16 && fmt == SAMPLEFORMAT_UINT;
  const bool is_f32 = bps == 32 && fmt == SAMPLEFORMAT_IEEEFP;
  if (!is_u16 && !is_f32) throw DataError(path.string() + ": unsupported sample type");
  if (TIFFIsTiled(t)) throw DataError(path.string() + ": tiled TIFF not supported");

  Image<float> out(spp, static_cast<int>(h), static_cast<int>(w));
  std::vector<unsigned char> line(TIFFScanlineSize(t));
  auto decode = [&](const unsigned char* buf, std::size_t i) -> float {
    if (is_f32) return reinterpret_cast<const float*>(buf)[i];
    const float v = reinterpret_cast<const std::uint16_t*>(buf)[i];
    return mode == Ingest::normalized ? v / 65535.0f : v;
  };
  const int planes = planar == PLANARCONFIG_SEPARATE ? spp : 1;
  for (int s = 0; s < planes; ++s)
    for (std::uint32_t y = 0; y < h; ++y) {
      if (TIFFReadScanline(t, line.data(), y, static_cast<std::uint16_t>(s)) < 0)
        throw DataError("read failed: " + path.string());
      for (std::uint32_t x = 0; x < w; ++x) {
        if (planes == 1) {
          for (int k = 0; k < spp; ++k) out(k, y, x) = decode(line.data(), x * spp + k);
        } else {
          out(s, y, x) = decode(line.data(), x);
        }
      }
    }
  if (!out.all_finite()) throw DataError(path.string() + ": non-finite values");
  if (mode == Ingest::normalized && is_f32)
    for (auto& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

inline void save_flow(const FlowField<float>& flow, const fs::path& path) {
  save_raster(flow, path, BitDepth::f32);
}

inline FlowField<float> load_flow(const fs::path& path) {
  auto im = load_raster(path, Ingest::raw);
  if (im.channels() != 2) throw DataError(path.string() + ": flow raster must have 2 planes");
  return FlowField<float>(std::move(im));
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string id;
  std::string i0;
  std::string i1;
  std::optional<std::map<std::string, std::string>> flows;  // band name -> path
  std::optional<std::array<std::string, 2>> hr;
};

struct DatasetManifest {
  std::string split = "train";
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json j{{"id", e.id}, {"i0", e.i0}, {"i1", e.i1}};
    j["flows"] = e.flows ? nlohmann::json(*e.flows) : nlohmann::json(nullptr);
    j["hr"] = e.hr ? nlohmann::json(*e.hr) : nlohmann::json(nullptr);
    entries.push_back(std::move(j));
  }
  return {{"split", m.split}, {"seed", m.seed}, {"entries", entries}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.split = j.at("split").get<std::string>();
    if (m.split != "train" && m.split != "test")
      throw DataError("manifest split must be \"train\" or \"test\"");
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("entries")) {
      ManifestEntry me{e.at("id").get<std::string>(), e.at("i0").get<std::string>(),
                       e.at("i1").get<std::string>(), std::nullopt, std::nullopt};
      if (e.contains("flows") && !e["flows"].is_null())
        me.flows = e["flows"].get<std::map<std::string, std::string>>();
      if (e.contains("hr") && !e["hr"].is_null()) me.hr = e["hr"].get<std::array<std::string, 2>>();
      m.entries.push_back(std::move(me));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("malformed manifest: ") + ex.what());
  }
  return m;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_manifest(const fs::path& root, const DatasetManifest& m) {
  write_text(root / "manifest.json", to_json(m).dump(2) + "\n");
}

inline DatasetManifest read_manifest(const fs::path& root) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(root / "manifest.json"));
  } catch (const nlohmann::json::parse_error& ex) {
    throw DataError("manifest is not valid JSON: " + std::string(ex.what()));
  }
  return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// Integer pre-registration

struct Offset {
  int dx = 0;
  int dy = 0;
  friend bool operator==(const Offset&, const Offset&) = default;
};

/// Integer translation d such that b(x) ~ a(x - d), i.e. content of `a`
/// appears in `b` displaced by d. Phase correlation on mean-removed,
/// Hann-windowed bands.
inline Offset estimate_integer_offset(const BandImage& a, const BandImage& b) {
  require(a.channels() == 1 && b.channels() == 1, "estimate_integer_offset: single bands expected");
  require(a.same_shape(b), "estimate_integer_offset: shape mismatch");
  const int h = a.height(), w = a.width();
  const std::size_t n = a.size();
  auto prepare = [&](const BandImage& im, fftw_complex* dst) {
    double mean = 0;
    for (float v : im.data()) mean += v;
    mean /= static_cast<double>(n);
    double var = 0;
    for (float v : im.data()) var += (v - mean) * (v - mean);
    if (var / static_cast<double>(n) < 1e-14)
      throw DataError("estimate_integer_offset: constant image has no unique correlation peak");
    for (int y = 0; y < h; ++y) {
      const double wy = 0.5 - 0.5 * std::cos(2.0 * M_PI * (y + 0.5) / h);
      for (int x = 0; x < w; ++x) {
        const double wx = 0.5 - 0.5 * std::cos(2.0 * M_PI * (x + 0.5) / w);
        dst[y * w + x][0] = (im(0, y, x) - mean) * wy * wx;
        dst[y * w + x][1] = 0.0;
      }
    }
  };
  auto* fa = fftw_alloc_complex(n);
  auto* fb = fftw_alloc_complex(n);
  std::unique_ptr<fftw_complex, decltype(&fftw_free)> ga(fa, fftw_free), gb(fb, fftw_free);
  prepare(a, fa);
  prepare(b, fb);
  // Planner calls are not thread-safe in FFTW; execution is.
  static std::mutex planner;
  std::unique_lock lock(planner);
  fftw_plan pa = fftw_plan_dft_2d(h, w, fa, fa, FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_plan pb = fftw_plan_dft_2d(h, w, fb, fb, FFTW_FORWARD, FFTW_ESTIMATE);
  lock.unlock();
  fftw_execute(pa);
  fftw_execute(pb);
  for (std::size_t i = 0; i < n; ++i) {
    // conj(A) * B peaks at +d for b(x) = a(x - d).
    const std::complex<double> ca(fa[i][0], -fa[i][1]), cb(fb[i][0], fb[i][1]);
    std::complex<double> r = ca * cb;
    const double mag = std::abs(r);
    r = mag > 1e-20 ? r / mag : std::complex<double>(0, 0);
    fa[i][0] = r.real();
    fa[i][1] = r.imag();
  }
  lock.lock();
  fftw_plan pi = fftw_plan_dft_2d(h, w, fa, fa, FFTW_BACKWARD, FFTW_ESTIMATE);
  lock.unlock();
  fftw_execute(pi);
  lock.lock();
  fftw_destroy_plan(pa);
  fftw_destroy_plan(pb);
  fftw_destroy_plan(pi);
  lock.unlock();
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (fa[i][0] > fa[best][0]) best = i;
  int dy = static_cast<int>(best / w), dx = static_cast<int>(best % w);
  if (dy > h / 2) dy -= h;
  if (dx > w / 2) dx -= w;
  return {dx, dy};
}

struct CropPair {
  MultiBandImage first;
  MultiBandImage second;
  int y0 = 0;  // window origin in the first image
  int x0 = 0;
};

/// Tiles the overlap of two acquisitions related by `offset` (as returned by
/// estimate_integer_offset(first, second)) into co-located crop pairs.
inline std::vector<CropPair> extract_pair_crops(const MultiBandImage& i0, const MultiBandImage& i1,
                                                Offset offset, int crop, int stride) {
  require(i0.channels() == i1.channels(), "extract_pair_crops: band count mismatch");
  require(crop > 0 && stride > 0, "extract_pair_crops: crop and stride must be positive");
  // i0 site p corresponds to i1 site p + offset.
  const int x_lo = std::max(0, -offset.dx), x_hi = std::min(i0.width(), i1.width() - offset.dx);
  const int y_lo = std::max(0, -offset.dy), y_hi = std::min(i0.height(), i1.height() - offset.dy);
  if (x_hi - x_lo < crop || y_hi - y_lo < crop)
    throw DataError("extract_pair_crops: overlap " + std::to_string(std::max(0, x_hi - x_lo)) +
                    "x" + std::to_string(std::max(0, y_hi - y_lo)) + " smaller than crop " +
                    std::to_string(crop));
  std::vector<CropPair> out;
  for (int y = y_lo; y + crop <= y_hi; y += stride)
    for (int x = x_lo; x + crop <= x_hi; x += stride)
      out.push_back({i0.crop(y, x, crop, crop), i1.crop(y + offset.dy, x + offset.dx, crop, crop),
                     y, x});
  return out;
}

}  // namespace l1bsr::imagery
