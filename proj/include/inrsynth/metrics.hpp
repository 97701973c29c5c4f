#pragma once

// Image and mask quality metrics: PSNR, SSIM, Dice, slice-band Dice.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "inrsynth/common.hpp"
#include "inrsynth/volgrid.hpp"

namespace inrsynth::metrics {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(peak^2 / MSE) in dB, capped at 99 dB (MSE = 0 reports the cap).
inline double psnr(std::span<const float> a, std::span<const float> b, double peak = 1.0) {
  if (a.size() != b.size()) throw InvalidArgument("psnr: size mismatch");
  if (!(peak > 0)) throw InvalidArgument("psnr: peak must be > 0");
  if (a.empty()) throw InvalidArgument("psnr: empty input");
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    se += d * d;
  }
  const double mse = se / double(a.size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

inline double psnr(const Volume& a, const Volume& b, double peak = 1.0) {
  if (a.dims != b.dims) throw InvalidArgument("psnr: dims mismatch");
  return psnr(std::span<const float>(a.data), std::span<const float>(b.data), peak);
}

/// 2D slice view, x fastest.
struct Slice {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::span<const float> data;

  double at(std::uint32_t x, std::uint32_t y) const { return data[std::size_t(y) * width + x]; }
};

struct SsimOptions {
  int window = 7;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

/// Mean local SSIM over all fully contained windows (Gaussian weights).
inline double ssim(const Slice& a, const Slice& b, const SsimOptions& o = {}) {
  if (a.width != b.width || a.height != b.height) throw InvalidArgument("ssim: slice dims mismatch");
  if (a.data.size() != std::size_t(a.width) * a.height || b.data.size() != a.data.size())
    throw InvalidArgument("ssim: data length mismatch");
  const auto w = std::uint32_t(o.window);
  if (a.width < w || a.height < w) throw InvalidArgument("ssim: slice smaller than the window");

  std::vector<double> g(std::size_t(w) * w);
  double gsum = 0;
  const double c = (o.window - 1) / 2.0;
  for (std::uint32_t j = 0; j < w; ++j)
    for (std::uint32_t i = 0; i < w; ++i) {
      const double v = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * o.sigma * o.sigma));
      g[j * w + i] = v;
      gsum += v;
    }
  for (auto& v : g) v /= gsum;

  const double c1 = (o.k1 * o.peak) * (o.k1 * o.peak);
  const double c2 = (o.k2 * o.peak) * (o.k2 * o.peak);
  double total = 0;
  std::size_t count = 0;
  for (std::uint32_t y0 = 0; y0 + w <= a.height; ++y0)
    for (std::uint32_t x0 = 0; x0 + w <= a.width; ++x0) {
      double ma = 0, mb = 0;
      for (std::uint32_t j = 0; j < w; ++j)
        for (std::uint32_t i = 0; i < w; ++i) {
          const double wt = g[j * w + i];
          ma += wt * a.at(x0 + i, y0 + j);
          mb += wt * b.at(x0 + i, y0 + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (std::uint32_t j = 0; j < w; ++j)
        for (std::uint32_t i = 0; i < w; ++i) {
          const double wt = g[j * w + i];
          const double da = a.at(x0 + i, y0 + j) - ma, db = b.at(x0 + i, y0 + j) - mb;
          va += wt * da * da;
          vb += wt * db * db;
          cov += wt * da * db;
        }
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / double(count);
}

inline Slice slice_of(const Volume& v, std::uint32_t z) {
  if (z >= v.dims[2]) throw InvalidArgument("slice_of: z out of range");
  const std::size_t n = std::size_t(v.dims[0]) * v.dims[1];
  return {v.dims[0], v.dims[1], std::span<const float>(v.data).subspan(z * n, n)};
}

inline Slice middle_slice(const Volume& v) { return slice_of(v, v.dims[2] / 2); }

/// 2|A and B| / (|A| + |B|); both empty is 1.
inline double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw InvalidArgument("dice: size mismatch");
  std::size_t inter = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += std::size_t(a[i] != 0 && b[i] != 0);
    sa += a[i] != 0;
    sb += b[i] != 0;
  }
  return sa + sb == 0 ? 1.0 : 2.0 * double(inter) / double(sa + sb);
}

inline double dice(const MaskGrid& a, const MaskGrid& b) {
  if (a.dims != b.dims) throw InvalidArgument("dice: dims mismatch");
  return dice(std::span<const std::uint8_t>(a.data), std::span<const std::uint8_t>(b.data));
}

// ---------------------------------------------------------------------------
// Slice bands

enum class Band { kVolume, kBottom25, kMiddle50, kTop25 };

inline constexpr std::array<Band, 4> kBands{Band::kVolume, Band::kBottom25, Band::kMiddle50, Band::kTop25};

inline const char* band_name(Band b) {
  switch (b) {
    case Band::kVolume: return "volume";
    case Band::kBottom25: return "bottom25";
    case Band::kMiddle50: return "middle50";
    case Band::kTop25: return "top25";
  }
  return "?";
}

struct BandRanges {
  std::uint32_t bottom_end;  // slices [0, bottom_end)
  std::uint32_t top_begin;   // slices [top_begin, Dz)
};

/// First ceil(Dz/4) slices, last ceil(Dz/4) slices, the rest in between.
inline BandRanges band_ranges(std::uint32_t dz) {
  if (dz < 4) throw InvalidArgument("slice bands need Dz >= 4");
  const std::uint32_t q = (dz + 3) / 4;
  return {q, dz - q};
}

inline bool in_band(Band b, std::uint32_t z, const BandRanges& r) {
  switch (b) {
    case Band::kVolume: return true;
    case Band::kBottom25: return z < r.bottom_end;
    case Band::kMiddle50: return z >= r.bottom_end && z < r.top_begin;
    case Band::kTop25: return z >= r.top_begin;
  }
  return false;
}

enum class Structure { kMyo, kFib };

inline const char* structure_name(Structure s) { return s == Structure::kMyo ? "myo" : "fib"; }

struct BandDice {
  std::array<double, 4> myo{};  // indexed like kBands
  std::array<double, 4> fib{};

  double get(Structure s, Band b) const { return (s == Structure::kMyo ? myo : fib)[std::size_t(b)]; }
};

inline double band_dice(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, const Dims& d, Band band) {
  const auto r = band_ranges(d[2]);
  const std::size_t n = std::size_t(d[0]) * d[1];
  std::vector<std::uint8_t> sa, sb;
  for (std::uint32_t z = 0; z < d[2]; ++z) {
    if (!in_band(band, z, r)) continue;
    sa.insert(sa.end(), a.begin() + std::ptrdiff_t(z * n), a.begin() + std::ptrdiff_t((z + 1) * n));
    sb.insert(sb.end(), b.begin() + std::ptrdiff_t(z * n), b.begin() + std::ptrdiff_t((z + 1) * n));
  }
  return dice(std::span<const std::uint8_t>(sa), std::span<const std::uint8_t>(sb));
}

inline BandDice slice_band_dice(const MaskSet& pred, const MaskSet& gt) {
  if (pred.dims != gt.dims) throw InvalidArgument("slice_band_dice: dims mismatch");
  band_ranges(pred.dims[2]);
  BandDice out;
  for (std::size_t k = 0; k < kBands.size(); ++k) {
    out.myo[k] = band_dice(pred.myo, gt.myo, pred.dims, kBands[k]);
    out.fib[k] = band_dice(pred.fib, gt.fib, pred.dims, kBands[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cohort similarity on middle slices (every synthetic vs every real)

struct CohortSimilarity {
  double mean_psnr = 0;
  double mean_ssim = 0;
  std::size_t pairs = 0;
};

inline CohortSimilarity cohort_similarity(const std::vector<const Volume*>& synthetic,
                                          const std::vector<const Volume*>& real, double peak = 1.0) {
  CohortSimilarity s;
  SsimOptions o;
  o.peak = peak;
  for (const auto* a : synthetic)
    for (const auto* b : real) {
      const auto sa = middle_slice(*a), sb = middle_slice(*b);
      s.mean_psnr += psnr(sa.data, sb.data, peak);
      s.mean_ssim += ssim(sa, sb, o);
      ++s.pairs;
    }
  if (s.pairs > 0) {
    s.mean_psnr /= double(s.pairs);
    s.mean_ssim /= double(s.pairs);
  }
  return s;
}

}  // namespace inrsynth::metrics
