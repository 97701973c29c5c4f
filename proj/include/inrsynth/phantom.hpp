#pragma once

// Procedural LGE-like short-axis phantoms: a stack of myocardial annuli with a
// bright blood pool and hyperenhanced fibrosis blobs clipped to the wall.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "inrsynth/common.hpp"
#include "inrsynth/volgrid.hpp"

namespace inrsynth {

template <class T>
struct Range {
  T lo{};
  T hi{};
};

struct IntensityLevels {
  double background = 0.15;
  double remote_myo = 0.30;
  double blood = 0.75;
  double fibrosis = 0.85;
};

struct PhantomParams {
  Dims dims{64, 64, 10};
  Range<double> spacing_inplane{1.33, 2.08};  // mm
  Range<double> spacing_through{8.02, 10.07};  // mm
  double center_jitter = 2.0;  // voxels, case-level offset of the stack
  double drift_max = 1.5;      // voxels, per-slice center step (<= 2)
  Range<double> inner_radius{7.0, 11.0};
  Range<double> wall_thickness{4.0, 6.0};
  double taper_max = 0.35;  // fractional inner-radius shrink from first to last slice
  Range<int> blob_count{0, 3};
  Range<double> blob_radius{3.0, 6.0};
  double blob_z_ratio = 0.5;  // through-plane semi-axis, in slices, per in-plane voxel of radius
  IntensityLevels levels;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;
};

/// Defaults for a 64x64 in-plane grid, rescaled to `dims`.
inline PhantomParams default_phantom_params(const Dims& dims) {
  PhantomParams p;
  p.dims = dims;
  const double s = std::min(dims[0], dims[1]) / 64.0;
  p.inner_radius = {std::max(2.0, 7.0 * s), std::max(2.75, 11.0 * s)};
  p.wall_thickness = {std::max(2.0, 4.0 * s), std::max(2.0, 6.0 * s)};
  p.blob_radius = {std::max(1.5, 3.0 * s), std::max(2.0, 6.0 * s)};
  p.center_jitter = std::max(0.5, 2.0 * s);
  p.drift_max = std::min(2.0, std::max(0.5, 1.5 * s));
  return p;
}

inline void validate(const PhantomParams& p) {
  check_dims(p.dims, "PhantomParams");
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  const auto& l = p.levels;
  if (!in01(l.background) || !in01(l.remote_myo) || !in01(l.blood) || !in01(l.fibrosis))
    throw InvalidArgument("PhantomParams: intensity levels must lie in [0,1]");
  if (!(l.fibrosis > l.remote_myo))
    throw InvalidArgument("PhantomParams: fibrosis intensity must exceed remote myocardium");
  const double half = std::min(p.dims[0], p.dims[1]) / 2.0;
  if (!(p.inner_radius.lo > 0 && p.inner_radius.lo <= p.inner_radius.hi))
    throw InvalidArgument("PhantomParams: bad inner radius range");
  if (!(p.wall_thickness.lo > 0 && p.wall_thickness.lo <= p.wall_thickness.hi))
    throw InvalidArgument("PhantomParams: bad wall thickness range");
  if (!(p.inner_radius.hi + p.wall_thickness.hi < half))
    throw InvalidArgument("PhantomParams: inner radius + max wall thickness must be < min(Dx,Dy)/2");
  if (p.blob_count.lo < 0 || p.blob_count.lo > p.blob_count.hi)
    throw InvalidArgument("PhantomParams: bad blob count range");
  if (!(p.blob_radius.lo > 0 && p.blob_radius.lo <= p.blob_radius.hi))
    throw InvalidArgument("PhantomParams: bad blob radius range");
  if (!(p.drift_max >= 0 && p.drift_max <= 2.0))
    throw InvalidArgument("PhantomParams: per-slice drift must be in [0, 2] voxels");
  if (!(p.center_jitter >= 0)) throw InvalidArgument("PhantomParams: center jitter must be >= 0");
  if (!(p.taper_max >= 0 && p.taper_max < 1)) throw InvalidArgument("PhantomParams: taper must be in [0,1)");
  if (!(p.noise_sigma >= 0)) throw InvalidArgument("PhantomParams: noise sigma must be >= 0");
  if (!(p.spacing_inplane.lo > 0 && p.spacing_inplane.lo <= p.spacing_inplane.hi &&
        p.spacing_through.lo > 0 && p.spacing_through.lo <= p.spacing_through.hi))
    throw InvalidArgument("PhantomParams: bad spacing range");
}

struct Phantom {
  Volume image;
  MaskSet masks;
};

namespace detail {

struct Geometry {
  std::vector<double> cx, cy, r_in;
  double wall = 0;
};

inline Geometry draw_geometry(const PhantomParams& p, Rng& rng) {
  const auto nz = p.dims[2];
  Geometry g;
  g.wall = rng.uniform(p.wall_thickness.lo, p.wall_thickness.hi);
  const double r0 = rng.uniform(p.inner_radius.lo, p.inner_radius.hi);
  const double taper = rng.uniform(0.0, p.taper_max);
  const double outer_max = r0 + g.wall;
  // Keep every ring (plus one voxel) inside the in-plane grid.
  const double mx = std::max(0.0, (p.dims[0] - 1) / 2.0 - outer_max - 1.0);
  const double my = std::max(0.0, (p.dims[1] - 1) / 2.0 - outer_max - 1.0);
  double ox = std::clamp(rng.uniform(-p.center_jitter, p.center_jitter), -mx, mx);
  double oy = std::clamp(rng.uniform(-p.center_jitter, p.center_jitter), -my, my);
  for (std::uint32_t z = 0; z < nz; ++z) {
    if (z > 0) {
      ox = std::clamp(ox + rng.uniform(-p.drift_max, p.drift_max) / std::sqrt(2.0), -mx, mx);
      oy = std::clamp(oy + rng.uniform(-p.drift_max, p.drift_max) / std::sqrt(2.0), -my, my);
    }
    g.cx.push_back((p.dims[0] - 1) / 2.0 + ox);
    g.cy.push_back((p.dims[1] - 1) / 2.0 + oy);
    const double t = nz > 1 ? double(z) / (nz - 1) : 0.0;
    g.r_in.push_back(std::max(std::min(2.0, r0), r0 * (1.0 - taper * t)));
  }
  return g;
}

}  // namespace detail

inline Phantom generate_phantom(const PhantomParams& p) {
  validate(p);
  Rng rng(p.seed);
  const Dims d = p.dims;
  const double s_in = rng.uniform(p.spacing_inplane.lo, p.spacing_inplane.hi);
  const double s_z = rng.uniform(p.spacing_through.lo, p.spacing_through.hi);
  const auto geom = detail::draw_geometry(p, rng);

  Phantom out{Volume(d, {s_in, s_in, s_z}), MaskSet(d)};
  std::vector<double> level(voxel_count(d), p.levels.background);
  for (std::uint32_t z = 0; z < d[2]; ++z)
    for (std::uint32_t y = 0; y < d[1]; ++y)
      for (std::uint32_t x = 0; x < d[0]; ++x) {
        const double r = std::hypot(x - geom.cx[z], y - geom.cy[z]);
        const auto i = linear_index(d, x, y, z);
        if (r < geom.r_in[z]) {
          level[i] = p.levels.blood;
        } else if (r < geom.r_in[z] + geom.wall) {
          level[i] = p.levels.remote_myo;
          out.masks.myo[i] = 1;
        }
      }

  const int blobs = int(rng.integer(p.blob_count.lo, p.blob_count.hi));
  for (int b = 0; b < blobs; ++b) {
    const double bz = rng.uniform(0.0, double(d[2] - 1));
    const auto zi = std::uint32_t(std::lround(bz));
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double depth = geom.r_in[zi] + geom.wall * rng.uniform(0.2, 0.8);
    const double bx = geom.cx[zi] + depth * std::cos(angle);
    const double by = geom.cy[zi] + depth * std::sin(angle);
    const double br = rng.uniform(p.blob_radius.lo, p.blob_radius.hi);
    const double bzr = std::max(0.5, br * p.blob_z_ratio);
    for (std::uint32_t z = 0; z < d[2]; ++z)
      for (std::uint32_t y = 0; y < d[1]; ++y)
        for (std::uint32_t x = 0; x < d[0]; ++x) {
          const double dx = (x - bx) / br, dy = (y - by) / br, dz = (z - bz) / bzr;
          if (dx * dx + dy * dy + dz * dz > 1.0) continue;
          const auto i = linear_index(d, x, y, z);
          if (out.masks.myo[i]) {
            out.masks.fib[i] = 1;
            level[i] = p.levels.fibrosis;
          }
        }
  }

  for (std::size_t i = 0; i < level.size(); ++i) {
    const double v = level[i] + p.noise_sigma * rng.normal();
    out.image.data[i] = float(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

/// Training and held-out splits draw from disjoint named sub-streams.
enum class Split { kTrain, kTest };

inline const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

inline PhantomParams jitter_params(const PhantomParams& base, std::uint64_t seed, Split split, std::size_t index) {
  PhantomParams p = base;
  p.seed = substream(seed, std::string("phantom:") + split_name(split) + ":" + std::to_string(index));
  return p;
}

inline std::vector<Phantom> generate_cohort(std::size_t n, const PhantomParams& base, std::uint64_t seed,
                                            Split split = Split::kTrain, int jobs = 1) {
  if (n == 0) throw InvalidArgument("generate_cohort: n must be >= 1");
  validate(base);
  std::vector<Phantom> out(n);
  parallel_for(n, jobs, [&](std::size_t i) { out[i] = generate_phantom(jitter_params(base, seed, split, i)); });
  return out;
}

}  // namespace inrsynth
