#pragma once

// Volumetric grids, normalized voxel-center coordinates, and the VOL1 file
// format.
//
// VOL1 layout (all little-endian):
//   8 bytes   magic "VOL1\0\0\0\0"
//   3 x u32   dims (x, y, z)
//   3 x f64   spacing in mm
//   1 x u8    channel kind (0 = intensity float32, 1 = mask uint8)
//   payload   Dx*Dy*Dz elements, x fastest

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "inrsynth/binio.hpp"
#include "inrsynth/common.hpp"

namespace inrsynth {

inline constexpr Spacing kUnitSpacing{1.0, 1.0, 1.0};

inline std::size_t linear_index(const Dims& d, std::uint32_t x, std::uint32_t y, std::uint32_t z) {
  return (std::size_t(z) * d[1] + y) * d[0] + x;
}

inline void check_dims(const Dims& d, const char* what) {
  for (auto v : d)
    if (v == 0) throw InvalidArgument(std::string(what) + ": dimensions must be >= 1");
}

inline void check_spacing(const Spacing& s, const char* what) {
  for (auto v : s)
    if (!(v > 0.0)) throw InvalidArgument(std::string(what) + ": spacing must be > 0");
}

struct Volume {
  Dims dims{1, 1, 1};
  Spacing spacing = kUnitSpacing;
  std::vector<float> data;
  float intensity_max = 1.0f;

  Volume() = default;
  Volume(Dims d, Spacing s = kUnitSpacing)
      : dims(d), spacing(s), data(voxel_count(d), 0.0f) {
    check_dims(d, "Volume");
    check_spacing(s, "Volume");
  }

  float& at(std::uint32_t x, std::uint32_t y, std::uint32_t z) { return data[linear_index(dims, x, y, z)]; }
  float at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const { return data[linear_index(dims, x, y, z)]; }

  /// One z-slice, row-major with x fastest.
  std::vector<float> slice(std::uint32_t z) const {
    const std::size_t n = std::size_t(dims[0]) * dims[1];
    return {data.begin() + std::ptrdiff_t(z * n), data.begin() + std::ptrdiff_t((z + 1) * n)};
  }

  friend bool operator==(const Volume&, const Volume&) = default;
};

/// A single binary channel, as stored in one VOL1 mask file.
struct MaskGrid {
  Dims dims{1, 1, 1};
  Spacing spacing = kUnitSpacing;
  std::vector<std::uint8_t> data;

  friend bool operator==(const MaskGrid&, const MaskGrid&) = default;
};

/// Myocardium (M1) and fibrosis (M2) masks aligned to a Volume.
struct MaskSet {
  Dims dims{1, 1, 1};
  std::vector<std::uint8_t> myo;
  std::vector<std::uint8_t> fib;

  MaskSet() = default;
  explicit MaskSet(Dims d) : dims(d), myo(voxel_count(d), 0), fib(voxel_count(d), 0) {}

  MaskGrid myo_grid(const Spacing& s = kUnitSpacing) const { return {dims, s, myo}; }
  MaskGrid fib_grid(const Spacing& s = kUnitSpacing) const { return {dims, s, fib}; }

  /// fib <- fib AND myo.
  void enforce_containment() {
    for (std::size_t i = 0; i < fib.size(); ++i) fib[i] = std::uint8_t(fib[i] & myo[i]);
  }

  bool contained() const {
    for (std::size_t i = 0; i < fib.size(); ++i)
      if (fib[i] && !myo[i]) return false;
    return true;
  }

  friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

inline MaskSet make_maskset(const MaskGrid& myo, const MaskGrid& fib) {
  if (myo.dims != fib.dims) throw InvalidArgument("make_maskset: myo/fib dims differ");
  MaskSet m;
  m.dims = myo.dims;
  m.myo = myo.data;
  m.fib = fib.data;
  return m;
}

/// Voxel-center coordinates in [-1, 1]^3, in the same order as Volume::data.
struct CoordGrid {
  Dims dims{1, 1, 1};
  std::vector<std::array<double, 3>> coords;

  std::size_t size() const { return coords.size(); }
};

inline double axis_coord(std::uint32_t i, std::uint32_t n) {
  return n == 1 ? 0.0 : 2.0 * double(i) / double(n - 1) - 1.0;
}

inline CoordGrid normalize_coords(const std::array<long long, 3>& dims) {
  for (auto v : dims)
    if (v < 1) throw InvalidArgument("normalize_coords: dimensions must be >= 1");
  const Dims d{std::uint32_t(dims[0]), std::uint32_t(dims[1]), std::uint32_t(dims[2])};
  CoordGrid g;
  g.dims = d;
  g.coords.reserve(voxel_count(d));
  for (std::uint32_t z = 0; z < d[2]; ++z)
    for (std::uint32_t y = 0; y < d[1]; ++y)
      for (std::uint32_t x = 0; x < d[0]; ++x)
        g.coords.push_back({axis_coord(x, d[0]), axis_coord(y, d[1]), axis_coord(z, d[2])});
  return g;
}

inline CoordGrid normalize_coords(const Dims& d) {
  return normalize_coords(std::array<long long, 3>{d[0], d[1], d[2]});
}

enum class ChannelKind : std::uint8_t { kIntensity = 0, kMask = 1 };

inline constexpr char kVolMagic[8] = {'V', 'O', 'L', '1', 0, 0, 0, 0};

namespace detail {

inline void write_vol_header(std::ostream& os, const Dims& d, const Spacing& s, ChannelKind kind) {
  os.write(kVolMagic, 8);
  for (auto v : d) binio::put_u32(os, v);
  for (auto v : s) binio::put_f64(os, v);
  os.put(char(kind));
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("path", "cannot open for writing: " + path.string());
  return os;
}

}  // namespace detail

inline void write_vol(const std::filesystem::path& path, const Volume& v) {
  if (v.data.size() != voxel_count(v.dims)) throw InvalidArgument("write_vol: data length != Dx*Dy*Dz");
  auto os = detail::open_out(path);
  detail::write_vol_header(os, v.dims, v.spacing, ChannelKind::kIntensity);
  for (float f : v.data) binio::put_f32(os, f);
  if (!os) throw FormatError("payload", "write failed: " + path.string());
}

inline void write_vol(const std::filesystem::path& path, const MaskGrid& m) {
  if (m.data.size() != voxel_count(m.dims)) throw InvalidArgument("write_vol: data length != Dx*Dy*Dz");
  for (auto b : m.data)
    if (b > 1) throw InvalidArgument("write_vol: mask values must be 0 or 1");
  auto os = detail::open_out(path);
  detail::write_vol_header(os, m.dims, m.spacing, ChannelKind::kMask);
  os.write(reinterpret_cast<const char*>(m.data.data()), std::streamsize(m.data.size()));
  if (!os) throw FormatError("payload", "write failed: " + path.string());
}

inline std::variant<Volume, MaskGrid> read_vol(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("path", "cannot open for reading: " + path.string());
  char magic[8];
  if (!is.read(magic, 8)) throw FormatError("magic", "truncated");
  if (!std::equal(magic, magic + 8, kVolMagic)) throw FormatError("magic", "expected \"VOL1\"");
  Dims d;
  const char* names[3] = {"dims.x", "dims.y", "dims.z"};
  for (int i = 0; i < 3; ++i) {
    d[i] = binio::get_u32(is, names[i]);
    if (d[i] == 0) throw FormatError(names[i], "dimension must be >= 1");
  }
  Spacing s;
  const char* snames[3] = {"spacing.x", "spacing.y", "spacing.z"};
  for (int i = 0; i < 3; ++i) {
    s[i] = binio::get_f64(is, snames[i]);
    if (!(s[i] > 0.0)) throw FormatError(snames[i], "spacing must be > 0");
  }
  const int kind = is.get();
  if (kind == std::char_traits<char>::eof()) throw FormatError("channel_kind", "truncated");
  const std::size_t n = voxel_count(d);
  if (kind == int(ChannelKind::kIntensity)) {
    Volume v;
    v.dims = d;
    v.spacing = s;
    std::vector<char> raw(n * 4);
    if (!is.read(raw.data(), std::streamsize(raw.size())))
      throw FormatError("payload", "truncated: expected " + std::to_string(n) + " float32 elements");
    v.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= std::uint32_t(std::uint8_t(raw[4 * i + b])) << (8 * b);
      v.data[i] = std::bit_cast<float>(u);
    }
    if (is.peek() != std::char_traits<char>::eof())
      throw FormatError("payload", "trailing bytes after Dx*Dy*Dz elements");
    return v;
  }
  if (kind == int(ChannelKind::kMask)) {
    MaskGrid m;
    m.dims = d;
    m.spacing = s;
    m.data.resize(n);
    if (!is.read(reinterpret_cast<char*>(m.data.data()), std::streamsize(n)))
      throw FormatError("payload", "truncated: expected " + std::to_string(n) + " uint8 elements");
    if (is.peek() != std::char_traits<char>::eof())
      throw FormatError("payload", "trailing bytes after Dx*Dy*Dz elements");
    for (auto b : m.data)
      if (b > 1) throw FormatError("payload", "mask values must be 0 or 1");
    return m;
  }
  throw FormatError("channel_kind", "unknown code " + std::to_string(kind));
}

inline Volume read_volume(const std::filesystem::path& path) {
  auto r = read_vol(path);
  if (auto* v = std::get_if<Volume>(&r)) return std::move(*v);
  throw FormatError("channel_kind", "expected intensity channel in " + path.string());
}

inline MaskGrid read_mask(const std::filesystem::path& path) {
  auto r = read_vol(path);
  if (auto* m = std::get_if<MaskGrid>(&r)) return std::move(*m);
  throw FormatError("channel_kind", "expected mask channel in " + path.string());
}

/// Min-max scale to [0, intensity_max]. Constant volumes map to 0.
inline void normalize_intensity(Volume& v) {
  if (v.data.empty()) return;
  const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
  const float a = *lo, b = *hi;
  const float range = b - a;
  for (auto& f : v.data) f = range > 0 ? (f - a) / range * v.intensity_max : 0.0f;
}

}  // namespace inrsynth
