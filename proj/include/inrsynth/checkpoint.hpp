#pragma once

// Named float32 arrays and the CKPT1 container.
//
// CKPT1 layout (little-endian):
//   8 bytes  magic "CKPT1\0\0\0"
//   u32      array count
//   per array:
//     u32 name length, UTF-8 name bytes
//     u32 rank, rank x u32 dims
//     float32 payload, row-major

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "inrsynth/binio.hpp"
#include "inrsynth/nncore.hpp"

namespace inrsynth {

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

/// Flat, ordered collection of named arrays (weights, biases, running
/// statistics, small metadata vectors).
struct ParamStore {
  std::vector<NamedArray> arrays;
  nn::Mode mode = nn::Mode::kEval;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }

  const NamedArray& at(const std::string& name) const {
    if (const auto* a = find(name)) return *a;
    throw FormatError(name, "array missing from checkpoint");
  }

  void put(NamedArray a) { arrays.push_back(std::move(a)); }

  void put_values(const std::string& name, const std::vector<double>& v) {
    NamedArray a{name, {std::uint32_t(v.size())}, {}};
    for (double x : v) a.data.push_back(float(x));
    arrays.push_back(std::move(a));
  }

  std::vector<double> values(const std::string& name) const {
    const auto& a = at(name);
    return {a.data.begin(), a.data.end()};
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.arrays == b.arrays; }
};

template <class S>
NamedArray to_named(const std::string& name, const nn::Mat<S>& m) {
  NamedArray a;
  a.name = name;
  if (m.cols() == 1)
    a.shape = {std::uint32_t(m.rows())};
  else
    a.shape = {std::uint32_t(m.rows()), std::uint32_t(m.cols())};
  a.data.reserve(std::size_t(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.data.push_back(float(m(i, j)));
  return a;
}

template <class S>
void from_named(const NamedArray& a, nn::Mat<S>& m) {
  const Eigen::Index rows = a.shape.empty() ? 0 : a.shape[0];
  const Eigen::Index cols = a.shape.size() > 1 ? a.shape[1] : 1;
  if (a.shape.size() > 2 || rows != m.rows() || cols != m.cols())
    throw FormatError(a.name, "shape does not match the architecture");
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = S(a.data[std::size_t(i * cols + j)]);
}

template <class S>
void export_refs(const std::vector<nn::ParamRef<S>>& refs, ParamStore& store) {
  for (const auto& r : refs) store.put(to_named(r.name, *r.value));
}

template <class S>
void import_refs(const ParamStore& store, const std::vector<nn::ParamRef<S>>& refs) {
  for (const auto& r : refs) from_named(store.at(r.name), *r.value);
}

inline constexpr char kCkptMagic[8] = {'C', 'K', 'P', 'T', '1', 0, 0, 0};

inline void write_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("path", "cannot open for writing: " + path.string());
  os.write(kCkptMagic, 8);
  binio::put_u32(os, std::uint32_t(store.arrays.size()));
  for (const auto& a : store.arrays) {
    std::size_t n = 1;
    for (auto d : a.shape) n *= d;
    if (n != a.data.size()) throw InvalidArgument("write_checkpoint: payload size mismatch for " + a.name);
    binio::put_u32(os, std::uint32_t(a.name.size()));
    os.write(a.name.data(), std::streamsize(a.name.size()));
    binio::put_u32(os, std::uint32_t(a.shape.size()));
    for (auto d : a.shape) binio::put_u32(os, d);
    for (float f : a.data) binio::put_f32(os, f);
  }
  if (!os) throw FormatError("payload", "write failed: " + path.string());
}

inline ParamStore read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("path", "cannot open for reading: " + path.string());
  char magic[8];
  if (!is.read(magic, 8)) throw FormatError("magic", "truncated");
  if (!std::equal(magic, magic + 8, kCkptMagic)) throw FormatError("magic", "expected \"CKPT1\"");
  ParamStore store;
  const auto count = binio::get_u32(is, "count");
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray a;
    const auto len = binio::get_u32(is, "name_length");
    if (len > (1u << 16)) throw FormatError("name_length", "implausible name length");
    a.name.resize(len);
    if (!is.read(a.name.data(), len)) throw FormatError("name", "truncated");
    const auto rank = binio::get_u32(is, a.name + ".rank");
    if (rank > 8) throw FormatError(a.name + ".rank", "implausible rank");
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      a.shape.push_back(binio::get_u32(is, a.name + ".dims"));
      n *= a.shape.back();
    }
    a.data.resize(n);
    for (auto& f : a.data) f = binio::get_f32(is, a.name + ".payload");
    store.arrays.push_back(std::move(a));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("payload", "trailing bytes");
  return store;
}

}  // namespace inrsynth
