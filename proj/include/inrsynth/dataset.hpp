#pragma once

// Case directories and line-oriented manifests.
//
// A manifest is a text file with one entry per line: an ID followed by one
// or more tab-separated paths, relative to the manifest's directory.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "inrsynth/common.hpp"
#include "inrsynth/volgrid.hpp"

namespace inrsynth {

namespace fs = std::filesystem;

inline constexpr const char* kManifestName = "manifest.txt";

struct ManifestEntry {
  std::string id;
  std::vector<std::string> paths;
};

inline void write_manifest(const fs::path& file, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw FormatError("path", "cannot write manifest " + file.string());
  for (const auto& e : entries) {
    os << e.id;
    for (const auto& p : e.paths) os << '\t' << p;
    os << '\n';
  }
}

inline std::vector<ManifestEntry> read_manifest(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw FormatError("path", "cannot read manifest " + file.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    ManifestEntry e;
    std::string field;
    std::getline(ss, e.id, '\t');
    while (std::getline(ss, field, '\t')) e.paths.push_back(field);
    if (e.id.empty() || e.paths.empty())
      throw FormatError("manifest:" + std::to_string(lineno), "expected an ID and at least one path");
    out.push_back(std::move(e));
  }
  return out;
}

/// Resolves a manifest path relative to the manifest's directory.
inline fs::path resolve(const fs::path& dir, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : dir / q;
}

struct Case {
  std::string id;
  Volume image;
  MaskSet masks;
};

inline std::string case_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%04zu", prefix, i);
  return buf;
}

/// Writes <id>_img.vol, <id>_myo.vol, <id>_fib.vol into `dir`.
inline ManifestEntry write_case(const fs::path& dir, const Case& c) {
  ManifestEntry e{c.id, {c.id + "_img.vol", c.id + "_myo.vol", c.id + "_fib.vol"}};
  write_vol(dir / e.paths[0], c.image);
  write_vol(dir / e.paths[1], c.masks.myo_grid(c.image.spacing));
  write_vol(dir / e.paths[2], c.masks.fib_grid(c.image.spacing));
  return e;
}

inline void write_cases(const fs::path& dir, const std::vector<Case>& cases) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const auto& c : cases) entries.push_back(write_case(dir, c));
  write_manifest(dir / kManifestName, entries);
}

inline std::vector<Case> read_cases(const fs::path& dir) {
  std::vector<Case> out;
  for (const auto& e : read_manifest(dir / kManifestName)) {
    if (e.paths.size() < 3) throw FormatError("manifest", "case " + e.id + " needs image, myo and fib paths");
    Case c{e.id, read_volume(resolve(dir, e.paths[0])), {}};
    c.masks = make_maskset(read_mask(resolve(dir, e.paths[1])), read_mask(resolve(dir, e.paths[2])));
    if (c.masks.dims != c.image.dims) throw FormatError("dims", "case " + e.id + ": mask dims differ from image");
    out.push_back(std::move(c));
  }
  return out;
}

inline void check_disjoint_ids(const std::vector<const Case*>& a, const std::vector<const Case*>& b, const char* what) {
  std::set<std::string> ids;
  for (const auto* c : a) ids.insert(c->id);
  for (const auto* c : b)
    if (ids.count(c->id)) throw InvalidArgument(std::string(what) + ": case ID " + c->id + " appears in both sets");
}

struct LatentRow {
  std::string id;
  std::vector<double> z;
};

/// One line per latent: ID then comma-separated values.
inline void write_latents_csv(const fs::path& file, const std::vector<LatentRow>& rows) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw FormatError("path", "cannot write " + file.string());
  char buf[32];
  for (const auto& r : rows) {
    os << r.id;
    for (double v : r.z) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      os << buf;
    }
    os << '\n';
  }
}

inline std::vector<LatentRow> read_latents_csv(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw FormatError("path", "cannot read " + file.string());
  std::vector<LatentRow> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    LatentRow r;
    std::getline(ss, r.id, ',');
    std::string v;
    while (std::getline(ss, v, ',')) {
      try {
        r.z.push_back(std::stod(v));
      } catch (const std::exception&) {
        throw FormatError("latents:" + std::to_string(lineno), "bad number '" + v + "'");
      }
    }
    if (r.z.empty() || (!out.empty() && r.z.size() != out.front().z.size()))
      throw FormatError("latents:" + std::to_string(lineno), "inconsistent latent width");
    out.push_back(std::move(r));
  }
  if (out.empty()) throw FormatError("latents", "no rows in " + file.string());
  return out;
}

}  // namespace inrsynth
