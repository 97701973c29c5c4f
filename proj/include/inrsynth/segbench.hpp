#pragma once

// Patch-based per-pixel segmenter and the synthetic-augmentation experiment.
//
// Each voxel is classified from the in-plane patch around it into
// background / remote myocardium / fibrosis. Predicted masks are
// myo = label != background, fib = label == fibrosis.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "inrsynth/dataset.hpp"
#include "inrsynth/metrics.hpp"
#include "inrsynth/nncore.hpp"

namespace inrsynth {

struct SegConfig {
  int patch = 9;
  std::vector<int> hidden{128, 128};
  int epochs = 20;
  int iters_per_epoch = 50;  // fixed, so every augmentation level gets the same number of updates
  int batch = 192;
  double lr = 1e-3;
  int real_count = 8;
  std::vector<int> synth_levels{0, 50, 100};
  int seeds = 5;
};

inline void validate(const SegConfig& c) {
  if (c.patch < 1 || c.patch % 2 == 0) throw InvalidArgument("SegConfig: patch size must be odd");
  if (c.seeds < 1) throw InvalidArgument("SegConfig: repeat seeds must be >= 1");
  if (c.epochs < 1 || c.iters_per_epoch < 1 || c.batch < 3) throw InvalidArgument("SegConfig: bad schedule");
  if (c.hidden.empty()) throw InvalidArgument("SegConfig: at least one hidden layer required");
  for (int n : c.synth_levels)
    if (n < 0) throw InvalidArgument("SegConfig: synthetic counts must be >= 0");
}

enum SegLabel : int { kBackground = 0, kRemoteMyo = 1, kFibrosis = 2 };
inline constexpr int kSegClasses = 3;

inline int voxel_label(const MaskSet& m, std::size_t i) {
  if (m.fib[i] && m.myo[i]) return kFibrosis;
  if (m.myo[i]) return kRemoteMyo;
  return kBackground;
}

/// patch x patch in-plane neighborhood of voxel (x, y, z); edges replicate.
inline void extract_patch(const Volume& v, std::uint32_t x, std::uint32_t y, std::uint32_t z, int patch, float* out) {
  const int r = patch / 2;
  int k = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const auto xx = std::uint32_t(std::clamp(int(x) + dx, 0, int(v.dims[0]) - 1));
      const auto yy = std::uint32_t(std::clamp(int(y) + dy, 0, int(v.dims[1]) - 1));
      out[k++] = v.at(xx, yy, z);
    }
}

inline void extract_patch(const Volume& v, std::size_t index, int patch, float* out) {
  const std::size_t plane = std::size_t(v.dims[0]) * v.dims[1];
  const auto z = std::uint32_t(index / plane);
  const auto rem = index % plane;
  extract_patch(v, std::uint32_t(rem % v.dims[0]), std::uint32_t(rem / v.dims[0]), z, patch, out);
}

struct Segmenter {
  int patch = 9;
  nn::Sequential<float> net;
};

inline Segmenter make_segmenter(const SegConfig& c, Rng& rng) {
  Segmenter s{c.patch, {}};
  int in = c.patch * c.patch;
  for (int w : c.hidden) {
    s.net.add(nn::Linear<float>(in, w)).init_default(rng);
    s.net.add(nn::Relu<float>());
    in = w;
  }
  s.net.add(nn::Linear<float>(in, kSegClasses)).init_default(rng);
  return s;
}

/// Draws a batch with equal shares of each class (remainder to the first
/// classes). Empty classes hand their share to the non-empty ones.
struct BalancedSampler {
  struct Ref {
    std::uint32_t item;
    std::uint32_t voxel;
  };
  std::array<std::vector<Ref>, kSegClasses> pools;

  explicit BalancedSampler(const std::vector<const Case*>& cases) {
    for (std::uint32_t c = 0; c < cases.size(); ++c) {
      const auto& m = cases[c]->masks;
      for (std::uint32_t i = 0; i < m.myo.size(); ++i) pools[std::size_t(voxel_label(m, i))].push_back({c, i});
    }
  }

  std::vector<std::pair<Ref, int>> draw(int batch, Rng& rng) const {
    std::vector<int> live;
    for (int k = 0; k < kSegClasses; ++k)
      if (!pools[std::size_t(k)].empty()) live.push_back(k);
    if (live.empty()) throw InvalidArgument("BalancedSampler: no labeled voxels");
    std::vector<std::pair<Ref, int>> out;
    out.reserve(std::size_t(batch));
    for (int j = 0; j < batch; ++j) {
      const int k = live[std::size_t(j) % live.size()];
      const auto& pool = pools[std::size_t(k)];
      out.push_back({pool[rng.below(pool.size())], k});
    }
    return out;
  }
};

struct SegTrainResult {
  Segmenter model;
  std::vector<double> loss_history;  // mean loss per epoch
};

inline SegTrainResult train_segmenter(const std::vector<const Case*>& cases, const SegConfig& config, std::uint64_t seed) {
  validate(config);
  if (cases.empty()) throw InvalidArgument("train_segmenter: at least one case required");
  Rng init_rng(substream(seed, "seg:init"));
  SegTrainResult out{make_segmenter(config, init_rng), {}};
  auto& net = out.model.net;
  const auto params = net.params();
  nn::OptState<float> opt;
  opt.config.lr = config.lr;
  Rng rng(substream(seed, "seg:batches"));
  const BalancedSampler sampler(cases);
  const int feat = config.patch * config.patch;
  nn::Mat<float> x(feat, config.batch), grad;
  std::vector<int> labels(std::size_t(config.batch));
  for (int e = 0; e < config.epochs; ++e) {
    double sum = 0;
    for (int it = 0; it < config.iters_per_epoch; ++it) {
      const auto draw = sampler.draw(config.batch, rng);
      for (int j = 0; j < config.batch; ++j) {
        const auto& [ref, label] = draw[std::size_t(j)];
        extract_patch(cases[ref.item]->image, ref.voxel, config.patch, x.col(j).data());
        labels[std::size_t(j)] = label;
      }
      net.zero_grad();
      const float loss = nn::softmax_cross_entropy(net.forward(x, nn::Mode::kTrain), labels, &grad);
      if (!std::isfinite(loss)) throw NumericError("train_segmenter: non-finite loss in epoch " + std::to_string(e));
      net.backward(grad);
      nn::adam_step(params, opt);
      sum += loss;
    }
    out.loss_history.push_back(sum / config.iters_per_epoch);
  }
  return out;
}

/// Per-voxel argmax labels.
inline std::vector<int> predict_labels(const Segmenter& seg, const Volume& v) {
  auto net = seg.net;
  const int feat = seg.patch * seg.patch;
  const std::size_t n = v.data.size();
  std::vector<int> out(n);
  constexpr std::size_t chunk = 4096;
  for (std::size_t s = 0; s < n; s += chunk) {
    const std::size_t m = std::min(chunk, n - s);
    nn::Mat<float> x(feat, Eigen::Index(m));
    for (std::size_t j = 0; j < m; ++j) extract_patch(v, s + j, seg.patch, x.col(Eigen::Index(j)).data());
    const nn::Mat<float> logits = net.forward(x, nn::Mode::kEval);
    for (std::size_t j = 0; j < m; ++j) {
      Eigen::Index k;
      logits.col(Eigen::Index(j)).maxCoeff(&k);
      out[s + j] = int(k);
    }
  }
  return out;
}

inline MaskSet segment(const Segmenter& seg, const Volume& v) {
  const auto labels = predict_labels(seg, v);
  MaskSet m(v.dims);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    m.myo[i] = labels[i] != kBackground;
    m.fib[i] = labels[i] == kFibrosis;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Augmentation experiment

struct SegRow {
  int n_synth = 0;
  int seed = 0;  // -1 marks the median over seeds
  metrics::Structure structure = metrics::Structure::kMyo;
  metrics::Band band = metrics::Band::kVolume;
  double dice = 0;
};

struct SegReport {
  std::string test_hash;  // identifies the evaluation set
  std::vector<SegRow> rows;

  double median(int n_synth, metrics::Structure s, metrics::Band b) const {
    for (const auto& r : rows)
      if (r.seed == -1 && r.n_synth == n_synth && r.structure == s && r.band == b) return r.dice;
    throw InvalidArgument("SegReport: no median row for N=" + std::to_string(n_synth));
  }
};

/// FNV-1a over test IDs and voxel payloads, as 16 hex digits.
inline std::string hash_cases(const std::vector<const Case*>& cases) {
  std::uint64_t h = fnv1a("");
  for (const auto* c : cases) {
    h = fnv1a(c->id, h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(c->image.data.data()), c->image.data.size() * sizeof(float)), h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(c->masks.myo.data()), c->masks.myo.size()), h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(c->masks.fib.data()), c->masks.fib.size()), h);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Mean over test cases of every (structure, band) Dice.
inline metrics::BandDice evaluate_segmenter(const Segmenter& seg, const std::vector<const Case*>& test) {
  metrics::BandDice mean;
  for (const auto* c : test) {
    const auto d = metrics::slice_band_dice(segment(seg, c->image), c->masks);
    for (std::size_t k = 0; k < 4; ++k) {
      mean.myo[k] += d.myo[k] / double(test.size());
      mean.fib[k] += d.fib[k] / double(test.size());
    }
  }
  return mean;
}

inline SegReport augmentation_experiment(const std::vector<const Case*>& real, const std::vector<const Case*>& synthetic,
                                         const std::vector<const Case*>& test, const SegConfig& config,
                                         std::uint64_t seed, int jobs = 1) {
  validate(config);
  if (real.empty() || test.empty()) throw InvalidArgument("augmentation_experiment: need training and test cases");
  check_disjoint_ids(real, test, "augmentation_experiment");
  check_disjoint_ids(synthetic, test, "augmentation_experiment");
  for (int n : config.synth_levels)
    if (std::size_t(n) > synthetic.size())
      throw InvalidArgument("augmentation_experiment: synthetic pool smaller than N=" + std::to_string(n));

  const auto& levels = config.synth_levels;
  const std::size_t runs = levels.size() * std::size_t(config.seeds);
  std::vector<metrics::BandDice> results(runs);
  parallel_for(runs, jobs, [&](std::size_t r) {
    const int n = levels[r / std::size_t(config.seeds)];
    const int s = int(r % std::size_t(config.seeds));
    std::vector<const Case*> train = real;
    train.insert(train.end(), synthetic.begin(), synthetic.begin() + n);
    // Seeds are shared across N so each level starts from the same weights.
    const auto model = train_segmenter(train, config, substream(seed, "segbench:seed:" + std::to_string(s))).model;
    results[r] = evaluate_segmenter(model, test);
  });

  SegReport report{hash_cases(test), {}};
  using metrics::Structure;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    for (int s = 0; s < config.seeds; ++s)
      for (auto st : {Structure::kFib, Structure::kMyo})
        for (auto b : metrics::kBands)
          report.rows.push_back({levels[li], s, st, b, results[li * std::size_t(config.seeds) + std::size_t(s)].get(st, b)});
    for (auto st : {Structure::kFib, Structure::kMyo})
      for (auto b : metrics::kBands) {
        std::vector<double> v;
        for (int s = 0; s < config.seeds; ++s) v.push_back(results[li * std::size_t(config.seeds) + std::size_t(s)].get(st, b));
        report.rows.push_back({levels[li], -1, st, b, median_of(v)});
      }
  }
  return report;
}

/// CSV: n_synth,seed,structure,band,dice,test_hash (seed "median" for summary rows).
inline void write_seg_report(const fs::path& file, const SegReport& r) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw FormatError("path", "cannot write " + file.string());
  os << "n_synth,seed,structure,band,dice,test_hash\n";
  char buf[160];
  for (const auto& row : r.rows) {
    const std::string seed = row.seed < 0 ? "median" : std::to_string(row.seed);
    std::snprintf(buf, sizeof buf, "%d,%s,%s,%s,%.6f,%s\n", row.n_synth, seed.c_str(),
                  metrics::structure_name(row.structure), metrics::band_name(row.band), row.dice, r.test_hash.c_str());
    os << buf;
  }
}

/// Table-1 style text: bands as rows, (structure, N) as columns, medians over seeds.
inline std::string format_table(const SegReport& r, const std::vector<int>& levels) {
  using metrics::Structure;
  std::string out = "Region     ";
  char buf[64];
  for (auto st : {Structure::kFib, Structure::kMyo})
    for (int n : levels) {
      std::snprintf(buf, sizeof buf, " %s N=%-4d", st == Structure::kFib ? "fib" : "myo", n);
      out += buf;
    }
  out += "\n";
  for (auto b : metrics::kBands) {
    std::snprintf(buf, sizeof buf, "%-11s", metrics::band_name(b));
    out += buf;
    for (auto st : {Structure::kFib, Structure::kMyo})
      for (int n : levels) {
        std::snprintf(buf, sizeof buf, " %10.3f", r.median(n, st, b));
        out += buf;
      }
    out += "\n";
  }
  return out;
}

}  // namespace inrsynth
