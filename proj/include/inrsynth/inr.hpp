#pragma once

// Joint image/mask implicit neural representation: a SIREN backbone shared
// by three heads (intensity, myocardium logit, fibrosis logit).

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "inrsynth/checkpoint.hpp"
#include "inrsynth/common.hpp"
#include "inrsynth/nncore.hpp"
#include "inrsynth/volgrid.hpp"

namespace inrsynth {

struct InrArch {
  int in_dim = 3;
  int width = 256;
  int hidden = 4;  // width->width sine layers after the input sine layer
  double omega0 = 30.0;

  friend bool operator==(const InrArch&, const InrArch&) = default;
};

inline void validate(const InrArch& a) {
  if (a.in_dim != 3) throw InvalidArgument("InrArch: input dimension must be 3");
  if (a.width < 1 || a.hidden < 0) throw InvalidArgument("InrArch: bad width/depth");
  if (!(a.omega0 > 0)) throw InvalidArgument("InrArch: omega0 must be > 0");
}

inline constexpr int kHeads = 3;  // image, myocardium, fibrosis

/// Sum of layer shapes: input sine layer, hidden sine layers, heads.
inline std::size_t param_count(const InrArch& a) {
  const std::size_t w = std::size_t(a.width);
  return (std::size_t(a.in_dim) * w + w) + std::size_t(a.hidden) * (w * w + w) + kHeads * (w + 1);
}

/// SIREN initialization for a Linear that feeds a sine (or is the head).
template <class S>
void siren_init(nn::Linear<S>& l, bool first, double omega0, Rng& rng) {
  const double fan_in = l.fan_in();
  const double bound = first ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / omega0;
  nn::fill_uniform(l.W, bound, rng);
  nn::fill_uniform(l.b, 1.0 / std::sqrt(fan_in), rng);
}

template <class S>
struct InrParams {
  InrArch arch;
  nn::Sequential<S> net;

  /// Indices of the Linear layers in `net`, input layer first, heads last.
  std::vector<std::size_t> linear_layers() const {
    std::vector<std::size_t> out;
    for (int k = 0; k <= arch.hidden + 1; ++k) out.push_back(std::size_t(2 * k));
    return out;
  }

  nn::Linear<S>& heads() { return net.template layer<nn::Linear<S>>(std::size_t(2 * (arch.hidden + 1))); }
};

template <class S>
nn::Sequential<S> build_inr_net(const InrArch& a) {
  validate(a);
  nn::Sequential<S> net;
  net.add(nn::Linear<S>(a.in_dim, a.width));
  net.add(nn::Sine<S>(a.omega0));
  for (int k = 0; k < a.hidden; ++k) {
    net.add(nn::Linear<S>(a.width, a.width));
    net.add(nn::Sine<S>(a.omega0));
  }
  // The three heads share one weight matrix, one row per head.
  net.add(nn::Linear<S>(a.width, kHeads));
  return net;
}

template <class S = float>
InrParams<S> inr_init(const InrArch& arch, std::uint64_t seed) {
  InrParams<S> p{arch, build_inr_net<S>(arch)};
  Rng rng(seed);
  bool first = true;
  for (auto i : p.linear_layers()) {
    siren_init(p.net.template layer<nn::Linear<S>>(i), first, arch.omega0, rng);
    first = false;
  }
  return p;
}

template <class S>
ParamStore inr_to_store(InrParams<S>& p) {
  ParamStore store;
  store.put_values("arch", {double(p.arch.in_dim), double(p.arch.width), double(p.arch.hidden), p.arch.omega0});
  export_refs(p.net.params(), store);
  return store;
}

template <class S = float>
InrParams<S> inr_from_store(const ParamStore& store) {
  const auto a = store.values("arch");
  if (a.size() != 4) throw FormatError("arch", "expected 4 values");
  InrArch arch{int(a[0]), int(a[1]), int(a[2]), a[3]};
  InrParams<S> p{arch, build_inr_net<S>(arch)};
  import_refs(store, p.net.params());
  return p;
}

// ---------------------------------------------------------------------------
// Queries

template <class S>
nn::Mat<S> coords_matrix(const CoordGrid& grid) {
  nn::Mat<S> m(3, Eigen::Index(grid.size()));
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (int c = 0; c < 3; ++c) m(c, Eigen::Index(i)) = S(grid.coords[i][std::size_t(c)]);
  return m;
}

template <class S>
void check_coord_range(const nn::Mat<S>& coords, const char* who) {
  if (coords.rows() != 3) throw InvalidArgument(std::string(who) + ": coordinates must be 3-vectors");
  if (coords.size() > 0 && (coords.minCoeff() < S(-1) || coords.maxCoeff() > S(1) || !coords.allFinite()))
    throw InvalidArgument(std::string(who) + ": coordinate outside [-1,1]^3");
}

/// Per-coordinate intensity and mask probabilities.
struct QueryResult {
  std::vector<float> image;
  std::vector<float> p_myo;
  std::vector<float> p_fib;

  std::size_t size() const { return image.size(); }
};

inline float logistic(double logit) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  // Keep probabilities strictly inside (0, 1) after rounding to float.
  return float(std::clamp(p, nn::kBceEps, 1.0 - nn::kBceEps));
}

/// Appends one 3 x N block of raw head outputs (image, logit, logit).
template <class S>
void append_raw(const nn::Mat<S>& raw, QueryResult& out) {
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    out.image.push_back(float(raw(0, j)));
    out.p_myo.push_back(logistic(double(raw(1, j))));
    out.p_fib.push_back(logistic(double(raw(2, j))));
  }
}

inline constexpr Eigen::Index kQueryChunk = 8192;

template <class S>
QueryResult inr_query(const InrParams<S>& params, const nn::Mat<S>& coords) {
  check_coord_range(coords, "inr_query");
  auto net = params.net;  // forward caches activations; keep the caller's params pure
  QueryResult out;
  for (Eigen::Index s = 0; s < coords.cols(); s += kQueryChunk) {
    const auto n = std::min(kQueryChunk, coords.cols() - s);
    append_raw(net.forward(coords.middleCols(s, n), nn::Mode::kEval), out);
  }
  return out;
}

template <class S>
QueryResult inr_query(const InrParams<S>& params, const CoordGrid& grid) {
  return inr_query(params, coords_matrix<S>(grid));
}

// ---------------------------------------------------------------------------
// Composite loss: mean over coordinates of |I - I^| + BCE(M1) + BCE(M2)

struct Triples {
  std::vector<double> image;
  std::vector<double> myo;
  std::vector<double> fib;

  std::size_t size() const { return image.size(); }
};

struct CompositeTerms {
  double image = 0;
  double myo = 0;
  double fib = 0;

  double total() const { return image + myo + fib; }
};

inline void check_triples(const Triples& pred, const Triples& target) {
  const auto n = pred.size();
  if (pred.myo.size() != n || pred.fib.size() != n || target.size() != n || target.myo.size() != n ||
      target.fib.size() != n)
    throw InvalidArgument("composite_loss: prediction/target counts differ");
  if (n == 0) throw InvalidArgument("composite_loss: empty sample set");
  for (std::size_t i = 0; i < n; ++i) {
    const bool binary = (target.myo[i] == 0.0 || target.myo[i] == 1.0) &&
                        (target.fib[i] == 0.0 || target.fib[i] == 1.0);
    if (!binary) throw InvalidArgument("composite_loss: mask targets must be 0 or 1");
  }
}

inline CompositeTerms composite_terms(const Triples& pred, const Triples& target) {
  check_triples(pred, target);
  CompositeTerms t;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    t.image += std::abs(target.image[i] - pred.image[i]);
    t.myo += nn::bce(pred.myo[i], target.myo[i]);
    t.fib += nn::bce(pred.fib[i], target.fib[i]);
  }
  const double n = double(pred.size());
  return {t.image / n, t.myo / n, t.fib / n};
}

inline double composite_loss(const Triples& pred, const Triples& target) {
  check_triples(pred, target);
  double sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    sum += std::abs(target.image[i] - pred.image[i]) + nn::bce(pred.myo[i], target.myo[i]) +
           nn::bce(pred.fib[i], target.fib[i]);
  return sum / double(pred.size());
}

/// Training form of the composite loss on raw head outputs (3 x N: image,
/// myocardium logit, fibrosis logit) against targets (3 x N: intensity and
/// binary masks). Writes dL/draw into `grad` when given.
template <class S>
S composite_loss_raw(const nn::Mat<S>& raw, const nn::Mat<S>& target, nn::Mat<S>* grad = nullptr) {
  if (raw.rows() != kHeads || target.rows() != kHeads || raw.cols() != target.cols() || raw.cols() == 0)
    throw InvalidArgument("composite_loss_raw: shape mismatch");
  const S n = S(raw.cols());
  const S eps = S(nn::kBceEps);
  if (grad) grad->resize(raw.rows(), raw.cols());
  S sum = 0;
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    const S r = raw(0, j) - target(0, j);
    sum += std::abs(r);
    if (grad) (*grad)(0, j) = (r > 0 ? S(1) : (r < 0 ? S(-1) : S(0))) / n;
    for (Eigen::Index h = 1; h < kHeads; ++h) {
      const S p = S(1) / (S(1) + std::exp(-raw(h, j)));
      const S y = target(h, j);
      sum += nn::bce(p, y);
      if (grad) {
        // d/dlogit of BCE(sigmoid(logit)); zero where the clamp is active.
        const bool clamped = p < eps || p > S(1) - eps;
        (*grad)(h, j) = clamped ? S(0) : (p - y) / n;
      }
    }
  }
  return sum / n;
}

// ---------------------------------------------------------------------------
// Fitting

struct FitConfig {
  int steps = 2000;
  std::uint32_t coords_per_step = 16384;
  double lr = 1e-4;
  std::uint64_t seed = 0;       // minibatch stream
  std::uint64_t init_seed = 0;  // parameter initialization
  double psnr_target = 0.0;     // early stop when > 0 and reached
  int log_every = 50;
};

struct FitHistoryRow {
  int step = 0;
  double loss = 0;
  double psnr = 0;
};

struct FitResult {
  InrParams<float> params;
  std::vector<FitHistoryRow> history;
};

/// 3 x N target matrix: intensity, myocardium, fibrosis.
inline nn::Mat<float> target_matrix(const Volume& v, const MaskSet& m) {
  const auto n = Eigen::Index(v.data.size());
  nn::Mat<float> t(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    t(0, i) = v.data[std::size_t(i)];
    t(1, i) = float(m.myo[std::size_t(i)]);
    t(2, i) = float(m.fib[std::size_t(i)]);
  }
  return t;
}

inline double psnr_from_mse(double mse, double peak = 1.0) {
  return mse > 0 ? std::min(99.0, 10.0 * std::log10(peak * peak / mse)) : 99.0;
}

/// Full-grid intensity PSNR (peak 1) of the network against row 0 of `target`.
template <class S>
double grid_psnr(nn::Sequential<S>& net, const nn::Mat<S>& coords, const nn::Mat<S>& target) {
  double se = 0;
  for (Eigen::Index s = 0; s < coords.cols(); s += kQueryChunk) {
    const auto n = std::min(kQueryChunk, coords.cols() - s);
    const nn::Mat<S> raw = net.forward(coords.middleCols(s, n), nn::Mode::kEval);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = std::clamp(double(raw(0, j)), 0.0, 1.0) - double(target(0, s + j));
      se += d * d;
    }
  }
  return psnr_from_mse(se / double(coords.cols()));
}

inline void validate(const FitConfig& c) {
  if (c.steps < 1) throw InvalidArgument("FitConfig: steps must be >= 1");
  if (c.coords_per_step < 1) throw InvalidArgument("FitConfig: coords per step must be >= 1");
  if (!(c.lr > 0)) throw InvalidArgument("FitConfig: lr must be > 0");
  if (c.log_every < 1) throw InvalidArgument("FitConfig: log_every must be >= 1");
}

inline void check_fit_inputs(const Volume& v, const MaskSet& m) {
  if (v.dims != m.dims) throw InvalidArgument("fit_inr: volume and mask dims differ");
  if (v.data.size() != voxel_count(v.dims) || m.myo.size() != v.data.size() || m.fib.size() != v.data.size())
    throw InvalidArgument("fit_inr: data length does not match dims");
  for (float f : v.data)
    if (!(f >= 0.0f && f <= 1.0f)) throw InvalidArgument("fit_inr: intensities must lie in [0,1]");
}

/// Gathers the columns `idx` of `m`.
template <class S>
nn::Mat<S> gather_cols(const nn::Mat<S>& m, const std::vector<std::uint32_t>& idx) {
  nn::Mat<S> out(m.rows(), Eigen::Index(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(Eigen::Index(k)) = m.col(idx[k]);
  return out;
}

inline FitResult fit_inr(const Volume& volume, const MaskSet& masks, const InrArch& arch, const FitConfig& config) {
  validate(config);
  check_fit_inputs(volume, masks);
  const nn::Mat<float> coords = coords_matrix<float>(normalize_coords(volume.dims));
  const nn::Mat<float> target = target_matrix(volume, masks);
  const auto n_total = std::uint32_t(coords.cols());
  const std::uint32_t batch = std::min(config.coords_per_step, n_total);

  FitResult result{inr_init<float>(arch, config.init_seed), {}};
  auto& net = result.params.net;
  const auto params = net.params();
  nn::OptState<float> opt;
  opt.config.lr = config.lr;
  Rng rng(config.seed);

  nn::Mat<float> grad;
  double window_loss = 0;
  int window_count = 0;
  for (int step = 1; step <= config.steps; ++step) {
    nn::Mat<float> xb, tb;
    if (batch == n_total) {
      xb = coords;
      tb = target;
    } else {
      const auto idx = rng.sample_without_replacement(n_total, batch);
      xb = gather_cols(coords, idx);
      tb = gather_cols(target, idx);
    }
    net.zero_grad();
    const nn::Mat<float> raw = net.forward(xb, nn::Mode::kTrain);
    const float loss = composite_loss_raw(raw, tb, &grad);
    if (!std::isfinite(loss)) throw NumericError("fit_inr: non-finite loss at step " + std::to_string(step));
    net.backward(grad);
    nn::adam_step(params, opt);
    window_loss += loss;
    ++window_count;

    if (step % config.log_every == 0 || step == config.steps) {
      const double psnr = grid_psnr(net, coords, target);
      result.history.push_back({step, window_loss / window_count, psnr});
      window_loss = 0;
      window_count = 0;
      if (config.psnr_target > 0 && psnr >= config.psnr_target) break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Rasterization

struct Rasterized {
  Volume image;
  MaskSet masks;
};

/// Image clamped to [0,1]; masks are probability > 0.5; then fib <- fib AND myo.
inline Rasterized rasterize_query(const QueryResult& q, const Dims& dims, const Spacing& spacing = kUnitSpacing) {
  Rasterized r{Volume(dims, spacing), MaskSet(dims)};
  if (q.size() != voxel_count(dims)) throw InvalidArgument("rasterize: query size does not match dims");
  for (std::size_t i = 0; i < q.size(); ++i) {
    r.image.data[i] = std::clamp(q.image[i], 0.0f, 1.0f);
    r.masks.myo[i] = q.p_myo[i] > 0.5f ? 1 : 0;
    r.masks.fib[i] = q.p_fib[i] > 0.5f ? 1 : 0;
  }
  r.masks.enforce_containment();
  return r;
}

template <class S>
Rasterized rasterize(const InrParams<S>& params, const Dims& dims, const Spacing& spacing = kUnitSpacing) {
  check_dims(dims, "rasterize");
  return rasterize_query(inr_query(params, normalize_coords(dims)), dims, spacing);
}

}  // namespace inrsynth
