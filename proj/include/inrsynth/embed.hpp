#pragma once

// Weight-space embedding of fitted INRs.
//
// An INR is read as a set of neurons. Each neuron becomes one token row
// (incoming weights, bias, one-hot layer tag), a pointwise MLP with
// batchnorm+ReLU lifts every row, and a max over rows yields the latent z.
// The decoder is a coordinate network conditioned on z.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "inrsynth/checkpoint.hpp"
#include "inrsynth/common.hpp"
#include "inrsynth/inr.hpp"
#include "inrsynth/nncore.hpp"
#include "inrsynth/volgrid.hpp"

namespace inrsynth {

// ---------------------------------------------------------------------------
// Tokens

struct TokenLayout {
  int max_fan_in = 0;
  int layers = 0;
  int rows = 0;

  /// Weight slots, one bias slot, then the layer tag.
  int width() const { return max_fan_in + 1 + layers; }
  int bias_col() const { return max_fan_in; }
};

inline TokenLayout token_layout(const InrArch& a) {
  validate(a);
  TokenLayout t;
  t.max_fan_in = std::max(a.in_dim, a.width);
  t.layers = a.hidden + 2;
  t.rows = a.width * (a.hidden + 1) + kHeads;
  return t;
}

struct WeightTokens {
  nn::Mat<float> rows;  // one row per neuron

  std::size_t count() const { return std::size_t(rows.rows()); }
};

template <class S>
WeightTokens tokenize(const InrParams<S>& params, const InrArch& canonical) {
  if (!(params.arch == canonical)) throw InvalidArgument("tokenize: INR architecture does not match the model");
  const auto layout = token_layout(canonical);
  WeightTokens t{nn::Mat<float>::Zero(layout.rows, layout.width())};
  Eigen::Index r = 0;
  int tag = 0;
  for (auto idx : params.linear_layers()) {
    const auto& l = std::get<nn::Linear<S>>(params.net.layers()[idx]);
    for (Eigen::Index j = 0; j < l.W.rows(); ++j, ++r) {
      t.rows.row(r).head(l.W.cols()) = l.W.row(j).template cast<float>();
      t.rows(r, layout.bias_col()) = float(l.b(j, 0));
      t.rows(r, layout.max_fan_in + 1 + tag) = 1.0f;
    }
    ++tag;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Encoder

struct EncoderArch {
  std::vector<int> widths{512, 512, 512, 512};  // last entry is the latent width

  int latent() const { return widths.back(); }
};

template <class S>
class SetEncoder {
 public:
  SetEncoder() = default;
  SetEncoder(int token_width, const EncoderArch& arch) : arch_(arch) {
    if (arch.widths.empty()) throw InvalidArgument("EncoderArch: at least one layer required");
    int in = token_width;
    for (int w : arch.widths) {
      pointwise_.add(nn::Linear<S>(in, w));
      pointwise_.add(nn::BatchNorm<S>(w));
      pointwise_.add(nn::Relu<S>());
      in = w;
    }
  }

  void init(Rng& rng) {
    for (std::size_t i = 0; i < pointwise_.layers().size(); i += 3)
      pointwise_.template layer<nn::Linear<S>>(i).init_default(rng);
  }

  const EncoderArch& arch() const { return arch_; }
  int latent() const { return arch_.latent(); }

  /// Encodes several token sets at once. Batchnorm statistics (train mode)
  /// are taken over the rows of all sets together; pooling is per set.
  /// Returns latent x sets.
  nn::Mat<S> forward(const std::vector<const nn::Mat<S>*>& token_sets, nn::Mode mode) {
    Eigen::Index total = 0;
    for (auto* t : token_sets) total += t->rows();
    nn::Mat<S> x(token_sets.front()->cols(), total);
    sizes_.clear();
    Eigen::Index c = 0;
    for (auto* t : token_sets) {
      x.middleCols(c, t->rows()) = t->transpose();
      c += t->rows();
      sizes_.push_back(t->rows());
    }
    const nn::Mat<S> h = pointwise_.forward(std::move(x), mode);
    pools_.assign(token_sets.size(), nn::MaxPoolSet<S>());
    nn::Mat<S> z(h.rows(), Eigen::Index(token_sets.size()));
    c = 0;
    for (std::size_t k = 0; k < token_sets.size(); ++k) {
      z.col(Eigen::Index(k)) = pools_[k].forward(h.middleCols(c, sizes_[k]), mode);
      c += sizes_[k];
    }
    return z;
  }

  /// Returns the gradient w.r.t. the token matrices, stacked like forward's input.
  nn::Mat<S> backward(const nn::Mat<S>& dz) {
    if (pools_.empty()) throw StateError("SetEncoder: backward without forward cache");
    Eigen::Index total = 0;
    for (auto s : sizes_) total += s;
    nn::Mat<S> dh(dz.rows(), total);
    Eigen::Index c = 0;
    for (std::size_t k = 0; k < pools_.size(); ++k) {
      dh.middleCols(c, sizes_[k]) = pools_[k].backward(dz.col(Eigen::Index(k)));
      c += sizes_[k];
    }
    return pointwise_.backward(std::move(dh));
  }

  nn::Vec<S> encode_one(const nn::Mat<S>& tokens, nn::Mode mode) { return forward({&tokens}, mode).col(0); }

  std::vector<nn::ParamRef<S>> params(const std::string& prefix = "enc.") { return pointwise_.params(prefix); }
  std::vector<nn::ParamRef<S>> state(const std::string& prefix = "enc.") { return pointwise_.state(prefix); }
  nn::Sequential<S>& pointwise() { return pointwise_; }

  /// Replaces each batchnorm's running statistics with the exact statistics
  /// of `token_sets` pooled, layer by layer.
  void calibrate(const std::vector<const nn::Mat<S>*>& token_sets) {
    auto& layers = pointwise_.layers();
    for (std::size_t bn_idx = 1; bn_idx < layers.size(); bn_idx += 3) {
      auto& bn = std::get<nn::BatchNorm<S>>(layers[bn_idx]);
      const auto f = bn.gamma.rows();
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(f), sumsq = Eigen::VectorXd::Zero(f);
      double count = 0;
      for (auto* t : token_sets) {
        nn::Mat<S> x = t->transpose();
        for (std::size_t i = 0; i < bn_idx; ++i)
          x = std::visit([&](auto& layer) { return layer.forward(x, nn::Mode::kEval); }, layers[i]);
        const Eigen::MatrixXd xd = x.template cast<double>();
        sum += xd.rowwise().sum();
        sumsq += xd.array().square().rowwise().sum().matrix();
        count += double(x.cols());
      }
      const Eigen::VectorXd mean = sum / count;
      const Eigen::VectorXd var =
          ((sumsq / count).array() - mean.array().square()).max(0.0) * (count > 1 ? count / (count - 1) : 1.0);
      bn.running_mean = mean.cast<S>();
      bn.running_var = var.cast<S>();
    }
  }

 private:
  EncoderArch arch_;
  nn::Sequential<S> pointwise_;
  std::vector<nn::MaxPoolSet<S>> pools_;
  std::vector<Eigen::Index> sizes_;
};

// ---------------------------------------------------------------------------
// Decoder

struct DecoderArch {
  int latent = 512;
  int cond = 256;   // width of the latent projection
  int width = 256;  // sine layer width
  int layers = 4;   // sine layers
  double omega0 = 30.0;
};

/// Coordinate network conditioned on z:
///   c  = P z + p
///   h1 = sin(omega0 * (Wx x + Wc c + b1))
///   h  = sine layers ...
///   out = heads(h)  (image, myocardium logit, fibrosis logit)
template <class S>
class LatentDecoder {
 public:
  LatentDecoder() = default;
  explicit LatentDecoder(const DecoderArch& a) : arch_(a), proj_(a.latent, a.cond) {
    if (a.layers < 1) throw InvalidArgument("DecoderArch: at least one sine layer required");
    Wx = nn::Mat<S>::Zero(a.width, 3);
    Wc = nn::Mat<S>::Zero(a.width, a.cond);
    b1 = nn::Mat<S>::Zero(a.width, 1);
    dWx = Wx;
    dWc = Wc;
    db1 = b1;
    tail_.add(nn::Sine<S>(a.omega0));
    for (int k = 1; k < a.layers; ++k) {
      tail_.add(nn::Linear<S>(a.width, a.width));
      tail_.add(nn::Sine<S>(a.omega0));
    }
    tail_.add(nn::Linear<S>(a.width, kHeads));
  }

  const DecoderArch& arch() const { return arch_; }

  void init(Rng& rng) {
    proj_.init_default(rng);
    // Coordinate columns get the SIREN first-layer bound for 3 inputs; the
    // conditioning columns get the hidden-layer bound for their fan-in.
    nn::fill_uniform(Wx, 1.0 / 3.0, rng);
    nn::fill_uniform(Wc, std::sqrt(6.0 / arch_.cond) / arch_.omega0, rng);
    nn::fill_uniform(b1, 1.0 / std::sqrt(3.0 + arch_.cond), rng);
    for (std::size_t i = 1; i < tail_.layers().size(); i += 2)
      siren_init(tail_.template layer<nn::Linear<S>>(i), false, arch_.omega0, rng);
  }

  /// z: latent x 1, coords: 3 x N. Returns 3 x N raw head outputs.
  nn::Mat<S> forward(const nn::Mat<S>& z, const nn::Mat<S>& coords, nn::Mode mode) {
    if (z.rows() != arch_.latent || z.cols() != 1) throw InvalidArgument("LatentDecoder: latent width mismatch");
    if (coords.rows() != 3) throw InvalidArgument("LatentDecoder: coordinates must be 3-vectors");
    const nn::Mat<S> c = proj_.forward(z, mode);
    c_ = c;
    x_ = coords;
    cached_ = true;
    nn::Mat<S> pre = Wx * coords;
    pre.colwise() += (Wc * c + b1).col(0);
    return tail_.forward(std::move(pre), mode);
  }

  /// Accumulates parameter gradients; returns dL/dz (latent x 1).
  nn::Mat<S> backward(const nn::Mat<S>& draw) {
    if (!cached_) throw StateError("LatentDecoder: backward without forward cache");
    const nn::Mat<S> dpre = tail_.backward(draw);
    dWx.noalias() += dpre * x_.transpose();
    const nn::Mat<S> dsum = dpre.rowwise().sum();
    db1 += dsum;
    dWc.noalias() += dsum * c_.transpose();
    const nn::Mat<S> dc = Wc.transpose() * dsum;
    return proj_.backward(dc);
  }

  std::vector<nn::ParamRef<S>> params(const std::string& prefix = "dec.") {
    std::vector<nn::ParamRef<S>> out;
    proj_.collect(prefix + "proj.", out);
    out.push_back({prefix + "first.Wx", &Wx, &dWx});
    out.push_back({prefix + "first.Wc", &Wc, &dWc});
    out.push_back({prefix + "first.b", &b1, &db1});
    for (auto& p : tail_.params(prefix + "tail.")) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto& p : params()) p.grad->setZero();
  }

  nn::Mat<S> Wx, Wc, b1, dWx, dWc, db1;

 private:
  DecoderArch arch_;
  nn::Linear<S> proj_;
  nn::Sequential<S> tail_;
  nn::Mat<S> c_, x_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------
// The trained model: encoder, decoder, and latent standardization

struct LatentStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct EmbedModel {
  InrArch inr_arch;
  SetEncoder<float> encoder;
  LatentDecoder<float> decoder;
  LatentStats stats;

  int latent() const { return encoder.latent(); }

  std::vector<double> standardize(const std::vector<double>& z) const {
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - stats.mean[i]) / stats.stddev[i];
    return out;
  }

  std::vector<double> destandardize(const std::vector<double>& u) const {
    std::vector<double> out(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) out[i] = stats.mean[i] + u[i] * stats.stddev[i];
    return out;
  }
};

inline EmbedModel make_embed_model(const InrArch& inr, const EncoderArch& enc, DecoderArch dec, std::uint64_t seed) {
  dec.latent = enc.latent();
  EmbedModel m{inr, SetEncoder<float>(token_layout(inr).width(), enc), LatentDecoder<float>(dec), {}};
  Rng rng(seed);
  m.encoder.init(rng);
  m.decoder.init(rng);
  m.stats.mean.assign(std::size_t(enc.latent()), 0.0);
  m.stats.stddev.assign(std::size_t(enc.latent()), 1.0);
  return m;
}

/// Raw (unstandardized) latent of one INR, eval mode.
inline std::vector<double> encode(EmbedModel& m, const WeightTokens& tokens) {
  const auto layout = token_layout(m.inr_arch);
  if (tokens.rows.cols() != layout.width() || Eigen::Index(tokens.count()) != layout.rows)
    throw InvalidArgument("encode: token layout does not match the model");
  const nn::Vec<float> z = m.encoder.encode_one(tokens.rows, nn::Mode::kEval);
  if (!z.allFinite()) throw NumericError("encode: non-finite activations");
  return {z.data(), z.data() + z.size()};
}

/// Decodes a raw latent at the given coordinates.
inline QueryResult decode_query(EmbedModel& m, const std::vector<double>& z, const nn::Mat<float>& coords) {
  check_coord_range(coords, "decode_query");
  if (int(z.size()) != m.latent()) throw InvalidArgument("decode_query: latent width mismatch");
  nn::Mat<float> zm(m.latent(), 1);
  for (int i = 0; i < m.latent(); ++i) zm(i, 0) = float(z[std::size_t(i)]);
  auto dec = m.decoder;  // forward caches activations; keep the model pure
  QueryResult out;
  for (Eigen::Index s = 0; s < coords.cols(); s += kQueryChunk) {
    const auto n = std::min(kQueryChunk, coords.cols() - s);
    append_raw(dec.forward(zm, coords.middleCols(s, n), nn::Mode::kEval), out);
  }
  return out;
}

inline QueryResult decode_query(EmbedModel& m, const std::vector<double>& z, const CoordGrid& grid) {
  return decode_query(m, z, coords_matrix<float>(grid));
}

// ---------------------------------------------------------------------------
// Persistence

inline ParamStore embed_to_store(EmbedModel& m) {
  ParamStore s;
  const auto& a = m.inr_arch;
  s.put_values("meta.inr_arch", {double(a.in_dim), double(a.width), double(a.hidden), a.omega0});
  std::vector<double> enc(m.encoder.arch().widths.begin(), m.encoder.arch().widths.end());
  s.put_values("meta.encoder_widths", enc);
  const auto& d = m.decoder.arch();
  s.put_values("meta.decoder_arch", {double(d.latent), double(d.cond), double(d.width), double(d.layers), d.omega0});
  export_refs(m.encoder.state(), s);
  export_refs(m.decoder.params(), s);
  s.put_values("stats.mean", m.stats.mean);
  s.put_values("stats.stddev", m.stats.stddev);
  return s;
}

inline EmbedModel embed_from_store(const ParamStore& s) {
  const auto a = s.values("meta.inr_arch");
  const auto e = s.values("meta.encoder_widths");
  const auto d = s.values("meta.decoder_arch");
  if (a.size() != 4 || e.empty() || d.size() != 5) throw FormatError("meta", "malformed architecture metadata");
  InrArch inr{int(a[0]), int(a[1]), int(a[2]), a[3]};
  EncoderArch enc;
  enc.widths.clear();
  for (double w : e) enc.widths.push_back(int(w));
  DecoderArch dec{int(d[0]), int(d[1]), int(d[2]), int(d[3]), d[4]};
  EmbedModel m{inr, SetEncoder<float>(token_layout(inr).width(), enc), LatentDecoder<float>(dec), {}};
  import_refs(s, m.encoder.state());
  import_refs(s, m.decoder.params());
  m.stats.mean = s.values("stats.mean");
  m.stats.stddev = s.values("stats.stddev");
  if (int(m.stats.mean.size()) != m.latent() || m.stats.stddev.size() != m.stats.mean.size())
    throw FormatError("stats", "latent statistics have the wrong width");
  return m;
}

// ---------------------------------------------------------------------------
// Training

struct EmbedTrainConfig {
  int steps = 3000;
  int cases_per_step = 8;
  std::uint32_t coords_per_case = 2048;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int log_every = 100;
};

/// One training example: a fitted INR and the data it was fitted to.
struct EmbedCase {
  const InrParams<float>* inr;
  const Volume* image;
  const MaskSet* masks;
};

struct EmbedTrainResult {
  EmbedModel model;
  std::vector<std::pair<int, double>> loss_history;
  std::vector<double> case_myo_dice;  // decoded vs ground truth, per training case
  std::vector<double> case_psnr;
};

inline double mask_dice(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::size_t inter = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += std::size_t(a[i] && b[i]);
    sa += a[i];
    sb += b[i];
  }
  return sa + sb == 0 ? 1.0 : 2.0 * double(inter) / double(sa + sb);
}

/// Per-dimension mean and standard deviation of raw latents. Dimensions with
/// (numerically) zero spread keep stddev 1 so standardization stays finite.
inline LatentStats latent_stats(const std::vector<std::vector<double>>& latents) {
  const std::size_t d = latents.front().size();
  LatentStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  const double n = double(latents.size());
  for (const auto& z : latents)
    for (std::size_t i = 0; i < d; ++i) s.mean[i] += z[i] / n;
  for (std::size_t i = 0; i < d; ++i) {
    double v = 0;
    for (const auto& z : latents) v += (z[i] - s.mean[i]) * (z[i] - s.mean[i]);
    const double sd = std::sqrt(v / n);
    s.stddev[i] = sd > 1e-6 * (1.0 + std::abs(s.mean[i])) ? sd : 1.0;
  }
  return s;
}

inline EmbedTrainResult train_autoencoder(const std::vector<EmbedCase>& cases, const InrArch& inr_arch,
                                          const EncoderArch& enc_arch, const DecoderArch& dec_arch,
                                          const EmbedTrainConfig& cfg) {
  if (cases.size() < 2) throw InvalidArgument("train_autoencoder: at least 2 training cases required");
  if (cfg.steps < 1 || cfg.cases_per_step < 1 || cfg.coords_per_case < 1)
    throw InvalidArgument("train_autoencoder: bad configuration");
  const Dims dims = cases.front().image->dims;
  for (const auto& c : cases)
    if (c.image->dims != dims || c.masks->dims != dims)
      throw InvalidArgument("train_autoencoder: all cases must share dims");

  EmbedTrainResult result{make_embed_model(inr_arch, enc_arch, dec_arch, substream(cfg.seed, "embed:init")), {}, {}, {}};
  auto& model = result.model;
  std::vector<WeightTokens> tokens;
  std::vector<nn::Mat<float>> targets;
  for (const auto& c : cases) {
    tokens.push_back(tokenize(*c.inr, inr_arch));
    check_fit_inputs(*c.image, *c.masks);
    targets.push_back(target_matrix(*c.image, *c.masks));
  }
  const nn::Mat<float> coords = coords_matrix<float>(normalize_coords(dims));
  const auto n_coords = std::uint32_t(coords.cols());
  const std::uint32_t per_case = std::min(cfg.coords_per_case, n_coords);
  const auto n_cases = std::uint32_t(cases.size());
  const auto k = std::min<std::uint32_t>(std::uint32_t(cfg.cases_per_step), n_cases);

  auto params = model.encoder.params();
  for (auto& p : model.decoder.params()) params.push_back(p);
  nn::OptState<float> opt;
  opt.config.lr = cfg.lr;
  Rng rng(substream(cfg.seed, "embed:batches"));

  nn::Mat<float> grad;
  double window = 0;
  int window_n = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto chosen = rng.sample_without_replacement(n_cases, k);
    std::vector<const nn::Mat<float>*> sets;
    for (auto i : chosen) sets.push_back(&tokens[i].rows);
    for (auto& p : params) p.grad->setZero();
    const nn::Mat<float> z = model.encoder.forward(sets, nn::Mode::kTrain);
    nn::Mat<float> dz(z.rows(), z.cols());
    double loss = 0;
    for (std::uint32_t b = 0; b < k; ++b) {
      const auto idx = per_case == n_coords ? std::vector<std::uint32_t>{} : rng.sample_without_replacement(n_coords, per_case);
      const nn::Mat<float> xb = idx.empty() ? coords : gather_cols(coords, idx);
      const nn::Mat<float> tb = idx.empty() ? targets[chosen[b]] : gather_cols(targets[chosen[b]], idx);
      const nn::Mat<float> raw = model.decoder.forward(z.col(b), xb, nn::Mode::kTrain);
      const float l = composite_loss_raw(raw, tb, &grad);
      if (!std::isfinite(l)) throw NumericError("train_autoencoder: non-finite loss at step " + std::to_string(step));
      loss += l / k;
      grad /= float(k);
      dz.col(b) = model.decoder.backward(grad);
    }
    model.encoder.backward(dz);
    nn::adam_step(params, opt);
    window += loss;
    ++window_n;
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      result.loss_history.emplace_back(step, window / window_n);
      window = 0;
      window_n = 0;
    }
  }

  std::vector<const nn::Mat<float>*> all;
  for (const auto& t : tokens) all.push_back(&t.rows);
  model.encoder.calibrate(all);

  std::vector<std::vector<double>> latents;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    latents.push_back(encode(model, tokens[i]));
    const auto q = decode_query(model, latents.back(), coords);
    const auto r = rasterize_query(q, dims);
    result.case_myo_dice.push_back(mask_dice(r.masks.myo, cases[i].masks->myo));
    double se = 0;
    for (std::size_t v = 0; v < r.image.data.size(); ++v) {
      const double d = double(r.image.data[v]) - double(cases[i].image->data[v]);
      se += d * d;
    }
    result.case_psnr.push_back(psnr_from_mse(se / double(r.image.data.size())));
  }
  model.stats = latent_stats(latents);
  return result;
}

}  // namespace inrsynth
