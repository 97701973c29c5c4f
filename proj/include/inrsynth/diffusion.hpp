#pragma once

// Denoising diffusion over latent vectors.
//
// Forward step:  z_t = sqrt(1 - beta_t) z_{t-1} + sqrt(beta_t) eps
// Closed form:   z_t = sqrt(alpha_bar_t) z_0 + sqrt(1 - alpha_bar_t) eps
// Reverse step:  z_{t-1} = (z_t - sqrt(beta_t) eps_hat(z_t, t)) / sqrt(1 - beta_t)
//                          + sqrt(beta_t) n      (n ~ N(0, I) for t > 1 when sampler noise is on)
//
// Timesteps are 1-based throughout, matching the schedule arrays' meaning.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "inrsynth/checkpoint.hpp"
#include "inrsynth/common.hpp"
#include "inrsynth/nncore.hpp"

namespace inrsynth {

struct DiffusionSchedule {
  std::vector<double> beta;       // beta[t-1] is beta_t
  std::vector<double> alpha;      // 1 - beta_t
  std::vector<double> alpha_bar;  // prod_{s<=t} alpha_s

  int T() const { return int(beta.size()); }
  double beta_at(int t) const { return beta.at(std::size_t(t - 1)); }
  double alpha_bar_at(int t) const { return alpha_bar.at(std::size_t(t - 1)); }
};

/// Schedule from explicit betas. Zero betas are allowed here; they give the
/// degenerate identity process used to test the samplers.
inline DiffusionSchedule schedule_from_betas(std::vector<double> betas) {
  if (betas.empty()) throw InvalidArgument("schedule: T must be >= 1");
  DiffusionSchedule s;
  double prod = 1.0;
  for (double b : betas) {
    if (!(b >= 0.0 && b < 1.0)) throw InvalidArgument("schedule: beta must lie in [0, 1)");
    s.alpha.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
  }
  s.beta = std::move(betas);
  return s;
}

/// Linear betas from beta_start (t = 1) to beta_end (t = T).
inline DiffusionSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw InvalidArgument("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw InvalidArgument("make_schedule: need 0 < beta_start <= beta_end < 1");
  std::vector<double> b(std::size_t(T), beta_start);
  for (int t = 2; t <= T; ++t) b[std::size_t(t - 1)] = beta_start + double(t - 1) / double(T - 1) * (beta_end - beta_start);
  return schedule_from_betas(std::move(b));
}

inline void check_timestep(const DiffusionSchedule& s, int t, const char* who) {
  if (t < 1 || t > s.T()) throw InvalidArgument(std::string(who) + ": timestep out of range");
}

inline void check_same_width(const std::vector<double>& a, const std::vector<double>& b, const char* who) {
  if (a.size() != b.size()) throw InvalidArgument(std::string(who) + ": width mismatch");
}

inline std::vector<double> q_sample_step(const std::vector<double>& z_prev, double beta_t, const std::vector<double>& eps) {
  check_same_width(z_prev, eps, "q_sample_step");
  const double a = std::sqrt(1.0 - beta_t), b = std::sqrt(beta_t);
  std::vector<double> out(z_prev.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z_prev[i] + b * eps[i];
  return out;
}

inline std::vector<double> q_sample_step(const std::vector<double>& z_prev, int t, const std::vector<double>& eps,
                                         const DiffusionSchedule& s) {
  check_timestep(s, t, "q_sample_step");
  return q_sample_step(z_prev, s.beta_at(t), eps);
}

inline std::vector<double> q_sample(const std::vector<double>& z0, int t, const std::vector<double>& eps,
                                    const DiffusionSchedule& s) {
  check_timestep(s, t, "q_sample");
  check_same_width(z0, eps, "q_sample");
  const double a = std::sqrt(s.alpha_bar_at(t)), b = std::sqrt(1.0 - s.alpha_bar_at(t));
  std::vector<double> out(z0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

/// One reverse update given the predicted noise. `noise` may be empty (no
/// ancestral term).
inline std::vector<double> reverse_update(const std::vector<double>& z_t, const std::vector<double>& eps_hat,
                                          double beta_t, const std::vector<double>& noise) {
  check_same_width(z_t, eps_hat, "reverse_step");
  if (!noise.empty()) check_same_width(z_t, noise, "reverse_step");
  const double inv = 1.0 / std::sqrt(1.0 - beta_t), sb = std::sqrt(beta_t);
  std::vector<double> out(z_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = inv * (z_t[i] - sb * eps_hat[i]);
    if (!noise.empty()) out[i] += sb * noise[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Denoiser

struct DenoiserArch {
  int latent = 512;
  int temb = 128;
  int width = 1024;
  int layers = 4;
};

/// Sinusoidal embedding of a timestep: [sin(t f_i), cos(t f_i)], f_i = 10000^(-i/half).
inline std::vector<double> timestep_embedding(int t, int dim) {
  std::vector<double> e(std::size_t(dim), 0.0);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(10000.0) * double(i) / double(std::max(1, half)));
    e[std::size_t(i)] = std::sin(double(t) * f);
    e[std::size_t(half + i)] = std::cos(double(t) * f);
  }
  return e;
}

template <class S>
class Denoiser {
 public:
  Denoiser() = default;
  explicit Denoiser(const DenoiserArch& a) : arch_(a) {
    if (a.latent < 1 || a.temb < 0 || a.width < 1 || a.layers < 1) throw InvalidArgument("DenoiserArch: bad shape");
    int in = a.latent + a.temb;
    for (int k = 0; k < a.layers; ++k) {
      net_.add(nn::Linear<S>(in, a.width));
      net_.add(nn::Relu<S>());
      in = a.width;
    }
    net_.add(nn::Linear<S>(in, a.latent));
  }

  const DenoiserArch& arch() const { return arch_; }

  /// Hidden layers use the default scheme; the output layer starts at zero,
  /// so the untrained model predicts eps_hat = 0.
  void init(Rng& rng) {
    const auto n = net_.layers().size();
    for (std::size_t i = 0; i + 1 < n; i += 2) net_.template layer<nn::Linear<S>>(i).init_default(rng);
  }

  /// zt: latent x B; ts: B timesteps. Returns latent x B predicted noise.
  nn::Mat<S> forward(const nn::Mat<S>& zt, const std::vector<int>& ts, nn::Mode mode = nn::Mode::kEval) {
    if (zt.rows() != arch_.latent || Eigen::Index(ts.size()) != zt.cols())
      throw InvalidArgument("Denoiser: input shape mismatch");
    nn::Mat<S> x(arch_.latent + arch_.temb, zt.cols());
    x.topRows(arch_.latent) = zt;
    for (Eigen::Index j = 0; j < zt.cols(); ++j) {
      const auto e = timestep_embedding(ts[std::size_t(j)], arch_.temb);
      for (int i = 0; i < arch_.temb; ++i) x(arch_.latent + i, j) = S(e[std::size_t(i)]);
    }
    return net_.forward(std::move(x), mode);
  }

  /// Returns dL/dz_t (latent x B).
  nn::Mat<S> backward(const nn::Mat<S>& dy) { return net_.backward(dy).topRows(arch_.latent); }

  std::vector<nn::ParamRef<S>> params(const std::string& prefix = "den.") { return net_.params(prefix); }
  void zero_grad() { net_.zero_grad(); }
  nn::Sequential<S>& net() { return net_; }

  template <class T>
  Denoiser<T> cast() const {
    Denoiser<T> d;
    d.arch_ = arch_;
    d.net_ = net_.template cast<T>();
    return d;
  }

 private:
  template <class>
  friend class Denoiser;
  DenoiserArch arch_;
  nn::Sequential<S> net_;
};

/// eps-prediction loss on a batch: mean over all entries of (eps_hat - eps)^2.
template <class S>
S denoiser_loss(Denoiser<S>& den, const nn::Mat<S>& zt, const std::vector<int>& ts, const nn::Mat<S>& eps,
                bool backprop) {
  const nn::Mat<S> pred = den.forward(zt, ts, nn::Mode::kTrain);
  nn::Mat<S> grad;
  const S loss = nn::mse_loss(pred, eps, backprop ? &grad : nullptr);
  if (backprop) den.backward(grad);
  return loss;
}

struct DiffusionTrainConfig {
  int steps = 2000;
  int batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int log_every = 100;
};

struct DenoiserTrainResult {
  Denoiser<float> denoiser;
  std::vector<std::pair<int, double>> loss_history;  // (step, mean loss over the window)
  double initial_loss = 0;
};

inline DenoiserTrainResult train_denoiser(const std::vector<std::vector<double>>& latents, const DiffusionSchedule& sched,
                                          const DenoiserArch& arch, const DiffusionTrainConfig& cfg) {
  if (latents.size() < 2) throw InvalidArgument("train_denoiser: at least 2 latents required");
  for (const auto& z : latents)
    if (int(z.size()) != arch.latent) throw InvalidArgument("train_denoiser: latent width mismatch");
  if (cfg.steps < 1 || cfg.batch < 1) throw InvalidArgument("train_denoiser: bad configuration");

  DenoiserTrainResult out{Denoiser<float>(arch), {}, 0};
  auto& den = out.denoiser;
  Rng init_rng(substream(cfg.seed, "diffusion:init"));
  den.init(init_rng);
  auto params = den.params();
  nn::OptState<float> opt;
  opt.config.lr = cfg.lr;
  Rng rng(substream(cfg.seed, "diffusion:batches"));

  const auto d = arch.latent;
  nn::Mat<float> zt(d, cfg.batch), eps(d, cfg.batch);
  std::vector<int> ts(std::size_t(cfg.batch));
  double window = 0;
  int window_n = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    for (int j = 0; j < cfg.batch; ++j) {
      const auto& z0 = latents[rng.below(latents.size())];
      const int t = int(rng.integer(1, sched.T()));
      ts[std::size_t(j)] = t;
      const double a = std::sqrt(sched.alpha_bar_at(t)), b = std::sqrt(1.0 - sched.alpha_bar_at(t));
      for (int i = 0; i < d; ++i) {
        const double e = rng.normal();
        eps(i, j) = float(e);
        zt(i, j) = float(a * z0[std::size_t(i)] + b * e);
      }
    }
    den.zero_grad();
    const float loss = denoiser_loss(den, zt, ts, eps, true);
    if (!std::isfinite(loss)) throw NumericError("train_denoiser: non-finite loss at step " + std::to_string(step));
    if (step == 1) out.initial_loss = loss;
    nn::adam_step(params, opt);
    window += loss;
    ++window_n;
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      out.loss_history.emplace_back(step, window / window_n);
      window = 0;
      window_n = 0;
    }
  }
  return out;
}

/// One reverse step with the denoiser. `noise` must be empty at t = 1; it
/// is ignored there in any case.
template <class S>
std::vector<double> reverse_step(const std::vector<double>& z_t, int t, Denoiser<S>& den, const DiffusionSchedule& s,
                                 const std::vector<double>& noise) {
  check_timestep(s, t, "reverse_step");
  if (int(z_t.size()) != den.arch().latent) throw InvalidArgument("reverse_step: latent width mismatch");
  nn::Mat<S> zm(den.arch().latent, 1);
  for (std::size_t i = 0; i < z_t.size(); ++i) zm(Eigen::Index(i), 0) = S(z_t[i]);
  const nn::Mat<S> e = den.forward(zm, {t});
  std::vector<double> eps_hat(z_t.size());
  for (std::size_t i = 0; i < z_t.size(); ++i) eps_hat[i] = double(e(Eigen::Index(i), 0));
  return reverse_update(z_t, eps_hat, s.beta_at(t), t > 1 ? noise : std::vector<double>{});
}

/// Ancestral sampling: z_T ~ N(0, I), then reverse steps t = T..1.
template <class S>
std::vector<double> sample_latent(Denoiser<S>& den, const DiffusionSchedule& s, std::uint64_t seed,
                                  bool sampler_noise = true) {
  Rng rng(seed);
  const auto d = std::size_t(den.arch().latent);
  std::vector<double> z(d);
  for (auto& v : z) v = rng.normal();
  std::vector<double> noise;
  for (int t = s.T(); t >= 1; --t) {
    noise.clear();
    if (sampler_noise && t > 1) {
      noise.resize(d);
      for (auto& v : noise) v = rng.normal();
    }
    z = reverse_step(z, t, den, s, noise);
    for (double v : z)
      if (!std::isfinite(v)) throw NumericError("sample_latent: non-finite value at timestep " + std::to_string(t));
  }
  return z;
}

/// `n` samples, sample i seeded from the named sub-stream "sample:i".
template <class S>
std::vector<std::vector<double>> sample_latents(const Denoiser<S>& den, const DiffusionSchedule& s, std::size_t n,
                                                std::uint64_t seed, bool sampler_noise = true, int jobs = 1) {
  std::vector<std::vector<double>> out(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    auto local = den;
    out[i] = sample_latent(local, s, substream(seed, "sample:" + std::to_string(i)), sampler_noise);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

struct ScheduleSpec {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

inline ParamStore diffusion_to_store(Denoiser<float>& den, const ScheduleSpec& sched) {
  ParamStore s;
  const auto& a = den.arch();
  s.put_values("meta.denoiser_arch", {double(a.latent), double(a.temb), double(a.width), double(a.layers)});
  // The sampler rebuilds the betas from these three numbers.
  s.put(NamedArray{"meta.schedule", {3}, {float(sched.T), float(sched.beta_start), float(sched.beta_end)}});
  export_refs(den.params(), s);
  return s;
}

struct DiffusionModel {
  Denoiser<float> denoiser;
  ScheduleSpec schedule;
};

inline DiffusionModel diffusion_from_store(const ParamStore& s) {
  const auto a = s.values("meta.denoiser_arch");
  const auto sc = s.values("meta.schedule");
  if (a.size() != 4 || sc.size() != 3) throw FormatError("meta", "malformed diffusion metadata");
  DiffusionModel m{Denoiser<float>(DenoiserArch{int(a[0]), int(a[1]), int(a[2]), int(a[3])}),
                   ScheduleSpec{int(sc[0]), sc[1], sc[2]}};
  import_refs(s, m.denoiser.params());
  return m;
}

}  // namespace inrsynth
