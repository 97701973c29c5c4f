#pragma once

// Command-line front end. Each subcommand is a thin wrapper around a stage
// function, so `pipeline` and the tests can call the same code paths.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "inrsynth/config.hpp"
#include "inrsynth/dataset.hpp"
#include "inrsynth/diffusion.hpp"
#include "inrsynth/embed.hpp"
#include "inrsynth/inr.hpp"
#include "inrsynth/metrics.hpp"
#include "inrsynth/phantom.hpp"
#include "inrsynth/segbench.hpp"
#include "inrsynth/synth.hpp"

namespace inrsynth::cli {

/// A failure inside a named stage; reported as one machine-parseable line.
class StageFailure : public std::runtime_error {
 public:
  StageFailure(std::string stage, const std::string& what) : std::runtime_error(what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

inline void log(const std::string& stage, const std::string& msg) { std::cerr << "[" << stage << "] " << msg << "\n"; }

template <class Fn>
auto in_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StageFailure(stage, e.what());
  }
}

inline std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

// ---------------------------------------------------------------------------
// Config -> module settings

inline Range<double> range_or(const Config& c, const std::string& key, Range<double> fallback) {
  if (c.is_auto(key)) return fallback;
  const auto v = c.nums(key);
  if (v.size() != 2) throw InvalidArgument("config key '" + key + "': expected lo,hi");
  return {v[0], v[1]};
}

inline PhantomParams phantom_params(const Config& c) {
  auto p = default_phantom_params(c.dims("dims"));
  p.inner_radius = range_or(c, "inner_radius", p.inner_radius);
  p.wall_thickness = range_or(c, "wall_thickness", p.wall_thickness);
  p.blob_radius = range_or(c, "blob_radius", p.blob_radius);
  if (!c.is_auto("drift_max")) p.drift_max = c.num("drift_max");
  const auto bc = c.ints("blob_count");
  if (bc.size() != 2) throw InvalidArgument("config key 'blob_count': expected lo,hi");
  p.blob_count = {bc[0], bc[1]};
  p.noise_sigma = c.num("noise_sigma");
  p.levels = {c.num("level_background"), c.num("level_myo"), c.num("level_blood"), c.num("level_fibrosis")};
  validate(p);
  return p;
}

inline InrArch inr_arch(const Config& c) {
  InrArch a{3, c.integer("inr_width"), c.integer("inr_hidden"), c.num("inr_omega0")};
  validate(a);
  return a;
}

inline FitConfig fit_config(const Config& c) {
  FitConfig f;
  f.steps = c.integer("inr_steps");
  f.coords_per_step = std::uint32_t(std::max(1, c.integer("inr_coords_per_step")));
  f.lr = c.num("inr_lr");
  f.psnr_target = c.num("inr_psnr_target");
  f.log_every = c.integer("inr_log_every");
  validate(f);
  return f;
}

inline EncoderArch encoder_arch(const Config& c) {
  EncoderArch e{c.ints("enc_widths")};
  for (int w : e.widths)
    if (w < 1) throw InvalidArgument("config key 'enc_widths': widths must be >= 1");
  return e;
}

inline DecoderArch decoder_arch(const Config& c) {
  return DecoderArch{encoder_arch(c).widths.back(), c.integer("dec_cond"), c.integer("dec_width"),
                     c.integer("dec_layers"), c.num("inr_omega0")};
}

inline EmbedTrainConfig embed_config(const Config& c, std::uint64_t seed) {
  EmbedTrainConfig e;
  e.steps = c.integer("embed_steps");
  e.cases_per_step = c.integer("embed_cases_per_step");
  e.coords_per_case = std::uint32_t(std::max(1, c.integer("embed_coords_per_case")));
  e.lr = c.num("embed_lr");
  e.seed = substream(seed, "embed");
  return e;
}

inline ScheduleSpec schedule_spec(const Config& c) {
  return {c.integer("diff_T"), c.num("diff_beta_start"), c.num("diff_beta_end")};
}

inline DenoiserArch denoiser_arch(const Config& c, int latent) {
  return {latent, c.integer("den_temb"), c.integer("den_width"), c.integer("den_layers")};
}

inline DiffusionTrainConfig diffusion_config(const Config& c, std::uint64_t seed) {
  DiffusionTrainConfig d;
  d.steps = c.integer("diff_steps");
  d.batch = c.integer("diff_batch");
  d.lr = c.num("diff_lr");
  d.seed = substream(seed, "diffusion");
  return d;
}

inline SegConfig seg_config(const Config& c) {
  SegConfig s;
  s.patch = c.integer("seg_patch");
  s.hidden = c.ints("seg_hidden");
  s.epochs = c.integer("seg_epochs");
  s.iters_per_epoch = c.integer("seg_iters_per_epoch");
  s.batch = c.integer("seg_batch");
  s.lr = c.num("seg_lr");
  s.real_count = c.integer("seg_real");
  s.synth_levels = c.ints("seg_levels");
  s.seeds = c.integer("seg_seeds");
  validate(s);
  return s;
}

/// Spacing used for synthetic volumes: the middle of the phantom spacing ranges.
inline Spacing synth_spacing(const PhantomParams& p) {
  const double xy = 0.5 * (p.spacing_inplane.lo + p.spacing_inplane.hi);
  return {xy, xy, 0.5 * (p.spacing_through.lo + p.spacing_through.hi)};
}

// ---------------------------------------------------------------------------
// Stages

inline std::vector<const Case*> pointers(const std::vector<Case>& v) {
  std::vector<const Case*> out;
  for (const auto& c : v) out.push_back(&c);
  return out;
}

inline void phantom_gen(const Config& cfg, std::size_t n, Split split, const fs::path& out_dir, std::uint64_t seed,
                        int jobs) {
  auto cohort = generate_cohort(n, phantom_params(cfg), seed, split, jobs);
  std::vector<Case> cases;
  const std::string prefix = std::string(split_name(split)) + "_";
  for (std::size_t i = 0; i < cohort.size(); ++i)
    cases.push_back({case_id(prefix.c_str(), i), std::move(cohort[i].image), std::move(cohort[i].masks)});
  write_cases(out_dir, cases);
}

inline void write_history(const fs::path& file, const std::vector<FitHistoryRow>& rows) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw FormatError("path", "cannot write " + file.string());
  os << "step,loss,psnr\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.6f\n", r.step, r.loss, r.psnr);
    os << buf;
  }
}

/// Fits one INR per case. All cases share one initialization, as the weight
/// encoder expects; minibatch streams are per case ID.
inline void inr_fit(const Config& cfg, const fs::path& in_dir, const fs::path& out_dir, std::uint64_t seed, int jobs) {
  auto cases = read_cases(in_dir);
  const auto arch = inr_arch(cfg);
  auto fc = fit_config(cfg);
  fc.init_seed = substream(seed, "inr:init");
  fs::create_directories(out_dir);
  std::vector<ManifestEntry> entries(cases.size());
  std::vector<double> final_psnr(cases.size());
  parallel_for(cases.size(), jobs, [&](std::size_t i) {
    auto& c = cases[i];
    const auto [lo, hi] = std::minmax_element(c.image.data.begin(), c.image.data.end());
    if (*lo < 0.0f || *hi > 1.0f) normalize_intensity(c.image);
    auto f = fc;
    f.seed = substream(seed, "inr:fit:" + c.id);
    auto r = fit_inr(c.image, c.masks, arch, f);
    write_checkpoint(out_dir / (c.id + ".ckpt"), inr_to_store(r.params));
    write_history(out_dir / (c.id + "_history.csv"), r.history);
    entries[i] = {c.id, {c.id + ".ckpt", c.id + "_history.csv"}};
    final_psnr[i] = r.history.empty() ? 0.0 : r.history.back().psnr;
  });
  write_manifest(out_dir / kManifestName, entries);
  log("inr-fit", std::to_string(cases.size()) + " INRs, median final PSNR " + std::to_string(median_of(final_psnr)));
}

struct LoadedInr {
  std::string id;
  InrParams<float> params;
};

inline std::vector<LoadedInr> load_inrs(const fs::path& dir) {
  std::vector<LoadedInr> out;
  for (const auto& e : read_manifest(dir / kManifestName))
    out.push_back({e.id, inr_from_store<float>(read_checkpoint(resolve(dir, e.paths[0])))});
  return out;
}

inline EmbedModel embed_train(const Config& cfg, const fs::path& inr_dir, const fs::path& data_dir, const fs::path& out,
                              std::uint64_t seed) {
  const auto inrs = load_inrs(inr_dir);
  auto data = read_cases(data_dir);
  for (auto& c : data) {
    const auto [lo, hi] = std::minmax_element(c.image.data.begin(), c.image.data.end());
    if (*lo < 0.0f || *hi > 1.0f) normalize_intensity(c.image);
  }
  std::vector<EmbedCase> cases;
  for (const auto& inr : inrs) {
    const auto it = std::find_if(data.begin(), data.end(), [&](const Case& c) { return c.id == inr.id; });
    if (it == data.end()) throw InvalidArgument("no data for INR " + inr.id + " in " + data_dir.string());
    cases.push_back({&inr.params, &it->image, &it->masks});
  }
  if (inrs.empty()) throw InvalidArgument("no INRs in " + inr_dir.string());
  auto r = train_autoencoder(cases, inrs.front().params.arch, encoder_arch(cfg), decoder_arch(cfg), embed_config(cfg, seed));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_checkpoint(out, embed_to_store(r.model));
  log("embed-train", "median decoded myo Dice " + std::to_string(median_of(r.case_myo_dice)) + ", median PSNR " +
                         std::to_string(median_of(r.case_psnr)));
  return std::move(r.model);
}

/// Standardized latents of every INR in `inr_dir`.
inline void embed_encode(const fs::path& inr_dir, const fs::path& model_path, const fs::path& out) {
  auto model = embed_from_store(read_checkpoint(model_path));
  std::vector<LatentRow> rows;
  for (const auto& inr : load_inrs(inr_dir))
    rows.push_back({inr.id, model.standardize(encode(model, tokenize(inr.params, model.inr_arch)))});
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_latents_csv(out, rows);
}

inline void diff_train(const Config& cfg, const fs::path& latents_csv, const fs::path& out, std::uint64_t seed) {
  const auto rows = read_latents_csv(latents_csv);
  std::vector<std::vector<double>> latents;
  for (const auto& r : rows) latents.push_back(r.z);
  const auto spec = schedule_spec(cfg);
  const auto sched = make_schedule(spec.T, spec.beta_start, spec.beta_end);
  auto r = train_denoiser(latents, sched, denoiser_arch(cfg, int(latents.front().size())), diffusion_config(cfg, seed));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_checkpoint(out, diffusion_to_store(r.denoiser, spec));
  const double last = r.loss_history.empty() ? 0.0 : r.loss_history.back().second;
  log("diff-train", "loss " + std::to_string(r.initial_loss) + " -> " + std::to_string(last));
}

/// `schedule` overrides the checkpoint's schedule when given as "T,beta_start,beta_end".
inline void diff_sample(const fs::path& model_path, const std::string& schedule, std::size_t n, std::uint64_t seed,
                        const fs::path& out, bool sampler_noise, int jobs) {
  if (n < 1) throw InvalidArgument("--n must be >= 1");
  auto m = diffusion_from_store(read_checkpoint(model_path));
  if (!schedule.empty()) {
    Config c = Config::defaults();
    std::stringstream ss(schedule);
    std::string t, b0, b1;
    if (!std::getline(ss, t, ',') || !std::getline(ss, b0, ',') || !std::getline(ss, b1))
      throw InvalidArgument("--schedule: expected T,beta_start,beta_end");
    c.set("diff_T", t);
    c.set("diff_beta_start", b0);
    c.set("diff_beta_end", b1);
    m.schedule = schedule_spec(c);
  }
  const auto sched = make_schedule(m.schedule.T, m.schedule.beta_start, m.schedule.beta_end);
  const auto z = sample_latents(m.denoiser, sched, n, substream(seed, "diff-sample"), sampler_noise, jobs);
  std::vector<LatentRow> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back({case_id("sample_", i), z[i]});
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_latents_csv(out, rows);
}

inline std::vector<SynthSample> synth(const fs::path& models_dir, std::size_t n, const SynthOptions& opt,
                                      std::uint64_t seed, const fs::path& out_dir) {
  const auto embed = embed_from_store(read_checkpoint(models_dir / "embed.ckpt"));
  const auto diffusion = diffusion_from_store(read_checkpoint(models_dir / "diffusion.ckpt"));
  auto samples = synthesize(n, embed, diffusion, opt, substream(seed, "synth"));
  write_synth(out_dir, samples);
  return samples;
}

inline SegReport segbench(const Config& cfg, const fs::path& real_dir, const fs::path& synth_dir,
                          const fs::path& test_dir, const fs::path& out, std::uint64_t seed, int jobs) {
  const auto seg = seg_config(cfg);
  const auto real = read_cases(real_dir);
  const auto test = read_cases(test_dir);
  std::vector<Case> synthetic;
  const int need = *std::max_element(seg.synth_levels.begin(), seg.synth_levels.end());
  if (need > 0) synthetic = read_cases(synth_dir);
  if (std::size_t(seg.real_count) > real.size())
    throw InvalidArgument("seg_real=" + std::to_string(seg.real_count) + " but only " + std::to_string(real.size()) +
                          " real cases in " + real_dir.string());
  auto real_ptrs = pointers(real);
  real_ptrs.resize(std::size_t(seg.real_count));
  const auto report = augmentation_experiment(real_ptrs, pointers(synthetic), pointers(test), seg,
                                              substream(seed, "segbench"), jobs);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_seg_report(out, report);
  std::ofstream(fs::path(out).replace_extension(".txt"), std::ios::trunc) << format_table(report, seg.synth_levels);
  return report;
}

/// Per-case CSV: case,structure,band,metric,value. Dice for both structures
/// and every band, image PSNR over the volume and SSIM on the middle slice.
inline void eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& report) {
  const auto pred = read_cases(pred_dir);
  const auto gt = read_cases(gt_dir);
  if (pred.empty()) throw InvalidArgument("no predictions in " + pred_dir.string());
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  std::ofstream os(report, std::ios::trunc);
  if (!os) throw FormatError("path", "cannot write " + report.string());
  os << "case,structure,band,metric,value\n";
  char buf[160];
  auto row = [&](const std::string& id, const char* st, const char* band, const char* metric, double v) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%s,%.9g\n", id.c_str(), st, band, metric, v);
    os << buf;
  };
  for (const auto& p : pred) {
    const auto it = std::find_if(gt.begin(), gt.end(), [&](const Case& c) { return c.id == p.id; });
    if (it == gt.end()) throw InvalidArgument("no ground truth for case " + p.id);
    if (p.image.dims != it->image.dims) throw InvalidArgument("case " + p.id + ": dims differ from ground truth");
    const auto bd = metrics::slice_band_dice(p.masks, it->masks);
    for (auto st : {metrics::Structure::kMyo, metrics::Structure::kFib})
      for (auto b : metrics::kBands) row(p.id, metrics::structure_name(st), metrics::band_name(b), "dice", bd.get(st, b));
    row(p.id, "image", "volume", "psnr", metrics::psnr(p.image, it->image));
    const metrics::SsimOptions o;
    if (p.image.dims[0] >= std::uint32_t(o.window) && p.image.dims[1] >= std::uint32_t(o.window))
      row(p.id, "image", "middle_slice", "ssim", metrics::ssim(metrics::middle_slice(p.image), metrics::middle_slice(it->image), o));
  }
}

/// Rasterizes every fitted INR next to its checkpoint, as a case directory.
inline void inr_render(const fs::path& inr_dir, const fs::path& data_dir, const fs::path& out_dir, int jobs) {
  const auto inrs = load_inrs(inr_dir);
  std::map<std::string, std::pair<Dims, Spacing>> grids;
  for (const auto& e : read_manifest(data_dir / kManifestName)) {
    const auto v = read_volume(resolve(data_dir, e.paths[0]));
    grids[e.id] = {v.dims, v.spacing};
  }
  std::vector<Case> out(inrs.size());
  parallel_for(inrs.size(), jobs, [&](std::size_t i) {
    const auto it = grids.find(inrs[i].id);
    if (it == grids.end()) throw InvalidArgument("no data for INR " + inrs[i].id);
    auto r = rasterize(inrs[i].params, it->second.first, it->second.second);
    out[i] = {inrs[i].id, std::move(r.image), std::move(r.masks)};
  });
  write_cases(out_dir, out);
}

/// Middle-slice PSNR/SSIM of the synthetic cohort against the real one.
inline void similarity_report(const fs::path& synth_dir, const fs::path& real_dir, const fs::path& out) {
  const auto s = read_cases(synth_dir);
  const auto r = read_cases(real_dir);
  std::vector<const Volume*> a, b;
  for (const auto& c : s) a.push_back(&c.image);
  for (const auto& c : r) b.push_back(&c.image);
  const auto sim = metrics::cohort_similarity(a, b);
  std::ofstream os(out, std::ios::trunc);
  char buf[128];
  std::snprintf(buf, sizeof buf, "pairs,mean_psnr,mean_ssim\n%zu,%.9g,%.9g\n", sim.pairs, sim.mean_psnr, sim.mean_ssim);
  os << buf;
}

/// Every stage in order under `out_dir`:
///   phantoms/{train,test}, inrs/, inrs_render/, models/embed.ckpt,
///   latents.csv, models/diffusion.ckpt, synth/, reports/.
inline void pipeline(const Config& cfg, const fs::path& out_dir, std::uint64_t seed, int jobs, bool sampler_noise) {
  fs::create_directories(out_dir / "reports");
  std::ofstream(out_dir / "config.txt", std::ios::trunc) << cfg.dump();
  const auto train = out_dir / "phantoms" / "train";
  const auto test = out_dir / "phantoms" / "test";
  const auto inrs = out_dir / "inrs";
  const auto models = out_dir / "models";
  const auto seg = seg_config(cfg);
  const int n_synth = cfg.integer("n_synth");
  const int n_train = cfg.integer("n_train"), n_test = cfg.integer("n_test");
  if (n_train < 2 || n_test < 1 || n_synth < 1) throw InvalidArgument("pipeline: need n_train >= 2, n_test >= 1, n_synth >= 1");
  if (seg.real_count > n_train) throw InvalidArgument("pipeline: seg_real exceeds n_train");
  for (int n : seg.synth_levels)
    if (n > n_synth) throw InvalidArgument("pipeline: seg_levels exceed n_synth");

  in_stage("phantom-gen", [&] {
    phantom_gen(cfg, std::size_t(n_train), Split::kTrain, train, seed, jobs);
    phantom_gen(cfg, std::size_t(n_test), Split::kTest, test, seed, jobs);
  });
  log("pipeline", "phantoms written");
  in_stage("inr-fit", [&] { inr_fit(cfg, train, inrs, seed, jobs); });
  in_stage("eval", [&] {
    inr_render(inrs, train, out_dir / "inrs_render", jobs);
    eval(out_dir / "inrs_render", train, out_dir / "reports" / "inr_eval.csv");
  });
  in_stage("embed-train", [&] { embed_train(cfg, inrs, train, models / "embed.ckpt", seed); });
  in_stage("embed-encode", [&] { embed_encode(inrs, models / "embed.ckpt", out_dir / "latents.csv"); });
  in_stage("diff-train", [&] { diff_train(cfg, out_dir / "latents.csv", models / "diffusion.ckpt", seed); });
  in_stage("synth", [&] {
    SynthOptions opt;
    const auto p = phantom_params(cfg);
    opt.dims = p.dims;
    opt.spacing = synth_spacing(p);
    opt.scale = cfg.integer("synth_scale");
    opt.sampler_noise = sampler_noise;
    opt.jobs = jobs;
    synth(models, std::size_t(n_synth), opt, seed, out_dir / "synth");
  });
  log("pipeline", "synthetic volumes written");
  in_stage("eval", [&] { similarity_report(out_dir / "synth", test, out_dir / "reports" / "similarity.csv"); });
  in_stage("segbench", [&] {
    const auto r = segbench(cfg, train, out_dir / "synth", test, out_dir / "reports" / "segbench.csv", seed, jobs);
    std::cout << format_table(r, seg.synth_levels);
  });
}

// ---------------------------------------------------------------------------
// Argument parsing

struct Common {
  std::uint64_t seed = 0;
  int jobs = default_jobs();
  std::string config;
  std::vector<std::string> sets;
};

inline void add_common(CLI::App* sub, Common& c, bool with_config) {
  sub->add_option("--seed", c.seed, "64-bit seed for every random stream");
  sub->add_option("--jobs", c.jobs, "worker threads (default: INRSYNTH_JOBS or 1)")->check(CLI::PositiveNumber);
  if (with_config) {
    sub->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", c.sets, "override one config key, key=value (repeatable)");
  }
}

inline Config load_config(const Common& c) {
  Config cfg = c.config.empty() ? Config::defaults() : Config::load(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return cfg;
}

inline bool on_off(const std::string& s) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw InvalidArgument("expected on|off, got '" + s + "'");
}

/// Parses and runs one subcommand. Returns the process exit code:
/// 0 success or help, 1 stage failure, 2 usage error.
inline int run(int argc, const char* const* argv) {
  CLI::App app{"Synthetic image/mask volumes from diffusion over INR weight embeddings", "inrsynth"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  Common common;
  std::string in_dir, out_dir, out, inr_dir, data_dir, model, latents, schedule, models_dir, dims_str, real_dir,
      synth_dir, test_dir, pred_dir, gt_dir, split = "train", noise;
  std::size_t n = 0;
  int scale = 1;

  auto* s_ph = app.add_subcommand("phantom-gen", "generate a phantom cohort (VOL1 files and manifest)");
  s_ph->add_option("--n", n, "number of cases")->required();
  s_ph->add_option("--out-dir", out_dir)->required();
  s_ph->add_option("--split", split, "train or test; selects disjoint case IDs and streams")
      ->check(CLI::IsMember({"train", "test"}));
  add_common(s_ph, common, true);

  auto* s_fit = app.add_subcommand("inr-fit", "fit one INR per case");
  s_fit->add_option("--in-dir", in_dir)->required()->check(CLI::ExistingDirectory);
  s_fit->add_option("--out-dir", out_dir)->required();
  add_common(s_fit, common, true);

  auto* s_et = app.add_subcommand("embed-train", "train the weight encoder and latent decoder");
  s_et->add_option("--inr-dir", inr_dir)->required()->check(CLI::ExistingDirectory);
  s_et->add_option("--data-dir", data_dir)->required()->check(CLI::ExistingDirectory);
  s_et->add_option("--out", out, "output checkpoint")->required();
  add_common(s_et, common, true);

  auto* s_ee = app.add_subcommand("embed-encode", "write standardized latents of fitted INRs");
  s_ee->add_option("--inr-dir", inr_dir)->required()->check(CLI::ExistingDirectory);
  s_ee->add_option("--model", model)->required()->check(CLI::ExistingFile);
  s_ee->add_option("--out", out, "latents CSV")->required();
  add_common(s_ee, common, false);

  auto* s_dt = app.add_subcommand("diff-train", "train the latent denoiser");
  s_dt->add_option("--latents", latents)->required()->check(CLI::ExistingFile);
  s_dt->add_option("--out", out, "output checkpoint")->required();
  add_common(s_dt, common, true);

  auto* s_ds = app.add_subcommand("diff-sample", "sample standardized latents");
  s_ds->add_option("--model", model)->required()->check(CLI::ExistingFile);
  s_ds->add_option("--schedule", schedule, "T,beta_start,beta_end (default: the model's)");
  s_ds->add_option("--n", n)->required();
  s_ds->add_option("--out", out, "latents CSV")->required();
  s_ds->add_option("--sampler-noise", noise, "ancestral noise, on|off")->check(CLI::IsMember({"on", "off"}));
  add_common(s_ds, common, false);

  auto* s_sy = app.add_subcommand("synth", "generate synthetic image/mask volumes");
  s_sy->add_option("--models-dir", models_dir, "holds embed.ckpt and diffusion.ckpt")->required()->check(CLI::ExistingDirectory);
  s_sy->add_option("--n", n)->required();
  s_sy->add_option("--dims", dims_str, "XxYxZ")->required();
  s_sy->add_option("--out-dir", out_dir)->required();
  s_sy->add_option("--scale", scale, "integer query upsampling")->check(CLI::PositiveNumber);
  s_sy->add_option("--sampler-noise", noise, "ancestral noise, on|off")->check(CLI::IsMember({"on", "off"}));
  add_common(s_sy, common, false);

  auto* s_sb = app.add_subcommand("segbench", "segmentation experiment with synthetic augmentation");
  s_sb->add_option("--real-dir", real_dir)->required()->check(CLI::ExistingDirectory);
  s_sb->add_option("--synth-dir", synth_dir)->required();
  s_sb->add_option("--test-dir", test_dir)->required()->check(CLI::ExistingDirectory);
  s_sb->add_option("--out", out, "report CSV; a text table is written next to it")->required();
  add_common(s_sb, common, true);

  auto* s_ev = app.add_subcommand("eval", "Dice, PSNR and SSIM of predictions against ground truth");
  s_ev->add_option("--pred-dir", pred_dir)->required()->check(CLI::ExistingDirectory);
  s_ev->add_option("--gt-dir", gt_dir)->required()->check(CLI::ExistingDirectory);
  s_ev->add_option("--report", out, "CSV: case,structure,band,metric,value")->required();
  add_common(s_ev, common, false);

  auto* s_pl = app.add_subcommand("pipeline", "run every stage from one config");
  s_pl->add_option("--out-dir", out_dir, "output root")->default_val("out");
  s_pl->add_option("--sampler-noise", noise, "ancestral noise, on|off")->check(CLI::IsMember({"on", "off"}));
  add_common(s_pl, common, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error stage=usage message=" << one_line(e.what()) << "\n";
    std::cerr << "run 'inrsynth --help' for usage\n";
    return 2;
  }

  auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    const Config cfg = in_stage("config", [&] { return load_config(common); });
    const auto seed = common.seed;
    const auto jobs = common.jobs;
    const bool sampler_noise = noise.empty() ? cfg.flag("sampler_noise") : on_off(noise);
    if (sub == s_ph) {
      in_stage(name, [&] { phantom_gen(cfg, n, split == "test" ? Split::kTest : Split::kTrain, out_dir, seed, jobs); });
    } else if (sub == s_fit) {
      in_stage(name, [&] { inr_fit(cfg, in_dir, out_dir, seed, jobs); });
    } else if (sub == s_et) {
      in_stage(name, [&] { embed_train(cfg, inr_dir, data_dir, out, seed); });
    } else if (sub == s_ee) {
      in_stage(name, [&] { embed_encode(inr_dir, model, out); });
    } else if (sub == s_dt) {
      in_stage(name, [&] { diff_train(cfg, latents, out, seed); });
    } else if (sub == s_ds) {
      in_stage(name, [&] { diff_sample(model, schedule, n, seed, out, sampler_noise, jobs); });
    } else if (sub == s_sy) {
      in_stage(name, [&] {
        SynthOptions opt;
        opt.dims = Config::parse_dims(dims_str);
        opt.spacing = synth_spacing(phantom_params(cfg));
        opt.scale = scale;
        opt.sampler_noise = sampler_noise;
        opt.jobs = jobs;
        synth(models_dir, n, opt, seed, out_dir);
      });
    } else if (sub == s_sb) {
      in_stage(name, [&] {
        const auto r = segbench(cfg, real_dir, synth_dir, test_dir, out, seed, jobs);
        std::cout << format_table(r, seg_config(cfg).synth_levels);
      });
    } else if (sub == s_ev) {
      in_stage(name, [&] { eval(pred_dir, gt_dir, out); });
    } else if (sub == s_pl) {
      pipeline(cfg, out_dir, seed, jobs, sampler_noise);
    }
  } catch (const StageFailure& e) {
    std::cerr << "error stage=" << e.stage() << " message=" << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error stage=" << name << " message=" << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace inrsynth::cli
