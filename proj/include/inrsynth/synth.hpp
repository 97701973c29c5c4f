#pragma once

// End-to-end generation: sample a standardized latent, de-standardize,
// decode on the full grid, binarize, enforce fib within myo.

#include <string>
#include <vector>

#include "inrsynth/dataset.hpp"
#include "inrsynth/diffusion.hpp"
#include "inrsynth/embed.hpp"

namespace inrsynth {

struct SynthOptions {
  Dims dims{64, 64, 10};
  int scale = 1;  // integer upsampling of every axis when querying
  Spacing spacing{1.7, 1.7, 9.0};
  bool sampler_noise = true;
  int jobs = 1;
};

struct SynthSample {
  std::vector<double> latent;  // standardized, as produced by the sampler
  Case data;
};

class StageError : public std::runtime_error {
 public:
  StageError(std::size_t index, const std::string& what)
      : std::runtime_error("sample " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

inline std::vector<SynthSample> synthesize(std::size_t n, const EmbedModel& embed, const DiffusionModel& diffusion,
                                           const SynthOptions& opt, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("synthesize: n must be >= 1");
  if (opt.scale < 1) throw InvalidArgument("synthesize: scale must be >= 1");
  if (diffusion.denoiser.arch().latent != embed.latent())
    throw InvalidArgument("synthesize: diffusion and embedding latent widths differ");
  check_dims(opt.dims, "synthesize");
  const Dims dims{opt.dims[0] * std::uint32_t(opt.scale), opt.dims[1] * std::uint32_t(opt.scale),
                  opt.dims[2] * std::uint32_t(opt.scale)};
  const Spacing spacing{opt.spacing[0] / opt.scale, opt.spacing[1] / opt.scale, opt.spacing[2] / opt.scale};
  const auto sched = make_schedule(diffusion.schedule.T, diffusion.schedule.beta_start, diffusion.schedule.beta_end);
  const auto coords = coords_matrix<float>(normalize_coords(dims));

  std::vector<SynthSample> out(n);
  parallel_for(n, opt.jobs, [&](std::size_t i) {
    try {
      auto den = diffusion.denoiser;
      auto model = embed;
      auto u = sample_latent(den, sched, substream(seed, "synth:" + std::to_string(i)), opt.sampler_noise);
      const auto q = decode_query(model, model.destandardize(u), coords);
      auto r = rasterize_query(q, dims, spacing);
      out[i] = SynthSample{std::move(u), Case{case_id("synth_", i), std::move(r.image), std::move(r.masks)}};
    } catch (const std::exception& e) {
      throw StageError(i, e.what());
    }
  });
  return out;
}

/// Writes VOL1 files, latents.csv and a manifest (ID, image, myo, fib, latent row).
inline void write_synth(const fs::path& dir, const std::vector<SynthSample>& samples) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  std::vector<LatentRow> latents;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto e = write_case(dir, samples[i].data);
    e.paths.push_back("latents.csv#" + std::to_string(i + 1));
    entries.push_back(std::move(e));
    latents.push_back({samples[i].data.id, samples[i].latent});
  }
  write_latents_csv(dir / "latents.csv", latents);
  write_manifest(dir / kManifestName, entries);
}

}  // namespace inrsynth
