#include <gtest/gtest.h>

#include "inrsynth/synth.hpp"
#include "test_support.hpp"

using namespace inrsynth;
using testing_support::TempDir;

namespace {

struct Models {
  EmbedModel embed;
  DiffusionModel diffusion;
};

Models tiny_models(int latent = 6) {
  const InrArch inr{3, 8, 1, 30.0};
  auto embed = make_embed_model(inr, EncoderArch{{12, latent}}, DecoderArch{0, 8, 12, 1, 30.0}, 2);
  Denoiser<float> den(DenoiserArch{latent, 4, 16, 1});
  Rng rng(3);
  den.init(rng);
  den.net().layer<nn::Linear<float>>(den.net().layers().size() - 1).init_default(rng);
  return {std::move(embed), {std::move(den), ScheduleSpec{10, 1e-3, 0.1}}};
}

SynthOptions small_opts() {
  SynthOptions o;
  o.dims = {6, 5, 4};
  return o;
}

}  // namespace

TEST(Synthesize, ShapesContainmentAndIds) {
  auto m = tiny_models();
  const auto out = synthesize(5, m.embed, m.diffusion, small_opts(), 11);
  ASSERT_EQ(out.size(), 5u);
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].data.image.dims, (Dims{6, 5, 4}));
    EXPECT_EQ(out[i].data.masks.dims, (Dims{6, 5, 4}));
    EXPECT_TRUE(out[i].data.masks.contained());
    EXPECT_EQ(out[i].latent.size(), 6u);
    EXPECT_EQ(out[i].data.id, case_id("synth_", i));
    for (float v : out[i].data.image.data) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  EXPECT_NE(out[0].latent, out[1].latent);
}

TEST(Synthesize, DeterministicAcrossJobs) {
  auto m = tiny_models();
  auto o = small_opts();
  const auto a = synthesize(4, m.embed, m.diffusion, o, 5);
  o.jobs = 3;
  const auto b = synthesize(4, m.embed, m.diffusion, o, 5);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a[i].latent, b[i].latent);
    EXPECT_EQ(a[i].data.image, b[i].data.image);
    EXPECT_EQ(a[i].data.masks, b[i].data.masks);
  }
}

TEST(Synthesize, ScaleUpsamplesGrid) {
  auto m = tiny_models();
  auto o = small_opts();
  o.scale = 2;
  const auto out = synthesize(1, m.embed, m.diffusion, o, 5);
  EXPECT_EQ(out[0].data.image.dims, (Dims{12, 10, 8}));
  EXPECT_DOUBLE_EQ(out[0].data.image.spacing[2], o.spacing[2] / 2);
}

TEST(Synthesize, Preconditions) {
  auto m = tiny_models();
  EXPECT_THROW(synthesize(0, m.embed, m.diffusion, small_opts(), 1), InvalidArgument);
  auto o = small_opts();
  o.scale = 0;
  EXPECT_THROW(synthesize(1, m.embed, m.diffusion, o, 1), InvalidArgument);
  auto other = tiny_models(4);
  EXPECT_THROW(synthesize(1, m.embed, other.diffusion, small_opts(), 1), InvalidArgument);
}

TEST(WriteSynth, FilesAndManifest) {
  TempDir tmp;
  auto m = tiny_models();
  const auto out = synthesize(3, m.embed, m.diffusion, small_opts(), 8);
  write_synth(tmp.path(), out);
  const auto cases = read_cases(tmp.path());
  ASSERT_EQ(cases.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(cases[i].id, out[i].data.id);
    EXPECT_EQ(cases[i].image, out[i].data.image);
    EXPECT_EQ(cases[i].masks, out[i].data.masks);
  }
  const auto rows = read_latents_csv(tmp / "latents.csv");
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(rows[1].z[k], out[1].latent[k]);
  const auto manifest = read_manifest(tmp / kManifestName);
  EXPECT_EQ(manifest[2].paths.back(), "latents.csv#3");
}
