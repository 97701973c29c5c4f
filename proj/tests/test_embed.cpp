#include <algorithm>

#include <gtest/gtest.h>

#include "inrsynth/embed.hpp"
#include "inrsynth/phantom.hpp"
#include "test_support.hpp"

using namespace inrsynth;
using testing_support::TempDir;

namespace {

const InrArch kSmallInr{3, 8, 1, 30.0};

EmbedModel small_model(std::uint64_t seed) {
  return make_embed_model(kSmallInr, EncoderArch{{16, 12}}, DecoderArch{0, 8, 8, 1, 30.0}, seed);
}

}  // namespace

TEST(Tokens, DefaultArchRowCount) {
  const InrArch arch;
  const auto layout = token_layout(arch);
  EXPECT_EQ(layout.rows, 256 + 4 * 256 + 3);
  EXPECT_EQ(layout.rows, 1283);
  EXPECT_EQ(layout.width(), 256 + 1 + 6);
  auto p = inr_init<float>(arch, 1);
  EXPECT_EQ(tokenize(p, arch).count(), 1283u);
}

TEST(Tokens, ZeroParametersLeaveOnlyTags) {
  auto p = inr_init<float>(kSmallInr, 1);
  for (auto& r : p.net.params()) r.value->setZero();
  const auto t = tokenize(p, kSmallInr);
  const auto layout = token_layout(kSmallInr);
  for (Eigen::Index r = 0; r < t.rows.rows(); ++r) {
    EXPECT_EQ(t.rows.row(r).head(layout.max_fan_in + 1).cwiseAbs().sum(), 0.0f);
    EXPECT_EQ(t.rows.row(r).tail(layout.layers).sum(), 1.0f);
  }
}

TEST(Tokens, OneBiasChangesOneRow) {
  auto p = inr_init<float>(kSmallInr, 1);
  const auto before = tokenize(p, kSmallInr);
  p.net.layer<nn::Linear<float>>(2).b(3, 0) += 0.25f;
  const auto after = tokenize(p, kSmallInr);
  int changed = 0;
  for (Eigen::Index r = 0; r < before.rows.rows(); ++r) changed += before.rows.row(r) != after.rows.row(r);
  EXPECT_EQ(changed, 1);
}

TEST(Tokens, ArchitectureMismatchRejected) {
  auto p = inr_init<float>(InrArch{3, 10, 1, 30.0}, 1);
  EXPECT_THROW(tokenize(p, kSmallInr), InvalidArgument);
}

TEST(Encoder, PermutationInvariantAndDeterministic) {
  auto m = small_model(3);
  auto p = inr_init<float>(kSmallInr, 4);
  const auto t = tokenize(p, kSmallInr);
  WeightTokens shuffled{t.rows};
  Rng rng(2);
  const auto perm = rng.sample_without_replacement(std::uint32_t(t.count()), std::uint32_t(t.count()));
  for (std::size_t i = 0; i < perm.size(); ++i) shuffled.rows.row(Eigen::Index(i)) = t.rows.row(perm[i]);
  const auto z1 = encode(m, t);
  const auto z2 = encode(m, t);
  const auto z3 = encode(m, shuffled);
  ASSERT_EQ(z1.size(), 12u);
  EXPECT_EQ(z1, z2);
  for (std::size_t i = 0; i < z1.size(); ++i) EXPECT_NEAR(z1[i], z3[i], 1e-5);
}

TEST(Encoder, WrongLayoutRejected) {
  auto m = small_model(3);
  WeightTokens t{nn::Mat<float>::Zero(5, token_layout(kSmallInr).width())};
  EXPECT_THROW(encode(m, t), InvalidArgument);
}

TEST(Decoder, QueryContract) {
  auto m = small_model(3);
  const auto grid = normalize_coords(Dims{4, 3, 2});
  const std::vector<double> z(12, 0.1);
  const auto q = decode_query(m, z, grid);
  ASSERT_EQ(q.size(), grid.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    EXPECT_GT(q.p_myo[i], 0.0f);
    EXPECT_LT(q.p_myo[i], 1.0f);
  }
  EXPECT_EQ(decode_query(m, z, grid).image, q.image);
  EXPECT_THROW(decode_query(m, std::vector<double>(5, 0.0), grid), InvalidArgument);
}

TEST(LatentStats, StandardizedMoments) {
  Rng rng(6);
  std::vector<std::vector<double>> zs;
  for (int i = 0; i < 40; ++i) zs.push_back({rng.uniform(2, 5), rng.normal() * 3 - 1, 7.0});
  const auto s = latent_stats(zs);
  EXPECT_EQ(s.stddev[2], 1.0);
  EmbedModel m = small_model(1);
  m.stats = s;
  for (int d = 0; d < 2; ++d) {
    double mean = 0, sq = 0;
    for (const auto& z : zs) {
      const double u = m.standardize(z)[std::size_t(d)];
      mean += u / 40;
      sq += u * u / 40;
    }
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq - mean * mean, 1.0, 1e-12);
  }
  const auto back = m.destandardize(m.standardize(zs[0]));
  for (int d = 0; d < 3; ++d) EXPECT_NEAR(back[std::size_t(d)], zs[0][std::size_t(d)], 1e-12);
}

namespace {

struct TinyCohort {
  std::vector<Phantom> phantoms;
  std::vector<InrParams<float>> inrs;
  std::vector<EmbedCase> cases;
};

TinyCohort tiny_cohort(std::size_t n) {
  TinyCohort c;
  auto base = default_phantom_params(Dims{12, 12, 2});
  c.phantoms = generate_cohort(n, base, 3);
  for (const auto& ph : c.phantoms) {
    FitConfig f;
    f.steps = 60;
    f.coords_per_step = 288;
    f.lr = 1e-3;
    f.init_seed = 1;
    f.log_every = 60;
    c.inrs.push_back(fit_inr(ph.image, ph.masks, kSmallInr, f).params);
  }
  for (std::size_t i = 0; i < n; ++i) c.cases.push_back({&c.inrs[i], &c.phantoms[i].image, &c.phantoms[i].masks});
  return c;
}

EmbedTrainConfig tiny_train() {
  EmbedTrainConfig t;
  t.steps = 40;
  t.cases_per_step = 2;
  t.coords_per_case = 64;
  t.seed = 8;
  t.log_every = 20;
  return t;
}

}  // namespace

TEST(TrainAutoencoder, DeterministicWithReports) {
  auto c = tiny_cohort(3);
  const EncoderArch enc{{16, 12}};
  const DecoderArch dec{12, 8, 8, 1, 30.0};
  auto a = train_autoencoder(c.cases, kSmallInr, enc, dec, tiny_train());
  auto b = train_autoencoder(c.cases, kSmallInr, enc, dec, tiny_train());
  EXPECT_EQ(a.loss_history, b.loss_history);
  ASSERT_EQ(a.loss_history.size(), 2u);
  EXPECT_EQ(a.case_myo_dice.size(), 3u);
  EXPECT_EQ(a.case_psnr.size(), 3u);
  EXPECT_EQ(a.model.stats.mean, b.model.stats.mean);

  std::vector<std::vector<double>> us;
  for (auto& inr : c.inrs) us.push_back(a.model.standardize(encode(a.model, tokenize(inr, kSmallInr))));
  for (std::size_t d = 0; d < us[0].size(); ++d) {
    double mean = 0;
    for (const auto& u : us) mean += u[d] / double(us.size());
    EXPECT_NEAR(mean, 0.0, 1e-4);
  }

  EXPECT_THROW(train_autoencoder({c.cases[0]}, kSmallInr, enc, dec, tiny_train()), InvalidArgument);
}

TEST(EmbedStore, RoundTrip) {
  TempDir tmp;
  auto m = small_model(5);
  m.stats.mean.assign(12, 0.5);
  m.stats.stddev.assign(12, 2.0);
  write_checkpoint(tmp / "e.ckpt", embed_to_store(m));
  auto back = embed_from_store(read_checkpoint(tmp / "e.ckpt"));
  auto p = inr_init<float>(kSmallInr, 4);
  const auto t = tokenize(p, kSmallInr);
  EXPECT_EQ(encode(back, t), encode(m, t));
  EXPECT_EQ(back.stats.stddev, m.stats.stddev);
  const auto grid = normalize_coords(Dims{3, 3, 2});
  EXPECT_EQ(decode_query(back, encode(back, t), grid).image, decode_query(m, encode(m, t), grid).image);
}
