#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "inrsynth/phantom.hpp"
#include "inrsynth/segbench.hpp"

using namespace inrsynth;

namespace {

std::vector<Case> cohort(std::size_t n, const char* prefix, Split split) {
  const auto base = default_phantom_params(Dims{16, 16, 4});
  auto ph = generate_cohort(n, base, 21, split);
  std::vector<Case> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({case_id(prefix, i), ph[i].image, ph[i].masks});
  return out;
}

std::vector<const Case*> ptrs(const std::vector<Case>& v) {
  std::vector<const Case*> out;
  for (const auto& c : v) out.push_back(&c);
  return out;
}

SegConfig quick() {
  SegConfig c;
  c.patch = 5;
  c.hidden = {16};
  c.epochs = 2;
  c.iters_per_epoch = 10;
  c.batch = 30;
  c.synth_levels = {0, 2};
  c.seeds = 2;
  return c;
}

}  // namespace

TEST(Labels, MutuallyExclusive) {
  MaskSet m(Dims{4, 1, 1});
  m.myo = {0, 1, 1, 0};
  m.fib = {0, 0, 1, 1};
  EXPECT_EQ(voxel_label(m, 0), kBackground);
  EXPECT_EQ(voxel_label(m, 1), kRemoteMyo);
  EXPECT_EQ(voxel_label(m, 2), kFibrosis);
  EXPECT_EQ(voxel_label(m, 3), kBackground);
}

TEST(Patch, EdgesReplicate) {
  Volume v(Dims{3, 3, 1});
  for (std::uint32_t i = 0; i < 9; ++i) v.data[i] = float(i);
  float out[9];
  extract_patch(v, 0, 0, 0, 3, out);
  const float expect[9] = {0, 0, 1, 0, 0, 1, 3, 3, 4};
  for (int k = 0; k < 9; ++k) EXPECT_EQ(out[k], expect[k]);
}

TEST(Sampler, ClassesBalanced) {
  const auto cases = cohort(3, "r", Split::kTrain);
  const BalancedSampler s(ptrs(cases));
  for (const auto& pool : s.pools) ASSERT_FALSE(pool.empty());
  Rng rng(1);
  int counts[3] = {0, 0, 0};
  for (int k = 0; k < 20; ++k)
    for (const auto& [ref, label] : s.draw(96, rng)) {
      ++counts[label];
      EXPECT_EQ(voxel_label(cases[ref.item].masks, ref.voxel), label);
    }
  const double share = 20.0 * 96 / 3;
  for (int c : counts) EXPECT_NEAR(c / share, 1.0, 0.1);
}

TEST(SegConfig, Validation) {
  auto c = quick();
  c.patch = 4;
  EXPECT_THROW(validate(c), InvalidArgument);
  c = quick();
  c.seeds = 0;
  EXPECT_THROW(validate(c), InvalidArgument);
  c = quick();
  c.synth_levels = {-1};
  EXPECT_THROW(validate(c), InvalidArgument);
}

TEST(Experiment, DeterministicAndInRange) {
  const auto real = cohort(2, "real_", Split::kTrain);
  const auto test = cohort(2, "test_", Split::kTest);
  const auto synth = cohort(2, "synth_", Split::kTrain);
  const auto a = augmentation_experiment(ptrs(real), ptrs(synth), ptrs(test), quick(), 4, 1);
  const auto b = augmentation_experiment(ptrs(real), ptrs(synth), ptrs(test), quick(), 4, 3);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  // 2 levels x (2 seeds + median) x 2 structures x 4 bands
  EXPECT_EQ(a.rows.size(), 2u * 3 * 2 * 4);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].dice, b.rows[i].dice);
    EXPECT_GE(a.rows[i].dice, 0.0);
    EXPECT_LE(a.rows[i].dice, 1.0);
  }
  EXPECT_EQ(a.test_hash, hash_cases(ptrs(test)));
  EXPECT_EQ(a.test_hash.size(), 16u);
  const double m = a.median(0, metrics::Structure::kFib, metrics::Band::kVolume);
  std::vector<double> per_seed;
  for (const auto& r : a.rows)
    if (r.n_synth == 0 && r.seed >= 0 && r.structure == metrics::Structure::kFib && r.band == metrics::Band::kVolume)
      per_seed.push_back(r.dice);
  EXPECT_DOUBLE_EQ(m, median_of(per_seed));
  const auto table = format_table(a, {0, 2});
  EXPECT_NE(table.find("middle50"), std::string::npos);
}

TEST(Experiment, RejectsOverlapAndShortPools) {
  const auto real = cohort(2, "real_", Split::kTrain);
  const auto test = cohort(2, "test_", Split::kTest);
  EXPECT_THROW(augmentation_experiment(ptrs(real), {}, ptrs(real), quick(), 1), InvalidArgument);
  EXPECT_THROW(augmentation_experiment(ptrs(real), {}, ptrs(test), quick(), 1), InvalidArgument);
}

TEST(Experiment, LearnsSomething) {
  const auto real = cohort(4, "real_", Split::kTrain);
  const auto test = cohort(2, "test_", Split::kTest);
  auto c = quick();
  c.epochs = 6;
  c.iters_per_epoch = 40;
  c.hidden = {32};
  const auto r = train_segmenter(ptrs(real), c, 3);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
  const auto d = evaluate_segmenter(r.model, ptrs(test));
  EXPECT_GT(d.get(metrics::Structure::kMyo, metrics::Band::kVolume), 0.5);
}

TEST(Median, OddAndEven) {
  EXPECT_EQ(median_of({3, 1, 2}), 2.0);
  EXPECT_EQ(median_of({4, 1, 2, 3}), 2.5);
}
