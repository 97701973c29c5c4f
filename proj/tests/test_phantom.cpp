#include <cmath>
#include <queue>

#include <gtest/gtest.h>

#include "inrsynth/phantom.hpp"

using namespace inrsynth;

namespace {

/// Connected components of voxels with value `want` in slice z.
int components(const std::vector<std::uint8_t>& m, const Dims& d, std::uint32_t z, std::uint8_t want, bool eight) {
  const int nx = int(d[0]), ny = int(d[1]);
  std::vector<char> seen(std::size_t(nx) * ny, 0);
  auto at = [&](int x, int y) { return m[linear_index(d, std::uint32_t(x), std::uint32_t(y), z)]; };
  int count = 0;
  for (int y0 = 0; y0 < ny; ++y0)
    for (int x0 = 0; x0 < nx; ++x0) {
      if (seen[y0 * nx + x0] || at(x0, y0) != want) continue;
      ++count;
      std::queue<std::pair<int, int>> q;
      q.push({x0, y0});
      seen[y0 * nx + x0] = 1;
      while (!q.empty()) {
        auto [x, y] = q.front();
        q.pop();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0)) continue;
            const int u = x + dx, v = y + dy;
            if (u < 0 || v < 0 || u >= nx || v >= ny || seen[v * nx + u] || at(u, v) != want) continue;
            seen[v * nx + u] = 1;
            q.push({u, v});
          }
      }
    }
  return count;
}

PhantomParams small(std::uint64_t seed) {
  auto p = default_phantom_params(Dims{32, 32, 6});
  p.seed = seed;
  return p;
}

}  // namespace

TEST(Phantom, ShapesAndContainment) {
  for (std::uint64_t s = 1; s <= 10; ++s) {
    const auto ph = generate_phantom(small(s));
    EXPECT_EQ(ph.image.dims, (Dims{32, 32, 6}));
    EXPECT_TRUE(ph.masks.contained());
    for (float v : ph.image.data) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    EXPECT_GT(ph.image.spacing[2], ph.image.spacing[0]);
  }
}

TEST(Phantom, EverySliceIsAnAnnulus) {
  for (std::uint64_t s = 1; s <= 10; ++s) {
    const auto ph = generate_phantom(small(s));
    const auto& d = ph.image.dims;
    for (std::uint32_t z = 0; z < d[2]; ++z) {
      const int walls = components(ph.masks.myo, d, z, 1, true);
      const int holes = components(ph.masks.myo, d, z, 0, false);
      EXPECT_EQ(walls, 1) << "seed " << s << " z " << z;
      EXPECT_EQ(holes, 2) << "seed " << s << " z " << z;
      EXPECT_EQ(walls - (holes - 1), 0);
    }
  }
}

TEST(Phantom, BloodPoolCenterIsBackgroundOfBothMasks) {
  for (std::uint64_t s = 1; s <= 10; ++s) {
    const auto ph = generate_phantom(small(s));
    const auto& d = ph.image.dims;
    for (std::uint32_t z = 0; z < d[2]; ++z) {
      double sx = 0, sy = 0, n = 0;
      for (std::uint32_t y = 0; y < d[1]; ++y)
        for (std::uint32_t x = 0; x < d[0]; ++x)
          if (ph.masks.myo[linear_index(d, x, y, z)]) {
            sx += x;
            sy += y;
            n += 1;
          }
      ASSERT_GT(n, 0);
      const auto i = linear_index(d, std::uint32_t(std::lround(sx / n)), std::uint32_t(std::lround(sy / n)), z);
      EXPECT_EQ(ph.masks.myo[i], 0);
      EXPECT_EQ(ph.masks.fib[i], 0);
    }
  }
}

TEST(Phantom, SeedDeterminism) {
  const auto a = generate_phantom(small(4));
  const auto b = generate_phantom(small(4));
  const auto c = generate_phantom(small(5));
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.masks, b.masks);
  EXPECT_NE(a.image.data, c.image.data);
}

TEST(Phantom, FibrosisBrighterThanRemoteMyocardium) {
  int with_fib = 0;
  for (std::uint64_t s = 1; s <= 20; ++s) {
    auto p = small(s);
    p.noise_sigma = 0.0;
    p.blob_count = {1, 3};
    const auto ph = generate_phantom(p);
    double fib = 0, remote = 0, nf = 0, nr = 0;
    for (std::size_t i = 0; i < ph.image.data.size(); ++i) {
      if (ph.masks.fib[i]) {
        fib += ph.image.data[i];
        nf += 1;
      } else if (ph.masks.myo[i]) {
        remote += ph.image.data[i];
        nr += 1;
      }
    }
    if (nf == 0) continue;
    ++with_fib;
    EXPECT_GT(fib / nf, remote / nr);
  }
  EXPECT_GT(with_fib, 10);
}

TEST(Cohort, MatchesSingleGeneration) {
  const auto base = small(0);
  const auto cohort = generate_cohort(1, base, 99);
  const auto single = generate_phantom(jitter_params(base, 99, Split::kTrain, 0));
  EXPECT_EQ(cohort[0].image, single.image);
  EXPECT_EQ(cohort[0].masks, single.masks);
  EXPECT_THROW(generate_cohort(0, base, 99), InvalidArgument);
}

TEST(Cohort, SplitsAreDisjointAndJobsInvariant) {
  const auto base = small(0);
  const auto train = generate_cohort(4, base, 7, Split::kTrain, 1);
  const auto test = generate_cohort(4, base, 7, Split::kTest, 1);
  for (const auto& a : train)
    for (const auto& b : test) EXPECT_NE(a.image.data, b.image.data);
  const auto par = generate_cohort(4, base, 7, Split::kTrain, 3);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(train[i].image, par[i].image);
}

TEST(Phantom, ValidateRejectsBadParameters) {
  auto p = small(1);
  p.inner_radius = {14.0, 15.0};
  EXPECT_THROW(generate_phantom(p), InvalidArgument);
  p = small(1);
  p.levels.fibrosis = 0.2;
  EXPECT_THROW(generate_phantom(p), InvalidArgument);
  p = small(1);
  p.drift_max = 3.0;
  EXPECT_THROW(generate_phantom(p), InvalidArgument);
  p = small(1);
  p.dims = {0, 4, 4};
  EXPECT_THROW(generate_phantom(p), InvalidArgument);
}
