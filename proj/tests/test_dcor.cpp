#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "dcorsel/dcor.hpp"

using namespace dcorsel;

namespace {

// Textbook evaluation: full distance matrices, explicit row/column/grand
// means, then the ratio. Extended precision throughout.
long double brute_force_dcor(const Covariate& x, const Covariate& y) {
  const std::size_t n = x.size();
  auto centered = [n](const Covariate& c) {
    std::vector<std::vector<long double>> d(n, std::vector<long double>(n));
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t l = 0; l < n; ++l) d[k][l] = c.distance(k, l);
    std::vector<long double> rm(n, 0), cm(n, 0);
    long double gm = 0;
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t l = 0; l < n; ++l) {
        rm[k] += d[k][l] / n;
        cm[l] += d[k][l] / n;
        gm += d[k][l] / (n * n);
      }
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t l = 0; l < n; ++l) d[k][l] = d[k][l] - rm[k] - cm[l] + gm;
    return d;
  };
  const auto a = centered(x);
  const auto b = centered(y);
  long double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = 0; l < n; ++l) {
      ab += a[k][l] * b[k][l];
      aa += a[k][l] * a[k][l];
      bb += b[k][l] * b[k][l];
    }
  if (aa == 0 || bb == 0) return 0;
  return ab / std::sqrt(aa * bb);
}

Covariate normal_scalar(const std::string& name, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  std::vector<double> v(n);
  for (auto& x : v) x = z(rng);
  return Covariate::scalar(name, v);
}

Covariate random_of_kind(int kind, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  switch (kind % 4) {
    case 0: return normal_scalar("s", n, rng);
    case 1: {
      std::vector<double> v(n * 3);
      for (auto& x : v) x = z(rng);
      return Covariate::vector("v", 3, v);
    }
    case 2: {
      std::vector<std::size_t> c(n);
      for (auto& x : c) x = rng() % 3;
      return Covariate::categorical("c", c, {"a", "b", "c"});
    }
    default: {
      std::vector<double> grid{0.0, 0.2, 0.5, 0.6, 1.0};
      std::vector<double> v(n * grid.size());
      for (auto& x : v) x = z(rng);
      return Covariate::functional("f", grid, v);
    }
  }
}

}  // namespace

TEST(CenteringStats, SmallScalarExample) {
  auto c = Covariate::scalar("x", {0, 1, 2});
  for (std::size_t l : {1u, 2u, 3u, 256u}) {
    const auto s = centering_stats(c, l);
    ASSERT_EQ(s.row_sums.size(), 3u);
    EXPECT_DOUBLE_EQ(s.row_sums[0], 3.0);
    EXPECT_DOUBLE_EQ(s.row_sums[1], 2.0);
    EXPECT_DOUBLE_EQ(s.row_sums[2], 3.0);
    EXPECT_DOUBLE_EQ(s.grand_sum, 8.0);
  }
}

TEST(CenteringStats, ConstantCovariateIsAllZero) {
  auto s = centering_stats(Covariate::scalar("x", {4, 4, 4, 4}));
  for (double r : s.row_sums) EXPECT_EQ(r, 0.0);
  EXPECT_EQ(s.grand_sum, 0.0);
}

TEST(CenteringStats, GrandSumIsSumOfRowSums) {
  std::mt19937_64 rng(5);
  auto c = random_of_kind(3, 57, rng);
  auto s = centering_stats(c, 8);
  const double total = std::accumulate(s.row_sums.begin(), s.row_sums.end(), 0.0);
  EXPECT_NEAR(s.grand_sum, total, 1e-12 * total);
  for (double r : s.row_sums) EXPECT_GE(r, 0.0);
}

TEST(CenteringStats, TooFewObservations) {
  EXPECT_THROW(centering_stats(Covariate::scalar("x", {1.0})), std::invalid_argument);
}

TEST(DcorDirect, IdentityAndAffineImageGiveOne) {
  auto x = Covariate::scalar("x", {1, 2, 3, 5});
  auto y = Covariate::scalar("y", {2 * 1 - 7, 2 * 2 - 7, 2 * 3 - 7, 2 * 5 - 7});
  EXPECT_NEAR(dcor_direct(x, x).dcor, 1.0, 1e-12);
  EXPECT_NEAR(dcor_direct(x, y).dcor, 1.0, 1e-12);
}

TEST(DcorDirect, ConstantGivesZero) {
  auto x = Covariate::scalar("x", {3, 3, 3, 3});
  auto y = Covariate::scalar("y", {1, 5, 2, 8});
  const auto r = dcor_direct(x, y);
  EXPECT_EQ(r.dcor, 0.0);
  EXPECT_EQ(r.dvar_x, 0.0);
}

TEST(DcorDirect, GoldenThreePointValue) {
  // exact rational evaluation: sum AB = 80/9, sum A^2 = 40/9, sum B^2 = 184/9
  auto x = Covariate::scalar("x", {0, 1, 2});
  auto y = Covariate::scalar("y", {0, 1, 4});
  const auto r = dcor_direct(x, y);
  EXPECT_NEAR(r.dcor, 0.932504808240313766, 1e-15);
  EXPECT_NEAR(r.dcov2, 80.0 / 81.0, 1e-15);
  EXPECT_NEAR(r.dvar_x, 40.0 / 81.0, 1e-15);
  EXPECT_NEAR(r.dvar_y, 184.0 / 81.0, 1e-15);
  EXPECT_NEAR(r.dcor, r.dcov2 / std::sqrt(r.dvar_x * r.dvar_y), 1e-12);
}

TEST(DcorDirect, MatchesBruteForceAcrossKinds) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 16; ++trial) {
    auto x = random_of_kind(trial, 40, rng);
    auto y = random_of_kind(trial / 4, 40, rng);
    EXPECT_NEAR(dcor_direct(x, y).dcor, static_cast<double>(brute_force_dcor(x, y)), 1e-12);
  }
}

TEST(DcorDirect, RefusesOverBudget) {
  std::mt19937_64 rng(1);
  auto x = normal_scalar("x", 100, rng);
  try {
    dcor_direct(x, x, 1000);
    FAIL() << "expected BudgetExceeded";
  } catch (const BudgetExceeded& e) {
    EXPECT_EQ(e.needed(), direct_bytes(100));
    EXPECT_NE(std::string(e.what()).find("blockwise"), std::string::npos);
  }
}

TEST(DcorBlockwise, MatchesDirectForAllTileSizes) {
  std::mt19937_64 rng(23);
  auto x = random_of_kind(3, 500, rng);
  auto y = random_of_kind(1, 500, rng);
  const auto direct = dcor_direct(x, y);
  for (std::size_t l : {1u, 7u, 64u, 500u}) {
    const auto b = dcor_blockwise(x, y, BlockPlan(l));
    EXPECT_NEAR(b.dcor, direct.dcor, 1e-10 * direct.dcor) << "L=" << l;
    EXPECT_NEAR(b.dcov2, direct.dcov2, 1e-10 * direct.dcov2);
    EXPECT_EQ(b.block_size, l);
  }
}

TEST(DcorBlockwise, PeakScratchTracksTileAccounting) {
  std::mt19937_64 rng(2);
  auto x = normal_scalar("x", 2000, rng);
  auto y = normal_scalar("y", 2000, rng);
  for (std::size_t l : {64u, 250u}) {
    BlockPlan plan(l);
    const auto r = dcor_blockwise(x, y, plan);
    const auto est = plan.aux_bytes_estimate(2000, worker_threads());
    EXPECT_GE(r.peak_aux_bytes, 2 * l * l * sizeof(double));
    EXPECT_LE(r.peak_aux_bytes, 2 * est);
  }
}

TEST(DcorBlockwise, LargerTilesUseMoreMemoryButSameValue) {
  std::mt19937_64 rng(8);
  auto x = normal_scalar("x", 1000, rng);
  auto y = random_of_kind(3, 1000, rng);
  const auto small = dcor_blockwise(x, y, BlockPlan(500));
  const auto large = dcor_blockwise(x, y, BlockPlan(1000));
  EXPECT_NEAR(small.dcor, large.dcor, 1e-10 * large.dcor);
  EXPECT_LT(small.peak_aux_bytes, large.peak_aux_bytes);
}

TEST(BlockPlanTest, BudgetPicksLargestFittingPowerOfTwo) {
  const auto plan = BlockPlan::for_budget(10000, 4 << 20, 1);
  EXPECT_EQ(plan.block_size & (plan.block_size - 1), 0u);
  EXPECT_LE(plan.aux_bytes_estimate(10000, 1), std::size_t{4} << 20);
  EXPECT_GT(BlockPlan(plan.block_size * 2).aux_bytes_estimate(10000, 1), std::size_t{4} << 20);
  EXPECT_EQ(BlockPlan::for_budget(100, 1, 1).block_size, 1u);
  EXPECT_THROW(BlockPlan(0), std::invalid_argument);
}

TEST(DcorProperties, SymmetricAndInvariant) {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 30; ++trial) {
    auto x = random_of_kind(trial, 30, rng);
    auto y = normal_scalar("y", 30, rng);
    const double base = dcor_direct(x, y).dcor;
    EXPECT_EQ(base, dcor_direct(y, x).dcor);

    const double shift = u(rng), scale = u(rng);
    std::vector<double> yv(y.data().begin(), y.data().end());
    for (auto& v : yv) v = scale * v + shift;
    EXPECT_NEAR(dcor_direct(x, Covariate::scalar("y2", yv)).dcor, base, 1e-12);
  }
}

TEST(DcorProperties, RotationInvariantForVectors) {
  std::mt19937_64 rng(31);
  auto x = random_of_kind(1, 50, rng);
  auto y = normal_scalar("y", 50, rng);
  const double th = 0.7;
  std::vector<double> rot(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < 50; ++i) {
    const double a = rot[i * 3], b = rot[i * 3 + 1];
    rot[i * 3] = std::cos(th) * a - std::sin(th) * b;
    rot[i * 3 + 1] = std::sin(th) * a + std::cos(th) * b;
  }
  EXPECT_NEAR(dcor_direct(Covariate::vector("r", 3, rot), y).dcor, dcor_direct(x, y).dcor, 1e-12);
}

TEST(CenteredDistancesTest, RowsSumToZero) {
  std::mt19937_64 rng(37);
  auto c = random_of_kind(3, 60, rng);
  const auto m = CenteredDistances::compute(c);
  const auto full = m.expand();
  double scale = 0;
  for (double v : full) scale = std::max(scale, std::abs(v));
  for (std::size_t k = 0; k < 60; ++k) {
    double r = 0, col = 0;
    for (std::size_t l = 0; l < 60; ++l) {
      r += full[k * 60 + l];
      col += full[l * 60 + k];
    }
    EXPECT_NEAR(r, 0.0, 1e-9 * 60 * scale);
    EXPECT_NEAR(col, 0.0, 1e-9 * 60 * scale);
  }
}

TEST(IndependenceTest, PerfectDependenceGetsSmallestPValue) {
  std::mt19937_64 rng(41);
  auto x = normal_scalar("x", 100, rng);
  const auto r = independence_test(x, x, 199, 7);
  ASSERT_TRUE(r.p_value.has_value());
  EXPECT_DOUBLE_EQ(*r.p_value, 1.0 / 200.0);
  EXPECT_NEAR(r.dcor, 1.0, 1e-12);
}

TEST(IndependenceTest, ConstantVariableHasPValueOne) {
  std::mt19937_64 rng(43);
  auto x = normal_scalar("x", 20, rng);
  auto c = Covariate::scalar("c", std::vector<double>(20, 1.5));
  const auto r = independence_test(x, c, 99, 1);
  EXPECT_EQ(r.dcor, 0.0);
  EXPECT_EQ(*r.p_value, 1.0);
}

TEST(IndependenceTest, DeterministicGivenSeed) {
  std::mt19937_64 rng(47);
  auto x = normal_scalar("x", 60, rng);
  auto y = normal_scalar("y", 60, rng);
  EXPECT_EQ(*independence_test(x, y, 99, 5).p_value, *independence_test(x, y, 99, 5).p_value);
}

TEST(IndependenceTest, RejectsBadArguments) {
  auto x = Covariate::scalar("x", {1, 2, 3});
  EXPECT_THROW(independence_test(x, x, 10, 1), std::invalid_argument);
  auto y = Covariate::scalar("y", {1, 2, 3, 4, 5});
  EXPECT_THROW(independence_test(y, y, 0, 1), std::invalid_argument);
}

TEST(IndependenceTest, SizeAndPowerSmallStudy) {
  // Smaller than the acceptance study; checks the direction of both rates.
  std::size_t rej_null = 0, rej_alt = 0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    Rng rng = substream(99, "size-study", r);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> a(100), b(100), c(100);
    for (int i = 0; i < 100; ++i) {
      a[i] = z(rng);
      b[i] = z(rng);
      c[i] = u(rng);
    }
    std::vector<double> c2(c);
    for (auto& v : c2) v = v * v;
    if (*independence_test(Covariate::scalar("a", a), Covariate::scalar("b", b), 199, r).p_value <= 0.05)
      ++rej_null;
    if (*independence_test(Covariate::scalar("c", c), Covariate::scalar("c2", c2), 199, r).p_value <= 0.05)
      ++rej_alt;
  }
  EXPECT_LE(rej_null, 0.10 * reps);
  EXPECT_GE(rej_alt, 0.95 * reps);
}

TEST(IndependenceTest, ExhaustivePermutationDistributionIsSymmetric) {
  // With every permutation enumerated the p-value is exact; permuting x or
  // permuting y must give the same value.
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 3; ++trial) {
    auto x = normal_scalar("x", 6, rng);
    std::vector<double> yv(6);
    for (std::size_t i = 0; i < 6; ++i) yv[i] = x.value(i) * x.value(i) + 0.3 * (static_cast<double>(rng() % 100) / 100.0);
    auto y = Covariate::scalar("y", yv);
    std::vector<std::size_t> p(6);
    std::iota(p.begin(), p.end(), 0u);
    std::vector<std::vector<std::size_t>> all;
    do {
      all.push_back(p);
    } while (std::next_permutation(p.begin(), p.end()));
    ASSERT_EQ(all.size(), 720u);
    const double py = permutation_pvalue(x, y, all);
    const double px = permutation_pvalue(y, x, all);
    EXPECT_DOUBLE_EQ(py, px);

    // Monte Carlo p-value approaches the exact one
    const double mc = *independence_test(x, y, 4999, 3).p_value;
    EXPECT_NEAR(mc, py, 0.02);
  }
}

TEST(ScreenCandidates, CopyOfTargetRanksFirst) {
  std::mt19937_64 rng(59);
  auto res = normal_scalar("res", 80, rng);
  std::vector<Covariate> cands{normal_scalar("a", 80, rng), res.renamed("copy"), normal_scalar("b", 80, rng)};
  TestOptions opt;
  opt.n_perm = 99;
  opt.seed = 4;
  const auto rows = screen_candidates(res, cands, opt);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].name, "a");
  EXPECT_EQ(rows[1].name, "copy");
  EXPECT_NEAR(rows[1].dcor, 1.0, 1e-12);
  EXPECT_LE(rows[1].p_value, 0.05);
  EXPECT_EQ(rows[1].filtered, rows[1].dcor);
  for (const auto& r : rows) EXPECT_LE(r.dcor, rows[1].dcor);
}

TEST(ScreenCandidates, ConstantCandidatesAreNeverSignificant) {
  std::mt19937_64 rng(61);
  auto res = normal_scalar("res", 30, rng);
  std::vector<Covariate> cands{Covariate::scalar("k1", std::vector<double>(30, 2.0)),
                               Covariate::categorical("k2", std::vector<std::size_t>(30, 1), {"a", "b"})};
  const auto rows = screen_candidates(res, cands, TestOptions{});
  for (const auto& r : rows) {
    EXPECT_EQ(r.dcor, 0.0);
    EXPECT_EQ(r.p_value, 1.0);
    EXPECT_EQ(r.filtered, 0.0);
  }
}

TEST(ScreenCandidates, BlockwiseFallbackAgreesWithMaterialized) {
  std::mt19937_64 rng(67);
  auto res = normal_scalar("res", 40, rng);
  std::vector<double> dep(40);
  for (std::size_t i = 0; i < 40; ++i) dep[i] = res.value(i) * res.value(i);
  std::vector<Covariate> cands{Covariate::scalar("dep", dep), random_of_kind(3, 40, rng)};
  TestOptions opt;
  opt.n_perm = 199;
  opt.seed = 12;
  const auto fast = screen_candidates(res, cands, opt);
  opt.memory_budget = 4096;  // forces the tiled path for everything
  opt.block_size = 7;
  const auto slow = screen_candidates(res, cands, opt);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_NEAR(fast[j].dcor, slow[j].dcor, 1e-10);
    EXPECT_DOUBLE_EQ(fast[j].p_value, slow[j].p_value);
  }
}

TEST(DistanceCacheTest, RespectsBudget) {
  std::mt19937_64 rng(71);
  auto a = normal_scalar("a", 50, rng);
  auto b = normal_scalar("b", 50, rng);
  DistanceCache cache(CenteredDistances::bytes_for(50) + 10);
  EXPECT_NE(cache.get(a), nullptr);
  EXPECT_EQ(cache.get(a), cache.get(a));
  EXPECT_EQ(cache.get(b), nullptr);
}
