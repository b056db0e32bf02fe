#include <gtest/gtest.h>

#include <set>

#include "nrf/forest.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

namespace {

nrf::RegressionTree leaf(double v, std::size_t d = 1) {
  nrf::TreeNode n;
  n.value = v;
  return nrf::RegressionTree({n}, 0, d);
}

TEST(Forest, DegeneratesToSingleTree) {
  oracle::Random rnd(1);
  auto ds = oracle::random_dataset(80, 3, rnd);
  const auto rows = oracle::iota(60);
  nrf::ForestParams p;
  p.trees = 1;
  p.mtry = 3;
  p.resample = nrf::ResampleMode::kNone;
  p.stop = nrf::ExactLeaves{7};
  auto f = nrf::fit_forest(ds, rows, p);
  nrf::GrowOptions opt;
  opt.stop = nrf::ExactLeaves{7};
  EXPECT_EQ(f.trees.at(0), nrf::grow_tree(rows, ds, opt));
}

TEST(Forest, ExperimentalConfiguration) {
  auto ds = nrf::synth_sine(400, 2, 0.01, 0);
  nrf::ForestParams p;  // defaults: 30 trees, depth 6
  EXPECT_EQ(p.trees, 30u);
  ASSERT_TRUE(std::holds_alternative<nrf::MaxDepth>(p.stop));
  EXPECT_EQ(std::get<nrf::MaxDepth>(p.stop).depth, 6u);
  auto split = nrf::split_dataset(ds, 0);
  auto f = nrf::fit_forest(ds, split.train, p);
  ASSERT_EQ(f.trees.size(), 30u);
  for (const auto& t : f.trees) EXPECT_LE(t.max_depth(), 6u);
}

TEST(Forest, DeterministicUnderSeed) {
  oracle::Random rnd(2);
  auto ds = oracle::random_dataset(120, 4, rnd);
  nrf::ForestParams p;
  p.trees = 5;
  p.seed = 1234;
  auto a = nrf::fit_forest(ds, oracle::iota(100), p);
  auto b = nrf::fit_forest(ds, oracle::iota(100), p);
  EXPECT_EQ(a.trees, b.trees);
  EXPECT_EQ(a.resamples, b.resamples);
  p.seed = 1235;
  EXPECT_NE(nrf::fit_forest(ds, oracle::iota(100), p).trees, a.trees);
}

TEST(Forest, EachTreeSeesOnlyItsResample) {
  oracle::Random rnd(3);
  auto ds = oracle::random_dataset(200, 3, rnd);
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < 200; i += 2) train.push_back(i);
  for (auto mode : {nrf::ResampleMode::kNone, nrf::ResampleMode::kBootstrap, nrf::ResampleMode::kSubsample}) {
    nrf::ForestParams p;
    p.trees = 4;
    p.resample = mode;
    p.seed = 5;
    auto f = nrf::fit_forest(ds, train, p);
    const std::set<std::size_t> allowed(train.begin(), train.end());
    for (std::size_t m = 0; m < 4; ++m) {
      const auto& rows = f.resamples[m];
      const std::size_t expect = mode == nrf::ResampleMode::kSubsample ? 64 : 100;  // ceil(0.632 * 100)
      ASSERT_EQ(rows.size(), expect);
      for (std::size_t r : rows) ASSERT_TRUE(allowed.count(r));
      if (mode == nrf::ResampleMode::kSubsample) {
        EXPECT_EQ(std::set<std::size_t>(rows.begin(), rows.end()).size(), 64u);
      }
      // Leaf counts partition the resample, and the leaves are its cell means.
      std::size_t total = 0;
      for (const auto& n : f.trees[m].nodes())
        if (n.is_leaf) total += n.count;
      EXPECT_EQ(total, rows.size());
      for (std::size_t r : rows)
        ASSERT_NEAR(nrf::predict_tree(f.trees[m], ds.row(r)), oracle::partition_mean(f.trees[m], rows, ds, ds.row(r)),
                    1e-12);
    }
  }
}

TEST(Forest, ParameterValidation) {
  oracle::Random rnd(4);
  auto ds = oracle::random_dataset(20, 3, rnd);
  const auto rows = oracle::iota(20);
  nrf::ForestParams p;
  EXPECT_EQ(p.effective_mtry(3), 1u);
  EXPECT_EQ(p.effective_mtry(9), 3u);
  EXPECT_EQ(p.effective_subsample(100), 64u);
  p.trees = 0;
  EXPECT_THROW(nrf::fit_forest(ds, rows, p), std::invalid_argument);
  p.trees = 2;
  p.mtry = 4;
  EXPECT_THROW(nrf::fit_forest(ds, rows, p), std::invalid_argument);
  p.mtry = 0;
  p.resample = nrf::ResampleMode::kSubsample;
  p.subsample_size = 21;
  EXPECT_THROW(nrf::fit_forest(ds, rows, p), std::invalid_argument);
  p.subsample_size = 1;
  EXPECT_THROW(nrf::fit_forest(ds, rows, p), std::invalid_argument);
  const std::size_t one[] = {0};
  p.subsample_size = 0;
  EXPECT_THROW(nrf::fit_forest(ds, one, p), std::invalid_argument);
}

TEST(PredictForest, MeanOfTrees) {
  nrf::ForestModel f;
  f.trees = {leaf(1), leaf(3)};
  const double x[] = {0.0};
  EXPECT_EQ(nrf::predict_forest(f, x), 2.0);
  f.trees = {leaf(-4.5)};
  EXPECT_EQ(nrf::predict_forest(f, x), -4.5);
}

TEST(PredictForest, SingleTreeEqualsPredictTree) {
  oracle::Random rnd(6);
  auto ds = oracle::random_dataset(100, 2, rnd);
  nrf::ForestParams p;
  p.trees = 1;
  auto f = nrf::fit_forest(ds, oracle::iota(100), p);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(nrf::predict_forest(f, ds.row(i)), nrf::predict_tree(f.trees[0], ds.row(i)));
}

TEST(PredictForest, MatchesPerTreeAverage) {
  oracle::Random rnd(7);
  auto ds = oracle::random_dataset(300, 3, rnd, 5.0);
  nrf::ForestParams p;
  p.trees = 12;
  auto f = nrf::fit_forest(ds, oracle::iota(150), p);
  for (int k = 0; k < 200; ++k) {
    const double x[] = {rnd.uniform(), rnd.uniform(), rnd.uniform()};
    long double s = 0;
    for (const auto& t : f.trees) s += nrf::predict_tree(t, x);
    const double want = static_cast<double>(s / 12);
    EXPECT_NEAR(nrf::predict_forest(f, x), want, 1e-15 * std::max(1.0, std::abs(want)));
  }
  double ss = 0.0;
  for (std::size_t i = 150; i < 300; ++i) {
    const double e = nrf::predict_forest(f, ds.row(i)) - ds.target(i);
    ss += e * e;
  }
  std::vector<std::size_t> test;
  for (std::size_t i = 150; i < 300; ++i) test.push_back(i);
  EXPECT_NEAR(nrf::forest_rmse(f, ds, test), std::sqrt(ss / 150), 1e-14);
}

TEST(ForestIo, SaveLoadRoundTrip) {
  oracle::Random rnd(8);
  auto ds = oracle::random_dataset(100, 3, rnd);
  nrf::ForestParams p;
  p.trees = 3;
  p.seed = 0xFFFFFFFFFFFFFFFFull;
  p.stop = nrf::ExactLeaves{9};
  p.resample = nrf::ResampleMode::kSubsample;
  auto f = nrf::fit_forest(ds, oracle::iota(80), p);
  TempDir tmp;
  nrf::save_forest(f, tmp / "f");
  auto g = nrf::load_forest(tmp / "f");
  EXPECT_EQ(g.trees, f.trees);
  EXPECT_EQ(g.resamples, f.resamples);
  EXPECT_EQ(g.params.seed, p.seed);
  EXPECT_EQ(g.params.resample, p.resample);
  EXPECT_EQ(std::get<nrf::ExactLeaves>(g.params.stop).leaves, 9u);
  EXPECT_THROW(nrf::load_forest(tmp / "nothing"), nrf::DataError);
}

TEST(Forest, ResampleModeNames) {
  for (auto m : {nrf::ResampleMode::kNone, nrf::ResampleMode::kBootstrap, nrf::ResampleMode::kSubsample})
    EXPECT_EQ(nrf::parse_resample_mode(nrf::to_string(m)), m);
  EXPECT_THROW(nrf::parse_resample_mode("jackknife"), std::invalid_argument);
}

}  // namespace
