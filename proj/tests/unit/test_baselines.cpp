#include <gtest/gtest.h>

#include <cmath>

#include "nrf/baselines.hpp"
#include "oracles.hpp"

namespace {

nrf::ForestModel one_tree_forest() {
  // Five internal nodes, six leaves.
  oracle::Random rnd(1);
  nrf::RegressionTree t;
  do t = oracle::random_tree(2, 4, rnd); while (t.leaf_count() != 6);
  nrf::ForestModel f;
  f.trees = {t};
  return f;
}

TEST(Baselines, WidthsFollowOneTree) {
  auto f = one_tree_forest();
  auto s = nrf::mlp_from_forest_shape(f, 2, 100, 1, 7);
  EXPECT_EQ(s.widths, (std::vector<std::size_t>{5, 6}));
  EXPECT_EQ(s.contrasts, (std::vector<double>{100, 1}));
  EXPECT_EQ(s.seed, 7u);
  auto deep = nrf::mlp_from_forest_shape(f, 3, 100, 1, 7);
  EXPECT_EQ(deep.widths, (std::vector<std::size_t>{5, 6, 6}));
  EXPECT_EQ(deep.contrasts, (std::vector<double>{100, 1, 1}));
  EXPECT_EQ(nrf::mlp_from_forest_shape(f, 1, 100, 1, 7).widths, std::vector<std::size_t>{5});
}

TEST(Baselines, WidthsSumOverForest) {
  auto ds = nrf::synth_sine(300, 2, 0.01, 2);
  nrf::ForestParams fp;
  fp.seed = 4;
  auto forest = nrf::fit_forest(ds, oracle::iota(150), fp);
  ASSERT_EQ(forest.trees.size(), 30u);
  std::size_t internal = 0, leaves = 0;
  for (const auto& t : forest.trees)
    for (const auto& n : t.nodes()) ++(n.is_leaf ? leaves : internal);
  auto s = nrf::mlp_from_forest_shape(forest, 2, 100, 1, 0);
  EXPECT_EQ(s.widths, (std::vector<std::size_t>{internal, leaves}));
  EXPECT_EQ(s.widths[1], s.widths[0] + 30);
}

TEST(Baselines, Validation) {
  auto f = one_tree_forest();
  EXPECT_THROW(nrf::mlp_from_forest_shape(f, 0, 1, 1, 0), std::invalid_argument);
  EXPECT_THROW(nrf::mlp_from_forest_shape(f, 4, 1, 1, 0), std::invalid_argument);
  nrf::MlpSpec s{{3, 0}, {1, 1}, 0};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = {{3}, {1, 1}, 0};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = {{3}, {-1}, 0};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = {{3}, {1}, 0};
  EXPECT_THROW(nrf::make_mlp(s, 0), std::invalid_argument);
}

TEST(Baselines, GaussianInitAndLayout) {
  nrf::MlpSpec s{{200, 150}, {100, 1}, 11};
  auto net = nrf::make_mlp(s, 4);
  EXPECT_NO_THROW(nrf::validate(net));
  ASSERT_EQ(net.layers.size(), 3u);
  EXPECT_EQ(net.layers[0].contrast, 100);
  EXPECT_EQ(net.layers[1].contrast, 1);
  EXPECT_EQ(net.layers[2].activation, nrf::Activation::kIdentity);
  EXPECT_EQ(net.layers[2].outputs(), 1u);
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& l : net.layers) {
    EXPECT_FALSE(l.has_mask());
    for (double w : l.weights.values()) sum += w, sq += w * w, ++n;
    for (double b : l.bias) sum += b, sq += b * b, ++n;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_LT(std::abs(mean), 5.0 / std::sqrt(n));
  EXPECT_NEAR(var, 1.0, 0.05);
  EXPECT_EQ(nrf::make_mlp(s, 4), net);
  s.seed = 12;
  EXPECT_NE(nrf::make_mlp(s, 4), net);
}

}  // namespace
