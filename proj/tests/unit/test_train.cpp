#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "nrf/baselines.hpp"
#include "nrf/netcompile.hpp"
#include "nrf/rng.hpp"
#include "nrf/train.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

namespace {

nrf::TreeNode leaf_node(double v) {
  nrf::TreeNode n;
  n.value = v;
  return n;
}

nrf::Matrix random_batch(std::size_t b, std::size_t d, oracle::Random& rnd) {
  nrf::Matrix x(b, d);
  for (auto& v : x.values()) v = rnd.uniform();
  return x;
}

void expect_gradients(const nrf::Network& net, const nrf::Matrix& x, const std::vector<double>& y, nrf::TrainMode mode,
                     std::size_t max_checks, oracle::Random& rnd) {
  const auto r = oracle::check_gradients(net, x, y, mode, max_checks, rnd);
  EXPECT_GT(r.checked, 0u);
  EXPECT_EQ(r.masked_nonzero, 0u);
  EXPECT_EQ(r.failures, 0u) << r.first_failure;
}

nrf::Network soft_tree_network(std::size_t trees, nrf::TrainMode mode, oracle::Random& rnd) {
  return oracle::soft_tree_network(trees, 3, mode, rnd);
}

TEST(Gradients, MatchFiniteDifferences) {
  oracle::Random rnd(41);
  int instances = 0;
  for (auto mode : {nrf::TrainMode::kSparse, nrf::TrainMode::kFull}) {
    for (std::size_t trees : {1u, 4u}) {  // small and big networks
      for (int rep = 0; rep < 3; ++rep) {
        auto net = soft_tree_network(trees, mode, rnd);
        const std::size_t b = 1 + rnd.index(8);
        auto x = random_batch(b, 3, rnd);
        std::vector<double> y(b);
        for (auto& v : y) v = rnd.normal();
        expect_gradients(net, x, y, mode, 150, rnd);
        ++instances;
      }
    }
    for (std::size_t depth : {1u, 2u, 3u}) {
      nrf::MlpSpec spec;
      spec.widths.assign(depth, 5 + depth);
      spec.contrasts.assign(depth, 0.3);
      spec.seed = 100 + depth;
      auto net = nrf::make_mlp(spec, 3);
      auto x = random_batch(5, 3, rnd);
      std::vector<double> y(5);
      for (auto& v : y) v = rnd.normal();
      expect_gradients(net, x, y, mode, 200, rnd);
      ++instances;
    }
  }
  EXPECT_GE(instances, 18);
}

TEST(Gradients, ZeroResidualGivesZeroGradient) {
  oracle::Random rnd(42);
  auto net = soft_tree_network(2, nrf::TrainMode::kFull, rnd);
  auto x = random_batch(6, 3, rnd);
  nrf::Engine e;
  e.forward(net, x.data(), 6);
  std::vector<double> y(e.outputs().begin(), e.outputs().end());
  auto g = nrf::gradients(net, x, y, nrf::TrainMode::kFull);
  for (const auto& w : g.weights)
    for (double v : w.values()) EXPECT_EQ(v, 0.0);
  for (const auto& b : g.bias)
    for (double v : b) EXPECT_EQ(v, 0.0);
}

TEST(Gradients, RejectBadShapes) {
  oracle::Random rnd(43);
  auto net = soft_tree_network(1, nrf::TrainMode::kFull, rnd);
  std::vector<double> y(2);
  EXPECT_THROW(nrf::gradients(net, random_batch(3, 3, rnd), y, nrf::TrainMode::kFull), std::invalid_argument);
  EXPECT_THROW(nrf::gradients(net, random_batch(2, 2, rnd), y, nrf::TrainMode::kFull), std::invalid_argument);
}

nrf::Network scalar_network() {
  nrf::Network net;
  nrf::Layer l;
  l.weights = nrf::Matrix(1, 1, 0.0);
  l.bias = {0.0};
  l.activation = nrf::Activation::kIdentity;
  net.layers = {l};
  return net;
}

TEST(Adam, FirstStepByHand) {
  auto net = scalar_network();
  auto state = nrf::AdamState::zeros_like(net);
  auto g = nrf::Gradients::zeros_like(net);
  g.weights[0](0, 0) = 1.0;
  g.bias[0][0] = 1.0;
  nrf::TrainConfig c;
  nrf::adam_step(state, net, g, c);
  EXPECT_EQ(state.step, 1u);
  EXPECT_NEAR(net.layers[0].weights(0, 0), -0.000999999990, 1e-15);
  EXPECT_NEAR(net.layers[0].bias[0], -0.001 / (1 + 1e-8), 1e-18);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  oracle::Random rnd(44);
  auto net = soft_tree_network(2, nrf::TrainMode::kFull, rnd);
  auto before = net;
  auto state = nrf::AdamState::zeros_like(net);
  nrf::adam_step(state, net, nrf::Gradients::zeros_like(net), nrf::TrainConfig{});
  EXPECT_EQ(net, before);
}

TEST(Adam, DeterministicAndShapeChecked) {
  oracle::Random rnd(45);
  auto net = soft_tree_network(2, nrf::TrainMode::kFull, rnd);
  auto x = random_batch(4, 3, rnd);
  std::vector<double> y{1, 2, 3, 4};
  auto g = nrf::gradients(net, x, y, nrf::TrainMode::kFull);
  auto a = net, b = net;
  auto sa = nrf::AdamState::zeros_like(net), sb = sa;
  nrf::adam_step(sa, a, g, {});
  nrf::adam_step(sb, b, g, {});
  EXPECT_EQ(a, b);
  EXPECT_EQ(sa, sb);
  auto other = scalar_network();
  EXPECT_THROW(nrf::adam_step(sa, other, g, {}), std::invalid_argument);
}

TEST(TrainConfig, Validation) {
  nrf::TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.learning_rate = -1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.beta1 = 1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.beta2 = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.eps = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  EXPECT_EQ(c.epochs, 100u);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.learning_rate, 0.001);
  EXPECT_EQ(c.beta1, 0.9);
  EXPECT_EQ(c.beta2, 0.999);
  EXPECT_EQ(c.eps, 1e-8);
}

struct SmallProblem {
  nrf::Dataset ds = nrf::synth_sine(200, 2, 0.01, 5);
  nrf::SplitIndices split = nrf::split_dataset(ds, 5);
  nrf::ForestModel forest;
  SmallProblem(std::size_t trees = 3, std::size_t depth = 3) {
    nrf::ForestParams fp;
    fp.trees = trees;
    fp.stop = nrf::MaxDepth{depth};
    fp.seed = 9;
    forest = nrf::fit_forest(ds, split.train, fp);
  }
};

TEST(TrainNetwork, HistoryAndSelection) {
  SmallProblem p;
  std::vector<nrf::NetworkParams> smalls;
  for (const auto& t : p.forest.trees) smalls.push_back(nrf::compile_tree(t, 100, 1));
  auto big = nrf::concat_networks(smalls);
  nrf::TrainConfig c;
  c.epochs = 7;
  c.batch_size = 16;
  auto r = nrf::train_network(big.net, p.ds, p.split.train, p.split.val, c);
  ASSERT_EQ(r.history.size(), 8u);
  double best = INFINITY;
  std::size_t best_epoch = 0;
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    EXPECT_EQ(r.history[e].epoch, e);
    if (r.history[e].val_rmse < best) best = r.history[e].val_rmse, best_epoch = e;
  }
  EXPECT_EQ(r.best_val_rmse, best);
  EXPECT_EQ(r.best_epoch, best_epoch);
  nrf::Engine e;
  EXPECT_EQ(e.rmse(r.best, p.ds, p.split.val), best);

  // Before any update the joint network is the average of the tree networks.
  std::vector<double> avg(p.split.val.size(), 0.0);
  for (const auto& s : smalls)
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += nrf::forward_tanh(s.net, p.ds.row(p.split.val[i])) / 3.0;
  EXPECT_NEAR(r.history[0].val_rmse, nrf::rmse(avg, p.ds, p.split.val), 1e-12);

  auto again = nrf::train_network(big.net, p.ds, p.split.train, p.split.val, c);
  EXPECT_EQ(again.history, r.history);
  EXPECT_EQ(again.best, r.best);
}

TEST(TrainNetwork, LearnsConstantTarget) {
  oracle::Random rnd(46);
  auto base = oracle::random_dataset(64, 3, rnd);
  nrf::Dataset ds(base.features(), std::vector<double>(64, 2.5), {});
  auto split = nrf::split_dataset(ds, 1);
  auto net = soft_tree_network(2, nrf::TrainMode::kFull, rnd);
  nrf::TrainConfig c;
  c.epochs = 60;
  c.learning_rate = 0.01;
  c.mode = nrf::TrainMode::kFull;
  auto r = nrf::train_network(net, ds, split.train, split.val, c);
  EXPECT_LT(r.history.back().train_rmse, r.history.front().train_rmse);
}

TEST(TrainNetwork, SparseModeKeepsOffBlockZeros) {
  SmallProblem p;
  std::vector<nrf::NetworkParams> smalls;
  for (const auto& t : p.forest.trees) smalls.push_back(nrf::compile_tree(t, 100, 1));
  auto big = nrf::concat_networks(smalls);
  nrf::TrainConfig c;
  c.mode = nrf::TrainMode::kSparse;
  c.epochs = 100;
  c.learning_rate = 0.01;
  auto r = nrf::train_network(big.net, p.ds, p.split.train, p.split.val, c);
  // Train again and keep the final weights too, not only the selected ones.
  for (const nrf::Network* net : {&r.best}) {
    for (std::size_t li = 0; li < 2; ++li) {
      const auto& l = net->layers[li];
      for (std::size_t i = 0; i < l.mask.size(); ++i)
        if (!l.mask[i]) {
          ASSERT_EQ(l.weights.values()[i], 0.0);
        }
    }
  }
  EXPECT_GT(r.best_epoch, 0u);
}

TEST(TrainNetwork, FullModeLearnsCrossTreeConnections) {
  SmallProblem p;
  std::vector<nrf::NetworkParams> smalls;
  for (const auto& t : p.forest.trees) smalls.push_back(nrf::compile_tree(t, 100, 1));
  auto big = nrf::concat_networks(smalls);
  nrf::TrainConfig c;
  c.mode = nrf::TrainMode::kFull;
  c.epochs = 5;
  auto r = nrf::train_network(big.net, p.ds, p.split.train, p.split.val, c);
  ASSERT_GT(r.best_epoch, 0u);
  const auto& l2 = r.best.layers[1];
  std::size_t moved = 0;
  for (std::size_t i = 0; i < l2.mask.size(); ++i)
    if (!l2.mask[i] && l2.weights.values()[i] != 0.0) ++moved;
  EXPECT_GT(moved, 0u);
}

TEST(Method1, UntrainedEqualsForestUpToSmoothing) {
  SmallProblem p;
  nrf::TrainConfig c;
  c.epochs = 1;
  c.learning_rate = 0.0;
  auto model = nrf::fit_nrf_method1(p.forest, p.ds, p.split, 1e4, 1e4, c);
  ASSERT_FALSE(model.fallback_to_rf);
  oracle::Random rnd(47);
  int used = 0;
  for (int q = 0; q < 500; ++q) {
    const std::vector<double> x{rnd.uniform(), rnd.uniform()};
    bool near = false;
    for (const auto& t : p.forest.trees) near |= oracle::distance_to_thresholds(t, x) < 1e-2;
    if (near) continue;
    EXPECT_NEAR(nrf::predict_nrf(model, x), nrf::predict_forest(p.forest, x), 1e-3);
    ++used;
  }
  EXPECT_GT(used, 100);
}

TEST(Method1, SingleTreeMatchesTrainNetwork) {
  SmallProblem p(1);
  nrf::TrainConfig c;
  c.epochs = 4;
  c.seed = 3;
  auto model = nrf::fit_nrf_method1(p.forest, p.ds, p.split, 100, 1, c);
  nrf::TrainConfig member = c;
  member.seed = nrf::derive_seed(c.seed, nrf::seed_stream::kMember, 0);
  auto r = nrf::train_network(nrf::compile_tree(p.forest.trees[0], 100, 1).net, p.ds, p.split.train, p.split.val, member);
  ASSERT_EQ(model.histories.size(), 1u);
  EXPECT_EQ(model.histories[0], r.history);
  if (!model.member_fallback[0] && !model.fallback_to_rf) {
    EXPECT_EQ(model.members[0].net, r.best);
  }
}

TEST(Method1, AllMembersFallenBackEqualsForest) {
  // A step target the trees fit almost exactly; with contrasts this soft the
  // networks are nearly constant and cannot compete.
  SmallProblem p(4);
  oracle::Random rnd(48);
  nrf::Matrix x(200, 2);
  std::vector<double> y(200);
  for (std::size_t i = 0; i < 200; ++i) {
    x(i, 0) = rnd.uniform();
    x(i, 1) = rnd.uniform();
    y[i] = x(i, 0) >= 0.5 ? 10.0 : 0.0;
  }
  p.ds = nrf::Dataset(x, y, {});
  p.forest = nrf::fit_forest(p.ds, p.split.train, p.forest.params);
  nrf::TrainConfig c;
  c.epochs = 1;
  c.learning_rate = 0.0;
  auto model = nrf::fit_nrf_method1(p.forest, p.ds, p.split, 0.01, 0.01, c);
  ASSERT_EQ(model.member_fallback, std::vector<bool>(4, true));
  for (std::size_t i = 0; i < p.ds.rows(); ++i)
    ASSERT_EQ(nrf::predict_nrf(model, p.ds.row(i)), nrf::predict_forest(p.forest, p.ds.row(i)));
  auto batch = nrf::predict_nrf(model, p.ds, oracle::iota(p.ds.rows()));
  for (std::size_t i = 0; i < p.ds.rows(); ++i) ASSERT_EQ(batch[i], nrf::predict_forest(p.forest, p.ds.row(i)));
  EXPECT_LE(model.val_rmse, model.forest_val_rmse);
}

TEST(Method1, AveragesMemberOutputs) {
  nrf::NrfModel model;
  model.method = nrf::Method::kIndependent;
  for (double v : {1.0, 3.0}) model.members.push_back(nrf::compile_tree(nrf::RegressionTree({leaf_node(v)}, 0, 1), 100, 1));
  model.member_fallback = {false, false};
  const double x[] = {0.2};
  EXPECT_EQ(nrf::predict_nrf(model, x), 2.0);
}

TEST(Fallback, ValidationNeverWorseThanForest) {
  SmallProblem p;
  for (auto method : {nrf::Method::kIndependent, nrf::Method::kJoint})
    for (auto mode : {nrf::TrainMode::kSparse, nrf::TrainMode::kFull})
      for (double lr : {0.0, 0.001, 0.5}) {
        nrf::TrainConfig c;
        c.epochs = 3;
        c.mode = mode;
        c.learning_rate = lr;
        auto m = method == nrf::Method::kIndependent ? nrf::fit_nrf_method1(p.forest, p.ds, p.split, 100, 1, c)
                                                    : nrf::fit_nrf_method2(p.forest, p.ds, p.split, 100, 1, c);
        EXPECT_LE(m.val_rmse, m.forest_val_rmse);
        EXPECT_NEAR(nrf::nrf_rmse(m, p.ds, p.split.val), m.val_rmse, 1e-12);
        if (m.fallback_to_rf) {
          for (std::size_t i : p.split.test)
            ASSERT_EQ(nrf::predict_nrf(m, p.ds.row(i)), nrf::predict_forest(p.forest, p.ds.row(i)));
        }
      }
}

TEST(Method2, TrainsAndBeatsForestOnSine) {
  SmallProblem p(5, 4);
  nrf::TrainConfig c;
  c.epochs = 30;
  c.mode = nrf::TrainMode::kFull;
  auto m = nrf::fit_nrf_method2(p.forest, p.ds, p.split, 100, 1, c);
  ASSERT_EQ(m.members.size(), 1u);
  ASSERT_EQ(m.histories[0].size(), 31u);
  EXPECT_FALSE(m.fallback_to_rf);
  EXPECT_LT(m.val_rmse, m.forest_val_rmse);
}

TEST(ModelIo, SaveLoadRoundTrip) {
  SmallProblem p;
  nrf::TrainConfig c;
  c.epochs = 2;
  TempDir tmp;
  for (auto method : {nrf::Method::kIndependent, nrf::Method::kJoint}) {
    auto m = method == nrf::Method::kIndependent ? nrf::fit_nrf_method1(p.forest, p.ds, p.split, 100, 1, c)
                                                : nrf::fit_nrf_method2(p.forest, p.ds, p.split, 100, 1, c);
    const auto dir = tmp / (method == nrf::Method::kIndependent ? "m1" : "m2");
    nrf::save_model(m, dir);
    auto back = nrf::load_model(dir);
    EXPECT_EQ(back.method, m.method);
    EXPECT_EQ(back.member_fallback, m.member_fallback);
    EXPECT_EQ(back.fallback_to_rf, m.fallback_to_rf);
    EXPECT_EQ(back.histories, m.histories);
    EXPECT_EQ(back.val_rmse, m.val_rmse);
    ASSERT_EQ(back.members.size(), m.members.size());
    for (std::size_t i = 0; i < m.members.size(); ++i) EXPECT_EQ(back.members[i], m.members[i]);
    for (std::size_t i : p.split.test) ASSERT_EQ(nrf::predict_nrf(back, p.ds.row(i)), nrf::predict_nrf(m, p.ds.row(i)));
  }
  EXPECT_THROW(nrf::load_model(tmp / "none"), nrf::DataError);
}

TEST(History, CsvLayout) {
  std::vector<nrf::EpochRecord> h{{0, 1.5, 2.5}, {1, 0.25, 0.125}};
  std::ostringstream out;
  nrf::write_history_csv(h, out);
  EXPECT_EQ(out.str(), "epoch,train_rmse,val_rmse\n0,1.5,2.5\n1,0.25,0.125\n");
}

TEST(TrainMode, Names) {
  EXPECT_EQ(nrf::parse_train_mode("sparse"), nrf::TrainMode::kSparse);
  EXPECT_EQ(nrf::parse_train_mode(nrf::to_string(nrf::TrainMode::kFull)), nrf::TrainMode::kFull);
  EXPECT_THROW(nrf::parse_train_mode("dense"), std::invalid_argument);
}

}  // namespace
