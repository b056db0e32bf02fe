#include <gtest/gtest.h>

#include <sstream>

#include "nrf/baselines.hpp"
#include "nrf/network.hpp"
#include "oracles.hpp"

namespace {

nrf::Network random_net(std::vector<std::size_t> widths, oracle::Random& rnd, double contrast = 1.0) {
  nrf::Network net;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    nrf::Layer l;
    l.weights = nrf::Matrix(widths[i], widths[i + 1]);
    for (auto& w : l.weights.values()) w = rnd.normal() / std::sqrt(static_cast<double>(widths[i]));
    for (std::size_t o = 0; o < widths[i + 1]; ++o) l.bias.push_back(rnd.normal());
    l.contrast = contrast;
    l.activation = i + 2 == widths.size() ? nrf::Activation::kIdentity : nrf::Activation::kTanh;
    net.layers.push_back(std::move(l));
  }
  return net;
}

TEST(Network, ValidateShapes) {
  oracle::Random rnd(1);
  auto net = random_net({3, 4, 5, 1}, rnd);
  EXPECT_NO_THROW(nrf::validate(net));
  EXPECT_EQ(net.dims(), 3u);
  EXPECT_EQ(net.parameter_count(), 3u * 4 + 4 + 4 * 5 + 5 + 5 + 1);

  auto bad = net;
  bad.layers[1].weights = nrf::Matrix(3, 5);
  EXPECT_THROW(nrf::validate(bad), std::invalid_argument);
  bad = net;
  bad.layers[0].bias.pop_back();
  EXPECT_THROW(nrf::validate(bad), std::invalid_argument);
  bad = net;
  bad.layers[1].activation = nrf::Activation::kIdentity;
  EXPECT_THROW(nrf::validate(bad), std::invalid_argument);
  bad = net;
  bad.layers[2].activation = nrf::Activation::kTanh;
  EXPECT_THROW(nrf::validate(bad), std::invalid_argument);
  bad = net;
  bad.layers[0].mask.assign(5, 1);
  EXPECT_THROW(nrf::validate(bad), std::invalid_argument);
  bad = net;
  bad.layers[0].blocks.push_back({2, 2, 0, 1});
  EXPECT_THROW(nrf::validate(bad), std::invalid_argument);
  EXPECT_THROW(nrf::validate(random_net({3, 4, 2}, rnd)), std::invalid_argument);
  EXPECT_THROW(nrf::validate(nrf::Network{}), std::invalid_argument);
}

TEST(Network, ForwardTanhMatchesNaive) {
  oracle::Random rnd(2);
  auto net = random_net({4, 7, 6, 1}, rnd, 1.7);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> x{rnd.uniform(), rnd.uniform(), rnd.uniform(), rnd.uniform()};
    EXPECT_NEAR(nrf::forward_tanh(net, x), oracle::naive_forward(net, x), 1e-13);
  }
  std::vector<double> wrong(3);
  EXPECT_THROW(nrf::forward_tanh(net, wrong), std::invalid_argument);
}

TEST(Network, ForwardHardUsesSign) {
  // One hidden unit: tau(x - 0.5), output 2 * tau + 1.
  nrf::Network net;
  nrf::Layer h;
  h.weights = nrf::Matrix(1, 1, 1.0);
  h.bias = {-0.5};
  h.contrast = 100.0;
  nrf::Layer o;
  o.weights = nrf::Matrix(1, 1, 2.0);
  o.bias = {1.0};
  o.activation = nrf::Activation::kIdentity;
  net.layers = {h, o};
  const double left[] = {0.25}, edge[] = {0.5}, right[] = {0.75};
  EXPECT_EQ(nrf::forward_hard(net, left), -1.0);
  EXPECT_EQ(nrf::forward_hard(net, edge), 3.0);  // tau(0) = +1
  EXPECT_EQ(nrf::forward_hard(net, right), 3.0);
  EXPECT_EQ(nrf::forward_tanh(net, edge), 1.0);  // tanh(0) = 0
  auto t = nrf::forward_hard_trace(net, left);
  ASSERT_EQ(t.pre.size(), 2u);
  EXPECT_EQ(t.pre[0][0], -0.25);
  EXPECT_EQ(t.post[0][0], -1.0);
}

TEST(Network, HardOutputIncludesResidual) {
  nrf::Network net;
  nrf::Layer o;
  o.weights = nrf::Matrix(1, 1, 0.0);
  o.bias = {1.0};
  o.activation = nrf::Activation::kIdentity;
  net.layers = {o};
  net.output_residual = {0x1p-60};
  const double x[] = {0.0};
  EXPECT_EQ(nrf::forward_hard(net, x), 1.0);
  net.output_residual = {0x1p-53, 0x1p-80};  // just above the half-way point
  EXPECT_EQ(nrf::forward_hard(net, x), 1.0 + 0x1p-52);
}

TEST(Engine, BatchedForwardMatchesSingleSample) {
  oracle::Random rnd(3);
  auto net = random_net({3, 40, 33, 1}, rnd, 2.0);
  auto ds = oracle::random_dataset(300, 3, rnd);
  nrf::Engine e;
  const auto rows = oracle::iota(300);
  auto pred = e.predict(net, ds, rows);
  ASSERT_EQ(pred.size(), 300u);
  for (std::size_t i = 0; i < 300; ++i) EXPECT_NEAR(pred[i], nrf::forward_tanh(net, ds.row(i)), 1e-12);

  double ss = 0;
  for (std::size_t i = 0; i < 300; ++i) ss += (pred[i] - ds.target(i)) * (pred[i] - ds.target(i));
  EXPECT_NEAR(e.rmse(net, ds, rows), std::sqrt(ss / 300), 1e-14);
  EXPECT_THROW(e.rmse(net, ds, {}), std::invalid_argument);
}

TEST(Engine, BlockSparseForwardSkipsOnlyZeros) {
  // Two diagonal blocks; the engine must give the same result with and
  // without the block shortcut when off-block weights are zero.
  oracle::Random rnd(4);
  auto net = random_net({2, 6, 8, 1}, rnd);
  auto& l = net.layers[1];
  l.blocks = {{0, 3, 0, 4}, {3, 3, 4, 4}};
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 8; ++c)
      if ((r < 3) != (c < 4)) l.weights(r, c) = 0.0;
  auto dense = net;
  l.block_sparse = true;
  auto ds = oracle::random_dataset(50, 2, rnd);
  nrf::Engine e;
  auto a = e.predict(net, ds, oracle::iota(50));
  auto b = e.predict(dense, ds, oracle::iota(50));
  for (std::size_t i = 0; i < 50; ++i) EXPECT_NEAR(a[i], b[i], 1e-13);
}

TEST(NetworkIo, RoundTripIsBitExact) {
  oracle::Random rnd(5);
  auto net = random_net({2, 3, 4, 1}, rnd, 100.0);
  net.layers[1].mask = {1, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 1};
  net.layers[1].blocks = {{0, 2, 0, 3}, {2, 1, 3, 1}};
  net.layers[1].block_sparse = true;
  net.output_residual = {1e-30, -2e-20};
  std::stringstream ss;
  nrf::write_network(net, ss);
  EXPECT_EQ(nrf::read_network(ss), net);
}

TEST(NetworkIo, MalformedInputThrowsDataError) {
  for (const char* text :
       {"", "nrf-network 2\n", "nrf-network 1\nlayers 1 residual 0\nlayer 1 1 identity 1 0\nbias x\n",
        "nrf-network 1\nlayers 1 residual 0\nlayer 1 1 sigmoid 1 0\nbias 0\n0\nmask none\nblocks 0\n",
        "nrf-network 1\nlayers 1 residual 0\nlayer 1 1 identity 1 0\nbias 0\n0\nmask\n2\nblocks 0\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(nrf::read_network(in), nrf::DataError) << text;
  }
}

}  // namespace
