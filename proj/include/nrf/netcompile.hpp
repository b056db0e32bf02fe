#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "nrf/cart.hpp"
#include "nrf/network.hpp"

namespace nrf {

/// Hidden-unit ranges that one tree occupies in a compiled network.
struct TreeSegment {
  std::size_t hyperplane_offset = 0;  // first-layer units
  std::size_t hyperplanes = 0;        // K - 1
  std::size_t leaf_offset = 0;        // second-layer units
  std::size_t leaves = 0;             // K

  friend bool operator==(const TreeSegment&, const TreeSegment&) = default;
};

/// A compiled tree, or the concatenation of several.
///
/// net.layers = {hyperplane layer (W1, b1), leaf layer (W2, b2), output (W_out, b_out)}.
/// Units follow the pre-order of internal nodes and of leaves, tree by tree.
struct NetworkParams {
  Network net;
  std::vector<TreeSegment> segments;

  const Matrix& W1() const { return net.layers[0].weights; }
  const std::vector<double>& b1() const { return net.layers[0].bias; }
  const Matrix& W2() const { return net.layers[1].weights; }
  const std::vector<double>& b2() const { return net.layers[1].bias; }
  /// Output weights, one per leaf unit.
  std::span<const double> W_out() const { return net.layers[2].weights.values(); }
  double b_out() const { return net.layers[2].bias[0]; }
  double gamma1() const { return net.layers[0].contrast; }
  double gamma2() const { return net.layers[1].contrast; }

  std::size_t trees() const { return segments.size(); }
  /// Largest per-tree leaf count (K in the constraint budget).
  std::size_t max_leaves() const;

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

/// The joint network of several trees has the same layout with M segments and
/// a block-diagonal leaf layer.
using BigNetworkParams = NetworkParams;

/// Exact network form of a tree. A single-leaf tree becomes a network with
/// empty hidden layers whose output offset is the leaf mean.
NetworkParams compile_tree(const RegressionTree& tree, double gamma1, double gamma2);

/// Stacks per-tree networks side by side with output weights and offset
/// divided by M, so the result outputs the mean of the inputs' outputs.
/// Throws std::invalid_argument on mismatched dimensions or contrasts.
BigNetworkParams concat_networks(std::span<const NetworkParams> nets);

struct ConstraintReport {
  double lhs = 0.0;     // max|W2| + max|b2| + sum|W_out| + |b_out|
  double budget = 0.0;  // C * K
  double margin = 0.0;  // budget - lhs
  bool ok = true;
};

ConstraintReport check_constraint(const NetworkParams& params, double c);

/// C = 3/2 + max|Y|, which compiled trees satisfy.
double default_constraint_constant(double max_abs_target);

/// Network text plus a "segments" trailer; bit-exact round trip.
void save_network(const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_network(const std::filesystem::path& path);
void write_params(const NetworkParams& params, std::ostream& out);
NetworkParams read_params(std::istream& in);

}  // namespace nrf
