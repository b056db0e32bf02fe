#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "nrf/data.hpp"

namespace nrf {

/// Axis-aligned cut: samples with x[feature] < threshold go left, the rest right.
struct Split {
  std::size_t feature = 0;
  double threshold = 0.0;
  double gain = 0.0;

  friend bool operator==(const Split&, const Split&) = default;
};

/// Split any node shallower than `depth` that admits a positive-gain cut.
struct MaxDepth {
  std::size_t depth;
};
/// Best-first growth until `leaves` leaves or no positive-gain cut remains.
struct ExactLeaves {
  std::size_t leaves;
};
using StoppingRule = std::variant<MaxDepth, ExactLeaves>;

/// Node of a tree stored in pre-order: the root is node 0 and the left child
/// of an internal node immediately follows it.
struct TreeNode {
  bool is_leaf = true;
  // internal nodes
  std::size_t feature = 0;
  double threshold = 0.0;
  std::size_t left = 0;
  std::size_t right = 0;
  // leaves
  double value = 0.0;
  std::size_t count = 0;
  std::size_t depth = 0;

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

class RegressionTree {
 public:
  RegressionTree() = default;
  /// Takes any node arena rooted at `root` and stores it in pre-order.
  RegressionTree(const std::vector<TreeNode>& arena, std::size_t root, std::size_t dims);

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::size_t dims() const { return dims_; }
  std::size_t leaf_count() const { return leaf_count_; }
  std::size_t internal_count() const { return nodes_.size() - leaf_count_; }
  std::size_t max_depth() const { return max_depth_; }

  /// Index of the leaf reached by x, routing x[j] >= threshold to the right.
  std::size_t leaf_index(std::span<const double> x) const;

  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;

 private:
  std::vector<TreeNode> nodes_;
  std::size_t dims_ = 0;
  std::size_t leaf_count_ = 0;
  std::size_t max_depth_ = 0;
};

/// Renormalized decrease of within-node squared error for the cut (feature, threshold).
/// Throws std::invalid_argument when the cut leaves one side empty.
double criterion(std::span<const std::size_t> node_samples, std::size_t feature, double threshold,
                 const Dataset& ds);

/// Best midpoint cut over the given features, or nullopt when no cut has positive gain.
/// Gains within 1e-12 of the node variance tie; ties go to the lowest feature index, then the lowest threshold.
std::optional<Split> best_cut(std::span<const std::size_t> node_samples, std::span<const std::size_t> features,
                              const Dataset& ds);

struct GrowOptions {
  StoppingRule stop = MaxDepth{6};
  /// Features drawn per node; 0 means all of them.
  std::size_t mtry = 0;
  std::uint64_t seed = 0;
};

/// Grows a CART tree on the (possibly repeated) sample indices.
RegressionTree grow_tree(std::span<const std::size_t> samples, const Dataset& ds, const GrowOptions& options);

double predict_tree(const RegressionTree& tree, std::span<const double> x);

/// Line-oriented text form:
///
///   nrf-tree 1
///   dims <d> nodes <count>
///   <id> split <feature> <threshold> <left> <right> <count> <depth>
///   <id> leaf <mean> <count> <depth>
///
/// Node ids are pre-order positions. Doubles are written in shortest
/// round-trip form, so save/load is bit-exact.
void write_tree(const RegressionTree& tree, std::ostream& out);
RegressionTree read_tree(std::istream& in);
void save_tree(const RegressionTree& tree, const std::filesystem::path& path);
RegressionTree load_tree(const std::filesystem::path& path);

}  // namespace nrf
