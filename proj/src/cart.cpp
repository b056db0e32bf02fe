#include "nrf/cart.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>

#include "nrf/rng.hpp"
#include "nrf/text_io.hpp"

namespace nrf {

RegressionTree::RegressionTree(const std::vector<TreeNode>& arena, std::size_t root, std::size_t dims)
    : dims_(dims) {
  if (arena.empty()) throw std::invalid_argument("RegressionTree: empty node arena");
  struct Pending {
    std::size_t src;
    std::size_t depth;
    std::size_t parent;  // position in nodes_, npos for the root
    bool is_right;
  };
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<Pending> stack{{root, 0, npos, false}};
  while (!stack.empty()) {
    Pending p = stack.back();
    stack.pop_back();
    if (p.src >= arena.size()) throw std::invalid_argument("RegressionTree: child index out of range");
    if (nodes_.size() > arena.size()) throw std::invalid_argument("RegressionTree: arena contains a cycle");
    TreeNode node = arena[p.src];
    node.depth = p.depth;
    const std::size_t pos = nodes_.size();
    if (p.parent != npos) (p.is_right ? nodes_[p.parent].right : nodes_[p.parent].left) = pos;
    if (node.is_leaf) {
      ++leaf_count_;
      max_depth_ = std::max(max_depth_, p.depth);
    } else {
      if (node.feature >= dims_) throw std::invalid_argument("RegressionTree: split feature out of range");
      // Right is pushed first so the left subtree is emitted first.
      stack.push_back({node.right, p.depth + 1, pos, true});
      stack.push_back({node.left, p.depth + 1, pos, false});
    }
    nodes_.push_back(node);
  }
}

std::size_t RegressionTree::leaf_index(std::span<const double> x) const {
  std::size_t i = 0;
  while (!nodes_[i].is_leaf) {
    const TreeNode& n = nodes_[i];
    i = x[n.feature] >= n.threshold ? n.right : n.left;
  }
  return i;
}

double predict_tree(const RegressionTree& tree, std::span<const double> x) {
  return tree.nodes()[tree.leaf_index(x)].value;
}

double criterion(std::span<const std::size_t> node_samples, std::size_t feature, double threshold,
                 const Dataset& ds) {
  if (node_samples.empty()) throw std::invalid_argument("criterion: empty node");
  if (feature >= ds.dims()) throw std::invalid_argument("criterion: feature out of range");
  double sum = 0.0, sum_l = 0.0, sum_r = 0.0;
  std::size_t n_l = 0, n_r = 0;
  for (std::size_t i : node_samples) {
    const double y = ds.target(i);
    sum += y;
    if (ds.features()(i, feature) < threshold) {
      sum_l += y;
      ++n_l;
    } else {
      sum_r += y;
      ++n_r;
    }
  }
  if (n_l == 0 || n_r == 0) throw std::invalid_argument("criterion: threshold outside the node's sample range");
  const double n = static_cast<double>(node_samples.size());
  const double mean = sum / n;
  const double mean_l = sum_l / static_cast<double>(n_l);
  const double mean_r = sum_r / static_cast<double>(n_r);
  double before = 0.0, after = 0.0;
  for (std::size_t i : node_samples) {
    const double y = ds.target(i);
    const double fit = ds.features()(i, feature) < threshold ? mean_l : mean_r;
    before += (y - mean) * (y - mean);
    after += (y - fit) * (y - fit);
  }
  return before / n - after / n;
}

namespace {

// Cuts whose gain does not exceed this fraction of the node variance are
// treated as zero-gain rounding noise.
constexpr double kRelativeGainFloor = 1e-12;
constexpr double kRelativeTie = 1e-12;

double node_variance(std::span<const std::size_t> samples, const Dataset& ds) {
  double sum = 0.0;
  for (std::size_t i : samples) sum += ds.target(i);
  const double mean = sum / static_cast<double>(samples.size());
  double ss = 0.0;
  for (std::size_t i : samples) ss += (ds.target(i) - mean) * (ds.target(i) - mean);
  return ss / static_cast<double>(samples.size());
}

double midpoint(double a, double b) {
  double m = a + (b - a) / 2.0;
  // Adjacent doubles: fall back to b so that a still routes left.
  if (!(m > a)) m = b;
  return m;
}

}  // namespace

std::optional<Split> best_cut(std::span<const std::size_t> node_samples, std::span<const std::size_t> features,
                              const Dataset& ds) {
  if (features.empty()) throw std::invalid_argument("best_cut: empty feature subset");
  const std::size_t n = node_samples.size();
  if (n < 2) return std::nullopt;

  const double y0 = ds.target(node_samples[0]);
  if (std::all_of(node_samples.begin(), node_samples.end(), [&](std::size_t i) { return ds.target(i) == y0; }))
    return std::nullopt;
  const double variance = node_variance(node_samples, ds);
  const double floor = kRelativeGainFloor * variance;
  const double tie = kRelativeTie * variance;

  std::vector<std::size_t> order(features.begin(), features.end());
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());

  std::optional<Split> best;
  std::vector<std::pair<double, double>> xy(n);
  const double nn = static_cast<double>(n);
  for (std::size_t f : order) {
    if (f >= ds.dims()) throw std::invalid_argument("best_cut: feature out of range");
    for (std::size_t k = 0; k < n; ++k) xy[k] = {ds.features()(node_samples[k], f), ds.target(node_samples[k])};
    std::sort(xy.begin(), xy.end());
    double total = 0.0;
    for (const auto& p : xy) total += p.second;
    double left = 0.0;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      left += xy[k].second;
      if (!(xy[k].first < xy[k + 1].first)) continue;
      const double n_l = static_cast<double>(k + 1);
      const double n_r = nn - n_l;
      const double diff = left / n_l - (total - left) / n_r;
      // Between-group form of the before/after variance difference.
      const double gain = n_l * n_r * diff * diff / (nn * nn);
      // Cuts inducing the same partition can differ by rounding alone; they
      // count as ties so the lowest feature and threshold win.
      if (!best || gain > best->gain + tie) best = Split{f, midpoint(xy[k].first, xy[k + 1].first), gain};
    }
  }
  if (!best || !(best->gain > floor)) return std::nullopt;
  return best;
}

namespace {

class TreeGrower {
 public:
  TreeGrower(const Dataset& ds, const GrowOptions& opt) : ds_(ds), opt_(opt), rng_(opt.seed) {}

  std::vector<std::size_t> draw_features() {
    const std::size_t d = ds_.dims();
    if (opt_.mtry == 0 || opt_.mtry >= d) {
      std::vector<std::size_t> all(d);
      for (std::size_t j = 0; j < d; ++j) all[j] = j;
      return all;
    }
    auto picked = rng_.sample_without_replacement(d, opt_.mtry);
    std::sort(picked.begin(), picked.end());
    return picked;
  }

  TreeNode make_leaf(std::span<const std::size_t> samples, std::size_t depth) const {
    TreeNode leaf;
    leaf.is_leaf = true;
    leaf.count = samples.size();
    leaf.depth = depth;
    double sum = 0.0;
    for (std::size_t i : samples) sum += ds_.target(i);
    leaf.value = samples.empty() ? 0.0 : sum / static_cast<double>(samples.size());  // 0/0 = 0
    return leaf;
  }

  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> partition(std::span<const std::size_t> samples,
                                                                         const Split& s) const {
    std::vector<std::size_t> l, r;
    for (std::size_t i : samples) (ds_.features()(i, s.feature) < s.threshold ? l : r).push_back(i);
    return {std::move(l), std::move(r)};
  }

  std::optional<Split> candidate(std::span<const std::size_t> samples) {
    if (samples.size() < 2) return std::nullopt;
    auto features = draw_features();
    return best_cut(samples, features, ds_);
  }

  std::size_t grow_depth_first(std::span<const std::size_t> samples, std::size_t depth, std::size_t limit) {
    std::optional<Split> cut;
    if (depth < limit) cut = candidate(samples);
    const std::size_t pos = arena_.size();
    if (!cut) {
      arena_.push_back(make_leaf(samples, depth));
      return pos;
    }
    TreeNode node;
    node.is_leaf = false;
    node.feature = cut->feature;
    node.threshold = cut->threshold;
    node.count = samples.size();
    node.depth = depth;
    arena_.push_back(node);
    auto [l, r] = partition(samples, *cut);
    const std::size_t left = grow_depth_first(l, depth + 1, limit);
    const std::size_t right = grow_depth_first(r, depth + 1, limit);
    arena_[pos].left = left;
    arena_[pos].right = right;
    return pos;
  }

  void grow_best_first(std::span<const std::size_t> samples, std::size_t max_leaves) {
    struct Frontier {
      std::size_t node;
      std::vector<std::size_t> samples;
      std::optional<Split> cut;
    };
    std::vector<Frontier> frontier;
    arena_.push_back(make_leaf(samples, 0));
    frontier.push_back({0, {samples.begin(), samples.end()}, max_leaves > 1 ? candidate(samples) : std::nullopt});
    std::size_t leaves = 1;
    while (leaves < max_leaves) {
      // Largest gain first; earlier-created leaves win ties.
      std::size_t pick = frontier.size();
      for (std::size_t k = 0; k < frontier.size(); ++k) {
        if (!frontier[k].cut) continue;
        if (pick == frontier.size() || frontier[k].cut->gain > frontier[pick].cut->gain) pick = k;
      }
      if (pick == frontier.size()) break;
      Frontier f = std::move(frontier[pick]);
      frontier.erase(frontier.begin() + static_cast<std::ptrdiff_t>(pick));
      const std::size_t depth = arena_[f.node].depth;
      auto [l, r] = partition(f.samples, *f.cut);
      TreeNode& node = arena_[f.node];
      node.is_leaf = false;
      node.feature = f.cut->feature;
      node.threshold = f.cut->threshold;
      node.value = 0.0;
      const std::size_t left = arena_.size();
      arena_.push_back(make_leaf(l, depth + 1));
      const std::size_t right = arena_.size();
      arena_.push_back(make_leaf(r, depth + 1));
      arena_[f.node].left = left;
      arena_[f.node].right = right;
      ++leaves;
      const bool more = leaves < max_leaves;
      auto lcut = more ? candidate(l) : std::nullopt;
      auto rcut = more ? candidate(r) : std::nullopt;
      frontier.push_back({left, std::move(l), lcut});
      frontier.push_back({right, std::move(r), rcut});
    }
  }

  std::vector<TreeNode>& arena() { return arena_; }

 private:
  const Dataset& ds_;
  GrowOptions opt_;
  Rng rng_;
  std::vector<TreeNode> arena_;
};

}  // namespace

RegressionTree grow_tree(std::span<const std::size_t> samples, const Dataset& ds, const GrowOptions& options) {
  if (samples.empty()) throw std::invalid_argument("grow_tree: no training samples");
  TreeGrower grower(ds, options);
  if (const auto* md = std::get_if<MaxDepth>(&options.stop)) {
    grower.grow_depth_first(samples, 0, md->depth);
  } else {
    const auto& el = std::get<ExactLeaves>(options.stop);
    if (el.leaves < 1) throw std::invalid_argument("grow_tree: ExactLeaves needs at least one leaf");
    grower.grow_best_first(samples, el.leaves);
  }
  return RegressionTree(grower.arena(), 0, ds.dims());
}

void write_tree(const RegressionTree& tree, std::ostream& out) {
  out << "nrf-tree 1\n";
  out << "dims " << tree.dims() << " nodes " << tree.nodes().size() << '\n';
  for (std::size_t i = 0; i < tree.nodes().size(); ++i) {
    const TreeNode& n = tree.nodes()[i];
    if (n.is_leaf) {
      out << i << " leaf " << format_double(n.value) << ' ' << n.count << ' ' << n.depth << '\n';
    } else {
      out << i << " split " << n.feature << ' ' << format_double(n.threshold) << ' ' << n.left << ' ' << n.right
          << ' ' << n.count << ' ' << n.depth << '\n';
    }
  }
}

namespace {

[[noreturn]] void tree_format_error(const std::string& what) { throw DataError("tree file: " + what); }

}  // namespace

RegressionTree read_tree(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "nrf-tree" || version != 1) tree_format_error("bad header");
  std::string kw1, kw2;
  std::size_t dims = 0, count = 0;
  if (!(in >> kw1 >> dims >> kw2 >> count) || kw1 != "dims" || kw2 != "nodes" || count == 0)
    tree_format_error("bad size line");
  std::vector<TreeNode> arena(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t id = 0;
    std::string kind;
    if (!(in >> id >> kind) || id != k) tree_format_error("bad node id at line " + std::to_string(k + 3));
    TreeNode& n = arena[k];
    std::string num;
    if (kind == "leaf") {
      n.is_leaf = true;
      if (!(in >> num >> n.count >> n.depth)) tree_format_error("bad leaf line");
      auto v = parse_double(num);
      if (!v) tree_format_error("bad leaf value '" + num + "'");
      n.value = *v;
    } else if (kind == "split") {
      n.is_leaf = false;
      if (!(in >> n.feature >> num >> n.left >> n.right >> n.count >> n.depth)) tree_format_error("bad split line");
      auto v = parse_double(num);
      if (!v) tree_format_error("bad threshold '" + num + "'");
      n.threshold = *v;
      if (n.left >= count || n.right >= count) tree_format_error("child out of range");
    } else {
      tree_format_error("unknown node kind '" + kind + "'");
    }
  }
  return RegressionTree(arena, 0, dims);
}

void save_tree(const RegressionTree& tree, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_tree(tree, out);
}

RegressionTree load_tree(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_tree(in);
}

}  // namespace nrf
