#include "nrf/netcompile.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "nrf/exact_sum.hpp"

namespace nrf {

std::size_t NetworkParams::max_leaves() const {
  std::size_t k = 1;  // a single-leaf tree has no leaf units but still counts as one leaf
  for (const TreeSegment& s : segments) k = std::max(k, s.leaves);
  return k;
}

namespace {

Layer make_layer(std::size_t in, std::size_t out, double contrast, Activation act) {
  Layer l;
  l.weights = Matrix(in, out);
  l.bias.assign(out, 0.0);
  l.contrast = contrast;
  l.activation = act;
  return l;
}

// Output offset sum(w) rounded, plus the exact rounding remainder.
void set_output_offset(Network& net, std::span<const double> w) {
  std::vector<double> terms(w.begin(), w.end());
  const double b = fsum(terms);
  net.layers[2].bias[0] = b;
  terms.push_back(-b);
  net.output_residual = exact_partials(terms);
  std::erase(net.output_residual, 0.0);
}

}  // namespace

NetworkParams compile_tree(const RegressionTree& tree, double gamma1, double gamma2) {
  if (!(gamma1 > 0.0) || !(gamma2 > 0.0)) throw std::invalid_argument("contrasts must be positive");
  const auto& nodes = tree.nodes();
  const std::size_t d = tree.dims();
  const std::size_t k = tree.leaf_count();

  NetworkParams p;
  if (k == 1) {
    p.net.layers.push_back(make_layer(d, 0, gamma1, Activation::kTanh));
    p.net.layers.push_back(make_layer(0, 0, gamma2, Activation::kTanh));
    p.net.layers.push_back(make_layer(0, 1, 1.0, Activation::kIdentity));
    p.net.layers[2].bias[0] = nodes[0].value;
    p.segments.push_back({0, 0, 0, 0});
    return p;
  }

  const std::size_t h = k - 1;
  Layer l1 = make_layer(d, h, gamma1, Activation::kTanh);
  Layer l2 = make_layer(h, k, gamma2, Activation::kTanh);
  Layer out = make_layer(k, 1, 1.0, Activation::kIdentity);
  l1.mask.assign(d * h, 0);
  l2.mask.assign(h * k, 0);

  // Pre-order walk carrying the (hyperplane, side) path of each node.
  std::vector<std::size_t> unit(nodes.size());
  std::size_t next_h = 0, next_leaf = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) unit[i] = nodes[i].is_leaf ? next_leaf++ : next_h++;

  struct Step {
    std::size_t hyperplane;
    bool right;
  };
  struct Frame {
    std::size_t node;
    std::vector<Step> path;
  };
  std::vector<double> half_means(k);
  std::vector<Frame> stack{{0, {}}};
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    const TreeNode& n = nodes[f.node];
    if (n.is_leaf) {
      const std::size_t leaf = unit[f.node];
      for (const Step& s : f.path) {
        l2.weights(s.hyperplane, leaf) = s.right ? 1.0 : -1.0;
        l2.mask[s.hyperplane * k + leaf] = 1;
      }
      l2.bias[leaf] = -static_cast<double>(f.path.size()) + 0.5;
      half_means[leaf] = n.value / 2.0;
      out.weights(leaf, 0) = half_means[leaf];
      continue;
    }
    const std::size_t hp = unit[f.node];
    l1.weights(n.feature, hp) = 1.0;
    l1.mask[n.feature * h + hp] = 1;
    l1.bias[hp] = -n.threshold;
    Frame right{n.right, f.path};
    right.path.push_back({hp, true});
    f.path.push_back({hp, false});
    stack.push_back(std::move(right));
    stack.push_back({n.left, std::move(f.path)});
  }

  l1.blocks = {{0, d, 0, h}};
  l2.blocks = {{0, h, 0, k}};
  l1.block_sparse = l2.block_sparse = true;
  p.net.layers = {std::move(l1), std::move(l2), std::move(out)};
  set_output_offset(p.net, half_means);
  p.segments.push_back({0, h, 0, k});
  return p;
}

BigNetworkParams concat_networks(std::span<const NetworkParams> nets) {
  if (nets.empty()) throw std::invalid_argument("concat_networks: no networks");
  const std::size_t d = nets[0].net.dims();
  const double g1 = nets[0].gamma1(), g2 = nets[0].gamma2();
  std::size_t h = 0, k = 0;
  for (const NetworkParams& p : nets) {
    if (p.net.layers.size() != 3 || p.segments.size() != 1)
      throw std::invalid_argument("concat_networks: inputs must be single compiled trees");
    if (p.net.dims() != d) throw std::invalid_argument("concat_networks: input dimensions differ");
    if (p.gamma1() != g1 || p.gamma2() != g2) throw std::invalid_argument("concat_networks: contrasts differ");
    h += p.W2().rows();
    k += p.W2().cols();
  }
  const double m = static_cast<double>(nets.size());

  BigNetworkParams big;
  Layer l1 = make_layer(d, h, g1, Activation::kTanh);
  Layer l2 = make_layer(h, k, g2, Activation::kTanh);
  Layer out = make_layer(k, 1, 1.0, Activation::kIdentity);
  l1.mask.assign(d * h, 0);
  l2.mask.assign(h * k, 0);
  l1.block_sparse = l2.block_sparse = true;

  std::vector<double> offsets;
  std::size_t ho = 0, ko = 0;
  for (const NetworkParams& p : nets) {
    const Layer& s1 = p.net.layers[0];
    const Layer& s2 = p.net.layers[1];
    const std::size_t sh = s2.inputs(), sk = s2.outputs();
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t c = 0; c < sh; ++c) {
        l1.weights(j, ho + c) = s1.weights(j, c);
        l1.mask[j * h + ho + c] = s1.has_mask() ? s1.mask[j * sh + c] : 1;
      }
    std::copy(s1.bias.begin(), s1.bias.end(), l1.bias.begin() + static_cast<std::ptrdiff_t>(ho));
    for (std::size_t r = 0; r < sh; ++r)
      for (std::size_t c = 0; c < sk; ++c) {
        l2.weights(ho + r, ko + c) = s2.weights(r, c);
        l2.mask[(ho + r) * k + ko + c] = s2.has_mask() ? s2.mask[r * sk + c] : 1;
      }
    std::copy(s2.bias.begin(), s2.bias.end(), l2.bias.begin() + static_cast<std::ptrdiff_t>(ko));
    for (std::size_t c = 0; c < sk; ++c) out.weights(ko + c, 0) = p.net.layers[2].weights(c, 0) / m;
    offsets.push_back(p.b_out());
    if (sh > 0) l1.blocks.push_back({0, d, ho, sh});
    if (sh > 0 && sk > 0) l2.blocks.push_back({ho, sh, ko, sk});
    big.segments.push_back({ho, sh, ko, sk});
    ho += sh;
    ko += sk;
  }
  out.bias[0] = fsum(offsets) / m;
  big.net.layers = {std::move(l1), std::move(l2), std::move(out)};
  return big;
}

ConstraintReport check_constraint(const NetworkParams& params, double c) {
  double w2 = 0.0, b2 = 0.0, wout = 0.0;
  for (double v : params.W2().values()) w2 = std::max(w2, std::fabs(v));
  for (double v : params.b2()) b2 = std::max(b2, std::fabs(v));
  for (double v : params.W_out()) wout += std::fabs(v);
  ConstraintReport r;
  r.lhs = w2 + b2 + wout + std::fabs(params.b_out());
  r.budget = c * static_cast<double>(params.max_leaves());
  r.margin = r.budget - r.lhs;
  r.ok = r.lhs <= r.budget;
  return r;
}

double default_constraint_constant(double max_abs_target) { return 1.5 + max_abs_target; }

void write_params(const NetworkParams& params, std::ostream& out) {
  write_network(params.net, out);
  out << "segments " << params.segments.size() << '\n';
  for (const TreeSegment& s : params.segments)
    out << s.hyperplane_offset << ' ' << s.hyperplanes << ' ' << s.leaf_offset << ' ' << s.leaves << '\n';
}

NetworkParams read_params(std::istream& in) {
  NetworkParams p;
  p.net = read_network(in);
  if (p.net.layers.size() != 3) throw DataError("network file: compiled networks have three layers");
  std::string kw;
  std::size_t n = 0;
  if (!(in >> kw >> n) || kw != "segments") throw DataError("network file: missing segments");
  p.segments.resize(n);
  for (TreeSegment& s : p.segments)
    if (!(in >> s.hyperplane_offset >> s.hyperplanes >> s.leaf_offset >> s.leaves))
      throw DataError("network file: bad segment line");
  return p;
}

void save_network(const NetworkParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_params(params, out);
  if (!out) throw DataError("write failed: " + path.string());
}

NetworkParams load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_params(in);
}

}  // namespace nrf
