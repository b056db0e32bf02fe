#include "nrf/baselines.hpp"

#include <algorithm>
#include <stdexcept>

#include "nrf/rng.hpp"

namespace nrf {

void MlpSpec::validate() const {
  if (widths.empty() || widths.size() > 3) throw std::invalid_argument("mlp: need 1 to 3 hidden layers");
  if (contrasts.size() != widths.size()) throw std::invalid_argument("mlp: one contrast per hidden layer");
  for (std::size_t w : widths)
    if (w < 1) throw std::invalid_argument("mlp: hidden widths must be positive");
  for (double c : contrasts)
    if (!(c > 0.0)) throw std::invalid_argument("mlp: contrasts must be positive");
}

MlpSpec mlp_from_forest_shape(const ForestModel& forest, std::size_t depth, double gamma1, double gamma2,
                              std::uint64_t seed) {
  if (depth < 1 || depth > 3) throw std::invalid_argument("mlp: depth must be 1, 2 or 3");
  std::size_t internal = 0, leaves = 0;
  for (const RegressionTree& t : forest.trees) {
    // A single-leaf tree compiles to no units at all.
    if (t.leaf_count() < 2) continue;
    internal += t.internal_count();
    leaves += t.leaf_count();
  }
  MlpSpec spec;
  spec.seed = seed;
  // A forest of single-leaf trees would give empty layers; keep one unit.
  internal = std::max<std::size_t>(internal, 1);
  leaves = std::max<std::size_t>(leaves, 1);
  spec.widths = {internal, leaves, leaves};
  spec.widths.resize(depth);
  spec.contrasts.assign(depth, gamma2);
  spec.contrasts[0] = gamma1;
  return spec;
}

Network make_mlp(const MlpSpec& spec, std::size_t d) {
  spec.validate();
  if (d < 1) throw std::invalid_argument("mlp: input dimension must be positive");
  Rng rng(derive_seed(spec.seed, seed_stream::kInit));
  Network net;
  std::size_t in = d;
  for (std::size_t i = 0; i <= spec.widths.size(); ++i) {
    const bool last = i == spec.widths.size();
    const std::size_t out = last ? 1 : spec.widths[i];
    Layer l;
    l.weights = Matrix(in, out);
    for (double& w : l.weights.values()) w = rng.normal();
    l.bias.resize(out);
    for (double& b : l.bias) b = rng.normal();
    l.contrast = last ? 1.0 : spec.contrasts[i];
    l.activation = last ? Activation::kIdentity : Activation::kTanh;
    net.layers.push_back(std::move(l));
    in = out;
  }
  return net;
}

}  // namespace nrf
