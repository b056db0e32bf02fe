#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nrf/forest.hpp"
#include "nrf/network.hpp"

namespace nrf {

/// Plain tanh regression network with 1 to 3 hidden layers.
struct MlpSpec {
  std::vector<std::size_t> widths;
  /// One contrast per hidden layer.
  std::vector<double> contrasts;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on bad depth, zero widths or bad contrasts.
  void validate() const;
};

/// Widths of the joint tree network built from `forest`: sum(K_m - 1) for the
/// first layer, sum(K_m) for the second, and the second width again for a
/// third. Layer 1 uses gamma1, later layers gamma2.
MlpSpec mlp_from_forest_shape(const ForestModel& forest, std::size_t depth, double gamma1, double gamma2,
                              std::uint64_t seed);

/// Network for d inputs with every weight and bias drawn from N(0, 1).
Network make_mlp(const MlpSpec& spec, std::size_t d);

}  // namespace nrf
