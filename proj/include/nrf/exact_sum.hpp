#pragma once

#include <span>
#include <vector>

namespace nrf {

/// Nonoverlapping partials whose exact sum equals the exact sum of `values`
/// (Shewchuk's grow-expansion, as used by Python's math.fsum).
std::vector<double> exact_partials(std::span<const double> values);

/// Correctly rounded sum of `values`.
double fsum(std::span<const double> values);

}  // namespace nrf
