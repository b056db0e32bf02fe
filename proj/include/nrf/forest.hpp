#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nrf/cart.hpp"
#include "nrf/data.hpp"

namespace nrf {

enum class ResampleMode {
  kNone,       ///< every tree sees the full training sample
  kBootstrap,  ///< n draws with replacement
  kSubsample,  ///< a_n distinct draws without replacement
};

struct ForestParams {
  std::size_t trees = 30;
  ResampleMode resample = ResampleMode::kBootstrap;
  /// a_n for kSubsample; 0 selects ceil(0.632 n).
  std::size_t subsample_size = 0;
  /// Features drawn per node; 0 selects max(1, floor(d/3)).
  std::size_t mtry = 0;
  StoppingRule stop = MaxDepth{6};
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when the parameters are unusable for d features and n samples.
  void validate(std::size_t d, std::size_t n) const;
  std::size_t effective_mtry(std::size_t d) const;
  std::size_t effective_subsample(std::size_t n) const;
};

struct ForestModel {
  std::vector<RegressionTree> trees;
  ForestParams params;
  /// Row indices each tree was grown on, in draw order.
  std::vector<std::vector<std::size_t>> resamples;

  std::size_t dims() const { return trees.empty() ? 0 : trees.front().dims(); }
};

ForestModel fit_forest(const Dataset& ds, std::span<const std::size_t> train_indices, const ForestParams& params);

/// Mean of the tree predictions, summed in tree order then divided by M.
double predict_forest(const ForestModel& model, std::span<const double> x);

/// RMSE of the forest over the given rows.
double forest_rmse(const ForestModel& model, const Dataset& ds, std::span<const std::size_t> rows);

/// Writes `forest.manifest` plus one `tree_NNN.txt` per tree into `dir`.
void save_forest(const ForestModel& model, const std::filesystem::path& dir);
ForestModel load_forest(const std::filesystem::path& dir);

const char* to_string(ResampleMode mode);
ResampleMode parse_resample_mode(std::string_view text);

}  // namespace nrf
