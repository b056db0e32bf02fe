#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nrf/matrix.hpp"

namespace nrf {

/// Raised for unreadable or unusable input data. The CLI maps it to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Immutable table of numeric feature rows plus a numeric target.
///
/// Invariants (checked on construction): n >= 2, d >= 1, every entry finite,
/// target length equal to the row count, one name per feature column.
class Dataset {
 public:
  Dataset(Matrix features, std::vector<double> target, std::vector<std::string> feature_names,
          std::string target_name = "target");

  std::size_t rows() const { return features_.rows(); }
  std::size_t dims() const { return features_.cols(); }

  const Matrix& features() const { return features_; }
  std::span<const double> row(std::size_t i) const { return features_.row(i); }
  std::span<const double> target() const { return target_; }
  double target(std::size_t i) const { return target_[i]; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::string& target_name() const { return target_name_; }

  /// Largest |y| over the stored targets.
  double max_abs_target() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  Matrix features_;
  std::vector<double> target_;
  std::vector<std::string> feature_names_;
  std::string target_name_;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;

  friend bool operator==(const SplitIndices&, const SplitIndices&) = default;
};

/// What load_csv discarded.
struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t rows_dropped = 0;
  std::vector<std::string> columns_dropped;
};

/// Loads a comma-separated file with a header row.
///
/// A column is kept when more than half of its non-empty cells parse as
/// finite numbers; other columns are dropped wholesale. Rows with an empty or
/// non-numeric cell in any kept column are then dropped. The target column
/// defaults to the last header entry.
Dataset load_csv(const std::filesystem::path& path, std::optional<std::string> target_column = std::nullopt,
                 LoadReport* report = nullptr);

/// Writes features then target with a header row; load_csv reads it back unchanged.
void write_csv(const Dataset& ds, const std::filesystem::path& path);

/// Seeded uniform permutation cut 50/25/25: floor(n/2) train, floor(n/4) val, rest test.
SplitIndices split_dataset(const Dataset& ds, std::uint64_t seed);
SplitIndices split_indices(std::size_t n, std::uint64_t seed);

/// y = sum_j sin(20 x_j - 10) + N(0, sigma^2), x uniform on [0,1]^d.
Dataset synth_sine(std::size_t n, std::size_t d, double sigma, std::uint64_t seed);

/// Noise-free sine target, exposed for tests.
double sine_signal(std::span<const double> x);

/// Copies selected rows into a new dataset (indices may repeat).
Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

}  // namespace nrf
