#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "nrf/forest.hpp"
#include "nrf/train.hpp"

namespace nrf {

enum class ExperimentMode {
  kBenchmark,    ///< one dataset, `repeats` random splits
  kAsymptotics,  ///< fresh synthetic data per training size and repeat
};

/// Known model names, in report order.
const std::vector<std::string>& known_models();

struct ExperimentConfig {
  ExperimentMode mode = ExperimentMode::kBenchmark;
  /// CSV path, or "synth" for the sine benchmark.
  std::string dataset = "synth";
  std::string target;  // empty selects the last column
  std::size_t synth_n = 1000;
  std::size_t synth_d = 2;
  double synth_sigma = 0.01;
  std::size_t repeats = 10;
  /// Repeat r splits with seed + r.
  std::uint64_t seed = 0;
  ForestParams forest;
  double gamma1 = 100.0;
  double gamma2 = 1.0;
  TrainConfig train;
  std::vector<std::string> models = known_models();
  /// Training-set sizes for asymptotics mode.
  std::vector<std::size_t> sizes = {512, 2048, 8192};
  /// Repeats run concurrently when > 1; results keep repeat order.
  std::size_t threads = 1;

  /// Throws std::invalid_argument on unknown models or out-of-range values.
  void validate() const;
};

/// Applies one `key = value` setting. Throws std::invalid_argument for unknown
/// keys or unparsable values.
void set_config_value(ExperimentConfig& config, std::string_view key, std::string_view value);

/// Flat `key = value` lines; `#` starts a comment.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every key with its current value, in parse_config syntax.
void write_config(const ExperimentConfig& config, std::ostream& out);

struct RunRecord {
  std::string model;
  std::size_t n_train = 0;
  std::size_t repeat = 0;
  double test_rmse = 0.0;
  double val_rmse = 0.0;
  double rf_val_rmse = 0.0;
  bool fallback = false;
  double seconds = 0.0;  // wall time, not part of the deterministic report
};

struct CurveSet {
  std::string model;
  std::size_t n_train = 0;
  std::size_t repeat = 0;
  std::vector<EpochRecord> history;
  double rf_val_rmse = 0.0;
};

struct Aggregate {
  std::string model;
  std::size_t n_train = 0;
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single repeat
};

struct ExperimentReport {
  std::string dataset;
  std::vector<RunRecord> records;
  std::vector<CurveSet> curves;

  /// Test-RMSE mean and std per (model, n_train), in first-appearance order.
  std::vector<Aggregate> aggregates() const;
};

/// Runs the whole protocol. Progress lines go to `log` when given.
ExperimentReport run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

enum class ReportFormat { kCsv, kMarkdown };
ReportFormat parse_report_format(std::string_view text);

/// CSV: one detail row per record, then one aggregate row per group.
/// Markdown: one row per training size, "mean (std)" per model.
/// Throws std::invalid_argument for an empty report.
void write_report(const ExperimentReport& report, ReportFormat format, std::ostream& out);
void emit_report(const ExperimentReport& report, ReportFormat format, const std::filesystem::path& path);

/// Long format model,n_train,repeat,epoch,split,rmse with split in
/// {train, val, rf_val}.
void write_curves(const ExperimentReport& report, std::ostream& out);
void emit_curves(const ExperimentReport& report, const std::filesystem::path& path);

/// model,n_train,repeat,seconds
void emit_timing(const ExperimentReport& report, const std::filesystem::path& path);

/// Reads the detail rows of a CSV report back.
ExperimentReport read_report_csv(const std::filesystem::path& path);

}  // namespace nrf
