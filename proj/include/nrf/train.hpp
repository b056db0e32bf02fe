#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "nrf/data.hpp"
#include "nrf/forest.hpp"
#include "nrf/netcompile.hpp"
#include "nrf/network.hpp"

namespace nrf {

enum class TrainMode {
  kSparse,  ///< only tree-derived connections move
  kFull,    ///< every connection moves; non-tree weights start at zero
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  TrainMode mode = TrainMode::kSparse;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

/// Gradient of the batch-mean squared error. Sparse mode zeroes every entry
/// outside the layer masks.
Gradients gradients(const Network& net, const Matrix& x, std::span<const double> y, TrainMode mode);

struct AdamState {
  std::vector<Matrix> m_weights, v_weights;
  std::vector<std::vector<double>> m_bias, v_bias;
  std::size_t step = 0;

  static AdamState zeros_like(const Network& net);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam step. In sparse mode block-sparse layers are only
/// updated inside their blocks. Throws std::invalid_argument on shape mismatch.
void adam_step(AdamState& state, Network& net, const Gradients& grad, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_rmse = 0.0;
  double val_rmse = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainResult {
  Network best;
  std::size_t best_epoch = 0;
  double best_val_rmse = 0.0;
  /// Epoch 0 is the untrained network; epochs + 1 entries in total.
  std::vector<EpochRecord> history;
};

/// Minibatch Adam with a fresh shuffle every epoch. Returns the snapshot with
/// the lowest validation RMSE (earliest on ties).
TrainResult train_network(const Network& initial, const Dataset& ds, std::span<const std::size_t> train_rows,
                          std::span<const std::size_t> val_rows, const TrainConfig& config);

enum class Method {
  kIndependent = 1,  ///< one network per tree, averaged
  kJoint = 2,        ///< all trees in one network
};

struct NrfModel {
  Method method = Method::kIndependent;
  TrainMode mode = TrainMode::kSparse;
  TrainConfig config;
  /// Method 1: one trained network per tree. Method 2: the joint network.
  std::vector<NetworkParams> members;
  /// Method 1: member m predicts with tree m of the forest instead.
  std::vector<bool> member_fallback;
  /// Predictions are delegated to the forest.
  bool fallback_to_rf = false;
  ForestModel forest;
  std::vector<std::vector<EpochRecord>> histories;
  double val_rmse = 0.0;
  double forest_val_rmse = 0.0;
};

/// Trains one network per tree on the same split. A member whose validation
/// RMSE never beats its own tree's is replaced by that tree; if the averaged
/// model still loses to the forest on validation, the forest is used as is.
NrfModel fit_nrf_method1(const ForestModel& forest, const Dataset& ds, const SplitIndices& split, double gamma1,
                         double gamma2, const TrainConfig& config, std::size_t threads = 1);

/// Trains the concatenated network once; falls back to the forest if no epoch
/// beats it on validation.
NrfModel fit_nrf_method2(const ForestModel& forest, const Dataset& ds, const SplitIndices& split, double gamma1,
                         double gamma2, const TrainConfig& config);

double predict_nrf(const NrfModel& model, std::span<const double> x);
std::vector<double> predict_nrf(const NrfModel& model, const Dataset& ds, std::span<const std::size_t> rows);
double nrf_rmse(const NrfModel& model, const Dataset& ds, std::span<const std::size_t> rows);

/// RMSE of arbitrary predictions against the selected targets.
double rmse(std::span<const double> predictions, const Dataset& ds, std::span<const std::size_t> rows);

/// CSV with header epoch,train_rmse,val_rmse.
void write_history_csv(std::span<const EpochRecord> history, std::ostream& out);

/// Directory with model.manifest, member_NNN.net, history_NNN.csv and forest/.
void save_model(const NrfModel& model, const std::filesystem::path& dir);
NrfModel load_model(const std::filesystem::path& dir);

const char* to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view text);

}  // namespace nrf
