#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "nrf/data.hpp"
#include "nrf/matrix.hpp"

namespace nrf {

enum class Activation : std::uint8_t { kTanh, kIdentity };

/// Rectangle of a weight matrix: rows [row, row + rows), cols [col, col + cols).
struct Block {
  std::size_t row = 0;
  std::size_t rows = 0;
  std::size_t col = 0;
  std::size_t cols = 0;

  friend bool operator==(const Block&, const Block&) = default;
};

/// Fully connected layer computing act(contrast * (x W + b)).
struct Layer {
  Matrix weights;  // inputs x outputs
  std::vector<double> bias;
  // Tree-derived connections, row-major like `weights`; empty when the layer
  // has no structure (plain MLP layers).
  std::vector<std::uint8_t> mask;
  // Rectangles covering every entry of `mask`. While `block_sparse` is set the
  // weights outside them are zero, so the engine skips them.
  std::vector<Block> blocks;
  bool block_sparse = false;
  double contrast = 1.0;
  Activation activation = Activation::kTanh;

  std::size_t inputs() const { return weights.rows(); }
  std::size_t outputs() const { return weights.cols(); }
  bool has_mask() const { return !mask.empty(); }

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Feed-forward regression network: tanh hidden layers, one linear output.
struct Network {
  std::vector<Layer> layers;
  // Exact remainder of the output offset left over by rounding it to a
  // double, as nonoverlapping partials. Only hard evaluation reads it.
  std::vector<double> output_residual;

  std::size_t dims() const { return layers.empty() ? 0 : layers.front().inputs(); }
  std::size_t parameter_count() const;

  friend bool operator==(const Network&, const Network&) = default;
};

/// Throws std::invalid_argument unless the layer shapes chain and end in one linear output.
void validate(const Network& net);

/// Activations recorded during one forward pass.
struct Trace {
  std::vector<std::vector<double>> pre;   // per layer, before the activation
  std::vector<std::vector<double>> post;  // per layer, after it
  double output = 0.0;
};

/// Hidden layers use tau(u) = 2*[u >= 0] - 1 in place of tanh. The output
/// sum is correctly rounded, including output_residual.
double forward_hard(const Network& net, std::span<const double> x);
Trace forward_hard_trace(const Network& net, std::span<const double> x);

/// Reference single-sample evaluation with std::tanh.
double forward_tanh(const Network& net, std::span<const double> x);
Trace forward_tanh_trace(const Network& net, std::span<const double> x);

/// Per-layer gradient storage shaped like a Network.
struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> bias;

  static Gradients zeros_like(const Network& net);
};

/// Batched evaluation and backpropagation on the active kernel table.
class Engine {
 public:
  /// Evaluates rows [0, batch) of x (batch x d, row-major).
  void forward(const Network& net, const double* x, std::size_t batch);
  std::span<const double> outputs() const;

  /// Gradient of mean((f - y)^2) over the last forward batch. With `sparse`,
  /// entries outside the layer masks are zero and block-sparse layers are
  /// only differentiated inside their blocks.
  void backward(const Network& net, const double* y, Gradients& grad, bool sparse);

  /// Predictions for the selected rows of ds.
  std::vector<double> predict(const Network& net, const Dataset& ds, std::span<const std::size_t> rows);
  double rmse(const Network& net, const Dataset& ds, std::span<const std::size_t> rows);

 private:
  std::size_t batch_ = 0;
  std::vector<Matrix> act_;    // act_[0] is the input batch
  std::vector<Matrix> delta_;  // dLoss/dpre for each layer
};

/// Text weight format, bit-exact round trip:
///
///   nrf-network 1
///   layers <L> residual <r> <values...>
///   layer <in> <out> <tanh|identity> <contrast> <block_sparse 0|1>
///   bias <values...>
///   <in rows of out weights>
///   mask none | mask followed by <in rows of 0/1 digits>
///   blocks <count> then one "<row> <rows> <col> <cols>" line each
void write_network(const Network& net, std::ostream& out);
Network read_network(std::istream& in);

}  // namespace nrf
