#include "nrf/network.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "nrf/exact_sum.hpp"
#include "nrf/kernels/kernels.hpp"
#include "nrf/text_io.hpp"

namespace nrf {

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

void validate(const Network& net) {
  if (net.layers.empty()) throw std::invalid_argument("network has no layers");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& l = net.layers[i];
    if (l.bias.size() != l.outputs()) throw std::invalid_argument("layer bias length mismatch");
    if (l.has_mask() && l.mask.size() != l.weights.size()) throw std::invalid_argument("layer mask shape mismatch");
    if (i > 0 && l.inputs() != net.layers[i - 1].outputs())
      throw std::invalid_argument("layer " + std::to_string(i) + " input width mismatch");
    for (const Block& b : l.blocks)
      if (b.row + b.rows > l.inputs() || b.col + b.cols > l.outputs())
        throw std::invalid_argument("layer block out of range");
    const bool last = i + 1 == net.layers.size();
    if (last != (l.activation == Activation::kIdentity))
      throw std::invalid_argument("only the last layer may be linear");
  }
  if (net.layers.back().outputs() != 1) throw std::invalid_argument("network must have a single output");
}

namespace {

double tau(double u) { return u >= 0.0 ? 1.0 : -1.0; }

// Pre-activation of one layer for one sample, accumulated from the bias in
// input order. For the one-hot first layer of a compiled tree this yields
// exactly x_j - alpha.
void dense_pre(const Layer& l, std::span<const double> in, std::vector<double>& out) {
  out.assign(l.bias.begin(), l.bias.end());
  const std::size_t n = l.outputs();
  for (std::size_t i = 0; i < l.inputs(); ++i) {
    const double xi = in[i];
    const double* w = l.weights.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += xi * w[j];
  }
}

template <typename Act>
Trace run_trace(const Network& net, std::span<const double> x, Act act, bool exact_output) {
  if (x.size() != net.dims()) throw std::invalid_argument("input dimension mismatch");
  Trace t;
  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const Layer& l = net.layers[li];
    std::vector<double> pre;
    if (l.activation == Activation::kIdentity && exact_output) {
      std::vector<double> terms;
      terms.reserve(l.inputs() + 1 + net.output_residual.size());
      for (std::size_t i = 0; i < l.inputs(); ++i) terms.push_back(cur[i] * l.weights(i, 0));
      terms.push_back(l.bias[0]);
      terms.insert(terms.end(), net.output_residual.begin(), net.output_residual.end());
      pre.assign(1, fsum(terms));
    } else {
      dense_pre(l, cur, pre);
    }
    std::vector<double> post(pre.size());
    if (l.activation == Activation::kIdentity)
      post = pre;
    else
      for (std::size_t j = 0; j < pre.size(); ++j) post[j] = act(l.contrast * pre[j]);
    t.pre.push_back(pre);
    t.post.push_back(post);
    cur = std::move(post);
  }
  t.output = cur.at(0);
  return t;
}

}  // namespace

Trace forward_hard_trace(const Network& net, std::span<const double> x) {
  // Contrast is positive, so it never changes the sign seen by tau.
  return run_trace(net, x, tau, true);
}

double forward_hard(const Network& net, std::span<const double> x) { return forward_hard_trace(net, x).output; }

Trace forward_tanh_trace(const Network& net, std::span<const double> x) {
  return run_trace(net, x, [](double u) { return std::tanh(u); }, false);
}

double forward_tanh(const Network& net, std::span<const double> x) { return forward_tanh_trace(net, x).output; }

Gradients Gradients::zeros_like(const Network& net) {
  Gradients g;
  for (const Layer& l : net.layers) {
    g.weights.emplace_back(l.inputs(), l.outputs());
    g.bias.emplace_back(l.outputs(), 0.0);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batched engine

void Engine::forward(const Network& net, const double* x, std::size_t batch) {
  const kernels::KernelTable& k = kernels::active();
  const std::size_t layers = net.layers.size();
  batch_ = batch;
  act_.resize(layers + 1);
  if (act_[0].rows() != batch || act_[0].cols() != net.dims()) act_[0] = Matrix(batch, net.dims());
  std::copy(x, x + batch * net.dims(), act_[0].data());

  for (std::size_t li = 0; li < layers; ++li) {
    const Layer& l = net.layers[li];
    const std::size_t in = l.inputs(), out = l.outputs();
    Matrix& z = act_[li + 1];
    if (z.rows() != batch || z.cols() != out) z = Matrix(batch, out);
    for (std::size_t r = 0; r < batch; ++r) std::copy(l.bias.begin(), l.bias.end(), z.data() + r * out);
    const double* a = act_[li].data();
    const double* w = l.weights.data();
    if (out == 1) {
      // The weight column is contiguous, so treat it as a 1 x in row.
      k.gemm_nt(batch, 1, in, a, in, w, in, z.data(), 1);
    } else if (l.block_sparse) {
      for (const Block& b : l.blocks)
        k.gemm_nn(batch, b.cols, b.rows, a + b.row, in, w + b.row * out + b.col, out, z.data() + b.col, out);
    } else {
      k.gemm_nn(batch, out, in, a, in, w, out, z.data(), out);
    }
    if (l.activation == Activation::kTanh) k.tanh_scaled(z.size(), l.contrast, z.data(), z.data());
  }
}

std::span<const double> Engine::outputs() const { return act_.back().values(); }

void Engine::backward(const Network& net, const double* y, Gradients& grad, bool sparse) {
  const kernels::KernelTable& k = kernels::active();
  const std::size_t layers = net.layers.size();
  const std::size_t batch = batch_;
  delta_.resize(layers);

  Matrix& top = delta_[layers - 1];
  if (top.rows() != batch || top.cols() != 1) top = Matrix(batch, 1);
  const double* f = act_[layers].data();
  const double scale = 2.0 / static_cast<double>(batch);
  for (std::size_t r = 0; r < batch; ++r) top(r, 0) = scale * (f[r] - y[r]);

  for (std::size_t li = layers; li-- > 0;) {
    const Layer& l = net.layers[li];
    const std::size_t in = l.inputs(), out = l.outputs();
    const double* a = act_[li].data();
    const double* d = delta_[li].data();
    double* gw = grad.weights[li].data();
    const bool blocks = sparse && l.block_sparse && out > 1;

    if (blocks) {
      for (const Block& b : l.blocks)
        k.gemm_tn(b.rows, b.cols, batch, a + b.row, in, d + b.col, out, gw + b.row * out + b.col, out);
    } else {
      k.gemm_tn(in, out, batch, a, in, d, out, gw, out);
    }
    if (sparse && l.has_mask()) {
      if (blocks) {
        for (const Block& b : l.blocks)
          for (std::size_t r = b.row; r < b.row + b.rows; ++r)
            for (std::size_t c = b.col; c < b.col + b.cols; ++c)
              if (!l.mask[r * out + c]) gw[r * out + c] = 0.0;
      } else {
        for (std::size_t i = 0; i < l.mask.size(); ++i)
          if (!l.mask[i]) gw[i] = 0.0;
      }
    }
    std::vector<double>& gb = grad.bias[li];
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t r = 0; r < batch; ++r)
      for (std::size_t c = 0; c < out; ++c) gb[c] += d[r * out + c];

    if (li == 0) break;
    Matrix& prev = delta_[li - 1];
    if (prev.rows() != batch || prev.cols() != in) prev = Matrix(batch, in);
    prev.fill(0.0);
    const double* w = l.weights.data();
    if (out == 1) {
      k.gemm_nn(batch, in, 1, d, 1, w, in, prev.data(), in);
    } else if (blocks) {
      for (const Block& b : l.blocks)
        k.gemm_nt(batch, b.rows, b.cols, d + b.col, out, w + b.row * out + b.col, out, prev.data() + b.row, in);
    } else {
      k.gemm_nt(batch, in, out, d, out, w, out, prev.data(), in);
    }
    const Layer& below = net.layers[li - 1];
    k.tanh_backward(prev.size(), below.contrast, act_[li].data(), prev.data());
  }
}

std::vector<double> Engine::predict(const Network& net, const Dataset& ds, std::span<const std::size_t> rows) {
  constexpr std::size_t kChunk = 256;
  const std::size_t d = ds.dims();
  if (d != net.dims()) throw std::invalid_argument("network input dimension does not match the dataset");
  std::vector<double> out;
  out.reserve(rows.size());
  std::vector<double> x;
  for (std::size_t s = 0; s < rows.size(); s += kChunk) {
    const std::size_t b = std::min(kChunk, rows.size() - s);
    x.resize(b * d);
    for (std::size_t r = 0; r < b; ++r) {
      auto row = ds.row(rows[s + r]);
      std::copy(row.begin(), row.end(), x.begin() + r * d);
    }
    forward(net, x.data(), b);
    auto f = outputs();
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

double Engine::rmse(const Network& net, const Dataset& ds, std::span<const std::size_t> rows) {
  if (rows.empty()) throw std::invalid_argument("rmse over an empty row set");
  const std::vector<double> f = predict(net, ds, rows);
  double s = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double e = f[i] - ds.target(rows[i]);
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(rows.size()));
}

// ---------------------------------------------------------------------------
// Text format

namespace {

[[noreturn]] void net_format_error(const std::string& what) { throw DataError("network file: " + what); }

std::string read_token(std::istream& in) {
  std::string t;
  if (!(in >> t)) net_format_error("unexpected end of file");
  return t;
}

void expect(std::istream& in, const char* word) {
  const std::string t = read_token(in);
  if (t != word) net_format_error(std::string("expected '") + word + "', got '" + t + "'");
}

double read_double(std::istream& in) {
  const std::string t = read_token(in);
  auto v = parse_double(t);
  if (!v) net_format_error("bad number '" + t + "'");
  return *v;
}

std::size_t read_size(std::istream& in) {
  const std::string t = read_token(in);
  auto v = parse_int(t);
  if (!v || *v < 0) net_format_error("bad count '" + t + "'");
  return static_cast<std::size_t>(*v);
}

}  // namespace

void write_network(const Network& net, std::ostream& out) {
  out << "nrf-network 1\n";
  out << "layers " << net.layers.size() << " residual " << net.output_residual.size();
  for (double r : net.output_residual) out << ' ' << format_double(r);
  out << '\n';
  for (const Layer& l : net.layers) {
    out << "layer " << l.inputs() << ' ' << l.outputs() << ' '
        << (l.activation == Activation::kTanh ? "tanh" : "identity") << ' ' << format_double(l.contrast) << ' '
        << (l.block_sparse ? 1 : 0) << '\n';
    out << "bias";
    for (double b : l.bias) out << ' ' << format_double(b);
    out << '\n';
    for (std::size_t r = 0; r < l.inputs(); ++r) {
      for (std::size_t c = 0; c < l.outputs(); ++c) {
        if (c) out << ' ';
        out << format_double(l.weights(r, c));
      }
      out << '\n';
    }
    if (!l.has_mask()) {
      out << "mask none\n";
    } else {
      out << "mask\n";
      for (std::size_t r = 0; r < l.inputs(); ++r) {
        for (std::size_t c = 0; c < l.outputs(); ++c) out << (l.mask[r * l.outputs() + c] ? '1' : '0');
        out << '\n';
      }
    }
    out << "blocks " << l.blocks.size() << '\n';
    for (const Block& b : l.blocks) out << b.row << ' ' << b.rows << ' ' << b.col << ' ' << b.cols << '\n';
  }
}

Network read_network(std::istream& in) {
  expect(in, "nrf-network");
  if (read_size(in) != 1) net_format_error("unsupported version");
  Network net;
  expect(in, "layers");
  const std::size_t count = read_size(in);
  expect(in, "residual");
  net.output_residual.resize(read_size(in));
  for (double& r : net.output_residual) r = read_double(in);
  for (std::size_t li = 0; li < count; ++li) {
    Layer l;
    expect(in, "layer");
    const std::size_t rows = read_size(in), cols = read_size(in);
    const std::string act = read_token(in);
    if (act == "tanh")
      l.activation = Activation::kTanh;
    else if (act == "identity")
      l.activation = Activation::kIdentity;
    else
      net_format_error("unknown activation '" + act + "'");
    l.contrast = read_double(in);
    l.block_sparse = read_size(in) != 0;
    expect(in, "bias");
    l.bias.resize(cols);
    for (double& b : l.bias) b = read_double(in);
    l.weights = Matrix(rows, cols);
    for (double& w : l.weights.values()) w = read_double(in);
    expect(in, "mask");
    if (in >> std::ws && in.peek() == 'n') {
      expect(in, "none");
    } else {
      l.mask.reserve(rows * cols);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::string bits = cols == 0 ? std::string() : read_token(in);
        if (bits.size() != cols) net_format_error("mask row has the wrong width");
        for (char ch : bits) {
          if (ch != '0' && ch != '1') net_format_error("mask digit must be 0 or 1");
          l.mask.push_back(ch == '1');
        }
      }
    }
    expect(in, "blocks");
    l.blocks.resize(read_size(in));
    for (Block& b : l.blocks) {
      b.row = read_size(in);
      b.rows = read_size(in);
      b.col = read_size(in);
      b.cols = read_size(in);
    }
    net.layers.push_back(std::move(l));
  }
  try {
    validate(net);
  } catch (const std::invalid_argument& e) {
    net_format_error(e.what());
  }
  return net;
}

}  // namespace nrf
