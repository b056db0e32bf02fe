#include "nrf/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>

#include "nrf/kernels/kernels.hpp"
#include "nrf/rng.hpp"
#include "nrf/text_io.hpp"

namespace nrf {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("train: learning rate must be finite and non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
    throw std::invalid_argument("train: Adam betas must lie in (0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("train: Adam eps must be positive");
}

Gradients gradients(const Network& net, const Matrix& x, std::span<const double> y, TrainMode mode) {
  if (x.rows() == 0 || x.rows() != y.size()) throw std::invalid_argument("gradients: bad batch shape");
  if (x.cols() != net.dims()) throw std::invalid_argument("gradients: input dimension mismatch");
  Engine engine;
  engine.forward(net, x.data(), x.rows());
  Gradients g = Gradients::zeros_like(net);
  engine.backward(net, y.data(), g, mode == TrainMode::kSparse);
  return g;
}

AdamState AdamState::zeros_like(const Network& net) {
  AdamState s;
  for (const Layer& l : net.layers) {
    s.m_weights.emplace_back(l.inputs(), l.outputs());
    s.v_weights.emplace_back(l.inputs(), l.outputs());
    s.m_bias.emplace_back(l.outputs(), 0.0);
    s.v_bias.emplace_back(l.outputs(), 0.0);
  }
  return s;
}

void adam_step(AdamState& state, Network& net, const Gradients& grad, const TrainConfig& config) {
  const std::size_t layers = net.layers.size();
  if (state.m_weights.size() != layers || grad.weights.size() != layers || state.m_bias.size() != layers ||
      grad.bias.size() != layers)
    throw std::invalid_argument("adam_step: layer count mismatch");
  for (std::size_t li = 0; li < layers; ++li) {
    const Layer& l = net.layers[li];
    const auto rows = l.inputs(), cols = l.outputs();
    auto same = [&](const Matrix& m) { return m.rows() == rows && m.cols() == cols; };
    if (!same(state.m_weights[li]) || !same(state.v_weights[li]) || !same(grad.weights[li]) ||
        state.m_bias[li].size() != cols || state.v_bias[li].size() != cols || grad.bias[li].size() != cols)
      throw std::invalid_argument("adam_step: shape mismatch in layer " + std::to_string(li));
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const kernels::AdamStep step{config.learning_rate,
                               config.beta1,
                               config.beta2,
                               config.eps,
                               1.0 - std::pow(config.beta1, t),
                               1.0 - std::pow(config.beta2, t)};
  const kernels::KernelTable& k = kernels::active();
  const bool sparse = config.mode == TrainMode::kSparse;

  for (std::size_t li = 0; li < layers; ++li) {
    Layer& l = net.layers[li];
    double* w = l.weights.data();
    const double* g = grad.weights[li].data();
    double* m = state.m_weights[li].data();
    double* v = state.v_weights[li].data();
    if (sparse && l.block_sparse) {
      const std::size_t ld = l.outputs();
      for (const Block& b : l.blocks)
        for (std::size_t r = b.row; r < b.row + b.rows; ++r) {
          const std::size_t o = r * ld + b.col;
          k.adam_update(b.cols, step, w + o, g + o, m + o, v + o);
        }
    } else {
      k.adam_update(l.weights.size(), step, w, g, m, v);
    }
    k.adam_update(l.bias.size(), step, l.bias.data(), grad.bias[li].data(), state.m_bias[li].data(),
                  state.v_bias[li].data());
  }
}

TrainResult train_network(const Network& initial, const Dataset& ds, std::span<const std::size_t> train_rows,
                          std::span<const std::size_t> val_rows, const TrainConfig& config) {
  config.validate();
  validate(initial);
  if (train_rows.empty() || val_rows.empty()) throw std::invalid_argument("train_network: empty train or val set");
  if (initial.dims() != ds.dims()) throw std::invalid_argument("train_network: input dimension mismatch");

  Network net = initial;
  const bool sparse = config.mode == TrainMode::kSparse;
  // Off-block weights may become nonzero once every connection trains.
  if (!sparse)
    for (Layer& l : net.layers) l.block_sparse = false;

  Engine engine;
  TrainResult result;
  auto record = [&](std::size_t epoch) {
    EpochRecord r{epoch, engine.rmse(net, ds, train_rows), engine.rmse(net, ds, val_rows)};
    result.history.push_back(r);
    if (epoch == 0 || r.val_rmse < result.best_val_rmse) {
      result.best_val_rmse = r.val_rmse;
      result.best_epoch = epoch;
      result.best = net;
    }
  };
  record(0);

  // Once trained, the exact output remainder no longer describes the network.
  net.output_residual.clear();

  Gradients grad = Gradients::zeros_like(net);
  AdamState state = AdamState::zeros_like(net);
  Rng rng(derive_seed(config.seed, seed_stream::kTrain));
  std::vector<std::size_t> order(train_rows.begin(), train_rows.end());
  const std::size_t d = ds.dims();
  std::vector<double> xb, yb;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t s = 0; s < order.size(); s += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, order.size() - s);
      xb.resize(b * d);
      yb.resize(b);
      for (std::size_t r = 0; r < b; ++r) {
        auto row = ds.row(order[s + r]);
        std::copy(row.begin(), row.end(), xb.begin() + static_cast<std::ptrdiff_t>(r * d));
        yb[r] = ds.target(order[s + r]);
      }
      engine.forward(net, xb.data(), b);
      engine.backward(net, yb.data(), grad, sparse);
      adam_step(state, net, grad, config);
    }
    record(epoch);
  }
  return result;
}

double rmse(std::span<const double> predictions, const Dataset& ds, std::span<const std::size_t> rows) {
  if (rows.empty() || predictions.size() != rows.size()) throw std::invalid_argument("rmse: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double e = predictions[i] - ds.target(rows[i]);
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(rows.size()));
}

namespace {

double tree_rmse(const RegressionTree& tree, const Dataset& ds, std::span<const std::size_t> rows) {
  std::vector<double> p;
  p.reserve(rows.size());
  for (std::size_t i : rows) p.push_back(predict_tree(tree, ds.row(i)));
  return rmse(p, ds, rows);
}

// Runs fn(0..n-1) on up to `threads` workers; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

void check_forest(const ForestModel& forest, const Dataset& ds, const SplitIndices& split) {
  if (forest.trees.empty()) throw std::invalid_argument("fit_nrf: forest has no trees");
  if (forest.dims() != ds.dims()) throw std::invalid_argument("fit_nrf: forest and data dimensions differ");
  if (split.train.empty() || split.val.empty()) throw std::invalid_argument("fit_nrf: empty train or val split");
}

}  // namespace

NrfModel fit_nrf_method1(const ForestModel& forest, const Dataset& ds, const SplitIndices& split, double gamma1,
                         double gamma2, const TrainConfig& config, std::size_t threads) {
  check_forest(forest, ds, split);
  config.validate();
  const std::size_t m_count = forest.trees.size();
  NrfModel model;
  model.method = Method::kIndependent;
  model.mode = config.mode;
  model.config = config;
  model.forest = forest;
  model.forest_val_rmse = forest_rmse(forest, ds, split.val);
  model.members.resize(m_count);
  model.histories.resize(m_count);
  std::vector<char> fallback(m_count, 0);

  parallel_for(m_count, threads, [&](std::size_t m) {
    NetworkParams p = compile_tree(forest.trees[m], gamma1, gamma2);
    TrainConfig c = config;
    c.seed = derive_seed(config.seed, seed_stream::kMember, m);
    TrainResult r = train_network(p.net, ds, split.train, split.val, c);
    fallback[m] = r.best_val_rmse > tree_rmse(forest.trees[m], ds, split.val);
    p.net = std::move(r.best);
    model.members[m] = std::move(p);
    model.histories[m] = std::move(r.history);
  });
  model.member_fallback.assign(fallback.begin(), fallback.end());

  model.val_rmse = nrf_rmse(model, ds, split.val);
  if (model.val_rmse > model.forest_val_rmse) {
    model.fallback_to_rf = true;
    model.val_rmse = model.forest_val_rmse;
  }
  return model;
}

NrfModel fit_nrf_method2(const ForestModel& forest, const Dataset& ds, const SplitIndices& split, double gamma1,
                         double gamma2, const TrainConfig& config) {
  check_forest(forest, ds, split);
  config.validate();
  NrfModel model;
  model.method = Method::kJoint;
  model.mode = config.mode;
  model.config = config;
  model.forest = forest;
  model.forest_val_rmse = forest_rmse(forest, ds, split.val);

  std::vector<NetworkParams> nets;
  nets.reserve(forest.trees.size());
  for (const RegressionTree& t : forest.trees) nets.push_back(compile_tree(t, gamma1, gamma2));
  BigNetworkParams big = concat_networks(nets);
  nets.clear();

  TrainResult r = train_network(big.net, ds, split.train, split.val, config);
  big.net = std::move(r.best);
  model.members.push_back(std::move(big));
  model.histories.push_back(std::move(r.history));
  model.fallback_to_rf = r.best_val_rmse > model.forest_val_rmse;
  model.val_rmse = model.fallback_to_rf ? model.forest_val_rmse : r.best_val_rmse;
  return model;
}

std::vector<double> predict_nrf(const NrfModel& model, const Dataset& ds, std::span<const std::size_t> rows) {
  std::vector<double> out(rows.size(), 0.0);
  if (model.fallback_to_rf) {
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = predict_forest(model.forest, ds.row(rows[i]));
    return out;
  }
  Engine engine;
  if (model.method == Method::kJoint) return engine.predict(model.members.at(0).net, ds, rows);

  // Member order and summation order match predict_forest.
  for (std::size_t m = 0; m < model.members.size(); ++m) {
    if (model.member_fallback[m]) {
      for (std::size_t i = 0; i < rows.size(); ++i) out[i] += predict_tree(model.forest.trees[m], ds.row(rows[i]));
    } else {
      const std::vector<double> p = engine.predict(model.members[m].net, ds, rows);
      for (std::size_t i = 0; i < rows.size(); ++i) out[i] += p[i];
    }
  }
  const double count = static_cast<double>(model.members.size());
  for (double& v : out) v /= count;
  return out;
}

double predict_nrf(const NrfModel& model, std::span<const double> x) {
  if (model.fallback_to_rf) return predict_forest(model.forest, x);
  Engine engine;
  if (model.method == Method::kJoint) {
    engine.forward(model.members.at(0).net, x.data(), 1);
    return engine.outputs()[0];
  }
  double sum = 0.0;
  for (std::size_t m = 0; m < model.members.size(); ++m) {
    if (model.member_fallback[m]) {
      sum += predict_tree(model.forest.trees[m], x);
    } else {
      engine.forward(model.members[m].net, x.data(), 1);
      sum += engine.outputs()[0];
    }
  }
  return sum / static_cast<double>(model.members.size());
}

double nrf_rmse(const NrfModel& model, const Dataset& ds, std::span<const std::size_t> rows) {
  return rmse(predict_nrf(model, ds, rows), ds, rows);
}

void write_history_csv(std::span<const EpochRecord> history, std::ostream& out) {
  out << "epoch,train_rmse,val_rmse\n";
  for (const EpochRecord& r : history)
    out << r.epoch << ',' << format_double(r.train_rmse) << ',' << format_double(r.val_rmse) << '\n';
}

const char* to_string(TrainMode mode) { return mode == TrainMode::kSparse ? "sparse" : "full"; }

TrainMode parse_train_mode(std::string_view text) {
  if (text == "sparse") return TrainMode::kSparse;
  if (text == "full") return TrainMode::kFull;
  throw std::invalid_argument("unknown training mode '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Model directory

namespace {

std::string numbered(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu.%s", stem, i, ext);
  return buf;
}

std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EpochRecord> h;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto f = split(trim(line), ',');
    auto e = f.size() == 3 ? parse_int(f[0]) : std::nullopt;
    auto tr = f.size() == 3 ? parse_double(f[1]) : std::nullopt;
    auto va = f.size() == 3 ? parse_double(f[2]) : std::nullopt;
    if (!e || !tr || !va || *e < 0) throw DataError("bad history row in " + path.string());
    h.push_back({static_cast<std::size_t>(*e), *tr, *va});
  }
  return h;
}

}  // namespace

void save_model(const NrfModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "model.manifest", std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / "model.manifest").string());
  const TrainConfig& c = model.config;
  out << "format = nrf-model 1\n";
  out << "method = " << static_cast<int>(model.method) << '\n';
  out << "mode = " << to_string(model.mode) << '\n';
  out << "fallback_to_rf = " << (model.fallback_to_rf ? 1 : 0) << '\n';
  out << "member_fallback =";
  for (bool f : model.member_fallback) out << ' ' << (f ? 1 : 0);
  out << '\n';
  out << "members = " << model.members.size() << '\n';
  out << "val_rmse = " << format_double(model.val_rmse) << '\n';
  out << "forest_val_rmse = " << format_double(model.forest_val_rmse) << '\n';
  out << "epochs = " << c.epochs << '\n';
  out << "batch_size = " << c.batch_size << '\n';
  out << "learning_rate = " << format_double(c.learning_rate) << '\n';
  out << "beta1 = " << format_double(c.beta1) << '\n';
  out << "beta2 = " << format_double(c.beta2) << '\n';
  out << "eps = " << format_double(c.eps) << '\n';
  out << "seed = " << c.seed << '\n';
  if (!out) throw DataError("write failed for model manifest");
  for (std::size_t m = 0; m < model.members.size(); ++m) save_network(model.members[m], dir / numbered("member", m, "net"));
  for (std::size_t m = 0; m < model.histories.size(); ++m) {
    std::ofstream h(dir / numbered("history", m, "csv"), std::ios::binary);
    if (!h) throw DataError("cannot write history file");
    write_history_csv(model.histories[m], h);
  }
  save_forest(model.forest, dir / "forest");
}

NrfModel load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.manifest");
  if (!in) throw DataError("cannot open " + (dir / "model.manifest").string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[std::string(trim(std::string_view(line).substr(0, eq)))] = std::string(trim(std::string_view(line).substr(eq + 1)));
  }
  if (kv["format"] != "nrf-model 1") throw DataError("model manifest: missing format line");
  auto num = [&](const char* key) {
    auto v = parse_u64(kv[key]);
    if (!v) throw DataError(std::string("model manifest: bad ") + key);
    return *v;
  };
  auto real = [&](const char* key) {
    auto v = parse_double(kv[key]);
    if (!v) throw DataError(std::string("model manifest: bad ") + key);
    return *v;
  };
  NrfModel model;
  const auto method = num("method");
  if (method != 1 && method != 2) throw DataError("model manifest: bad method");
  model.method = static_cast<Method>(method);
  try {
    model.mode = parse_train_mode(kv["mode"]);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("model manifest: ") + e.what());
  }
  model.fallback_to_rf = num("fallback_to_rf") != 0;
  for (auto tok : split(kv["member_fallback"], ' '))
    if (!trim(tok).empty()) model.member_fallback.push_back(trim(tok) == "1");
  model.val_rmse = real("val_rmse");
  model.forest_val_rmse = real("forest_val_rmse");
  model.config.epochs = num("epochs");
  model.config.batch_size = num("batch_size");
  model.config.learning_rate = real("learning_rate");
  model.config.beta1 = real("beta1");
  model.config.beta2 = real("beta2");
  model.config.eps = real("eps");
  model.config.seed = num("seed");
  model.config.mode = model.mode;
  const std::size_t members = num("members");
  for (std::size_t m = 0; m < members; ++m) {
    model.members.push_back(load_network(dir / numbered("member", m, "net")));
    model.histories.push_back(read_history_csv(dir / numbered("history", m, "csv")));
  }
  model.forest = load_forest(dir / "forest");
  if (model.method == Method::kIndependent &&
      (model.member_fallback.size() != members || members != model.forest.trees.size()))
    throw DataError("model manifest: member count does not match the forest");
  return model;
}

}  // namespace nrf
