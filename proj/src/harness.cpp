#include "nrf/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iterator>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "nrf/baselines.hpp"
#include "nrf/rng.hpp"
#include "nrf/text_io.hpp"

namespace nrf {

const std::vector<std::string>& known_models() {
  static const std::vector<std::string> names = {"RF",        "NRF1-sparse", "NRF1-full", "NRF2-sparse",
                                                 "NRF2-full", "NN1",         "NN2",       "NN3"};
  return names;
}

void ExperimentConfig::validate() const {
  if (repeats < 1) throw std::invalid_argument("config: repeats must be at least 1");
  if (models.empty()) throw std::invalid_argument("config: model list is empty");
  for (const std::string& m : models)
    if (std::find(known_models().begin(), known_models().end(), m) == known_models().end())
      throw std::invalid_argument("config: unknown model '" + m + "'");
  if (!(gamma1 > 0.0) || !(gamma2 > 0.0)) throw std::invalid_argument("config: contrasts must be positive");
  if (synth_d < 1) throw std::invalid_argument("config: synth.d must be at least 1");
  if (!(synth_sigma >= 0.0)) throw std::invalid_argument("config: synth.sigma must be non-negative");
  if (mode == ExperimentMode::kBenchmark && dataset == "synth" && synth_n < 4)
    throw std::invalid_argument("config: synth.n must be at least 4");
  if (mode == ExperimentMode::kAsymptotics) {
    if (sizes.empty()) throw std::invalid_argument("config: asymptotics needs at least one size");
    for (std::size_t s : sizes)
      if (s < 2) throw std::invalid_argument("config: training sizes must be at least 2");
  }
  if (threads < 1) throw std::invalid_argument("config: threads must be at least 1");
  train.validate();
}

// ---------------------------------------------------------------------------
// Config file

namespace {

std::size_t to_size(std::string_view key, std::string_view v) {
  auto n = parse_u64(v);
  if (!n) throw std::invalid_argument("config: '" + std::string(key) + "' expects a non-negative integer");
  return static_cast<std::size_t>(*n);
}

double to_real(std::string_view key, std::string_view v) {
  auto d = parse_double(v);
  if (!d || !std::isfinite(*d)) throw std::invalid_argument("config: '" + std::string(key) + "' expects a number");
  return *d;
}

std::vector<std::string_view> list(std::string_view v) {
  std::vector<std::string_view> out;
  for (auto part : split(v, ','))
    if (!trim(part).empty()) out.push_back(trim(part));
  return out;
}

}  // namespace

void set_config_value(ExperimentConfig& c, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  if (key == "mode") {
    if (value == "benchmark")
      c.mode = ExperimentMode::kBenchmark;
    else if (value == "asymptotics")
      c.mode = ExperimentMode::kAsymptotics;
    else
      throw std::invalid_argument("config: mode must be benchmark or asymptotics");
  } else if (key == "dataset") {
    c.dataset = value;
  } else if (key == "target") {
    c.target = value;
  } else if (key == "synth.n") {
    c.synth_n = to_size(key, value);
  } else if (key == "synth.d") {
    c.synth_d = to_size(key, value);
  } else if (key == "synth.sigma") {
    c.synth_sigma = to_real(key, value);
  } else if (key == "repeats") {
    c.repeats = to_size(key, value);
  } else if (key == "seed") {
    auto s = parse_u64(value);
    if (!s) throw std::invalid_argument("config: seed expects an unsigned integer");
    c.seed = *s;
  } else if (key == "forest.trees") {
    c.forest.trees = to_size(key, value);
  } else if (key == "forest.max_depth") {
    c.forest.stop = MaxDepth{to_size(key, value)};
  } else if (key == "forest.leaves") {
    c.forest.stop = ExactLeaves{to_size(key, value)};
  } else if (key == "forest.resample") {
    c.forest.resample = parse_resample_mode(value);
  } else if (key == "forest.subsample_size") {
    c.forest.subsample_size = to_size(key, value);
  } else if (key == "forest.mtry") {
    c.forest.mtry = to_size(key, value);
  } else if (key == "gamma1") {
    c.gamma1 = to_real(key, value);
  } else if (key == "gamma2") {
    c.gamma2 = to_real(key, value);
  } else if (key == "train.epochs") {
    c.train.epochs = to_size(key, value);
  } else if (key == "train.batch_size") {
    c.train.batch_size = to_size(key, value);
  } else if (key == "train.learning_rate") {
    c.train.learning_rate = to_real(key, value);
  } else if (key == "train.beta1") {
    c.train.beta1 = to_real(key, value);
  } else if (key == "train.beta2") {
    c.train.beta2 = to_real(key, value);
  } else if (key == "train.eps") {
    c.train.eps = to_real(key, value);
  } else if (key == "models") {
    c.models.clear();
    for (auto m : list(value)) c.models.emplace_back(m);
  } else if (key == "sizes") {
    c.sizes.clear();
    for (auto s : list(value)) c.sizes.push_back(to_size(key, s));
  } else if (key == "threads") {
    c.threads = to_size(key, value);
  } else {
    throw std::invalid_argument("config: unknown key '" + std::string(key) + "'");
  }
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(c, s.substr(0, eq), s.substr(eq + 1));
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  return parse_config(in);
}

void write_config(const ExperimentConfig& c, std::ostream& out) {
  auto join = [](const auto& items) {
    std::ostringstream s;
    for (std::size_t i = 0; i < items.size(); ++i) s << (i ? "," : "") << items[i];
    return s.str();
  };
  out << "mode = " << (c.mode == ExperimentMode::kBenchmark ? "benchmark" : "asymptotics") << '\n';
  out << "dataset = " << c.dataset << '\n';
  if (!c.target.empty()) out << "target = " << c.target << '\n';
  out << "synth.n = " << c.synth_n << '\n';
  out << "synth.d = " << c.synth_d << '\n';
  out << "synth.sigma = " << format_double(c.synth_sigma) << '\n';
  out << "repeats = " << c.repeats << '\n';
  out << "seed = " << c.seed << '\n';
  out << "forest.trees = " << c.forest.trees << '\n';
  if (const auto* md = std::get_if<MaxDepth>(&c.forest.stop))
    out << "forest.max_depth = " << md->depth << '\n';
  else
    out << "forest.leaves = " << std::get<ExactLeaves>(c.forest.stop).leaves << '\n';
  out << "forest.resample = " << to_string(c.forest.resample) << '\n';
  out << "forest.subsample_size = " << c.forest.subsample_size << '\n';
  out << "forest.mtry = " << c.forest.mtry << '\n';
  out << "gamma1 = " << format_double(c.gamma1) << '\n';
  out << "gamma2 = " << format_double(c.gamma2) << '\n';
  out << "train.epochs = " << c.train.epochs << '\n';
  out << "train.batch_size = " << c.train.batch_size << '\n';
  out << "train.learning_rate = " << format_double(c.train.learning_rate) << '\n';
  out << "train.beta1 = " << format_double(c.train.beta1) << '\n';
  out << "train.beta2 = " << format_double(c.train.beta2) << '\n';
  out << "train.eps = " << format_double(c.train.eps) << '\n';
  out << "models = " << join(c.models) << '\n';
  out << "sizes = " << join(c.sizes) << '\n';
  out << "threads = " << c.threads << '\n';
}

// ---------------------------------------------------------------------------
// Running

namespace {

struct JobResult {
  std::vector<RunRecord> records;
  std::vector<CurveSet> curves;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t model_index(const std::string& name) {
  const auto& k = known_models();
  return static_cast<std::size_t>(std::find(k.begin(), k.end(), name) - k.begin());
}

JobResult run_job(const ExperimentConfig& config, const Dataset& ds, std::size_t repeat, std::ostream* log,
                  std::mutex& log_mu) {
  using clock = std::chrono::steady_clock;
  const std::uint64_t rs = config.seed + repeat;
  const SplitIndices split = split_dataset(ds, rs);
  const std::size_t n_train = split.train.size();

  auto t0 = clock::now();
  ForestParams fp = config.forest;
  fp.seed = derive_seed(rs, seed_stream::kForest);
  const ForestModel forest = fit_forest(ds, split.train, fp);
  const double rf_seconds = seconds_since(t0);
  const double rf_val = forest_rmse(forest, ds, split.val);
  const double rf_test = forest_rmse(forest, ds, split.test);

  JobResult out;
  for (const std::string& name : config.models) {
    RunRecord rec;
    rec.model = name;
    rec.n_train = n_train;
    rec.repeat = repeat;
    rec.rf_val_rmse = rf_val;
    t0 = clock::now();
    TrainConfig tc = config.train;
    tc.seed = derive_seed(rs, seed_stream::kTrain, model_index(name));

    if (name == "RF") {
      rec.test_rmse = rf_test;
      rec.val_rmse = rf_val;
      rec.seconds = rf_seconds;
    } else if (name.starts_with("NRF")) {
      tc.mode = name.ends_with("full") ? TrainMode::kFull : TrainMode::kSparse;
      const bool method1 = name.starts_with("NRF1");
      NrfModel m = method1 ? fit_nrf_method1(forest, ds, split, config.gamma1, config.gamma2, tc)
                           : fit_nrf_method2(forest, ds, split, config.gamma1, config.gamma2, tc);
      rec.test_rmse = nrf_rmse(m, ds, split.test);
      rec.val_rmse = m.val_rmse;
      rec.fallback = m.fallback_to_rf;
      for (std::size_t i = 0; i < m.histories.size(); ++i) {
        std::string label = method1 ? name + "#" + std::to_string(i) : name;
        out.curves.push_back({std::move(label), n_train, repeat, std::move(m.histories[i]), rf_val});
      }
    } else {  // NN1..NN3
      const std::size_t depth = static_cast<std::size_t>(name.back() - '0');
      const MlpSpec spec = mlp_from_forest_shape(forest, depth, config.gamma1, config.gamma2,
                                                 derive_seed(rs, seed_stream::kInit, depth));
      tc.mode = TrainMode::kFull;
      TrainResult r = train_network(make_mlp(spec, ds.dims()), ds, split.train, split.val, tc);
      Engine engine;
      rec.test_rmse = engine.rmse(r.best, ds, split.test);
      rec.val_rmse = r.best_val_rmse;
      out.curves.push_back({name, n_train, repeat, std::move(r.history), rf_val});
    }
    if (name != "RF") rec.seconds = seconds_since(t0);
    if (log) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "n_train=%zu repeat=%zu %-12s test=%.6f val=%.6f rf_val=%.6f%s (%.1fs)\n",
                    n_train, repeat, name.c_str(), rec.test_rmse, rec.val_rmse, rf_val,
                    rec.fallback ? " fallback" : "", rec.seconds);
      std::lock_guard lock(log_mu);
      *log << buf << std::flush;
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

std::string dataset_label(const ExperimentConfig& c) {
  std::string label;
  if (c.mode == ExperimentMode::kAsymptotics || c.dataset == "synth") {
    label = "synth_d" + std::to_string(c.synth_d) + "_sigma" + format_double(c.synth_sigma);
  } else {
    label = std::filesystem::path(c.dataset).stem().string();
  }
  std::replace(label.begin(), label.end(), ',', '_');
  return label;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config, std::ostream* log) {
  config.validate();
  ExperimentReport report;
  report.dataset = dataset_label(config);

  struct Job {
    std::size_t size;  // asymptotics only
    std::size_t repeat;
  };
  std::vector<Job> jobs;
  std::optional<Dataset> shared;
  if (config.mode == ExperimentMode::kBenchmark) {
    if (config.dataset == "synth") {
      shared = synth_sine(config.synth_n, config.synth_d, config.synth_sigma,
                          derive_seed(config.seed, seed_stream::kSynth));
    } else {
      LoadReport lr;
      shared = load_csv(config.dataset, config.target.empty() ? std::nullopt : std::optional(config.target), &lr);
      if (log)
        *log << "loaded " << config.dataset << ": " << shared->rows() << " rows, " << shared->dims()
             << " features (" << lr.rows_dropped << " rows and " << lr.columns_dropped.size()
             << " columns dropped)\n";
    }
    for (std::size_t r = 0; r < config.repeats; ++r) jobs.push_back({0, r});
  } else {
    for (std::size_t s : config.sizes)
      for (std::size_t r = 0; r < config.repeats; ++r) jobs.push_back({s, r});
  }

  std::vector<JobResult> results(jobs.size());
  std::mutex log_mu;
  auto run = [&](std::size_t j) {
    const Job& job = jobs[j];
    if (shared) {
      results[j] = run_job(config, *shared, job.repeat, log, log_mu);
    } else {
      // Training size s needs 2s points under the 50/25/25 split.
      const Dataset ds = synth_sine(2 * job.size, config.synth_d, config.synth_sigma,
                                    derive_seed(config.seed + job.repeat, seed_stream::kSynth, job.size));
      results[j] = run_job(config, ds, job.repeat, log, log_mu);
    }
  };

  if (config.threads <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(config.threads, jobs.size()); ++t)
      pool.emplace_back([&] {
        for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
          try {
            run(j);
          } catch (...) {
            std::lock_guard lock(error_mu);
            if (!error) error = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
  }

  for (JobResult& r : results) {
    std::move(r.records.begin(), r.records.end(), std::back_inserter(report.records));
    std::move(r.curves.begin(), r.curves.end(), std::back_inserter(report.curves));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Reports

std::vector<Aggregate> ExperimentReport::aggregates() const {
  std::vector<Aggregate> out;
  std::vector<std::vector<double>> values;
  for (const RunRecord& r : records) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const Aggregate& a) { return a.model == r.model && a.n_train == r.n_train; });
    if (it == out.end()) {
      out.push_back({r.model, r.n_train, 0, 0.0, 0.0});
      values.emplace_back();
      it = out.end() - 1;
    }
    values[static_cast<std::size_t>(it - out.begin())].push_back(r.test_rmse);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& v = values[i];
    double sum = 0.0;
    for (double x : v) sum += x;
    const double mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    out[i].count = v.size();
    out[i].mean = mean;
    out[i].std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  }
  return out;
}

ReportFormat parse_report_format(std::string_view text) {
  if (text == "csv") return ReportFormat::kCsv;
  if (text == "markdown" || text == "md") return ReportFormat::kMarkdown;
  throw std::invalid_argument("unknown report format '" + std::string(text) + "'");
}

namespace {

constexpr const char* kReportHeader =
    "dataset,kind,model,n_train,repeat,test_rmse,val_rmse,rf_val_rmse,fallback,repeats,mean_test_rmse,"
    "std_test_rmse";

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_report(const ExperimentReport& report, ReportFormat format, std::ostream& out) {
  if (report.records.empty()) throw std::invalid_argument("report has no records");
  const std::vector<Aggregate> agg = report.aggregates();
  if (format == ReportFormat::kCsv) {
    out << kReportHeader << '\n';
    for (const RunRecord& r : report.records)
      out << report.dataset << ",detail," << r.model << ',' << r.n_train << ',' << r.repeat << ','
          << format_double(r.test_rmse) << ',' << format_double(r.val_rmse) << ',' << format_double(r.rf_val_rmse)
          << ',' << (r.fallback ? 1 : 0) << ",,,\n";
    for (const Aggregate& a : agg)
      out << report.dataset << ",aggregate," << a.model << ',' << a.n_train << ",,,,,," << a.count << ','
          << format_double(a.mean) << ',' << format_double(a.std) << '\n';
    return;
  }

  std::vector<std::string> models;
  std::vector<std::size_t> sizes;
  for (const Aggregate& a : agg) {
    if (std::find(models.begin(), models.end(), a.model) == models.end()) models.push_back(a.model);
    if (std::find(sizes.begin(), sizes.end(), a.n_train) == sizes.end()) sizes.push_back(a.n_train);
  }
  out << "| dataset | n_train |";
  for (const auto& m : models) out << ' ' << m << " |";
  out << "\n|---|---|";
  for (std::size_t i = 0; i < models.size(); ++i) out << "---|";
  out << '\n';
  for (std::size_t n : sizes) {
    out << "| " << report.dataset << " | " << n << " |";
    for (const auto& m : models) {
      auto it = std::find_if(agg.begin(), agg.end(), [&](const Aggregate& a) { return a.model == m && a.n_train == n; });
      if (it == agg.end()) {
        out << " - |";
        continue;
      }
      char buf[64];
      std::snprintf(buf, sizeof buf, " %.4f (%.4f) |", it->mean, it->std);
      out << buf;
    }
    out << '\n';
  }
}

void emit_report(const ExperimentReport& report, ReportFormat format, const std::filesystem::path& path) {
  if (report.records.empty()) throw std::invalid_argument("report has no records");
  std::ofstream out = open_out(path);
  write_report(report, format, out);
  if (!out) throw DataError("write failed: " + path.string());
}

void write_curves(const ExperimentReport& report, std::ostream& out) {
  if (report.curves.empty()) throw std::invalid_argument("no learning curves to write");
  out << "model,n_train,repeat,epoch,split,rmse\n";
  for (const CurveSet& c : report.curves) {
    const std::string prefix = c.model + ',' + std::to_string(c.n_train) + ',' + std::to_string(c.repeat) + ',';
    for (const EpochRecord& e : c.history) {
      out << prefix << e.epoch << ",train," << format_double(e.train_rmse) << '\n';
      out << prefix << e.epoch << ",val," << format_double(e.val_rmse) << '\n';
      out << prefix << e.epoch << ",rf_val," << format_double(c.rf_val_rmse) << '\n';
    }
  }
}

void emit_curves(const ExperimentReport& report, const std::filesystem::path& path) {
  if (report.curves.empty()) throw std::invalid_argument("no learning curves to write");
  std::ofstream out = open_out(path);
  write_curves(report, out);
  if (!out) throw DataError("write failed: " + path.string());
}

void emit_timing(const ExperimentReport& report, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "model,n_train,repeat,seconds\n";
  for (const RunRecord& r : report.records) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", r.seconds);
    out << r.model << ',' << r.n_train << ',' << r.repeat << ',' << buf << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

ExperimentReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != kReportHeader) throw DataError("not a report CSV: " + path.string());
  ExperimentReport report;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto f = split(trim(line), ',');
    if (f.size() != 12) throw DataError("report line " + std::to_string(lineno) + ": expected 12 fields");
    if (f[1] != "detail") continue;
    report.dataset = std::string(f[0]);
    RunRecord r;
    r.model = std::string(f[2]);
    auto n = parse_u64(f[3]), rep = parse_u64(f[4]);
    auto te = parse_double(f[5]), va = parse_double(f[6]), rv = parse_double(f[7]);
    if (!n || !rep || !te || !va || !rv || (f[8] != "0" && f[8] != "1"))
      throw DataError("report line " + std::to_string(lineno) + ": bad field");
    r.n_train = *n;
    r.repeat = *rep;
    r.test_rmse = *te;
    r.val_rmse = *va;
    r.rf_val_rmse = *rv;
    r.fallback = f[8] == "1";
    report.records.push_back(std::move(r));
  }
  if (report.records.empty()) throw DataError("report CSV has no detail rows: " + path.string());
  return report;
}

}  // namespace nrf
