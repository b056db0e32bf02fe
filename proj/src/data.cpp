#include "nrf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "nrf/rng.hpp"
#include "nrf/text_io.hpp"

namespace nrf {

Dataset::Dataset(Matrix features, std::vector<double> target, std::vector<std::string> feature_names,
                 std::string target_name)
    : features_(std::move(features)),
      target_(std::move(target)),
      feature_names_(std::move(feature_names)),
      target_name_(std::move(target_name)) {
  if (features_.rows() < 2) throw DataError("dataset needs at least 2 rows");
  if (features_.cols() < 1) throw DataError("dataset needs at least 1 feature column");
  if (target_.size() != features_.rows()) throw DataError("target length differs from row count");
  if (feature_names_.empty()) {
    for (std::size_t j = 0; j < features_.cols(); ++j) feature_names_.push_back("x" + std::to_string(j));
  }
  if (feature_names_.size() != features_.cols()) throw DataError("one name per feature column required");
  for (double v : features_.values()) {
    if (!std::isfinite(v)) throw DataError("non-finite feature value");
  }
  for (double v : target_) {
    if (!std::isfinite(v)) throw DataError("non-finite target value");
  }
}

double Dataset::max_abs_target() const {
  double m = 0.0;
  for (double v : target_) m = std::max(m, std::abs(v));
  return m;
}

namespace {

std::string unquote(std::string_view cell) {
  cell = trim(cell);
  if (cell.size() >= 2 && cell.front() == '"' && cell.back() == '"') cell = cell.substr(1, cell.size() - 2);
  return std::string(trim(cell));
}

std::optional<double> numeric_cell(const std::string& cell) {
  auto v = parse_double(cell);
  if (!v || !std::isfinite(*v)) return std::nullopt;
  return v;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, std::optional<std::string> target_column, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file " + path.string());
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  std::vector<std::string> header;
  for (auto cell : split(line, ',')) header.push_back(unquote(cell));
  const std::size_t ncols = header.size();

  std::vector<std::vector<std::string>> cells;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> row;
    for (auto cell : split(line, ',')) row.push_back(unquote(cell));
    row.resize(ncols);  // short rows get empty cells, long rows are truncated
    cells.push_back(std::move(row));
  }

  std::size_t target_col = ncols - 1;
  if (target_column) {
    auto it = std::find(header.begin(), header.end(), *target_column);
    if (it == header.end()) throw DataError("target column '" + *target_column + "' not found");
    target_col = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<bool> numeric(ncols, false);
  for (std::size_t c = 0; c < ncols; ++c) {
    std::size_t nonempty = 0, parsed = 0;
    for (const auto& row : cells) {
      if (row[c].empty()) continue;
      ++nonempty;
      if (numeric_cell(row[c])) ++parsed;
    }
    numeric[c] = nonempty > 0 && 2 * parsed > nonempty;
  }
  if (!numeric[target_col]) throw DataError("target column '" + header[target_col] + "' is not numeric");

  LoadReport local;
  local.rows_read = cells.size();
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < ncols; ++c) {
    if (c == target_col) continue;
    if (numeric[c]) {
      feature_cols.push_back(c);
    } else {
      local.columns_dropped.push_back(header[c]);
    }
  }
  if (feature_cols.empty()) throw DataError("no numeric feature column besides the target");

  std::vector<double> values;
  std::vector<double> target;
  for (const auto& row : cells) {
    std::vector<double> parsed;
    parsed.reserve(feature_cols.size());
    bool ok = true;
    for (std::size_t c : feature_cols) {
      auto v = numeric_cell(row[c]);
      if (!v) {
        ok = false;
        break;
      }
      parsed.push_back(*v);
    }
    auto y = numeric_cell(row[target_col]);
    if (!ok || !y) {
      ++local.rows_dropped;
      continue;
    }
    values.insert(values.end(), parsed.begin(), parsed.end());
    target.push_back(*y);
  }
  if (target.size() < 2) throw DataError("fewer than 2 usable rows in " + path.string());

  Matrix features(target.size(), feature_cols.size());
  std::copy(values.begin(), values.end(), features.data());
  std::vector<std::string> names;
  for (std::size_t c : feature_cols) names.push_back(header[c]);
  if (report) *report = local;
  return Dataset(std::move(features), std::move(target), std::move(names), header[target_col]);
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& name : ds.feature_names()) out << name << ',';
  out << ds.target_name() << '\n';
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    for (double v : ds.row(i)) out << format_double(v) << ',';
    out << format_double(ds.target(i)) << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

SplitIndices split_indices(std::size_t n, std::uint64_t seed) {
  if (n < 4) throw std::invalid_argument("split_dataset: need at least 4 rows, got " + std::to_string(n));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, seed_stream::kSplit));
  rng.shuffle(std::span<std::size_t>(perm));

  const std::size_t n_train = n / 2;
  const std::size_t n_val = n / 4;
  SplitIndices s;
  s.seed = seed;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  s.test.assign(perm.begin() + n_train + n_val, perm.end());
  return s;
}

SplitIndices split_dataset(const Dataset& ds, std::uint64_t seed) { return split_indices(ds.rows(), seed); }

double sine_signal(std::span<const double> x) {
  double y = 0.0;
  for (double v : x) y += std::sin(20.0 * v - 10.0);
  return y;
}

Dataset synth_sine(std::size_t n, std::size_t d, double sigma, std::uint64_t seed) {
  if (d < 1) throw std::invalid_argument("synth_sine: d must be >= 1");
  if (!(sigma >= 0.0)) throw std::invalid_argument("synth_sine: sigma must be >= 0");
  if (n < 2) throw std::invalid_argument("synth_sine: a dataset holds at least 2 rows");
  Rng rng(derive_seed(seed, seed_stream::kSynth));
  Matrix x(n, d);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = x.row(i);
    for (auto& v : row) v = rng.uniform01();
    y[i] = sine_signal(row);
    if (sigma > 0.0) y[i] += sigma * rng.normal();
  }
  return Dataset(std::move(x), std::move(y), {}, "y");
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Matrix x(indices.size(), ds.dims());
  std::vector<double> y(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    auto src = ds.row(indices[r]);
    std::copy(src.begin(), src.end(), x.row(r).begin());
    y[r] = ds.target(indices[r]);
  }
  return Dataset(std::move(x), std::move(y), ds.feature_names(), ds.target_name());
}

}  // namespace nrf
