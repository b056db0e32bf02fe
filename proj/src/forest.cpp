#include "nrf/forest.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include "nrf/rng.hpp"
#include "nrf/text_io.hpp"

namespace nrf {

void ForestParams::validate(std::size_t d, std::size_t n) const {
  if (trees < 1) throw std::invalid_argument("forest: need at least one tree");
  if (mtry > d) throw std::invalid_argument("forest: mtry exceeds the feature count");
  if (resample == ResampleMode::kSubsample) {
    const std::size_t a = effective_subsample(n);
    if (a < 2 || a > n) throw std::invalid_argument("forest: subsample size must lie in [2, n]");
  }
  if (const auto* el = std::get_if<ExactLeaves>(&stop); el && el->leaves < 1)
    throw std::invalid_argument("forest: ExactLeaves needs at least one leaf");
}

std::size_t ForestParams::effective_mtry(std::size_t d) const {
  if (mtry != 0) return mtry;
  return std::max<std::size_t>(1, d / 3);
}

std::size_t ForestParams::effective_subsample(std::size_t n) const {
  if (subsample_size != 0) return subsample_size;
  return static_cast<std::size_t>(std::ceil(0.632 * static_cast<double>(n)));
}

ForestModel fit_forest(const Dataset& ds, std::span<const std::size_t> train_indices, const ForestParams& params) {
  const std::size_t n = train_indices.size();
  if (n < 2) throw std::invalid_argument("fit_forest: need at least 2 training rows");
  params.validate(ds.dims(), n);

  ForestModel model;
  model.params = params;
  model.trees.reserve(params.trees);
  model.resamples.reserve(params.trees);
  for (std::size_t m = 0; m < params.trees; ++m) {
    Rng rng(derive_seed(params.seed, seed_stream::kResample, m));
    std::vector<std::size_t> rows;
    switch (params.resample) {
      case ResampleMode::kNone:
        rows.assign(train_indices.begin(), train_indices.end());
        break;
      case ResampleMode::kBootstrap:
        rows.resize(n);
        for (auto& r : rows) r = train_indices[rng.uniform_index(n)];
        break;
      case ResampleMode::kSubsample:
        for (std::size_t k : rng.sample_without_replacement(n, params.effective_subsample(n)))
          rows.push_back(train_indices[k]);
        break;
    }
    GrowOptions opt;
    opt.stop = params.stop;
    opt.mtry = params.effective_mtry(ds.dims());
    opt.seed = derive_seed(params.seed, seed_stream::kTree, m);
    model.trees.push_back(grow_tree(rows, ds, opt));
    model.resamples.push_back(std::move(rows));
  }
  return model;
}

double predict_forest(const ForestModel& model, std::span<const double> x) {
  double sum = 0.0;
  for (const auto& tree : model.trees) sum += predict_tree(tree, x);
  return sum / static_cast<double>(model.trees.size());
}

double forest_rmse(const ForestModel& model, const Dataset& ds, std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  double ss = 0.0;
  for (std::size_t i : rows) {
    const double e = predict_forest(model, ds.row(i)) - ds.target(i);
    ss += e * e;
  }
  return std::sqrt(ss / static_cast<double>(rows.size()));
}

const char* to_string(ResampleMode mode) {
  switch (mode) {
    case ResampleMode::kNone:
      return "none";
    case ResampleMode::kBootstrap:
      return "bootstrap";
    case ResampleMode::kSubsample:
      return "subsample";
  }
  return "?";
}

ResampleMode parse_resample_mode(std::string_view text) {
  if (text == "none") return ResampleMode::kNone;
  if (text == "bootstrap") return ResampleMode::kBootstrap;
  if (text == "subsample") return ResampleMode::kSubsample;
  throw std::invalid_argument("unknown resample mode '" + std::string(text) + "'");
}

namespace {

std::string tree_file_name(std::size_t m) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "tree_%03zu.txt", m);
  return buf;
}

}  // namespace

void save_forest(const ForestModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "forest.manifest", std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / "forest.manifest").string());
  const auto& p = model.params;
  out << "format = nrf-forest 1\n";
  out << "trees = " << p.trees << '\n';
  out << "resample = " << to_string(p.resample) << '\n';
  out << "subsample_size = " << p.subsample_size << '\n';
  out << "mtry = " << p.mtry << '\n';
  if (const auto* md = std::get_if<MaxDepth>(&p.stop)) {
    out << "stop = max_depth " << md->depth << '\n';
  } else {
    out << "stop = exact_leaves " << std::get<ExactLeaves>(p.stop).leaves << '\n';
  }
  out << "seed = " << p.seed << '\n';
  for (std::size_t m = 0; m < model.trees.size(); ++m) {
    const std::string name = tree_file_name(m);
    save_tree(model.trees[m], dir / name);
    out << "tree = " << name;
    for (std::size_t r : model.resamples[m]) out << ' ' << r;
    out << '\n';
  }
  if (!out) throw DataError("write failed for forest manifest");
}

ForestModel load_forest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "forest.manifest");
  if (!in) throw DataError("cannot open " + (dir / "forest.manifest").string());
  ForestModel model;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key(trim(std::string_view(line).substr(0, eq)));
    const std::string value(trim(std::string_view(line).substr(eq + 1)));
    auto number = [&](const std::string& v) {
      auto n = parse_int(v);
      if (!n || *n < 0) throw DataError("forest manifest: bad number for " + key);
      return static_cast<std::size_t>(*n);
    };
    if (key == "format") {
      header = value == "nrf-forest 1";
    } else if (key == "trees") {
      model.params.trees = number(value);
    } else if (key == "resample") {
      model.params.resample = parse_resample_mode(value);
    } else if (key == "subsample_size") {
      model.params.subsample_size = number(value);
    } else if (key == "mtry") {
      model.params.mtry = number(value);
    } else if (key == "stop") {
      auto parts = split(value, ' ');
      if (parts.size() != 2) throw DataError("forest manifest: bad stop rule");
      const std::size_t k = number(std::string(parts[1]));
      if (parts[0] == "max_depth") {
        model.params.stop = MaxDepth{k};
      } else if (parts[0] == "exact_leaves") {
        model.params.stop = ExactLeaves{k};
      } else {
        throw DataError("forest manifest: unknown stop rule");
      }
    } else if (key == "seed") {
      auto n = parse_u64(value);
      if (!n) throw DataError("forest manifest: bad seed");
      model.params.seed = *n;
    } else if (key == "tree") {
      auto parts = split(value, ' ');
      model.trees.push_back(load_tree(dir / std::string(parts[0])));
      std::vector<std::size_t> rows;
      for (std::size_t k = 1; k < parts.size(); ++k) rows.push_back(number(std::string(parts[k])));
      model.resamples.push_back(std::move(rows));
    }
  }
  if (!header) throw DataError("forest manifest: missing format line");
  if (model.trees.size() != model.params.trees) throw DataError("forest manifest: tree count mismatch");
  return model;
}

}  // namespace nrf
