// nrf: command-line front end for forests, compiled networks and experiments.
//
// Exit status: 0 success, 1 usage error, 2 data error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>

#include "nrf/data.hpp"
#include "nrf/forest.hpp"
#include "nrf/harness.hpp"
#include "nrf/kernels/kernels.hpp"
#include "nrf/netcompile.hpp"
#include "nrf/rng.hpp"
#include "nrf/train.hpp"

namespace fs = std::filesystem;

namespace {

struct DataArgs {
  std::string path;
  std::string target;

  void add(CLI::App* cmd) {
    cmd->add_option("--data", path, "CSV file with a header row")->required();
    cmd->add_option("--target", target, "Target column (default: last column)");
  }
  nrf::Dataset load() const {
    nrf::LoadReport report;
    nrf::Dataset ds =
        nrf::load_csv(path, target.empty() ? std::nullopt : std::optional<std::string>(target), &report);
    std::cerr << "loaded " << path << ": " << ds.rows() << " rows, " << ds.dims() << " features";
    if (report.rows_dropped || !report.columns_dropped.empty())
      std::cerr << " (dropped " << report.rows_dropped << " rows, " << report.columns_dropped.size() << " columns)";
    std::cerr << '\n';
    return ds;
  }
};

void print_rmse(const char* what, double val, double test) {
  std::printf("%s val_rmse=%.6f test_rmse=%.6f\n", what, val, test);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural random forests: CART forests compiled into trainable networks"};
  app.require_subcommand(1);
  std::string kernel = "auto";
  app.add_option("--kernels", kernel, "Kernel variant: auto, scalar, avx2, avx512");

  // run
  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  std::string config_path, run_out = "results";
  std::optional<std::uint64_t> run_seed;
  std::optional<std::size_t> run_threads;
  bool quiet = false;
  run->add_option("--config", config_path, "key = value config file")->required();
  run->add_option("--seed", run_seed, "Override the base seed");
  run->add_option("--threads", run_threads, "Run repeats concurrently");
  run->add_option("--out", run_out, "Output directory")->capture_default_str();
  run->add_flag("--quiet", quiet, "No progress lines");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic sine dataset");
  std::size_t sn = 1000, sd = 2;
  double ssigma = 0.01;
  std::uint64_t sseed = 0;
  std::string sout;
  synth->add_option("--n", sn, "Rows")->capture_default_str();
  synth->add_option("--d", sd, "Features")->capture_default_str();
  synth->add_option("--sigma", ssigma, "Noise standard deviation")->capture_default_str();
  synth->add_option("--seed", sseed, "Seed")->capture_default_str();
  synth->add_option("--out", sout, "Output CSV")->required();

  // fit-forest
  auto* fit = app.add_subcommand("fit-forest", "Fit a forest on the training split of a CSV");
  DataArgs fit_data;
  fit_data.add(fit);
  std::uint64_t fit_seed = 0;
  std::size_t trees = 30, max_depth = 6, leaves = 0, mtry = 0, subsample = 0;
  std::string resample = "bootstrap", fit_out, emit_clean;
  fit->add_option("--seed", fit_seed, "Split and forest seed")->capture_default_str();
  fit->add_option("--trees", trees, "Number of trees")->capture_default_str();
  fit->add_option("--max-depth", max_depth, "Depth limit")->capture_default_str();
  fit->add_option("--leaves", leaves, "Grow best-first to this many leaves instead of a depth limit");
  fit->add_option("--mtry", mtry, "Features tried per node (0: max(1, d/3))")->capture_default_str();
  fit->add_option("--resample", resample, "none, bootstrap or subsample")->capture_default_str();
  fit->add_option("--subsample", subsample, "Subsample size (0: ceil(0.632 n))");
  fit->add_option("--out", fit_out, "Forest directory")->required();
  fit->add_option("--emit-clean", emit_clean, "Also write the cleaned dataset here");

  // compile
  auto* comp = app.add_subcommand("compile", "Compile a tree or a whole forest into a network file");
  std::string comp_forest, comp_out;
  std::optional<std::size_t> comp_tree;
  double g1 = 100.0, g2 = 1.0;
  comp->add_option("--forest", comp_forest, "Forest directory")->required();
  comp->add_option("--tree", comp_tree, "Tree index (default: concatenate all trees)");
  comp->add_option("--gamma1", g1, "First-layer contrast")->capture_default_str();
  comp->add_option("--gamma2", g2, "Second-layer contrast")->capture_default_str();
  comp->add_option("--out", comp_out, "Network file")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train networks initialised from a forest");
  DataArgs tr_data;
  tr_data.add(tr);
  std::string tr_forest, tr_out, tr_mode = "sparse";
  int method = 2;
  std::uint64_t tr_seed = 0;
  nrf::TrainConfig tc;
  std::size_t tr_threads = 1;
  tr->add_option("--forest", tr_forest, "Forest directory from fit-forest")->required();
  tr->add_option("--method", method, "1: one network per tree, 2: joint network")
      ->check(CLI::IsMember({1, 2}))
      ->capture_default_str();
  tr->add_option("--mode", tr_mode, "sparse or full")->check(CLI::IsMember({"sparse", "full"}))->capture_default_str();
  tr->add_option("--seed", tr_seed, "Split seed used by fit-forest")->capture_default_str();
  tr->add_option("--epochs", tc.epochs, "Epochs")->capture_default_str();
  tr->add_option("--batch-size", tc.batch_size, "Minibatch size")->capture_default_str();
  tr->add_option("--lr", tc.learning_rate, "Adam learning rate")->capture_default_str();
  tr->add_option("--gamma1", g1, "First-layer contrast")->capture_default_str();
  tr->add_option("--gamma2", g2, "Second-layer contrast")->capture_default_str();
  tr->add_option("--threads", tr_threads, "Method 1 members trained concurrently")->capture_default_str();
  tr->add_option("--out", tr_out, "Model directory");

  // report
  auto* rep = app.add_subcommand("report", "Re-render a CSV report");
  std::string rep_in, rep_format = "markdown", rep_out;
  rep->add_option("--in", rep_in, "report.csv from `nrf run`")->required();
  rep->add_option("--format", rep_format, "csv or markdown")->capture_default_str();
  rep->add_option("--out", rep_out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (kernel != "auto" && !nrf::kernels::select(kernel))
      throw std::invalid_argument("kernel variant '" + kernel + "' is not available here");

    if (*run) {
      nrf::ExperimentConfig cfg = nrf::load_config(config_path);
      if (run_seed) cfg.seed = *run_seed;
      if (run_threads) cfg.threads = *run_threads;
      const nrf::ExperimentReport report = nrf::run_experiment(cfg, quiet ? nullptr : &std::cerr);
      const fs::path out(run_out);
      fs::create_directories(out);
      nrf::emit_report(report, nrf::ReportFormat::kCsv, out / "report.csv");
      nrf::emit_report(report, nrf::ReportFormat::kMarkdown, out / "report.md");
      if (!report.curves.empty()) nrf::emit_curves(report, out / "curves.csv");
      nrf::emit_timing(report, out / "timing.csv");
      std::ofstream echo(out / "config.txt");
      nrf::write_config(cfg, echo);
      nrf::write_report(report, nrf::ReportFormat::kMarkdown, std::cout);
    } else if (*synth) {
      nrf::write_csv(nrf::synth_sine(sn, sd, ssigma, sseed), sout);
    } else if (*fit) {
      const nrf::Dataset ds = fit_data.load();
      if (!emit_clean.empty()) nrf::write_csv(ds, emit_clean);
      const nrf::SplitIndices split = nrf::split_dataset(ds, fit_seed);
      nrf::ForestParams fp;
      fp.trees = trees;
      fp.stop = leaves ? nrf::StoppingRule(nrf::ExactLeaves{leaves}) : nrf::StoppingRule(nrf::MaxDepth{max_depth});
      fp.mtry = mtry;
      fp.resample = nrf::parse_resample_mode(resample);
      fp.subsample_size = subsample;
      fp.seed = nrf::derive_seed(fit_seed, nrf::seed_stream::kForest);
      const nrf::ForestModel forest = nrf::fit_forest(ds, split.train, fp);
      nrf::save_forest(forest, fit_out);
      print_rmse("forest", nrf::forest_rmse(forest, ds, split.val), nrf::forest_rmse(forest, ds, split.test));
    } else if (*comp) {
      const nrf::ForestModel forest = nrf::load_forest(comp_forest);
      nrf::NetworkParams params;
      if (comp_tree) {
        if (*comp_tree >= forest.trees.size()) throw std::invalid_argument("--tree is out of range");
        params = nrf::compile_tree(forest.trees[*comp_tree], g1, g2);
      } else {
        std::vector<nrf::NetworkParams> nets;
        for (const auto& t : forest.trees) nets.push_back(nrf::compile_tree(t, g1, g2));
        params = nrf::concat_networks(nets);
      }
      nrf::save_network(params, comp_out);
      std::printf("units: %zu hyperplanes, %zu leaves; max leaves per tree %zu\n", params.W1().cols(),
                  params.W2().cols(), params.max_leaves());
    } else if (*tr) {
      const nrf::Dataset ds = tr_data.load();
      const nrf::SplitIndices split = nrf::split_dataset(ds, tr_seed);
      const nrf::ForestModel forest = nrf::load_forest(tr_forest);
      tc.mode = nrf::parse_train_mode(tr_mode);
      const std::string name = "NRF" + std::to_string(method) + "-" + tr_mode;
      const auto& known = nrf::known_models();
      tc.seed = nrf::derive_seed(tr_seed, nrf::seed_stream::kTrain,
                                 static_cast<std::uint64_t>(std::find(known.begin(), known.end(), name) - known.begin()));
      const nrf::NrfModel model = method == 1 ? nrf::fit_nrf_method1(forest, ds, split, g1, g2, tc, tr_threads)
                                              : nrf::fit_nrf_method2(forest, ds, split, g1, g2, tc);
      if (!tr_out.empty()) nrf::save_model(model, tr_out);
      print_rmse("forest", model.forest_val_rmse, nrf::forest_rmse(forest, ds, split.test));
      print_rmse(name.c_str(), model.val_rmse, nrf::nrf_rmse(model, ds, split.test));
      if (model.fallback_to_rf) std::printf("fallback: forest predictions kept\n");
    } else if (*rep) {
      const nrf::ExperimentReport report = nrf::read_report_csv(rep_in);
      const nrf::ReportFormat fmt = nrf::parse_report_format(rep_format);
      if (rep_out.empty())
        nrf::write_report(report, fmt, std::cout);
      else
        nrf::emit_report(report, fmt, rep_out);
    }
  } catch (const nrf::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
