#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <string>

#include "temp_dir.hpp"

namespace {

struct Outcome {
  int code;
  std::string out;
};

Outcome nrf_cli(const std::string& args, const TempDir& tmp) {
  const auto log = tmp / "stdout.txt";
  const std::string cmd = std::string(NRF_CLI_PATH) + " " + args + " > " + log.string() + " 2> " +
                          (tmp / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

TEST(Cli, UsageErrorsExitOne) {
  TempDir tmp;
  EXPECT_EQ(nrf_cli("", tmp).code, 1);
  EXPECT_EQ(nrf_cli("frobnicate", tmp).code, 1);
  EXPECT_EQ(nrf_cli("synth --n 10", tmp).code, 1);  // --out missing
  EXPECT_EQ(nrf_cli("--kernels nosuch synth --out " + (tmp / "a.csv").string(), tmp).code, 1);
  EXPECT_EQ(nrf_cli("train --data x.csv --forest f --method 3", tmp).code, 1);
  tmp.write("bad.cfg", "colour = red\n");
  EXPECT_EQ(nrf_cli("run --config " + (tmp / "bad.cfg").string(), tmp).code, 1);
  EXPECT_EQ(nrf_cli("--help", tmp).code, 0);
}

TEST(Cli, DataErrorsExitTwo) {
  TempDir tmp;
  EXPECT_EQ(nrf_cli("fit-forest --data " + (tmp / "none.csv").string() + " --out " + (tmp / "f").string(), tmp).code,
            2);
  tmp.write("text.csv", "a,b\nx,y\nz,w\n");
  EXPECT_EQ(nrf_cli("fit-forest --data " + (tmp / "text.csv").string() + " --out " + (tmp / "f").string(), tmp).code,
            2);
  EXPECT_EQ(nrf_cli("compile --forest " + (tmp / "nothing").string() + " --out " + (tmp / "n.net").string(), tmp).code,
            2);
}

TEST(Cli, Pipeline) {
  TempDir tmp;
  const std::string data = (tmp / "sine.csv").string(), forest = (tmp / "forest").string();
  ASSERT_EQ(nrf_cli("synth --n 200 --d 2 --seed 3 --out " + data, tmp).code, 0);
  auto fit = nrf_cli("fit-forest --data " + data + " --trees 4 --max-depth 3 --seed 1 --out " + forest, tmp);
  ASSERT_EQ(fit.code, 0);
  EXPECT_NE(fit.out.find("forest val_rmse="), std::string::npos);
  auto comp = nrf_cli("compile --forest " + forest + " --out " + (tmp / "all.net").string(), tmp);
  ASSERT_EQ(comp.code, 0);
  EXPECT_NE(comp.out.find("units:"), std::string::npos);
  EXPECT_EQ(nrf_cli("compile --forest " + forest + " --tree 9 --out " + (tmp / "t.net").string(), tmp).code, 1);
  auto train = nrf_cli("train --data " + data + " --forest " + forest + " --seed 1 --epochs 3 --method 1 --mode full --out " +
                           (tmp / "model").string(),
                       tmp);
  ASSERT_EQ(train.code, 0);
  EXPECT_NE(train.out.find("NRF1-full val_rmse="), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(tmp / "model" / "model.manifest"));

  tmp.write("exp.cfg",
            "dataset = " + data + "\nrepeats = 2\nforest.trees = 3\nforest.max_depth = 3\ntrain.epochs = 2\n"
            "models = RF, NRF2-sparse\n");
  const std::string out = (tmp / "results").string();
  ASSERT_EQ(nrf_cli("run --quiet --config " + (tmp / "exp.cfg").string() + " --out " + out, tmp).code, 0);
  for (const char* f : {"report.csv", "report.md", "curves.csv", "timing.csv", "config.txt"})
    EXPECT_TRUE(std::filesystem::exists(tmp / "results" / f)) << f;
  auto md = nrf_cli("report --in " + out + "/report.csv", tmp);
  ASSERT_EQ(md.code, 0);
  EXPECT_NE(md.out.find("| sine |"), std::string::npos);
  ASSERT_EQ(nrf_cli("report --format csv --in " + out + "/report.csv --out " + (tmp / "copy.csv").string(), tmp).code,
            0);
  EXPECT_EQ(slurp(tmp / "copy.csv"), slurp(tmp / "results" / "report.csv"));
}

}  // namespace
