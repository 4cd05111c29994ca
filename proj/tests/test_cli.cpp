#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gpvs/config.hpp"

using namespace gpvs;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GPVS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config defaults and overrides") {
  SECTION("defaults carry the training recipe") {
    const RunConfig cfg;
    CHECK(cfg.lr == 1e-4);
    CHECK(cfg.patience == 10);
    CHECK(cfg.beam == 10);
  }
  SECTION("set overrides parse typed values") {
    const RunConfig cfg = load_config("", {"lr=0.001", "epochs=3", "task=synonym"});
    CHECK(cfg.lr == 0.001);
    CHECK(cfg.epochs == 3);
    CHECK(cfg.task == "synonym");
  }
  SECTION("unknown keys are rejected") {
    CHECK_THROWS_AS(load_config("", {"learning_rate=0.1"}), ConfigError);
  }
  SECTION("kernel bounds are enforced for the gp variant") {
    CHECK_THROWS_AS(load_config("", {"v=0.001"}), ConfigError);
    CHECK_THROWS_AS(load_config("", {"r=50"}), ConfigError);
    CHECK_NOTHROW(load_config("", {"v=0.001", "variant=\"normal\""}));
  }
  SECTION("file plus overrides merge in order") {
    const fs::path dir = fresh_dir("gpvs_cfg_test");
    const fs::path cfg_path = dir / "cfg.json";
    std::ofstream(cfg_path) << R"({"lr": 0.01, "epochs": 7})";
    json effective;
    const RunConfig cfg = load_config(cfg_path.string(), {"epochs=9"}, &effective);
    CHECK(cfg.lr == 0.01);
    CHECK(cfg.epochs == 9);
    CHECK(effective["epochs"] == 9);
    fs::remove_all(dir);
  }
}

TEST_CASE("cli corpus-gen is deterministic and writes a manifest") {
  const fs::path a = fresh_dir("gpvs_cli_gen_a");
  const fs::path b = fresh_dir("gpvs_cli_gen_b");
  const std::string args =
      "corpus-gen --task copy --n-pairs 60 --vocab-size 20 --len-lo 3 --len-hi 6 --seed 5 "
      "--out ";
  REQUIRE(run_cli(args + a.string()) == 0);
  REQUIRE(run_cli(args + b.string()) == 0);
  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl", "vocab.txt"})
    CHECK(slurp(a / f) == slurp(b / f));

  const json manifest = json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["task"] == "copy");
  CHECK(manifest["seed"] == 5);
  CHECK(manifest["n_pairs"] == 60);
  // split sizes match the requested ratios within one pair
  const std::size_t dev = manifest["splits"]["dev"], test = manifest["splits"]["test"];
  CHECK(std::abs(static_cast<long>(dev) - 6) <= 1);
  CHECK(std::abs(static_cast<long>(test) - 6) <= 1);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("cli exit codes") {
  SECTION("usage error on a bad flag") {
    CHECK(run_cli("train --no-such-flag") == 2);
  }
  SECTION("usage error on a bad config value") {
    CHECK(run_cli("train --set v=0.001 --set corpus_dir=x --set out_dir=y") == 2);
  }
  SECTION("usage error when diversity eval gets a deterministic checkpoint") {
    const fs::path dir = fresh_dir("gpvs_cli_det");
    const std::string gen =
        "corpus-gen --task copy --n-pairs 30 --vocab-size 15 --len-lo 3 --len-hi 4 "
        "--seed 2 --out " + dir.string();
    REQUIRE(run_cli(gen) == 0);
    const std::string train =
        "train --set variant=\"deterministic\" --set epochs=0 --set corpus_dir=\"" +
        dir.string() + "\" --set out_dir=\"" + (dir / "run").string() + "\"";
    REQUIRE(run_cli(train) == 0);
    const std::string eval =
        "eval-diversity --checkpoint " + (dir / "run" / "model.ckpt").string() +
        " --corpus " + (dir / "test.jsonl").string() + " --vocab " +
        (dir / "vocab.txt").string() + " --out " + (dir / "div").string();
    CHECK(run_cli(eval) == 2);
    fs::remove_all(dir);
  }
}

TEST_CASE("cli train with zero epochs saves the initialized checkpoint") {
  const fs::path dir = fresh_dir("gpvs_cli_train0");
  REQUIRE(run_cli("corpus-gen --task copy --n-pairs 30 --vocab-size 15 --len-lo 3 "
                  "--len-hi 4 --seed 2 --out " + dir.string()) == 0);
  const std::string train = "train --set epochs=0 --set corpus_dir=\"" + dir.string() +
                            "\" --set out_dir=\"" + (dir / "run").string() + "\"";
  CHECK(run_cli(train) == 0);
  CHECK(fs::exists(dir / "run" / "model.ckpt"));
  CHECK(fs::exists(dir / "run" / "train_log.tsv"));
  CHECK(fs::exists(dir / "run" / "effective_config.json"));
  const json summary = json::parse(slurp(dir / "run" / "train_summary.json"));
  CHECK(summary["epochs_run"] == 0);
  CHECK(summary["status"] == "ok");
  fs::remove_all(dir);
}

TEST_CASE("cli gp-demo writes the csv schema") {
  const fs::path dir = fresh_dir("gpvs_cli_demo");
  const fs::path csv = dir / "demo.csv";
  REQUIRE(run_cli("gp-demo --v 1 --r 1 --sigma2 0 --n-train 5 --seed 3 --out " +
                  csv.string()) == 0);
  std::ifstream f(csv);
  std::string header;
  std::getline(f, header);
  CHECK(header == "x,sample_id,value,band_lo,band_hi");
  std::size_t prior_rows = 0, post_rows = 0;
  std::string line;
  while (std::getline(f, line)) {
    if (line.find("prior_") != std::string::npos) ++prior_rows;
    if (line.find("post_") != std::string::npos) ++post_rows;
  }
  CHECK(prior_rows == 5 * 101);
  CHECK(post_rows == 5 * 101);

  // deterministic per seed
  const fs::path csv2 = dir / "demo2.csv";
  REQUIRE(run_cli("gp-demo --v 1 --r 1 --sigma2 0 --n-train 5 --seed 3 --out " +
                  csv2.string()) == 0);
  CHECK(slurp(csv) == slurp(csv2));
  fs::remove_all(dir);
}

TEST_CASE("cli 1x1 grid trains and marks the best cell") {
  const fs::path dir = fresh_dir("gpvs_cli_grid");
  REQUIRE(run_cli("corpus-gen --task copy --n-pairs 40 --vocab-size 15 --len-lo 3 "
                  "--len-hi 4 --seed 2 --out " + dir.string()) == 0);
  const std::string grid =
      "grid --v-list 1.0 --r-list 1.0 --set epochs=1 --set batch_size=16 "
      "--set corpus_dir=\"" + dir.string() + "\" --set out_dir=\"" +
      (dir / "grid").string() + "\"";
  REQUIRE(run_cli(grid) == 0);
  std::ifstream f(dir / "grid" / "grid.csv");
  std::string header, row;
  std::getline(f, header);
  std::getline(f, row);
  CHECK(header == "v,r,dev_loss,dev_bleu2,best");
  CHECK(row.substr(row.size() - 2) == ",1");  // single cell is the best cell
  fs::remove_all(dir);
}
