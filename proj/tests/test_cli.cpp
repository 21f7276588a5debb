#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stcvae/data.hpp"
#include "stcvae/oracle.hpp"
#include "stcvae/verify.hpp"

namespace fs = std::filesystem;
using namespace stcvae;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "stcvae_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run cli(const std::string& args) {
  const fs::path out = workdir() / "stdout.txt", err = workdir() / "stderr.txt";
  const std::string cmd =
      std::string("\"") + STCVAE_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

const fs::path& toy_dataset() {
  static const fs::path p = [] {
    auto path = workdir() / "toy.fvds";
    const auto r = cli("generate-toy --factor-sizes 4,4,3 --image-size 32 --out \"" + path.string() + "\" --seed 2");
    REQUIRE(r.code == 0);
    return path;
  }();
  return p;
}

std::string train_config(std::size_t b_hat, const std::string& loss) {
  std::ostringstream s;
  s << R"({"dataset": ")" << toy_dataset().string() << R"(", "n": 4, "b_hat": )" << b_hat << R"(, "loss": ")" << loss
    << R"(", "beta": 3, "neuron_num": 8, "iterations": 5, "batch_size": 8, "lr": 0.001,
        "traversal": {"steps": 5, "dims": [0, 2]},
        "eval": {"factor_votes": 20, "factor_eval_votes": 10, "factor_batch": 8, "factor_std_samples": 32,
                 "metric_samples": 40}})";
  return s.str();
}

}  // namespace

TEST_CASE("help for every subcommand") {
  for (const char* sub : {"verify-oracles", "train", "sweep", "metrics", "report", "generate-toy"}) {
    CAPTURE(sub);
    auto r = cli(std::string(sub) + " --help");
    CHECK(r.code == 0);
    CHECK(r.out.find("--") != std::string::npos);
  }
  CHECK(cli("--help").code == 0);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("train").code == 2);
  CHECK(cli("train --config /definitely/not/here.json").code == 2);
  CHECK(cli("sweep --config x --workers 0").code == 2);

  write(workdir() / "unknown.json", R"({"dataset": "toy.fvds", "betta": 3})");
  auto r = cli("train --config \"" + (workdir() / "unknown.json").string() + "\" --out x");
  CHECK(r.code == 2);
  CHECK(r.err.find("'betta'") != std::string::npos);
}

TEST_CASE("missing dataset names the path") {
  write(workdir() / "nodata.json", R"({"dataset": "absent/toy.fvds", "out_dir": "o"})");
  auto r = cli("train --config \"" + (workdir() / "nodata.json").string() + "\"");
  CHECK(r.code == 1);
  CHECK(r.err.find((workdir() / "absent" / "toy.fvds").string()) != std::string::npos);
}

TEST_CASE("verify-oracles quick passes") {
  auto r = cli("verify-oracles --quick");
  CHECK(r.code == 0);
  for (const char* suite : {"gaussian-identity", "inference-1", "telescoping", "estimator-accuracy", "gradient-check"})
    CHECK(r.out.find(suite) != std::string::npos);
}

TEST_CASE("a sign error in the grouped TC fails the inference-1 suite") {
  VerifyOptions opt;
  opt.quick = true;
  opt.hooks.grouped_tc = [](const GaussianSpec& s, const LatentLayout& l) { return -gaussian_grouped_tc(s, l); };
  const auto results = verify_oracles(opt);
  bool saw = false;
  for (const auto& r : results) {
    if (r.name == "inference-1") {
      saw = true;
      CHECK_FALSE(r.passed());
      CHECK(r.first_failure.find("negative") != std::string::npos);
    } else {
      CHECK(r.passed());
    }
  }
  CHECK(saw);
  CHECK(format_results(results).find("FAIL") != std::string::npos);
}

TEST_CASE("train, metrics and the singleton-group control") {
  const fs::path a = workdir() / "train_a", b = workdir() / "train_b";
  write(workdir() / "train_a.json", train_config(1, "stcvae"));
  write(workdir() / "train_b.json", train_config(1, "tcvae"));
  auto ra = cli("train --config \"" + (workdir() / "train_a.json").string() + "\" --out \"" + a.string() + "\" --seed 3");
  auto rb = cli("train --config \"" + (workdir() / "train_b.json").string() + "\" --out \"" + b.string() + "\" --seed 3");
  REQUIRE(ra.code == 0);
  REQUIRE(rb.code == 0);
  CHECK(slurp(a / "record.csv") == slurp(b / "record.csv"));
  CHECK(fs::exists(a / "model.json"));
  CHECK(fs::exists(a / "model.bin"));

  // 5 steps x 2 dims of 32x32 tiles
  const std::string pgm = slurp(a / "traversal.pgm");
  CHECK(pgm.rfind("P5\n160 64\n255\n", 0) == 0);
  CHECK(pgm.size() == std::string("P5\n160 64\n255\n").size() + 160 * 64);

  auto m = cli("metrics --checkpoint \"" + (a / "model").string() + "\" --dataset \"" + toy_dataset().string() +
               "\" --b-hat 2 --batch 16 --quick");
  CHECK(m.code == 0);
  CHECK(m.out.find("\"mig\"") != std::string::npos);
  auto m2 = cli("metrics --checkpoint \"" + (a / "model").string() + "\" --dataset \"" + toy_dataset().string() +
                "\" --b-hat 2 --batch 16 --quick");
  CHECK(m.out == m2.out);
  CHECK(cli("metrics --checkpoint \"" + (a / "nothing").string() + "\" --dataset \"" + toy_dataset().string() + "\"")
            .code == 1);
}

TEST_CASE("sweep and report") {
  const fs::path out = workdir() / "sweep";
  std::ostringstream cfg;
  cfg << R"({"dataset": ")" << toy_dataset().string() << R"(", "latent_dims": [4], "capacities": [6, 10],
      "granularities": ["1/2", "1"], "betas": [2], "seeds": 2, "iterations": 4, "batch_size": 8, "lr": 0.001,
      "eval": {"factor_votes": 20, "factor_eval_votes": 10, "factor_batch": 8, "factor_std_samples": 32,
               "metric_samples": 40}})";
  write(workdir() / "sweep.json", cfg.str());
  auto s = cli("sweep --config \"" + (workdir() / "sweep.json").string() + "\" --out \"" + out.string() +
               "\" --workers 2");
  REQUIRE(s.code == 0);
  CHECK(fs::exists(out / "sweep.csv"));
  CHECK(fs::exists(out / "manifest.json"));

  auto r = cli("report \"" + (out / "sweep.csv").string() + "\"");
  CHECK(r.code == 0);
  CHECK(r.out.find("baseline granularity") != std::string::npos);
  const std::string svg = slurp(out / "trajectory.svg");
  std::size_t circles = 0;
  for (auto p = svg.find("class=\"trial\""); p != std::string::npos; p = svg.find("class=\"trial\"", p + 1)) ++circles;
  CHECK(circles == 8);
  auto again = cli("report \"" + (out / "sweep.csv").string() + "\" --out \"" + (workdir() / "rep2").string() + "\"");
  CHECK(slurp(workdir() / "rep2" / "trajectory.svg") == svg);

  std::string broken = slurp(out / "sweep.csv");
  const auto second = broken.find('\n', broken.find('\n') + 1);
  broken.insert(second, ",extra");
  write(workdir() / "broken.csv", broken);
  auto bad = cli("report \"" + (workdir() / "broken.csv").string() + "\"");
  CHECK(bad.code == 1);
  CHECK(bad.err.find("row 2") != std::string::npos);
}
