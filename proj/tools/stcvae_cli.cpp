// stcvae command-line entry point.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "stcvae/checkpoint.hpp"
#include "stcvae/config.hpp"
#include "stcvae/errors.hpp"
#include "stcvae/report.hpp"
#include "stcvae/sweep.hpp"
#include "stcvae/training.hpp"
#include "stcvae/verify.hpp"

namespace fs = std::filesystem;
using namespace stcvae;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

void apply_quick(EvalSettings& e) {
  e.factor.votes = 200;
  e.factor.eval_votes = 100;
  e.factor.std_samples = 2000;
  e.metric_samples = std::min<std::size_t>(e.metric_samples, 2000);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

FactorDataset load_dataset(const fs::path& path) {
  if (path.empty()) throw ConfigError("config key 'dataset' is required");
  if (!fs::exists(path)) throw DataError("dataset file not found: " + path.string());
  return read_fvds(path);
}

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  bool quick = false;
};

int cmd_verify(const Common& c) {
  VerifyOptions opt;
  opt.quick = c.quick;
  opt.seed = c.seed.value_or(0);
  const auto results = verify_oracles(opt);
  std::cout << format_results(results);
  for (const auto& r : results)
    if (!r.passed()) {
      std::cerr << "verify-oracles: " << r.name << " failed: " << r.first_failure << '\n';
      return kFailure;
    }
  return kOk;
}

int cmd_train(const Common& c) {
  RunConfig rc = load_run_config(c.config);
  if (!c.out.empty()) rc.out_dir = c.out;
  if (c.seed) rc.seed = *c.seed;
  if (c.quick) apply_quick(rc.eval);
  if (rc.out_dir.empty()) throw ConfigError("config key 'out_dir' (or --out) is required");
  const FactorDataset ds = load_dataset(rc.dataset);
  const TrialConfig tc = trial_config(rc, ds.shape());

  std::optional<VaeModel<float>> model;
  const TrialRecord rec = run_trial(tc, ds, rc.seed, &model);
  fs::create_directories(rc.out_dir);
  write_text(rc.out_dir / "record.csv", records_csv({rec}));
  std::cout << kCsvHeader << '\n' << csv_row(rec) << '\n';
  if (!model) {
    std::cerr << "train: trial " << rec.status << '\n';
    return kFailure;
  }

  nlohmann::json meta{{"seed", rec.seed},
                      {"b_hat", rec.b_hat},
                      {"beta", rec.beta},
                      {"loss", rc.loss == LossKind::kBetaTcvae ? "tcvae" : "stcvae"},
                      {"iterations", rc.iterations},
                      {"final_elbo", rec.final_elbo}};
  write_checkpoint(rc.out_dir / "model", *model, meta);

  std::vector<std::size_t> dims = rc.traversal_dims;
  if (dims.empty()) {
    dims.resize(rc.n);
    std::iota(dims.begin(), dims.end(), std::size_t{0});
  }
  write_pgm(traversal_strip(*model, dims, rc.traversal_steps), rc.out_dir / "traversal.pgm");
  std::cerr << "wrote " << (rc.out_dir / "record.csv").string() << ", " << (rc.out_dir / "model.json").string()
            << ", " << (rc.out_dir / "traversal.pgm").string() << '\n';
  return kOk;
}

int cmd_sweep(const Common& c) {
  RunConfig rc = load_run_config(c.config);
  if (!c.out.empty()) rc.out_dir = c.out;
  if (c.seed) rc.seed = *c.seed;
  if (c.workers) rc.workers = *c.workers;
  if (c.quick) apply_quick(rc.eval);
  SweepConfig sc = sweep_config(rc);
  load_dataset(sc.dataset);

  SweepHooks hooks;
  const std::size_t total = expand_grid(sc).size();
  std::size_t seen = 0;
  hooks.on_record = [&](const TrialRecord& r) {
    ++seen;
    std::cerr << "[" << seen << "] n=" << r.n << " cap=" << r.neuron_num << " b=" << r.b_hat << " beta=" << r.beta
              << " seed=" << r.seed << " " << r.status << '\n';
  };
  const SweepResult res = run_sweep(sc, hooks);
  std::size_t failed = 0;
  for (const auto& r : res.records) failed += r.ok() ? 0 : 1;
  std::cout << "trials " << res.records.size() << "/" << total << " (resumed " << res.resumed << ", failed "
            << failed << ")\n";
  if (!res.complete) return kFailure;
  std::cout << "csv " << res.csv.string() << "\nmanifest " << res.manifest.string() << '\n';
  return kOk;
}

int cmd_metrics(const Common& c, const std::string& checkpoint, const std::string& dataset, std::size_t b_hat,
                std::size_t batch) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  const FactorDataset ds = load_dataset(dataset);
  if (!(ck.model.spec().input == ds.shape())) throw DataError("checkpoint input shape does not match the dataset");
  EvalSettings eval;
  if (c.quick) apply_quick(eval);
  std::vector<std::size_t> pool(ds.count);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  const LatentLayout layout = make_layout(ck.model.spec().latent_dim, b_hat);
  const ModelEvaluation ev = evaluate_model(ck.model, ds, pool, layout, eval, batch, c.seed.value_or(0));
  nlohmann::json j{{"mig", ev.scores.mig},
                   {"factor_score", ev.scores.factor_score},
                   {"sap", ev.scores.sap},
                   {"index_code_mi", ev.index_code_mi},
                   {"tc_grouped", ev.tc_grouped},
                   {"dimwise_kl", ev.dimwise_kl},
                   {"omniscient_count", ev.scores.omniscient_count()},
                   {"per_dim_entropy", ev.scores.per_dim_entropy}};
  const std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "metrics.json", text);
  }
  return kOk;
}

int cmd_report(const Common& c, const std::string& records, double threshold) {
  const auto recs = read_records_csv(records);
  const SweepReport rep = build_report(recs, threshold);
  const fs::path out = c.out.empty() ? fs::path(records).parent_path() : fs::path(c.out);
  if (!out.empty()) fs::create_directories(out);
  write_text(out / "trajectory.svg", rep.svg);
  write_text(out / "region.txt", rep.region_table);
  std::cout << rep.fit_summary << '\n' << rep.region_table << '\n' << rep.baseline_line << '\n';
  std::cerr << "wrote " << (out / "trajectory.svg").string() << '\n';
  return kOk;
}

int cmd_generate_toy(const Common& c, const std::vector<std::uint32_t>& sizes, std::size_t image_size) {
  if (c.out.empty()) throw ConfigError("--out <file.fvds> is required");
  const FactorDataset ds = generate_toy_factors(sizes, image_size, c.seed.value_or(0));
  const fs::path out(c.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_fvds(ds, out);
  std::cout << "wrote " << ds.count << " images (" << image_size << "x" << image_size << ") to " << out.string()
            << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grouped total-correlation VAE toolkit"};
  app.require_subcommand(1);
  Common common;

  auto* verify = app.add_subcommand("verify-oracles", "Run the oracle and estimator self-checks");
  verify->add_flag("--quick", common.quick, "Smaller statistical samples, looser tolerance");
  verify->add_option("--seed", common.seed, "Base seed");

  auto* train = app.add_subcommand("train", "Train and evaluate one model");
  train->add_option("--config", common.config, "JSON run config")->required()->check(CLI::ExistingFile);
  train->add_option("--out", common.out, "Output directory (overrides out_dir)");
  train->add_option("--seed", common.seed, "Trial seed (overrides seed)");
  train->add_flag("--quick", common.quick, "Smaller metric samples");

  auto* sweep = app.add_subcommand("sweep", "Run a capacity x granularity x beta x seed grid");
  sweep->add_option("--config", common.config, "JSON run config")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", common.out, "Output directory (overrides out_dir)");
  sweep->add_option("--seed", common.seed, "First seed (overrides seed)");
  sweep->add_option("--workers", common.workers, "Parallel trials")->check(CLI::PositiveNumber);
  sweep->add_flag("--quick", common.quick, "Smaller metric samples");

  std::string checkpoint, dataset;
  std::size_t metrics_b_hat = 1, metrics_batch = 256;
  auto* metrics = app.add_subcommand("metrics", "Score a checkpoint against a dataset's factors");
  metrics->add_option("--checkpoint", checkpoint, "Checkpoint stem (model for model.json/model.bin)")->required();
  metrics->add_option("--dataset", dataset, "FVDS dataset")->required();
  metrics->add_option("--b-hat", metrics_b_hat, "Grouping factor for the grouped TC estimate");
  metrics->add_option("--batch", metrics_batch, "Evaluation batch size")->check(CLI::Range(2, 1 << 20));
  metrics->add_option("--out", common.out, "Also write metrics.json here");
  metrics->add_option("--seed", common.seed, "Evaluation seed");
  metrics->add_flag("--quick", common.quick, "Smaller metric samples");

  std::string records;
  double threshold = 0.5;
  auto* report = app.add_subcommand("report", "Trajectory plot, region table and baseline line from a sweep CSV");
  report->add_option("records", records, "Sweep CSV")->required();
  report->add_option("--out", common.out, "Output directory (default: next to the CSV)");
  report->add_option("--threshold", threshold, "Region occurrence threshold")->check(CLI::Range(0.0, 1.0));

  std::vector<std::uint32_t> sizes{8, 8, 4, 3};
  std::size_t image_size = 32;
  auto* toy = app.add_subcommand("generate-toy", "Write a synthetic factor dataset");
  toy->add_option("--factor-sizes", sizes, "Values per factor")->delimiter(',');
  toy->add_option("--image-size", image_size, "32 or 64");
  toy->add_option("--out", common.out, "Output .fvds file")->required();
  toy->add_option("--seed", common.seed, "Storage-order seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*verify) return cmd_verify(common);
    if (*train) return cmd_train(common);
    if (*sweep) return cmd_sweep(common);
    if (*metrics) return cmd_metrics(common, checkpoint, dataset, metrics_b_hat, metrics_batch);
    if (*report) return cmd_report(common, records, threshold);
    if (*toy) return cmd_generate_toy(common, sizes, image_size);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
