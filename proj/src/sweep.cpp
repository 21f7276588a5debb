#include "stcvae/sweep.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "stcvae/checkpoint.hpp"
#include "stcvae/errors.hpp"
#include "stcvae/training.hpp"

namespace stcvae {

namespace {

using json = nlohmann::json;

constexpr const char* kVersion = "stcvae 0.1.0";

// splitmix64 step, used to derive independent stream seeds from a trial seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::size_t largest_proper_divisor(std::size_t n) { return valid_grouping_factors(n).back(); }

template <typename S>
Mat<S> gaussian_noise(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<S> normal;
  Mat<S> out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = normal(rng);
  return out;
}

}  // namespace

ModelEvaluation evaluate_model(const VaeModel<float>& model, const FactorDataset& ds,
                               const std::vector<std::size_t>& pool, const LatentLayout& layout,
                               const EvalSettings& eval, std::size_t batch_size, std::uint64_t seed) {
  if (pool.size() < 2) throw MetricError("evaluation pool needs at least 2 samples");
  const std::size_t n = model.spec().latent_dim;
  const PairingLevels levels = pairing_levels(n);
  const auto latent = static_cast<Eigen::Index>(n);

  ModelEvaluation out;
  BatchSampler sampler(pool, std::min(batch_size, pool.size()), derive_seed(seed, 0));
  std::mt19937_64 rng(derive_seed(seed, 1));
  std::vector<PosteriorBatch> batches;
  for (std::size_t b = 0; b < eval.eval_batches; ++b) {
    const Mat<float> x = image_batch(ds, sampler.next());
    const auto enc = model.encode(x);
    const Mat<float> z = reparameterize(enc.mu, enc.log_var, gaussian_noise<float>(rng, x.rows(), latent));
    batches.push_back(to_posterior_batch(enc.mu, enc.log_var, z, pool.size()));
    const InfoEstimate info = estimate_info(batches.back(), layout, levels, 0.0);
    out.index_code_mi += info.index_code_mi;
    out.tc_grouped += info.tc_grouped;
    out.dimwise_kl += info.dimwise_kl;
  }
  const double nb = static_cast<double>(eval.eval_batches);
  out.index_code_mi /= nb;
  out.tc_grouped /= nb;
  out.dimwise_kl /= nb;
  const OmniscientReport omni = omniscient_flags(batches, eval.epsilon, eval.delta);
  out.scores.omniscient_flags = omni.flags;
  out.scores.per_dim_entropy = omni.mean_entropy;

  std::vector<std::size_t> idx(ds.count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (idx.size() > eval.metric_samples) {
    std::mt19937_64 mrng(derive_seed(seed, 2));
    std::shuffle(idx.begin(), idx.end(), mrng);
    idx.resize(eval.metric_samples);
    std::sort(idx.begin(), idx.end());
  }
  const Eigen::MatrixXd means = latent_means(model, ds, idx);
  const Eigen::MatrixXi factors = factor_batch(ds, idx);
  out.scores.mig = mig(means, factors);
  out.scores.sap = sap(means, factors);
  const EncodeFn encode = [&](std::span<const std::size_t> i) { return latent_means(model, ds, i); };
  out.scores.factor_score = factor_vae_score(encode, ds, derive_seed(seed, 3), eval.factor);
  return out;
}

TrialRecord run_trial(const TrialConfig& cfg, const FactorDataset& ds, std::uint64_t seed,
                      std::optional<VaeModel<float>>* trained) {
  retain_heap();
  validate(ds);
  validate(cfg.model);
  if (cfg.iterations == 0) throw ConfigError("iterations must be >= 1");
  if (cfg.batch_size < 2) throw ConfigError("batch size must be >= 2");

  const std::size_t n = cfg.model.latent_dim;
  const LatentLayout layout = make_layout(n, cfg.loss == LossKind::kBetaTcvae ? 1 : cfg.b_hat);
  const LossConfig loss_cfg{cfg.beta, cfg.alpha, layout};

  TrialRecord rec;
  rec.seed = seed;
  rec.n = n;
  rec.b_hat = layout.b_hat;
  rec.g = layout.granularity();
  rec.beta = cfg.beta;
  rec.neuron_num = cfg.model.neuron_num;
  rec.layers = cfg.model.layers;
  rec.arch = cfg.model.arch;

  // Held-out split.
  std::vector<std::size_t> order(ds.count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 split_rng(derive_seed(seed, 0));
  std::shuffle(order.begin(), order.end(), split_rng);
  auto holdout_n = static_cast<std::size_t>(std::ceil(cfg.eval.holdout_fraction * static_cast<double>(ds.count)));
  holdout_n = std::clamp<std::size_t>(holdout_n, 1, ds.count - 1);
  const std::vector<std::size_t> holdout(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(holdout_n));
  const std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(holdout_n), order.end());
  const std::uint64_t elbo_seed = derive_seed(seed, 1);

  VaeModel<float> model(cfg.model, derive_seed(seed, 2));
  rec.param_count = model.param_count();
  rec.initial_elbo = evaluate_elbo(model, ds, holdout, elbo_seed).elbo;

  BatchSampler sampler(train, std::min(cfg.batch_size, train.size()), derive_seed(seed, 3));
  std::mt19937_64 noise_rng(derive_seed(seed, 4));
  const auto latent = static_cast<Eigen::Index>(n);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto idx = sampler.next();
    const Mat<float> x = image_batch(ds, idx);
    const Mat<float> noise = gaussian_noise<float>(noise_rng, x.rows(), latent);
    model.params().zero_grad();
    try {
      loss_and_gradients(model, x, noise, cfg.loss, loss_cfg, train.size());
      adam_step(model.params(), cfg.lr);
    } catch (const TrainingError&) {
      rec.status = "diverged@" + std::to_string(it);
      return rec;
    }
  }

  const ElboReport fin = evaluate_elbo(model, ds, holdout, elbo_seed);
  if (!std::isfinite(fin.elbo)) {
    rec.status = "diverged@" + std::to_string(cfg.iterations);
    return rec;
  }
  rec.final_elbo = fin.elbo;
  rec.recon = fin.recon;

  const ModelEvaluation ev = evaluate_model(model, ds, train, layout, cfg.eval, cfg.batch_size, derive_seed(seed, 5));
  rec.index_code_mi = ev.index_code_mi;
  rec.tc_grouped = ev.tc_grouped;
  rec.dimwise_kl = ev.dimwise_kl;
  rec.mig = ev.scores.mig;
  rec.sap = ev.scores.sap;
  rec.factor_score = ev.scores.factor_score;
  rec.omniscient_count = ev.scores.omniscient_count();

  if (trained) trained->emplace(std::move(model));
  return rec;
}

// ---------------------------------------------------------------------------

GridKey key_of(const TrialRecord& r) { return {r.n, r.neuron_num, r.b_hat, r.beta, r.seed}; }

std::vector<GridKey> expand_grid(const SweepConfig& cfg) {
  if (cfg.latent_dims.empty()) throw ConfigError("latent_dims list is empty");
  if (cfg.capacities.empty()) throw ConfigError("capacity list is empty");
  if (cfg.betas.empty()) throw ConfigError("beta list is empty");
  if (!cfg.all_granularities && cfg.granularities.empty()) throw ConfigError("granularity list is empty");
  if (cfg.seeds == 0) throw ConfigError("seeds must be >= 1");
  if (cfg.iterations == 0) throw ConfigError("iterations must be >= 1");

  std::vector<GridKey> keys;
  for (std::size_t n : cfg.latent_dims) {
    std::vector<std::size_t> factors;
    if (cfg.all_granularities) {
      factors = valid_grouping_factors(n);
    } else {
      for (const Granularity& g : cfg.granularities) {
        const auto layout = layout_for_granularity(n, g);
        if (!layout)
          throw ConfigError("granularity " + std::to_string(g.num) + "/" + std::to_string(g.den) +
                            " is not available for n=" + std::to_string(n));
        factors.push_back(layout->b_hat);
      }
    }
    std::sort(factors.begin(), factors.end());
    factors.erase(std::unique(factors.begin(), factors.end()), factors.end());
    for (std::size_t cap : cfg.capacities)
      for (std::size_t b : factors)
        for (double beta : cfg.betas)
          for (std::size_t s = 0; s < cfg.seeds; ++s) keys.push_back({n, cap, b, beta, cfg.base_seed + s});
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return keys;
}

namespace {

json record_to_json(const TrialRecord& r) {
  json j{{"seed", r.seed},
         {"n", r.n},
         {"b_hat", r.b_hat},
         {"m", r.g.den},
         {"beta", r.beta},
         {"neuron_num", r.neuron_num},
         {"layers", r.layers},
         {"arch", to_string(r.arch)},
         {"param_count", r.param_count},
         {"initial_elbo", r.initial_elbo},
         {"final_elbo", r.final_elbo},
         {"recon", r.recon},
         {"index_code_mi", r.index_code_mi},
         {"tc_grouped", r.tc_grouped},
         {"dimwise_kl", r.dimwise_kl},
         {"mig", r.mig},
         {"factor_score", r.factor_score},
         {"sap", r.sap},
         {"omniscient_count", r.omniscient_count},
         {"status", r.status}};
  j["wall_time_s"] = r.wall_time_s ? json(*r.wall_time_s) : json(nullptr);
  return j;
}

TrialRecord record_from_json(const json& j) {
  TrialRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.n = j.at("n").get<std::size_t>();
  r.b_hat = j.at("b_hat").get<std::size_t>();
  r.g = {r.b_hat, j.at("m").get<std::size_t>()};
  r.beta = j.at("beta").get<double>();
  r.neuron_num = j.at("neuron_num").get<std::size_t>();
  r.layers = j.at("layers").get<std::size_t>();
  r.arch = arch_from_string(j.at("arch").get<std::string>());
  r.param_count = j.at("param_count").get<std::size_t>();
  r.initial_elbo = j.at("initial_elbo").get<double>();
  r.final_elbo = j.at("final_elbo").get<double>();
  r.recon = j.at("recon").get<double>();
  r.index_code_mi = j.at("index_code_mi").get<double>();
  r.tc_grouped = j.at("tc_grouped").get<double>();
  r.dimwise_kl = j.at("dimwise_kl").get<double>();
  r.mig = j.at("mig").get<double>();
  r.factor_score = j.at("factor_score").get<double>();
  r.sap = j.at("sap").get<double>();
  r.omniscient_count = j.at("omniscient_count").get<std::size_t>();
  r.status = j.at("status").get<std::string>();
  if (!j.at("wall_time_s").is_null()) r.wall_time_s = j.at("wall_time_s").get<double>();
  return r;
}

// Complete lines only: a torn final line from an interrupted write is dropped.
std::map<GridKey, TrialRecord> load_journal(const std::filesystem::path& path) {
  std::map<GridKey, TrialRecord> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  while (true) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    TrialRecord r = record_from_json(j);
    out[key_of(r)] = std::move(r);
  }
  return out;
}

json sweep_config_json(const SweepConfig& cfg) {
  json g = json::array();
  for (const auto& x : cfg.granularities) g.push_back(std::to_string(x.num) + "/" + std::to_string(x.den));
  return {{"dataset", cfg.dataset.string()},
          {"arch", to_string(cfg.arch)},
          {"layers", cfg.layers},
          {"latent_dims", cfg.latent_dims},
          {"capacities", cfg.capacities},
          {"granularities", cfg.all_granularities ? json("all") : g},
          {"betas", cfg.betas},
          {"seeds", cfg.seeds},
          {"base_seed", cfg.base_seed},
          {"iterations", cfg.iterations},
          {"batch_size", cfg.batch_size},
          {"lr", cfg.lr},
          {"alpha", cfg.alpha},
          {"eval",
           {{"eval_batches", cfg.eval.eval_batches},
            {"epsilon", cfg.eval.epsilon},
            {"delta", cfg.eval.delta},
            {"metric_samples", cfg.eval.metric_samples},
            {"holdout_fraction", cfg.eval.holdout_fraction},
            {"factor_votes", cfg.eval.factor.votes},
            {"factor_eval_votes", cfg.eval.factor.eval_votes},
            {"factor_batch", cfg.eval.factor.batch},
            {"factor_std_samples", cfg.eval.factor.std_samples}}},
          {"record_wall_time", cfg.record_wall_time}};
}

}  // namespace

SweepResult run_sweep(const SweepConfig& cfg, const SweepHooks& hooks) {
  const std::vector<GridKey> keys = expand_grid(cfg);
  const FactorDataset ds = read_fvds(cfg.dataset);  // aborts before any trial
  if (cfg.out_dir.empty()) throw ConfigError("sweep output directory not set");
  std::filesystem::create_directories(cfg.out_dir);

  SweepResult result;
  const auto journal_path = cfg.out_dir / "trials.jsonl";
  std::map<GridKey, TrialRecord> done = load_journal(journal_path);
  std::vector<GridKey> todo;
  for (const auto& k : keys) {
    if (done.count(k))
      ++result.resumed;
    else
      todo.push_back(k);
  }
  // Drop journal entries that are not part of this grid.
  for (auto it = done.begin(); it != done.end();)
    it = std::binary_search(keys.begin(), keys.end(), it->first) ? std::next(it) : done.erase(it);

  {
    // Rewrite the journal so a torn trailing line cannot corrupt later appends.
    std::ofstream out(journal_path, std::ios::binary | std::ios::trunc);
    for (const auto& [k, r] : done) out << record_to_json(r).dump() << '\n';
  }

  std::mutex mu;
  std::ofstream journal(journal_path, std::ios::binary | std::ios::app);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> finished{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;

  auto worker = [&]() {
    while (!stop.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      const GridKey& k = todo[i];
      TrialConfig tc;
      tc.model = ModelSpec{cfg.arch, ds.shape(), k.n, k.neuron_num, cfg.layers};
      tc.b_hat = k.b_hat;
      tc.beta = k.beta;
      tc.alpha = cfg.alpha;
      tc.iterations = cfg.iterations;
      tc.batch_size = cfg.batch_size;
      tc.lr = cfg.lr;
      tc.eval = cfg.eval;
      TrialRecord rec;
      try {
        const auto t0 = std::chrono::steady_clock::now();
        rec = run_trial(tc, ds, k.seed);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (cfg.record_wall_time) rec.wall_time_s = secs;
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        stop = true;
        return;
      }
      std::lock_guard lock(mu);
      journal << record_to_json(rec).dump() << '\n';
      journal.flush();
      if (hooks.on_record) hooks.on_record(rec);
      done[k] = rec;
      const std::size_t count = ++finished;
      if (hooks.stop_after && count >= *hooks.stop_after) stop = true;
    }
  };

  const std::size_t nworkers = std::max<std::size_t>(1, std::min(cfg.workers, todo.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < nworkers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  journal.close();
  if (failure) std::rethrow_exception(failure);

  for (const auto& [k, r] : done) result.records.push_back(r);
  result.complete = result.records.size() == keys.size();
  if (!result.complete) return result;

  result.csv = cfg.out_dir / "sweep.csv";
  {
    std::ofstream out(result.csv, std::ios::binary | std::ios::trunc);
    out << records_csv(result.records);
  }
  result.manifest = cfg.out_dir / "manifest.json";
  {
    std::size_t failed = 0;
    for (const auto& r : result.records) failed += r.ok() ? 0 : 1;
    json m{{"version", kVersion},
           {"config", sweep_config_json(cfg)},
           {"trials", result.records.size()},
           {"failed", failed},
           {"csv", result.csv.filename().string()}};
    std::ofstream out(result.manifest, std::ios::binary | std::ios::trunc);
    out << m.dump(2) << '\n';
  }
  return result;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t c = line.find(',', pos);
    out.push_back(line.substr(pos, c == std::string::npos ? std::string::npos : c - pos));
    if (c == std::string::npos) break;
    pos = c + 1;
  }
  return out;
}

}  // namespace

std::string csv_row(const TrialRecord& r) {
  char g[32];
  std::snprintf(g, sizeof g, "%.6f", r.g.value());
  std::ostringstream s;
  s << r.seed << ',' << r.n << ',' << r.b_hat << ',' << g << ',' << fmt_real(r.beta) << ',' << r.neuron_num << ','
    << r.layers << ',' << to_string(r.arch) << ',' << r.param_count << ',';
  if (r.ok()) {
    s << fmt_real(r.final_elbo) << ',' << fmt_real(r.recon) << ',' << fmt_real(r.index_code_mi) << ','
      << fmt_real(r.tc_grouped) << ',' << fmt_real(r.dimwise_kl) << ',' << fmt_real(r.mig) << ','
      << fmt_real(r.factor_score) << ',' << fmt_real(r.sap) << ',' << r.omniscient_count << ',';
  } else {
    s << ",,,,,,,,,";
  }
  if (r.wall_time_s) {
    char w[32];
    std::snprintf(w, sizeof w, "%.3f", *r.wall_time_s);
    s << w;
  }
  s << ',' << r.status;
  return s.str();
}

std::string records_csv(std::vector<TrialRecord> records) {
  std::sort(records.begin(), records.end(), [](const TrialRecord& a, const TrialRecord& b) {
    const auto ka = std::make_tuple(to_string(a.arch), a.layers, key_of(a));
    const auto kb = std::make_tuple(to_string(b.arch), b.layers, key_of(b));
    return ka < kb;
  });
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : records) out += csv_row(r) + "\n";
  return out;
}

std::vector<TrialRecord> parse_records_csv(const std::string& text) {
  std::vector<TrialRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t row = 0;
  auto fail = [&](const std::string& what) -> FormatError {
    return FormatError("sweep CSV row " + std::to_string(row) + ": " + what);
  };
  if (!std::getline(in, line)) throw FormatError("sweep CSV is empty");
  ++row;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw fail("unexpected header");

  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 20) throw fail("expected 20 fields, found " + std::to_string(f.size()));

    auto uint_field = [&](std::size_t i, const char* name) {
      std::uint64_t v = 0;
      const auto* end = f[i].data() + f[i].size();
      const auto [p, ec] = std::from_chars(f[i].data(), end, v);
      if (f[i].empty() || ec != std::errc() || p != end) throw fail(std::string("bad ") + name + " '" + f[i] + "'");
      return v;
    };
    auto real_field = [&](std::size_t i, const char* name) {
      double v = 0.0;
      const auto* end = f[i].data() + f[i].size();
      const auto [p, ec] = std::from_chars(f[i].data(), end, v);
      if (f[i].empty() || ec != std::errc() || p != end || !std::isfinite(v))
        throw fail(std::string("bad ") + name + " '" + f[i] + "'");
      return v;
    };

    TrialRecord r;
    r.seed = uint_field(0, "seed");
    r.n = uint_field(1, "n");
    r.b_hat = uint_field(2, "b_hat");
    std::size_t m = 0;
    try {
      m = largest_proper_divisor(r.n);
    } catch (const Error&) {
      throw fail("invalid latent size " + f[1]);
    }
    if (r.b_hat == 0 || r.n % r.b_hat != 0 || r.b_hat == r.n) throw fail("b_hat does not divide n");
    r.g = {r.b_hat, m};
    const double g = real_field(3, "g");
    if (std::abs(g - r.g.value()) > 5e-6) throw fail("g does not equal b_hat/m");
    r.beta = real_field(4, "beta");
    r.neuron_num = uint_field(5, "neuron_num");
    r.layers = uint_field(6, "layers");
    try {
      r.arch = arch_from_string(f[7]);
    } catch (const Error&) {
      throw fail("unknown arch '" + f[7] + "'");
    }
    r.param_count = uint_field(8, "param_count");
    r.status = f[19];
    if (r.status != "ok" && r.status.rfind("diverged@", 0) != 0) throw fail("bad status '" + r.status + "'");
    if (r.ok()) {
      r.final_elbo = real_field(9, "final_elbo");
      r.recon = real_field(10, "recon");
      r.index_code_mi = real_field(11, "index_code_mi");
      r.tc_grouped = real_field(12, "tc_grouped");
      r.dimwise_kl = real_field(13, "dimwise_kl");
      r.mig = real_field(14, "mig");
      r.factor_score = real_field(15, "factor_score");
      r.sap = real_field(16, "sap");
      r.omniscient_count = uint_field(17, "omniscient_count");
    }
    if (!f[18].empty()) r.wall_time_s = real_field(18, "wall_time_s");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<TrialRecord> read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open records file " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_records_csv(text);
}

// ---------------------------------------------------------------------------
// Trajectory analysis

std::vector<OptimalPoint> optimal_granularity_points(const std::vector<TrialRecord>& records) {
  using GroupKey = std::tuple<std::string, std::size_t, double, std::size_t>;
  std::map<GroupKey, std::vector<const TrialRecord*>> groups;
  for (const auto& r : records)
    if (r.ok()) groups[{to_string(r.arch), r.layers, r.beta, r.neuron_num}].push_back(&r);

  auto better = [](double elbo, double g, double best_elbo, double best_g) {
    return elbo > best_elbo || (elbo == best_elbo && g < best_g);
  };

  std::vector<OptimalPoint> out;
  for (const auto& [key, recs] : groups) {
    OptimalPoint p;
    p.arch = arch_from_string(std::get<0>(key));
    p.layers = std::get<1>(key);
    p.beta = std::get<2>(key);
    p.capacity = std::get<3>(key);

    std::map<std::uint64_t, std::pair<double, double>> best_per_seed;  // seed -> (elbo, g)
    std::map<double, std::pair<double, std::size_t>> by_g;             // g -> (sum elbo, count)
    for (const TrialRecord* r : recs) {
      const double g = r->g.value();
      auto it = best_per_seed.find(r->seed);
      if (it == best_per_seed.end() || better(r->final_elbo, g, it->second.first, it->second.second))
        best_per_seed[r->seed] = {r->final_elbo, g};
      auto& acc = by_g[g];
      acc.first += r->final_elbo;
      acc.second += 1;
    }
    double sum = 0.0;
    for (const auto& [s, eg] : best_per_seed) sum += eg.second;
    p.seeds = best_per_seed.size();
    p.mean_best_g = sum / static_cast<double>(p.seeds);

    double best_mean = -std::numeric_limits<double>::infinity();
    double best_g = std::numeric_limits<double>::infinity();
    for (const auto& [g, acc] : by_g) {
      const double mean = acc.first / static_cast<double>(acc.second);
      if (better(mean, g, best_mean, best_g)) {
        best_mean = mean;
        best_g = g;
      }
    }
    p.best_mean_elbo_g = best_g;
    out.push_back(p);
  }
  return out;
}

QuadraticFit fit_trajectory_curve(const std::vector<std::pair<double, double>>& points) {
  std::set<double> caps;
  for (const auto& [c, g] : points) caps.insert(c);
  if (caps.size() < 3)
    throw FitError("trajectory fit needs at least 3 distinct capacities, got " + std::to_string(caps.size()));

  // Solve in a centred, scaled variable t = (cap - c0) / s for conditioning,
  // then expand back to powers of cap.
  double c0 = 0.0;
  for (const auto& [c, g] : points) c0 += c;
  c0 /= static_cast<double>(points.size());
  double s = 0.0;
  for (const auto& [c, g] : points) s = std::max(s, std::abs(c - c0));

  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  for (const auto& [c, g] : points) {
    const double t = (c - c0) / s;
    const Eigen::Vector3d row(t * t, t, 1.0);
    ata += row * row.transpose();
    atb += row * g;
  }
  const Eigen::Vector3d q = ata.ldlt().solve(atb);  // g = q0 t^2 + q1 t + q2

  QuadraticFit fit;
  fit.a = q(0) / (s * s);
  fit.b = q(1) / s - 2.0 * q(0) * c0 / (s * s);
  fit.c = q(0) * c0 * c0 / (s * s) - q(1) * c0 / s + q(2);
  double ss = 0.0;
  for (const auto& [c, g] : points) {
    const double t = (c - c0) / s;
    const double e = g - (q(0) * t * t + q(1) * t + q(2));
    ss += e * e;
  }
  fit.residual_norm = std::sqrt(ss);
  return fit;
}

std::vector<RegionCell> omniscient_region(const std::vector<TrialRecord>& records, double threshold) {
  std::map<std::tuple<double, std::size_t, double>, RegionCell> cells;
  for (const auto& r : records) {
    if (!r.ok()) continue;
    auto& c = cells[{r.beta, r.neuron_num, r.g.value()}];
    if (c.trials == 0) {
      c.beta = r.beta;
      c.capacity = r.neuron_num;
      c.g = r.g;
    }
    ++c.trials;
    if (r.omniscient_count >= 1) ++c.flagged;
  }
  std::vector<RegionCell> out;
  for (auto& [k, c] : cells) {
    c.fraction = static_cast<double>(c.flagged) / static_cast<double>(c.trials);
    c.in_region = c.flagged > 0 && c.fraction >= threshold;
    out.push_back(c);
  }
  return out;
}

double baseline_granularity(const std::vector<TrialRecord>& records) {
  std::set<std::size_t> ns;
  for (const auto& r : records) ns.insert(r.n);
  if (ns.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t n : ns) sum += 1.0 / static_cast<double>(largest_proper_divisor(n));
  return sum / static_cast<double>(ns.size());
}

}  // namespace stcvae
