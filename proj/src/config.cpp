#include "stcvae/config.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <fstream>
#include <set>

#include "stcvae/errors.hpp"

namespace stcvae {

namespace {

using json = nlohmann::json;

const std::set<std::string> kTopKeys = {
    "dataset",    "out_dir",    "arch",         "layers",    "loss",        "n",
    "b_hat",      "beta",       "neuron_num",   "seed",      "traversal",   "latent_dims",
    "capacities", "granularities", "betas",     "seeds",     "workers",     "record_wall_time",
    "iterations", "batch_size", "lr",           "alpha",     "eval"};
const std::set<std::string> kEvalKeys = {"eval_batches",   "epsilon",          "delta",
                                         "metric_samples", "holdout_fraction", "factor_votes",
                                         "factor_eval_votes", "factor_batch",   "factor_std_samples"};
const std::set<std::string> kTraversalKeys = {"steps", "dims"};

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& prefix) {
  if (!obj.is_object()) throw ConfigError("config key '" + prefix + "' must be an object");
  for (const auto& [k, v] : obj.items())
    if (!allowed.count(k)) throw ConfigError("unknown config key '" + prefix + (prefix.empty() ? "" : ".") + k + "'");
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& prefix = "") {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + prefix + key + "': " + e.what());
  }
}

void read_count(const json& obj, const char* key, std::size_t& out, std::size_t min_value,
                const std::string& prefix = "") {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
    throw ConfigError("config key '" + prefix + key + "': expected a non-negative integer");
  out = v.get<std::size_t>();
  if (out < min_value)
    throw ConfigError("config key '" + prefix + key + "': must be >= " + std::to_string(min_value));
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

}  // namespace

Granularity parse_granularity(const std::string& text) {
  auto parse_uint = [&](std::string_view s) {
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size() || v == 0)
      throw ConfigError("bad granularity '" + text + "'");
    return v;
  };
  const auto slash = text.find('/');
  if (slash == std::string::npos) return {parse_uint(text), 1};
  return {parse_uint(std::string_view(text).substr(0, slash)), parse_uint(std::string_view(text).substr(slash + 1))};
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, kTopKeys, "");

  RunConfig rc;
  std::string s;
  if (j.contains("dataset")) {
    read(j, "dataset", s);
    rc.dataset = resolve(s, base_dir);
  }
  if (j.contains("out_dir")) {
    read(j, "out_dir", s);
    rc.out_dir = resolve(s, base_dir);
  }
  if (j.contains("arch")) {
    read(j, "arch", s);
    try {
      rc.arch = arch_from_string(s);
    } catch (const Error&) {
      throw ConfigError("config key 'arch': expected \"mlp\" or \"conv\", got \"" + s + "\"");
    }
  }
  if (j.contains("loss")) {
    read(j, "loss", s);
    if (s == "stcvae")
      rc.loss = LossKind::kBetaStcvae;
    else if (s == "tcvae")
      rc.loss = LossKind::kBetaTcvae;
    else
      throw ConfigError("config key 'loss': expected \"stcvae\" or \"tcvae\", got \"" + s + "\"");
  }
  read_count(j, "layers", rc.layers, 1);
  read_count(j, "n", rc.n, 2);
  read_count(j, "b_hat", rc.b_hat, 1);
  read(j, "beta", rc.beta);
  read_count(j, "neuron_num", rc.neuron_num, 1);
  read(j, "seed", rc.seed);
  read(j, "latent_dims", rc.latent_dims);
  read(j, "capacities", rc.capacities);
  read(j, "betas", rc.betas);
  read_count(j, "seeds", rc.seeds, 1);
  read_count(j, "workers", rc.workers, 1);
  read(j, "record_wall_time", rc.record_wall_time);
  read_count(j, "iterations", rc.iterations, 1);
  read_count(j, "batch_size", rc.batch_size, 2);
  read(j, "lr", rc.lr);
  read(j, "alpha", rc.alpha);
  if (!(rc.lr > 0.0)) throw ConfigError("config key 'lr': must be positive");

  if (j.contains("granularities")) {
    const json& g = j.at("granularities");
    if (g.is_string() && g.get<std::string>() == "all") {
      rc.all_granularities = true;
    } else if (g.is_array()) {
      for (const auto& item : g) {
        if (!item.is_string()) throw ConfigError("config key 'granularities': entries must be strings like \"1/4\"");
        rc.granularities.push_back(parse_granularity(item.get<std::string>()));
      }
    } else {
      throw ConfigError("config key 'granularities': expected \"all\" or a list of \"b/m\" strings");
    }
  }

  if (j.contains("traversal")) {
    const json& t = j.at("traversal");
    reject_unknown(t, kTraversalKeys, "traversal");
    read_count(t, "steps", rc.traversal_steps, 2, "traversal.");
    read(t, "dims", rc.traversal_dims, "traversal.");
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    reject_unknown(e, kEvalKeys, "eval");
    read_count(e, "eval_batches", rc.eval.eval_batches, 10, "eval.");
    read(e, "epsilon", rc.eval.epsilon, "eval.");
    read(e, "delta", rc.eval.delta, "eval.");
    read_count(e, "metric_samples", rc.eval.metric_samples, 2, "eval.");
    read(e, "holdout_fraction", rc.eval.holdout_fraction, "eval.");
    read_count(e, "factor_votes", rc.eval.factor.votes, 1, "eval.");
    read_count(e, "factor_eval_votes", rc.eval.factor.eval_votes, 1, "eval.");
    read_count(e, "factor_batch", rc.eval.factor.batch, 2, "eval.");
    read_count(e, "factor_std_samples", rc.eval.factor.std_samples, 2, "eval.");
    if (!(rc.eval.holdout_fraction > 0.0 && rc.eval.holdout_fraction < 1.0))
      throw ConfigError("config key 'eval.holdout_fraction': must lie in (0, 1)");
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text, std::filesystem::absolute(path).parent_path());
}

TrialConfig trial_config(const RunConfig& rc, const ImageShape& input) {
  TrialConfig tc;
  tc.model = ModelSpec{rc.arch, input, rc.n, rc.neuron_num, rc.layers};
  tc.b_hat = rc.b_hat;
  tc.beta = rc.beta;
  tc.alpha = rc.alpha;
  tc.loss = rc.loss;
  tc.iterations = rc.iterations;
  tc.batch_size = rc.batch_size;
  tc.lr = rc.lr;
  tc.eval = rc.eval;
  return tc;
}

SweepConfig sweep_config(const RunConfig& rc) {
  SweepConfig sc;
  sc.dataset = rc.dataset;
  sc.arch = rc.arch;
  sc.layers = rc.layers;
  sc.latent_dims = rc.latent_dims;
  sc.capacities = rc.capacities;
  sc.granularities = rc.granularities;
  sc.all_granularities = rc.all_granularities;
  sc.betas = rc.betas;
  sc.seeds = rc.seeds;
  sc.base_seed = rc.seed;
  sc.iterations = rc.iterations;
  sc.batch_size = rc.batch_size;
  sc.lr = rc.lr;
  sc.alpha = rc.alpha;
  sc.eval = rc.eval;
  sc.out_dir = rc.out_dir;
  sc.workers = rc.workers;
  sc.record_wall_time = rc.record_wall_time;
  return sc;
}

}  // namespace stcvae
