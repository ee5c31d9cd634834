#pragma once

// Experiment configuration: INI-style sections of `key = value` lines, '#'
// or ';' comments. Lists are comma separated. Unknown sections or keys are
// rejected so typos do not silently fall back to defaults.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mtdgrid/adversarial.hpp"
#include "mtdgrid/error.hpp"
#include "mtdgrid/estimation.hpp"
#include "mtdgrid/physics_mtd.hpp"
#include "mtdgrid/pool.hpp"

namespace mtdgrid {

struct ExperimentConfig {
  std::string grid_case = "ieee14";  // bundled name or path to a .case file
  std::string model = "dc";

  // estimation
  double sigma = 0.02;
  double alpha_fpr = 0.05;
  int calibration_samples = 10000;
  double load_lo = 0.8;
  double load_hi = 1.2;

  // base detector
  double base_nu = 0.05;
  int n_clean = 5000;
  int n_attacked = 5000;
  TrainConfig train;

  // attacks
  std::vector<double> test_nu{0.05, 0.1, 0.2, 0.3};
  int test_samples = 1000;  // successful adversarial samples per test set
  AdvConfig adv;

  // pool
  PoolConfig pool = [] {
    PoolConfig pc;
    pc.p = 6;
    return pc;
  }();
  std::vector<int> k_values{2, 4, 6, 8, 10};
  std::vector<int> p_values{0, 2, 4, 6, 8, 10};

  // physics MTD
  MtdConfig mtd;
  std::vector<double> spa_targets{0.1, 0.15, 0.2, 0.3, 0.4};
  double strategy_i_spa = 0.4;
  double strategy_ii_spa = 0.35;
  double strategy_iii_spa = 0.15;

  // run
  std::uint64_t seed = 1;
  int seeds = 3;
  std::string out_dir = "out";

  void validate() const {
    if (model != "dc") throw SemanticError("only the dc power-flow model is supported, got '" + model + "'");
    NoiseModel{sigma, {}}.validate();
    if (!(alpha_fpr > 0.0 && alpha_fpr < 1.0)) throw SemanticError("alpha_fpr must be in (0,1)");
    if (calibration_samples < 1000) throw SemanticError("calibration_samples must be at least 1000");
    if (!(load_lo > 0.0) || load_hi < load_lo) throw SemanticError("load range must satisfy 0 < lo <= hi");
    if (!(base_nu > 0.0)) throw SemanticError("base nu must be positive");
    if (n_clean < 1 || n_attacked < 1) throw SemanticError("dataset counts must be positive");
    if (test_nu.empty() || k_values.empty() || p_values.empty() || spa_targets.empty())
      throw SemanticError("experiment lists must be nonempty");
    if (test_samples < 1) throw SemanticError("test_samples must be positive");
    if (seeds < 1) throw SemanticError("seeds must be at least 1");
    for (int k : k_values)
      if (k < 1) throw SemanticError("pool sizes must be positive");
    for (int p : p_values)
      if (p < 0 || p > pool.k) throw SemanticError("p values must lie in [0, pool.k]");
    train.validate();
    pool.validate();
    adv.validate();
    mtd.validate();
  }

  /// Seeds of the replicate runs, derived from the master seed.
  std::vector<std::uint64_t> run_seeds() const {
    std::vector<std::uint64_t> out;
    for (int s = 0; s < seeds; ++s) out.push_back(derive_seed(seed, "run" + std::to_string(s)));
    return out;
  }
};

namespace detail {

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  T v{};
  is >> v;
  if (!is || !(is >> std::ws).eof()) throw SemanticError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_value<T>(key, item));
  if (out.empty()) throw SemanticError("config key '" + key + "': empty list");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw SemanticError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

}  // namespace detail

namespace detail {

inline ExperimentConfig config_from_tree(const boost::property_tree::ptree& tree) {
  namespace pt = boost::property_tree;
  ExperimentConfig c;
  std::set<std::string> used;
  auto get = [&](const std::string& key) -> std::optional<std::string> {
    if (auto v = tree.get_optional<std::string>(pt::ptree::path_type(key, '.'))) {
      used.insert(key);
      return *v;
    }
    return std::nullopt;
  };
  auto num = [&]<class T>(const std::string& key, T& dst) {
    if (auto v = get(key)) dst = detail::parse_value<T>(key, *v);
  };
  auto list = [&]<class T>(const std::string& key, std::vector<T>& dst) {
    if (auto v = get(key)) dst = detail::parse_list<T>(key, *v);
  };

  if (auto v = get("grid.case")) c.grid_case = *v;
  if (auto v = get("grid.model")) c.model = *v;

  num("estimation.sigma", c.sigma);
  num("estimation.alpha_fpr", c.alpha_fpr);
  num("estimation.calibration_samples", c.calibration_samples);
  num("estimation.load_lo", c.load_lo);
  num("estimation.load_hi", c.load_hi);

  num("detector.nu", c.base_nu);
  num("detector.n_clean", c.n_clean);
  num("detector.n_attacked", c.n_attacked);
  num("detector.epochs", c.train.epochs);
  num("detector.batch_size", c.train.batch_size);
  num("detector.lr", c.train.learning_rate);
  num("detector.validation_fraction", c.train.validation_fraction);

  list("attack.test_nu", c.test_nu);
  num("attack.test_samples", c.test_samples);
  if (auto v = get("attack.step_rule")) {
    if (*v == "raw") c.adv.rule = StepRule::kRaw;
    else if (*v == "normalized") c.adv.rule = StepRule::kNormalized;
    else if (*v == "adam") c.adv.rule = StepRule::kAdam;
    else throw SemanticError("attack.step_rule must be raw, normalized or adam, got '" + *v + "'");
  }
  num("attack.step", c.adv.step);
  num("attack.lambda_low", c.adv.lambda_low);
  num("attack.lambda_high", c.adv.lambda_high);
  num("attack.lambda0", c.adv.lambda0);
  num("attack.rounds", c.adv.rounds);
  num("attack.iterations", c.adv.iterations);

  num("pool.k", c.pool.k);
  num("pool.p", c.pool.p);
  num("pool.perturbation", c.pool.perturbation_fraction);
  if (auto v = get("pool.weight_noise")) {
    if (*v == "uniform") c.pool.noise = WeightNoise::kUniform;
    else if (*v == "laplace") c.pool.noise = WeightNoise::kLaplace;
    else throw SemanticError("pool.weight_noise must be uniform or laplace, got '" + *v + "'");
  }
  num("pool.nu_lo", c.pool.nu_lo);
  num("pool.nu_hi", c.pool.nu_hi);
  num("pool.n_clean", c.pool.n_clean);
  num("pool.n_attacked", c.pool.n_attacked);
  num("pool.adv_rounds", c.pool.adv_rounds);
  num("pool.adv_samples", c.pool.adv_samples);
  num("pool.adv_nu", c.pool.adv_nu);
  list("pool.k_values", c.k_values);
  list("pool.p_values", c.p_values);

  num("mtd.limit", c.mtd.perturbation_limit);
  if (auto v = get("mtd.metric")) {
    if (*v == "smallest") c.mtd.metric = AngleMetric::kSmallest;
    else if (*v == "largest") c.mtd.metric = AngleMetric::kLargest;
    else throw SemanticError("mtd.metric must be smallest or largest, got '" + *v + "'");
  }
  num("mtd.starts", c.mtd.starts);
  num("mtd.candidates", c.mtd.candidates);
  num("mtd.min_step", c.mtd.min_step);
  if (auto v = get("mtd.cost_optimal_baseline")) c.mtd.cost_optimal_baseline = detail::parse_bool("mtd.cost_optimal_baseline", *v);
  list("mtd.spa_targets", c.spa_targets);
  num("mtd.strategy_i_spa", c.strategy_i_spa);
  num("mtd.strategy_ii_spa", c.strategy_ii_spa);
  num("mtd.strategy_iii_spa", c.strategy_iii_spa);

  num("run.seed", c.seed);
  num("run.seeds", c.seeds);
  if (auto v = get("run.out")) c.out_dir = *v;

  // Retraining and hardening share the detector's optimiser settings.
  c.pool.retrain = c.train;

  for (const auto& [section, body] : tree) {
    if (body.empty()) throw SemanticError("'" + section + "' is not inside a section");
    for (const auto& [key, value] : body) {
      (void)value;
      if (!used.count(section + "." + key)) throw SemanticError("unknown key '" + section + "." + key + "'");
    }
  }
  c.validate();
  return c;
}

}  // namespace detail

/// `origin` prefixes error messages (usually the file name).
inline ExperimentConfig parse_config(std::istream& is, const std::string& origin = "config") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.line(), origin + ": " + e.message());
  }
  try {
    return detail::config_from_tree(tree);
  } catch (const Error& e) {
    throw SemanticError(origin + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open config file " + path.string());
  return parse_config(f, path.string());
}

/// An existing file path is used as is; anything else names a bundled case.
inline std::string resolve_case(const std::string& name) {
  if (std::filesystem::is_regular_file(name)) return name;
  return bundled_case_path(name);
}

}  // namespace mtdgrid
