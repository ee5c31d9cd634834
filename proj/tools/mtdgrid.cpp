// mtdgrid command-line front end.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mtdgrid/mtdgrid.hpp"

namespace fs = std::filesystem;
using namespace mtdgrid;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig c;
  if (!g.config_path.empty()) {
    if (!fs::is_regular_file(g.config_path)) throw UsageError("config file not found: " + g.config_path);
    try {
      c = load_config(g.config_path);
    } catch (const ParseError& e) {
      throw UsageError(e.what());
    } catch (const SemanticError& e) {
      throw UsageError(e.what());
    }
  }
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.out_dir = g.out;
  return c;
}

std::ostream* log_stream(const Globals& g) { return g.quiet ? nullptr : &std::cerr; }

fs::path output_dir(const ExperimentConfig& c) {
  fs::create_directories(c.out_dir);
  return c.out_dir;
}

/// Grid, operating reactances and calibrated BDD as the experiments use them.
struct Setup {
  GridTopology grid;
  std::unique_ptr<GridView> view;

  explicit Setup(const ExperimentConfig& c) : grid(load_case(resolve_case(c.grid_case))) {
    NoiseModel noise;
    noise.sigma = c.sigma;
    const Eigen::VectorXd x = operating_reactances(grid, c.mtd, derive_seed(c.seed, "x_op"));
    view = std::make_unique<GridView>(grid, x, noise, c.alpha_fpr, c.calibration_samples,
                                      derive_seed(c.seed, "calibrate-bdd"), c.load_lo, c.load_hi);
  }
};

Mlp train_base(const ExperimentConfig& c, const Setup& s, const std::string& data_path, TrainReport* report) {
  Dataset data;
  if (!data_path.empty()) {
    data = read_dataset_csv(data_path);
  } else {
    AttackConfig ac;
    ac.nu = c.base_nu;
    data = build_dataset(s.view->source, ac, c.n_clean, c.n_attacked, derive_seed(c.seed, "base-data"));
  }
  Mlp m = Mlp::init(default_layer_sizes(static_cast<int>(data.dim())), derive_seed(c.seed, "base-init"));
  TrainConfig tc = c.train;
  tc.seed = derive_seed(c.seed, "base-train");
  *report = train(m, data.z, data.labels, tc);
  return m;
}

void write_train_report(const fs::path& path, const TrainReport& r) {
  std::ofstream f(path);
  f << "epoch,loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) f << e + 1 << ',' << format_double(r.epoch_loss[e]) << '\n';
  f << "# train_accuracy " << format_double(r.train_accuracy) << '\n';
  f << "# validation_accuracy " << format_double(r.validation_accuracy) << '\n';
}

void say(const Globals& g, const std::string& msg) {
  if (!g.quiet) std::cerr << msg << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Moving target defense against adversarial false data injection"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config_path, "INI configuration file");
  auto* seed_opt = app.add_option("--seed", seed_value, "master seed (overrides the config)");
  app.add_option("--out", g.out, "output directory (overrides the config)");
  app.add_flag("-q,--quiet", g.quiet, "no progress output");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a labelled clean/FDIA dataset");
  double gen_nu = 0.05;
  int gen_clean = -1, gen_attacked = -1;
  gen->add_option("--nu", gen_nu, "attack magnitude");
  gen->add_option("--clean", gen_clean, "clean rows (default: detector.n_clean)");
  gen->add_option("--attacked", gen_attacked, "attacked rows (default: detector.n_attacked)");

  // train-base
  auto* tb = app.add_subcommand("train-base", "train the base detector");
  std::string tb_data;
  tb->add_option("--data", tb_data, "train on this dataset CSV instead of fresh data")->check(CLI::ExistingFile);

  // build-pool
  auto* bp = app.add_subcommand("build-pool", "spawn, retrain and harden a model pool");
  std::string bp_base;
  int bp_k = -1, bp_p = -1;
  bp->add_option("--base", bp_base, "base model file (default: train one)")->check(CLI::ExistingFile);
  bp->add_option("--k", bp_k, "pool size");
  bp->add_option("--p", bp_p, "adversarially trained students");

  // attack
  auto* at = app.add_subcommand("attack", "craft adversarial FDIAs against a model");
  std::string at_model;
  double at_nu = 0.05;
  int at_count = 0;
  at->add_option("--model", at_model, "target model file")->required()->check(CLI::ExistingFile);
  at->add_option("--nu", at_nu, "magnitude of the hidden FDIA");
  at->add_option("--count", at_count, "successful samples (default: attack.test_samples)");

  // mtd-perturb
  auto* mp = app.add_subcommand("mtd-perturb", "least-cost reactance perturbations per effectiveness target");
  std::vector<double> mp_targets;
  mp->add_option("--targets", mp_targets, "targets in radians (default: mtd.spa_targets)")->delimiter(',');

  // adapt
  auto* ad = app.add_subcommand("adapt", "perturb reactances and retrain the base model for them");
  std::string ad_model;
  double ad_target = 0.15;
  ad->add_option("--model", ad_model, "base model file")->required()->check(CLI::ExistingFile);
  ad->add_option("--target", ad_target, "effectiveness target in radians");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "detection metrics of a model or pool on a dataset");
  std::string ev_data, ev_model, ev_pool;
  bool ev_bdd = false;
  ev->add_option("--data", ev_data, "dataset CSV")->required()->check(CLI::ExistingFile);
  auto* ev_m = ev->add_option("--model", ev_model, "model file")->check(CLI::ExistingFile);
  auto* ev_p = ev->add_option("--pool", ev_pool, "pool directory")->check(CLI::ExistingDirectory);
  ev_m->excludes(ev_p);
  ev->add_flag("--bdd", ev_bdd, "also alarm on the residual test at the operating reactances");

  // experiment
  auto* ex = app.add_subcommand("experiment", "run a named experiment");
  std::string ex_name;
  ex->add_option("name", ex_name, "experiment name")->required()->check(CLI::IsMember(experiment_names()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    const ExperimentConfig c = resolve_config(g);

    if (*gen) {
      const Setup s(c);
      AttackConfig ac;
      ac.nu = gen_nu;
      const Dataset d = build_dataset(s.view->source, ac, gen_clean >= 0 ? gen_clean : c.n_clean,
                                      gen_attacked >= 0 ? gen_attacked : c.n_attacked, derive_seed(c.seed, "gen-data"));
      const fs::path out = output_dir(c) / "dataset.csv";
      write_dataset_csv(out.string(), d);
      say(g, "wrote " + out.string());
    } else if (*tb) {
      const Setup s(c);
      TrainReport r;
      const Mlp m = train_base(c, s, tb_data, &r);
      const fs::path dir = output_dir(c);
      m.save((dir / "base.mlp").string());
      write_train_report(dir / "train_report.csv", r);
      say(g, "wrote " + (dir / "base.mlp").string() + ", validation accuracy " +
                 format_double(r.validation_accuracy));
    } else if (*bp) {
      const Setup s(c);
      Mlp base;
      if (!bp_base.empty()) {
        base = Mlp::load(bp_base);
      } else {
        TrainReport r;
        base = train_base(c, s, "", &r);
      }
      PoolConfig pc = c.pool;
      if (bp_k >= 0) pc.k = bp_k;
      if (bp_p >= 0) pc.p = bp_p;
      const ModelPool pool = build_pool(base, s.view->source, pc, derive_seed(c.seed, "pool"));
      const fs::path dir = output_dir(c) / "pool";
      save_pool(pool, dir);
      say(g, "wrote " + (dir / "pool.manifest").string());
    } else if (*at) {
      const Setup s(c);
      const Mlp m = Mlp::load(at_model);
      const AdversarialSet adv = adversarial_test_set(m, s.view->source, at_nu, at_count > 0 ? at_count : c.test_samples,
                                                      c.adv, derive_seed(c.seed, "attack"));
      const fs::path out = output_dir(c) / "adversarial.csv";
      write_adversarial_csv(out.string(), adv);
      say(g, "wrote " + out.string() + ", mean CAI " + format_double(mean(adv.cai)));
    } else if (*mp) {
      const GridTopology grid = load_case(resolve_case(c.grid_case));
      const Eigen::VectorXd x = operating_reactances(grid, c.mtd, derive_seed(c.seed, "x_op"));
      const std::vector<double> targets = mp_targets.empty() ? c.spa_targets : mp_targets;
      const auto rows = cost_frontier(grid, x, targets, c.mtd, derive_seed(c.seed, "frontier"));
      const fs::path out = output_dir(c) / "perturbation.csv";
      std::ofstream f(out);
      write_perturbation_csv(f, grid, rows);
      say(g, "wrote " + out.string());
    } else if (*ad) {
      const Setup s(c);
      const Mlp base = Mlp::load(ad_model);
      const auto rows = cost_frontier(s.grid, s.view->reactances, {ad_target}, c.mtd, derive_seed(c.seed, "frontier"));
      NoiseModel noise;
      noise.sigma = c.sigma;
      const GridView perturbed(s.grid, rows.front().x_after, noise, c.alpha_fpr, c.calibration_samples,
                               derive_seed(c.seed, "calibrate-adapt"), c.load_lo, c.load_hi);
      TrainReport r;
      const Mlp adapted = adapt_base_model(base, perturbed.source, c.base_nu, c.n_clean, c.n_attacked, c.train,
                                           derive_seed(c.seed, "adapt"), &r);
      const fs::path dir = output_dir(c);
      adapted.save((dir / "adapted.mlp").string());
      std::ofstream f(dir / "perturbation.csv");
      write_perturbation_csv(f, s.grid, rows);
      write_train_report(dir / "adapt_report.csv", r);
      say(g, "wrote " + (dir / "adapted.mlp").string());
    } else if (*ev) {
      if (ev_model.empty() && ev_pool.empty() && !ev_bdd) throw UsageError("evaluate needs --model, --pool or --bdd");
      const Dataset d = read_dataset_csv(ev_data);
      std::optional<Mlp> model;
      std::optional<ModelPool> pool;
      std::unique_ptr<Setup> s;
      if (!ev_model.empty()) model = Mlp::load(ev_model);
      if (!ev_pool.empty()) pool = load_pool(ev_pool);
      if (ev_bdd) s = std::make_unique<Setup>(c);
      const Defense def{s ? &s->view->estimator : nullptr, model ? &*model : nullptr, pool ? &*pool : nullptr};
      const Confusion cm = confusion(def.detect(d.z), d.labels);
      const double rec = cm.recall();  // throws on a set without positives
      const fs::path out = output_dir(c) / "metrics.csv";
      std::ofstream f(out);
      f << "n,tp,fp,tn,fn,recall,precision,false_positive_rate,accuracy\n";
      f << cm.total() << ',' << cm.tp << ',' << cm.fp << ',' << cm.tn << ',' << cm.fn << ',' << format_double(rec)
        << ',' << (cm.tp + cm.fp ? format_double(cm.precision()) : "nan") << ','
        << (cm.negatives() ? format_double(cm.false_positive_rate()) : "nan") << ',' << format_double(cm.accuracy())
        << '\n';
      std::cout << "recall " << format_double(rec) << '\n';
    } else if (*ex) {
      run_experiment(ex_name, c, output_dir(c), log_stream(g));
      say(g, "wrote " + (fs::path(c.out_dir) / "manifest.txt").string());
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const MetricError& e) {
    std::cerr << "metric error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
