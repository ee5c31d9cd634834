#pragma once

// Experiment runners behind `mtdgrid experiment <name>`. A run writes its
// CSVs and manifest.txt (files and seeds) into the output directory.
// Wall-clock timings go to timings.txt so that every other file is a pure
// function of the configuration and master seed.
//
// Seeds: replicate s uses derive_seed(master, "run<s>"); everything inside a
// replicate is derived from that by name (see Scenario).

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "mtdgrid/adversarial.hpp"
#include "mtdgrid/attack.hpp"
#include "mtdgrid/config.hpp"
#include "mtdgrid/detector.hpp"
#include "mtdgrid/error.hpp"
#include "mtdgrid/estimation.hpp"
#include "mtdgrid/grid.hpp"
#include "mtdgrid/metrics.hpp"
#include "mtdgrid/physics_mtd.hpp"
#include "mtdgrid/pool.hpp"
#include "mtdgrid/random.hpp"

namespace mtdgrid {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

class RunManifest {
 public:
  RunManifest(std::string experiment, std::uint64_t master_seed, std::filesystem::path dir)
      : experiment_(std::move(experiment)), master_seed_(master_seed), dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const { return dir_; }

  /// Registers an output file and returns its full path.
  std::filesystem::path file(const std::string& name) {
    files_.push_back(name);
    return dir_ / name;
  }
  void seed(const std::string& name, std::uint64_t value) { seeds_.emplace_back(name, value); }
  void timing(const std::string& name, double seconds) { timings_.emplace_back(name, seconds); }

  void write() const {
    std::ofstream m(dir_ / "manifest.txt");
    m << "mtdgrid-run 1\n";
    m << "experiment " << experiment_ << '\n';
    m << "master_seed " << master_seed_ << '\n';
    for (const auto& [name, v] : seeds_) m << "seed " << name << ' ' << v << '\n';
    for (const std::string& f : files_) m << "file " << f << '\n';
    m << "timings timings.txt\n";
    std::ofstream t(dir_ / "timings.txt");
    for (const auto& [name, s] : timings_) t << name << ' ' << format_double(s) << '\n';
    if (!m || !t) throw Error("cannot write manifest in " + dir_.string());
  }

 private:
  std::string experiment_;
  std::uint64_t master_seed_;
  std::filesystem::path dir_;
  std::vector<std::string> files_;
  std::vector<std::pair<std::string, std::uint64_t>> seeds_;
  std::vector<std::pair<std::string, double>> timings_;
};

inline std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  return f;
}

// Test sets and replay ----------------------------------------------------------

/// `count` successful CW attacks against `model`, each hiding an FDIA of
/// magnitude nu drawn from `src`.
inline AdversarialSet adversarial_test_set(const Mlp& model, const MeasurementSource& src, double nu, int count,
                                           const AdvConfig& adv, std::uint64_t seed) {
  AttackConfig ac;
  ac.nu = nu;
  AdversarialSet out;
  const int chunk = count + count / 5 + 10;
  for (int c = 0; out.data.size() < count; ++c) {
    if (c == 50) throw InfeasibleError("too few successful adversarial attacks for the test set");
    const Dataset fdia = build_dataset(src, ac, 0, chunk, derive_seed(seed, static_cast<std::uint64_t>(c)));
    append(out, build_adversarial_set(model, fdia, src.estimator->h(), adv));
  }
  return head(out, count);
}

/// a for FDIA rows, zero for clean rows.
inline Eigen::MatrixXd attack_vectors(const Dataset& d) {
  Eigen::MatrixXd inj = Eigen::MatrixXd::Zero(d.size(), d.dim());
  for (Eigen::Index i = 0; i < d.size(); ++i)
    if (!d.attacks.empty() && d.attacks[i].a.size() == d.dim()) inj.row(i) = d.attacks[i].a.transpose();
  return inj;
}

struct ReplaySet {
  Eigen::MatrixXd z;
  std::vector<int> labels;
  int dropped = 0;  // rows whose loads are infeasible under the new reactances
};

/// Re-measures every row at its recorded loads and noise under src's
/// reactances, then adds the row's injection:
///   z' = H' theta'(loads) + e + injection.
/// Replaying under the original reactances reproduces the data.
inline ReplaySet replay(const Dataset& d, const Eigen::MatrixXd& injection, const MeasurementSource& src) {
  if (d.loads.rows() != d.size() || d.noise.rows() != d.size())
    throw PreconditionError("replay needs the loads and noise recorded at generation time");
  if (injection.rows() != d.size() || injection.cols() != d.dim())
    throw PreconditionError("replay: injection shape differs from the data");
  const Eigen::MatrixXd& h = src.estimator->h();
  ReplaySet out;
  out.z.resize(d.size(), d.dim());
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    std::vector<double> loads(d.loads.cols());
    for (Eigen::Index b = 0; b < d.loads.cols(); ++b) loads[b] = d.loads(i, b);
    OperatingPoint op;
    if (!operating_point(*src.grid, loads, src.reactances, op)) {
      ++out.dropped;
      continue;
    }
    out.z.row(n++) = (h * op.theta + d.noise.row(i).transpose() + injection.row(i).transpose()).transpose();
    out.labels.push_back(d.labels[i]);
  }
  out.z.conservativeResize(n, Eigen::NoChange);
  return out;
}

/// BDD, a single model and/or a pool, OR-combined. Null members are skipped.
struct Defense {
  const Estimator* bdd = nullptr;
  const Mlp* model = nullptr;
  const ModelPool* pool = nullptr;

  std::vector<int> detect(const Eigen::MatrixXd& z) const {
    std::vector<int> out(static_cast<std::size_t>(z.rows()), 0);
    if (bdd) {
      const Eigen::VectorXd r = bdd->residuals(z);
      for (Eigen::Index i = 0; i < z.rows(); ++i) out[i] |= bdd_detect(r[i], bdd->threshold()) ? 1 : 0;
    }
    if (model) {
      const std::vector<int> p = model->predict(z);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] |= p[i];
    }
    if (pool) {
      const std::vector<int> p = vote(*pool, z);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] |= p[i];
    }
    return out;
  }
};

// Scenario -----------------------------------------------------------------------

/// One replicate: the grid at its least-cost reactances, a calibrated BDD,
/// the base detector and cached adversarial test sets built against it.
class Scenario {
 public:
  Scenario(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log = nullptr)
      : config_(config), seed_(seed), log_(log), grid_(load_case(resolve_case(config.grid_case))) {
    noise_.sigma = config_.sigma;
    const auto t0 = Clock::now();
    // The operating point does not depend on the replicate.
    x_op_ = mtdgrid::operating_reactances(grid_, config_.mtd, derive_seed(config_.seed, "x_op"));
    view_ = view_at(x_op_, "bdd");
    base_ = Mlp::init(default_layer_sizes(grid_.measurement_count()), derive_seed(seed_, "base-init"));
    AttackConfig ac;
    ac.nu = config_.base_nu;
    const Dataset data =
        build_dataset(view_->source, ac, config_.n_clean, config_.n_attacked, derive_seed(seed_, "base-data"));
    TrainConfig tc = config_.train;
    tc.seed = derive_seed(seed_, "base-train");
    base_report_ = train(base_, data.z, data.labels, tc);
    setup_seconds_ = seconds_since(t0);
    note("base model trained, validation accuracy " + format_double(base_report_.validation_accuracy));
  }
  Scenario(const Scenario&) = delete;
  Scenario& operator=(const Scenario&) = delete;

  const ExperimentConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  const GridTopology& grid() const { return grid_; }
  const NoiseModel& noise() const { return noise_; }
  const Eigen::VectorXd& operating_reactances() const { return x_op_; }
  const GridView& view() const { return *view_; }
  const Mlp& base() const { return base_; }
  const TrainReport& base_report() const { return base_report_; }
  double setup_seconds() const { return setup_seconds_; }

  std::unique_ptr<GridView> view_at(const Eigen::VectorXd& x, const std::string& tag) const {
    return std::make_unique<GridView>(grid_, x, noise_, config_.alpha_fpr, config_.calibration_samples,
                                      derive_seed(seed_, "calibrate-" + tag), config_.load_lo, config_.load_hi);
  }

  /// config.test_samples adversarial FDIAs of magnitude nu, crafted against
  /// the base model at the operating reactances.
  const AdversarialSet& adversarial_test(double nu) {
    auto it = tests_.find(nu);
    if (it == tests_.end()) {
      it = tests_.emplace(nu, adversarial_test_set(base_, view_->source, nu, config_.test_samples, config_.adv,
                                                   derive_seed(seed_, "test-" + format_double(nu))))
               .first;
      note("adversarial test set nu=" + format_double(nu) + " ready");
    }
    return it->second;
  }

  /// Clean and plain FDIA rows (half each) for legitimate-data accuracy.
  const Dataset& legit_test() {
    if (!legit_) {
      AttackConfig ac;
      ac.nu = config_.test_nu.front();
      legit_ = build_dataset(view_->source, ac, config_.test_samples, config_.test_samples,
                             derive_seed(seed_, "legit-test"));
    }
    return *legit_;
  }

  PoolConfig pool_config(int k, int p) const {
    PoolConfig pc = config_.pool;
    pc.k = k;
    pc.p = p;
    return pc;
  }

  /// Student cache for pools up to (k, p) around `base` on `src`.
  StudentCache students(const Mlp& base, const MeasurementSource& src, int k, int p, const std::string& tag) const {
    const auto t0 = Clock::now();
    StudentCache c = train_students(base, src, pool_config(k, p), derive_seed(seed_, "pool-" + tag));
    note("trained " + std::to_string(k) + " students (" + std::to_string(p) + " hardened) for " + tag + " in " +
         format_double(std::round(seconds_since(t0))) + " s");
    return c;
  }

  void note(const std::string& msg) const {
    if (log_) *log_ << "[seed " << seed_ << "] " << msg << std::endl;
  }

 private:
  const ExperimentConfig& config_;
  std::uint64_t seed_;
  std::ostream* log_;
  GridTopology grid_;
  NoiseModel noise_;
  Eigen::VectorXd x_op_;
  std::unique_ptr<GridView> view_;
  Mlp base_;
  TrainReport base_report_;
  double setup_seconds_ = 0.0;
  std::map<double, AdversarialSet> tests_;
  std::optional<Dataset> legit_;
};

/// A reactance perturbation with its calibrated BDD and adapted base model.
struct MtdSetting {
  MtdPerturbation perturbation;
  std::unique_ptr<GridView> view;
  Mlp adapted;
  double seconds = 0.0;  // adaptation time
};

inline MtdSetting mtd_setting(const Scenario& sc, const MtdPerturbation& p) {
  MtdSetting s;
  s.perturbation = p;
  const std::string tag = "mtd-" + format_double(p.target);
  s.view = sc.view_at(p.x_after, tag);
  const auto t0 = Clock::now();
  const ExperimentConfig& c = sc.config();
  s.adapted = adapt_base_model(sc.base(), s.view->source, c.base_nu, c.n_clean, c.n_attacked, c.train,
                               derive_seed(sc.seed(), "adapt-" + tag));
  s.seconds = seconds_since(t0);
  return s;
}

/// Least-cost perturbations for `targets` from the scenario's operating point.
inline std::vector<MtdPerturbation> scenario_frontier(const Scenario& sc, const std::vector<double>& targets) {
  return cost_frontier(sc.grid(), sc.operating_reactances(), targets, sc.config().mtd,
                       derive_seed(sc.seed(), "frontier"));
}

/// Recall of `defense` on adversarial samples replayed under `src`.
inline double replay_recall(const AdversarialSet& adv, const MeasurementSource& src, const Defense& defense,
                            int* dropped = nullptr) {
  const ReplaySet r = replay(adv.data, adv.injection, src);
  if (dropped) *dropped = r.dropped;
  return detection_rate(defense.detect(r.z));
}

inline double legit_accuracy(const Dataset& legit, const MeasurementSource& src, const Defense& defense) {
  const ReplaySet r = replay(legit, attack_vectors(legit), src);
  return confusion(defense.detect(r.z), r.labels).accuracy();
}

// Experiments ----------------------------------------------------------------------

namespace detail {

inline void write_header(std::ostream& os, std::initializer_list<const char*> cols) {
  bool first = true;
  for (const char* c : cols) {
    os << (first ? "" : ",") << c;
    first = false;
  }
  os << '\n';
}

template <class... T>
void write_row(std::ostream& os, const T&... v) {
  bool first = true;
  auto put = [&](const auto& x) {
    if (!first) os << ',';
    first = false;
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(x)>>)
      os << format_double(x);
    else
      os << x;
  };
  (put(v), ...);
  os << '\n';
}

inline int max_of(const std::vector<int>& v) { return *std::max_element(v.begin(), v.end()); }

inline double false_positive_rate(const Defense& d, const Eigen::MatrixXd& clean) {
  return detection_rate(d.detect(clean));
}

}  // namespace detail

/// Pool recall and transferability over K with p = K/2.
inline void run_pool_vs_k(const ExperimentConfig& c, RunManifest& man, std::ostream* log) {
  std::ofstream csv = open_csv(man.file("pool_vs_k.csv"));
  detail::write_header(csv, {"seed", "k", "p", "nu", "n", "recall", "eta_av", "eta_excluded", "clean_fpr",
                             "base_clean_fpr"});
  const int kmax = detail::max_of(c.k_values);
  for (std::uint64_t seed : c.run_seeds()) {
    const auto t0 = Clock::now();
    Scenario sc(c, seed, log);
    const StudentCache cache = sc.students(sc.base(), sc.view().source, kmax, kmax / 2, "k");
    const Dataset clean = build_dataset(sc.view().source, AttackConfig{}, c.test_samples, 0,
                                        derive_seed(seed, "clean-test"));
    const double base_fpr = detail::false_positive_rate(Defense{nullptr, &sc.base(), nullptr}, clean.z);
    for (int k : c.k_values) {
      const ModelPool pool = assemble_pool(cache, k, k / 2);
      const double fpr = detail::false_positive_rate(Defense{nullptr, nullptr, &pool}, clean.z);
      for (double nu : c.test_nu) {
        const AdversarialSet& t = sc.adversarial_test(nu);
        const double rec = detection_rate(vote(pool, t.data.z));
        double eta = std::numeric_limits<double>::quiet_NaN();
        std::size_t excluded = 0;
        if (k >= 2) {
          try {
            const Transferability tr = transferability(pool, t.data);
            eta = tr.eta_av;
            excluded = tr.excluded.size();
          } catch (const MetricError&) {
            excluded = static_cast<std::size_t>(k);  // every student detects every sample
          }
        }
        detail::write_row(csv, seed, k, k / 2, nu, t.data.size(), rec, eta, excluded, fpr, base_fpr);
      }
    }
    man.seed("run", seed);
    man.timing("seed " + std::to_string(seed), seconds_since(t0));
  }
}

/// Pool recall over p at K = pool.k.
inline void run_pool_vs_p(const ExperimentConfig& c, RunManifest& man, std::ostream* log) {
  std::ofstream csv = open_csv(man.file("pool_vs_p.csv"));
  detail::write_header(csv, {"seed", "k", "p", "nu", "n", "recall", "eta_av", "eta_excluded", "clean_fpr"});
  const int k = c.pool.k;
  const int pmax = detail::max_of(c.p_values);
  for (std::uint64_t seed : c.run_seeds()) {
    const auto t0 = Clock::now();
    Scenario sc(c, seed, log);
    const StudentCache cache = sc.students(sc.base(), sc.view().source, k, pmax, "p");
    const Dataset clean = build_dataset(sc.view().source, AttackConfig{}, c.test_samples, 0,
                                        derive_seed(seed, "clean-test"));
    for (int p : c.p_values) {
      const ModelPool pool = assemble_pool(cache, k, p);
      const double fpr = detail::false_positive_rate(Defense{nullptr, nullptr, &pool}, clean.z);
      for (double nu : c.test_nu) {
        const AdversarialSet& t = sc.adversarial_test(nu);
        const double rec = detection_rate(vote(pool, t.data.z));
        double eta = std::numeric_limits<double>::quiet_NaN();
        std::size_t excluded = 0;
        if (k >= 2) {
          try {
            const Transferability tr = transferability(pool, t.data);
            eta = tr.eta_av;
            excluded = tr.excluded.size();
          } catch (const MetricError&) {
            excluded = static_cast<std::size_t>(k);
          }
        }
        detail::write_row(csv, seed, k, p, nu, t.data.size(), rec, eta, excluded, fpr);
      }
    }
    man.seed("run", seed);
    man.timing("seed " + std::to_string(seed), seconds_since(t0));
  }
}

/// Recall of the physics-based strategies over the effectiveness target:
///   physics_only  BDD under H'
///   s1            BDD under H' or the adapted base model
///   s2            BDD under H' or a pool (K, p = 0) built from the adapted model
///   s3            as s2 with p = 1
inline void run_spa_sweep(const ExperimentConfig& c, RunManifest& man, std::ostream* log) {
  std::ofstream csv = open_csv(man.file("spa_sweep.csv"));
  detail::write_header(csv, {"seed", "target", "achieved", "relative_cost_increase", "strategy", "recall",
                             "dropped"});
  const double nu = c.test_nu.front();
  int replicate = 0;
  for (std::uint64_t seed : c.run_seeds()) {
    const auto t0 = Clock::now();
    Scenario sc(c, seed, log);
    const std::vector<MtdPerturbation> frontier = scenario_frontier(sc, c.spa_targets);
    {
      const std::string name = "frontier_" + std::to_string(replicate) + ".csv";
      std::ofstream f = open_csv(man.file(name));
      write_perturbation_csv(f, sc.grid(), frontier);
    }
    const AdversarialSet& t = sc.adversarial_test(nu);
    for (const MtdPerturbation& p : frontier) {
      const MtdSetting ms = mtd_setting(sc, p);
      const StudentCache cache = sc.students(ms.adapted, ms.view->source, c.pool.k, 1,
                                             "spa-" + format_double(p.target));
      const ModelPool pool0 = assemble_pool(cache, c.pool.k, 0);
      const ModelPool pool1 = assemble_pool(cache, c.pool.k, 1);
      const Estimator* bdd = &ms.view->estimator;
      const std::vector<std::pair<const char*, Defense>> strategies{
          {"physics_only", Defense{bdd, nullptr, nullptr}},
          {"s1", Defense{bdd, &ms.adapted, nullptr}},
          {"s2", Defense{bdd, nullptr, &pool0}},
          {"s3", Defense{bdd, nullptr, &pool1}}};
      for (const auto& [name, d] : strategies) {
        int dropped = 0;
        const double rec = replay_recall(t, ms.view->source, d, &dropped);
        detail::write_row(csv, seed, p.target, p.achieved, p.relative_increase(), name, rec, dropped);
      }
    }
    man.seed("run", seed);
    man.timing("seed " + std::to_string(seed), seconds_since(t0));
    ++replicate;
  }
}

/// CAI of the adversarial test sets and recall of the pool and of strategy
/// (iii) over the attack magnitude.
inline void run_cai_vs_nu(const ExperimentConfig& c, RunManifest& man, std::ostream* log) {
  std::ofstream csv = open_csv(man.file("cai_vs_nu.csv"));
  detail::write_header(csv, {"seed", "nu", "n", "cai_mean", "cai_sd", "pool_recall", "s3_recall", "s3_dropped"});
  for (std::uint64_t seed : c.run_seeds()) {
    const auto t0 = Clock::now();
    Scenario sc(c, seed, log);
    const ModelPool pool =
        assemble_pool(sc.students(sc.base(), sc.view().source, c.pool.k, c.pool.p, "cai"), c.pool.k, c.pool.p);
    const MtdSetting ms = mtd_setting(sc, scenario_frontier(sc, {c.strategy_iii_spa}).front());
    const ModelPool pool1 =
        assemble_pool(sc.students(ms.adapted, ms.view->source, c.pool.k, 1, "cai-s3"), c.pool.k, 1);
    const Defense s3{&ms.view->estimator, nullptr, &pool1};
    for (double nu : c.test_nu) {
      const AdversarialSet& t = sc.adversarial_test(nu);
      const double m = mean(t.cai);
      double var = 0.0;
      for (double v : t.cai) var += (v - m) * (v - m);
      const double sd = t.cai.size() > 1 ? std::sqrt(var / double(t.cai.size() - 1)) : 0.0;
      int dropped = 0;
      const double s3_rec = replay_recall(t, ms.view->source, s3, &dropped);
      detail::write_row(csv, seed, nu, t.data.size(), m, sd, detection_rate(vote(pool, t.data.z)), s3_rec,
                        dropped);
    }
    man.seed("run", seed);
    man.timing("seed " + std::to_string(seed), seconds_since(t0));
  }
}

/// The strategy comparison: pool alone, physics MTD with BDD only, and the
/// three combined strategies at their configured targets.
inline void run_strategy_table(const ExperimentConfig& c, RunManifest& man, std::ostream* log) {
  std::ofstream csv = open_csv(man.file("strategy_table.csv"));
  detail::write_header(csv, {"seed", "strategy", "k", "p", "target", "achieved", "relative_cost_increase",
                             "recall", "dropped"});
  const double nu = c.test_nu.front();
  for (std::uint64_t seed : c.run_seeds()) {
    Scenario sc(c, seed, log);
    const AdversarialSet& t = sc.adversarial_test(nu);
    const std::string tag = "seed " + std::to_string(seed) + " ";
    {
      const auto t0 = Clock::now();
      const ModelPool pool =
          assemble_pool(sc.students(sc.base(), sc.view().source, c.pool.k, c.pool.p, "table"), c.pool.k, c.pool.p);
      man.timing(tag + "pool", seconds_since(t0));
      detail::write_row(csv, seed, "pool", c.pool.k, c.pool.p, 0.0, 0.0, 0.0, detection_rate(vote(pool, t.data.z)),
                        0);
    }
    const std::vector<MtdPerturbation> frontier =
        scenario_frontier(sc, {c.strategy_i_spa, c.strategy_ii_spa, c.strategy_iii_spa});
    struct Row {
      const char* name;
      const MtdPerturbation* p;
      int kind;  // 0 bdd, 1 adapted model, 2 pool p=0, 3 pool p=1
    };
    const std::vector<Row> rows{{"bdd_physics", &frontier[0], 0},
                                {"s1", &frontier[0], 1},
                                {"s2", &frontier[1], 2},
                                {"s3", &frontier[2], 3}};
    for (const Row& r : rows) {
      const auto t0 = Clock::now();
      const MtdSetting ms = mtd_setting(sc, *r.p);
      std::optional<ModelPool> pool;
      int k = 0, p = 0;
      if (r.kind >= 2) {
        k = c.pool.k;
        p = r.kind - 2;
        pool = assemble_pool(sc.students(ms.adapted, ms.view->source, k, p, r.name), k, p);
      }
      Defense d{&ms.view->estimator, r.kind == 1 ? &ms.adapted : nullptr, pool ? &*pool : nullptr};
      man.timing(tag + r.name, r.kind == 0 ? 0.0 : seconds_since(t0));
      int dropped = 0;
      const double rec = replay_recall(t, ms.view->source, d, &dropped);
      detail::write_row(csv, seed, r.name, k, p, r.p->target, r.p->achieved, r.p->relative_increase(), rec,
                        dropped);
    }
    man.seed("run", seed);
  }
}

/// Comparison with other defenses on adversarial samples and on legitimate
/// data (clean plus plain FDIA).
inline void run_defense_comparison(const ExperimentConfig& c, RunManifest& man, std::ostream* log) {
  std::ofstream csv = open_csv(man.file("defense_comparison.csv"));
  detail::write_header(csv, {"seed", "method", "adversarial_recall", "legit_accuracy"});
  const double nu = c.test_nu.front();
  for (std::uint64_t seed : c.run_seeds()) {
    const auto t0 = Clock::now();
    Scenario sc(c, seed, log);
    const AdversarialSet& t = sc.adversarial_test(nu);
    const Dataset& legit = sc.legit_test();
    const MeasurementSource& src = sc.view().source;

    auto emit = [&](const char* name, const Defense& d, const MeasurementSource& where) {
      detail::write_row(csv, seed, name, replay_recall(t, where, d), legit_accuracy(legit, where, d));
    };
    emit("static_model", Defense{nullptr, &sc.base(), nullptr}, src);
    const ModelPool randomized = randomized_pool(sc.base(), sc.pool_config(c.pool.k, 0), derive_seed(seed, "random"));
    emit("randomization", Defense{nullptr, nullptr, &randomized}, src);
    const ModelPool ensemble =
        assemble_pool(sc.students(sc.base(), src, c.pool.k, 0, "ensemble"), c.pool.k, 0);
    emit("ensemble", Defense{nullptr, nullptr, &ensemble}, src);

    const MtdSetting ms = mtd_setting(sc, scenario_frontier(sc, {c.strategy_iii_spa}).front());
    emit("physics_only", Defense{&ms.view->estimator, nullptr, nullptr}, ms.view->source);
    const ModelPool pool1 =
        assemble_pool(sc.students(ms.adapted, ms.view->source, c.pool.k, 1, "combined"), c.pool.k, 1);
    emit("combined", Defense{&ms.view->estimator, nullptr, &pool1}, ms.view->source);
    man.seed("run", seed);
    man.timing("seed " + std::to_string(seed), seconds_since(t0));
  }
}

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"pool-vs-K",    "pool-vs-p",     "spa-sweep",
                                              "cai-vs-nu",    "strategy-table", "defense-comparison"};
  return names;
}

/// Runs a named experiment into `out_dir` and writes its manifest.
inline void run_experiment(const std::string& name, const ExperimentConfig& config,
                           const std::filesystem::path& out_dir, std::ostream* log = nullptr) {
  using Runner = void (*)(const ExperimentConfig&, RunManifest&, std::ostream*);
  static const std::map<std::string, Runner> runners{
      {"pool-vs-K", run_pool_vs_k},           {"pool-vs-p", run_pool_vs_p},
      {"spa-sweep", run_spa_sweep},           {"cai-vs-nu", run_cai_vs_nu},
      {"strategy-table", run_strategy_table}, {"defense-comparison", run_defense_comparison}};
  const auto it = runners.find(name);
  if (it == runners.end()) throw PreconditionError("unknown experiment '" + name + "'");
  RunManifest man(name, config.seed, out_dir);
  const auto t0 = Clock::now();
  try {
    it->second(config, man, log);
  } catch (const Error& e) {
    throw Error("experiment " + name + ": " + e.what());
  }
  man.timing("total", seconds_since(t0));
  man.write();
}

}  // namespace mtdgrid
