#pragma once

// Randomised detector pool: K students spawned from a base model by weight
// noise, each retrained on its own attack-magnitude dataset, the first p
// additionally hardened with adversarial examples. Decisions are by majority
// vote with ties resolved to "attack".

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mtdgrid/adversarial.hpp"
#include "mtdgrid/attack.hpp"
#include "mtdgrid/detector.hpp"
#include "mtdgrid/error.hpp"
#include "mtdgrid/random.hpp"

namespace mtdgrid {

enum class WeightNoise { kUniform, kLaplace };

struct PoolConfig {
  int k = 10;
  int p = 0;
  double perturbation_fraction = 0.1;
  WeightNoise noise = WeightNoise::kUniform;
  double nu_lo = 0.05;
  double nu_hi = 0.3;
  int n_clean = 5000;  // per-student retraining set
  int n_attacked = 5000;
  TrainConfig retrain;
  int adv_rounds = 2;
  int adv_samples = 1000;  // attempted CW samples per round
  double adv_nu = 0.0;     // nu of the attacks hardened against; 0 = student's own nu
  AdvConfig adv;

  void validate() const {
    if (k < 1) throw PreconditionError("pool size K must be at least 1");
    if (p < 0 || p > k) throw PreconditionError("p must satisfy 0 <= p <= K");
    if (perturbation_fraction < 0.0) throw PreconditionError("perturbation fraction must be nonnegative");
    if (!(nu_lo > 0.0) || nu_hi < nu_lo) throw PreconditionError("student nu range must be positive");
    if (adv_rounds < 0 || adv_samples < 0) throw PreconditionError("adversarial budget must be nonnegative");
  }
};

struct Student {
  Mlp model;
  double nu = 0.0;
  bool hardened = false;
  std::uint64_t seed = 0;
  double clean_accuracy = 0.0;  // on the student's own held-out split
};

struct ModelPool {
  std::vector<Student> students;
  int generation = 0;
  int p = 0;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(students.size()); }
};

/// omega_s = omega_b + eps, eps_i ~ U(-f|omega_i|, f|omega_i|) (or Laplace
/// with scale f|omega_i|).
inline Mlp perturb_weights(const Mlp& base, double fraction, WeightNoise noise, Rng& rng) {
  Mlp out = base;
  if (fraction == 0.0) return out;
  Eigen::VectorXd w = base.flat();
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  std::bernoulli_distribution coin(0.5);
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double scale = fraction * std::abs(w[i]);
    if (noise == WeightNoise::kUniform)
      w[i] += scale * u(rng);
    else
      w[i] += scale * (coin(rng) ? expo(rng) : -expo(rng));
  }
  out.set_flat(w);
  return out;
}

inline std::vector<Mlp> spawn_students(const Mlp& base, const PoolConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<Mlp> out;
  for (int s = 0; s < config.k; ++s) {
    Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    out.push_back(perturb_weights(base, config.perturbation_fraction, config.noise, rng));
  }
  return out;
}

/// Retrains a spawned student on a fresh dataset with its own nu. The base
/// standardisation is kept so the spawned weights stay meaningful.
inline Student diversify_retrain(Mlp model, const MeasurementSource& src, const PoolConfig& config,
                                 std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> nu_dist(config.nu_lo, config.nu_hi);
  Student st;
  st.seed = seed;
  st.nu = config.nu_lo == config.nu_hi ? config.nu_lo : nu_dist(rng);
  AttackConfig ac;
  ac.nu = st.nu;
  const Dataset data = build_dataset(src, ac, config.n_clean, config.n_attacked, derive_seed(seed, "data"));
  TrainConfig tc = config.retrain;
  tc.fit_standardization = false;
  tc.seed = derive_seed(seed, "train");
  train(model, data.z, data.labels, tc);
  st.model = std::move(model);
  const Dataset holdout = build_dataset(src, ac, 500, 0, derive_seed(seed, "holdout"));
  st.clean_accuracy = accuracy(st.model, holdout.z, holdout.labels);
  return st;
}

struct HardeningLog {
  std::vector<int> attempted;  // per round
  std::vector<int> generated;  // successful adversarial samples added
};

/// Iterative adversarial training: each round crafts CW attacks against the
/// current student, appends the successful ones with label 1 and retrains on
/// the student's data plus all adversarial samples so far.
inline HardeningLog adversarial_train(Student& st, const MeasurementSource& src, const PoolConfig& config,
                                      std::uint64_t seed) {
  HardeningLog log;
  if (config.adv_rounds == 0) return log;
  AttackConfig ac;
  ac.nu = st.nu;
  Dataset train_set = build_dataset(src, ac, config.n_clean, config.n_attacked, derive_seed(st.seed, "data"));
  for (int round = 0; round < config.adv_rounds; ++round) {
    const std::uint64_t rs = derive_seed(seed, static_cast<std::uint64_t>(round));
    AttackConfig adv_ac;
    adv_ac.nu = config.adv_nu > 0.0 ? config.adv_nu : st.nu;
    const Dataset fdia = build_dataset(src, adv_ac, 0, config.adv_samples, derive_seed(rs, "fdia"));
    AdversarialSet adv = build_adversarial_set(st.model, fdia, src.estimator->h(), config.adv);
    log.attempted.push_back(config.adv_samples);
    log.generated.push_back(static_cast<int>(adv.data.size()));
    train_set = concat(train_set, adv.data);
    TrainConfig tc = config.retrain;
    tc.fit_standardization = false;
    tc.seed = derive_seed(rs, "train");
    train(st.model, train_set.z, train_set.labels, tc);
  }
  st.hardened = true;
  const Dataset holdout = build_dataset(src, ac, 500, 0, derive_seed(st.seed, "holdout"));
  st.clean_accuracy = accuracy(st.model, holdout.z, holdout.labels);
  return log;
}

/// Students for every pool up to config.k, in both plain (retrained) and
/// hardened form for the first config.p. Each student has its own seed, so
/// a pool assembled from the first k entries equals build_pool with the same
/// seed and size k.
struct StudentCache {
  std::vector<Student> plain;
  std::vector<Student> hardened;
  std::vector<HardeningLog> logs;
  std::uint64_t seed = 0;
};

inline StudentCache train_students(const Mlp& base, const MeasurementSource& src, const PoolConfig& config,
                                   std::uint64_t seed) {
  config.validate();
  StudentCache cache;
  cache.seed = seed;
  std::vector<Mlp> spawned = spawn_students(base, config, derive_seed(seed, "spawn"));
  for (int s = 0; s < config.k; ++s) {
    const std::uint64_t ss = derive_seed(seed, "student" + std::to_string(s));
    cache.plain.push_back(diversify_retrain(std::move(spawned[s]), src, config, ss));
    if (s < config.p) {
      Student h = cache.plain.back();
      cache.logs.push_back(adversarial_train(h, src, config, derive_seed(ss, "harden")));
      cache.hardened.push_back(std::move(h));
    }
  }
  return cache;
}

inline ModelPool assemble_pool(const StudentCache& cache, int k, int p, int generation = 0) {
  if (k < 1 || k > static_cast<int>(cache.plain.size()))
    throw PreconditionError("assemble_pool: K outside the trained students");
  if (p < 0 || p > k || p > static_cast<int>(cache.hardened.size()))
    throw PreconditionError("assemble_pool: p outside the hardened students");
  ModelPool pool;
  pool.generation = generation;
  pool.p = p;
  pool.seed = cache.seed;
  for (int s = 0; s < k; ++s) pool.students.push_back(s < p ? cache.hardened[s] : cache.plain[s]);
  return pool;
}

/// Steps 1-3: spawn, diversify, harden the first p students.
inline ModelPool build_pool(const Mlp& base, const MeasurementSource& src, const PoolConfig& config,
                            std::uint64_t seed, int generation = 0) {
  return assemble_pool(train_students(base, src, config, seed), config.k, config.p, generation);
}

/// Spawn-only pool (weight randomisation without retraining).
inline ModelPool randomized_pool(const Mlp& base, const PoolConfig& config, std::uint64_t seed) {
  ModelPool pool;
  pool.seed = seed;
  for (Mlp& m : spawn_students(base, config, derive_seed(seed, "spawn"))) {
    Student st;
    st.model = std::move(m);
    pool.students.push_back(std::move(st));
  }
  return pool;
}

/// Step 4: a fresh pool with a new seed; the generation counter advances.
inline ModelPool refresh_pool(const ModelPool& old, const Mlp& base, const MeasurementSource& src,
                              const PoolConfig& config) {
  return build_pool(base, src, config, derive_seed(old.seed, "refresh"), old.generation + 1);
}

/// Label 1 iff at least half the students vote 1.
inline int majority(int votes_for_attack, int k) {
  if (k < 1) throw PreconditionError("vote over an empty pool");
  return 2 * votes_for_attack >= k ? 1 : 0;
}

inline int vote(const ModelPool& pool, const Eigen::VectorXd& z) {
  int ones = 0;
  for (const Student& s : pool.students) ones += s.model.predict(z);
  return majority(ones, pool.size());
}

inline std::vector<int> vote(const ModelPool& pool, const Eigen::MatrixXd& rows) {
  if (pool.size() < 1) throw PreconditionError("vote over an empty pool");
  std::vector<int> ones(static_cast<std::size_t>(rows.rows()), 0);
  for (const Student& s : pool.students) {
    const std::vector<int> pred = s.model.predict(rows);
    for (std::size_t i = 0; i < pred.size(); ++i) ones[i] += pred[i];
  }
  std::vector<int> out(ones.size());
  for (std::size_t i = 0; i < ones.size(); ++i) out[i] = majority(ones[i], pool.size());
  return out;
}

struct Transferability {
  Eigen::MatrixXd eta;  // K x K; NaN rows where N_i = 0
  Eigen::VectorXi crafted;  // N_adv(f_i)
  double eta_av = 0.0;
  std::vector<int> excluded;  // students with N_i = 0
};

/// eta_ij = fraction of the samples in adv_sets[i] evading student i that
/// also evade student j.
inline Transferability transferability(const ModelPool& pool, const std::vector<Dataset>& adv_sets) {
  const int k = pool.size();
  if (static_cast<int>(adv_sets.size()) != k)
    throw PreconditionError("transferability: need one adversarial set per student");
  Transferability t;
  t.eta = Eigen::MatrixXd::Constant(k, k, std::numeric_limits<double>::quiet_NaN());
  t.crafted = Eigen::VectorXi::Zero(k);
  double sum = 0.0;
  int pairs = 0;
  for (int i = 0; i < k; ++i) {
    const Dataset& d = adv_sets[i];
    // Only samples that actually evade student i count as crafted.
    const std::vector<int> own = pool.students[i].model.predict(d.z);
    std::vector<Eigen::Index> rows;
    for (std::size_t r = 0; r < own.size(); ++r)
      if (own[r] == 0) rows.push_back(static_cast<Eigen::Index>(r));
    t.crafted[i] = static_cast<int>(rows.size());
    if (rows.empty()) {
      t.excluded.push_back(i);
      continue;
    }
    const Dataset evading = d.subset(rows);
    for (int j = 0; j < k; ++j) {
      const std::vector<int> pred = pool.students[j].model.predict(evading.z);
      int fooled = 0;
      for (int v : pred) fooled += v == 0;
      t.eta(i, j) = static_cast<double>(fooled) / static_cast<double>(rows.size());
      if (j != i) {
        sum += t.eta(i, j);
        ++pairs;
      }
    }
  }
  if (pairs == 0) throw MetricError("transferability: no student has any successful adversarial sample");
  t.eta_av = sum / pairs;
  return t;
}

/// One shared adversarial set, e.g. attacks crafted against the base model.
inline Transferability transferability(const ModelPool& pool, const Dataset& adv_set) {
  return transferability(pool, std::vector<Dataset>(pool.students.size(), adv_set));
}

/// Variant where each student is attacked directly: CW samples from `fdia`
/// are crafted against every student in turn.
inline Transferability crafted_transferability(const ModelPool& pool, const Dataset& fdia,
                                               const Eigen::MatrixXd& h, const AdvConfig& adv) {
  std::vector<Dataset> sets;
  for (const Student& s : pool.students) sets.push_back(build_adversarial_set(s.model, fdia, h, adv).data);
  return transferability(pool, sets);
}

// Persistence ------------------------------------------------------------------

/// Writes student_<k>.mlp files and pool.manifest into `dir`.
inline void save_pool(const ModelPool& pool, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / "pool.manifest");
  if (!f) throw Error("cannot write " + (dir / "pool.manifest").string());
  f << "mtdgrid-pool 1\n";
  f << "generation " << pool.generation << "\nK " << pool.size() << "\np " << pool.p << "\nseed " << pool.seed
    << '\n';
  f << "# file nu hardened seed clean_accuracy\n";
  for (int s = 0; s < pool.size(); ++s) {
    const Student& st = pool.students[s];
    const std::string name = "student_" + std::to_string(s) + ".mlp";
    st.model.save((dir / name).string());
    f << "student " << name << ' ' << format_double(st.nu) << ' ' << (st.hardened ? 1 : 0) << ' ' << st.seed
      << ' ' << format_double(st.clean_accuracy) << '\n';
  }
}

inline ModelPool load_pool(const std::filesystem::path& dir) {
  std::ifstream f(dir / "pool.manifest");
  if (!f) throw Error("cannot open " + (dir / "pool.manifest").string());
  ModelPool pool;
  std::string line;
  std::size_t lineno = 0;
  int declared_k = -1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "mtdgrid-pool") {
      int v = 0;
      if (!(ss >> v) || v != 1) throw ParseError(lineno, "unsupported pool manifest version");
    } else if (key == "generation") {
      ss >> pool.generation;
    } else if (key == "K") {
      ss >> declared_k;
    } else if (key == "p") {
      ss >> pool.p;
    } else if (key == "seed") {
      ss >> pool.seed;
    } else if (key == "student") {
      std::string file;
      Student st;
      int hardened = 0;
      if (!(ss >> file >> st.nu >> hardened >> st.seed >> st.clean_accuracy))
        throw ParseError(lineno, "malformed student record");
      st.hardened = hardened != 0;
      st.model = Mlp::load((dir / file).string());
      pool.students.push_back(std::move(st));
    } else {
      throw ParseError(lineno, "unknown key '" + key + "'");
    }
  }
  if (declared_k != pool.size()) throw SemanticError("pool manifest declares K different from its student list");
  return pool;
}

}  // namespace mtdgrid
