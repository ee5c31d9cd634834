#pragma once

// BDD-bypassing false data injection (a = H c) and labelled datasets.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mtdgrid/error.hpp"
#include "mtdgrid/estimation.hpp"
#include "mtdgrid/grid.hpp"
#include "mtdgrid/random.hpp"

namespace mtdgrid {

struct AttackConfig {
  double nu = 0.05;         // std of each attacked state, radians
  int max_compromised = 0;  // 0 means floor(N/2)
  std::vector<int> protected_states;  // state indices never attacked

  int cap(const GridTopology& grid) const {
    return max_compromised > 0 ? max_compromised : grid.bus_count() / 2;
  }
};

struct AttackRecord {
  Eigen::VectorXd c;  // state attack, length N-1
  std::vector<int> support;
  Eigen::VectorXd a;  // H c
  double nu = 0.0;

  Eigen::VectorXd mask() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(c.size());
    for (int i : support) m[i] = 1.0;
    return m;
  }
};

inline AttackRecord sample_attack(const AttackConfig& config, const Eigen::MatrixXd& h,
                                  const GridTopology& grid, Rng& rng) {
  if (!(config.nu > 0.0)) throw PreconditionError("attack nu must be positive");
  const int n_state = static_cast<int>(h.cols());
  std::vector<int> eligible;
  for (int i = 0; i < n_state; ++i)
    if (std::find(config.protected_states.begin(), config.protected_states.end(), i) ==
        config.protected_states.end())
      eligible.push_back(i);
  const int cap = std::min<int>(config.cap(grid), static_cast<int>(eligible.size()));
  if (cap < 1) throw PreconditionError("no eligible states to attack");

  std::uniform_int_distribution<int> size_dist(1, cap);
  std::normal_distribution<double> normal(0.0, config.nu);
  while (true) {
    AttackRecord rec;
    rec.nu = config.nu;
    const int k = size_dist(rng);
    std::vector<int> pool = eligible;
    std::shuffle(pool.begin(), pool.end(), rng);
    rec.support.assign(pool.begin(), pool.begin() + k);
    std::sort(rec.support.begin(), rec.support.end());
    rec.c = Eigen::VectorXd::Zero(n_state);
    bool degenerate = true;
    for (int i : rec.support) {
      rec.c[i] = normal(rng);
      if (std::abs(rec.c[i]) >= 1e-12) degenerate = false;
    }
    if (degenerate) continue;
    rec.a = h * rec.c;
    return rec;
  }
}

enum class Provenance { kClean, kFdia, kAdversarial };

inline const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kClean: return "clean";
    case Provenance::kFdia: return "fdia";
    case Provenance::kAdversarial: return "adversarial";
  }
  return "clean";
}

inline Provenance parse_provenance(const std::string& s) {
  if (s == "clean") return Provenance::kClean;
  if (s == "fdia") return Provenance::kFdia;
  if (s == "adversarial") return Provenance::kAdversarial;
  throw Error("unknown provenance tag '" + s + "'");
}

/// Rows are measurements. Attack metadata (c, mask, a) is kept for attacked
/// rows so adversarial perturbations can be built later; it is not written
/// to the CSV except for what the schema names.
struct Dataset {
  Eigen::MatrixXd z;           // n x M
  std::vector<int> labels;     // 0 clean, 1 attacked
  std::vector<Provenance> tags;
  std::vector<std::uint64_t> seeds;  // per-row seed
  std::vector<AttackRecord> attacks;  // empty record on clean rows
  // Operating point and sensor noise behind each row (n x buses, n x M).
  // Filled by build_dataset, empty for data read from CSV.
  Eigen::MatrixXd loads;
  Eigen::MatrixXd noise;

  Eigen::Index size() const noexcept { return z.rows(); }
  Eigen::Index dim() const noexcept { return z.cols(); }

  Dataset subset(const std::vector<Eigen::Index>& rows) const {
    Dataset out;
    out.z.resize(static_cast<Eigen::Index>(rows.size()), z.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      out.z.row(static_cast<Eigen::Index>(k)) = z.row(rows[k]);
      out.labels.push_back(labels[rows[k]]);
      out.tags.push_back(tags[rows[k]]);
      out.seeds.push_back(seeds[rows[k]]);
      if (!attacks.empty()) out.attacks.push_back(attacks[rows[k]]);
    }
    if (loads.rows() == size() && noise.rows() == size()) {
      out.loads.resize(out.z.rows(), loads.cols());
      out.noise.resize(out.z.rows(), noise.cols());
      for (std::size_t k = 0; k < rows.size(); ++k) {
        out.loads.row(static_cast<Eigen::Index>(k)) = loads.row(rows[k]);
        out.noise.row(static_cast<Eigen::Index>(k)) = noise.row(rows[k]);
      }
    }
    return out;
  }

  std::vector<Eigen::Index> rows_with_label(int label) const {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) rows.push_back(static_cast<Eigen::Index>(i));
    return rows;
  }
};

inline Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.dim() != b.dim()) throw PreconditionError("concat: dimensions differ");
  Dataset out;
  out.z.resize(a.size() + b.size(), a.dim());
  out.z << a.z, b.z;
  for (const Dataset* d : {&a, &b}) {
    out.labels.insert(out.labels.end(), d->labels.begin(), d->labels.end());
    out.tags.insert(out.tags.end(), d->tags.begin(), d->tags.end());
    out.seeds.insert(out.seeds.end(), d->seeds.begin(), d->seeds.end());
    if (d->attacks.empty())
      out.attacks.resize(out.attacks.size() + d->labels.size());
    else
      out.attacks.insert(out.attacks.end(), d->attacks.begin(), d->attacks.end());
  }
  if (a.loads.rows() == a.size() && b.loads.rows() == b.size() && a.loads.cols() == b.loads.cols()) {
    out.loads.resize(out.z.rows(), a.loads.cols());
    out.loads << a.loads, b.loads;
    out.noise.resize(out.z.rows(), a.dim());
    out.noise << a.noise, b.noise;
  }
  return out;
}

inline void shuffle_rows(Dataset& d, Rng& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(d.size()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  d = d.subset(order);
}

/// What a dataset is drawn from: the grid at given operating reactances,
/// its calibrated estimator, and the load range.
struct MeasurementSource {
  const GridTopology* grid = nullptr;
  Eigen::VectorXd reactances;
  const Estimator* estimator = nullptr;  // built on jacobian(grid, reactances)
  double load_lo = 0.8;
  double load_hi = 1.2;
};

struct CleanDraw {
  Eigen::VectorXd z;
  std::vector<double> loads_mw;
  Eigen::VectorXd noise;  // z - H theta
};

/// One clean measurement at a fresh operating point.
inline CleanDraw draw_clean(const MeasurementSource& src, Rng& rng) {
  OperatingPoint op = sample_operating_point(*src.grid, src.reactances, src.load_lo, src.load_hi, rng);
  CleanDraw d;
  d.z = measure(src.estimator->h(), op.theta, src.estimator->noise(), rng);
  d.noise = d.z - src.estimator->h() * op.theta;
  d.loads_mw = std::move(op.loads_mw);
  return d;
}

inline Eigen::VectorXd sample_clean(const MeasurementSource& src, Rng& rng) { return draw_clean(src, rng).z; }

/// n_clean rows labelled 0 and n_attacked rows labelled 1, shuffled. Every
/// attacked row passes the BDD; clean rows are kept as drawn.
inline Dataset build_dataset(const MeasurementSource& src, const AttackConfig& attack,
                             int n_clean, int n_attacked, std::uint64_t seed) {
  if (n_clean < 0 || n_attacked < 0 || n_clean + n_attacked < 1)
    throw PreconditionError("dataset counts must be nonnegative and not both zero");
  const Eigen::Index m = src.estimator->h().rows();
  const auto buses = static_cast<Eigen::Index>(src.grid->bus_count());
  Dataset d;
  d.z.resize(n_clean + n_attacked, m);
  d.loads.resize(n_clean + n_attacked, buses);
  d.noise.resize(n_clean + n_attacked, m);
  auto keep = [&](Eigen::Index row, const CleanDraw& c) {
    d.loads.row(row) = Eigen::Map<const Eigen::RowVectorXd>(c.loads_mw.data(), buses);
    d.noise.row(row) = c.noise.transpose();
  };
  for (int i = 0; i < n_clean; ++i) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
    Rng rng = make_rng(s);
    const CleanDraw c = draw_clean(src, rng);
    d.z.row(i) = c.z.transpose();
    keep(i, c);
    d.labels.push_back(0);
    d.tags.push_back(Provenance::kClean);
    d.seeds.push_back(s);
    d.attacks.emplace_back();
  }
  for (int i = 0; i < n_attacked; ++i) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(n_clean + i));
    Rng rng = make_rng(s);
    Eigen::VectorXd z;
    CleanDraw c;
    AttackRecord rec;
    for (int tries = 0;; ++tries) {
      if (tries > 1000) throw InfeasibleError("could not draw a BDD-passing attacked sample");
      c = draw_clean(src, rng);
      rec = sample_attack(attack, src.estimator->h(), *src.grid, rng);
      z = c.z + rec.a;
      if (!src.estimator->detect(z)) break;
    }
    d.z.row(n_clean + i) = z.transpose();
    keep(n_clean + i, c);
    d.labels.push_back(1);
    d.tags.push_back(Provenance::kFdia);
    d.seeds.push_back(s);
    d.attacks.push_back(std::move(rec));
  }
  Rng shuffler = make_rng(derive_seed(seed, "shuffle"));
  shuffle_rows(d, shuffler);
  return d;
}

// CSV I/O ------------------------------------------------------------------

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Header: z1..zM,label,provenance,seed
inline void write_dataset_csv(std::ostream& os, const Dataset& d) {
  for (Eigen::Index j = 0; j < d.dim(); ++j) os << 'z' << (j + 1) << ',';
  os << "label,provenance,seed\n";
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    for (Eigen::Index j = 0; j < d.dim(); ++j) os << format_double(d.z(i, j)) << ',';
    os << d.labels[i] << ',' << provenance_name(d.tags[i]) << ',' << d.seeds[i] << '\n';
  }
}

inline void write_dataset_csv(const std::string& path, const Dataset& d) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  write_dataset_csv(f, d);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Reads the dataset schema. Extra trailing columns (as in adversarial sets)
/// are ignored; measurement columns are those named z<k>.
inline Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(1, "empty dataset file");
  const auto header = split_csv_line(line);
  int m = 0;
  while (m < static_cast<int>(header.size()) && !header[m].empty() && header[m][0] == 'z') ++m;
  auto col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError(1, "missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_label = col("label"), c_tag = col("provenance"), c_seed = col("seed");
  if (m == 0) throw ParseError(1, "no measurement columns");

  std::vector<std::vector<double>> rows;
  Dataset d;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError(lineno, "expected " + std::to_string(header.size()) + " fields, got " +
                                   std::to_string(cells.size()));
    std::vector<double> row(m);
    try {
      for (int j = 0; j < m; ++j) row[j] = std::stod(cells[j]);
      const int label = std::stoi(cells[c_label]);
      if (label != 0 && label != 1) throw ParseError(lineno, "label must be 0 or 1");
      d.labels.push_back(label);
      d.seeds.push_back(std::stoull(cells[c_seed]));
    } catch (const std::logic_error&) {
      throw ParseError(lineno, "malformed numeric field");
    }
    d.tags.push_back(parse_provenance(cells[c_tag]));
    rows.push_back(std::move(row));
  }
  d.z.resize(static_cast<Eigen::Index>(rows.size()), m);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < m; ++j) d.z(static_cast<Eigen::Index>(i), j) = rows[i][j];
  d.attacks.resize(rows.size());
  return d;
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open dataset " + path);
  return read_dataset_csv(f);
}

}  // namespace mtdgrid
