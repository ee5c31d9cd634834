#pragma once

// Power network description and the DC measurement Jacobian.
//
// Measurements are ordered [Pf; -Pf; P]: forward branch flows in case-file
// order, their negations, then the injection at every bus (slack included),
// so M = 2L + N. The state is the N-1 non-slack bus angles.

#include <Eigen/Dense>

#include <cstddef>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtdgrid/error.hpp"

namespace mtdgrid {

inline constexpr double kBaseMva = 100.0;

struct Branch {
  int from = 0;  // 0-based bus index
  int to = 0;
  double reactance = 0.0;  // per unit
  double flow_limit_mw = 0.0;
};

struct Generator {
  int bus = 0;  // 0-based
  double cost_c2 = 0.0;  // $/MW^2h
  double cost_c1 = 0.0;  // $/MWh
  double pmin_mw = 0.0;
  double pmax_mw = 0.0;
};

/// Immutable, validated network. All indices are 0-based internally; the case
/// file uses 1-based indices.
class GridTopology {
 public:
  GridTopology(int bus_count, std::vector<Branch> branches, int slack_bus,
               std::vector<double> base_loads_mw,
               std::vector<Generator> generators,
               std::vector<int> dfacts_lines = {})
      : bus_count_(bus_count),
        branches_(std::move(branches)),
        slack_bus_(slack_bus),
        base_loads_mw_(std::move(base_loads_mw)),
        generators_(std::move(generators)),
        dfacts_lines_(std::move(dfacts_lines)) {
    validate();
  }

  int bus_count() const noexcept { return bus_count_; }
  int branch_count() const noexcept { return static_cast<int>(branches_.size()); }
  int state_count() const noexcept { return bus_count_ - 1; }
  /// Measurement dimension 2L + N.
  int measurement_count() const noexcept { return 2 * branch_count() + bus_count_; }
  int slack_bus() const noexcept { return slack_bus_; }

  const std::vector<Branch>& branches() const noexcept { return branches_; }
  const std::vector<double>& base_loads_mw() const noexcept { return base_loads_mw_; }
  const std::vector<Generator>& generators() const noexcept { return generators_; }
  const std::vector<int>& dfacts_lines() const noexcept { return dfacts_lines_; }

  Eigen::VectorXd reactances() const {
    Eigen::VectorXd x(branch_count());
    for (int l = 0; l < branch_count(); ++l) x[l] = branches_[l].reactance;
    return x;
  }

  Eigen::VectorXd flow_limits_mw() const {
    Eigen::VectorXd f(branch_count());
    for (int l = 0; l < branch_count(); ++l) f[l] = branches_[l].flow_limit_mw;
    return f;
  }

  /// Row of bus `bus` in the reduced (slack removed) state vector, or -1.
  int state_index(int bus) const noexcept {
    if (bus == slack_bus_) return -1;
    return bus < slack_bus_ ? bus : bus - 1;
  }

  /// Bus that state row `row` refers to.
  int state_bus(int row) const noexcept { return row < slack_bus_ ? row : row + 1; }

  /// Whether the branch graph, restricted to the given branch mask, connects
  /// every bus. An empty mask means "all branches".
  bool connected(const std::vector<bool>& in_service = {}) const {
    std::vector<int> parent(bus_count_);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int v) {
      while (parent[v] != v) v = parent[v] = parent[parent[v]];
      return v;
    };
    int components = bus_count_;
    for (std::size_t l = 0; l < branches_.size(); ++l) {
      if (!in_service.empty() && !in_service[l]) continue;
      const int a = find(branches_[l].from);
      const int b = find(branches_[l].to);
      if (a != b) {
        parent[a] = b;
        --components;
      }
    }
    return components == 1;
  }

 private:
  void validate() const {
    if (bus_count_ < 2) throw SemanticError("grid needs at least two buses");
    if (slack_bus_ < 0 || slack_bus_ >= bus_count_)
      throw SemanticError("missing or out-of-range slack bus");
    if (static_cast<int>(base_loads_mw_.size()) != bus_count_)
      throw SemanticError("base load vector length differs from bus count");
    if (branches_.empty()) throw SemanticError("grid has no branches");
    for (std::size_t l = 0; l < branches_.size(); ++l) {
      const Branch& br = branches_[l];
      const std::string tag = "branch " + std::to_string(l + 1);
      if (br.from < 0 || br.from >= bus_count_ || br.to < 0 || br.to >= bus_count_)
        throw SemanticError(tag + " references a nonexistent bus");
      if (br.from == br.to) throw SemanticError(tag + " is a self-loop");
      if (!(br.reactance > 0.0)) throw SemanticError(tag + " has nonpositive reactance");
      if (!(br.flow_limit_mw > 0.0)) throw SemanticError(tag + " has nonpositive flow limit");
    }
    if (!connected()) throw SemanticError("branch graph is disconnected");
    for (const Generator& g : generators_) {
      if (g.bus < 0 || g.bus >= bus_count_)
        throw SemanticError("generator references a nonexistent bus");
      if (g.pmin_mw > g.pmax_mw) throw SemanticError("generator pmin exceeds pmax");
      if (g.cost_c2 < 0.0) throw SemanticError("generator cost must be convex");
    }
    for (int l : dfacts_lines_)
      if (l < 0 || l >= branch_count())
        throw SemanticError("D-FACTS line " + std::to_string(l + 1) + " is not a branch");
  }

  int bus_count_;
  std::vector<Branch> branches_;
  int slack_bus_;
  std::vector<double> base_loads_mw_;
  std::vector<Generator> generators_;
  std::vector<int> dfacts_lines_;
};

/// Parse the line-oriented case format:
///
///   [bus]     index base_load_MW [slack]
///   [branch]  from to reactance_pu flow_limit_MW
///   [gen]     bus cost_c2 cost_c1 pmin_MW pmax_MW
///   [dfacts]  branch indices (any number per line)
///
/// `#` starts a comment. Indices are 1-based. Buses must be numbered 1..N.
inline GridTopology parse_case(std::string_view text) {
  enum class Section { kNone, kBus, kBranch, kGen, kDfacts };
  Section section = Section::kNone;

  struct BusRow {
    int index;
    double load;
    bool slack;
    std::size_t line;
  };
  std::vector<BusRow> buses;
  struct BranchRow {
    int from, to;
    double x, limit;
    std::size_t line;
  };
  std::vector<BranchRow> branch_rows;
  std::vector<Generator> gens;
  std::vector<std::pair<int, std::size_t>> dfacts;

  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    std::string first;
    if (!(ls >> first)) continue;

    if (first.front() == '[') {
      if (first == "[bus]") section = Section::kBus;
      else if (first == "[branch]") section = Section::kBranch;
      else if (first == "[gen]") section = Section::kGen;
      else if (first == "[dfacts]") section = Section::kDfacts;
      else throw ParseError(lineno, "unknown section " + first);
      std::string extra;
      if (ls >> extra) throw ParseError(lineno, "trailing text after section header");
      continue;
    }

    std::vector<std::string> fields{first};
    for (std::string f; ls >> f;) fields.push_back(f);

    auto number = [&](const std::string& s) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(s, &used);
      } catch (const std::exception&) {
        throw ParseError(lineno, "expected a number, got '" + s + "'");
      }
      if (used != s.size()) throw ParseError(lineno, "expected a number, got '" + s + "'");
      return v;
    };
    auto integer = [&](const std::string& s) {
      const double v = number(s);
      if (v != static_cast<double>(static_cast<long long>(v)))
        throw ParseError(lineno, "expected an integer, got '" + s + "'");
      return static_cast<int>(v);
    };
    auto arity = [&](std::size_t lo, std::size_t hi) {
      if (fields.size() < lo || fields.size() > hi)
        throw ParseError(lineno, "wrong number of fields (" + std::to_string(fields.size()) + ")");
    };

    switch (section) {
      case Section::kNone:
        throw ParseError(lineno, "record outside of any section");
      case Section::kBus: {
        arity(2, 3);
        bool slack = false;
        if (fields.size() == 3) {
          if (fields[2] != "slack") throw ParseError(lineno, "unknown bus flag '" + fields[2] + "'");
          slack = true;
        }
        buses.push_back({integer(fields[0]), number(fields[1]), slack, lineno});
        break;
      }
      case Section::kBranch:
        arity(4, 4);
        branch_rows.push_back({integer(fields[0]), integer(fields[1]), number(fields[2]),
                               number(fields[3]), lineno});
        break;
      case Section::kGen:
        arity(5, 5);
        gens.push_back({integer(fields[0]) - 1, number(fields[1]), number(fields[2]),
                        number(fields[3]), number(fields[4])});
        break;
      case Section::kDfacts:
        for (const auto& f : fields) dfacts.emplace_back(integer(f), lineno);
        break;
    }
  }

  const int n = static_cast<int>(buses.size());
  std::vector<double> loads(n, 0.0);
  std::vector<bool> seen(n, false);
  int slack = -1;
  for (const BusRow& b : buses) {
    if (b.index < 1 || b.index > n)
      throw SemanticError("bus " + std::to_string(b.index) + " outside 1.." + std::to_string(n) +
                          " (line " + std::to_string(b.line) + ")");
    if (seen[b.index - 1])
      throw SemanticError("duplicate bus " + std::to_string(b.index) + " (line " +
                          std::to_string(b.line) + ")");
    seen[b.index - 1] = true;
    loads[b.index - 1] = b.load;
    if (b.slack) {
      if (slack >= 0) throw SemanticError("more than one slack bus");
      slack = b.index - 1;
    }
  }
  if (slack < 0) throw SemanticError("missing slack bus");

  std::vector<Branch> branches;
  branches.reserve(branch_rows.size());
  for (const BranchRow& r : branch_rows)
    branches.push_back({r.from - 1, r.to - 1, r.x, r.limit});

  std::vector<int> dfacts_lines;
  for (auto [idx, line] : dfacts) {
    if (idx < 1 || idx > static_cast<int>(branches.size()))
      throw SemanticError("D-FACTS index " + std::to_string(idx) + " is not a branch (line " +
                          std::to_string(line) + ")");
    dfacts_lines.push_back(idx - 1);
  }
  return GridTopology(n, std::move(branches), slack, std::move(loads), std::move(gens),
                      std::move(dfacts_lines));
}

inline GridTopology load_case(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open case file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_case(ss.str());
}

/// Path of a case file shipped in data/ (e.g. "ieee14").
inline std::string bundled_case_path(const std::string& name) {
#ifdef MTDGRID_DATA_DIR
  return std::string(MTDGRID_DATA_DIR) + "/" + name + ".case";
#else
  return "data/" + name + ".case";
#endif
}

/// Full N x L branch-bus incidence matrix: +1 at the from bus, -1 at the to bus.
inline Eigen::MatrixXd full_incidence_matrix(const GridTopology& grid) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(grid.bus_count(), grid.branch_count());
  for (int l = 0; l < grid.branch_count(); ++l) {
    a(grid.branches()[l].from, l) = 1.0;
    a(grid.branches()[l].to, l) = -1.0;
  }
  return a;
}

/// Reduced (N-1) x L incidence matrix with the slack row removed.
inline Eigen::MatrixXd incidence_matrix(const GridTopology& grid) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(grid.state_count(), grid.branch_count());
  for (int l = 0; l < grid.branch_count(); ++l) {
    const Branch& br = grid.branches()[l];
    if (int r = grid.state_index(br.from); r >= 0) a(r, l) = 1.0;
    if (int r = grid.state_index(br.to); r >= 0) a(r, l) = -1.0;
  }
  return a;
}

struct JacobianMatrix {
  Eigen::MatrixXd h;           // M x (N-1)
  Eigen::VectorXd reactances;  // length L
};

/// H = [D A^T; -D A^T; A_full D A^T] with D = diag(1/x).
inline JacobianMatrix jacobian(const GridTopology& grid, const Eigen::VectorXd& reactances) {
  const int l = grid.branch_count();
  const int n = grid.bus_count();
  if (reactances.size() != l) throw SemanticError("reactance vector length differs from branch count");
  for (int k = 0; k < l; ++k)
    if (!(reactances[k] > 0.0))
      throw SemanticError("branch " + std::to_string(k + 1) + " has nonpositive reactance");

  const Eigen::MatrixXd a = incidence_matrix(grid);
  const Eigen::VectorXd d = reactances.cwiseInverse();
  const Eigen::MatrixXd flow = d.asDiagonal() * a.transpose();  // L x (N-1)

  JacobianMatrix out;
  out.reactances = reactances;
  out.h.resize(2 * l + n, grid.state_count());
  out.h.topRows(l) = flow;
  out.h.middleRows(l, l) = -flow;
  out.h.bottomRows(n) = full_incidence_matrix(grid) * flow;
  return out;
}

inline JacobianMatrix jacobian(const GridTopology& grid) {
  return jacobian(grid, grid.reactances());
}

}  // namespace mtdgrid
