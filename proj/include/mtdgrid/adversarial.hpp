#pragma once

// Adversarial FDIA: perturb a BDD-bypassing attack z_a = z + Hc by
// delta = H (I_c * delta_c) so a neural detector labels it clean.
//
//   psi(delta_c) = ||I_c * delta_c||_2 + lambda * g(z_a + delta)
//   g(z) = max(rho_1(z) - rho_0(z), 0)
//
// Gradient descent on psi for a fixed number of iterations, repeated for a
// few bisection rounds on lambda. The step is raw, normalised or Adam
// (default); raw steps overshoot badly once the logit margin is large.
// delta stays in col(H) by construction, so the BDD residual is untouched.

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mtdgrid/attack.hpp"
#include "mtdgrid/detector.hpp"
#include "mtdgrid/error.hpp"

namespace mtdgrid {

enum class StepRule {
  kRaw,         // delta_c -= step * grad
  kNormalized,  // delta_c -= step * grad / ||grad||
  kAdam,        // Adam moments on grad, learning rate = step
};

struct AdvConfig {
  StepRule rule = StepRule::kAdam;
  double lambda_low = 0.0;
  double lambda_high = 100.0;
  double lambda0 = 0.5;
  double step = 0.01;
  int rounds = 5;
  int iterations = 200;

  void validate() const {
    if (!(lambda_low < lambda_high) || !(step > 0.0) || rounds < 1 || iterations < 1 ||
        lambda0 < lambda_low || lambda0 > lambda_high)
      throw PreconditionError("invalid adversarial attack configuration");
  }
};

struct AdversarialResult {
  Eigen::VectorXd delta_c;  // masked state perturbation of the incumbent
  Eigen::VectorXd delta;    // H (I_c * delta_c)
  Eigen::VectorXd z_adv;    // z_a + delta (z_a itself when no incumbent)
  bool success = false;
  bool precondition_failed = false;  // model did not flag z_a; attack not run
  double norm = std::numeric_limits<double>::infinity();  // ||I_c * delta_c||_2, D_min
  std::vector<double> lambda_trace;  // lambda used in each round
  std::vector<double> dmin_trace;    // D_min after each round
};

/// g = max(rho_1 - rho_0, 0).
inline double evasion_margin(const Eigen::Vector2d& logits) {
  return std::max(logits[1] - logits[0], 0.0);
}

inline double evasion_margin(const Mlp& model, const Eigen::VectorXd& z) {
  return evasion_margin(model.logits(z));
}

/// psi at delta_c (the mask is applied here).
inline double cw_objective(const Mlp& model, const Eigen::VectorXd& z_a, const Eigen::MatrixXd& h,
                           const Eigen::VectorXd& mask, const Eigen::VectorXd& delta_c,
                           double lambda) {
  const Eigen::VectorXd dc = mask.cwiseProduct(delta_c);
  return dc.norm() + lambda * evasion_margin(model, z_a + h * dc);
}

/// d psi / d delta_c. The norm term uses subgradient 0 at the origin and the
/// margin term contributes nothing where g = 0.
inline Eigen::VectorXd cw_objective_gradient(const Mlp& model, const Eigen::VectorXd& z_a,
                                             const Eigen::MatrixXd& h, const Eigen::VectorXd& mask,
                                             const Eigen::VectorXd& delta_c, double lambda) {
  const Eigen::VectorXd dc = mask.cwiseProduct(delta_c);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(dc.size());
  const double nrm = dc.norm();
  if (nrm > 0.0) grad = dc / nrm;
  const Eigen::VectorXd dz = model.input_gradient(z_a + h * dc, [](const Eigen::Vector2d& r) {
    const double m = r[1] - r[0];
    return std::pair<double, Eigen::Vector2d>{std::max(m, 0.0),
                                              m > 0.0 ? Eigen::Vector2d(-1.0, 1.0) : Eigen::Vector2d::Zero()};
  });
  grad += lambda * mask.cwiseProduct(h.transpose() * dz);
  return grad;
}

/// Runs the attack on every row of `z_a` (n x M) with its own mask (n x
/// (N-1)). Rows the model does not flag are returned with
/// precondition_failed set and are otherwise untouched.
inline std::vector<AdversarialResult> cw_attack_batch(const Mlp& model, const Eigen::MatrixXd& z_a,
                                                      const Eigen::MatrixXd& h, const Eigen::MatrixXd& masks,
                                                      const AdvConfig& config) {
  config.validate();
  const Eigen::Index n = z_a.rows();
  const Eigen::Index ns = h.cols();
  if (z_a.cols() != h.rows() || masks.rows() != n || masks.cols() != ns)
    throw PreconditionError("cw_attack: dimensions disagree");

  std::vector<AdversarialResult> out(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> live;  // rows being attacked
  {
    const std::vector<int> pred = model.predict(z_a);
    for (Eigen::Index i = 0; i < n; ++i) {
      AdversarialResult& r = out[i];
      r.delta_c = Eigen::VectorXd::Zero(ns);
      r.delta = Eigen::VectorXd::Zero(h.rows());
      r.z_adv = z_a.row(i).transpose();
      if (pred[i] != 1 || masks.row(i).sum() <= 0.0) {
        r.precondition_failed = true;
        continue;
      }
      live.push_back(i);
    }
  }
  const auto nl = static_cast<Eigen::Index>(live.size());
  if (nl == 0) return out;

  Eigen::MatrixXd za(nl, h.rows()), mk(nl, ns);
  for (Eigen::Index k = 0; k < nl; ++k) {
    za.row(k) = z_a.row(live[k]);
    mk.row(k) = masks.row(live[k]);
  }
  Eigen::VectorXd lam_lo = Eigen::VectorXd::Constant(nl, config.lambda_low);
  Eigen::VectorXd lam_hi = Eigen::VectorXd::Constant(nl, config.lambda_high);
  Eigen::VectorXd lam = Eigen::VectorXd::Constant(nl, config.lambda0);
  Eigen::VectorXd dmin = Eigen::VectorXd::Constant(nl, std::numeric_limits<double>::infinity());
  Eigen::MatrixXd best_dc = Eigen::MatrixXd::Zero(nl, ns);
  std::vector<bool> found(static_cast<std::size_t>(nl), false);
  const Eigen::MatrixXd ht = h.transpose();

  for (int round = 0; round < config.rounds; ++round) {
    for (Eigen::Index k = 0; k < nl; ++k) out[live[k]].lambda_trace.push_back(lam[k]);
    Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(nl, ns);  // cold start
    Eigen::MatrixXd m1 = Eigen::MatrixXd::Zero(nl, ns), m2 = Eigen::MatrixXd::Zero(nl, ns);
    std::vector<bool> round_success(static_cast<std::size_t>(nl), false);

    // Each pass evaluates the point produced by the previous step, records
    // it as incumbent if feasible, then takes the next step. The extra pass
    // checks the final iterate.
    for (int it = 0; it <= config.iterations; ++it) {
      const Eigen::MatrixXd masked = dc.cwiseProduct(mk);
      const Eigen::MatrixXd z = za + masked * ht;
      Mlp::Tape tape;
      const Eigen::MatrixXd r = model.logits_with_tape(z, tape);
      Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(nl, 2);
      for (Eigen::Index k = 0; k < nl; ++k) {
        const double margin = r(k, 1) - r(k, 0);
        if (it > 0 && margin <= 0.0) {
          round_success[k] = true;
          const double nrm = masked.row(k).norm();
          if (nrm <= dmin[k]) {
            dmin[k] = nrm;
            best_dc.row(k) = masked.row(k);
            found[k] = true;
          }
        }
        if (margin > 0.0) {
          dlogits(k, 0) = -lam[k];
          dlogits(k, 1) = lam[k];
        }
      }
      if (it == config.iterations) break;

      Eigen::MatrixXd grad = model.input_gradients_from(tape, dlogits) * h;  // nl x ns
      grad = grad.cwiseProduct(mk);
      for (Eigen::Index k = 0; k < nl; ++k) {
        const double nrm = masked.row(k).norm();
        if (nrm > 0.0) grad.row(k) += masked.row(k) / nrm;
      }
      if (!grad.allFinite())
        throw DivergenceError("cw_attack: non-finite gradient in round " + std::to_string(round + 1) +
                              ", iteration " + std::to_string(it + 1));
      switch (config.rule) {
        case StepRule::kRaw:
          dc -= config.step * grad;
          break;
        case StepRule::kNormalized:
          for (Eigen::Index k = 0; k < nl; ++k)
            if (const double gn = grad.row(k).norm(); gn > 0.0) grad.row(k) /= gn;
          dc -= config.step * grad;
          break;
        case StepRule::kAdam: {
          m1 = 0.9 * m1 + 0.1 * grad;
          m2 = 0.999 * m2 + 0.001 * grad.cwiseAbs2();
          const double t = it + 1;
          const double c1 = 1.0 - std::pow(0.9, t), c2 = 1.0 - std::pow(0.999, t);
          dc.array() -= config.step * (m1.array() / c1) / ((m2.array() / c2).sqrt() + 1e-8);
          break;
        }
      }
    }

    for (Eigen::Index k = 0; k < nl; ++k) {
      if (round_success[k])
        lam_hi[k] = lam[k];
      else
        lam_lo[k] = lam[k];
      lam[k] = 0.5 * (lam_lo[k] + lam_hi[k]);
      out[live[k]].dmin_trace.push_back(dmin[k]);
    }
  }

  for (Eigen::Index k = 0; k < nl; ++k) {
    AdversarialResult& r = out[live[k]];
    r.success = found[k];
    if (!found[k]) continue;
    r.delta_c = best_dc.row(k).transpose();
    r.delta = h * r.delta_c;
    r.z_adv = za.row(k).transpose() + r.delta;
    r.norm = dmin[k];
  }
  return out;
}

/// Single-sample form. Throws if the model does not flag z_a.
inline AdversarialResult cw_attack(const Mlp& model, const Eigen::VectorXd& z_a, const Eigen::MatrixXd& h,
                                   const Eigen::VectorXd& mask, const AdvConfig& config) {
  if (mask.sum() <= 0.0) throw PreconditionError("cw_attack: empty sparsity mask");
  auto res = cw_attack_batch(model, Eigen::MatrixXd(z_a.transpose()), h, Eigen::MatrixXd(mask.transpose()),
                             config);
  if (res[0].precondition_failed)
    throw PreconditionError("cw_attack: the model does not flag the attacked measurement");
  return std::move(res[0]);
}

/// Change of attack intensity ||a + delta|| / ||a||.
inline double cai(const Eigen::VectorXd& a, const Eigen::VectorXd& delta) {
  const double base = a.norm();
  if (!(base > 0.0)) throw PreconditionError("cai: zero baseline attack");
  return (a + delta).norm() / base;
}

/// Adversarial samples with their provenance for CSV output.
struct AdversarialSet {
  Dataset data;  // label 1, provenance adversarial
  Eigen::MatrixXd injection;  // a + delta per row
  std::vector<double> nu;
  std::vector<double> cai;
  std::vector<bool> success;
  std::vector<double> delta_norm;
};

/// Attacks every FDIA row of `fdia` against `model`. Only successful
/// attacks are kept unless keep_failures is set.
inline AdversarialSet build_adversarial_set(const Mlp& model, const Dataset& fdia, const Eigen::MatrixXd& h,
                                            const AdvConfig& config, bool keep_failures = false) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < fdia.size(); ++i)
    if (fdia.labels[i] == 1 && !fdia.attacks.empty() && fdia.attacks[i].c.size() > 0) rows.push_back(i);
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd za(n, fdia.dim()), masks(n, h.cols());
  for (Eigen::Index k = 0; k < n; ++k) {
    za.row(k) = fdia.z.row(rows[k]);
    masks.row(k) = fdia.attacks[rows[k]].mask().transpose();
  }
  const auto results = cw_attack_batch(model, za, h, masks, config);

  AdversarialSet out;
  std::vector<Eigen::Index> kept;
  for (Eigen::Index k = 0; k < n; ++k) {
    const AdversarialResult& r = results[k];
    if (r.precondition_failed) continue;
    if (!r.success && !keep_failures) continue;
    kept.push_back(k);
  }
  out.data.z.resize(static_cast<Eigen::Index>(kept.size()), fdia.dim());
  out.injection.resize(out.data.z.rows(), fdia.dim());
  const bool has_draws = fdia.loads.rows() == fdia.size() && fdia.noise.rows() == fdia.size();
  if (has_draws) {
    out.data.loads.resize(out.data.z.rows(), fdia.loads.cols());
    out.data.noise.resize(out.data.z.rows(), fdia.dim());
  }
  for (std::size_t j = 0; j < kept.size(); ++j) {
    const Eigen::Index k = kept[j];
    const AttackRecord& rec = fdia.attacks[rows[k]];
    const AdversarialResult& r = results[k];
    out.data.z.row(static_cast<Eigen::Index>(j)) = r.z_adv.transpose();
    out.injection.row(static_cast<Eigen::Index>(j)) = (rec.a + r.delta).transpose();
    if (has_draws) {
      out.data.loads.row(static_cast<Eigen::Index>(j)) = fdia.loads.row(rows[k]);
      out.data.noise.row(static_cast<Eigen::Index>(j)) = fdia.noise.row(rows[k]);
    }
    out.data.labels.push_back(1);
    out.data.tags.push_back(Provenance::kAdversarial);
    out.data.seeds.push_back(fdia.seeds[rows[k]]);
    AttackRecord adv = rec;
    out.data.attacks.push_back(std::move(adv));
    out.nu.push_back(rec.nu);
    out.cai.push_back(cai(rec.a, r.delta));
    out.success.push_back(r.success);
    out.delta_norm.push_back(r.success ? r.norm : 0.0);
  }
  return out;
}

/// First n rows.
inline AdversarialSet head(const AdversarialSet& s, Eigen::Index n) {
  n = std::min(n, s.data.size());
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);
  AdversarialSet out;
  out.data = s.data.subset(rows);
  out.injection = s.injection.topRows(n);
  out.nu.assign(s.nu.begin(), s.nu.begin() + n);
  out.cai.assign(s.cai.begin(), s.cai.begin() + n);
  out.success.assign(s.success.begin(), s.success.begin() + n);
  out.delta_norm.assign(s.delta_norm.begin(), s.delta_norm.begin() + n);
  return out;
}

inline void append(AdversarialSet& to, const AdversarialSet& from) {
  to.data = concat(to.data, from.data);
  if (to.injection.rows() == 0) {
    to.injection = from.injection;
  } else if (from.injection.rows() > 0) {
    Eigen::MatrixXd inj(to.injection.rows() + from.injection.rows(), to.data.dim());
    inj << to.injection, from.injection;
    to.injection = std::move(inj);
  }
  to.nu.insert(to.nu.end(), from.nu.begin(), from.nu.end());
  to.cai.insert(to.cai.end(), from.cai.begin(), from.cai.end());
  to.success.insert(to.success.end(), from.success.begin(), from.success.end());
  to.delta_norm.insert(to.delta_norm.end(), from.delta_norm.begin(), from.delta_norm.end());
}

/// Dataset columns followed by nu,cai,success,delta_c_norm.
inline void write_adversarial_csv(std::ostream& os, const AdversarialSet& s) {
  const Dataset& d = s.data;
  for (Eigen::Index j = 0; j < d.dim(); ++j) os << 'z' << (j + 1) << ',';
  os << "label,provenance,seed,nu,cai,success,delta_c_norm\n";
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    for (Eigen::Index j = 0; j < d.dim(); ++j) os << format_double(d.z(i, j)) << ',';
    os << d.labels[i] << ',' << provenance_name(d.tags[i]) << ',' << d.seeds[i] << ','
       << format_double(s.nu[i]) << ',' << format_double(s.cai[i]) << ',' << (s.success[i] ? 1 : 0) << ','
       << format_double(s.delta_norm[i]) << '\n';
  }
}

inline void write_adversarial_csv(const std::string& path, const AdversarialSet& s) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  write_adversarial_csv(f, s);
}

}  // namespace mtdgrid
