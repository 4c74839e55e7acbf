#pragma once

// Tail, moment and moment-generating-function bounds for weighted sums
// S = sum_i omega_i Y_i of independent exponential-family draws under the
// bounded-b'' condition, with Monte Carlo certification. The expectation of
// S is always computed exactly from b'(theta_i), never estimated.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "klagg/errors.hpp"
#include "klagg/family.hpp"
#include "klagg/rng.hpp"

namespace klagg {

using Eigen::VectorXd;

struct WeightedSumSpec {
  Family family;
  VectorXd thetas;
  VectorXd omega;

  WeightedSumSpec(Family f, VectorXd t, VectorXd w)
      : family(std::move(f)), thetas(std::move(t)), omega(std::move(w)) {
    if (thetas.size() != omega.size())
      throw DimensionMismatch("weighted sum: thetas and omega lengths differ");
    if (thetas.size() < 1) throw DimensionMismatch("weighted sum: empty spec");
    for (Eigen::Index i = 0; i < thetas.size(); ++i)
      if (!family.theta_valid(thetas(i)))
        throw DomainError("weighted sum: theta outside domain");
    if (!(omega.norm() > 0.0))
      throw DomainError("weighted sum: omega must be nonzero");
  }

  double omega_l2() const { return omega.norm(); }

  double exact_mean() const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < thetas.size(); ++i)
      s += omega(i) * family.mean(thetas(i));
    return s;
  }

  double sample_sum(std::mt19937_64& rng) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < thetas.size(); ++i)
      s += omega(i) * family.sample(thetas(i), rng);
    return s;
  }

  double b_sq_or_throw() const {
    const VarianceBound b = family.variance_bound();
    if (!b.bounded)
      throw ConditionViolation(
          "weighted-sum bounds need a bounded b'' (normal or bernoulli)");
    return b.value;
  }
};

/// Two-sided sub-Gaussian tail bound 2 exp(-t^2 / (2 a B^2 |omega|^2)),
/// clamped to one. For the Bernoulli this is the Hoeffding form
/// 2 exp(-2 t^2 / |omega|^2).
inline double deviation_bound(const WeightedSumSpec& spec, double t) {
  const double b_sq = spec.b_sq_or_throw();
  if (t < 0.0) throw DomainError("deviation_bound: t must be nonnegative");
  const double w2 = spec.omega_l2() * spec.omega_l2();
  const double v =
      2.0 * std::exp(-t * t / (2.0 * spec.family.dispersion() * b_sq * w2));
  return std::fmin(v, 1.0);
}

struct MomentBounds {
  double raw;              // bounds E|S - ES|^r
  double root_simplified;  // bounds (E|S - ES|^r)^(1/r), r >= 1
};

/// Exact constant C_r = r (2aB^2)^(r/2) Gamma(r/2) for the r-th central
/// absolute moment, and the simpler root bound 2 B sqrt(pi a r) |omega|.
/// At r = 0 the constant degenerates to its limit 2.
inline MomentBounds moment_bound(const WeightedSumSpec& spec, double r) {
  const double b_sq = spec.b_sq_or_throw();
  if (r < 0.0) throw DomainError("moment_bound: r must be nonnegative");
  const double a = spec.family.dispersion();
  const double w = spec.omega_l2();
  const double c_r =
      r == 0.0 ? 2.0 : r * std::pow(2.0 * a * b_sq, r / 2.0) * std::tgamma(r / 2.0);
  MomentBounds out;
  out.raw = c_r * std::pow(w, r);
  out.root_simplified =
      r >= 1.0 ? 2.0 * std::sqrt(b_sq) * std::sqrt(std::numbers::pi * a * r) * w
               : std::numeric_limits<double>::quiet_NaN();
  return out;
}

/// exp(s^2 B^2 a |omega|^2 / 2): bounds E exp(+-s (S - ES)) for either sign;
/// twice this value bounds E exp(s |S - ES|).
inline double mgf_bound(const WeightedSumSpec& spec, double s) {
  const double b_sq = spec.b_sq_or_throw();
  const double w2 = spec.omega_l2() * spec.omega_l2();
  return std::exp(s * s * b_sq * spec.family.dispersion() * w2 / 2.0);
}

struct TailCheckRow {
  double t = 0.0;
  double empirical = 0.0;
  double bound = 0.0;
  double std_err = 0.0;  // binomial standard error of the frequency
  bool flagged = false;
};

struct TailCheckReport {
  std::vector<TailCheckRow> rows;
  int replicates = 0;
  bool any_flagged = false;

  void write_csv(std::ostream& out) const {
    out << "t,empirical_freq,bound,flag\n";
    char buf[128];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%d\n", r.t,
                    r.empirical, r.bound, r.flagged ? 1 : 0);
      out << buf;
    }
  }
};

/// Monte Carlo certification of the deviation bound: the empirical frequency
/// of |S - ES| > t must not exceed the bound by more than three binomial
/// standard errors at any grid point.
inline TailCheckReport empirical_tail_check(const WeightedSumSpec& spec,
                                            const std::vector<double>& t_grid,
                                            int replicates,
                                            std::uint64_t seed) {
  if (replicates < 10000)
    throw DomainError("empirical_tail_check: needs at least 1e4 replicates");
  spec.b_sq_or_throw();
  const double mean = spec.exact_mean();
  std::vector<double> deviations(static_cast<std::size_t>(replicates));
  for (int r = 0; r < replicates; ++r) {
    auto rng = make_stream(seed, static_cast<std::uint64_t>(r));
    deviations[static_cast<std::size_t>(r)] =
        std::fabs(spec.sample_sum(rng) - mean);
  }
  TailCheckReport rep;
  rep.replicates = replicates;
  for (double t : t_grid) {
    TailCheckRow row;
    row.t = t;
    std::size_t count = 0;
    for (double d : deviations)
      if (d > t) ++count;
    row.empirical = static_cast<double>(count) / replicates;
    row.bound = deviation_bound(spec, t);
    row.std_err =
        std::sqrt(row.empirical * (1.0 - row.empirical) / replicates);
    row.flagged = row.empirical > row.bound + 3.0 * row.std_err;
    rep.any_flagged = rep.any_flagged || row.flagged;
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace klagg
