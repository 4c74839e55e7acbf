#pragma once

// The aggregation estimators:
//   - exponential weights over the vertex scores,
//   - the entropy-penalized aggregate on the simplex (vertex scores plus the
//     joint likelihood plus an entropy penalty),
//   - constrained maximum-likelihood aggregation over a closed convex set,
//   - the rank-dispatched model-selection estimator,
//   - the boosting specialization (l1-constrained logistic aggregation),
//   - the population oracle the excess divergence is measured against,
// together with an applicability report listing which oracle bounds are in
// force for a given instance and their numeric values.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "klagg/design.hpp"
#include "klagg/errors.hpp"
#include "klagg/family.hpp"
#include "klagg/objective.hpp"
#include "klagg/solvers.hpp"

namespace klagg {

struct BoundValue {
  std::string name;
  bool applicable = false;
  double value = 0.0;
};

struct ConditionsRecord {
  VarianceBound b_sq = VarianceBound::unbounded();
  double kappa_sq = 0.0;
  double h_inf = 0.0;
  Eigen::Index rank = 0;
};

struct AggregateFit {
  VectorXd lambda;
  std::string method;
  std::optional<double> beta;
  SolveResult solve;
  ConditionsRecord conditions;
  std::vector<BoundValue> bounds;
  bool within_theory = false;  // beta >= threshold where the bound demands it
  std::vector<std::string> notes;
};

struct ApplicabilityReport {
  VarianceBound b_sq = VarianceBound::unbounded();
  double a = 1.0;
  double h_inf = 0.0;
  double kappa_sq = 0.0;
  Eigen::Index rank = 0;
  Eigen::Index m = 0;
  Eigen::Index n = 0;
  bool unit_norm_columns = false;
  std::optional<double> sigma_sq;   // marginal variance bound, if finite
  std::optional<double> beta_star;  // default penalization threshold
  double delta = 0.05;
  std::vector<BoundValue> bounds;
};

namespace detail {

/// Curvature floor at the sup bound of the constraint set. On the full space
/// only the Gaussian keeps positive curvature; every other family has
/// infimum zero there.
inline double kappa_for(const Problem& p, const ConstraintSet& cset) {
  const double h = sup_bound(p.dict, cset);
  if (std::isfinite(h)) return p.family.curvature_floor(h);
  return p.family.kind() == FamilyKind::normal ? 1.0 : 0.0;
}

inline double entropy(const VectorXd& lambda) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < lambda.size(); ++j)
    if (lambda(j) > 0.0) h -= lambda(j) * std::log(lambda(j));
  return h;
}

}  // namespace detail

/// Empirical score of each vertex: l_n(e_j), j = 1..M.
inline VectorXd vertex_scores(const Problem& p) {
  const VectorXd& y = p.y();
  const MatrixXd& a = p.dict.values();
  VectorXd s(a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    double bsum = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      if (!p.family.theta_valid(a(i, j)))
        throw DomainError("vertex score: dictionary value outside domain");
      bsum += p.family.cumulant(a(i, j)).b;
    }
    s(j) = y.dot(a.col(j)) - bsum;
  }
  return s;
}

/// Softmax of the vertex scores at temperature beta, with max-shift
/// stabilization. Coincides with the maximizer of <s, lambda> + beta*H over
/// the probability simplex.
inline VectorXd exponential_weights_from_scores(const VectorXd& scores,
                                                double beta) {
  if (!(beta > 0.0)) throw DomainError("exponential weights: beta must be positive");
  const double smax = scores.maxCoeff();
  VectorXd w = ((scores.array() - smax) / beta).exp();
  return w / w.sum();
}

inline VectorXd exponential_weights(const Problem& p, double beta) {
  return exponential_weights_from_scores(vertex_scores(p), beta);
}

/// Which oracle bounds hold for this instance, and their values. sigma_sq
/// may supply a marginal variance bound when b'' is unbounded (it defaults to
/// a*B^2 under the bounded-variance condition).
inline ApplicabilityReport applicability_report(
    const Problem& p, const ConstraintSet& cset, double delta = 0.05,
    std::optional<double> sigma_sq = std::nullopt) {
  ApplicabilityReport rep;
  rep.b_sq = p.family.variance_bound();
  rep.a = p.family.dispersion();
  rep.h_inf = sup_bound(p.dict, cset);
  rep.kappa_sq = detail::kappa_for(p, cset);
  rep.rank = p.dict.rank();
  rep.m = p.dict.m();
  rep.n = p.dict.n();
  rep.unit_norm_columns = p.dict.unit_norm_columns();
  rep.delta = delta;
  if (sigma_sq)
    rep.sigma_sq = sigma_sq;
  else if (rep.b_sq.bounded)
    rep.sigma_sq = rep.a * rep.b_sq.value;

  const double n = static_cast<double>(rep.n);
  const double m = static_cast<double>(rep.m);
  const double d = static_cast<double>(rep.rank);
  const double a = rep.a;
  const double ks = rep.kappa_sq;

  // model-selection geometry is always the unit simplex
  const double kappa_ms =
      detail::kappa_for(p, ConstraintSet::simplex(1.0));
  if (rep.b_sq.bounded && kappa_ms > 0.0)
    rep.beta_star = 8.0 * rep.b_sq.value * a / kappa_ms;
  {
    const bool ok = rep.beta_star.has_value();
    const double beta = ok ? *rep.beta_star : 0.0;
    rep.bounds.push_back(
        {"ms_expectation", ok, ok ? beta / a * std::log(m) / n : 0.0});
    rep.bounds.push_back(
        {"ms_quantile", ok, ok ? beta / a * std::log(m / delta) / n : 0.0});
  }
  {
    const bool ok = ks > 0.0 && rep.sigma_sq.has_value();
    const double s2 = ok ? *rep.sigma_sq : 0.0;
    rep.bounds.push_back(
        {"linear_expectation", ok, ok ? 2.0 * s2 * d / (a * ks * n) : 0.0});
    rep.bounds.push_back(
        {"linear_sq_dist", ok, ok ? 4.0 * s2 * d / (ks * ks * n) : 0.0});
    const bool okq = ks > 0.0 && rep.b_sq.bounded;
    const double bsq = okq ? rep.b_sq.value : 0.0;
    rep.bounds.push_back(
        {"linear_quantile", okq,
         okq ? 8.0 * bsq / ks * d / n * std::log(4.0 / delta) : 0.0});
    rep.bounds.push_back(
        {"linear_sq_dist_quantile", okq,
         okq ? 16.0 * a * bsq / (ks * ks) * d / n * std::log(4.0 / delta) : 0.0});
  }
  {
    const bool convex_set = cset.within_l1_ball();
    const double radius = convex_set ? cset.l1_radius() : 0.0;
    const bool ok = convex_set && rep.b_sq.bounded && rep.unit_norm_columns;
    const double b = ok ? std::sqrt(rep.b_sq.value) : 0.0;
    const double e = std::numbers::e;
    const double pi = std::numbers::pi;
    const double root = ok ? std::sqrt(std::log(m) / n) : 0.0;
    rep.bounds.push_back(
        {"convex_expectation", ok,
         ok ? 4.0 * e * radius * b * std::sqrt(pi / a) * root : 0.0});
    const bool oks = ok && ks > 0.0;
    rep.bounds.push_back(
        {"convex_sq_dist", oks,
         oks ? 8.0 * e * radius * b / ks * std::sqrt(pi * a) * root : 0.0});
    const bool okq = ok && rep.m >= 3;
    const double lroot = okq ? std::sqrt(std::log(2.0 / delta)) : 0.0;
    rep.bounds.push_back(
        {"convex_quantile", okq,
         okq ? 8.0 * radius * b * std::sqrt(pi * e / a) * root * lroot : 0.0});
    const bool okqs = okq && ks > 0.0;
    rep.bounds.push_back(
        {"convex_sq_dist_quantile", okqs,
         okqs ? 16.0 * radius * b / ks * std::sqrt(pi * e * a) * root * lroot
              : 0.0});
  }
  return rep;
}

/// The entropy-penalized aggregate on the unit simplex: maximizes
///   sum_j lambda_j l_n(e_j) + l_n(lambda) + beta H(lambda),
/// H the Shannon entropy. The default beta is exactly the threshold
/// 8 B^2 a / kappa^2 demanded by the model-selection bounds; a smaller
/// explicit beta is allowed but flags the fit as outside the theory.
inline AggregateFit q_aggregate(const Problem& p,
                                std::optional<double> beta_opt = std::nullopt,
                                const SolverConfig& cfg = {}) {
  const ConstraintSet simplex1 = ConstraintSet::simplex(1.0);
  AggregateFit fit;
  fit.method = "qaggregate";
  fit.conditions.b_sq = p.family.variance_bound();
  fit.conditions.h_inf = sup_bound(p.dict, simplex1);
  fit.conditions.kappa_sq = detail::kappa_for(p, simplex1);
  fit.conditions.rank = p.dict.rank();

  double beta_threshold = 0.0;
  if (fit.conditions.b_sq.bounded && fit.conditions.kappa_sq > 0.0)
    beta_threshold = 8.0 * fit.conditions.b_sq.value * p.family.dispersion() /
                     fit.conditions.kappa_sq;
  double beta;
  if (beta_opt) {
    if (!(*beta_opt > 0.0))
      throw DomainError("q_aggregate: beta must be positive");
    beta = *beta_opt;
  } else {
    if (!fit.conditions.b_sq.bounded)
      throw ConditionViolation(
          "q_aggregate: default beta needs a bounded b''; pass beta explicitly");
    if (!(fit.conditions.kappa_sq > 0.0))
      throw ConditionViolation("q_aggregate: curvature floor is zero");
    beta = beta_threshold;
  }
  fit.beta = beta;
  fit.within_theory = beta_threshold > 0.0 && beta >= beta_threshold * (1.0 - 1e-12);

  const VectorXd scores = vertex_scores(p);
  SmoothObjective obj{
      [&p, &scores, beta](const VectorXd& lambda) {
        ObjectiveValue below = empirical_score_grad(p, lambda);
        double h = 0.0;
        VectorXd grad = below.grad + scores;
        for (Eigen::Index j = 0; j < lambda.size(); ++j) {
          const double lj = std::fmax(lambda(j), 1e-300);
          h -= lambda(j) * std::log(lj);
          grad(j) -= beta * (std::log(lj) + 1.0);
        }
        return ObjectiveValue{scores.dot(lambda) + below.value + beta * h,
                              std::move(grad)};
      },
      nullptr};
  fit.solve = maximize_over_set(obj, simplex1, p.dict.m(), cfg);
  fit.lambda = fit.solve.lambda;
  fit.bounds = applicability_report(p, simplex1).bounds;
  return fit;
}

/// Maximum-likelihood aggregate over a closed convex set (or the full
/// space). The fitted values are unique in the quotient space even when the
/// weights are not.
inline AggregateFit mle_aggregate(const Problem& p, const ConstraintSet& cset,
                                  const SolverConfig& cfg = {}) {
  AggregateFit fit;
  fit.method = "mle";
  fit.solve = maximize_over_set(empirical_objective(p), cset, p.dict.m(), cfg);
  fit.lambda = fit.solve.lambda;
  fit.conditions.b_sq = p.family.variance_bound();
  fit.conditions.rank = p.dict.rank();
  fit.conditions.h_inf = sup_bound(p.dict, cset);
  if (std::isfinite(fit.conditions.h_inf)) {
    fit.conditions.kappa_sq = p.family.curvature_floor(fit.conditions.h_inf);
  } else {
    // full space: evaluate the curvature floor over a box of half-width 50
    // around the solution rather than the (empty) global infimum
    const VectorXd eta = p.dict.predict(fit.lambda);
    const double h_box =
        eta.cwiseAbs().maxCoeff() + 50.0 * p.dict.max_row_l1();
    fit.conditions.kappa_sq = p.family.curvature_floor(h_box);
    if (!(fit.conditions.kappa_sq > 0.0))
      throw ConditionViolation(
          "mle_aggregate: curvature floor vanishes near the solution");
    if (p.family.kind() != FamilyKind::normal)
      fit.notes.push_back(
          "full-space curvature floor evaluated on a box around the solution; "
          "the global infimum is zero for this family");
  }
  fit.within_theory = fit.conditions.kappa_sq > 0.0;
  const auto rep = applicability_report(p, cset);
  fit.bounds = rep.bounds;
  return fit;
}

/// The population maximizer over the set; every excess divergence is
/// measured against it, so it runs at 100x tighter tolerance.
inline AggregateFit oracle_weights(const Problem& p, const ConstraintSet& cset,
                                   const SolverConfig& cfg = {},
                                   std::optional<VectorXd> init = std::nullopt) {
  if (!p.truth) throw MissingTruth("oracle_weights needs the synthetic truth");
  AggregateFit fit;
  fit.method = "oracle";
  fit.solve = maximize_over_set(population_objective(p), cset, p.dict.m(),
                                cfg.tightened(1e-2), std::move(init));
  fit.lambda = fit.solve.lambda;
  fit.conditions.b_sq = p.family.variance_bound();
  fit.conditions.rank = p.dict.rank();
  fit.conditions.h_inf = sup_bound(p.dict, cset);
  fit.conditions.kappa_sq = detail::kappa_for(p, cset);
  return fit;
}

/// Excess divergence of lambda_hat over the best of the set, solving the
/// oracle on the fly (prefer the overload taking a precomputed oracle when
/// measuring many fits against one set).
inline ExcessKl excess_kl(const Problem& p, const VectorXd& lambda_hat,
                          const AggregateFit& oracle,
                          bool oracle_dominates = true) {
  return excess_kl_against(p, lambda_hat, oracle.lambda, oracle_dominates);
}

inline ExcessKl excess_kl(const Problem& p, const VectorXd& lambda_hat,
                          const ConstraintSet& cset,
                          const SolverConfig& cfg = {}) {
  return excess_kl(p, lambda_hat, oracle_weights(p, cset, cfg));
}

/// Branch predicate of the rank-dispatched model-selection estimator; the
/// exponential-weights branch wins the tie at rank == log M.
inline bool model_selection_uses_exp_weights(Eigen::Index rank,
                                             Eigen::Index m) {
  return static_cast<double>(rank) >= std::log(static_cast<double>(m));
}

/// Dispatches on the dictionary rank: exponential weights when the span is
/// high-dimensional relative to log M, otherwise the maximum-likelihood
/// aggregate over the unit l1 ball.
inline AggregateFit model_selection_aggregate(const Problem& p,
                                              const SolverConfig& cfg = {}) {
  const Eigen::Index rank = p.dict.rank();
  if (model_selection_uses_exp_weights(rank, p.dict.m())) {
    const ConstraintSet simplex1 = ConstraintSet::simplex(1.0);
    ConditionsRecord cond;
    cond.b_sq = p.family.variance_bound();
    cond.h_inf = sup_bound(p.dict, simplex1);
    cond.kappa_sq = detail::kappa_for(p, simplex1);
    cond.rank = rank;
    if (!cond.b_sq.bounded)
      throw ConditionViolation("model selection: b'' must be bounded");
    if (!(cond.kappa_sq > 0.0))
      throw ConditionViolation("model selection: curvature floor is zero");
    const double beta =
        8.0 * cond.b_sq.value * p.family.dispersion() / cond.kappa_sq;
    AggregateFit fit;
    fit.method = "model_selection";
    fit.beta = beta;
    fit.lambda = exponential_weights(p, beta);
    fit.solve.lambda = fit.lambda;
    fit.solve.converged = true;
    fit.conditions = cond;
    fit.within_theory = true;
    fit.notes.push_back("branch: exponential weights");
    return fit;
  }
  AggregateFit fit = mle_aggregate(p, ConstraintSet::l1_ball(1.0), cfg);
  fit.method = "model_selection";
  fit.notes.push_back("branch: maximum likelihood over the unit l1 ball");
  return fit;
}

struct BoostingReport {
  AggregateFit fit;
  double radius = 0.0;
  double expectation_bound = 0.0;
  double quantile_bound = 0.0;
  double delta = 0.05;
  std::optional<double> phi_risk_value;  // population, when the truth is known
  std::optional<double> phi_gap;         // against the oracle over the l1 ball
  std::optional<double> excess;          // divergence form of the same gap
  std::optional<bool> within_expectation_bound;
  std::optional<bool> within_quantile_bound;
};

/// l1-constrained logistic aggregation of base classifiers with values in
/// [-1, 1]; reports the surrogate-risk gap and the oracle-bound values
///   (2 e R sqrt(pi) / log 2) sqrt(log M / n)
/// and its high-probability counterpart.
inline BoostingReport boosting_aggregate(const Problem& p, double radius,
                                         double delta = 0.05,
                                         const SolverConfig& cfg = {}) {
  if (p.family.kind() != FamilyKind::bernoulli)
    throw WrongFamily("boosting_aggregate requires the bernoulli family");
  if (!p.dict.entries_within(1.0))
    throw DictionaryRangeViolation(
        "boosting_aggregate: base classifiers must take values in [-1,1]");
  if (radius < 0.0) throw DomainError("boosting_aggregate: negative radius");

  BoostingReport rep;
  rep.radius = radius;
  rep.delta = delta;
  const double m = static_cast<double>(p.dict.m());
  const double n = static_cast<double>(p.dict.n());
  const double e = std::numbers::e;
  const double pi = std::numbers::pi;
  const double log2 = std::log(2.0);
  const double root = std::sqrt(std::log(m) / n);
  rep.expectation_bound = 2.0 * e * radius * std::sqrt(pi) / log2 * root;
  rep.quantile_bound = 4.0 * radius * std::sqrt(pi * e) / log2 * root *
                       std::sqrt(std::log(2.0 / delta));

  const ConstraintSet ball = ConstraintSet::l1_ball(radius);
  rep.fit = mle_aggregate(p, ball, cfg);
  rep.fit.method = "boosting";

  if (p.truth) {
    rep.phi_risk_value = phi_risk(p, rep.fit.lambda);
    const AggregateFit oracle = oracle_weights(p, ball, cfg);
    rep.phi_gap = *rep.phi_risk_value - phi_risk(p, oracle.lambda);
    rep.excess = excess_kl(p, rep.fit.lambda, oracle).excess;
    rep.within_expectation_bound = *rep.phi_gap <= rep.expectation_bound;
    rep.within_quantile_bound = *rep.phi_gap <= rep.quantile_bound;
  }
  return rep;
}

inline nlohmann::json bounds_to_json(const std::vector<BoundValue>& bounds) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& b : bounds)
    j[b.name] = {{"applicable", b.applicable}, {"value", b.value}};
  return j;
}

inline nlohmann::json fit_to_json(const AggregateFit& fit) {
  nlohmann::json j;
  j["method"] = fit.method;
  j["lambda"] = std::vector<double>(fit.lambda.data(),
                                    fit.lambda.data() + fit.lambda.size());
  if (fit.beta) j["beta"] = *fit.beta;
  j["objective"] = fit.solve.objective;
  j["converged"] = fit.solve.converged;
  j["iterations"] = fit.solve.iterations;
  j["certificate"] = fit.solve.certificate;
  j["conditions"] = {
      {"bSq", fit.conditions.b_sq.bounded
                  ? nlohmann::json(fit.conditions.b_sq.value)
                  : nlohmann::json("unbounded")},
      {"kappaSq", fit.conditions.kappa_sq},
      {"hInf", std::isfinite(fit.conditions.h_inf)
                   ? nlohmann::json(fit.conditions.h_inf)
                   : nlohmann::json("unbounded")},
      {"D", fit.conditions.rank}};
  j["withinTheory"] = fit.within_theory;
  if (!fit.bounds.empty()) j["bounds"] = bounds_to_json(fit.bounds);
  if (!fit.notes.empty()) j["notes"] = fit.notes;
  return j;
}

inline nlohmann::json report_to_json(const ApplicabilityReport& rep) {
  nlohmann::json j;
  j["bSq"] = rep.b_sq.bounded ? nlohmann::json(rep.b_sq.value)
                              : nlohmann::json("unbounded");
  j["a"] = rep.a;
  j["hInf"] = std::isfinite(rep.h_inf) ? nlohmann::json(rep.h_inf)
                                       : nlohmann::json("unbounded");
  j["kappaSq"] = rep.kappa_sq;
  j["D"] = rep.rank;
  j["M"] = rep.m;
  j["n"] = rep.n;
  j["unitNormColumns"] = rep.unit_norm_columns;
  if (rep.sigma_sq) j["sigmaSq"] = *rep.sigma_sq;
  if (rep.beta_star) j["betaStar"] = *rep.beta_star;
  j["delta"] = rep.delta;
  j["bounds"] = bounds_to_json(rep.bounds);
  return j;
}

}  // namespace klagg
