#pragma once

// Empirical log-likelihood, its population counterpart, mean Kullback-Leibler
// divergence against the synthetic truth, excess divergence relative to an
// oracle, and the logistic surrogate risk. All are functions of the
// systematic components eta_i = f_lambda(x_i) through (a, b, b', b'').

#include <cmath>
#include <functional>
#include <optional>

#include <Eigen/Dense>

#include "klagg/design.hpp"
#include "klagg/errors.hpp"
#include "klagg/family.hpp"

namespace klagg {

/// One regression instance: the family, the dictionary on the design, the
/// observed responses (for empirical objectives) and/or the synthetic truth
/// (for population objectives).
struct Problem {
  Family family;
  Dictionary dict;
  std::optional<VectorXd> responses;
  std::optional<Truth> truth;

  Problem(Family f, Dictionary d, std::optional<VectorXd> y = std::nullopt,
          std::optional<Truth> t = std::nullopt)
      : family(std::move(f)),
        dict(std::move(d)),
        responses(std::move(y)),
        truth(std::move(t)) {
    if (responses) {
      if (responses->size() != dict.n())
        throw DimensionMismatch("responses length != n");
      for (Eigen::Index i = 0; i < responses->size(); ++i)
        if (!family.in_support((*responses)(i)))
          throw DomainError("response outside family support");
    }
    if (truth && truth->means.size() != dict.n())
      throw DimensionMismatch("truth length != n");
  }

  const VectorXd& y() const {
    if (!responses) throw DomainError("problem carries no responses");
    return *responses;
  }
  const Truth& truth_ref() const {
    if (!truth) throw MissingTruth("problem carries no truth");
    return *truth;
  }
};

struct ObjectiveValue {
  double value;
  VectorXd grad;
};

/// Concave objective with gradient and (optionally) Hessian-vector products.
struct SmoothObjective {
  std::function<ObjectiveValue(const VectorXd&)> eval;
  std::function<VectorXd(const VectorXd&, const VectorXd&)> hvp;  // may be empty
};

namespace detail {

/// Systematic components with the domain check for half-line families.
inline VectorXd systematic(const Problem& p, const VectorXd& lambda) {
  VectorXd eta = p.dict.predict(lambda);
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    if (!p.family.theta_valid(eta(i)))
      throw DomainError("systematic component leaves the parameter domain");
  return eta;
}

struct CumulantRows {
  VectorXd b, db, d2b;
};

inline CumulantRows cumulant_rows(const Family& family, const VectorXd& eta) {
  CumulantRows r{VectorXd(eta.size()), VectorXd(eta.size()),
                 VectorXd(eta.size())};
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const Cumulant c = family.cumulant(eta(i));
    r.b(i) = c.b;
    r.db(i) = c.db;
    r.d2b(i) = c.d2b;
  }
  return r;
}

}  // namespace detail

/// l_n(lambda) = sum_i [ Y_i eta_i - b(eta_i) ]; concave in lambda.
inline ObjectiveValue empirical_score_grad(const Problem& p,
                                           const VectorXd& lambda) {
  const VectorXd eta = detail::systematic(p, lambda);
  const auto c = detail::cumulant_rows(p.family, eta);
  const VectorXd& y = p.y();
  return {y.dot(eta) - c.b.sum(),
          p.dict.values().transpose() * (y - c.db)};
}

inline double empirical_score(const Problem& p, const VectorXd& lambda) {
  const VectorXd eta = detail::systematic(p, lambda);
  double s = 0.0;
  const VectorXd& y = p.y();
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    s += y(i) * eta(i) - p.family.cumulant(eta(i)).b;
  return s;
}

inline SmoothObjective empirical_objective(const Problem& p) {
  return {[&p](const VectorXd& lambda) { return empirical_score_grad(p, lambda); },
          [&p](const VectorXd& lambda, const VectorXd& v) {
            const VectorXd eta = detail::systematic(p, lambda);
            const auto c = detail::cumulant_rows(p.family, eta);
            const VectorXd av = p.dict.values() * v;
            return VectorXd(-(p.dict.values().transpose() *
                              c.d2b.cwiseProduct(av)));
          }};
}

/// Population objective L(lambda) = <f, f_lambda> - <b o f_lambda, 1>;
/// maximizing it is equivalent to minimizing the mean divergence, and
/// E l_n(lambda) / n = L(lambda) + a term free of lambda.
inline ObjectiveValue population_score_grad(const Problem& p,
                                            const VectorXd& lambda) {
  const Truth& t = p.truth_ref();
  const VectorXd eta = detail::systematic(p, lambda);
  const auto c = detail::cumulant_rows(p.family, eta);
  const double n = static_cast<double>(p.dict.n());
  return {(t.means.dot(eta) - c.b.sum()) / n,
          p.dict.values().transpose() * (t.means - c.db) / n};
}

inline double population_score(const Problem& p, const VectorXd& lambda) {
  return population_score_grad(p, lambda).value;
}

inline SmoothObjective population_objective(const Problem& p) {
  return {[&p](const VectorXd& lambda) { return population_score_grad(p, lambda); },
          [&p](const VectorXd& lambda, const VectorXd& v) {
            const VectorXd eta = detail::systematic(p, lambda);
            const auto c = detail::cumulant_rows(p.family, eta);
            const VectorXd av = p.dict.values() * v;
            return VectorXd(-(p.dict.values().transpose() *
                              c.d2b.cwiseProduct(av)) /
                            static_cast<double>(p.dict.n()));
          }};
}

/// Normalized divergence between the truth and the model b' o f_lambda:
/// (1/n) sum_i KL_i, each KL_i the Bregman divergence of b.
inline double mean_kl(const Problem& p, const VectorXd& lambda) {
  const Truth& t = p.truth_ref();
  const VectorXd eta = detail::systematic(p, lambda);
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    s += p.family.bregman_kl(t.canonical(i), eta(i));
  return s / static_cast<double>(p.dict.n());
}

struct ExcessKl {
  double excess;   // (L(lambda_star) - L(lambda_hat)) / a, floored at zero
  double sq_dist;  // ||f_lambda_hat - f_lambda_star||^2 in the quotient norm
};

/// Excess divergence of lambda_hat against a given oracle, computed through
/// population-score differences (the entropy term cancels and is never
/// materialized). When lambda_hat is feasible for the oracle's own set
/// (oracle_dominates), values below -1e-9 indicate an untrusted oracle;
/// against a strict subset such as the vertex set, beating the oracle is
/// legitimate and the excess is floored at zero.
inline ExcessKl excess_kl_against(const Problem& p, const VectorXd& lambda_hat,
                                  const VectorXd& lambda_star,
                                  bool oracle_dominates = true) {
  const double l_hat = population_score(p, lambda_hat);
  const double l_star = population_score(p, lambda_star);
  const double raw = (l_star - l_hat) / p.family.dispersion();
  if (oracle_dominates && raw < -1e-9)
    throw OracleNotConverged("excess divergence negative beyond tolerance: " +
                             std::to_string(raw));
  const VectorXd diff = p.dict.predict(lambda_hat) - p.dict.predict(lambda_star);
  return {std::fmax(raw, 0.0), p.dict.seminorm(diff) * p.dict.seminorm(diff)};
}

/// Logistic surrogate risk phi(x) = log(1+e^x)/log 2 for the Bernoulli
/// family. Population form uses the truth means as label probabilities; the
/// empirical flag averages phi(-ytilde_i * eta_i) over the observed labels.
inline double phi_risk(const Problem& p, const VectorXd& lambda,
                       bool empirical = false) {
  if (p.family.kind() != FamilyKind::bernoulli)
    throw WrongFamily("phi_risk requires the bernoulli family");
  const VectorXd eta = p.dict.predict(lambda);
  const double log2 = std::log(2.0);
  double s = 0.0;
  if (empirical) {
    const VectorXd& y = p.y();
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double ytilde = 2.0 * y(i) - 1.0;
      s += detail::softplus(-ytilde * eta(i)) / log2;
    }
  } else {
    const Truth& t = p.truth_ref();
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double prob = t.means(i);
      s += (prob * detail::softplus(-eta(i)) +
            (1.0 - prob) * detail::softplus(eta(i))) /
           log2;
    }
  }
  return s / static_cast<double>(p.dict.n());
}

}  // namespace klagg
