#pragma once

// One-parameter canonical exponential families: density
//   p(y; theta) = exp{ (y*theta - b(theta)) / a + c(y) },
// with cumulant b, dispersion a > 0 and canonical parameter theta.
// Supported kinds: Normal(sigma2), Bernoulli, Poisson, Gamma(alpha),
// NegativeBinomial(r). The cumulant derivatives give mean b'(theta) and
// variance a*b''(theta); everything downstream (scores, divergences,
// curvature constants) is expressed through (a, b, b', b'').

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include <json.hpp>

#include "klagg/errors.hpp"

namespace klagg {

enum class FamilyKind { normal, bernoulli, poisson, gamma, negative_binomial };

/// b(theta) and its first two derivatives at one point.
struct Cumulant {
  double b;
  double db;
  double d2b;
};

/// Upper bound on b'' over the whole parameter domain. Unbounded families
/// (Poisson, Gamma, NegativeBinomial) carry an explicit marker rather than a
/// float sentinel so that applicability checks can branch on it.
struct VarianceBound {
  bool bounded;
  double value;  // meaningful only when bounded

  static VarianceBound finite(double v) { return {true, v}; }
  static VarianceBound unbounded() { return {false, 0.0}; }
};

/// Closed interval of canonical parameters, possibly empty or infinite.
struct ThetaInterval {
  double lo = 0.0;
  double hi = 0.0;
  bool is_empty = true;

  static ThetaInterval empty() { return {}; }
  static ThetaInterval of(double lo, double hi) { return {lo, hi, false}; }
  static ThetaInterval all() {
    return of(-std::numeric_limits<double>::infinity(),
              std::numeric_limits<double>::infinity());
  }
  bool contains(double x, double tol = 0.0) const {
    return !is_empty && x >= lo - tol && x <= hi + tol;
  }
};

namespace detail {

inline double softplus(double x) {
  // max-shift form; exact through |x| ~ 700 without overflow
  return std::fmax(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double sigmoid_product(double x) {
  // sigmoid(x) * sigmoid(-x), stable for |x| > 35
  const double e = std::exp(-std::fabs(x));
  const double d = 1.0 + e;
  return e / (d * d);
}

}  // namespace detail

class Family {
 public:
  static Family normal(double sigma2) {
    require(sigma2 > 0.0, "normal: sigma2 must be positive");
    return Family(FamilyKind::normal, sigma2, sigma2);
  }
  static Family bernoulli() { return Family(FamilyKind::bernoulli, 0.0, 1.0); }
  static Family poisson() { return Family(FamilyKind::poisson, 0.0, 1.0); }
  static Family gamma(double alpha) {
    require(alpha > 0.0, "gamma: alpha must be positive");
    return Family(FamilyKind::gamma, alpha, 1.0 / alpha);
  }
  static Family negative_binomial(double r) {
    require(r > 0.0, "negative_binomial: r must be positive");
    return Family(FamilyKind::negative_binomial, r, 1.0);
  }

  FamilyKind kind() const { return kind_; }
  double dispersion() const { return a_; }
  /// sigma2 / alpha / r depending on the kind.
  double shape() const { return shape_; }

  /// The canonical-parameter domain. Gamma and NegativeBinomial live on the
  /// open half-line (-inf, 0); the table form r*e^H/(1-e^H)^2 for the
  /// negative binomial equals b'' evaluated at theta = -H on that domain.
  ThetaInterval theta_domain() const {
    if (kind_ == FamilyKind::gamma || kind_ == FamilyKind::negative_binomial)
      return ThetaInterval::of(-std::numeric_limits<double>::infinity(), 0.0);
    return ThetaInterval::all();
  }

  /// Strict-interior domain check (open at 0 for Gamma/NegativeBinomial).
  bool theta_valid(double theta) const {
    if (!std::isfinite(theta)) return false;
    if (kind_ == FamilyKind::gamma || kind_ == FamilyKind::negative_binomial)
      return theta < 0.0;
    return true;
  }

  Cumulant cumulant(double theta) const {
    check_theta(theta);
    switch (kind_) {
      case FamilyKind::normal:
        return {0.5 * theta * theta, theta, 1.0};
      case FamilyKind::bernoulli:
        return {detail::softplus(theta), detail::sigmoid(theta),
                detail::sigmoid_product(theta)};
      case FamilyKind::poisson: {
        if (theta > 700.0) throw OverflowGuard("poisson cumulant: exp overflow");
        const double e = std::exp(theta);
        return {e, e, e};
      }
      case FamilyKind::gamma:
        return {-std::log(-theta), -1.0 / theta, 1.0 / (theta * theta)};
      case FamilyKind::negative_binomial: {
        // b = r*(theta - log(1 - e^theta)) on theta < 0
        const double e = std::exp(theta);
        const double om = -std::expm1(theta);  // 1 - e^theta, exact near 0
        return {shape_ * (theta - std::log1p(-e)), shape_ / om,
                shape_ * e / (om * om)};
      }
    }
    throw DomainError("unreachable family kind");
  }

  double mean(double theta) const { return cumulant(theta).db; }
  double variance(double theta) const { return a_ * cumulant(theta).d2b; }

  /// Inverse of b' on its open image, computed analytically per family.
  double mean_to_canonical(double mu) const {
    if (!std::isfinite(mu)) throw DomainError("mean_to_canonical: non-finite mean");
    switch (kind_) {
      case FamilyKind::normal:
        return mu;
      case FamilyKind::bernoulli:
        if (mu <= 0.0 || mu >= 1.0)
          throw DomainError("bernoulli mean must lie in (0,1)");
        return std::log(mu) - std::log1p(-mu);
      case FamilyKind::poisson:
        if (mu <= 0.0) throw DomainError("poisson mean must be positive");
        return std::log(mu);
      case FamilyKind::gamma:
        if (mu <= 0.0) throw DomainError("gamma mean must be positive");
        return -1.0 / mu;
      case FamilyKind::negative_binomial:
        if (mu <= shape_)
          throw DomainError("negative_binomial mean must exceed r");
        return std::log1p(-shape_ / mu);
    }
    throw DomainError("unreachable family kind");
  }

  /// Bregman divergence of b between two canonical parameters, divided by the
  /// dispersion. Equals the per-observation Kullback-Leibler divergence
  /// KL(p(.;theta_true) || p(.;theta_model)); nonnegative, zero iff equal.
  double bregman_kl(double theta_true, double theta_model) const {
    const Cumulant t = cumulant(theta_true);
    const Cumulant m = cumulant(theta_model);
    const double v = (m.b - t.b - t.db * (theta_model - theta_true)) / a_;
    return std::fmax(v, 0.0);
  }

  /// One draw with mean b'(theta), variance a*b''(theta).
  double sample(double theta, std::mt19937_64& rng) const {
    check_theta(theta);
    switch (kind_) {
      case FamilyKind::normal: {
        std::normal_distribution<double> d(theta, std::sqrt(shape_));
        return d(rng);
      }
      case FamilyKind::bernoulli: {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        return u(rng) < detail::sigmoid(theta) ? 1.0 : 0.0;
      }
      case FamilyKind::poisson: {
        if (theta > 80.0) throw OverflowGuard("poisson sample: rate too large");
        std::poisson_distribution<long> d(std::exp(theta));
        return static_cast<double>(d(rng));
      }
      case FamilyKind::gamma: {
        // shape alpha, rate -alpha*theta
        std::gamma_distribution<double> d(shape_, -1.0 / (shape_ * theta));
        return d(rng);
      }
      case FamilyKind::negative_binomial: {
        // gamma-Poisson mixture; valid for non-integer r, support {r, r+1, ...}
        const double e = std::exp(theta);
        std::gamma_distribution<double> g(shape_, e / (1.0 - e));
        std::poisson_distribution<long> p(g(rng));
        return shape_ + static_cast<double>(p(rng));
      }
    }
    throw DomainError("unreachable family kind");
  }

  /// sup over the domain of b''; the Normal and Bernoulli are the only
  /// bounded cases.
  VarianceBound variance_bound() const {
    switch (kind_) {
      case FamilyKind::normal:
        return VarianceBound::finite(1.0);
      case FamilyKind::bernoulli:
        return VarianceBound::finite(0.25);
      default:
        return VarianceBound::unbounded();
    }
  }

  /// min of b'' over [-h_inf, h_inf] intersected with the domain; the strong
  /// concavity modulus available when systematic components stay in that box.
  /// Closed forms per family (b'' is unimodal or monotone for all five).
  double curvature_floor(double h_inf) const {
    if (!std::isfinite(h_inf) || h_inf < 0.0)
      throw DomainError("curvature_floor: h_inf must be finite and nonnegative");
    switch (kind_) {
      case FamilyKind::normal:
        return 1.0;
      case FamilyKind::bernoulli:
        return detail::sigmoid_product(h_inf);
      case FamilyKind::poisson:
        return std::exp(-h_inf);
      case FamilyKind::gamma:
        if (h_inf <= 0.0)
          throw DomainError("curvature_floor: [-h,h] misses the gamma domain");
        return 1.0 / (h_inf * h_inf);
      case FamilyKind::negative_binomial: {
        if (h_inf <= 0.0)
          throw DomainError(
              "curvature_floor: [-h,h] misses the negative binomial domain");
        const double e = std::exp(-h_inf);
        const double om = -std::expm1(-h_inf);
        return shape_ * e / (om * om);
      }
    }
    throw DomainError("unreachable family kind");
  }

  /// Grid fallback for curvature_floor; kept as an independent route for
  /// future families and for cross-checking the closed forms.
  double curvature_floor_by_grid(double h_inf, int points = 2001) const {
    if (!std::isfinite(h_inf) || h_inf < 0.0)
      throw DomainError("curvature_floor_by_grid: bad h_inf");
    const ThetaInterval dom = theta_domain();
    double lo = std::fmax(-h_inf, dom.lo);
    double hi = std::fmin(h_inf, dom.hi);
    if (dom.hi == 0.0) hi = std::fmin(hi, -1e-12);  // open at 0
    if (lo > hi) throw DomainError("curvature_floor_by_grid: empty interval");
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < points; ++k) {
      const double theta =
          points == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / (points - 1);
      best = std::fmin(best, cumulant(theta).d2b);
    }
    return best;
  }

  /// Level set {theta : b''(theta) >= kappa_sq}, intersected with the domain.
  /// Empty is a valid return (e.g. Bernoulli with kappa_sq > 1/4).
  ThetaInterval curvature_level_set(double kappa_sq) const {
    if (!(kappa_sq > 0.0))
      throw DomainError("curvature_level_set: kappa_sq must be positive");
    const double inf = std::numeric_limits<double>::infinity();
    switch (kind_) {
      case FamilyKind::normal:
        return kappa_sq <= 1.0 ? ThetaInterval::all() : ThetaInterval::empty();
      case FamilyKind::bernoulli: {
        if (kappa_sq > 0.25) return ThetaInterval::empty();
        if (kappa_sq == 0.25) return ThetaInterval::of(0.0, 0.0);
        const double kappa = std::sqrt(kappa_sq);
        const double s = std::sqrt(1.0 - 4.0 * kappa_sq);
        return ThetaInterval::of(2.0 * std::log((1.0 - s) / (2.0 * kappa)),
                                 2.0 * std::log((1.0 + s) / (2.0 * kappa)));
      }
      case FamilyKind::poisson:
        return ThetaInterval::of(std::log(kappa_sq), inf);
      case FamilyKind::gamma:
        return ThetaInterval::of(-1.0 / std::sqrt(kappa_sq), 0.0);
      case FamilyKind::negative_binomial: {
        // solve r*v = kappa_sq*(1-v)^2 for v = e^theta in (0,1)
        const double s = 2.0 * kappa_sq + shape_;
        const double v = (s - std::sqrt(s * s - 4.0 * kappa_sq * kappa_sq)) /
                         (2.0 * kappa_sq);
        return ThetaInterval::of(std::log(v), 0.0);
      }
    }
    throw DomainError("unreachable family kind");
  }

  /// Full log density including the base-measure term c(y), so that the
  /// values integrate (or sum) to one.
  double log_density(double y, double theta) const {
    check_theta(theta);
    if (!in_support(y)) throw DomainError("log_density: y outside support");
    const Cumulant c = cumulant(theta);
    return (y * theta - c.b) / a_ + log_base_measure(y);
  }

  bool in_support(double y) const {
    if (!std::isfinite(y)) return false;
    switch (kind_) {
      case FamilyKind::normal:
        return true;
      case FamilyKind::bernoulli:
        return y == 0.0 || y == 1.0;
      case FamilyKind::poisson:
        return y >= 0.0 && is_integer(y);
      case FamilyKind::gamma:
        return y > 0.0;
      case FamilyKind::negative_binomial:
        return y >= shape_ && is_integer(y - shape_);
    }
    return false;
  }

  std::string name() const {
    switch (kind_) {
      case FamilyKind::normal: return "normal";
      case FamilyKind::bernoulli: return "bernoulli";
      case FamilyKind::poisson: return "poisson";
      case FamilyKind::gamma: return "gamma";
      case FamilyKind::negative_binomial: return "negative_binomial";
    }
    return "?";
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"kind", name()}};
    if (kind_ == FamilyKind::normal) j["sigma2"] = shape_;
    if (kind_ == FamilyKind::gamma) j["alpha"] = shape_;
    if (kind_ == FamilyKind::negative_binomial) j["r"] = shape_;
    return j;
  }

  static Family from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "normal") return normal(j.value("sigma2", 1.0));
    if (kind == "bernoulli") return bernoulli();
    if (kind == "poisson") return poisson();
    if (kind == "gamma") return gamma(j.at("alpha").get<double>());
    if (kind == "negative_binomial")
      return negative_binomial(j.at("r").get<double>());
    throw ValidationError("unknown family kind: " + kind);
  }

 private:
  Family(FamilyKind kind, double shape, double a)
      : kind_(kind), shape_(shape), a_(a) {}

  static void require(bool ok, const char* msg) {
    if (!ok) throw DomainError(msg);
  }

  void check_theta(double theta) const {
    if (!theta_valid(theta))
      throw DomainError(name() + ": canonical parameter outside domain");
  }

  static bool is_integer(double y) {
    return std::fabs(y - std::nearbyint(y)) < 1e-9;
  }

  double log_base_measure(double y) const {
    switch (kind_) {
      case FamilyKind::normal:
        return -0.5 * y * y / shape_ -
               0.5 * std::log(2.0 * std::numbers::pi * shape_);
      case FamilyKind::bernoulli:
        return 0.0;
      case FamilyKind::poisson:
        return -std::lgamma(y + 1.0);
      case FamilyKind::gamma:
        return shape_ * std::log(shape_) - std::lgamma(shape_) +
               (shape_ - 1.0) * std::log(y);
      case FamilyKind::negative_binomial:
        // log C(y-1, r-1) for support y = r + k, k = 0, 1, ...
        return std::lgamma(y) - std::lgamma(shape_) -
               std::lgamma(y - shape_ + 1.0);
    }
    return 0.0;
  }

  FamilyKind kind_;
  double shape_;  // sigma2 | alpha | r; unused for bernoulli/poisson
  double a_;      // dispersion
};

/// The pair (B^2, kappa^2) governing tail and curvature behaviour at a given
/// sup bound on the systematic component. kappa_sq <= B^2 always.
struct CurvatureConstants {
  VarianceBound b_sq;
  double kappa_sq;
};

inline CurvatureConstants curvature_constants(const Family& family,
                                              double h_inf) {
  return {family.variance_bound(), family.curvature_floor(h_inf)};
}

}  // namespace klagg
