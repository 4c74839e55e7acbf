#pragma once

// First-order concave maximization over the constraint-set variants:
//   vertices    -> exhaustive evaluation (lowest index wins ties)
//   simplex     -> entropic mirror ascent (exponentiated-gradient updates;
//                  iterates stay strictly positive, so entropy terms and
//                  their gradients remain finite)
//   l1/linf     -> projected gradient ascent with Armijo backtracking
//   full space  -> Newton ascent with conjugate-gradient steps on
//                  Hessian-vector products, Armijo-damped
// plus a brute-force lattice oracle for cross-checking at M <= 3.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>

#include <Eigen/Dense>

#include "klagg/design.hpp"
#include "klagg/errors.hpp"
#include "klagg/objective.hpp"

namespace klagg {

struct SolverConfig {
  int max_iter = 5000;
  double grad_tol = 1e-8;       // sup norm of the projected gradient / gap
  double step_init = 1.0;
  double backtrack = 0.5;       // in (0,1)
  double armijo = 1e-4;         // in (0,1)
  double obj_tol = 1e-12;       // relative objective-change stop

  SolverConfig tightened(double factor, int iter_factor = 4) const {
    SolverConfig c = *this;
    c.grad_tol *= factor;
    c.max_iter *= iter_factor;
    return c;
  }
};

struct SolveResult {
  VectorXd lambda;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  double certificate = 0.0;  // optimality gap at the returned point
};

namespace detail {

/// Evaluate a line-search candidate; domain violations reject the step
/// instead of aborting the solve.
inline bool try_eval(const SmoothObjective& obj, const VectorXd& x,
                     ObjectiveValue& out) {
  try {
    out = obj.eval(x);
    return std::isfinite(out.value);
  } catch (const DomainError&) {
    return false;
  }
}

inline VectorXd hvp_or_fd(const SmoothObjective& obj, const VectorXd& x,
                          const VectorXd& v, const VectorXd& grad_x) {
  if (obj.hvp) return obj.hvp(x, v);
  const double vn = v.norm();
  if (vn == 0.0) return VectorXd::Zero(x.size());
  const double eps = 1e-6 / vn;
  ObjectiveValue fwd;
  if (!try_eval(obj, x + eps * v, fwd)) return VectorXd::Zero(x.size());
  return (fwd.grad - grad_x) / eps;
}

inline SolveResult solve_vertices(const SmoothObjective& obj, Eigen::Index dim) {
  SolveResult best;
  best.lambda = VectorXd::Zero(dim);
  double best_val = -std::numeric_limits<double>::infinity();
  Eigen::Index best_j = 0;
  for (Eigen::Index j = 0; j < dim; ++j) {
    VectorXd e = VectorXd::Zero(dim);
    e(j) = 1.0;
    ObjectiveValue val;
    if (!try_eval(obj, e, val)) continue;
    if (val.value > best_val) {  // strict: lowest index wins ties
      best_val = val.value;
      best_j = j;
    }
  }
  if (!std::isfinite(best_val))
    throw DomainError("vertex enumeration: objective undefined at every vertex");
  best.lambda(best_j) = 1.0;
  best.objective = best_val;
  best.iterations = static_cast<int>(dim);
  best.converged = true;
  best.certificate = 0.0;
  return best;
}

// Near the maximum, objective differences drop below double rounding while
// the gradient-based certificate is still contracting, so the line searches
// also accept steps that shrink the certificate without losing more than
// arithmetic noise in value. Stalls are declared only when both the value
// and the certificate stop moving.
inline double value_noise(double v) { return 1e-13 * (1.0 + std::fabs(v)); }

inline SolveResult solve_simplex(const SmoothObjective& obj, Eigen::Index dim,
                                 double radius, const SolverConfig& cfg,
                                 std::optional<VectorXd> init) {
  SolveResult res;
  if (radius == 0.0) {  // degenerate set {0}
    res.lambda = VectorXd::Zero(dim);
    res.objective = obj.eval(res.lambda).value;
    res.converged = true;
    return res;
  }
  VectorXd lambda =
      init ? project(ConstraintSet::simplex(radius), *init)
           : VectorXd::Constant(dim, radius / static_cast<double>(dim));
  lambda = lambda.cwiseMax(1e-300);
  lambda *= radius / lambda.sum();
  ObjectiveValue cur = obj.eval(lambda);
  auto gap_of = [radius](const VectorXd& l, const VectorXd& g) {
    return std::fmax(g.maxCoeff() - l.dot(g) / radius, 0.0);
  };
  double cur_gap = gap_of(lambda, cur.grad);
  double step = cfg.step_init;

  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    res.iterations = iter;
    if (cur_gap <= cfg.grad_tol) {
      res.converged = true;
      break;
    }
    const double gmax = cur.grad.maxCoeff();
    const double noise = value_noise(cur.value);
    double t = step;
    bool accepted = false;
    for (int ls = 0; ls < 60 && t > 1e-18; ++ls) {
      VectorXd w = lambda.array() * (t * (cur.grad.array() - gmax)).exp();
      w = w.cwiseMax(1e-300);
      VectorXd cand = radius * w / w.sum();
      ObjectiveValue cv;
      if (!try_eval(obj, cand, cv)) {
        t *= cfg.backtrack;
        continue;
      }
      const double dir = cur.grad.dot(cand - lambda);
      const double cand_gap = gap_of(cand, cv.grad);
      // Armijo only while the predicted progress is measurable in doubles;
      // past that point, demand a strict certificate contraction instead
      const bool armijo_ok = cfg.armijo * dir > 10.0 * noise &&
                             cv.value >= cur.value + cfg.armijo * dir - noise;
      const bool cert_ok =
          cand_gap <= 0.98 * cur_gap && cv.value >= cur.value - noise;
      if (armijo_ok || cert_ok) {
        lambda = std::move(cand);
        cur = std::move(cv);
        cur_gap = cand_gap;
        accepted = true;
        step = (armijo_ok && ls == 0) ? std::fmin(t * 2.0, 1e8) : t;
        break;
      }
      t *= cfg.backtrack;
    }
    if (!accepted) break;
  }
  res.certificate = cur_gap;
  res.converged = cur_gap <= cfg.grad_tol;
  res.lambda = std::move(lambda);
  res.objective = cur.value;
  return res;
}

inline SolveResult solve_projected(const SmoothObjective& obj,
                                   const ConstraintSet& cset, Eigen::Index dim,
                                   const SolverConfig& cfg,
                                   std::optional<VectorXd> init) {
  SolveResult res;
  if (cset.radius == 0.0) {
    res.lambda = VectorXd::Zero(dim);
    res.objective = obj.eval(res.lambda).value;
    res.converged = true;
    return res;
  }
  VectorXd lambda = init ? project(cset, *init) : VectorXd::Zero(dim);
  ObjectiveValue cur = obj.eval(lambda);
  auto certificate = [&](const VectorXd& x, const VectorXd& g) {
    return (project(cset, x + g) - x).lpNorm<Eigen::Infinity>();
  };
  double cur_cert = certificate(lambda, cur.grad);
  double step = cfg.step_init;

  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    res.iterations = iter;
    if (cur_cert <= cfg.grad_tol) {
      res.converged = true;
      break;
    }
    const double noise = value_noise(cur.value);
    double t = step;
    bool accepted = false;
    for (int ls = 0; ls < 60 && t > 1e-18; ++ls) {
      VectorXd cand = project(cset, lambda + t * cur.grad);
      ObjectiveValue cv;
      if (!try_eval(obj, cand, cv)) {
        t *= cfg.backtrack;
        continue;
      }
      const double dir = cur.grad.dot(cand - lambda);
      const double cand_cert = certificate(cand, cv.grad);
      const bool armijo_ok = cfg.armijo * dir > 10.0 * noise &&
                             cv.value >= cur.value + cfg.armijo * dir - noise;
      const bool cert_ok =
          cand_cert <= 0.98 * cur_cert && cv.value >= cur.value - noise;
      if (armijo_ok || cert_ok) {
        lambda = std::move(cand);
        cur = std::move(cv);
        cur_cert = cand_cert;
        accepted = true;
        step = (armijo_ok && ls == 0) ? std::fmin(t * 2.0, 1e8) : t;
        break;
      }
      t *= cfg.backtrack;
    }
    if (!accepted) break;
  }
  res.certificate = cur_cert;
  res.converged = cur_cert <= cfg.grad_tol;
  res.lambda = std::move(lambda);
  res.objective = cur.value;
  return res;
}

/// Conjugate gradients on (-Hessian) d = g; the Hessian of a concave
/// objective gives a positive semidefinite system. Early exit on negative
/// curvature or tiny residual keeps d an ascent direction.
inline VectorXd newton_direction(const SmoothObjective& obj, const VectorXd& x,
                                 const ObjectiveValue& cur, int max_cg) {
  const VectorXd& g = cur.grad;
  VectorXd d = VectorXd::Zero(x.size());
  VectorXd r = g;
  VectorXd p = r;
  double rs = r.squaredNorm();
  const double tol = 1e-14 * std::fmax(1.0, rs);
  for (int k = 0; k < max_cg; ++k) {
    if (rs <= tol) break;
    const VectorXd hp = -hvp_or_fd(obj, x, p, g);
    const double php = p.dot(hp);
    if (php <= 1e-14 * p.squaredNorm()) {
      if (k == 0) return g;  // no usable curvature, fall back to the gradient
      break;
    }
    const double alpha = rs / php;
    d += alpha * p;
    r -= alpha * hp;
    const double rs_new = r.squaredNorm();
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  if (d.dot(g) <= 0.0) return g;
  return d;
}

inline SolveResult solve_full_space(const SmoothObjective& obj,
                                    Eigen::Index dim, const SolverConfig& cfg,
                                    std::optional<VectorXd> init) {
  SolveResult res;
  VectorXd lambda = init ? *init : VectorXd::Zero(dim);
  ObjectiveValue cur = obj.eval(lambda);
  const int max_cg = static_cast<int>(std::min<Eigen::Index>(dim, 200)) + 2;
  double cur_cert = cur.grad.lpNorm<Eigen::Infinity>();

  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    res.iterations = iter;
    if (cur_cert <= cfg.grad_tol) {
      res.converged = true;
      break;
    }
    const VectorXd d = newton_direction(obj, lambda, cur, max_cg);
    const double dir = cur.grad.dot(d);
    const double noise = value_noise(cur.value);
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 80 && t > 1e-18; ++ls) {
      ObjectiveValue cv;
      if (!try_eval(obj, lambda + t * d, cv)) {
        t *= cfg.backtrack;
        continue;
      }
      const double cand_cert = cv.grad.lpNorm<Eigen::Infinity>();
      const bool armijo_ok =
          cfg.armijo * t * dir > 10.0 * noise &&
          cv.value >= cur.value + cfg.armijo * t * dir - noise;
      const bool cert_ok =
          cand_cert <= 0.98 * cur_cert && cv.value >= cur.value - noise;
      if (armijo_ok || cert_ok) {
        lambda += t * d;
        cur = std::move(cv);
        cur_cert = cand_cert;
        accepted = true;
        break;
      }
      t *= cfg.backtrack;
    }
    if (!accepted) break;
  }
  res.certificate = cur_cert;
  res.converged = cur_cert <= cfg.grad_tol;
  res.lambda = std::move(lambda);
  res.objective = cur.value;
  return res;
}

}  // namespace detail

/// Maximize a concave objective over the constraint set. converged == true
/// guarantees certificate <= grad_tol; otherwise the best iterate found is
/// returned with converged == false. The returned point is always feasible.
inline SolveResult maximize_over_set(const SmoothObjective& obj,
                                     const ConstraintSet& cset,
                                     Eigen::Index dim,
                                     const SolverConfig& cfg = {},
                                     std::optional<VectorXd> init = std::nullopt) {
  if (dim < 1) throw DimensionMismatch("maximize_over_set: dim must be >= 1");
  switch (cset.kind) {
    case ConstraintSet::Kind::vertices:
      return detail::solve_vertices(obj, dim);
    case ConstraintSet::Kind::simplex:
      return detail::solve_simplex(obj, dim, cset.radius, cfg, std::move(init));
    case ConstraintSet::Kind::l1_ball:
    case ConstraintSet::Kind::linf_box:
      return detail::solve_projected(obj, cset, dim, cfg, std::move(init));
    case ConstraintSet::Kind::full_space:
      return detail::solve_full_space(obj, dim, cfg, std::move(init));
  }
  throw DomainError("unreachable constraint kind");
}

/// Exhaustive lattice search over the constraint set (M <= 3). The first
/// lattice point wins ties (replacement requires a strict improvement).
/// The full space needs a bounding box half-width to stay enumerable.
inline VectorXd grid_oracle(const std::function<double(const VectorXd&)>& objective,
                            const ConstraintSet& cset, Eigen::Index dim,
                            int resolution,
                            std::optional<double> box_half_width = std::nullopt) {
  if (dim < 1 || dim > 3)
    throw DomainError("grid_oracle supports 1 <= M <= 3");
  if (resolution < 2) throw DomainError("grid_oracle: resolution must be >= 2");

  VectorXd best;
  double best_val = -std::numeric_limits<double>::infinity();
  auto consider = [&](const VectorXd& lambda) {
    double v;
    try {
      v = objective(lambda);
    } catch (const DomainError&) {
      return;
    }
    if (std::isfinite(v) && v > best_val) {
      best_val = v;
      best = lambda;
    }
  };

  if (cset.kind == ConstraintSet::Kind::vertices) {
    for (Eigen::Index j = 0; j < dim; ++j) {
      VectorXd e = VectorXd::Zero(dim);
      e(j) = 1.0;
      consider(e);
    }
  } else if (cset.kind == ConstraintSet::Kind::simplex) {
    const int k = resolution - 1;
    const double h = cset.radius / k;
    VectorXd lambda = VectorXd::Zero(dim);
    if (dim == 1) {
      lambda(0) = cset.radius;
      consider(lambda);
    } else if (dim == 2) {
      for (int i = 0; i <= k; ++i) {
        lambda(0) = i * h;
        lambda(1) = cset.radius - lambda(0);
        consider(lambda);
      }
    } else {
      for (int i = 0; i <= k; ++i)
        for (int j = 0; j <= k - i; ++j) {
          lambda(0) = i * h;
          lambda(1) = j * h;
          lambda(2) = cset.radius - lambda(0) - lambda(1);
          consider(lambda);
        }
    }
  } else {
    double half;
    if (cset.kind == ConstraintSet::Kind::full_space) {
      if (!box_half_width)
        throw UnboundedDomain("grid_oracle: full space needs a box hint");
      half = *box_half_width;
    } else {
      half = cset.radius;
    }
    const int k = resolution - 1;
    const double h = 2.0 * half / k;
    VectorXd lambda = VectorXd::Zero(dim);
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    while (true) {
      for (Eigen::Index d = 0; d < dim; ++d)
        lambda(d) = -half + h * idx[static_cast<std::size_t>(d)];
      if (cset.kind != ConstraintSet::Kind::l1_ball ||
          lambda.lpNorm<1>() <= cset.radius + 1e-12)
        consider(lambda);
      Eigen::Index d = 0;
      for (; d < dim; ++d) {
        if (++idx[static_cast<std::size_t>(d)] <= k) break;
        idx[static_cast<std::size_t>(d)] = 0;
      }
      if (d == dim) break;
    }
  }
  if (!std::isfinite(best_val))
    throw DomainError("grid_oracle: objective undefined on the whole lattice");
  return best;
}

}  // namespace klagg
