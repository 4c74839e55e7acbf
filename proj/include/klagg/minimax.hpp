#pragma once

// Constructive machinery behind the optimality results: the rate formulas,
// Rademacher dictionaries with an empirically audited weak restricted
// isometry (WRI), greedy randomized Hamming packings, and the hypothesis
// families witnessing the lower bounds for the three aggregation problems.
// Packing-rate and isometry constants are never assumed: cardinalities come
// from the packing actually achieved and the isometry ratios from the audit,
// with the scale tau then chosen as the largest value the audited
// constraints permit.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "klagg/design.hpp"
#include "klagg/errors.hpp"
#include "klagg/family.hpp"
#include "klagg/rng.hpp"

namespace klagg {

inline constexpr double kSparsityBudget = 0.1;  // C0; the theory needs < 1/2

enum class AggregationProblem { model_selection, linear, convex };

inline std::string problem_name(AggregationProblem p) {
  switch (p) {
    case AggregationProblem::model_selection: return "model_selection";
    case AggregationProblem::linear: return "linear";
    case AggregationProblem::convex: return "convex";
  }
  return "?";
}

inline AggregationProblem problem_from_name(const std::string& s) {
  if (s == "model_selection") return AggregationProblem::model_selection;
  if (s == "linear") return AggregationProblem::linear;
  if (s == "convex") return AggregationProblem::convex;
  throw ValidationError("unknown aggregation problem: " + s);
}

struct RateSpec {
  AggregationProblem problem;
  Eigen::Index n = 1;
  Eigen::Index m = 1;
  Eigen::Index d = 1;

  void validate() const {
    if (n < 1 || m < 1 || d < 1 || d > std::min(m, n))
      throw DomainError("rate spec: need 1 <= D <= min(M, n)");
  }
};

/// Achievable rate of the matching estimator.
inline double upper_rate(const RateSpec& spec) {
  spec.validate();
  const double n = static_cast<double>(spec.n);
  const double m = static_cast<double>(spec.m);
  const double d = static_cast<double>(spec.d);
  switch (spec.problem) {
    case AggregationProblem::model_selection:
      return std::fmin(d / n, std::log(m) / n);
    case AggregationProblem::linear:
      return d / n;
    case AggregationProblem::convex:
      return std::fmin(d / n, std::sqrt(std::log(m) / n));
  }
  return 0.0;
}

/// Minimax-optimal rate; smaller than the upper rate only for convex
/// aggregation, where the logarithm gains a 1 + eM/sqrt(n) argument.
inline double optimal_rate(const RateSpec& spec) {
  spec.validate();
  const double n = static_cast<double>(spec.n);
  const double m = static_cast<double>(spec.m);
  const double d = static_cast<double>(spec.d);
  switch (spec.problem) {
    case AggregationProblem::model_selection:
      return std::fmin(d / n, std::log(m) / n);
    case AggregationProblem::linear:
      return d / n;
    case AggregationProblem::convex:
      return std::fmin(
          d / n,
          std::sqrt(std::log(1.0 + std::numbers::e * m / std::sqrt(n)) / n));
  }
  return 0.0;
}

struct WriCertificate {
  double chi_lo = 0.0;   // observed min of |X lambda|^2 / D over the audit
  double chi_hi = 0.0;   // observed max
  double target_lo = 0.0;
  double target_hi = 0.0;
  long supports_checked = 0;
  bool exhaustive = false;
  bool pass = false;
};

struct WriDictionary {
  MatrixXd x;  // D x M, entries exactly +-1
  int sparsity = 0;
  WriCertificate cert;
};

namespace detail {

inline double binomial_coefficient_capped(int m, int k, double cap) {
  double c = 1.0;
  for (int i = 0; i < k; ++i) {
    c *= static_cast<double>(m - i) / static_cast<double>(i + 1);
    if (c > cap) return cap + 1.0;
  }
  return c;
}

/// Ratios |X v|^2 / D over random k-sparse unit directions v. Supports are
/// enumerated exhaustively when their count is small and sampled otherwise;
/// each support contributes one uniform unit direction.
inline WriCertificate audit_wri(const MatrixXd& x, int k, double target_lo,
                                double target_hi, std::uint64_t seed,
                                int samples) {
  const int m = static_cast<int>(x.cols());
  const double d = static_cast<double>(x.rows());
  WriCertificate cert;
  cert.target_lo = target_lo;
  cert.target_hi = target_hi;
  cert.chi_lo = std::numeric_limits<double>::infinity();
  cert.chi_hi = 0.0;

  auto rng = make_stream(seed, 0x5752'4941ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto check_support = [&](const std::vector<int>& support) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(support.size()));
    for (Eigen::Index c = 0; c < v.size(); ++c) v(c) = gauss(rng);
    v /= v.norm();
    Eigen::VectorXd xv = Eigen::VectorXd::Zero(x.rows());
    for (std::size_t c = 0; c < support.size(); ++c)
      xv += v(static_cast<Eigen::Index>(c)) * x.col(support[c]);
    const double ratio = xv.squaredNorm() / d;
    cert.chi_lo = std::fmin(cert.chi_lo, ratio);
    cert.chi_hi = std::fmax(cert.chi_hi, ratio);
    ++cert.supports_checked;
  };

  if (binomial_coefficient_capped(m, k, 1e5) <= 1e5) {
    cert.exhaustive = true;
    std::vector<int> support(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) support[static_cast<std::size_t>(i)] = i;
    while (true) {
      check_support(support);
      int i = k - 1;
      while (i >= 0 && support[static_cast<std::size_t>(i)] == m - k + i) --i;
      if (i < 0) break;
      ++support[static_cast<std::size_t>(i)];
      for (int j = i + 1; j < k; ++j)
        support[static_cast<std::size_t>(j)] =
            support[static_cast<std::size_t>(j - 1)] + 1;
    }
  } else {
    std::vector<int> pool(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (int s = 0; s < samples; ++s) {
      for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<int> pick(i, m - 1);
        std::swap(pool[static_cast<std::size_t>(i)],
                  pool[static_cast<std::size_t>(pick(rng))]);
      }
      std::vector<int> support(pool.begin(), pool.begin() + k);
      check_support(support);
    }
  }
  cert.pass = cert.chi_lo >= target_lo && cert.chi_hi <= target_hi;
  return cert;
}

}  // namespace detail

/// Samples D x M Rademacher matrices until the empirical WRI audit passes:
/// over 2S-sparse directions, |X lambda|^2 / D must stay inside
/// [target_lo, target_hi]. The sparsity budget (S/D) log(1 + eM/S) < c0 is a
/// precondition. Deterministic given the seed.
inline WriDictionary rademacher_wri_dictionary(
    int d, int m, int sparsity, std::uint64_t seed, int max_tries = 50,
    double target_lo = 0.3, double target_hi = 1.7,
    double c0 = kSparsityBudget, int audit_samples = 2000) {
  if (d < 1 || m < 1) throw DomainError("wri dictionary: need D, M >= 1");
  if (sparsity < 1)
    throw PreconditionViolation("wri dictionary: sparsity must be >= 1");
  if (max_tries < 1) throw DomainError("wri dictionary: max_tries must be >= 1");
  const double budget =
      static_cast<double>(sparsity) / d *
      std::log(1.0 + std::numbers::e * m / sparsity);
  if (!(budget < c0))
    throw PreconditionViolation(
        "wri dictionary: (S/D) log(1+eM/S) = " + std::to_string(budget) +
        " >= c0 = " + std::to_string(c0));

  const int k = std::min(2 * sparsity, m);
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    auto rng = make_stream(seed, static_cast<std::uint64_t>(attempt));
    std::uniform_int_distribution<int> coin(0, 1);
    MatrixXd x(d, m);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        x(i, j) = coin(rng) == 0 ? -1.0 : 1.0;
    WriCertificate cert = detail::audit_wri(
        x, k, target_lo, target_hi,
        seed ^ static_cast<std::uint64_t>(attempt), audit_samples);
    if (cert.pass) {
      WriDictionary out;
      out.x = std::move(x);
      out.sparsity = sparsity;
      out.cert = cert;
      return out;
    }
  }
  throw GenerationFailed("wri dictionary: no sample passed the audit after " +
                         std::to_string(max_tries) + " tries");
}

using BinaryVector = std::vector<std::uint8_t>;

inline int hamming_distance(const BinaryVector& a, const BinaryVector& b) {
  if (a.size() != b.size())
    throw DimensionMismatch("hamming distance: lengths differ");
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

/// Greedy randomized packing of {0,1}^dim (or of the weight-ell slice when
/// within_weight is set): sample candidates, accept those at Hamming
/// distance >= min_dist from everything accepted, stop once a patience
/// budget of consecutive rejections is spent. Every returned pair is
/// re-verified before returning.
inline std::vector<BinaryVector> hamming_packing(
    int dim, std::optional<int> within_weight, int min_dist,
    std::uint64_t seed, int patience = 400, int max_size = 512) {
  if (dim < 1) throw DomainError("hamming packing: dim must be >= 1");
  if (min_dist < 1) throw DomainError("hamming packing: min_dist must be >= 1");
  if (dim < min_dist)
    throw EmptyPacking("hamming packing: dim < min_dist");
  if (within_weight && (*within_weight < 0 || *within_weight > dim))
    throw DomainError("hamming packing: weight outside [0, dim]");

  auto rng = make_stream(seed, 0x5041'434bULL);
  std::uniform_int_distribution<int> coin(0, 1);
  std::vector<int> pool(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) pool[static_cast<std::size_t>(i)] = i;

  auto draw = [&]() {
    BinaryVector v(static_cast<std::size_t>(dim), 0);
    if (within_weight) {
      for (int i = 0; i < *within_weight; ++i) {
        std::uniform_int_distribution<int> pick(i, dim - 1);
        std::swap(pool[static_cast<std::size_t>(i)],
                  pool[static_cast<std::size_t>(pick(rng))]);
        v[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)])] = 1;
      }
    } else {
      for (int i = 0; i < dim; ++i)
        v[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(coin(rng));
    }
    return v;
  };

  std::vector<BinaryVector> accepted;
  int rejections = 0;
  while (rejections < patience &&
         accepted.size() < static_cast<std::size_t>(max_size)) {
    BinaryVector cand = draw();
    bool ok = true;
    for (const auto& v : accepted)
      if (hamming_distance(cand, v) < min_dist) {
        ok = false;
        break;
      }
    if (ok) {
      accepted.push_back(std::move(cand));
      rejections = 0;
    } else {
      ++rejections;
    }
  }
  for (std::size_t i = 0; i < accepted.size(); ++i)
    for (std::size_t j = i + 1; j < accepted.size(); ++j)
      if (hamming_distance(accepted[i], accepted[j]) < min_dist)
        throw GenerationFailed("hamming packing: certification failed");
  return accepted;
}

struct HypothesisFamily {
  Dictionary dict;
  std::vector<VectorXd> hypotheses;  // weight vectors, feasible in constraint
  ConstraintSet constraint;
  double separation = 0.0;   // min pairwise ||g - h||^2
  double kl_diameter = 0.0;  // max pairwise joint divergence, quadratic bound
  double packing_log = 0.0;  // log cardinality
};

struct LowerBoundAudit {
  bool norm_ok = false;        // (A) column norms and rank
  bool feasible_ok = false;    // (B) every hypothesis inside the set
  bool separation_ok = false;  // (C) positive pairwise separation
  bool kl_ok = false;          // (D) kl diameter < log(card)/8
  double min_separation = 0.0;
  double kl_diameter = 0.0;
  double c_star = 0.0;  // implied by the audited separation
  double delta_star = 0.0;
  bool all_pass() const {
    return norm_ok && feasible_ok && separation_ok && kl_ok;
  }
};

struct LowerBoundFamily {
  HypothesisFamily family;
  LowerBoundAudit audit;
  std::string branch;
  double tau = 0.0;
  double q = 0.0;       // convex small-D scale, when used
  int sparsity = 0;     // S / m / ell / D' depending on the branch
  std::optional<WriCertificate> wri;
};

namespace detail {

struct PairStats {
  double min_sq = std::numeric_limits<double>::infinity();
  double max_sq = 0.0;
};

inline PairStats pairwise_sq_dists(const Dictionary& dict,
                                   const std::vector<VectorXd>& hypotheses) {
  PairStats st;
  std::vector<VectorXd> g;
  g.reserve(hypotheses.size());
  for (const auto& h : hypotheses) g.push_back(dict.predict(h));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = i + 1; j < g.size(); ++j) {
      const double d = dict.seminorm(g[i] - g[j]);
      st.min_sq = std::fmin(st.min_sq, d * d);
      st.max_sq = std::fmax(st.max_sq, d * d);
    }
  return st;
}

inline LowerBoundAudit audit_family(const HypothesisFamily& fam,
                                    const Family& family,
                                    AggregationProblem problem,
                                    Eigen::Index d_cap, Eigen::Index m,
                                    Eigen::Index n) {
  LowerBoundAudit audit;
  const double b_sq = family.variance_bound().value;
  const double a = family.dispersion();

  bool norms = true;
  for (Eigen::Index j = 0; j < fam.dict.m(); ++j)
    norms = norms && fam.dict.col_norm(j) <= 1.0 + 1e-9 &&
            fam.dict.col_sup(j) <= 1.0 + 1e-9;
  audit.norm_ok = norms && fam.dict.rank() <= d_cap;

  audit.feasible_ok = true;
  for (const auto& h : fam.hypotheses)
    audit.feasible_ok = audit.feasible_ok && contains(fam.constraint, h);

  const PairStats st = pairwise_sq_dists(fam.dict, fam.hypotheses);
  audit.min_separation = st.min_sq;
  audit.kl_diameter = b_sq * static_cast<double>(n) / (2.0 * a) * st.max_sq;
  audit.delta_star = optimal_rate({problem, n, m, d_cap});
  audit.separation_ok = audit.min_separation > 0.0;
  audit.c_star = audit.min_separation / (2.0 * audit.delta_star);
  const double card = static_cast<double>(fam.hypotheses.size());
  audit.kl_ok = card >= 2.0 && audit.kl_diameter < std::log(card) / 8.0;
  return audit;
}

inline std::vector<VectorXd> vertex_hypotheses(Eigen::Index m, std::size_t d) {
  std::vector<VectorXd> hyp;
  hyp.reserve(d);
  for (std::size_t j = 0; j < d; ++j) {
    VectorXd e = VectorXd::Zero(m);
    e(static_cast<Eigen::Index>(j)) = 1.0;
    hyp.push_back(std::move(e));
  }
  return hyp;
}

/// tau cap from the joint-divergence audit: the quadratic bound at tau = 1,
/// scaled by tau^2, must stay below log(card)/8.
inline double tau_from_kl(double b_sq, double a, double n, double max_sq_unit,
                          double card) {
  if (card < 2.0 || max_sq_unit <= 0.0)
    throw AuditFailed("lower bound family: fewer than two separated hypotheses");
  return 0.999 *
         std::fmin(1.0, std::sqrt(a * std::log(card) /
                                  (4.0 * b_sq * n * max_sq_unit)));
}

}  // namespace detail

/// The constructions behind the lower bounds, instantiated and audited:
/// (A) dictionary norms and rank, (B) feasibility of every hypothesis,
/// (C) positive pairwise separation (the implied constant is reported),
/// (D) pairwise joint divergence below log(card)/8 via the quadratic bound.
/// Throws AuditFailed naming the first violated condition.
inline LowerBoundFamily build_lower_bound_family(AggregationProblem problem,
                                                 const Family& family, int d,
                                                 int m, int n,
                                                 double kappa_sq,
                                                 std::uint64_t seed) {
  if (!family.variance_bound().bounded)
    throw UnsupportedFamily(
        "lower bound constructions need a bounded b'' (normal or bernoulli)");
  if (m < 2 || d < 1 || d > std::min(m, n))
    throw DomainError("lower bound family: need M >= 2, 1 <= D <= min(M, n)");
  const double b_sq = family.variance_bound().value;
  const double a = family.dispersion();
  const double e = std::numbers::e;
  const double nd = static_cast<double>(n);
  const double md = static_cast<double>(m);

  // the reachable systematic components must keep curvature at least kappa_sq
  const double h_iota = problem == AggregationProblem::linear ? md : 1.0;
  if (!family.curvature_level_set(kappa_sq).contains(-h_iota, 1e-12) ||
      !family.curvature_level_set(kappa_sq).contains(h_iota, 1e-12))
    throw PreconditionViolation(
        "lower bound family: [-H, H] escapes the curvature level set");

  struct Scratch {
    std::string branch;
    double tau = 0.0;
    double q = 0.0;
    int sparsity = 0;
    std::optional<WriCertificate> wri;
  } out;

  auto finish = [&](HypothesisFamily fam) {
    LowerBoundAudit audit = detail::audit_family(fam, family, problem, d, m, n);
    if (!audit.norm_ok) throw AuditFailed("condition (A): norms or rank");
    if (!audit.feasible_ok) throw AuditFailed("condition (B): feasibility");
    if (!audit.separation_ok) throw AuditFailed("condition (C): separation");
    if (!audit.kl_ok) throw AuditFailed("condition (D): divergence");
    return LowerBoundFamily{std::move(fam), audit,       out.branch,
                            out.tau,        out.q,       out.sparsity,
                            out.wri};
  };

  const bool high_rank =
      static_cast<double>(d) >=
      2.0 / kSparsityBudget * std::log(1.0 + e * md / 2.0);

  // indicator-based construction shared by the model-selection small-rank
  // and linear cases: f_j = tau * phi_(omega_j) over indicator functions
  auto indicator_family = [&](int dim, int dict_cols_cap,
                              const ConstraintSet& cset,
                              bool hypotheses_are_vertices) {
    const int min_dist = std::max(1, (dim + 3) / 4);
    auto packing = hamming_packing(dim, std::nullopt, min_dist, seed);
    if (hypotheses_are_vertices &&
        packing.size() > static_cast<std::size_t>(dict_cols_cap))
      packing.resize(static_cast<std::size_t>(dict_cols_cap));
    const double card = static_cast<double>(packing.size());
    double rho_max = 0.0;
    for (std::size_t i = 0; i < packing.size(); ++i)
      for (std::size_t j = i + 1; j < packing.size(); ++j)
        rho_max = std::fmax(
            rho_max, static_cast<double>(hamming_distance(packing[i], packing[j])));
    // pair distance at tau = 1 is rho/n, so n cancels against the 1/n of the
    // quotient norm in the divergence bound
    out.tau = detail::tau_from_kl(b_sq, a, 1.0, rho_max, card);
    out.sparsity = dim;

    HypothesisFamily fam{Dictionary(MatrixXd::Zero(1, 1)), {}, cset};
    if (hypotheses_are_vertices) {
      // columns are the packed indicator sums; hypotheses are vertices
      MatrixXd values = MatrixXd::Zero(n, m);
      for (std::size_t j = 0; j < packing.size(); ++j)
        for (int i = 0; i < dim; ++i)
          if (packing[j][static_cast<std::size_t>(i)])
            values(i, static_cast<Eigen::Index>(j)) = out.tau;
      fam.dict = Dictionary(std::move(values));
      fam.hypotheses = detail::vertex_hypotheses(m, packing.size());
    } else {
      // columns are scaled indicators; hypotheses are binary combinations
      MatrixXd values = MatrixXd::Zero(n, m);
      for (int j = 0; j < dim; ++j) values(j, j) = out.tau;
      fam.dict = Dictionary(std::move(values));
      for (const auto& w : packing) {
        VectorXd lambda = VectorXd::Zero(m);
        for (int i = 0; i < dim; ++i)
          lambda(i) = w[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        fam.hypotheses.push_back(std::move(lambda));
      }
    }
    fam.separation = detail::pairwise_sq_dists(fam.dict, fam.hypotheses).min_sq;
    fam.kl_diameter =
        b_sq * nd / (2.0 * a) *
        detail::pairwise_sq_dists(fam.dict, fam.hypotheses).max_sq;
    fam.packing_log = std::log(card);
    return fam;
  };

  // block Rademacher dictionary: row k of X tiles the design modulo D
  auto block_dictionary = [&](const MatrixXd& x) {
    MatrixXd values = MatrixXd::Zero(n, m);
    const int full = (n / d) * d;
    for (int i = 0; i < full; ++i) values.row(i) = x.row(i % d);
    return Dictionary(std::move(values));
  };

  switch (problem) {
    case AggregationProblem::model_selection: {
      if (high_rank) {
        out.branch = "model_selection_high_rank";
        WriDictionary wri = rademacher_wri_dictionary(d, m, 2, seed);
        out.wri = wri.cert;
        out.sparsity = 2;
        const double scale =
            std::sqrt(std::fmin(static_cast<double>(d), std::log(md)) /
                      static_cast<double>(d));
        MatrixXd unit = MatrixXd::Zero(n, m);
        for (int i = 0; i < d; ++i) unit.row(i) = scale * wri.x.row(i);
        // pairwise distances at tau = 1 fix the admissible scale
        Dictionary probe(unit);
        const auto st =
            detail::pairwise_sq_dists(probe, detail::vertex_hypotheses(m, m));
        out.tau = detail::tau_from_kl(b_sq, a, nd, st.max_sq, md);
        HypothesisFamily fam{Dictionary(MatrixXd(out.tau * unit)),
                             detail::vertex_hypotheses(m, m),
                             ConstraintSet::vertices()};
        const auto st2 = detail::pairwise_sq_dists(fam.dict, fam.hypotheses);
        fam.separation = st2.min_sq;
        fam.kl_diameter = b_sq * nd / (2.0 * a) * st2.max_sq;
        fam.packing_log = std::log(md);
        return finish(std::move(fam));
      }
      out.branch = "model_selection_low_rank";
      const int d_prime = std::min(
          d, static_cast<int>(std::floor(std::log2(static_cast<double>(m)))));
      return finish(indicator_family(std::max(1, d_prime), m,
                                     ConstraintSet::vertices(), true));
    }

    case AggregationProblem::linear: {
      out.branch = "linear";
      return finish(indicator_family(d, m, ConstraintSet::linf_box(1.0), false));
    }

    case AggregationProblem::convex: {
      if (!high_rank) {
        out.branch = "convex_low_rank";
        const int d_prime = std::min(
            d, static_cast<int>(std::floor(std::log2(static_cast<double>(m)))));
        return finish(indicator_family(std::max(1, d_prime), m,
                                       ConstraintSet::l1_ball(1.0), true));
      }
      const double log_term = std::log(1.0 + e * md / std::sqrt(nd));
      const bool wide =
          static_cast<double>(d) >=
          1.5 / kSparsityBudget * std::sqrt(nd * log_term);
      if (wide) {
        out.branch = "convex_high_rank";
        const int sparse =
            std::max(1, static_cast<int>(std::floor(std::sqrt(nd / log_term))));
        if (2 * sparse > m)
          throw PreconditionViolation(
              "convex construction: sparsity exceeds M/2");
        WriDictionary wri = rademacher_wri_dictionary(d, m, sparse, seed);
        out.wri = wri.cert;
        out.sparsity = sparse;
        Dictionary dict = block_dictionary(wri.x);
        auto packing = hamming_packing(m, sparse, std::max(1, (sparse + 3) / 4),
                                       seed);
        std::vector<VectorXd> unit_hyp;
        for (const auto& w : packing) {
          VectorXd lambda = VectorXd::Zero(m);
          for (int j = 0; j < m; ++j)
            lambda(j) = w[static_cast<std::size_t>(j)]
                            ? 1.0 / static_cast<double>(sparse)
                            : 0.0;
          unit_hyp.push_back(std::move(lambda));
        }
        const auto st = detail::pairwise_sq_dists(dict, unit_hyp);
        out.tau = detail::tau_from_kl(b_sq, a, nd, st.max_sq,
                                      static_cast<double>(packing.size()));
        HypothesisFamily fam{std::move(dict), {}, ConstraintSet::l1_ball(1.0)};
        for (auto& h : unit_hyp) fam.hypotheses.push_back(out.tau * h);
        fam.separation = out.tau * out.tau * st.min_sq;
        fam.kl_diameter = b_sq * nd / (2.0 * a) * out.tau * out.tau * st.max_sq;
        fam.packing_log = std::log(static_cast<double>(packing.size()));
        return finish(std::move(fam));
      }
      out.branch = "convex_moderate_rank";
      // largest sparsity keeping (ell/D) log(1 + eM/ell) under the budget
      int ell = 2;
      if (!(2.0 / d * std::log(1.0 + e * md / 2.0) < kSparsityBudget))
        throw PreconditionViolation(
            "convex construction: no admissible sparsity >= 2");
      while (2 * (ell + 1) < m &&
             static_cast<double>(ell + 1) / d *
                     std::log(1.0 + e * md / (ell + 1)) <
                 kSparsityBudget)
        ++ell;
      WriDictionary wri = rademacher_wri_dictionary(d, m, ell, seed);
      out.wri = wri.cert;
      out.sparsity = ell;
      Dictionary dict = block_dictionary(wri.x);
      auto packing =
          hamming_packing(m, ell, std::max(1, (ell + 3) / 4), seed);
      std::vector<VectorXd> unit_hyp;  // q = 1 scale
      for (const auto& w : packing) {
        VectorXd lambda = VectorXd::Zero(m);
        for (int j = 0; j < m; ++j)
          lambda(j) = w[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
        unit_hyp.push_back(std::move(lambda));
      }
      const auto st = detail::pairwise_sq_dists(dict, unit_hyp);
      const double card = static_cast<double>(packing.size());
      if (card < 2.0)
        throw AuditFailed("lower bound family: fewer than two hypotheses");
      const double root_rate = std::sqrt(std::log(1.0 + e * md / ell) / nd);
      const double q_feasible = 1.0 / static_cast<double>(ell);
      const double q_kl =
          std::sqrt(a * std::log(card) / (4.0 * b_sq * nd * st.max_sq));
      const double q_half = 0.5 * root_rate;  // tau < 1/2
      out.q = 0.999 * std::fmin(q_feasible, std::fmin(q_kl, q_half));
      out.tau = out.q / root_rate;
      HypothesisFamily fam{std::move(dict), {}, ConstraintSet::l1_ball(1.0)};
      for (auto& h : unit_hyp) fam.hypotheses.push_back(out.q * h);
      fam.separation = out.q * out.q * st.min_sq;
      fam.kl_diameter = b_sq * nd / (2.0 * a) * out.q * out.q * st.max_sq;
      fam.packing_log = std::log(card);
      return finish(std::move(fam));
    }
  }
  throw DomainError("unreachable aggregation problem");
}

inline nlohmann::json to_json(const LowerBoundFamily& fam) {
  nlohmann::json j;
  j["branch"] = fam.branch;
  j["tau"] = fam.tau;
  if (fam.q > 0.0) j["q"] = fam.q;
  j["sparsity"] = fam.sparsity;
  j["cardinality"] = fam.family.hypotheses.size();
  j["packingLog"] = fam.family.packing_log;
  j["separation"] = fam.family.separation;
  j["klDiameter"] = fam.family.kl_diameter;
  j["constraint"] = fam.family.constraint.to_json();
  j["audit"] = {{"normOk", fam.audit.norm_ok},
                {"feasibleOk", fam.audit.feasible_ok},
                {"separationOk", fam.audit.separation_ok},
                {"klOk", fam.audit.kl_ok},
                {"minSeparation", fam.audit.min_separation},
                {"klDiameter", fam.audit.kl_diameter},
                {"cStar", fam.audit.c_star},
                {"deltaStar", fam.audit.delta_star}};
  if (fam.wri)
    j["wri"] = {{"chiLo", fam.wri->chi_lo},
                {"chiHi", fam.wri->chi_hi},
                {"supportsChecked", fam.wri->supports_checked},
                {"exhaustive", fam.wri->exhaustive}};
  nlohmann::json hyp = nlohmann::json::array();
  for (const auto& h : fam.family.hypotheses)
    hyp.push_back(std::vector<double>(h.data(), h.data() + h.size()));
  j["hypotheses"] = hyp;
  return j;
}

}  // namespace klagg
