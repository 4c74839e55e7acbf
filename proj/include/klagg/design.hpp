#pragma once

// Dictionary evaluations on a fixed deterministic design, with the quotient
// geometry <g,h> = (1/n) sum_i g_i h_i, plus the constraint sets the
// aggregates are optimized over and exact Euclidean projections onto them.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <json.hpp>

#include "klagg/errors.hpp"
#include "klagg/family.hpp"

namespace klagg {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// n x M matrix of dictionary evaluations, entry (i,j) = f_j(x_i). Immutable
/// after construction; caches column seminorms, column sup norms and a thin
/// SVD of values/sqrt(n) for rank queries and the orthonormal span basis.
class Dictionary {
 public:
  explicit Dictionary(MatrixXd values, double rank_tol = 1e-10)
      : values_(std::move(values)), rank_tol_(rank_tol) {
    if (values_.rows() < 1 || values_.cols() < 1)
      throw DegenerateInput("dictionary must be non-empty");
    if (!values_.allFinite())
      throw DegenerateInput("dictionary entries must be finite");
    const auto n = values_.rows();
    col_norms_ = (values_.colwise().squaredNorm() / static_cast<double>(n))
                     .cwiseSqrt()
                     .transpose();
    col_sup_ = values_.cwiseAbs().colwise().maxCoeff().transpose();
    Eigen::BDCSVD<MatrixXd> svd(values_ / std::sqrt(static_cast<double>(n)),
                                Eigen::ComputeThinU);
    singular_values_ = svd.singularValues();
    left_vectors_ = svd.matrixU();
  }

  Eigen::Index n() const { return values_.rows(); }
  Eigen::Index m() const { return values_.cols(); }
  const MatrixXd& values() const { return values_; }

  /// f_lambda(x_i) = sum_j lambda_j f_j(x_i) for every design point.
  VectorXd predict(const VectorXd& lambda) const {
    if (lambda.size() != m())
      throw DimensionMismatch("predict: weight length != dictionary size");
    if (!lambda.allFinite()) throw DomainError("predict: non-finite weights");
    return values_ * lambda;
  }

  double seminorm(const VectorXd& g) const {
    if (g.size() != n()) throw DimensionMismatch("seminorm: length != n");
    return std::sqrt(g.squaredNorm() / static_cast<double>(n()));
  }

  double inner(const VectorXd& g, const VectorXd& h) const {
    if (g.size() != n() || h.size() != n())
      throw DimensionMismatch("inner: length != n");
    return g.dot(h) / static_cast<double>(n());
  }

  /// Numerical rank: count of singular values above tol * sigma_max.
  Eigen::Index rank(double tol) const {
    if (!(tol > 0.0)) throw DomainError("rank: tol must be positive");
    const double smax = singular_values_(0);
    if (smax <= 0.0) throw DegenerateInput("rank: all dictionary columns zero");
    Eigen::Index d = 0;
    for (Eigen::Index k = 0; k < singular_values_.size(); ++k)
      if (singular_values_(k) > tol * smax) ++d;
    return d;
  }
  Eigen::Index rank() const { return rank(rank_tol_); }

  /// Basis of the column span, orthonormal under the quotient inner product.
  MatrixXd orthonormal_basis(double tol) const {
    const Eigen::Index d = rank(tol);
    return left_vectors_.leftCols(d) * std::sqrt(static_cast<double>(n()));
  }
  MatrixXd orthonormal_basis() const { return orthonormal_basis(rank_tol_); }

  double col_norm(Eigen::Index j) const { return col_norms_(j); }
  double col_sup(Eigen::Index j) const { return col_sup_(j); }
  double max_abs_entry() const { return col_sup_.maxCoeff(); }
  double max_row_l1() const {
    return values_.cwiseAbs().rowwise().sum().maxCoeff();
  }

  /// Predicate for the convex-aggregation bounds: every ||f_j|| <= 1.
  bool unit_norm_columns(double tol = 1e-9) const {
    return (col_norms_.array() <= 1.0 + tol).all();
  }

  bool entries_within(double bound, double tol = 1e-12) const {
    return max_abs_entry() <= bound + tol;
  }

  static Dictionary from_json(const nlohmann::json& j) {
    const auto& rows = j.at("values");
    if (!rows.is_array() || rows.empty())
      throw ValidationError("dictionary json: \"values\" must be a non-empty array");
    const std::size_t m = rows.front().size();
    MatrixXd values(rows.size(), m);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m)
        throw ValidationError("dictionary json: ragged rows");
      for (std::size_t k = 0; k < m; ++k)
        values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
            rows[i][k].get<double>();
    }
    return Dictionary(std::move(values));
  }

  /// CSV loader, header row optional (detected by non-numeric first field).
  static Dictionary from_csv(std::istream& in) {
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> fields = split_csv(line);
      if (first) {
        first = false;
        if (!is_numeric(fields.front())) continue;  // header
      }
      std::vector<double> row;
      row.reserve(fields.size());
      for (const auto& f : fields) row.push_back(parse_double(f));
      if (!rows.empty() && row.size() != rows.front().size())
        throw ValidationError("dictionary csv: ragged rows");
      rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ValidationError("dictionary csv: no data rows");
    MatrixXd values(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t k = 0; k < rows[i].size(); ++k)
        values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
            rows[i][k];
    return Dictionary(std::move(values));
  }

  static Dictionary from_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dictionary csv: " + path);
    return from_csv(in);
  }

  static std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(trim(field));
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

  static bool is_numeric(const std::string& s) {
    if (s.empty()) return false;
    char* end = nullptr;
    std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
  }

  static double parse_double(const std::string& s) {
    if (!is_numeric(s)) throw ValidationError("csv: non-numeric field '" + s + "'");
    return std::strtod(s.c_str(), nullptr);
  }

 private:
  MatrixXd values_;
  VectorXd col_norms_;
  VectorXd col_sup_;
  VectorXd singular_values_;  // of values/sqrt(n)
  MatrixXd left_vectors_;
  double rank_tol_;
};

/// The aggregation domain: the vertex set {e_1,...,e_M}, the rescaled simplex
/// {lambda >= 0, sum = R}, the l1 ball of radius R, the sup-norm box of
/// radius r, or all of R^M.
struct ConstraintSet {
  enum class Kind { vertices, simplex, l1_ball, linf_box, full_space };

  Kind kind = Kind::full_space;
  double radius = 0.0;

  static ConstraintSet vertices() { return {Kind::vertices, 1.0}; }
  static ConstraintSet simplex(double R) {
    if (R < 0.0) throw DomainError("simplex radius must be nonnegative");
    return {Kind::simplex, R};
  }
  static ConstraintSet l1_ball(double R) {
    if (R < 0.0) throw DomainError("l1 ball radius must be nonnegative");
    return {Kind::l1_ball, R};
  }
  static ConstraintSet linf_box(double r) {
    if (r < 0.0) throw DomainError("box radius must be nonnegative");
    return {Kind::linf_box, r};
  }
  static ConstraintSet full_space() { return {Kind::full_space, 0.0}; }

  bool bounded() const { return kind != Kind::full_space; }
  /// Subset of some l1 ball, i.e. the convex-aggregation bounds can apply.
  bool within_l1_ball() const {
    return kind == Kind::vertices || kind == Kind::simplex ||
           kind == Kind::l1_ball;
  }
  double l1_radius() const {
    return kind == Kind::vertices ? 1.0 : radius;
  }

  std::string name() const {
    switch (kind) {
      case Kind::vertices: return "vertices";
      case Kind::simplex: return "simplex";
      case Kind::l1_ball: return "l1_ball";
      case Kind::linf_box: return "linf_box";
      case Kind::full_space: return "full_space";
    }
    return "?";
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"variant", name()}};
    if (bounded() && kind != Kind::vertices) j["radius"] = radius;
    return j;
  }

  static ConstraintSet from_json(const nlohmann::json& j) {
    const std::string v = j.at("variant").get<std::string>();
    if (v == "vertices") return vertices();
    if (v == "simplex") return simplex(j.value("radius", 1.0));
    if (v == "l1_ball") return l1_ball(j.value("radius", 1.0));
    if (v == "linf_box") return linf_box(j.value("radius", 1.0));
    if (v == "full_space") return full_space();
    throw ValidationError("unknown constraint variant: " + v);
  }
};

/// max_i sup_{lambda in the set} |f_lambda(x_i)|, evaluated in closed form on
/// the design points (function values elsewhere are not stored).
inline double sup_bound(const Dictionary& dict, const ConstraintSet& cset) {
  switch (cset.kind) {
    case ConstraintSet::Kind::vertices:
      return dict.max_abs_entry();
    case ConstraintSet::Kind::simplex:
    case ConstraintSet::Kind::l1_ball:
      return cset.radius * dict.max_abs_entry();
    case ConstraintSet::Kind::linf_box:
      return cset.radius * dict.max_row_l1();
    case ConstraintSet::Kind::full_space:
      return dict.max_abs_entry() == 0.0
                 ? 0.0
                 : std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

inline bool contains(const ConstraintSet& cset, const VectorXd& lambda,
                     double tol = 1e-9) {
  if (!lambda.allFinite()) return false;
  switch (cset.kind) {
    case ConstraintSet::Kind::vertices: {
      Eigen::Index ones = 0;
      for (Eigen::Index j = 0; j < lambda.size(); ++j) {
        if (std::fabs(lambda(j) - 1.0) <= tol)
          ++ones;
        else if (std::fabs(lambda(j)) > tol)
          return false;
      }
      return ones == 1;
    }
    case ConstraintSet::Kind::simplex:
      return lambda.minCoeff() >= -tol &&
             std::fabs(lambda.sum() - cset.radius) <=
                 tol * std::fmax(1.0, cset.radius);
    case ConstraintSet::Kind::l1_ball:
      return lambda.lpNorm<1>() <= cset.radius + tol * std::fmax(1.0, cset.radius);
    case ConstraintSet::Kind::linf_box:
      return lambda.lpNorm<Eigen::Infinity>() <= cset.radius + tol;
    case ConstraintSet::Kind::full_space:
      return true;
  }
  return false;
}

namespace detail {

/// Exact projection onto {w >= 0, sum w = R} by the sorting method.
inline VectorXd project_simplex(const VectorXd& v, double R) {
  const Eigen::Index m = v.size();
  if (R <= 0.0) return VectorXd::Zero(m);
  std::vector<double> u(v.data(), v.data() + m);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cumsum = 0.0, tau = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    cumsum += u[static_cast<std::size_t>(k)];
    const double t = (cumsum - R) / static_cast<double>(k + 1);
    if (u[static_cast<std::size_t>(k)] - t > 0.0) tau = t;
  }
  return (v.array() - tau).cwiseMax(0.0);
}

/// Exact projection onto the l1 ball via the simplex projection of |v|.
inline VectorXd project_l1_ball(const VectorXd& v, double R) {
  if (v.lpNorm<1>() <= R) return v;
  const VectorXd w = project_simplex(v.cwiseAbs(), R);
  return w.cwiseProduct(v.cwiseSign());
}

}  // namespace detail

/// Nearest point of the set in Euclidean distance; identity on members.
inline VectorXd project(const ConstraintSet& cset, const VectorXd& lambda) {
  if (!lambda.allFinite()) throw DomainError("project: non-finite weights");
  switch (cset.kind) {
    case ConstraintSet::Kind::vertices: {
      // nearest vertex maximizes lambda_j; lowest index wins ties
      Eigen::Index best = 0;
      for (Eigen::Index j = 1; j < lambda.size(); ++j)
        if (lambda(j) > lambda(best)) best = j;
      VectorXd e = VectorXd::Zero(lambda.size());
      e(best) = 1.0;
      return e;
    }
    case ConstraintSet::Kind::simplex:
      return detail::project_simplex(lambda, cset.radius);
    case ConstraintSet::Kind::l1_ball:
      return detail::project_l1_ball(lambda, cset.radius);
    case ConstraintSet::Kind::linf_box:
      return lambda.cwiseMax(-cset.radius).cwiseMin(cset.radius);
    case ConstraintSet::Kind::full_space:
      return lambda;
  }
  return lambda;
}

/// Regression function on the design: means f(x_i) paired with the canonical
/// parameters theta_i = (b')^{-1}(f(x_i)).
struct Truth {
  VectorXd means;
  VectorXd canonical;
};

inline Truth truth_from_means(const Family& family, VectorXd means) {
  VectorXd canonical(means.size());
  for (Eigen::Index i = 0; i < means.size(); ++i)
    canonical(i) = family.mean_to_canonical(means(i));
  // round-trip must reproduce the means
  for (Eigen::Index i = 0; i < means.size(); ++i) {
    const double back = family.mean(canonical(i));
    if (std::fabs(back - means(i)) >
        1e-10 * std::fmax(1.0, std::fabs(means(i))))
      throw DomainError("truth_from_means: canonical link round-trip failed");
  }
  return {std::move(means), std::move(canonical)};
}

inline Truth truth_from_canonical(const Family& family, VectorXd canonical) {
  VectorXd means(canonical.size());
  for (Eigen::Index i = 0; i < canonical.size(); ++i)
    means(i) = family.mean(canonical(i));
  return {std::move(means), std::move(canonical)};
}

/// Reads the "mean" column (or the only column) of a CSV file.
inline Truth truth_from_csv(const Family& family, std::istream& in) {
  std::vector<double> means;
  std::string line;
  int column = 0;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = Dictionary::split_csv(line);
    if (first) {
      first = false;
      if (!Dictionary::is_numeric(fields.front())) {
        for (std::size_t k = 0; k < fields.size(); ++k)
          if (fields[k] == "mean") column = static_cast<int>(k);
        continue;
      }
    }
    if (static_cast<std::size_t>(column) >= fields.size())
      throw ValidationError("truth csv: missing mean column");
    means.push_back(Dictionary::parse_double(fields[static_cast<std::size_t>(column)]));
  }
  if (means.empty()) throw ValidationError("truth csv: no data rows");
  return truth_from_means(
      family, Eigen::Map<VectorXd>(means.data(),
                                   static_cast<Eigen::Index>(means.size())));
}

}  // namespace klagg
