// Command-line front end: one-shot aggregate fits, Monte Carlo experiments
// and rate sweeps, tail-bound certification, lower-bound construction
// audits, and applicability reports. JSON configs in, JSON + CSV out; every
// output embeds the seed and a hash of the config it came from.
//
// Exit codes: 0 success, 1 validation/usage error, 2 failed acceptance check.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "klagg/klagg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::optional<int> max_iter;
  std::optional<double> grad_tol;
  bool emit_gnuplot = false;
};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct LoadedConfig {
  json j;
  std::string hash;
};

LoadedConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw klagg::ValidationError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  LoadedConfig out;
  out.hash = hex64(fnv1a(bytes));
  out.j = json::parse(bytes);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw klagg::ValidationError("cannot write " + path.string());
  out << text;
}

klagg::VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const klagg::VectorXd>(v.data(),
                                           static_cast<Eigen::Index>(v.size()));
}

klagg::VectorXd load_column_csv(const std::string& path,
                                const std::string& column) {
  std::ifstream in(path);
  if (!in) throw klagg::ValidationError("cannot open csv: " + path);
  std::vector<double> values;
  std::string line;
  int col = 0;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = klagg::Dictionary::split_csv(line);
    if (first) {
      first = false;
      if (!klagg::Dictionary::is_numeric(fields.front())) {
        for (std::size_t k = 0; k < fields.size(); ++k)
          if (fields[k] == column) col = static_cast<int>(k);
        continue;
      }
    }
    if (static_cast<std::size_t>(col) >= fields.size())
      throw klagg::ValidationError("csv: missing column in " + path);
    values.push_back(
        klagg::Dictionary::parse_double(fields[static_cast<std::size_t>(col)]));
  }
  if (values.empty()) throw klagg::ValidationError("csv: no data in " + path);
  return Eigen::Map<const klagg::VectorXd>(
      values.data(), static_cast<Eigen::Index>(values.size()));
}

klagg::Dictionary dictionary_from_config(const json& j) {
  if (j.contains("values")) return klagg::Dictionary::from_json(j);
  if (j.contains("csv"))
    return klagg::Dictionary::from_csv_file(j.at("csv").get<std::string>());
  throw klagg::ValidationError(
      "dictionary: expected inline \"values\" or a \"csv\" path");
}

klagg::Problem problem_from_config(const json& cfg) {
  const klagg::Family family = klagg::Family::from_json(cfg.at("family"));
  klagg::Dictionary dict = dictionary_from_config(cfg.at("dictionary"));
  std::optional<klagg::VectorXd> responses;
  if (cfg.contains("responses")) {
    const auto& rj = cfg.at("responses");
    responses = rj.is_array()
                    ? vector_from_json(rj)
                    : load_column_csv(rj.at("csv").get<std::string>(),
                                      rj.value("column", "y"));
  }
  std::optional<klagg::Truth> truth;
  if (cfg.contains("truth")) {
    const auto& tj = cfg.at("truth");
    if (tj.contains("means"))
      truth = klagg::truth_from_means(family, vector_from_json(tj.at("means")));
    else if (tj.contains("csv")) {
      std::ifstream in(tj.at("csv").get<std::string>());
      if (!in) throw klagg::ValidationError("cannot open truth csv");
      truth = klagg::truth_from_csv(family, in);
    } else {
      truth = klagg::build_truth(klagg::TruthSpec::from_json(tj), family, dict);
    }
  }
  return klagg::Problem(family, std::move(dict), std::move(responses),
                        std::move(truth));
}

void apply_solver_overrides(klagg::SolverConfig& solver, const CommonOpts& opts) {
  if (opts.max_iter) solver.max_iter = *opts.max_iter;
  if (opts.grad_tol) solver.grad_tol = *opts.grad_tol;
}

json with_provenance(json j, const LoadedConfig& cfg,
                     std::optional<std::uint64_t> seed) {
  j["configHash"] = cfg.hash;
  if (seed) j["seed"] = *seed;
  return j;
}

int cmd_fit(const CommonOpts& opts) {
  const LoadedConfig cfg = load_config(opts.config_path);
  klagg::Problem problem = problem_from_config(cfg.j);
  klagg::SolverConfig solver;
  apply_solver_overrides(solver, opts);
  const std::string method = cfg.j.value("method", "mle");

  json out;
  if (method == "mle") {
    const auto cset = klagg::ConstraintSet::from_json(cfg.j.at("constraint"));
    out = klagg::fit_to_json(klagg::mle_aggregate(problem, cset, solver));
  } else if (method == "qaggregate") {
    std::optional<double> beta;
    if (cfg.j.contains("beta")) beta = cfg.j.at("beta").get<double>();
    out = klagg::fit_to_json(klagg::q_aggregate(problem, beta, solver));
  } else if (method == "expweights") {
    const double beta = cfg.j.at("beta").get<double>();
    const klagg::VectorXd w = klagg::exponential_weights(problem, beta);
    out["method"] = "expweights";
    out["beta"] = beta;
    out["lambda"] = std::vector<double>(w.data(), w.data() + w.size());
  } else if (method == "model_selection") {
    out = klagg::fit_to_json(klagg::model_selection_aggregate(problem, solver));
  } else if (method == "boosting") {
    const double radius = cfg.j.value("radius", 1.0);
    const double delta = cfg.j.value("delta", 0.05);
    const auto rep = klagg::boosting_aggregate(problem, radius, delta, solver);
    out = klagg::fit_to_json(rep.fit);
    out["radius"] = rep.radius;
    out["expectationBound"] = rep.expectation_bound;
    out["quantileBound"] = rep.quantile_bound;
    if (rep.phi_risk_value) out["phiRisk"] = *rep.phi_risk_value;
    if (rep.phi_gap) out["phiGap"] = *rep.phi_gap;
    if (rep.within_expectation_bound)
      out["withinExpectationBound"] = *rep.within_expectation_bound;
    if (rep.within_quantile_bound)
      out["withinQuantileBound"] = *rep.within_quantile_bound;
  } else {
    throw klagg::ValidationError("unknown method: " + method);
  }
  out = with_provenance(std::move(out), cfg, opts.seed);
  const std::string text = out.dump(2) + "\n";
  std::cout << text;
  write_text(fs::path(opts.out_dir) / "fit.json", text);
  return 0;
}

int cmd_check(const CommonOpts& opts) {
  const LoadedConfig cfg = load_config(opts.config_path);
  const klagg::Problem problem = problem_from_config(cfg.j);
  const auto cset = klagg::ConstraintSet::from_json(cfg.j.at("constraint"));
  std::optional<double> sigma_sq;
  if (cfg.j.contains("sigma_sq")) sigma_sq = cfg.j.at("sigma_sq").get<double>();
  const auto rep = klagg::applicability_report(
      problem, cset, cfg.j.value("delta", 0.05), sigma_sq);
  const json out = with_provenance(klagg::report_to_json(rep), cfg, opts.seed);
  const std::string text = out.dump(2) + "\n";
  std::cout << text;
  write_text(fs::path(opts.out_dir) / "check.json", text);
  return 0;
}

int cmd_experiment(const CommonOpts& opts) {
  const LoadedConfig cfg = load_config(opts.config_path);
  klagg::ExperimentConfig config = klagg::ExperimentConfig::from_json(cfg.j);
  if (opts.seed) config.seed = *opts.seed;
  config.jobs = opts.jobs;
  apply_solver_overrides(config.solver, opts);

  const klagg::ExperimentReport report = klagg::run_experiment(config);
  json out = with_provenance(report.to_json(), cfg, config.seed);
  const std::string text = out.dump(2) + "\n";
  std::cout << text;
  write_text(fs::path(opts.out_dir) / "report.json", text);
  std::ostringstream csv;
  report.write_csv(csv);
  write_text(fs::path(opts.out_dir) / "replicates.csv", csv.str());
  return report.all_pass ? 0 : 2;
}

int cmd_rates(const CommonOpts& opts) {
  const LoadedConfig cfg = load_config(opts.config_path);
  klagg::ExperimentConfig base =
      klagg::ExperimentConfig::from_json(cfg.j.at("base"));
  if (opts.seed) base.seed = *opts.seed;
  base.jobs = opts.jobs;
  apply_solver_overrides(base.solver, opts);
  const std::string axis = cfg.j.value("axis", "n");
  const auto grid = cfg.j.at("grid").get<std::vector<int>>();

  const klagg::RateSweepReport report = klagg::rate_sweep(base, axis, grid);
  json out = with_provenance(report.to_json(), cfg, base.seed);
  const std::string text = out.dump(2) + "\n";
  std::cout << text;
  write_text(fs::path(opts.out_dir) / "rates.json", text);

  if (opts.emit_gnuplot) {
    std::ostringstream dat;
    for (const auto& p : report.points)
      dat << p.grid_value << " " << p.mean_excess << "\n";
    write_text(fs::path(opts.out_dir) / "rates.dat", dat.str());
    std::ostringstream gp;
    gp << "set logscale xy\n"
       << "set xlabel '" << axis << "'\n"
       << "set ylabel 'mean excess divergence'\n"
       << "fit_slope = " << report.slope << "\n"
       << "plot 'rates.dat' using 1:2 with points title 'empirical', \\\n"
       << "     x**(" << report.slope << ") * "
       << (report.points.empty() ? 1.0
                                 : report.points.front().mean_excess *
                                       std::pow(report.points.front().grid_value,
                                                -report.slope))
       << " with lines title sprintf('slope %.3f', fit_slope)\n";
    write_text(fs::path(opts.out_dir) / "rates.gnuplot", gp.str());
  }
  return 0;
}

int cmd_concentration(const CommonOpts& opts) {
  const LoadedConfig cfg = load_config(opts.config_path);
  const klagg::Family family = klagg::Family::from_json(cfg.j.at("family"));

  klagg::VectorXd thetas;
  const auto& tj = cfg.j.at("thetas");
  if (tj.is_array()) {
    thetas = vector_from_json(tj);
  } else {
    const auto n = tj.at("n").get<Eigen::Index>();
    thetas = klagg::VectorXd::Constant(n, tj.at("value").get<double>());
  }
  klagg::VectorXd omega;
  const auto& oj = cfg.j.at("omega");
  if (oj.is_array()) {
    omega = vector_from_json(oj);
  } else {
    const auto n = oj.at("n").get<Eigen::Index>();
    const double scale = oj.value("scale", 1.0);
    const std::string pattern = oj.value("pattern", "uniform");
    omega = klagg::VectorXd::Constant(n, scale);
    if (pattern == "alternating") {
      for (Eigen::Index i = 1; i < n; i += 2) omega(i) = -scale;
    } else if (pattern == "linear") {
      for (Eigen::Index i = 0; i < n; ++i)
        omega(i) = scale * static_cast<double>(i + 1) / static_cast<double>(n);
    } else if (pattern != "uniform") {
      throw klagg::ValidationError("unknown omega pattern: " + pattern);
    }
  }

  const klagg::WeightedSumSpec spec(family, thetas, omega);
  const auto t_grid = cfg.j.at("t_grid").get<std::vector<double>>();
  const int replicates = cfg.j.value("replicates", 10000);
  const std::uint64_t seed = opts.seed.value_or(cfg.j.value("seed", 1ULL));

  const auto report = klagg::empirical_tail_check(spec, t_grid, replicates, seed);
  std::ostringstream csv;
  report.write_csv(csv);
  write_text(fs::path(opts.out_dir) / "tail.csv", csv.str());

  json out;
  out["replicates"] = report.replicates;
  out["anyFlagged"] = report.any_flagged;
  json rows = json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"t", r.t},
                    {"empirical", r.empirical},
                    {"bound", r.bound},
                    {"flag", r.flagged}});
  out["rows"] = rows;
  out = with_provenance(std::move(out), cfg, seed);
  const std::string text = out.dump(2) + "\n";
  std::cout << text;
  write_text(fs::path(opts.out_dir) / "concentration.json", text);
  return report.any_flagged ? 2 : 0;
}

int cmd_lowerbound(const CommonOpts& opts) {
  const LoadedConfig cfg = load_config(opts.config_path);
  const klagg::Family family = klagg::Family::from_json(cfg.j.at("family"));
  const auto problem = klagg::problem_from_name(
      cfg.j.at("problem").get<std::string>());
  const std::uint64_t seed = opts.seed.value_or(cfg.j.value("seed", 1ULL));
  const auto fam = klagg::build_lower_bound_family(
      problem, family, cfg.j.at("d").get<int>(), cfg.j.at("m").get<int>(),
      cfg.j.at("n").get<int>(), cfg.j.at("kappa_sq").get<double>(), seed);
  const json out = with_provenance(klagg::to_json(fam), cfg, seed);
  const std::string text = out.dump(2) + "\n";
  std::cout << text;
  write_text(fs::path(opts.out_dir) / "lowerbound.json", text);
  return fam.audit.all_pass() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kullback-Leibler aggregation for exponential-family regression"};
  app.require_subcommand(1);

  CommonOpts opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "JSON config file")
        ->required();
    sub->add_option("--out", opts.out_dir, "output directory");
    sub->add_option("--seed", opts.seed, "seed override");
    sub->add_option("--jobs", opts.jobs, "replicate work-pool size");
    sub->add_option("--max-iter", opts.max_iter, "solver iteration cap");
    sub->add_option("--grad-tol", opts.grad_tol, "solver optimality tolerance");
    sub->add_flag("--emit-gnuplot", opts.emit_gnuplot,
                  "write a plain-text plot script next to the data");
  };

  auto* fit = app.add_subcommand("fit", "fit one aggregate and print it");
  auto* experiment =
      app.add_subcommand("experiment", "Monte Carlo bound certification");
  auto* rates = app.add_subcommand("rates", "excess-divergence rate sweep");
  auto* concentration =
      app.add_subcommand("concentration", "tail-bound certification");
  auto* lowerbound =
      app.add_subcommand("lowerbound", "lower-bound construction audit");
  auto* check = app.add_subcommand("check", "bound applicability report");
  for (auto* sub : {fit, experiment, rates, concentration, lowerbound, check})
    add_common(sub);

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed()) return cmd_fit(opts);
    if (experiment->parsed()) return cmd_experiment(opts);
    if (rates->parsed()) return cmd_rates(opts);
    if (concentration->parsed()) return cmd_concentration(opts);
    if (lowerbound->parsed()) return cmd_lowerbound(opts);
    if (check->parsed()) return cmd_check(opts);
  } catch (const klagg::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const klagg::AuditFailed& e) {
    std::cerr << "audit failed: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
