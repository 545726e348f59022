#include "cli.hpp"

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nisim/nisim.hpp"

namespace nisim::cli {
namespace {

using io::json;

/// Flags shared by every subcommand; unset optionals fall back to library defaults.
struct Options {
  std::vector<std::string> inputs;
  std::string out;
  double rho = 0.0;
  double epsilon = 0.1;
  std::optional<std::size_t> m;
  std::optional<std::size_t> dim;
  std::size_t grid_cells = 0;
  double grid_radius = 4.0;
  std::optional<double> net_epsilon;
  std::optional<double> separation;
  std::optional<double> closeness;
  std::optional<int> degree_cap;
  std::uint64_t budget = 2'000'000;
  std::uint64_t seed = 0;
  std::size_t restarts = 8;
  unsigned threads = 0;
  std::size_t samples = 1;
  std::size_t mc_samples = 1'000'000;
  std::optional<std::size_t> p;
  std::optional<double> alpha;
  double a = 0.5;
  double b = 0.5;
  std::string method = "exact";
  std::string partition;
};

const char* code_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::data_format: return "data_format";
    case ErrorKind::numeric: return "numeric";
  }
  return "numeric";
}

int exit_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage: return kUsage;
    case ErrorKind::data_format: return kDataFormat;
    case ErrorKind::numeric: return kNumeric;
  }
  return kNumeric;
}

int report(std::ostream& err, ErrorKind kind, const std::string& message, const std::string& context) {
  err << json{{"code", code_name(kind)}, {"message", message}, {"context", context}}.dump() << '\n';
  return exit_for(kind);
}

int exit_for(Verdict v) {
  switch (v) {
    case Verdict::simulatable: return kSimulatable;
    case Verdict::not_simulatable_at_resolution: return kNotSimulatable;
    case Verdict::indeterminate: return kIndeterminate;
  }
  return kIndeterminate;
}

void emit(const Options& o, std::ostream& out, const json& j) {
  if (o.out.empty()) {
    out << io::dump(j);
  } else {
    io::write_file(o.out, j);
  }
}

const std::string& input(const Options& o, std::size_t i, const char* what) {
  if (o.inputs.size() <= i) throw InvalidArgument(std::string("missing input file: ") + what, what);
  return o.inputs[i];
}

void require_inputs(const Options& o, std::size_t n, const char* sub) {
  if (o.inputs.size() != n) {
    throw InvalidArgument(std::string(sub) + " expects " + std::to_string(n) + " input file(s), got " +
                              std::to_string(o.inputs.size()),
                          sub);
  }
}

int decide_gaussian_cmd(const Options& o, std::ostream& out) {
  require_inputs(o, 1, "decide-gaussian");
  const Correlation rho(o.rho);
  SearchConfig cfg;
  cfg.epsilon = o.epsilon;
  cfg.domain_dimension = o.dim;
  cfg.grid_radius = o.grid_radius;
  if (o.grid_cells > 0) cfg.cells_per_axis = o.grid_cells;
  cfg.degree_cap = o.degree_cap;
  cfg.net_epsilon = o.net_epsilon;
  cfg.separation = o.separation;
  cfg.closeness = o.closeness;
  cfg.budget = o.budget;
  cfg.seed = o.seed;
  cfg.restarts = o.restarts;
  cfg.threads = o.threads;
  // Validate every override against the parameter constraints before reading data.
  if (o.m) resolve(cfg, *o.m, rho);
  const auto target = io::read_file_as<DistributionMatrix>(input(o, 0, "target"));
  if (o.m && *o.m != target.size()) {
    throw DataError("target has " + std::to_string(target.size()) + " outcomes but --m is " + std::to_string(*o.m),
                    o.inputs[0]);
  }
  json config = io::to_json(resolve(cfg, target.size(), rho));
  config["rho"] = o.rho;
  config["m"] = target.size();
  const auto d = decide_gaussian(target, rho, cfg);
  emit(o, out, io::to_json(d, std::move(config)));
  return exit_for(d.verdict);
}

int decide_discrete_cmd(const Options& o, std::ostream& out) {
  require_inputs(o, 2, "decide-discrete");
  if (!(o.epsilon > 0.0 && o.epsilon < 1.0)) throw InvalidArgument("epsilon must lie in (0, 1)", "--epsilon");
  if (o.samples < 1) throw InvalidArgument("--samples must be >= 1", "--samples");
  const double net_eps = o.net_epsilon.value_or(o.epsilon);
  const auto target = io::read_file_as<DistributionMatrix>(input(o, 0, "target"));
  const auto source = io::read_file_as<JointPMF>(input(o, 1, "source"));
  const auto d = decide_discrete(target, source, o.epsilon, o.samples, simplex_net(target.size(), net_eps), o.budget,
                                 o.threads);
  json config = {{"epsilon", o.epsilon},
                 {"samples", o.samples},
                 {"net_epsilon", net_eps},
                 {"budget", o.budget},
                 {"m", target.size()}};
  emit(o, out, io::to_json(d, std::move(config)));
  return exit_for(d.verdict);
}

int maxcorr_cmd(const Options& o, std::ostream& out) {
  require_inputs(o, 1, "maxcorr");
  const auto pmf = io::read_file_as<JointPMF>(input(o, 0, "pmf"));
  emit(o, out, json{{"rho_m", maximal_correlation(pmf)}, {"alpha_min", alpha_min(pmf)}});
  return kSimulatable;
}

int borell_cmd(const Options& o, std::ostream& out) {
  require_inputs(o, 0, "borell-bounds");
  emit(o, out, io::to_json(borell_bounds(o.a, o.b, Correlation(o.rho))));
  return kSimulatable;
}

int crho_cmd(const Options& o, std::ostream& out) {
  require_inputs(o, 2, "crho");
  const Correlation rho(o.rho);
  if (o.method != "exact" && o.method != "montecarlo" && o.method != "hermite") {
    throw InvalidArgument("--method must be exact, montecarlo or hermite", "--method");
  }
  const auto f = io::read_file_as<CellFunction>(input(o, 0, "f"));
  const auto g = io::read_file_as<CellFunction>(input(o, 1, "g"));
  if (o.method == "montecarlo") {
    emit(o, out, io::to_json(crho_montecarlo(f, g, rho, o.mc_samples, o.seed, o.threads)));
  } else if (o.method == "hermite") {
    const int d = o.degree_cap.value_or(8);
    if (d < 0) throw InvalidArgument("--degree-cap must be >= 0", "--degree-cap");
    emit(o, out, io::to_json(crho_from_coeffs(hermite_coeffs(f, d), hermite_coeffs(g, d), rho)));
  } else {
    emit(o, out, io::to_json(crho_quadrature(f, g, rho)));
  }
  return kSimulatable;
}

int reduction_cmd(const Options& o, std::ostream& out) {
  if (o.inputs.size() > 1) throw InvalidArgument("reduction-params takes at most one pmf file", "reduction-params");
  double rho = o.rho;
  double alpha = o.alpha.value_or(1.0);
  std::size_t p = o.p.value_or(2);
  if (o.inputs.size() == 1) {
    const auto pmf = io::read_file_as<JointPMF>(o.inputs[0]).normalized();
    rho = maximal_correlation(pmf);
    alpha = o.alpha.value_or(alpha_min(pmf));
    p = o.p.value_or(std::max(pmf.alphabet_x(), pmf.alphabet_y()));
  }
  emit(o, out, io::to_json(reduction_params(o.m.value_or(2), p, o.epsilon, rho, alpha)));
  return kSimulatable;
}

int variational_cmd(const Options& o, std::ostream& out) {
  if (o.inputs.empty() || o.inputs.size() > 1) {
    throw InvalidArgument("verify-variational expects one objective file", "verify-variational");
  }
  const Correlation rho(o.rho);
  rho.require_nonzero("verify-variational");
  const std::size_t dim = o.dim.value_or(1);
  if (dim < 1 || dim > 2) throw InvalidArgument("--dim must be 1 or 2", "--dim");
  const std::size_t cells = o.grid_cells > 0 ? o.grid_cells : 32;
  const auto obj = io::read_file_as<QuadraticObjective>(o.inputs[0]);
  if (o.m && *o.m != obj.outcomes()) throw DataError("objective m does not match --m", o.inputs[0]);

  const auto parts = o.partition.empty()
                         ? grid_local_search(rho, obj, CellGrid(dim, o.grid_radius, cells), o.seed, o.restarts, o.threads)
                         : io::read_file_as<PartitionGrid>(o.partition);
  if (parts.outcomes() != obj.outcomes()) throw DataError("partition m does not match the objective", o.partition);

  json result = {{"partition", io::to_json(parts)},
                 {"objective_value", eval_objective(parts, rho, obj)},
                 {"first_variation", io::to_json(first_variation_residual(parts, rho, obj))},
                 {"refined", nullptr}};
  if (parts.grid().dimension() == 1) {
    const auto refined = refine_interfaces(IntervalPair::from_grid(parts), rho, obj);
    json r = io::to_json(refined);
    r["objective_value"] = eval_objective(refined.parts, rho, obj);
    const bool has_interfaces = !refined.parts.omega.breaks().empty() || !refined.parts.omega_prime.breaks().empty();
    r["second_variation"] = nullptr;
    r["eigen_identity"] = nullptr;
    if (has_interfaces) {
      r["second_variation"] = {{"analytic", translation_second_variation(refined.parts, rho, obj)},
                               {"finite_difference", translation_second_difference(refined.parts, rho, obj)}};
      r["eigen_identity"] = io::to_json(translation_eigen_identity_check(refined.parts, rho, obj));
    }
    result["refined"] = std::move(r);
  }
  emit(o, out, result);
  return kSimulatable;
}

CLI::App* add_subcommand(CLI::App& app, Options& o, const std::string& name, const std::string& help) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("--out", o.out, "write JSON here instead of standard output");
  return sub;
}

void add_inputs(CLI::App* sub, Options& o, const std::string& help) {
  sub->add_option("inputs", o.inputs, help);
}

void add_search_flags(CLI::App* sub, Options& o) {
  sub->add_option("--m", o.m, "number of outcomes (checked against the target)")->check(CLI::Range(2, 6));
  sub->add_option("--dim", o.dim, "Gaussian domain dimension (default m^2 - 1)")->check(CLI::PositiveNumber);
  sub->add_option("--grid-cells", o.grid_cells, "interior cells per axis")->check(CLI::PositiveNumber);
  sub->add_option("--grid-radius", o.grid_radius, "grid covers [-R, R] per axis")->check(CLI::PositiveNumber);
  sub->add_option("--net-epsilon", o.net_epsilon, "simplex net parameter")->check(CLI::PositiveNumber);
  sub->add_option("--separation", o.separation, "separated-set radius")->check(CLI::NonNegativeNumber);
  sub->add_option("--closeness", o.closeness, "SIMULATABLE threshold")->check(CLI::PositiveNumber);
  sub->add_option("--degree-cap", o.degree_cap, "Hermite degree cap")->check(CLI::NonNegativeNumber);
  sub->add_option("--budget", o.budget, "candidate budget")->check(CLI::PositiveNumber);
  sub->add_option("--restarts", o.restarts, "local-search restarts")->check(CLI::PositiveNumber);
}

void add_seed_threads(CLI::App* sub, Options& o) {
  sub->add_option("--seed", o.seed, "seed for every stochastic step");
  sub->add_option("--threads", o.threads, "worker threads; 0 uses NISIM_THREADS or the hardware count")
      ->check(CLI::NonNegativeNumber);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Noninteractive simulation feasibility toolkit", "nisim"};
  app.require_subcommand(1, 1);
  const auto unit = CLI::Range(-1.0, 1.0);

  auto* dg = add_subcommand(app, o, "decide-gaussian", "decide whether a target is simulatable from correlated Gaussians");
  add_inputs(dg, o, "target distribution matrix (JSON)");
  dg->add_option("--rho", o.rho, "Gaussian correlation")->required()->check(unit);
  dg->add_option("--epsilon", o.epsilon, "closeness parameter, 0 < epsilon < |rho|")->check(CLI::PositiveNumber);
  add_search_flags(dg, o);
  add_seed_threads(dg, o);

  auto* dd = add_subcommand(app, o, "decide-discrete", "search functions of n samples from a finite source");
  add_inputs(dd, o, "target matrix and source pmf (JSON)");
  dd->add_option("--epsilon", o.epsilon, "closeness parameter")->check(CLI::PositiveNumber);
  dd->add_option("--samples,-n", o.samples, "source samples per party")->check(CLI::PositiveNumber);
  dd->add_option("--net-epsilon", o.net_epsilon, "simplex net parameter")->check(CLI::PositiveNumber);
  dd->add_option("--budget", o.budget, "candidate budget")->check(CLI::PositiveNumber);
  add_seed_threads(dd, o);

  auto* mc = add_subcommand(app, o, "maxcorr", "maximal correlation of a joint pmf");
  add_inputs(mc, o, "pmf (JSON)");

  auto* bb = add_subcommand(app, o, "borell-bounds", "extreme P(A, B) for Gaussian sets of measures a and b");
  bb->add_option("--a", o.a, "measure of the first set")->required();
  bb->add_option("--b", o.b, "measure of the second set")->required();
  bb->add_option("--rho", o.rho, "Gaussian correlation")->required()->check(unit);

  auto* cr = add_subcommand(app, o, "crho", "joint outcome law of two cell functions");
  add_inputs(cr, o, "cell functions f and g (JSON)");
  cr->add_option("--rho", o.rho, "Gaussian correlation")->required()->check(unit);
  cr->add_option("--method", o.method, "exact, montecarlo or hermite");
  cr->add_option("--mc-samples", o.mc_samples, "Monte Carlo sample count")->check(CLI::PositiveNumber);
  cr->add_option("--degree-cap", o.degree_cap, "Hermite truncation degree")->check(CLI::NonNegativeNumber);
  add_seed_threads(cr, o);

  auto* rp = add_subcommand(app, o, "reduction-params", "parameters of the finite-to-Gaussian reduction");
  add_inputs(rp, o, "optional source pmf (JSON) supplying rho, alpha and p");
  rp->add_option("--m", o.m, "number of outcomes")->check(CLI::Range(2, 1 << 20));
  rp->add_option("--p", o.p, "source alphabet size")->check(CLI::PositiveNumber);
  rp->add_option("--epsilon", o.epsilon, "closeness parameter");
  rp->add_option("--rho", o.rho, "maximal correlation of the source");
  rp->add_option("--alpha", o.alpha, "smallest source atom");

  auto* vv = add_subcommand(app, o, "verify-variational", "search and check a partition optimizer");
  add_inputs(vv, o, "quadratic objective (JSON)");
  vv->add_option("--rho", o.rho, "Gaussian correlation")->required()->check(unit);
  vv->add_option("--m", o.m, "number of outcomes (checked against the objective)")->check(CLI::Range(2, 6));
  vv->add_option("--dim", o.dim, "domain dimension, 1 or 2")->check(CLI::Range(1, 2));
  vv->add_option("--grid-cells", o.grid_cells, "interior cells per axis")->check(CLI::PositiveNumber);
  vv->add_option("--grid-radius", o.grid_radius, "grid covers [-R, R] per axis")->check(CLI::PositiveNumber);
  vv->add_option("--restarts", o.restarts, "local-search restarts")->check(CLI::PositiveNumber);
  vv->add_option("--partition", o.partition, "check this partition instead of searching");
  add_seed_threads(vv, o);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSimulatable;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSimulatable;
  } catch (const CLI::ParseError& e) {
    return report(err, ErrorKind::usage, e.what(), e.get_name());
  }

  try {
    if (dg->parsed()) return decide_gaussian_cmd(o, out);
    if (dd->parsed()) return decide_discrete_cmd(o, out);
    if (mc->parsed()) return maxcorr_cmd(o, out);
    if (bb->parsed()) return borell_cmd(o, out);
    if (cr->parsed()) return crho_cmd(o, out);
    if (rp->parsed()) return reduction_cmd(o, out);
    return variational_cmd(o, out);
  } catch (const Error& e) {
    return report(err, e.kind(), e.what(), e.context());
  } catch (const std::exception& e) {
    return report(err, ErrorKind::numeric, e.what(), "internal");
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace nisim::cli
