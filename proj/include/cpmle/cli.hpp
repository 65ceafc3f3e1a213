#pragma once

// Command-line front end: fit, simulate, verify and kl.
//
// Exit codes: 0 success, 1 a check failed, 2 input error, 3 optimization failure,
// 4 identifiability failure.

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpmle/io.hpp"
#include "cpmle/verify.hpp"

namespace cpmle {

enum ExitCode : int { exit_ok = 0, exit_check_failed = 1, exit_input = 2, exit_optimization = 3, exit_identifiability = 4 };

/// Everything a run was asked to do; echoed into every report.
struct RunConfig {
  std::string command;
  std::string data;
  std::string model;
  std::optional<std::size_t> k;
  std::string family;
  std::string scenario;
  std::string out;
  std::uint64_t seed = default_seed;
  std::optional<std::size_t> reps;
  std::string suite = "all";
  std::optional<double> level;
  std::string psi_grid;
  std::size_t probes = 10'000;
  std::string m_grid = "10 100 1000 10000";
  std::size_t hinkley_reps = 10'000;
  int max_newton_iterations = NewtonOptions{}.max_iterations;
  std::size_t min_segment_length = 1;
  unsigned threads = 0;
  int verbosity = 0;
  std::string inject_fault;
  // kl
  std::string theta, psi, true_family, true_theta, true_psi;
};

inline Json to_json(const RunConfig& c) {
  Json j;
  j["command"] = c.command;
  if (!c.data.empty()) j["data"] = c.data;
  if (!c.model.empty()) j["model"] = c.model;
  if (c.k) j["k"] = *c.k;
  if (!c.family.empty()) j["family"] = c.family;
  if (!c.scenario.empty()) j["scenario"] = c.scenario;
  if (!c.out.empty()) j["out"] = c.out;
  j["seed"] = c.seed;
  if (c.reps) j["reps"] = *c.reps;
  if (c.command == "simulate") {
    j["suite"] = c.suite;
    j["m_grid"] = c.m_grid;
    j["hinkley_reps"] = c.hinkley_reps;
  }
  if (c.level) j["level"] = *c.level;
  if (!c.psi_grid.empty()) j["psi_grid"] = c.psi_grid;
  if (c.command == "verify") j["probes"] = c.probes;
  if (c.command == "fit") {
    j["max_newton_iterations"] = c.max_newton_iterations;
    j["min_segment_length"] = c.min_segment_length;
  }
  if (c.command == "kl") {
    j["theta"] = c.theta;
    if (!c.psi.empty()) j["psi"] = c.psi;
    if (!c.true_family.empty()) j["true_family"] = c.true_family;
    j["true_theta"] = c.true_theta;
    if (!c.true_psi.empty()) j["true_psi"] = c.true_psi;
  }
  if (!c.inject_fault.empty()) j["inject_fault"] = c.inject_fault;
  return j;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"consistency", "rate", "normality", "hinkley", "all"};
  return names;
}

namespace detail {

inline std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  KeyValueFile::Entry e{text, 1, 1, true};
  try {
    return KeyValueFile::numbers(e);
  } catch (const ParseError& ex) {
    throw ArgumentError(what + ": " + ex.what());
  }
}

inline Vec to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// One-dimensional ψ: every number is a point. Otherwise points are separated by ';'.
inline std::vector<Vec> parse_psi_grid(const std::string& text, std::size_t dim) {
  std::vector<Vec> grid;
  if (text.empty()) return grid;
  if (dim == 1) {
    for (double v : parse_numbers(text, "--psi-grid")) grid.push_back(Vec::Constant(1, v));
    return grid;
  }
  std::stringstream ss(text);
  std::string point;
  while (std::getline(ss, point, ';')) {
    if (trim(point).empty()) continue;
    auto v = parse_numbers(point, "--psi-grid");
    if (v.size() != dim)
      throw ArgumentError("--psi-grid point '" + std::string(trim(point)) + "' has " + std::to_string(v.size()) +
                          " numbers, psi has dimension " + std::to_string(dim));
    grid.push_back(to_vec(v));
  }
  return grid;
}

/// Prefixes parse errors with the file they came from.
template <class F>
auto from_file(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ParseError& e) {
    throw ArgumentError(path + ": " + e.what());
  }
}

inline ModelSpec load_model(const RunConfig& c) {
  if (c.model.empty()) {
    if (c.family.empty()) throw ArgumentError("give --model or --family");
    if (!c.k) throw ArgumentError("give --k with --family");
    return ModelSpec::homogeneous(make_family(c.family), *c.k);
  }
  auto f = from_file(c.model, [&] { return KeyValueFile::parse(read_file(c.model)); });
  if (c.k && f.entries.count("k")) throw ArgumentError("k is given both by --k and in " + c.model);
  if (!c.family.empty() && f.entries.count("family"))
    throw ArgumentError("the family is given both by --family and in " + c.model);
  return from_file(c.model, [&] {
    auto spec = parse_model(f, c.k, c.family.empty() ? std::nullopt : std::optional<std::string>(c.family));
    f.finish();
    return spec;
  });
}

inline ScenarioSpec load_scenario(const std::string& name) {
  for (const auto& b : builtin_scenario_names())
    if (name == b) return builtin_scenario(name);
  std::ifstream probe(name);
  if (!probe) {
    std::string known;
    for (const auto& b : builtin_scenario_names()) known += (known.empty() ? "" : ", ") + b;
    throw ArgumentError("scenario '" + name + "' is neither a file nor a built-in (" + known + ")");
  }
  auto s = from_file(name, [&] { return parse_scenario(read_file(name)); });
  if (s.name == "custom") s.name = name;
  return s;
}

inline std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

inline void print_checks(std::ostream& out, const std::vector<Check>& checks) {
  for (const auto& c : checks)
    out << (c.informational ? "INFO" : c.passed ? "PASS" : "FAIL") << "  " << c.name << "  [" << c.detail << "]\n";
}

inline void print_fit_table(std::ostream& out, const ModelSpec& spec, const FitResult& r, const WaldResult& wald) {
  out << "n = " << r.change_points.n() << ", k = " << spec.k() << ", log-likelihood = " << fixed(r.loglik, 10) << '\n';
  out << "change points:";
  for (auto b : r.change_points.boundaries()) out << ' ' << b;
  out << "\nfractions:";
  for (double f : r.change_points.fractions()) out << ' ' << fixed(f);
  out << "\n\n";
  const auto& ivs = wald.intervals;
  auto coord = [&](std::size_t q) {
    if (q >= ivs.size()) return std::string("  (no standard error)");
    return "  se " + fixed(ivs[q].std_error) + "  " + fixed(wald.level * 100.0, 3) + "% [" + fixed(ivs[q].lower) + ", " +
           fixed(ivs[q].upper) + "]";
  };
  out << "segment  rows        family\n";
  for (std::size_t j = 0; j < spec.segments(); ++j) {
    out << std::setw(7) << j + 1 << "  " << std::setw(4) << r.change_points.begin(j) + 1 << "-" << std::left
        << std::setw(6) << r.change_points.end(j) << std::right << "  " << spec.family(j).descriptor() << '\n';
    const auto off = spec.theta_offset(j);
    for (Eigen::Index q = 0; q < r.params.thetas[j].size(); ++q)
      out << "         theta[" << q + 1 << "] = " << fixed(r.params.thetas[j][q]) << coord(off + static_cast<std::size_t>(q))
          << '\n';
  }
  if (spec.common_dim() > 0) {
    out << "common parameter (" << spec.psi_role() << ")\n";
    for (Eigen::Index q = 0; q < r.params.psi.size(); ++q)
      out << "         psi[" << q + 1 << "] = " << fixed(r.params.psi[q]) << coord(static_cast<std::size_t>(q)) << '\n';
  }
  const auto& d = r.diagnostics;
  out << "\nouter iterations " << d.outer_iterations << (d.converged ? ", converged" : ", NOT converged") << "; "
      << d.starts.size() << " start(s), " << d.alternative_maxima << " alternative maxima\n";
  if (!d.inference_error.empty()) out << "inference unavailable: " << d.inference_error << '\n';
  if (std::find(d.at_box_bound.begin(), d.at_box_bound.end(), true) != d.at_box_bound.end())
    out << "warning: some estimates lie on their box bound\n";
  if (std::find(d.indistinct_neighbors.begin(), d.indistinct_neighbors.end(), true) != d.indistinct_neighbors.end())
    out << "warning: neighbouring segments have numerically equal estimates\n";
}

inline std::string trace_path(const RunConfig& c) { return (c.out.empty() ? std::string("cpmle-fit") : c.out) + ".trace.json"; }

inline int cmd_fit(const RunConfig& c, std::ostream& out, std::ostream& err) {
  if (c.data.empty()) throw ArgumentError("fit needs --data");
  const Dataset data = from_file(c.data, [&] { return read_csv(c.data); });
  const ModelSpec spec = load_model(c);
  FitOptions fo;
  fo.psi_starts = parse_psi_grid(c.psi_grid, spec.common_dim());
  fo.newton.max_iterations = c.max_newton_iterations;
  fo.min_segment_length = c.min_segment_length;
  const double level = c.level.value_or(0.95);
  if (!(level > 0.0 && level < 1.0)) throw ArgumentError("--level must lie in (0, 1)");

  FitResult r;
  try {
    r = fit(spec, data, fo);
  } catch (const OptimizationError& e) {
    Json t;
    t["config"] = to_json(c);
    t["error"] = e.what();
    t["best_iterate"] = to_json(e.best_iterate());
    t["gradient_norm"] = e.gradient_norm();
    const auto path = trace_path(c);
    write_file(path, t.dump(2) + "\n");
    err << "optimization failed: " << e.what() << "\ntrace written to " << path << '\n';
    return exit_optimization;
  }
  std::optional<WaldResult> wald;
  if (r.diagnostics.inference_error.empty()) wald = wald_intervals(r, r.info, level);

  Json j;
  j["config"] = to_json(c);
  j["model"] = to_json(spec);
  j["result"] = to_json(r, spec, wald);
  const std::string path = c.out.empty() ? "cpmle-fit.json" : c.out;
  write_file(path, j.dump(2) + "\n");

  out << "seed " << c.seed << '\n';
  print_fit_table(out, spec, r, wald.value_or(WaldResult{level, normal_critical_value(level), 0.0, false, {}}));
  out << "report written to " << path << '\n';
  return exit_ok;
}

inline std::vector<std::size_t> parse_m_grid(const std::string& text) {
  std::vector<std::size_t> m;
  for (double v : parse_numbers(text, "--m-grid")) {
    if (v < 1.0 || v != std::floor(v)) throw ArgumentError("--m-grid entries must be positive integers");
    m.push_back(static_cast<std::size_t>(v));
  }
  return m;
}

inline int cmd_simulate(const RunConfig& c, std::ostream& out, std::ostream&) {
  if (std::find(suite_names().begin(), suite_names().end(), c.suite) == suite_names().end()) {
    std::string list;
    for (const auto& s : suite_names()) list += (list.empty() ? "" : ", ") + s;
    throw ArgumentError("unknown suite '" + c.suite + "' (choose from: " + list + ")");
  }
  ScenarioSpec sc = load_scenario(c.scenario.empty() ? "normal-shift-small" : c.scenario);
  sc.seed = c.seed;
  if (c.reps) sc.reps = *c.reps;
  if (c.level) sc.level = *c.level;
  sc.threads = c.threads;
  sc.validate();
  if (!(sc.level > 0.0 && sc.level < 1.0)) throw ArgumentError("--level must lie in (0, 1)");

  const std::string prefix = c.out.empty() ? "cpmle-sim" : c.out;
  const bool all = c.suite == "all";
  Json reports = Json::array();
  bool passed = true;
  out << "scenario " << sc.name << ", seed " << sc.seed << ", " << sc.reps << " replications\n";
  auto emit = [&](const std::string& name, const Json& j, const std::string& csv, const std::vector<Check>& checks,
                  bool ok) {
    reports.push_back(j);
    write_file(prefix + "-" + name + ".csv", csv);
    out << "\n[" << name << "]\n";
    print_checks(out, checks);
    passed = passed && ok;
  };
  for (const std::string suite : {"consistency", "rate", "normality"}) {
    if (!all && c.suite != suite) continue;
    const MonteCarloReport r = suite == std::string("consistency") ? run_consistency(sc)
                               : suite == std::string("rate")      ? run_rate(sc)
                                                                   : run_normality(sc);
    emit(suite, to_json(r), summary_csv(r), r.checks, r.passed());
    for (const auto& note : r.notes) out << "note: " << note << '\n';
  }
  if (all || c.suite == "hinkley") {
    const auto h = hinkley_demo(parse_m_grid(c.m_grid), 0.0, sc.seed, c.hinkley_reps, c.threads);
    emit("hinkley", to_json(h), summary_csv(h), h.checks, h.passed());
  }
  Json j;
  j["config"] = to_json(c);
  j["scenario"] = {{"name", sc.name},
                   {"model", to_json(sc.model)},
                   {"truth", to_json(sc.truth)},
                   {"fractions", sc.fractions},
                   {"sizes", sc.sizes},
                   {"reps", sc.reps},
                   {"seed", sc.seed},
                   {"level", sc.level},
                   {"deltas", sc.deltas},
                   {"rate_target", sc.rate_target}};
  j["reports"] = reports;
  j["passed"] = passed;
  write_file(prefix + ".json", j.dump(2) + "\n");
  out << "\n" << (passed ? "all checks passed" : "some checks FAILED") << "; report written to " << prefix << ".json\n";
  return passed ? exit_ok : exit_check_failed;
}

inline int cmd_verify(const RunConfig& c, std::ostream& out, std::ostream&) {
  VerifyOptions o;
  o.seed = c.seed;
  o.probes = c.probes;
  if (!c.scenario.empty()) o.scenario = load_scenario(c.scenario);
  if (!c.inject_fault.empty()) {
    if (c.inject_fault != "kl-sign") throw ArgumentError("unknown fault '" + c.inject_fault + "'");
    o.inject_kl_sign = true;
  }
  const auto r = run_verification(o);
  out << "seed " << c.seed << "\nJ1 bound instance " << r.lemma_instance << ": Delta = " << fixed(r.constants.delta_lambda0)
      << ", G-bar = " << fixed(r.constants.G_bar) << ", C1 = " << fixed(r.constants.C1) << ", C2 = " << fixed(r.constants.C2)
      << "\n\n";
  print_checks(out, r.checks);
  Json j;
  j["config"] = to_json(c);
  j["lemma_instance"] = r.lemma_instance;
  j["constants"] = to_json(r.constants);
  j["lemma_check"] = to_json(r.lemma);
  j["checks"] = to_json(r.checks);
  j["passed"] = r.passed();
  const std::string path = c.out.empty() ? "cpmle-verify.json" : c.out;
  write_file(path, j.dump(2) + "\n");
  out << "\n" << (r.passed() ? "all checks passed" : "some checks FAILED") << "; report written to " << path << '\n';
  return r.passed() ? exit_ok : exit_check_failed;
}

inline int cmd_kl(const RunConfig& c, std::ostream& out, std::ostream&) {
  if (c.family.empty()) throw ArgumentError("kl needs --family");
  const auto fj = make_family(c.family);
  const auto fi = c.true_family.empty() ? fj : make_family(c.true_family);
  const Vec theta = to_vec(parse_numbers(c.theta, "--theta"));
  const Vec theta0 = to_vec(parse_numbers(c.true_theta, "--true-theta"));
  const Vec psi = to_vec(parse_numbers(c.psi, "--psi"));
  const Vec psi0 = c.true_psi.empty() ? psi : to_vec(parse_numbers(c.true_psi, "--true-psi"));
  ExpectationOptions eo;
  eo.seed = c.seed;
  const auto e = kl_v_detailed(*fj, psi, theta, *fi, psi0, theta0, eo);
  Json j;
  j["config"] = to_json(c);
  j["v"] = e.value;
  j["std_error"] = e.std_error;
  j["method"] = e.method;
  if (!c.out.empty()) write_file(c.out, j.dump(2) + "\n");
  out << j.dump(2) << '\n';
  return exit_ok;
}

}  // namespace detail

/// Runs one command line; output and diagnostics go to the given streams.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Exact maximum-likelihood estimation of multiple change points"};
  app.require_subcommand(1);
  RunConfig c;

  auto common = [&](CLI::App* s) {
    s->add_option("--seed", c.seed, "Root seed of every random stream")->capture_default_str();
    s->add_option("--out", c.out, "Output path (fit, verify, kl) or prefix (simulate)");
    s->add_option("--threads", c.threads, "Worker threads, 0 = all cores");
    s->add_flag("-v,--verbose", c.verbosity, "More output");
  };

  auto* fit_cmd = app.add_subcommand("fit", "Fit a change-point model to a CSV file");
  fit_cmd->add_option("--data", c.data, "CSV file, one observation per row")->required();
  fit_cmd->add_option("--model", c.model, "Model description file");
  fit_cmd->add_option("--k", c.k, "Number of change points");
  fit_cmd->add_option("--family", c.family, "Family of every segment, e.g. normal-common-var");
  fit_cmd->add_option("--level", c.level, "Confidence level of the Wald intervals (default 0.95)");
  fit_cmd->add_option("--psi-grid", c.psi_grid, "Extra starting values for the common parameter");
  fit_cmd->add_option("--max-newton-iterations", c.max_newton_iterations, "Newton iteration limit")->capture_default_str();
  fit_cmd->add_option("--min-segment-length", c.min_segment_length, "Shortest admissible segment")->capture_default_str();
  common(fit_cmd);

  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo checks of the asymptotic theory");
  sim_cmd->add_option("--scenario", c.scenario, "Scenario file or built-in name (default normal-shift-small)");
  sim_cmd->add_option("--suite", c.suite, "consistency, rate, normality, hinkley or all")->capture_default_str();
  sim_cmd->add_option("--reps", c.reps, "Replications per sample size");
  sim_cmd->add_option("--level", c.level, "Wald coverage level");
  sim_cmd->add_option("--m-grid", c.m_grid, "Sample sizes of the Hinkley demonstration")->capture_default_str();
  sim_cmd->add_option("--hinkley-reps", c.hinkley_reps, "Replications of the Hinkley demonstration")->capture_default_str();
  common(sim_cmd);

  auto* verify_cmd = app.add_subcommand("verify", "Run the self-verification bundle");
  verify_cmd->add_option("--scenario", c.scenario, "Scenario supplying the J1-bound instance");
  verify_cmd->add_option("--probes", c.probes, "Random probes of the J1 bound")->capture_default_str();
  verify_cmd->add_option("--inject-fault", c.inject_fault)->group("");
  common(verify_cmd);

  auto* kl_cmd = app.add_subcommand("kl", "Evaluate v = E_true[log f - log f_true]");
  kl_cmd->add_option("--family", c.family, "Candidate family")->required();
  kl_cmd->add_option("--theta", c.theta, "Candidate segment parameter")->required();
  kl_cmd->add_option("--psi", c.psi, "Candidate common parameter");
  kl_cmd->add_option("--true-family", c.true_family, "True family (default: the candidate's)");
  kl_cmd->add_option("--true-theta", c.true_theta, "True segment parameter")->required();
  kl_cmd->add_option("--true-psi", c.true_psi, "True common parameter (default: --psi)");
  common(kl_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return exit_input;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  c.command = cmd;
  try {
    if (cmd == "fit") return detail::cmd_fit(c, out, err);
    if (cmd == "simulate") return detail::cmd_simulate(c, out, err);
    if (cmd == "verify") return detail::cmd_verify(c, out, err);
    return detail::cmd_kl(c, out, err);
  } catch (const ParseError& e) {
    err << "input error: " << e.what() << '\n';
    return exit_input;
  } catch (const IdentifiabilityError& e) {
    err << "identifiability failure: " << e.what() << '\n';
    return exit_identifiability;
  } catch (const OptimizationError& e) {
    err << "optimization failure: " << e.what() << '\n';
    return exit_optimization;
  } catch (const ArgumentError& e) {
    err << "input error: " << e.what() << '\n';
    return exit_input;
  } catch (const DomainError& e) {
    err << "input error: " << e.what() << '\n';
    return exit_input;
  } catch (const ParameterError& e) {
    err << "input error: " << e.what() << '\n';
    return exit_input;
  } catch (const SizeError& e) {
    err << "input error: " << e.what() << '\n';
    return exit_input;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_check_failed;
  }
}

}  // namespace cpmle
