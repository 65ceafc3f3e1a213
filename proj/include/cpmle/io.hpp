#pragma once

// CSV data, the key-value model and scenario files, and JSON reports.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cpmle/simulation.hpp"

namespace cpmle {

using Json = nlohmann::ordered_json;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write '" + path + "'");
  out << text;
}

/// Shortest decimal text that reads back to the same double.
inline std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Comma-separated numeric data, one observation per row. A first row that is not entirely
/// numeric is taken as a header. Blank lines are ignored.
inline Dataset parse_csv(std::string_view text) {
  std::vector<double> values;
  std::size_t dim = 0;
  bool first = true;
  const auto lines = detail::split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string_view line = lines[ln];
    if (ln == 0 && line.starts_with("\xEF\xBB\xBF")) line.remove_prefix(3);
    if (detail::trim(line).empty()) continue;

    std::vector<std::pair<std::string_view, std::size_t>> fields;  // text, 1-based column
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      fields.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start),
                          start + 1);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    std::vector<double> row;
    std::optional<std::size_t> bad;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      auto v = detail::parse_double(fields[c].first);
      if (!v) {
        bad = c;
        break;
      }
      row.push_back(*v);
    }
    if (bad && first) {
      dim = fields.size();
      first = false;
      continue;
    }
    if (bad)
      throw ParseError("'" + std::string(detail::trim(fields[*bad].first)) + "' is not a number", ln + 1,
                       fields[*bad].second);
    for (std::size_t c = 0; c < row.size(); ++c)
      if (!std::isfinite(row[c])) throw ParseError("non-finite value", ln + 1, fields[c].second);
    if (dim == 0) dim = row.size();
    if (row.size() != dim)
      throw ParseError("expected " + std::to_string(dim) + " columns, found " + std::to_string(row.size()), ln + 1,
                       row.size() > dim ? fields[dim].second : line.size() + 1);
    first = false;
    values.insert(values.end(), row.begin(), row.end());
  }
  if (values.empty()) throw ParseError("no data rows", lines.size() + 1, 1);
  return Dataset(std::move(values), dim);
}

inline Dataset read_csv(const std::string& path) { return parse_csv(detail::read_file(path)); }

/// Headerless CSV with round-trip-exact numbers.
inline std::string to_csv(const Dataset& data) {
  std::string out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t c = 0; c < data.dim(); ++c) {
      if (c) out += ',';
      out += detail::shortest(data(i, c));
    }
    out += '\n';
  }
  return out;
}

/// key = value lines; '#' starts a comment.
struct KeyValueFile {
  struct Entry {
    std::string value;
    std::size_t line = 0;
    std::size_t value_column = 0;
    bool used = false;
  };
  std::map<std::string, Entry, std::less<>> entries;

  static KeyValueFile parse(std::string_view text) {
    KeyValueFile f;
    const auto lines = detail::split_lines(text);
    for (std::size_t ln = 0; ln < lines.size(); ++ln) {
      std::string_view line = lines[ln];
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      if (detail::trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        const auto col = line.size() - detail::trim(line).size() + 1;
        throw ParseError("expected 'key = value'", ln + 1, col > line.size() ? 1 : col);
      }
      std::string key(detail::trim(line.substr(0, eq)));
      if (key.empty()) throw ParseError("missing key", ln + 1, 1);
      std::string_view raw = line.substr(eq + 1);
      std::size_t col = eq + 2;
      while (!raw.empty() && (raw.front() == ' ' || raw.front() == '\t')) {
        raw.remove_prefix(1);
        ++col;
      }
      if (f.entries.count(key)) throw ParseError("duplicate key '" + key + "'", ln + 1, 1);
      f.entries[key] = {std::string(detail::trim(raw)), ln + 1, col, false};
    }
    return f;
  }

  const Entry* find(std::string_view key) {
    auto it = entries.find(key);
    if (it == entries.end()) return nullptr;
    it->second.used = true;
    return &it->second;
  }

  static std::vector<double> numbers(const Entry& e) {
    std::vector<double> out;
    std::size_t start = 0;
    const std::string& s = e.value;
    while (start < s.size()) {
      while (start < s.size() && (s[start] == ' ' || s[start] == '\t' || s[start] == ',')) ++start;
      if (start >= s.size()) break;
      std::size_t end = start;
      while (end < s.size() && s[end] != ' ' && s[end] != '\t' && s[end] != ',') ++end;
      auto v = detail::parse_double(std::string_view(s).substr(start, end - start));
      if (!v || !std::isfinite(*v))
        throw ParseError("'" + s.substr(start, end - start) + "' is not a finite number", e.line, e.value_column + start);
      out.push_back(*v);
      start = end;
    }
    return out;
  }

  std::optional<std::vector<double>> numbers(std::string_view key) {
    const Entry* e = find(key);
    if (!e) return std::nullopt;
    return numbers(*e);
  }

  std::optional<double> number(std::string_view key) {
    const Entry* e = find(key);
    if (!e) return std::nullopt;
    auto v = numbers(*e);
    if (v.size() != 1) throw ParseError("'" + std::string(key) + "' takes one number", e->line, e->value_column);
    return v.front();
  }

  std::optional<std::size_t> count(std::string_view key) {
    const Entry* e = find(key);
    if (!e) return std::nullopt;
    auto v = numbers(*e);
    if (v.size() != 1 || v.front() < 0.0 || v.front() != std::floor(v.front()))
      throw ParseError("'" + std::string(key) + "' takes one nonnegative integer", e->line, e->value_column);
    return static_cast<std::size_t>(v.front());
  }

  /// Rejects keys nobody asked for.
  void finish() const {
    for (const auto& [key, e] : entries)
      if (!e.used) throw ParseError("unknown key '" + key + "'", e.line, 1);
  }
};

namespace detail {

template <class F>
auto at_entry(const KeyValueFile::Entry& e, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ParseError&) {
    throw;
  } catch (const Error& ex) {
    throw ParseError(ex.what(), e.line, e.value_column);
  }
}

}  // namespace detail

/// Model description:
///   k = 2
///   family = normal-common-var          # every segment
///   segment.3 = exponential              # override, 1-based
///   psi.lower = 0.01                     # optional box blocks
///   psi.upper = 100
///   theta.1.lower = -5
///   theta.1.upper = 5
///   psi.role = variance                  # optional assertion
/// A k or family given by the caller fills in for a missing key.
inline ModelSpec parse_model(KeyValueFile& f, std::optional<std::size_t> k_default = std::nullopt,
                             std::optional<std::string> family_default = std::nullopt) {
  std::optional<std::size_t> k = f.count("k");
  if (!k) k = k_default;
  if (!k) throw ArgumentError("model needs k (number of change points)");
  std::vector<FamilyPtr> families(*k + 1);
  if (const auto* e = f.find("family")) {
    auto fam = detail::at_entry(*e, [&] { return make_family(e->value); });
    std::fill(families.begin(), families.end(), fam);
  } else if (family_default) {
    std::fill(families.begin(), families.end(), make_family(*family_default));
  }
  for (std::size_t j = 0; j <= *k; ++j)
    if (const auto* e = f.find("segment." + std::to_string(j + 1)))
      families[j] = detail::at_entry(*e, [&] { return make_family(e->value); });
  for (const auto& [key, e] : f.entries)
    if (key.starts_with("segment.") && !e.used)
      throw ParseError("'" + key + "' names a segment beyond k + 1 = " + std::to_string(*k + 1), e.line, 1);
  for (std::size_t j = 0; j <= *k; ++j)
    if (!families[j]) throw ArgumentError("segment " + std::to_string(j + 1) + " has no family");

  BoxOverrides box;
  auto block = [&](const std::string& prefix) -> std::optional<BlockBox> {
    const auto* lo = f.find(prefix + ".lower");
    const auto* hi = f.find(prefix + ".upper");
    if (!lo && !hi) return std::nullopt;
    if (!lo || !hi) {
      const auto* e = lo ? lo : hi;
      throw ParseError(prefix + " needs both .lower and .upper", e->line, 1);
    }
    return detail::at_entry(*lo, [&] {
      auto a = KeyValueFile::numbers(*lo), b = KeyValueFile::numbers(*hi);
      return BlockBox(Eigen::Map<Vec>(a.data(), static_cast<Eigen::Index>(a.size())),
                      Eigen::Map<Vec>(b.data(), static_cast<Eigen::Index>(b.size())));
    });
  };
  box.psi = block("psi");
  for (std::size_t j = 0; j <= *k; ++j)
    if (auto b = block("theta." + std::to_string(j + 1))) box.thetas[j] = *b;
  const auto* role = f.find("psi.role");
  ModelSpec spec = role ? detail::at_entry(*role, [&] { return ModelSpec(families, box); }) : ModelSpec(families, box);
  if (role && role->value != spec.psi_role())
    throw ParseError("psi.role '" + role->value + "' does not match the families' '" + spec.psi_role() + "'", role->line,
                     role->value_column);
  return spec;
}

inline ModelSpec parse_model(std::string_view text, std::optional<std::size_t> k_default = std::nullopt,
                             std::optional<std::string> family_default = std::nullopt) {
  auto f = KeyValueFile::parse(text);
  auto spec = parse_model(f, k_default, family_default);
  f.finish();
  return spec;
}

/// Scenario description: the model keys plus
///   truth.psi = 1
///   truth.theta.1 = 0
///   truth.theta.2 = 2
///   fractions = 0.5
///   sizes = 100 400 1600
///   reps = 500
///   seed = 20090801
///   level = 0.95
///   deltas = 5 10 20
///   rate_target = 0.1
///   name = my-scenario
inline ScenarioSpec parse_scenario(std::string_view text) {
  auto f = KeyValueFile::parse(text);
  ScenarioSpec s;
  s.model = parse_model(f);
  if (const auto* e = f.find("name")) s.name = e->value;
  auto vec = [](const std::vector<double>& v) { return Vec(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()))); };
  s.truth.psi = vec(f.numbers("truth.psi").value_or(std::vector<double>{}));
  for (std::size_t j = 0; j < s.model.segments(); ++j) {
    auto t = f.numbers("truth.theta." + std::to_string(j + 1));
    if (!t) throw ArgumentError("scenario needs truth.theta." + std::to_string(j + 1));
    s.truth.thetas.push_back(vec(*t));
  }
  s.fractions = f.numbers("fractions").value_or(std::vector<double>{});
  if (auto sizes = f.numbers("sizes")) {
    s.sizes.clear();
    for (double v : *sizes) {
      if (v < 1.0 || v != std::floor(v)) throw ArgumentError("sizes must be positive integers");
      s.sizes.push_back(static_cast<std::size_t>(v));
    }
  }
  if (auto r = f.count("reps")) s.reps = *r;
  if (auto v = f.count("seed")) s.seed = *v;
  if (auto v = f.number("level")) s.level = *v;
  if (auto v = f.numbers("deltas")) s.deltas = *v;
  if (auto v = f.number("rate_target")) s.rate_target = *v;
  f.finish();
  s.validate();
  return s;
}

// ---- JSON ---------------------------------------------------------------

inline Json to_json(const Vec& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

inline Json to_json(const Mat& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(to_json(Vec(m.row(r).transpose())));
  return a;
}

inline Json to_json(const ModelSpec& spec) {
  Json j;
  j["k"] = spec.k();
  Json fams = Json::array();
  for (const auto& f : spec.families()) fams.push_back(f->descriptor());
  j["families"] = fams;
  j["common_dim"] = spec.common_dim();
  j["psi_role"] = spec.psi_role();
  return j;
}

inline Json to_json(const ParameterState& p) {
  Json j;
  j["psi"] = to_json(p.psi);
  Json t = Json::array();
  for (const auto& th : p.thetas) t.push_back(to_json(th));
  j["theta"] = t;
  return j;
}

inline Json to_json(const ParameterBox& b) {
  Json j;
  j["psi_lower"] = to_json(b.psi.lower);
  j["psi_upper"] = to_json(b.psi.upper);
  Json t = Json::array();
  for (const auto& th : b.thetas) t.push_back(Json{{"lower", to_json(th.lower)}, {"upper", to_json(th.upper)}});
  j["theta"] = t;
  return j;
}

inline Json to_json(const FitResult& r, const ModelSpec& spec, std::optional<WaldResult> wald = std::nullopt) {
  Json j;
  j["n"] = r.change_points.n();
  j["change_points"] = r.change_points.boundaries();
  j["fractions"] = r.change_points.fractions();
  j["params"] = to_json(r.params);
  if (spec.psi_role().starts_with("cholesky")) {
    const Mat l = cholesky_from_packed(r.params.psi, static_cast<std::size_t>(spec.family(spec.psi_owner()).observation_dim()));
    j["covariance"] = to_json(Mat(l * l.transpose()));
  }
  j["loglik"] = r.loglik;
  j["std_errors"] = to_json(r.std_errors);
  if (wald) {
    Json w;
    w["level"] = wald->level;
    w["z"] = wald->z;
    Json rows = Json::array();
    for (const auto& iv : wald->intervals)
      rows.push_back(Json{{"estimate", iv.estimate}, {"std_error", iv.std_error}, {"lower", iv.lower}, {"upper", iv.upper}});
    w["intervals"] = rows;
    j["wald"] = w;
  }
  j["info_matrix"] = to_json(r.info.full);
  Json d;
  d["loglik_trace"] = r.diagnostics.trace;
  d["outer_iterations"] = r.diagnostics.outer_iterations;
  d["converged"] = r.diagnostics.converged;
  d["winning_start"] = r.diagnostics.winning_start;
  d["alternative_maxima"] = r.diagnostics.alternative_maxima;
  Json starts = Json::array();
  for (const auto& s : r.diagnostics.starts) {
    Json sj;
    sj["psi_start"] = to_json(s.psi_start);
    sj["succeeded"] = s.succeeded;
    if (!s.error.empty()) sj["error"] = s.error;
    sj["loglik"] = s.succeeded ? Json(s.loglik) : Json(nullptr);
    sj["change_points"] = s.change_points.boundaries();
    sj["psi"] = to_json(s.psi);
    sj["trace"] = s.trace;
    starts.push_back(sj);
  }
  d["starts"] = starts;
  std::vector<bool> at_bound = r.diagnostics.at_box_bound;
  d["at_box_bound"] = at_bound;
  std::vector<bool> indistinct = r.diagnostics.indistinct_neighbors;
  d["indistinct_neighbors"] = indistinct;
  d["condition_number"] = r.diagnostics.condition_number;
  if (!r.diagnostics.inference_error.empty()) d["inference_error"] = r.diagnostics.inference_error;
  j["diagnostics"] = d;
  return j;
}

inline Json to_json(const std::vector<Check>& checks) {
  Json a = Json::array();
  for (const auto& c : checks)
    a.push_back(Json{{"name", c.name}, {"passed", c.passed}, {"informational", c.informational}, {"detail", c.detail}});
  return a;
}

inline Json to_json(const MonteCarloReport& r, bool include_records = true) {
  Json j;
  j["suite"] = r.suite;
  j["scenario"] = r.scenario;
  j["seed"] = r.seed;
  j["reps"] = r.reps;
  j["level"] = r.level;
  j["deltas"] = r.deltas;
  Json sizes = Json::array();
  for (const auto& s : r.sizes) {
    Json sj;
    sj["n"] = s.n;
    sj["failures"] = s.failures;
    sj["median_lambda_error"] = s.median_lambda_error;
    sj["median_scaled_error"] = s.median_scaled_error;
    sj["median_theta_error"] = s.median_theta_error;
    sj["median_psi_error"] = s.median_psi_error;
    sj["tail_probability"] = s.tail_probability;
    sj["coverage"] = s.coverage;
    sj["mean_z"] = s.mean_z;
    sj["ks_distance"] = s.ks_distance;
    sj["inference_failures"] = s.inference_failures;
    if (include_records) {
      Json recs = Json::array();
      for (const auto& rec : s.records) {
        Json rj;
        rj["rep"] = rec.rep;
        rj["failed"] = rec.failed;
        if (rec.failed) {
          rj["error"] = rec.error;
        } else {
          rj["change_points"] = rec.boundaries;
          rj["scaled_error"] = rec.scaled_error;
          rj["estimate"] = to_json(rec.estimate);
          rj["std_errors"] = to_json(rec.std_errors);
        }
        recs.push_back(rj);
      }
      sj["records"] = recs;
    }
    sizes.push_back(sj);
  }
  j["sizes"] = sizes;
  j["checks"] = to_json(r.checks);
  j["notes"] = r.notes;
  j["passed"] = r.passed();
  return j;
}

inline Json to_json(const HinkleyReport& r) {
  Json j;
  j["suite"] = "hinkley";
  j["theta2_0"] = r.theta2_0;
  j["seed"] = r.seed;
  Json rows = Json::array();
  for (const auto& row : r.rows)
    rows.push_back(Json{{"m", row.m},
                        {"reps", row.reps},
                        {"mean", row.mean},
                        {"std_error", row.std_error},
                        {"min_statistic", row.min_statistic},
                        {"max_abs_difference", row.max_abs_difference}});
  j["rows"] = rows;
  j["checks"] = to_json(r.checks);
  j["passed"] = r.passed();
  return j;
}

inline Json to_json(const LemmaOneConstants& c) {
  Json j;
  j["delta_lambda0"] = c.delta_lambda0;
  j["G"] = c.G;
  j["G_bar"] = c.G_bar;
  j["rho_sup"] = c.rho_sup;
  j["C1"] = c.C1;
  j["C2"] = c.C2;
  j["note"] = c.note;
  return j;
}

inline Json to_json(const LemmaCheckReport& r) {
  Json j;
  j["probes"] = r.probes;
  j["violations"] = r.violations;
  j["worst_slack"] = r.worst_slack;
  j["worst_probe"] = r.worst_description;
  if (!r.first_violation.empty()) j["first_violation"] = r.first_violation;
  return j;
}

/// Per-n summary table: one row per sample size.
inline std::string summary_csv(const MonteCarloReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "suite,n,failures,median_lambda_error,median_scaled_error";
  const std::size_t segs = r.sizes.empty() ? 0 : r.sizes.front().median_theta_error.size();
  const std::size_t dims = r.sizes.empty() ? 0 : r.sizes.front().coverage.size();
  for (std::size_t j = 0; j < segs; ++j) os << ",median_theta" << j + 1 << "_error";
  os << ",median_psi_error";
  for (double d : r.deltas) os << ",tail_ge_" << d;
  for (std::size_t c = 0; c < dims; ++c) os << ",coverage" << c + 1 << ",mean_z" << c + 1 << ",ks" << c + 1;
  os << '\n';
  for (const auto& s : r.sizes) {
    os << r.suite << ',' << s.n << ',' << s.failures << ',' << s.median_lambda_error << ',' << s.median_scaled_error;
    for (double v : s.median_theta_error) os << ',' << v;
    os << ',' << s.median_psi_error;
    for (double v : s.tail_probability) os << ',' << v;
    for (std::size_t c = 0; c < s.coverage.size(); ++c) os << ',' << s.coverage[c] << ',' << s.mean_z[c] << ',' << s.ks_distance[c];
    os << '\n';
  }
  return os.str();
}

inline std::string summary_csv(const HinkleyReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "m,reps,mean,std_error,min_statistic,max_abs_difference\n";
  for (const auto& row : r.rows)
    os << row.m << ',' << row.reps << ',' << row.mean << ',' << row.std_error << ',' << row.min_statistic << ','
       << row.max_abs_difference << '\n';
  return os.str();
}

}  // namespace cpmle
