#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nisim/discrete.hpp"
#include "nisim/error.hpp"
#include "nisim/netsearch.hpp"
#include "nisim/stability.hpp"
#include "nisim/variational.hpp"

/// JSON readers and writers. Doubles are written in shortest round-trip form,
/// so parse(dump(x)) reproduces every bit. Non-finite doubles become null.
namespace nisim::io {

using json = nlohmann::json;

namespace detail {

inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

/// Reads a double; null maps to +inf so non-finite writes survive a round trip.
inline double read_number(const json& j, const char* what) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  if (!j.is_number()) throw DataError(std::string("expected a number for ") + what, what);
  return j.get<double>();
}

inline const json& field(const json& j, const char* key) {
  if (!j.is_object()) throw DataError(std::string("expected an object containing '") + key + "'", key);
  const auto it = j.find(key);
  if (it == j.end()) throw DataError(std::string("missing field '") + key + "'", key);
  return *it;
}

inline std::size_t read_size(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw DataError(std::string("field '") + key + "' must be a nonnegative integer", key);
  }
  return v.get<std::size_t>();
}

inline std::vector<double> read_doubles(const json& j, const char* key) {
  if (!j.is_array()) throw DataError(std::string("field '") + key + "' must be an array", key);
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(read_number(v, key));
  return out;
}

/// Flattens an array of equal-length rows; returns the row length.
inline std::size_t read_rows(const json& j, const char* key, std::vector<double>& out) {
  if (!j.is_array() || j.empty()) throw DataError(std::string("field '") + key + "' must be a nonempty array", key);
  std::size_t width = 0;
  for (const auto& row : j) {
    const auto r = read_doubles(row, key);
    if (width == 0) width = r.size();
    if (r.size() != width || width == 0) throw DataError(std::string("ragged rows in '") + key + "'", key);
    out.insert(out.end(), r.begin(), r.end());
  }
  return width;
}

inline json rows(const std::vector<double>& flat, std::size_t width) {
  json out = json::array();
  for (std::size_t r = 0; r * width < flat.size(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < width; ++c) row.push_back(number(flat[r * width + c]));
    out.push_back(std::move(row));
  }
  return out;
}

inline std::vector<int> read_labels(const json& j, const char* key) {
  if (!j.is_array()) throw DataError(std::string("field '") + key + "' must be an array", key);
  std::vector<int> out;
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw DataError(std::string("labels in '") + key + "' must be integers", key);
    out.push_back(v.get<int>());
  }
  return out;
}

/// Runs a reader, converting library exceptions into DataError.
template <typename F>
auto guarded(const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(std::string(what) + ": " + e.what(), what);
  }
}

}  // namespace detail

// ---------------------------------------------------------------- writers

inline json to_json(const CellGrid& g) {
  return {{"dimension", g.dimension()}, {"radius", g.radius()}, {"cells_per_axis", g.cells_per_axis()}};
}

inline json to_json(const CellFunction& f) {
  json j = to_json(f.grid());
  j["values"] = detail::rows(f.values(), f.outcomes());
  return j;
}

inline json to_json(const DistributionMatrix& p) { return detail::rows(p.entries(), p.size()); }

inline json to_json(const JointPMF& p) {
  std::vector<double> mass;
  for (std::size_t x = 0; x < p.alphabet_x(); ++x)
    for (std::size_t y = 0; y < p.alphabet_y(); ++y) mass.push_back(p(x, y));
  return {{"alphabet_x", p.alphabet_x()}, {"alphabet_y", p.alphabet_y()}, {"mass", detail::rows(mass, p.alphabet_y())}};
}

inline json to_json(const BorellBounds& b) { return {{"c_lo", b.c_lo}, {"c_hi", b.c_hi}}; }

inline json to_json(const MonteCarloEstimate& e) {
  return {{"matrix", to_json(e.matrix)}, {"standard_error", detail::rows(e.standard_error, e.matrix.size())}};
}

inline json to_json(const ReductionParams& r) {
  return {{"gamma", detail::number(r.gamma)},
          {"log10_kappa_max", detail::number(r.log10_kappa_max)},
          {"log10_n_vars", detail::number(r.log10_n_vars)},
          {"log10_log10_runtime", detail::number(r.log10_log10_runtime)},
          {"log10_log10_log10_runtime", detail::number(r.log10_log10_log10_runtime)},
          {"degenerate", r.degenerate},
          {"formula",
           {{"log_convention", r.log_convention},
            {"gamma", "(1 - rho) eps / (100 m log(m / eps))"},
            {"log10_kappa_max", "1800 B log10(eps / (100 2^m)), B = m log(m/eps) log(1/alpha) / ((1 - rho) eps)"},
            {"log10_n_vars", "3600 B log10(100 2^m / eps)"},
            {"log10_log10_runtime", "log10(m log10(5/eps)) + 10^log10_n_vars log10 p"},
            {"non_finite", "null denotes +inf"}}}};
}

inline json to_json(const DiscreteWitness& w) {
  return {{"domain_x", w.domain_x},
          {"domain_y", w.domain_y},
          {"outcomes", w.outcomes},
          {"f", detail::rows(w.f, w.outcomes)},
          {"g", detail::rows(w.g, w.outcomes)}};
}

inline json to_json(const ResolvedSearch& r) {
  return {{"epsilon", r.epsilon},
          {"domain_dimension", r.domain_dimension},
          {"grid_radius", r.grid_radius},
          {"cells_per_axis", r.cells_per_axis},
          {"degree_cap", r.degree_cap},
          {"net_epsilon", r.net_epsilon},
          {"separation", r.separation},
          {"closeness", r.closeness},
          {"budget", r.budget},
          {"seed", r.seed},
          {"restarts", r.restarts}};
}

/// `config` is echoed verbatim; pass null when there is nothing to echo.
inline json to_json(const Decision& d, json config = nullptr) {
  json j = {{"verdict", verdict_name(d.verdict)},
            {"best_distance", detail::number(d.best_distance)},
            {"witness", nullptr},
            {"discrete_witness", nullptr},
            {"candidates_examined", d.candidates_examined},
            {"search_complete", d.search_complete},
            {"mode", d.mode},
            {"diagnostics", d.diagnostics},
            {"config", std::move(config)}};
  if (d.witness) j["witness"] = json::array({to_json(d.witness->first), to_json(d.witness->second)});
  if (d.discrete_witness) j["discrete_witness"] = to_json(*d.discrete_witness);
  return j;
}

inline json to_json(const QuadraticObjective& o) {
  return {{"m", o.outcomes()},
          {"weights", detail::rows(o.weights(), o.outcomes())},
          {"targets", detail::rows(o.targets(), o.outcomes())}};
}

inline json to_json(const PartitionGrid& p) {
  json j = to_json(p.grid());
  j["m"] = p.outcomes();
  j["omega"] = p.omega();
  j["omega_prime"] = p.omega_prime();
  return j;
}

inline json to_json(const IntervalPartition& p) { return {{"breaks", p.breaks()}, {"labels", p.labels()}}; }

inline json to_json(const IntervalPair& p) {
  return {{"omega", to_json(p.omega)}, {"omega_prime", to_json(p.omega_prime)}};
}

inline json to_json(const FirstVariationReport& r) {
  json pairs = json::array();
  for (const auto& e : r.entries) {
    pairs.push_back({{"i", e.i},
                     {"j", e.j},
                     {"primed", e.primed},
                     {"residual", e.residual ? detail::number(*e.residual) : json(nullptr)},
                     {"mean_value", e.mean_value},
                     {"samples", e.samples}});
  }
  const auto mx = r.max_residual();
  return {{"pairs", std::move(pairs)}, {"max_residual", mx ? json(*mx) : json(nullptr)}};
}

inline json to_json(const RefineResult& r) {
  return {{"parts", to_json(r.parts)},
          {"gradient_norm", r.gradient_norm},
          {"iterations", r.iterations},
          {"collapsed", r.collapsed},
          {"converged", r.converged}};
}

inline json to_json(const EigenIdentityReport& r) {
  return {{"max_residual", r.max_residual},
          {"max_magnitude", r.max_magnitude},
          {"samples", r.samples},
          {"first_variation", r.first_variation},
          {"precondition_met", r.precondition_met}};
}

// ---------------------------------------------------------------- readers

template <typename T>
T from_json(const json& j);

template <>
inline CellGrid from_json<CellGrid>(const json& j) {
  return detail::guarded("CellGrid", [&] {
    return CellGrid(detail::read_size(j, "dimension"), detail::read_number(detail::field(j, "radius"), "radius"),
                    detail::read_size(j, "cells_per_axis"));
  });
}

template <>
inline CellFunction from_json<CellFunction>(const json& j) {
  return detail::guarded("CellFunction", [&] {
    auto grid = from_json<CellGrid>(j);
    std::vector<double> values;
    const std::size_t m = detail::read_rows(detail::field(j, "values"), "values", values);
    return CellFunction(std::move(grid), m, std::move(values));
  });
}

template <>
inline DistributionMatrix from_json<DistributionMatrix>(const json& j) {
  return detail::guarded("DistributionMatrix", [&] {
    std::vector<double> entries;
    const std::size_t m = detail::read_rows(j, "matrix", entries);
    if (entries.size() != m * m) throw DataError("distribution matrix must be square", "matrix");
    return DistributionMatrix(m, std::move(entries));
  });
}

template <>
inline JointPMF from_json<JointPMF>(const json& j) {
  return detail::guarded("JointPMF", [&] {
    const std::size_t px = detail::read_size(j, "alphabet_x");
    const std::size_t py = detail::read_size(j, "alphabet_y");
    std::vector<double> mass;
    const auto& mj = detail::field(j, "mass");
    if (mj.is_array() && !mj.empty() && mj.front().is_array()) {
      detail::read_rows(mj, "mass", mass);
    } else {
      mass = detail::read_doubles(mj, "mass");
    }
    return JointPMF(px, py, std::move(mass));
  });
}

template <>
inline BorellBounds from_json<BorellBounds>(const json& j) {
  return detail::guarded("BorellBounds", [&] {
    return BorellBounds{detail::read_number(detail::field(j, "c_lo"), "c_lo"),
                        detail::read_number(detail::field(j, "c_hi"), "c_hi")};
  });
}

template <>
inline MonteCarloEstimate from_json<MonteCarloEstimate>(const json& j) {
  return detail::guarded("MonteCarloEstimate", [&] {
    MonteCarloEstimate e{from_json<DistributionMatrix>(detail::field(j, "matrix")), {}};
    detail::read_rows(detail::field(j, "standard_error"), "standard_error", e.standard_error);
    return e;
  });
}

template <>
inline ReductionParams from_json<ReductionParams>(const json& j) {
  return detail::guarded("ReductionParams", [&] {
    ReductionParams r;
    r.gamma = detail::read_number(detail::field(j, "gamma"), "gamma");
    r.log10_kappa_max = detail::read_number(detail::field(j, "log10_kappa_max"), "log10_kappa_max");
    r.log10_n_vars = detail::read_number(detail::field(j, "log10_n_vars"), "log10_n_vars");
    r.log10_log10_runtime = detail::read_number(detail::field(j, "log10_log10_runtime"), "log10_log10_runtime");
    r.log10_log10_log10_runtime =
        detail::read_number(detail::field(j, "log10_log10_log10_runtime"), "log10_log10_log10_runtime");
    r.degenerate = detail::field(j, "degenerate").get<bool>();
    r.log_convention = detail::field(detail::field(j, "formula"), "log_convention").get<std::string>();
    return r;
  });
}

template <>
inline DiscreteWitness from_json<DiscreteWitness>(const json& j) {
  return detail::guarded("DiscreteWitness", [&] {
    DiscreteWitness w;
    w.domain_x = detail::read_size(j, "domain_x");
    w.domain_y = detail::read_size(j, "domain_y");
    w.outcomes = detail::read_size(j, "outcomes");
    detail::read_rows(detail::field(j, "f"), "f", w.f);
    detail::read_rows(detail::field(j, "g"), "g", w.g);
    if (w.f.size() != w.domain_x * w.outcomes || w.g.size() != w.domain_y * w.outcomes) {
      throw DataError("witness tables do not match their domains", "discrete_witness");
    }
    return w;
  });
}

template <>
inline Decision from_json<Decision>(const json& j) {
  return detail::guarded("Decision", [&] {
    Decision d;
    d.verdict = parse_verdict(detail::field(j, "verdict").get<std::string>());
    d.best_distance = detail::read_number(detail::field(j, "best_distance"), "best_distance");
    const auto& w = detail::field(j, "witness");
    if (!w.is_null()) {
      if (!w.is_array() || w.size() != 2) throw DataError("witness must be a pair of cell functions", "witness");
      d.witness.emplace(from_json<CellFunction>(w[0]), from_json<CellFunction>(w[1]));
    }
    if (const auto it = j.find("discrete_witness"); it != j.end() && !it->is_null()) {
      d.discrete_witness = from_json<DiscreteWitness>(*it);
    }
    d.candidates_examined = detail::field(j, "candidates_examined").get<std::uint64_t>();
    d.search_complete = detail::field(j, "search_complete").get<bool>();
    d.mode = detail::field(j, "mode").get<std::string>();
    d.diagnostics = detail::field(j, "diagnostics").get<std::string>();
    return d;
  });
}

template <>
inline QuadraticObjective from_json<QuadraticObjective>(const json& j) {
  return detail::guarded("QuadraticObjective", [&] {
    const std::size_t m = detail::read_size(j, "m");
    std::vector<double> w, z;
    detail::read_rows(detail::field(j, "weights"), "weights", w);
    detail::read_rows(detail::field(j, "targets"), "targets", z);
    return QuadraticObjective(m, std::move(w), std::move(z));
  });
}

template <>
inline PartitionGrid from_json<PartitionGrid>(const json& j) {
  return detail::guarded("PartitionGrid", [&] {
    return PartitionGrid(from_json<CellGrid>(j), detail::read_size(j, "m"),
                         detail::read_labels(detail::field(j, "omega"), "omega"),
                         detail::read_labels(detail::field(j, "omega_prime"), "omega_prime"));
  });
}

template <>
inline IntervalPartition from_json<IntervalPartition>(const json& j) {
  return detail::guarded("IntervalPartition", [&] {
    return IntervalPartition(detail::read_doubles(detail::field(j, "breaks"), "breaks"),
                             detail::read_labels(detail::field(j, "labels"), "labels"));
  });
}

template <>
inline IntervalPair from_json<IntervalPair>(const json& j) {
  return detail::guarded("IntervalPair", [&] {
    return IntervalPair{from_json<IntervalPartition>(detail::field(j, "omega")),
                        from_json<IntervalPartition>(detail::field(j, "omega_prime"))};
  });
}

template <>
inline FirstVariationReport from_json<FirstVariationReport>(const json& j) {
  return detail::guarded("FirstVariationReport", [&] {
    FirstVariationReport r;
    const auto& pairs = detail::field(j, "pairs");
    if (!pairs.is_array()) throw DataError("field 'pairs' must be an array", "pairs");
    for (const auto& p : pairs) {
      InterfaceResidual e;
      e.i = detail::read_size(p, "i");
      e.j = detail::read_size(p, "j");
      e.primed = detail::field(p, "primed").get<bool>();
      if (const auto& v = detail::field(p, "residual"); !v.is_null()) e.residual = detail::read_number(v, "residual");
      e.mean_value = detail::read_number(detail::field(p, "mean_value"), "mean_value");
      e.samples = detail::read_size(p, "samples");
      r.entries.push_back(e);
    }
    return r;
  });
}

// ---------------------------------------------------------------- text

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline json parse(std::string_view text, const std::string& context = "input") {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed JSON: ") + e.what(), context);
  }
}

inline json read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open input file", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

template <typename T>
T read_file_as(const std::string& path) {
  const auto j = read_file(path);
  try {
    return from_json<T>(j);
  } catch (const DataError& e) {
    throw DataError(e.what(), path + (e.context().empty() ? "" : ": " + e.context()));
  }
}

inline void write_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open output file", path);
  out << dump(j);
  if (!out) throw DataError("failed writing output file", path);
}

}  // namespace nisim::io
