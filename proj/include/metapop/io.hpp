#pragma once

// JSON ingestion of models and JSON/CSV emission of results. Floats are
// written with 17 significant digits so values survive a round trip; an
// infinite value is written as the string "inf".

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metapop/disperser.hpp"
#include "metapop/envdyn.hpp"
#include "metapop/error.hpp"
#include "metapop/graph.hpp"
#include "metapop/gwsim.hpp"
#include "metapop/linalg.hpp"
#include "metapop/motifs.hpp"

namespace metapop {

using Json = nlohmann::json;
using OJson = nlohmann::ordered_json;

inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "\"inf\"" : "\"-inf\"";
  if (std::isnan(v)) return "null";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

template <typename J>
void dump_json(const J& j, std::string& out, int indent, int depth) {
  const auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case J::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += J(it.key()).dump();
        out += indent < 0 ? ":" : ": ";
        dump_json(it.value(), out, indent, depth + 1);
      }
      newline(depth);
      out += '}';
      return;
    }
    case J::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // Arrays of scalars stay on one line.
      bool flat = true;
      for (const auto& e : j) flat = flat && !e.is_structured();
      out += '[';
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += flat ? ", " : ",";
        if (!flat) newline(depth + 1);
        dump_json(j[i], out, indent, depth + 1);
      }
      if (!flat) newline(depth);
      out += ']';
      return;
    }
    case J::value_t::number_float: out += format_double(j.template get<double>()); return;
    default: out += j.dump(); return;
  }
}

}  // namespace detail

template <typename J>
std::string dump(const J& j, int indent = 2) {
  std::string out;
  detail::dump_json(j, out, indent, 0);
  return out;
}

/// 64-bit FNV-1a, hex-encoded.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ValidationError("config " + path + " is not valid JSON: " + e.what());
  }
}

namespace detail {

inline double number(const Json& j, const char* what) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
  }
  if (!j.is_number()) throw ValidationError(std::string(what) + " must be a number");
  return j.get<double>();
}

inline Vector vector_of(const Json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array of numbers");
  Vector v;
  for (const auto& e : j) v.push_back(number(e, what));
  return v;
}

inline Matrix matrix_of(const Json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string(what) + " must be an array of rows");
  std::vector<Vector> rows;
  for (const auto& r : j) rows.push_back(vector_of(r, what));
  return Matrix::from_rows(rows);
}

inline const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError(std::string("missing field \"") + key + "\"");
  return j.at(key);
}

}  // namespace detail

/// {"m": [..], "D": [[..],..], "labels": [..]?}
inline MetapopGraph parse_graph(const Json& j) {
  std::vector<std::string> labels;
  if (j.contains("labels")) labels = j.at("labels").get<std::vector<std::string>>();
  return MetapopGraph(detail::vector_of(detail::field(j, "m"), "m"), detail::matrix_of(detail::field(j, "D"), "D"),
                      std::move(labels));
}

/// {"states": [..], "means": [[..],..], "schedule": {"periodic": [labels]} | {"markov": {"alpha", "beta"}}}
inline EnvironmentModel parse_env(const Json& j) {
  const auto states = detail::field(j, "states").get<std::vector<std::string>>();
  std::vector<Vector> means;
  for (const auto& row : detail::field(j, "means")) means.push_back(detail::vector_of(row, "means"));
  const Json& sched = detail::field(j, "schedule");
  if (sched.contains("periodic")) {
    PeriodicSchedule p;
    for (const auto& label : sched.at("periodic")) {
      const auto name = label.get<std::string>();
      const auto it = std::find(states.begin(), states.end(), name);
      if (it == states.end()) throw ValidationError("periodic schedule names unknown state " + name);
      p.order.push_back(static_cast<std::size_t>(it - states.begin()));
    }
    return EnvironmentModel(states, std::move(means), std::move(p));
  }
  if (sched.contains("markov")) {
    const Json& mk = sched.at("markov");
    if (mk.contains("transition"))
      return EnvironmentModel(states, std::move(means), MarkovSchedule{detail::matrix_of(mk.at("transition"), "transition")});
    return EnvironmentModel(states, std::move(means),
                            MarkovSchedule::two_state(detail::number(detail::field(mk, "alpha"), "alpha"),
                                                      detail::number(detail::field(mk, "beta"), "beta")));
  }
  throw ValidationError("schedule must be {\"periodic\": [...]} or {\"markov\": {...}}");
}

/// {"types": [..], "means_by_type": [..], "D": [[..]], "labels": [..]?}
inline Motif parse_motif(const Json& j) {
  Motif m;
  m.types = detail::field(j, "types").get<std::vector<std::size_t>>();
  m.means_by_type = detail::vector_of(detail::field(j, "means_by_type"), "means_by_type");
  m.D = detail::matrix_of(detail::field(j, "D"), "D");
  if (j.contains("labels")) m.labels = j.at("labels").get<std::vector<std::string>>();
  m.validate();
  return m;
}

/// {"n", "p", "L", "s", "l", "m", "M"}
inline PipelineSpec parse_pipeline(const Json& j) {
  PipelineSpec p;
  p.n = detail::field(j, "n").get<std::size_t>();
  p.p = detail::number(detail::field(j, "p"), "p");
  p.L = detail::number(detail::field(j, "L"), "L");
  p.s = detail::number(detail::field(j, "s"), "s");
  p.l = detail::number(detail::field(j, "l"), "l");
  p.m = detail::number(detail::field(j, "m"), "m");
  p.M = detail::number(detail::field(j, "M"), "M");
  p.validate();
  return p;
}

/// "poisson" | "geometric" for every patch, or one object per patch:
/// {"kind": "poisson"|"geometric"} (mean from the model),
/// {"kind": "deterministic", "k": n}, {"kind": "bernoulli-pair", "p0": .., "n": ..}.
inline LawTable parse_laws(const Json& j, const MetapopGraph& g, const EnvironmentModel* env,
                           bool allow_degenerate) {
  const std::size_t states = env ? env->num_states() : 1;
  auto mean_of = [&](std::size_t w, std::size_t i) { return env ? env->means(w)[i] : g.mean(i); };
  auto make = [&](const Json& spec, std::size_t w, std::size_t i) {
    const std::string kind = spec.is_string() ? spec.get<std::string>() : detail::field(spec, "kind").get<std::string>();
    if (kind == "poisson") return OffspringLaw::poisson(mean_of(w, i));
    if (kind == "geometric") return OffspringLaw::geometric(mean_of(w, i));
    if (kind == "deterministic") return OffspringLaw::deterministic(detail::field(spec, "k").get<Count>());
    if (kind == "bernoulli-pair")
      return OffspringLaw::bernoulli_pair(detail::number(detail::field(spec, "p0"), "p0"),
                                          detail::field(spec, "n").get<Count>());
    throw ValidationError("unknown offspring law \"" + kind + "\"");
  };
  LawTable t;
  t.allow_degenerate = allow_degenerate;
  for (std::size_t w = 0; w < states; ++w) {
    std::vector<OffspringLaw> row;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (j.is_null()) {
        row.push_back(OffspringLaw::poisson(mean_of(w, i)));
      } else if (j.is_string()) {
        row.push_back(make(j, w, i));
      } else if (j.is_array()) {
        // Per patch, or per state then per patch.
        const Json& entry = j.size() == states && states > 1 && j[w].is_array() ? j[w][i] : j.at(i);
        row.push_back(make(entry, w, i));
      } else {
        throw ValidationError("laws must be a string or an array");
      }
    }
    t.laws.push_back(std::move(row));
  }
  return t;
}

// JSON views of results.

inline OJson vec_json(std::span<const double> v) {
  OJson a = OJson::array();
  for (double x : v) a.push_back(x);
  return a;
}

inline OJson matrix_json(const Matrix& m) {
  OJson a = OJson::array();
  for (std::size_t i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i)));
  return a;
}

inline OJson verdict_json(const PersistenceVerdict& v) {
  OJson j;
  j["R"] = v.R_value;
  j["persists"] = v.persists;
  j["method"] = to_string(v.method);
  if (v.ci_halfwidth) j["ci"] = *v.ci_halfwidth;
  if (v.truncated_mass) j["truncated_mass"] = *v.truncated_mass;
  if (v.critical) j["critical"] = true;
  return j;
}

inline OJson graph_json(const MetapopGraph& g) {
  OJson j;
  j["m"] = vec_json(g.means());
  j["D"] = matrix_json(g.dispersal());
  if (!g.labels().empty()) j["labels"] = g.labels();
  return j;
}

inline OJson sim_report_json(const SimReport& r) {
  OJson j;
  j["n_runs"] = r.n_runs;
  j["horizon"] = r.horizon;
  j["seed"] = r.seed;
  j["n_survived"] = r.n_survived;
  j["n_escaped"] = r.n_escaped;
  j["survival_prob"] = r.survival_prob;
  j["survival_ci"] = r.survival_ci;
  if (r.growth_rate_hat) {
    j["growth_rate_hat"] = *r.growth_rate_hat;
    j["growth_rate_ci"] = *r.growth_rate_ci;
  }
  if (r.occupancy_hat) {
    j["occupancy_hat"] = vec_json(*r.occupancy_hat);
    j["occupancy_ci"] = vec_json(*r.occupancy_ci);
  }
  if (r.martingale_drift) j["martingale_drift"] = *r.martingale_drift;
  return j;
}

/// Rows of numbers as CSV with a header line.
inline std::string csv(const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows) {
  std::ostringstream out;
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      std::string v = format_double(r[i]);
      if (!v.empty() && v.front() == '"') v = v.substr(1, v.size() - 2);
      out << (i ? "," : "") << v;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace metapop
