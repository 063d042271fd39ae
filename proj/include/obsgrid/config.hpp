#pragma once

// Experiment configuration: strict JSON (schema_version 1). Unknown keys and
// type mismatches are reported with the line they occur on.

#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "obsgrid/spectral.hpp"

namespace obsgrid {

struct AcceptanceThresholds {
  double sandwich_rel_tol = 1e-6;
  double ratio_final_min = 0.97;
  double rate_slope_max = -1.2;
  double monotone_tol = 1e-9;
  double gap_rel_max = 1e-4;
  double bracket_rel_tol = 1e-3;
  double value_tol = 1e-6;
  double sliding_rel_tol = 0.2;
  std::vector<double> sliding_h = {0.01, 0.02, 0.03, 0.04, 0.05};
  double tube_rel_tol = 0.05;
  double tube_residual_max = 0.05;
  double equality_tol = 1e-9;
  double min_distance = 0.1;
  double attain_tol = 1e-8;
  double smallt_lower_tol = 1e-6;
  double smallt_upper_slack = 0.1;
};

struct ExperimentConfig {
  ModelName model = ModelName::dirichlet_1d;
  ModelParams params;
  std::vector<std::size_t> cells;  // empty: model default
  int gauss_order = 3;
  double L = 0.5;
  std::vector<double> T = {1.0};
  std::size_t N = 8;
  std::vector<std::size_t> N_list;
  std::size_t max_iter = 2000;
  double tol = 1e-6;
  bool away_steps = true;
  double theta = kDefaultOverflowThreshold;
  std::optional<double> nu = 0.99;  // nullopt: automatic nu_T
  double eta_factor = 1.5;
  std::size_t samples = 1000;
  AcceptanceThresholds acceptance;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

/// Line of the first `"key" :` occurrence at or after `from`.
inline std::size_t key_line(const std::string& text, const std::string& key, std::size_t from = 0) {
  const std::string quoted = "\"" + key + "\"";
  for (std::size_t pos = text.find(quoted, from); pos != std::string::npos; pos = text.find(quoted, pos + 1)) {
    std::size_t k = pos + quoted.size();
    while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
    if (k < text.size() && text[k] == ':') return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + pos, '\n'));
  }
  return 0;
}

class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path, const std::string& text) : j_(j), path_(std::move(path)), text_(text) {
    if (!j_.is_object()) fail(path_.empty() ? "config" : path_, "expected an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const std::string leaf = key.substr(key.rfind('.') == std::string::npos ? 0 : key.rfind('.') + 1);
    const std::size_t line = key_line(text_, leaf);
    throw ConfigError((line ? "line " + std::to_string(line) + ": " : std::string()) + key + ": " + what);
  }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }
  const nlohmann::json& raw(const std::string& key) const { return j_.at(key); }

  void only(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : j_.items())
      if (!allowed.count(k)) fail(full(k), "unknown key");
  }

  double number(const std::string& key, double def) const {
    if (!has(key)) return def;
    if (!raw(key).is_number()) fail(full(key), "expected a number");
    return raw(key).get<double>();
  }
  std::size_t count(const std::string& key, std::size_t def) const {
    if (!has(key)) return def;
    if (!raw(key).is_number_unsigned()) fail(full(key), "expected a nonnegative integer");
    return raw(key).get<std::size_t>();
  }
  bool boolean(const std::string& key, bool def) const {
    if (!has(key)) return def;
    if (!raw(key).is_boolean()) fail(full(key), "expected true or false");
    return raw(key).get<bool>();
  }
  std::string string(const std::string& key, const std::string& def) const {
    if (!has(key)) return def;
    if (!raw(key).is_string()) fail(full(key), "expected a string");
    return raw(key).get<std::string>();
  }
  std::vector<double> numbers(const std::string& key, std::vector<double> def) const {
    if (!has(key)) return def;
    if (raw(key).is_number()) return {raw(key).get<double>()};
    if (!raw(key).is_array()) fail(full(key), "expected a number or an array of numbers");
    std::vector<double> out;
    for (const auto& v : raw(key)) {
      if (!v.is_number()) fail(full(key), "expected numbers only");
      out.push_back(v.get<double>());
    }
    return out;
  }
  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> def) const {
    if (!has(key)) return def;
    if (raw(key).is_number_unsigned()) return {raw(key).get<std::size_t>()};
    if (!raw(key).is_array()) fail(full(key), "expected an integer or an array of integers");
    std::vector<std::size_t> out;
    for (const auto& v : raw(key)) {
      if (!v.is_number_unsigned()) fail(full(key), "expected nonnegative integers only");
      out.push_back(v.get<std::size_t>());
    }
    return out;
  }
  Reader child(const std::string& key) const { return Reader(raw(key), full(key), text_); }

 private:
  const nlohmann::json& j_;
  std::string path_;
  const std::string& text_;
};

inline cplx parse_complex(const Reader& r, const std::string& key, const nlohmann::json& v) {
  if (v.is_number()) return {v.get<double>(), 0.0};
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number())
    return {v[0].get<double>(), v[1].get<double>()};
  r.fail(r.full(key), "expected a complex number as a number or [re, im]");
}

}  // namespace detail

/// Parses config text; throws ConfigError with a line number on any problem.
inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("line " + detail::line_col(text, e.byte == 0 ? 0 : e.byte - 1) + ": malformed JSON (" +
                      std::string(e.what()) + ")");
  }
  detail::Reader r(j, "", text);
  r.only({"schema_version", "model", "grid", "L", "T", "N", "N_list", "optimizer", "theta", "certificate", "samples",
          "acceptance", "output_dir", "seed"});
  if (!r.has("schema_version")) throw ConfigError("config: missing schema_version (expected 1)");
  if (r.count("schema_version", 0) != 1) r.fail("schema_version", "unsupported version (expected 1)");

  ExperimentConfig c;
  if (!r.has("model")) throw ConfigError("config: missing model");
  {
    const auto m = r.child("model");
    m.only({"name", "n_max", "mu", "u"});
    try {
      c.model = parse_model_name(m.string("name", ""));
    } catch (const ConfigError& e) {
      m.fail("model.name", e.what());
    }
    c.params.n_max = m.count("n_max", c.params.n_max);
    if (m.has("mu")) {
      const auto& mu = m.raw("mu");
      if (!mu.is_array() || mu.size() != 3) m.fail("model.mu", "expected three complex numbers");
      for (std::size_t k = 0; k < 3; ++k) c.params.mu[k] = detail::parse_complex(m, "mu", mu[k]);
    }
    if (m.has("u")) {
      const auto& u = m.raw("u");
      if (!u.is_array() || u.size() != 3) m.fail("model.u", "expected three vectors of three complex numbers");
      for (std::size_t k = 0; k < 3; ++k) {
        if (!u[k].is_array() || u[k].size() != 3) m.fail("model.u", "expected three vectors of three complex numbers");
        for (std::size_t i = 0; i < 3; ++i) c.params.u[k][i] = detail::parse_complex(m, "u", u[k][i]);
      }
    }
  }
  if (r.has("grid")) {
    const auto g = r.child("grid");
    g.only({"cells_per_axis", "gauss_order"});
    c.cells = g.counts("cells_per_axis", {});
    c.gauss_order = static_cast<int>(g.count("gauss_order", 3));
    if (c.gauss_order < 1 || c.gauss_order > 5) g.fail("grid.gauss_order", "must lie in 1..5");
    for (auto n : c.cells)
      if (n < 2) g.fail("grid.cells_per_axis", "need at least 2 cells per axis");
  }
  c.L = r.number("L", c.L);
  if (!(c.L > 0 && c.L < 1)) r.fail("L", "must lie in (0, 1)");
  if (r.has("T") && r.raw("T").is_object()) {
    const auto t = r.child("T");
    t.only({"start", "stop", "count"});
    const double a = t.number("start", 0), b = t.number("stop", 0);
    const std::size_t n = t.count("count", 0);
    if (n < 1 || !(a > 0) || !(b >= a)) t.fail("T.count", "range needs 0 < start <= stop and count >= 1");
    c.T.clear();
    for (std::size_t k = 0; k < n; ++k) c.T.push_back(n == 1 ? a : a + (b - a) * static_cast<double>(k) / double(n - 1));
  } else {
    c.T = r.numbers("T", c.T);
  }
  for (double t : c.T)
    if (!(t > 0)) r.fail("T", "every T must be positive");
  c.N = r.count("N", c.N);
  if (c.N < 1) r.fail("N", "must be at least 1");
  c.N_list = r.counts("N_list", {});
  if (r.has("optimizer")) {
    const auto o = r.child("optimizer");
    o.only({"max_iter", "tol", "away_steps"});
    c.max_iter = o.count("max_iter", c.max_iter);
    c.tol = o.number("tol", c.tol);
    c.away_steps = o.boolean("away_steps", c.away_steps);
    if (!(c.tol > 0)) o.fail("optimizer.tol", "must be positive");
  }
  c.theta = r.number("theta", c.theta);
  if (r.has("certificate")) {
    const auto ce = r.child("certificate");
    ce.only({"nu", "eta_factor"});
    if (ce.has("nu")) {
      const auto& nu = ce.raw("nu");
      if (nu.is_string() && nu.get<std::string>() == "auto") {
        c.nu.reset();
      } else if (nu.is_number() && nu.get<double>() > 0 && nu.get<double>() < 1) {
        c.nu = nu.get<double>();
      } else {
        ce.fail("certificate.nu", "expected a number in (0, 1) or \"auto\"");
      }
    }
    c.eta_factor = ce.number("eta_factor", c.eta_factor);
    if (!(c.eta_factor > 1.0 && c.eta_factor < 2.0)) ce.fail("certificate.eta_factor", "must lie in (1, 2)");
  }
  c.samples = r.count("samples", c.samples);
  if (r.has("acceptance")) {
    const auto a = r.child("acceptance");
    a.only({"sandwich_rel_tol", "ratio_final_min", "rate_slope_max", "monotone_tol", "gap_rel_max", "bracket_rel_tol",
            "value_tol", "sliding_rel_tol", "sliding_h", "tube_rel_tol", "tube_residual_max", "equality_tol",
            "min_distance", "attain_tol", "smallt_lower_tol", "smallt_upper_slack"});
    auto& t = c.acceptance;
    t.sandwich_rel_tol = a.number("sandwich_rel_tol", t.sandwich_rel_tol);
    t.ratio_final_min = a.number("ratio_final_min", t.ratio_final_min);
    t.rate_slope_max = a.number("rate_slope_max", t.rate_slope_max);
    t.monotone_tol = a.number("monotone_tol", t.monotone_tol);
    t.gap_rel_max = a.number("gap_rel_max", t.gap_rel_max);
    t.bracket_rel_tol = a.number("bracket_rel_tol", t.bracket_rel_tol);
    t.value_tol = a.number("value_tol", t.value_tol);
    t.sliding_rel_tol = a.number("sliding_rel_tol", t.sliding_rel_tol);
    t.sliding_h = a.numbers("sliding_h", t.sliding_h);
    t.tube_rel_tol = a.number("tube_rel_tol", t.tube_rel_tol);
    t.tube_residual_max = a.number("tube_residual_max", t.tube_residual_max);
    t.equality_tol = a.number("equality_tol", t.equality_tol);
    t.min_distance = a.number("min_distance", t.min_distance);
    t.attain_tol = a.number("attain_tol", t.attain_tol);
    t.smallt_lower_tol = a.number("smallt_lower_tol", t.smallt_lower_tol);
    t.smallt_upper_slack = a.number("smallt_upper_slack", t.smallt_upper_slack);
  }
  c.output_dir = r.string("output_dir", c.output_dir);
  c.seed = r.count("seed", c.seed);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Normalized echo of a parsed config (every field, defaults filled in).
inline nlohmann::json to_json(const ExperimentConfig& c) {
  auto cx = [](cplx z) { return nlohmann::json::array({z.real(), z.imag()}); };
  nlohmann::json model = {{"name", std::string(to_string(c.model))}, {"n_max", c.params.n_max}};
  if (c.model == ModelName::coupled_rect_2d) {
    model["mu"] = {cx(c.params.mu[0]), cx(c.params.mu[1]), cx(c.params.mu[2])};
    nlohmann::json u = nlohmann::json::array();
    for (const auto& v : c.params.u) u.push_back({cx(v[0]), cx(v[1]), cx(v[2])});
    model["u"] = u;
  }
  const auto& t = c.acceptance;
  return {{"schema_version", 1},
          {"model", model},
          {"grid", {{"cells_per_axis", c.cells}, {"gauss_order", c.gauss_order}}},
          {"L", c.L},
          {"T", c.T},
          {"N", c.N},
          {"N_list", c.N_list},
          {"optimizer", {{"max_iter", c.max_iter}, {"tol", c.tol}, {"away_steps", c.away_steps}}},
          {"theta", c.theta},
          {"certificate", {{"nu", c.nu ? nlohmann::json(*c.nu) : nlohmann::json("auto")}, {"eta_factor", c.eta_factor}}},
          {"samples", c.samples},
          {"acceptance",
           {{"sandwich_rel_tol", t.sandwich_rel_tol},
            {"ratio_final_min", t.ratio_final_min},
            {"rate_slope_max", t.rate_slope_max},
            {"monotone_tol", t.monotone_tol},
            {"gap_rel_max", t.gap_rel_max},
            {"bracket_rel_tol", t.bracket_rel_tol},
            {"value_tol", t.value_tol},
            {"sliding_rel_tol", t.sliding_rel_tol},
            {"sliding_h", t.sliding_h},
            {"tube_rel_tol", t.tube_rel_tol},
            {"tube_residual_max", t.tube_residual_max},
            {"equality_tol", t.equality_tol},
            {"min_distance", t.min_distance},
            {"attain_tol", t.attain_tol},
            {"smallt_lower_tol", t.smallt_lower_tol},
            {"smallt_upper_slack", t.smallt_upper_slack}}},
          {"seed", c.seed}};
}

}  // namespace obsgrid
