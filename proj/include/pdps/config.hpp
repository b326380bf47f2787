#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdps/reverse.hpp"

namespace pdps {

/// Malformed or inconsistent configuration; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PriorSection {
  std::vector<double> weights;
  std::vector<std::vector<double>> means;  // one d-vector per component
  std::vector<double> sigmas;              // component standard deviations
};

struct LikelihoodSection {
  std::string type = "linear_gaussian";  // linear_gaussian | nonlinear_builtin | none
  std::string op = "tanh";               // nonlinear_builtin only
  std::vector<std::vector<double>> a;    // n x d
  std::vector<double> y;
  double noise_std = 1.0;
};

struct RunSection {
  std::size_t n_samples = 2000;
  std::uint64_t master_seed = 0;
  int workers = 1;
  std::string out_dir = "out";
};

struct DiagnosticsSection {
  double margin = 0.1;  // V^2 = 2 max s_k^2 (1 + margin)
  int alpha_probes = 2000;
  int kappa_samples = 20000;
  int kappa_search = 16;
  double eps = 0.1;  // advisor target accuracy
  double eta2 = 1.0;
  double lipschitz_g = 1.0;
  double zeta2 = 1.0;
};

struct ScoreCheckSection {
  double t = 0.2;
  std::vector<std::vector<double>> points;
  RgoConfig inner = [] {
    RgoConfig c;
    c.n_in = 2000;
    c.m_chains = 500;
    return c;
  }();
};

struct CompareSection {
  int ula_steps = 2000;
  double ula_step_size = 0.01;
  double dps_t_start = 5.0;
  double dps_zeta = 1.0;
  int projections = 128;
};

struct AblationSection {
  // nullopt marks the balanced mid-window time.
  std::vector<std::optional<double>> t_grid{0.02, std::nullopt, 0.6};
};

struct RunConfig {
  PriorSection prior;
  LikelihoodSection likelihood;
  std::optional<double> T;  // nullopt: balanced mid-window time
  ReverseConfig sampler;
  RunSection run;
  DiagnosticsSection diagnostics;
  ScoreCheckSection score_check;
  CompareSection compare;
  AblationSection ablation;
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
      throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

template <typename T>
T get(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

// A number, a list of numbers, or a list of lists, returned as rows.
inline std::vector<std::vector<double>> get_rows(const json& j, const std::string& where, bool scalar_is_row) {
  try {
    if (j.is_number()) return {{j.get<double>()}};
    if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a number or a non-empty array");
    if (j.front().is_array()) return j.get<std::vector<std::vector<double>>>();
    const auto flat = j.get<std::vector<double>>();
    if (scalar_is_row) return {flat};
    std::vector<std::vector<double>> rows;
    for (double v : flat) rows.push_back({v});
    return rows;
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline std::vector<double> get_vector(const json& j, const std::string& where) {
  try {
    if (j.is_number()) return {j.get<double>()};
    return j.get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline RgoConfig parse_rgo(const json& j, RgoConfig c, const std::string& where) {
  check_keys(j, {"n_in", "snr", "m_chains", "burn_in_fraction", "strict", "shift_on_reuse", "step_min", "step_max"},
             where);
  c.n_in = get(j, "n_in", c.n_in, where);
  c.snr_in = get(j, "snr", c.snr_in, where);
  c.m_chains = get(j, "m_chains", c.m_chains, where);
  c.burn_in_fraction = get(j, "burn_in_fraction", c.burn_in_fraction, where);
  c.strict = get(j, "strict", c.strict, where);
  c.shift_on_reuse = get(j, "shift_on_reuse", c.shift_on_reuse, where);
  c.step_clamp.min = get(j, "step_min", c.step_clamp.min, where);
  c.step_clamp.max = get(j, "step_max", c.step_clamp.max, where);
  return c;
}

inline json dump_rgo(const RgoConfig& c) {
  return {{"n_in", c.n_in},
          {"snr", c.snr_in},
          {"m_chains", c.m_chains},
          {"burn_in_fraction", c.burn_in_fraction},
          {"strict", c.strict},
          {"shift_on_reuse", c.shift_on_reuse},
          {"step_min", c.step_clamp.min},
          {"step_max", c.step_clamp.max}};
}

inline const char* final_step_name(FinalStep s) {
  switch (s) {
    case FinalStep::kNone:
      return "none";
    case FinalStep::kReverseDrift:
      return "reverse_drift";
    case FinalStep::kProbabilityFlow:
      return "probability_flow";
  }
  return "none";
}

inline FinalStep parse_final_step(const std::string& s) {
  if (s == "none") return FinalStep::kNone;
  if (s == "reverse_drift") return FinalStep::kReverseDrift;
  if (s == "probability_flow") return FinalStep::kProbabilityFlow;
  throw ConfigError("sampler.final_step: expected none | reverse_drift | probability_flow, got '" + s + "'");
}

// Numbers, or the strings "auto" / "none" where allowed.
inline std::optional<double> get_auto_number(const json& j, const char* key, std::optional<double> fallback,
                                             bool allow_none, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string() && v.get<std::string>() == "auto") return std::nullopt;
  if (allow_none && v.is_string() && v.get<std::string>() == "none") return std::numeric_limits<double>::infinity();
  throw ConfigError(where + "." + key + (allow_none ? ": expected a number, \"auto\" or \"none\"" : ": expected a number or \"auto\""));
}

inline json dump_auto_number(const std::optional<double>& v) {
  if (!v) return "auto";
  if (std::isinf(*v)) return "none";
  return *v;
}

inline void parse_sampler(const json& j, RunConfig& rc) {
  const std::string w = "sampler";
  check_keys(j,
             {"T", "T0", "steps_per_unit_time", "truncation_radius", "truncation_eps", "final_step", "apply_scaling",
              "final_denoise_sigma", "inner", "warm"},
             w);
  ReverseConfig& c = rc.sampler;
  rc.T = get_auto_number(j, "T", rc.T, false, w);
  c.T0 = get(j, "T0", c.T0, w);
  c.steps_per_unit_time = get(j, "steps_per_unit_time", c.steps_per_unit_time, w);
  c.truncation_radius = get_auto_number(j, "truncation_radius", c.truncation_radius, true, w);
  c.truncation_eps = get(j, "truncation_eps", c.truncation_eps, w);
  if (j.contains("final_step")) c.final_step = parse_final_step(get<std::string>(j, "final_step", "", w));
  c.apply_scaling = get(j, "apply_scaling", c.apply_scaling, w);
  c.final_denoise_sigma = get(j, "final_denoise_sigma", c.final_denoise_sigma, w);
  if (j.contains("inner")) c.inner = parse_rgo(j.at("inner"), c.inner, w + ".inner");
  if (j.contains("warm")) {
    const json& wj = j.at("warm");
    const std::string ww = w + ".warm";
    check_keys(wj, {"n_out", "snr", "chain_reuse", "step_rule", "adapt_fraction", "step_min", "step_max", "inner"}, ww);
    WarmStartConfig& wc = c.warm;
    wc.n_out = get(wj, "n_out", wc.n_out, ww);
    wc.snr_out = get(wj, "snr", wc.snr_out, ww);
    wc.chain_reuse = get(wj, "chain_reuse", wc.chain_reuse, ww);
    if (wj.contains("step_rule")) {
      const auto rule = get<std::string>(wj, "step_rule", "", ww);
      if (rule == "instantaneous")
        wc.step_rule = OuterStepRule::kInstantaneous;
      else if (rule == "adapt_then_freeze")
        wc.step_rule = OuterStepRule::kAdaptThenFreeze;
      else
        throw ConfigError(ww + ".step_rule: expected instantaneous | adapt_then_freeze");
    }
    wc.adapt_fraction = get(wj, "adapt_fraction", wc.adapt_fraction, ww);
    wc.step_clamp.min = get(wj, "step_min", wc.step_clamp.min, ww);
    wc.step_clamp.max = get(wj, "step_max", wc.step_clamp.max, ww);
    if (wj.contains("inner")) wc.inner = parse_rgo(wj.at("inner"), wc.inner, ww + ".inner");
  }
}

}  // namespace detail

/// Parses and validates a configuration document. Throws ConfigError.
inline RunConfig parse_config(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::get;
  RunConfig rc;
  check_keys(j, {"problem", "sampler", "run", "diagnostics", "score_check", "compare", "ablation"}, "config");
  if (!j.contains("problem")) throw ConfigError("config: missing 'problem' section");

  const auto& pj = j.at("problem");
  check_keys(pj, {"prior", "likelihood"}, "problem");
  if (!pj.contains("prior")) throw ConfigError("problem: missing 'prior'");
  const auto& prj = pj.at("prior");
  check_keys(prj, {"type", "weights", "means", "sigmas"}, "problem.prior");
  if (get<std::string>(prj, "type", "gmm", "problem.prior") != "gmm")
    throw ConfigError("problem.prior.type: only 'gmm' is supported");
  for (const char* key : {"weights", "means", "sigmas"})
    if (!prj.contains(key)) throw ConfigError(std::string("problem.prior: missing '") + key + "'");
  rc.prior.weights = detail::get_vector(prj.at("weights"), "problem.prior.weights");
  rc.prior.means = detail::get_rows(prj.at("means"), "problem.prior.means", false);
  rc.prior.sigmas = detail::get_vector(prj.at("sigmas"), "problem.prior.sigmas");

  if (pj.contains("likelihood")) {
    const auto& lj = pj.at("likelihood");
    const std::string w = "problem.likelihood";
    check_keys(lj, {"type", "operator", "A", "y", "noise_std"}, w);
    rc.likelihood.type = get<std::string>(lj, "type", "linear_gaussian", w);
    if (rc.likelihood.type != "none") {
      if (!lj.contains("A") || !lj.contains("y")) throw ConfigError(w + ": 'A' and 'y' are required");
      rc.likelihood.a = detail::get_rows(lj.at("A"), w + ".A", true);
      rc.likelihood.y = detail::get_vector(lj.at("y"), w + ".y");
      rc.likelihood.noise_std = get(lj, "noise_std", rc.likelihood.noise_std, w);
      rc.likelihood.op = get<std::string>(lj, "operator", rc.likelihood.op, w);
    }
  } else {
    rc.likelihood.type = "none";
  }

  if (j.contains("sampler")) detail::parse_sampler(j.at("sampler"), rc);

  if (j.contains("run")) {
    const auto& r = j.at("run");
    check_keys(r, {"n_samples", "master_seed", "workers", "out_dir"}, "run");
    rc.run.n_samples = get(r, "n_samples", rc.run.n_samples, "run");
    rc.run.master_seed = get(r, "master_seed", rc.run.master_seed, "run");
    rc.run.workers = get(r, "workers", rc.run.workers, "run");
    rc.run.out_dir = get(r, "out_dir", rc.run.out_dir, "run");
  }
  if (j.contains("diagnostics")) {
    const auto& d = j.at("diagnostics");
    const std::string w = "diagnostics";
    check_keys(d, {"margin", "alpha_probes", "kappa_samples", "kappa_search", "eps", "eta2", "lipschitz_g", "zeta2"}, w);
    auto& s = rc.diagnostics;
    s.margin = get(d, "margin", s.margin, w);
    s.alpha_probes = get(d, "alpha_probes", s.alpha_probes, w);
    s.kappa_samples = get(d, "kappa_samples", s.kappa_samples, w);
    s.kappa_search = get(d, "kappa_search", s.kappa_search, w);
    s.eps = get(d, "eps", s.eps, w);
    s.eta2 = get(d, "eta2", s.eta2, w);
    s.lipschitz_g = get(d, "lipschitz_g", s.lipschitz_g, w);
    s.zeta2 = get(d, "zeta2", s.zeta2, w);
  }
  if (j.contains("score_check")) {
    const auto& s = j.at("score_check");
    check_keys(s, {"t", "points", "inner"}, "score_check");
    rc.score_check.t = get(s, "t", rc.score_check.t, "score_check");
    if (s.contains("points") && !(s.at("points").is_array() && s.at("points").empty()))
      rc.score_check.points = detail::get_rows(s.at("points"), "score_check.points", false);
    if (s.contains("inner")) rc.score_check.inner = detail::parse_rgo(s.at("inner"), rc.score_check.inner, "score_check.inner");
  }
  if (j.contains("compare")) {
    const auto& c = j.at("compare");
    const std::string w = "compare";
    check_keys(c, {"ula_steps", "ula_step_size", "dps_t_start", "dps_zeta", "projections"}, w);
    auto& s = rc.compare;
    s.ula_steps = get(c, "ula_steps", s.ula_steps, w);
    s.ula_step_size = get(c, "ula_step_size", s.ula_step_size, w);
    s.dps_t_start = get(c, "dps_t_start", s.dps_t_start, w);
    s.dps_zeta = get(c, "dps_zeta", s.dps_zeta, w);
    s.projections = get(c, "projections", s.projections, w);
  }
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    check_keys(a, {"t_grid"}, "ablation");
    if (a.contains("t_grid")) {
      const auto& g = a.at("t_grid");
      if (!g.is_array() || g.empty()) throw ConfigError("ablation.t_grid: expected a non-empty array");
      rc.ablation.t_grid.clear();
      for (const auto& v : g) {
        if (v.is_number())
          rc.ablation.t_grid.emplace_back(v.get<double>());
        else if (v.is_string() && v.get<std::string>() == "mid")
          rc.ablation.t_grid.emplace_back(std::nullopt);
        else
          throw ConfigError("ablation.t_grid: entries must be numbers or \"mid\"");
      }
    }
  }

  // Cross-field validation.
  const std::size_t k = rc.prior.weights.size();
  if (k == 0 || rc.prior.means.size() != k || rc.prior.sigmas.size() != k)
    throw ConfigError("problem.prior: weights, means and sigmas must have the same length");
  const std::size_t d = rc.prior.means.front().size();
  if (d == 0) throw ConfigError("problem.prior.means: empty mean vector");
  for (const auto& m : rc.prior.means)
    if (m.size() != d) throw ConfigError("problem.prior.means: components disagree on dimension");
  for (double s : rc.prior.sigmas)
    if (!(s > 0.0)) throw ConfigError("problem.prior.sigmas: must be positive");
  if (rc.likelihood.type != "none" && rc.likelihood.type != "linear_gaussian" &&
      rc.likelihood.type != "nonlinear_builtin")
    throw ConfigError("problem.likelihood.type: expected linear_gaussian | nonlinear_builtin | none");
  if (rc.likelihood.type != "none") {
    if (rc.likelihood.a.size() != rc.likelihood.y.size())
      throw ConfigError("problem.likelihood: A must have one row per observation");
    for (const auto& row : rc.likelihood.a)
      if (row.size() != d) throw ConfigError("problem.likelihood.A: each row must have d entries");
    if (!(rc.likelihood.noise_std > 0.0)) throw ConfigError("problem.likelihood.noise_std: must be positive");
    if (rc.likelihood.type == "nonlinear_builtin" && rc.likelihood.op != "tanh")
      throw ConfigError("problem.likelihood.operator: only 'tanh' is built in");
  }
  for (const auto& p : rc.score_check.points)
    if (p.size() != d) throw ConfigError("score_check.points: each point must have d entries");
  if (rc.run.n_samples < 1) throw ConfigError("run.n_samples: must be >= 1");
  if (rc.run.workers < 1) throw ConfigError("run.workers: must be >= 1");
  if (rc.T && !(*rc.T > rc.sampler.T0)) throw ConfigError("sampler.T: must exceed T0");
  try {
    ReverseConfig probe = rc.sampler;
    probe.T = rc.T.value_or(rc.sampler.T0 + 1.0);
    probe.validate();
    rc.score_check.inner.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return rc;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config parse error in '" + path + "': " + e.what());
  }
  return parse_config(j);
}

/// Full, explicit document; parse_config(to_json(c)) reproduces c.
inline nlohmann::json to_json(const RunConfig& rc) {
  using nlohmann::json;
  json prior = {{"type", "gmm"}, {"weights", rc.prior.weights}, {"means", rc.prior.means}, {"sigmas", rc.prior.sigmas}};
  json lik = {{"type", rc.likelihood.type}};
  if (rc.likelihood.type != "none") {
    lik["A"] = rc.likelihood.a;
    lik["y"] = rc.likelihood.y;
    lik["noise_std"] = rc.likelihood.noise_std;
    if (rc.likelihood.type == "nonlinear_builtin") lik["operator"] = rc.likelihood.op;
  }
  const ReverseConfig& c = rc.sampler;
  const WarmStartConfig& w = c.warm;
  json warm = {{"n_out", w.n_out},
               {"snr", w.snr_out},
               {"chain_reuse", w.chain_reuse},
               {"step_rule", w.step_rule == OuterStepRule::kInstantaneous ? "instantaneous" : "adapt_then_freeze"},
               {"adapt_fraction", w.adapt_fraction},
               {"step_min", w.step_clamp.min},
               {"step_max", w.step_clamp.max},
               {"inner", detail::dump_rgo(w.inner)}};
  json sampler = {{"T", detail::dump_auto_number(rc.T)},
                  {"T0", c.T0},
                  {"steps_per_unit_time", c.steps_per_unit_time},
                  {"truncation_radius", detail::dump_auto_number(c.truncation_radius)},
                  {"truncation_eps", c.truncation_eps},
                  {"final_step", detail::final_step_name(c.final_step)},
                  {"apply_scaling", c.apply_scaling},
                  {"final_denoise_sigma", c.final_denoise_sigma},
                  {"inner", detail::dump_rgo(c.inner)},
                  {"warm", warm}};
  json grid = json::array();
  for (const auto& t : rc.ablation.t_grid) grid.push_back(t ? json(*t) : json("mid"));
  const auto& dg = rc.diagnostics;
  return {{"problem", {{"prior", prior}, {"likelihood", lik}}},
          {"sampler", sampler},
          {"run",
           {{"n_samples", rc.run.n_samples},
            {"master_seed", rc.run.master_seed},
            {"workers", rc.run.workers},
            {"out_dir", rc.run.out_dir}}},
          {"diagnostics",
           {{"margin", dg.margin},
            {"alpha_probes", dg.alpha_probes},
            {"kappa_samples", dg.kappa_samples},
            {"kappa_search", dg.kappa_search},
            {"eps", dg.eps},
            {"eta2", dg.eta2},
            {"lipschitz_g", dg.lipschitz_g},
            {"zeta2", dg.zeta2}}},
          {"score_check",
           {{"t", rc.score_check.t}, {"points", rc.score_check.points}, {"inner", detail::dump_rgo(rc.score_check.inner)}}},
          {"compare",
           {{"ula_steps", rc.compare.ula_steps},
            {"ula_step_size", rc.compare.ula_step_size},
            {"dps_t_start", rc.compare.dps_t_start},
            {"dps_zeta", rc.compare.dps_zeta},
            {"projections", rc.compare.projections}}},
          {"ablation", {{"t_grid", grid}}}};
}

/// FNV-1a over the canonical serialisation, as 16 hex digits.
/// FNV-1a of the canonical document, ignoring settings that cannot change
/// results (output directory, worker count).
inline std::string config_hash(const RunConfig& rc) {
  nlohmann::json doc = to_json(rc);
  doc["run"].erase("out_dir");
  doc["run"].erase("workers");
  const std::string text = doc.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

namespace detail {
inline ProblemSpec build_problem(const RunConfig& rc) {
  const auto k = static_cast<Eigen::Index>(rc.prior.weights.size());
  const auto d = static_cast<Eigen::Index>(rc.prior.means.front().size());
  Vector w(k);
  Matrix m(d, k);
  Vector v(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto u = static_cast<std::size_t>(i);
    w[i] = rc.prior.weights[u];
    v[i] = rc.prior.sigmas[u] * rc.prior.sigmas[u];
    for (Eigen::Index j = 0; j < d; ++j) m(j, i) = rc.prior.means[u][static_cast<std::size_t>(j)];
  }
  auto prior = std::make_shared<const IsotropicGaussianMixture>(w, m, v);
  if (rc.likelihood.type == "none") return ProblemSpec(prior, std::make_shared<FlatLikelihood>(d));
  const auto n = static_cast<Eigen::Index>(rc.likelihood.y.size());
  Matrix a(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rc.likelihood.a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  const Vector y = Eigen::Map<const Vector>(rc.likelihood.y.data(), n);
  if (rc.likelihood.type == "linear_gaussian")
    return ProblemSpec(prior, std::make_shared<LinearGaussianLikelihood>(a, y, rc.likelihood.noise_std));
  return ProblemSpec(prior,
                     std::make_shared<NonlinearGaussianLikelihood>(tanh_forward_model(a), y, rc.likelihood.noise_std));
}
}  // namespace detail

/// Builds the problem described by the config; model errors become ConfigError.
inline ProblemSpec make_problem(const RunConfig& rc) {
  try {
    return detail::build_problem(rc);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("problem: ") + e.what());
  }
}

}  // namespace pdps
