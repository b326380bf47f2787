#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdps/config.hpp"
#include "pdps/constants.hpp"
#include "pdps/io.hpp"
#include "pdps/oracle.hpp"

namespace pdps {

namespace detail {
// Fixed streams for auxiliary randomness, so that diagnostics and oracle
// reference draws never depend on the sampler's own streams.
inline constexpr std::uint64_t kConstantsSeed = 0xc0ffee01ull;
inline constexpr std::uint64_t kOracleStream = 0xffff0001ull;
inline constexpr std::uint64_t kFloorStream = 0xffff0002ull;
inline constexpr std::uint64_t kSliceStream = 0xffff0003ull;

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}
}  // namespace detail

/// alpha, V^2 and C_SG of the configured prior, from a fixed seed.
inline ModelConstants problem_constants(const ProblemSpec& problem, const RunConfig& rc) {
  const auto* gmm = problem.gmm_prior();
  if (gmm == nullptr) throw std::invalid_argument("constants need a Gaussian-mixture prior");
  Rng rng(detail::kConstantsSeed);
  return gmm_constants(*gmm, rc.diagnostics.margin, rc.diagnostics.alpha_probes, rng);
}

/// Configured T, or the balanced mid-window time when T is "auto".
inline double resolve_terminal_time(const ProblemSpec& problem, const RunConfig& rc) {
  if (rc.T) return *rc.T;
  const ModelConstants c = problem_constants(problem, rc);
  return balanced_terminal_time(duality_window(c.alpha, c.v_sg2));
}

/// Sampler configuration with T filled in.
inline ReverseConfig resolved_sampler(const ProblemSpec& problem, const RunConfig& rc) {
  ReverseConfig c = rc.sampler;
  c.T = resolve_terminal_time(problem, rc);
  return c;
}

// ---------------------------------------------------------------- diagnose

struct DiagnosticsReport {
  ModelConstants constants;
  DualityWindow window;
  double T = 0.0;
  bool T_in_window = false;
  ConditionEstimate kappa;
  std::optional<double> lsi;
  std::string lsi_note;
  std::optional<Advice> advice;
  std::string advice_note;
  std::optional<double> warm_horizon;
  double truncation_radius = 0.0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json j = {{"alpha", constants.alpha},
                        {"v_sg2", constants.v_sg2},
                        {"c_sg", num(constants.c_sg)},
                        {"t_lower", window.lower},
                        {"t_upper", window.upper},
                        {"window_nonempty", window.nonempty},
                        {"T", T},
                        {"T_in_window", T_in_window},
                        {"kappa", num(kappa.kappa)},
                        {"kappa_std_error", num(kappa.std_error)},
                        {"lsi_bound", opt(lsi)},
                        {"lsi_note", lsi_note},
                        {"advisor_inner_horizon", advice ? nlohmann::json(advice->inner_horizon) : nlohmann::json(nullptr)},
                        {"advisor_particles", advice ? nlohmann::json(advice->particles) : nlohmann::json(nullptr)},
                        {"advisor_eps_prior", advice ? nlohmann::json(advice->eps_prior) : nlohmann::json(nullptr)},
                        {"advisor_note", advice_note},
                        {"advisor_warm_horizon", opt(warm_horizon)},
                        {"truncation_radius", num(truncation_radius)},
                        {"warnings", warnings}};
    return j;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "alpha              " << constants.alpha << "\n"
       << "V_SG^2             " << constants.v_sg2 << "\n"
       << "C_SG               " << constants.c_sg << "\n"
       << "t_lower            " << window.lower << "\n"
       << "t_upper            " << window.upper << "\n"
       << "window             " << (window.nonempty ? "nonempty" : "empty") << "\n"
       << "T                  " << T << (T_in_window ? " (inside window)" : " (outside window)") << "\n"
       << "kappa_y            " << kappa.kappa << " +- " << kappa.std_error << "\n"
       << "LSI bound at T     " << (lsi ? format_double(*lsi) : "n/a (" + lsi_note + ")") << "\n";
    if (advice) {
      os << "advisor S          " << advice->inner_horizon << "\n"
         << "advisor m          " << advice->particles << "\n"
         << "advisor eps_prior  " << advice->eps_prior << "\n";
    } else {
      os << "advisor            n/a (" << advice_note << ")\n";
    }
    if (warm_horizon) os << "advisor U          " << *warm_horizon << "\n";
    os << "truncation R       " << truncation_radius << "\n";
    return os.str();
  }
};

/// Outer horizon suggested for the warm start with unit constants:
/// exp(2 ratio log(kappa^2 C^2)) log(zeta^2 / eps), ratio as in lsi_bound.
inline double warm_start_horizon(const OUSchedule& schedule, double T, double kappa, double c_sg, double v_sg2,
                                 double zeta2, double eps) {
  if (!(T > underline_t(v_sg2))) throw std::domain_error("warm_start_horizon: T must exceed underline_t(v_sg2)");
  const double m2 = std::pow(schedule.mu(T), 2);
  const double s2 = schedule.sigma2(T);
  const double ratio = (s2 + 2.0 * m2 * v_sg2) / (s2 - 2.0 * m2 * v_sg2);
  return std::exp(2.0 * ratio * std::log(kappa * kappa * c_sg * c_sg)) * std::log(zeta2 / eps);
}

inline DiagnosticsReport run_diagnostics(const ProblemSpec& problem, const RunConfig& rc) {
  const OUSchedule schedule;
  DiagnosticsReport r;
  r.constants = problem_constants(problem, rc);
  r.window = duality_window(r.constants.alpha, r.constants.v_sg2);
  r.T = rc.T ? *rc.T : balanced_terminal_time(r.window);
  r.T_in_window = r.window.contains(r.T);
  Rng rng(detail::kConstantsSeed + 1);
  r.kappa = condition_number(problem, rc.diagnostics.kappa_samples, rc.diagnostics.kappa_search, rng);
  if (!r.window.nonempty)
    r.warnings.push_back("duality window is empty (2 alpha V^2 >= 1); T is not covered by the guarantees");
  else if (!r.T_in_window)
    r.warnings.push_back("configured T lies outside the duality window");
  if (r.kappa.underflow) r.warnings.push_back("kappa_y underflowed; the likelihood barely overlaps the prior");

  if (r.T > underline_t(r.constants.v_sg2) && std::isfinite(r.constants.c_sg) && std::isfinite(r.kappa.kappa)) {
    r.lsi = lsi_bound(schedule, r.T, r.kappa.kappa, r.constants.c_sg, r.constants.v_sg2);
    r.warm_horizon = warm_start_horizon(schedule, r.T, r.kappa.kappa, r.constants.c_sg, r.constants.v_sg2,
                                        rc.diagnostics.zeta2, rc.diagnostics.eps);
  } else {
    r.lsi_note = "T must exceed t_lower";
  }
  try {
    r.advice = advisor(schedule, r.T, rc.sampler.T0, r.constants.alpha, r.kappa.kappa, rc.diagnostics.eta2,
                       rc.diagnostics.eps, rc.diagnostics.lipschitz_g);
  } catch (const std::domain_error& e) {
    r.advice_note = e.what();
  }
  ReverseConfig c = rc.sampler;
  c.T = r.T;
  r.truncation_radius = *resolve_truncation(problem, schedule, c).truncation_radius;
  return r;
}

// ------------------------------------------------------------------ sample

struct SampleOutcome {
  SampleSet set;
  std::optional<double> w2;  // against independent oracle draws, when available
  std::optional<Vector> mode_weights;
  std::string config_hash;
};

/// n independent draws from the exact posterior under the reference stream.
inline Samples oracle_reference(const FullGaussianMixture& post, std::size_t n, std::uint64_t master_seed,
                                std::uint64_t stream = detail::kOracleStream) {
  Rng rng = Rng::stream(master_seed, stream);
  return sample_exact(post, n, rng);
}

inline double w2_to(const Samples& a, const Samples& b, std::uint64_t master_seed, int projections) {
  Rng rng = Rng::stream(master_seed, detail::kSliceStream);
  return w2_distance(a, b, rng, projections);
}

inline bool oracle_compatible(const ProblemSpec& p) {
  return p.gmm_prior() != nullptr && (p.linear_likelihood() != nullptr || p.is_flat()) && p.dim() <= 16;
}

inline SampleOutcome run_sample(const ProblemSpec& problem, const RunConfig& rc) {
  const OUSchedule schedule;
  SampleOutcome out;
  out.config_hash = config_hash(rc);
  out.set = sample_batch(problem, schedule, resolved_sampler(problem, rc), rc.run.n_samples, rc.run.master_seed,
                         rc.run.workers);
  if (oracle_compatible(problem)) {
    const FullGaussianMixture post = oracle_posterior(problem);
    const Samples ref = oracle_reference(post, rc.run.n_samples, rc.run.master_seed);
    out.w2 = w2_to(out.set.samples, ref, rc.run.master_seed, rc.compare.projections);
    out.mode_weights = mode_weights(out.set.samples, post);
  }
  return out;
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline nlohmann::json sample_metrics(const SampleOutcome& o) {
  nlohmann::json j = {{"command", "sample"},
                      {"n_samples", o.set.samples.rows()},
                      {"dim", o.set.samples.cols()},
                      {"seed", o.set.seed},
                      {"runtime_s", o.set.wall_time_s},
                      {"config_hash", o.config_hash},
                      {"T", o.set.config.T},
                      {"T0", o.set.config.T0},
                      {"reverse_steps", o.set.config.reverse_steps()},
                      {"truncation_radius", std::isfinite(*o.set.config.truncation_radius)
                                                ? nlohmann::json(*o.set.config.truncation_radius)
                                                : nlohmann::json(nullptr)}};
  j["w2"] = o.w2 ? nlohmann::json(*o.w2) : nlohmann::json(nullptr);
  j["mode_weights"] = o.mode_weights ? nlohmann::json(to_std(*o.mode_weights)) : nlohmann::json(nullptr);
  return j;
}

// ------------------------------------------------------------- score-check

struct ScoreCheckRow {
  Vector x;
  Vector exact;
  Vector estimated;
  double abs_err = 0.0;
  double rel_err = 0.0;  // NaN where the exact score is zero
};

struct ScoreCheckResult {
  double t = 0.0;
  std::vector<ScoreCheckRow> rows;
  double mean_rel_err = 0.0;  // sum |est - exact| / sum |exact| over all points
  double max_abs_err = 0.0;
  std::size_t particles = 0;
};

/// Monte Carlo posterior score against the exact time-t score. Each point
/// uses its own stream and starts its chains from N(0, I).
inline ScoreCheckResult run_score_check(const ProblemSpec& problem, double t, const std::vector<Vector>& points,
                                        const RgoConfig& inner, std::uint64_t master_seed) {
  if (!oracle_compatible(problem))
    throw std::invalid_argument("score-check needs a Gaussian-mixture prior with a linear-Gaussian or flat likelihood");
  if (points.empty()) throw std::invalid_argument("score-check needs at least one point");
  const OUSchedule schedule;
  const FullGaussianMixture qt = exact_timet_posterior(oracle_posterior(problem), schedule, t);
  ScoreCheckResult r;
  r.t = t;
  r.particles = static_cast<std::size_t>(inner.particle_count());
  double err_sum = 0.0;
  double ref_sum = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    Rng rng = Rng::stream(master_seed, i);
    ScoreCheckRow row;
    row.x = points[i];
    row.exact = exact_score(qt, row.x);
    row.estimated = estimate_posterior_score(problem, schedule, t, row.x, inner, nullptr, rng);
    row.abs_err = (row.estimated - row.exact).norm();
    const double ref = row.exact.norm();
    row.rel_err = ref > 0.0 ? row.abs_err / ref : std::numeric_limits<double>::quiet_NaN();
    err_sum += row.abs_err;
    ref_sum += ref;
    r.max_abs_err = std::max(r.max_abs_err, row.abs_err);
    r.rows.push_back(std::move(row));
  }
  r.mean_rel_err = ref_sum > 0.0 ? err_sum / ref_sum : std::numeric_limits<double>::quiet_NaN();
  return r;
}

inline std::string score_check_csv(const ScoreCheckResult& r) {
  const auto d = r.rows.front().x.size();
  std::vector<std::string> cols;
  for (const char* p : {"x", "exact", "estimated"})
    for (Eigen::Index j = 0; j < d; ++j) cols.push_back(p + std::to_string(j));
  cols.push_back("abs_err");
  cols.push_back("rel_err");
  std::string out = csv_header(cols);
  for (const auto& row : r.rows) {
    for (const Vector* v : {&row.x, &row.exact, &row.estimated})
      for (Eigen::Index j = 0; j < d; ++j) out += format_double((*v)[j]) + ",";
    out += format_double(row.abs_err) + "," + format_double(row.rel_err) + "\n";
  }
  return out;
}

// ----------------------------------------------------------------- compare

struct MethodResult {
  std::string name;
  bool ok = false;
  std::string error;
  double w2 = std::numeric_limits<double>::quiet_NaN();
  Vector mode_weights;
  double runtime_s = 0.0;
};

struct CompareResult {
  std::vector<MethodResult> methods;  // pdps, ula, dps, oracle
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t n = 0;

  const MethodResult& get(const std::string& name) const {
    for (const auto& m : methods)
      if (m.name == name) return m;
    throw std::out_of_range("no method " + name);
  }
};

/// PDPS, ULA and DPS against a fixed oracle reference set. The "oracle" entry
/// is a second, independent exact draw set: its W2 is the sampling-noise floor.
inline CompareResult run_compare(const ProblemSpec& problem, const RunConfig& rc) {
  if (!oracle_compatible(problem))
    throw std::invalid_argument("compare needs a Gaussian-mixture prior with a linear-Gaussian or flat likelihood");
  const OUSchedule schedule;
  const FullGaussianMixture post = oracle_posterior(problem);
  const std::size_t n = rc.run.n_samples;
  const std::uint64_t seed = rc.run.master_seed;
  const Samples ref = oracle_reference(post, n, seed);
  const ReverseConfig sampler = resolve_truncation(problem, schedule, resolved_sampler(problem, rc));

  CompareResult out;
  out.config_hash = config_hash(rc);
  out.seed = seed;
  out.n = n;
  auto run = [&](const std::string& name, auto&& draw) {
    MethodResult m;
    m.name = name;
    const auto start = std::chrono::steady_clock::now();
    try {
      const Samples s = draw();
      m.runtime_s = detail::seconds_since(start);
      m.w2 = w2_to(s, ref, seed, rc.compare.projections);
      m.mode_weights = mode_weights(s, post);
      m.ok = true;
    } catch (const std::exception& e) {
      m.runtime_s = detail::seconds_since(start);
      m.error = e.what();
    }
    out.methods.push_back(std::move(m));
  };
  run("pdps", [&] { return sample_batch(problem, schedule, sampler, n, seed, rc.run.workers).samples; });
  run("ula", [&] {
    return ula_baseline(problem, rc.compare.ula_steps, rc.compare.ula_step_size, n, seed, rc.run.workers);
  });
  run("dps", [&] {
    return parallel_draws(n, problem.dim(), seed, rc.run.workers, [&](std::size_t, Rng& rng) {
      return dps_baseline(problem, schedule, sampler, rc.compare.dps_t_start, rc.compare.dps_zeta, rng);
    });
  });
  run("oracle", [&] { return oracle_reference(post, n, seed, detail::kFloorStream); });
  return out;
}

inline nlohmann::json compare_metrics(const CompareResult& r) {
  nlohmann::json j = {{"command", "compare"}, {"n_samples", r.n}, {"seed", r.seed}, {"config_hash", r.config_hash}};
  for (const auto& m : r.methods) {
    j[m.name + "_status"] = m.ok ? "ok" : "error: " + m.error;
    j[m.name + "_w2"] = m.ok && std::isfinite(m.w2) ? nlohmann::json(m.w2) : nlohmann::json(nullptr);
    j[m.name + "_mode_weights"] = m.ok ? nlohmann::json(to_std(m.mode_weights)) : nlohmann::json(nullptr);
    j[m.name + "_runtime_s"] = m.runtime_s;
  }
  return j;
}

// ---------------------------------------------------------------- ablate-t

struct AblationRow {
  double T = 0.0;
  double T0 = 0.0;
  double w2 = std::numeric_limits<double>::quiet_NaN();
  double runtime_s = 0.0;
  std::string error;
};

/// One full sampling run per grid time, all with the same master seed and
/// oracle reference. When a grid time does not exceed T0, that run stops
/// early at T / 2 instead.
inline std::vector<AblationRow> run_ablation(const ProblemSpec& problem, const RunConfig& rc) {
  if (!oracle_compatible(problem))
    throw std::invalid_argument("ablate-t needs a Gaussian-mixture prior with a linear-Gaussian or flat likelihood");
  const OUSchedule schedule;
  const FullGaussianMixture post = oracle_posterior(problem);
  const Samples ref = oracle_reference(post, rc.run.n_samples, rc.run.master_seed);
  std::optional<double> mid;
  std::vector<AblationRow> rows;
  for (const auto& entry : rc.ablation.t_grid) {
    AblationRow row;
    if (entry) {
      row.T = *entry;
    } else {
      if (!mid) {
        const ModelConstants c = problem_constants(problem, rc);
        mid = balanced_terminal_time(duality_window(c.alpha, c.v_sg2));
      }
      row.T = *mid;
    }
    ReverseConfig c = rc.sampler;
    c.T = row.T;
    c.T0 = std::min(rc.sampler.T0, 0.5 * row.T);
    row.T0 = c.T0;
    const auto start = std::chrono::steady_clock::now();
    try {
      const SampleSet s = sample_batch(problem, schedule, c, rc.run.n_samples, rc.run.master_seed, rc.run.workers);
      row.w2 = w2_to(s.samples, ref, rc.run.master_seed, rc.compare.projections);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    row.runtime_s = detail::seconds_since(start);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = csv_header({"T", "w2", "runtime_s"});
  for (const auto& r : rows) out += format_double(r.T) + "," + format_double(r.w2) + "," + format_double(r.runtime_s) + "\n";
  return out;
}

}  // namespace pdps
