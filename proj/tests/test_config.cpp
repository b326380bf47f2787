#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "pdps/commands.hpp"
#include "pdps/io.hpp"

using namespace pdps;
using nlohmann::json;

namespace {

json bimodal_doc() {
  return json::parse(R"({
    "problem": {
      "prior": {"type": "gmm", "weights": [0.5, 0.5], "means": [[-2.0], [2.0]], "sigmas": [0.5, 0.5]},
      "likelihood": {"type": "linear_gaussian", "A": [[1.0]], "y": [1.0], "noise_std": 1.0}
    }
  })");
}

}  // namespace

TEST(Config, DefaultsFollowRecipe) {
  const RunConfig rc = parse_config(bimodal_doc());
  EXPECT_FALSE(rc.T.has_value());
  EXPECT_DOUBLE_EQ(rc.sampler.T0, 0.05);
  EXPECT_EQ(rc.sampler.steps_per_unit_time, 1200);
  EXPECT_EQ(rc.sampler.inner.n_in, 20);
  EXPECT_EQ(rc.sampler.inner.m_chains, 20);
  EXPECT_DOUBLE_EQ(rc.sampler.inner.snr_in, 0.075);
  EXPECT_DOUBLE_EQ(rc.sampler.inner.burn_in_fraction, 0.5);
  EXPECT_EQ(rc.sampler.warm.n_out, 400);
  EXPECT_EQ(rc.sampler.warm.inner.n_in, 50);
  EXPECT_DOUBLE_EQ(rc.sampler.warm.snr_out, 0.16);
  EXPECT_TRUE(rc.sampler.warm.chain_reuse);
}

TEST(Config, RoundTrip) {
  json doc = bimodal_doc();
  doc["sampler"] = {{"T", 0.3}, {"T0", 0.02}, {"truncation_radius", "none"}, {"final_step", "reverse_drift"},
                    {"inner", {{"n_in", 30}, {"strict", true}}}, {"warm", {{"n_out", 100}, {"step_rule", "instantaneous"}}}};
  doc["run"] = {{"n_samples", 17}, {"master_seed", 123456789012345ull}, {"workers", 2}, {"out_dir", "x/y"}};
  doc["ablation"] = {{"t_grid", {0.05, "mid", 0.4}}};
  const RunConfig a = parse_config(doc);
  const json once = to_json(a);
  const RunConfig b = parse_config(once);
  EXPECT_EQ(to_json(b), once);
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(b.run.master_seed, 123456789012345ull);
  EXPECT_TRUE(std::isinf(*b.sampler.truncation_radius));
  EXPECT_EQ(b.sampler.final_step, FinalStep::kReverseDrift);
  EXPECT_EQ(b.sampler.warm.step_rule, OuterStepRule::kInstantaneous);
  ASSERT_EQ(b.ablation.t_grid.size(), 3u);
  EXPECT_FALSE(b.ablation.t_grid[1].has_value());
}

TEST(Config, HashChangesWithContent) {
  json doc = bimodal_doc();
  const std::string h0 = config_hash(parse_config(doc));
  doc["run"] = {{"out_dir", "elsewhere"}, {"workers", 4}};
  EXPECT_EQ(config_hash(parse_config(doc)), h0);
  doc["run"] = {{"master_seed", 5}};
  EXPECT_NE(config_hash(parse_config(doc)), h0);
}

TEST(Config, RejectsUnknownKeys) {
  json doc = bimodal_doc();
  doc["sampler"] = {{"TO", 0.05}};
  EXPECT_THROW(parse_config(doc), ConfigError);
  doc = bimodal_doc();
  doc["extra"] = 1;
  EXPECT_THROW(parse_config(doc), ConfigError);
}

TEST(Config, RejectsInconsistentPrior) {
  json doc = bimodal_doc();
  doc["problem"]["prior"]["sigmas"] = {0.5};
  EXPECT_THROW(parse_config(doc), ConfigError);
  doc = bimodal_doc();
  doc["problem"]["prior"]["weights"] = {0.5, -0.5};
  EXPECT_THROW(make_problem(parse_config(doc)), ConfigError);
}

TEST(Config, RejectsBadValues) {
  json doc = bimodal_doc();
  doc["sampler"] = {{"final_step", "sideways"}};
  EXPECT_THROW(parse_config(doc), ConfigError);
  doc = bimodal_doc();
  doc["sampler"] = {{"T0", "soon"}};
  EXPECT_THROW(parse_config(doc), ConfigError);
  EXPECT_THROW(parse_config(json::parse("[1, 2]")), ConfigError);
}

TEST(Config, LoadMissingAndMalformed) {
  EXPECT_THROW(load_config("/nonexistent/pdps.json"), ConfigError);
  const auto path = std::filesystem::temp_directory_path() / "pdps_malformed.json";
  std::ofstream(path) << "{ \"problem\": ";
  EXPECT_THROW(load_config(path.string()), ConfigError);
}

TEST(Config, BuildsExpectedProblem) {
  const ProblemSpec p = make_problem(parse_config(bimodal_doc()));
  ASSERT_NE(p.gmm_prior(), nullptr);
  ASSERT_NE(p.linear_likelihood(), nullptr);
  EXPECT_NEAR(p.gmm_prior()->variances()[0], 0.25, 1e-15);
}

TEST(Io, CsvRoundTripIsExact) {
  Rng rng(8);
  Samples s(50, 3);
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = 0; j < s.cols(); ++j) s(i, j) = rng.normal() * std::pow(10.0, static_cast<double>(i % 9) - 4.0);
  const std::string text = samples_to_csv(s);
  EXPECT_EQ(text.substr(0, text.find('\n')), "x0,x1,x2");
  EXPECT_EQ(samples_from_csv(text), s);
}

TEST(Io, FormatsNonFinite) {
  EXPECT_EQ(format_double(std::nan("")), "nan");
  EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_EQ(format_double(0.1), "0.1");
}

TEST(Diagnostics, GaussianAndBimodal) {
  RunConfig rc = parse_config(bimodal_doc());
  rc.diagnostics.kappa_samples = 2000;
  const auto bi = run_diagnostics(make_problem(rc), rc);
  EXPECT_NEAR(bi.constants.alpha, 60.0, 0.05);
  EXPECT_NEAR(bi.window.lower, underline_t(0.55), 1e-12);
  EXPECT_NEAR(bi.window.upper, bar_t(bi.constants.alpha), 1e-12);
  EXPECT_FALSE(bi.window.nonempty);
  EXPECT_FALSE(bi.warnings.empty());

  json doc = bimodal_doc();
  doc["problem"]["prior"] = {{"weights", {1.0}}, {"means", {{0.0}}}, {"sigmas", {1.0}}};
  rc = parse_config(doc);
  rc.diagnostics.kappa_samples = 2000;
  EXPECT_NEAR(run_diagnostics(make_problem(rc), rc).constants.alpha, 1.0, 1e-9);
}
