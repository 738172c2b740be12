#include <doctest.h>

#include "../support/fixtures.hpp"
#include "medadhere/health_mcmc.hpp"
#include "medadhere/kalman.hpp"
#include "medadhere/model.hpp"
#include "medadhere/simulate.hpp"

#include <cmath>
#include <limits>
#include <numbers>

using namespace medadhere;
using namespace fixtures;

namespace {

std::vector<PatientRecord> completed_cohort(int n, std::uint64_t seed) {
  SimulationConfig c = SimulationConfig::defaults();
  c.n_patients = n;
  c.mean_days = 40;
  c.mean_visits = 4;
  c.missing_adherence_rate = 0.0;
  c.seed = seed;
  return simulate_cohort(c).patients;
}

}  // namespace

TEST_CASE("log prior: support edges and finite defaults") {
  const double ninf = -std::numeric_limits<double>::infinity();
  auto h = default_health_params();
  CHECK(std::isfinite(log_prior_health(h)));
  h.rho[0] = 1.0;
  CHECK(log_prior_health(h) == ninf);
  h = default_health_params();
  h.sigma_nu[1] = 10.5;
  CHECK(log_prior_health(h) == ninf);
  h = default_health_params();
  h.sigma_eps[0] = 31.0;
  CHECK(log_prior_health(h) == ninf);
  h = default_health_params();
  h.rho_eps = -1.0;
  CHECK(log_prior_health(h) == ninf);
}

TEST_CASE("log posterior equals prior plus Kalman log-likelihoods") {
  const auto cohort = completed_cohort(5, 1);
  const auto h = default_health_params();
  double expect = log_prior_health(h);
  for (const auto& p : cohort) {
    AdherencePath c;
    for (auto d : p.adherence) c.push_back(static_cast<std::int8_t>(d));
    expect += kalman_loglik(p, c, h);
  }
  CHECK(log_posterior_health(h, cohort) == doctest::Approx(expect).epsilon(1e-12));
  auto missing = cohort;
  missing[0].adherence[0] = AdherenceDay::Missing;
  CHECK_THROWS_AS(log_posterior_health(h, missing), InvalidInput);
}

TEST_CASE("impute_missing_adherence fills only missing days") {
  auto p = patient("A", 6, intercept_only(), {obs(2, {1.0})});
  p.adherence = {AdherenceDay::Taken, AdherenceDay::Missing, AdherenceDay::NotTaken,
                 AdherenceDay::Missing, AdherenceDay::Missing, AdherenceDay::Taken};
  AdherencePosterior post;
  post.patient_ids = {"A"};
  AdherenceDraw d;
  d.params = adherence({40.0}, 1.0);
  d.deltas = Eigen::VectorXd::Zero(1);
  post.draws.push_back(d);
  Rng rng(1);
  const std::vector<PatientRecord> cohort{p};
  const auto out = impute_missing_adherence(cohort, post, 3, rng);
  REQUIRE(out.size() == 3);
  for (const auto& copy : out) {
    CHECK(copy[0].count(AdherenceDay::Missing) == 0);
    CHECK(copy[0].adherence[2] == AdherenceDay::NotTaken);
    CHECK(copy[0].count(AdherenceDay::Taken) == 5);
  }
  CHECK_THROWS_AS(impute_missing_adherence(cohort, post, 0, rng), InvalidInput);
  post.patient_ids = {"B"};
  CHECK_THROWS_AS(impute_missing_adherence(cohort, post, 1, rng), InvalidInput);
}

TEST_CASE("parameter names and flattening line up") {
  const auto h = default_health_params();
  const auto names = health_parameter_names(h, {"intercept", "female", "black", "obese", "diabetes"});
  CHECK(names.size() == static_cast<std::size_t>(flatten_health(h).size()));
  CHECK(names.front() == "beta[1,intercept]");
  CHECK(names.back() == "sigma_zero[2]");
}

TEST_CASE("fit_health: shapes, determinism and rough recovery") {
  const std::vector<std::vector<PatientRecord>> completed{completed_cohort(60, 2), completed_cohort(60, 2)};
  McmcConfig c;
  c.n_chains = 2;
  c.n_iterations = 1500;
  c.seed = 4;
  const auto a = fit_health(completed, c);
  CHECK(a.draws.size() == 2u * 2u * c.retained_per_chain());
  CHECK(a.draws.front().imputation == 0);
  CHECK(a.draws.back().imputation == 1);
  CHECK(a.diagnostics.size() == static_cast<std::size_t>(flatten_health(a.draws[0].params).size()));
  c.threads = 2;
  const auto b = fit_health(completed, c);
  for (std::size_t i = 0; i < a.draws.size(); i += 97)
    CHECK(flatten_health(a.draws[i].params) == flatten_health(b.draws[i].params));
  const auto truth = default_health_params();
  double b0 = 0.0;
  for (const auto& d : a.draws) b0 += d.params.beta(0, 0);
  b0 /= a.draws.size();
  CHECK(std::abs(b0 - truth.beta(0, 0)) < 8.0);
}

TEST_CASE("collapsed (beta, phi) conditional agrees with the Kalman likelihood") {
  auto cohort = completed_cohort(6, 9);
  cohort[1].observations[0].values[1].reset();
  auto h = default_health_params();
  h.rho << 0.6, -0.3;
  h.rho_eps = 0.2;
  const auto cond = health_linear_conditional(h, cohort);
  REQUIRE(std::isfinite(cond.log_marginal));
  const int q = static_cast<int>(cond.mean.size());
  CHECK(q == 12);
  const Eigen::MatrixXd prec = cond.precision_factor * cond.precision_factor.transpose();
  Rng rng(3);
  for (int rep = 0; rep < 4; ++rep) {
    Eigen::VectorXd theta = cond.mean;
    for (int i = 0; i < q; ++i) theta[i] += rng.normal(0.0, 2.0);
    HealthParams at = h;
    at.beta = Eigen::Map<const Eigen::MatrixXd>(theta.data(), 2, 5);
    at.phi = theta.tail(2);
    double loglik = 0.0;
    for (const auto& p : cohort) {
      AdherencePath c;
      for (auto d : p.adherence) c.push_back(static_cast<std::int8_t>(d));
      loglik += kalman_loglik(p, c, at);
    }
    double log_prior = 0.0;
    for (int j = 0; j < 2; ++j) {
      for (int c = 0; c < 5; ++c)
        log_prior += log_normal_pdf(at.beta(j, c), c == 0 ? (j == 0 ? 120.0 : 80.0) : 0.0, 20.0);
      log_prior += log_normal_pdf(at.phi[j], 0.0, 5.0);
    }
    const Eigen::VectorXd r = theta - cond.mean;
    double logdet = 0.0;
    for (int i = 0; i < q; ++i) logdet += 2.0 * std::log(cond.precision_factor(i, i));
    const double log_cond = -0.5 * q * std::log(2.0 * std::numbers::pi) + 0.5 * logdet - 0.5 * r.dot(prec * r);
    CHECK(cond.log_marginal == doctest::Approx(loglik + log_prior - log_cond).epsilon(1e-9));
  }
}

TEST_CASE("fit_health: no latent signal puts the intercepts at the sample means") {
  SimulationConfig c = SimulationConfig::defaults();
  c.n_patients = 150;
  c.mean_days = 30;
  c.mean_visits = 3;
  c.missing_adherence_rate = 0.0;
  c.true_health.beta.rightCols(4).setZero();
  c.true_health.phi.setZero();
  c.true_health.sigma_nu.setConstant(1e-3);
  c.true_health.sigma_zero.setConstant(1e-3);
  c.seed = 12;
  const auto cohort = simulate_cohort(c).patients;
  double mean[2] = {0, 0};
  int n = 0;
  for (const auto& p : cohort)
    for (const auto& o : p.observations) {
      mean[0] += *o.values[0];
      mean[1] += *o.values[1];
      ++n;
    }
  McmcConfig mc;
  mc.n_chains = 2;
  mc.n_iterations = 1500;
  const std::vector<std::vector<PatientRecord>> completed{cohort};
  const auto post = fit_health(completed, mc);
  for (int j = 0; j < 2; ++j) {
    // The other coefficients are free, so compare the fitted mean response.
    double m = 0.0, sq = 0.0;
    for (const auto& d : post.draws) {
      double v = 0.0;
      for (const auto& p : cohort) v += (d.params.beta.row(j) * p.covariates.values)(0) * p.observations.size();
      v /= n;
      m += v;
      sq += v * v;
    }
    m /= post.draws.size();
    const double sd = std::sqrt(sq / post.draws.size() - m * m);
    CHECK(std::abs(m - mean[j] / n) < 2 * sd + 0.05);
  }
}
