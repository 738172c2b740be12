#include "medadhere/simulate.hpp"

#include "medadhere/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace medadhere {

AdherenceParams default_adherence_params() {
  // Intercept and random-effect SD from the reported posterior means; the
  // feature coefficients are the reported male/white effects with the sign
  // flipped to match female/black indicators.
  AdherenceParams p;
  p.lambda.resize(5);
  p.lambda << 2.11, -0.33, -0.56, 0.01, -0.32;
  p.sigma_delta = 1.74;
  return p;
}

HealthParams default_health_params() {
  HealthParams h;
  h.beta.resize(2, 5);
  h.beta << 134.0, -2.0, 4.0, 3.0, 2.0,
             80.0, -1.0, 2.0, 2.0, -1.0;
  h.rho = Eigen::Vector2d(0.85, 0.85);
  h.phi = Eigen::Vector2d(-1.5, -0.9);
  h.sigma_eps = Eigen::Vector2d(8.0, 5.0);
  h.rho_eps = 0.5;
  h.sigma_nu = Eigen::Vector2d(2.0, 1.2);
  h.sigma_zero = Eigen::Vector2d(6.0, 4.0);
  return h;
}

SimulationConfig SimulationConfig::defaults() {
  SimulationConfig c;
  c.true_adherence = default_adherence_params();
  c.true_health = default_health_params();
  return c;
}

void SimulationConfig::validate() const {
  if (n_patients < 0) throw InvalidInput("n_patients must be >= 0");
  if (!(mean_days >= 1.0)) throw InvalidInput("mean_days must be >= 1");
  if (horizon_dispersion < 1) throw InvalidInput("horizon_dispersion must be >= 1");
  if (min_days < 1) throw InvalidInput("min_days must be >= 1");
  if (!(mean_visits >= 0.0)) throw InvalidInput("mean_visits must be >= 0");
  if (feature_names.size() != covariate_prevalences.size())
    throw InvalidInput("feature_names and covariate_prevalences differ in length");
  for (double p : covariate_prevalences)
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("prevalences must lie in [0,1]");
  for (double p : {missing_adherence_rate, missing_measure_rate})
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("missing rates must lie in [0,1]");
  const int p = static_cast<int>(feature_names.size()) + 1;
  true_adherence.validate(p);
  true_health.validate();
  if (true_health.n_covariates() != p)
    throw InvalidInput("true beta must have one column per covariate (incl. intercept)");
}

CovariateVector sample_covariates(const SimulationConfig& config, Rng& rng) {
  CovariateVector x;
  const auto n = config.covariate_prevalences.size();
  x.values.resize(static_cast<Eigen::Index>(n + 1));
  x.names.reserve(n + 1);
  x.values[0] = 1.0;
  x.names.emplace_back("intercept");
  for (std::size_t j = 0; j < n; ++j) {
    x.values[static_cast<Eigen::Index>(j + 1)] =
        rng.bernoulli(config.covariate_prevalences[j]) ? 1.0 : 0.0;
    x.names.push_back(config.feature_names[j]);
  }
  return x;
}

std::pair<PatientRecord, PatientTruth> simulate_patient(
    const std::string& id, const CovariateVector& x, int horizon, const AdherenceParams& theta_a,
    const HealthParams& theta_h, const std::vector<int>& visit_days, Rng& rng,
    double missing_adherence_rate, double missing_measure_rate) {
  if (horizon < 1) throw InvalidInput("horizon must be >= 1");
  x.validate();
  theta_a.validate(x.size());
  theta_h.validate();
  if (theta_h.n_covariates() != x.size()) throw InvalidInput("beta/covariate dimension mismatch");
  for (std::size_t i = 0; i < visit_days.size(); ++i) {
    if (visit_days[i] < 1 || visit_days[i] > horizon)
      throw InvalidInput("visit day outside patient horizon");
    if (i > 0 && visit_days[i] <= visit_days[i - 1])
      throw InvalidInput("visit days must be sorted and distinct");
  }
  const int k = theta_h.n_measures();

  PatientTruth truth;
  truth.id = id;
  truth.delta = rng.normal(0.0, theta_a.sigma_delta);
  const double prob = adherence_prob(truth.delta, theta_a, x);
  truth.adherence.resize(horizon);
  for (auto& c : truth.adherence) c = rng.bernoulli(prob) ? 1 : -1;

  truth.alpha.resize(k, horizon);
  for (int j = 0; j < k; ++j) truth.alpha(j, 0) = rng.normal(0.0, theta_h.sigma_zero[j]);
  for (int t = 1; t < horizon; ++t)
    for (int j = 0; j < k; ++j)
      truth.alpha(j, t) = theta_h.rho[j] * truth.alpha(j, t - 1) +
                          theta_h.phi[j] * truth.adherence[t] +
                          rng.normal(0.0, theta_h.sigma_nu[j]);

  const Eigen::VectorXd mean = theta_h.beta * x.values;
  const Eigen::MatrixXd chol = theta_h.eps_covariance().llt().matrixL();
  PatientRecord rec;
  rec.id = id;
  rec.horizon = horizon;
  rec.covariates = x;
  for (int day : visit_days) {
    Eigen::VectorXd z(k);
    for (int j = 0; j < k; ++j) z[j] = rng.normal();
    const Eigen::VectorXd y = mean + truth.alpha.col(day - 1) + chol * z;
    HealthObservation obs;
    obs.day = day;
    obs.values.resize(k);
    for (int j = 0; j < k; ++j) obs.values[j] = y[j];
    if (missing_measure_rate > 0.0 && k > 1) {
      const int keep = rng.uniform_int(0, k - 1);  // at least one component survives
      for (int j = 0; j < k; ++j)
        if (j != keep && rng.bernoulli(missing_measure_rate)) obs.values[j].reset();
    }
    rec.observations.push_back(std::move(obs));
  }

  rec.adherence.resize(horizon);
  for (int t = 0; t < horizon; ++t) {
    const bool masked = missing_adherence_rate > 0.0 && rng.bernoulli(missing_adherence_rate);
    rec.adherence[t] = masked ? AdherenceDay::Missing
                              : (truth.adherence[t] > 0 ? AdherenceDay::Taken
                                                        : AdherenceDay::NotTaken);
  }
  return {std::move(rec), std::move(truth)};
}

int sample_horizon(const SimulationConfig& config, Rng& rng) {
  const int floor_days = std::min(config.min_days, static_cast<int>(std::floor(config.mean_days)));
  const double extra_mean = config.mean_days - floor_days;
  if (extra_mean <= 0.0) return std::max(1, floor_days);
  const double r = config.horizon_dispersion;
  std::negative_binomial_distribution<int> nb(config.horizon_dispersion, r / (r + extra_mean));
  return std::max(1, floor_days + nb(rng.engine()));
}

std::vector<int> sample_visit_days(const SimulationConfig& config, int horizon, Rng& rng) {
  int count = 0;
  if (config.mean_visits >= 1.0) {
    count = 1;
    if (config.mean_visits > 1.0)
      count += std::poisson_distribution<int>(config.mean_visits - 1.0)(rng.engine());
  } else if (config.mean_visits > 0.0) {
    count = std::poisson_distribution<int>(config.mean_visits)(rng.engine());
  }
  count = std::min(count, horizon);
  std::vector<int> days(horizon);
  std::iota(days.begin(), days.end(), 1);
  std::vector<int> chosen;
  chosen.reserve(count);
  std::sample(days.begin(), days.end(), std::back_inserter(chosen), count, rng.engine());
  return chosen;
}

CohortWithTruth simulate_cohort(const SimulationConfig& config) {
  config.validate();
  CohortWithTruth out;
  out.adherence_params = config.true_adherence;
  out.health_params = config.true_health;
  out.patients.reserve(config.n_patients);
  out.truths.reserve(config.n_patients);
  for (int i = 0; i < config.n_patients; ++i) {
    Rng rng(derive_seed(config.seed, {0x5111ULL, static_cast<std::uint64_t>(i)}));
    char id[32];
    std::snprintf(id, sizeof id, "P%05d", i + 1);
    const CovariateVector x = sample_covariates(config, rng);
    const int horizon = sample_horizon(config, rng);
    const std::vector<int> visits = sample_visit_days(config, horizon, rng);
    auto [rec, truth] =
        simulate_patient(id, x, horizon, config.true_adherence, config.true_health, visits, rng,
                         config.missing_adherence_rate, config.missing_measure_rate);
    out.patients.push_back(std::move(rec));
    out.truths.push_back(std::move(truth));
  }
  return out;
}

}  // namespace medadhere
