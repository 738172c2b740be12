#pragma once

#include "medadhere/rng.hpp"
#include "medadhere/types.hpp"

#include <string>
#include <vector>

namespace fixtures {

using namespace medadhere;

inline CovariateVector covariates(std::vector<double> values) {
  CovariateVector x;
  x.values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  x.names.emplace_back("intercept");
  for (std::size_t j = 1; j < values.size(); ++j) x.names.push_back("f" + std::to_string(j));
  return x;
}

inline CovariateVector intercept_only() { return covariates({1.0}); }

inline AdherenceParams adherence(std::vector<double> lambda, double sigma) {
  AdherenceParams a;
  a.lambda = Eigen::Map<Eigen::VectorXd>(lambda.data(), static_cast<Eigen::Index>(lambda.size()));
  a.sigma_delta = sigma;
  return a;
}

/// K=1 model with scalar parameters and intercept-only mean.
inline HealthParams scalar_health(double beta0, double rho, double phi, double sigma_eps,
                                  double sigma_nu, double sigma_zero) {
  HealthParams h;
  h.beta = Eigen::MatrixXd::Constant(1, 1, beta0);
  h.rho = Eigen::VectorXd::Constant(1, rho);
  h.phi = Eigen::VectorXd::Constant(1, phi);
  h.sigma_eps = Eigen::VectorXd::Constant(1, sigma_eps);
  h.rho_eps = 0.0;
  h.sigma_nu = Eigen::VectorXd::Constant(1, sigma_nu);
  h.sigma_zero = Eigen::VectorXd::Constant(1, sigma_zero);
  return h;
}

inline HealthParams random_health(Rng& rng, int k, int p) {
  HealthParams h;
  h.beta.resize(k, p);
  for (int j = 0; j < k; ++j)
    for (int c = 0; c < p; ++c) h.beta(j, c) = rng.normal(0.0, 3.0);
  h.rho.resize(k);
  h.phi.resize(k);
  h.sigma_eps.resize(k);
  h.sigma_nu.resize(k);
  h.sigma_zero.resize(k);
  for (int j = 0; j < k; ++j) {
    h.rho[j] = -0.95 + 1.9 * rng.uniform();
    h.phi[j] = rng.normal(0.0, 1.5);
    h.sigma_eps[j] = 0.3 + 2.0 * rng.uniform();
    h.sigma_nu[j] = 0.2 + 1.5 * rng.uniform();
    h.sigma_zero[j] = 0.3 + 2.0 * rng.uniform();
  }
  h.rho_eps = k > 1 ? -0.8 + 1.6 * rng.uniform() : 0.0;
  return h;
}

/// Observations on random days (probability `visit_prob` per day), each
/// component independently absent with probability `drop_prob` but never
/// all of them.
inline std::vector<HealthObservation> random_observations(Rng& rng, int horizon, int k,
                                                          double visit_prob, double drop_prob) {
  std::vector<HealthObservation> out;
  for (int t = 1; t <= horizon; ++t) {
    if (!rng.bernoulli(visit_prob)) continue;
    HealthObservation o;
    o.day = t;
    for (int j = 0; j < k; ++j)
      o.values.emplace_back(rng.bernoulli(drop_prob) ? std::nullopt
                                                     : std::optional<double>(rng.normal(0.0, 4.0)));
    if (o.n_present() == 0) o.values[rng.uniform_int(0, k - 1)] = rng.normal(0.0, 4.0);
    out.push_back(std::move(o));
  }
  return out;
}

inline AdherencePath random_path(Rng& rng, int horizon, double p = 0.7) {
  AdherencePath c(horizon);
  for (auto& v : c) v = rng.bernoulli(p) ? 1 : -1;
  return c;
}

inline PatientRecord patient(const std::string& id, int horizon, const CovariateVector& x,
                             std::vector<HealthObservation> obs) {
  PatientRecord r;
  r.id = id;
  r.horizon = horizon;
  r.adherence.assign(horizon, AdherenceDay::Missing);
  r.observations = std::move(obs);
  r.covariates = x;
  return r;
}

inline HealthObservation obs(int day, std::vector<std::optional<double>> values) {
  HealthObservation o;
  o.day = day;
  o.values = std::move(values);
  return o;
}

}  // namespace fixtures
