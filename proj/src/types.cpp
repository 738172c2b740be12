#include "medadhere/types.hpp"

#include <cmath>
#include <string>

namespace medadhere {

void CovariateVector::validate() const {
  if (values.size() == 0) throw InvalidInput("covariate vector is empty");
  if (static_cast<std::size_t>(values.size()) != names.size())
    throw InvalidInput("covariate values and names differ in length");
  if (values[0] != 1.0) throw InvalidInput("first covariate must be the intercept (1)");
  for (Eigen::Index j = 0; j < values.size(); ++j)
    if (!std::isfinite(values[j])) throw InvalidInput("covariate '" + names[j] + "' is not finite");
}

int HealthObservation::n_present() const {
  int n = 0;
  for (const auto& v : values) n += v.has_value() ? 1 : 0;
  return n;
}

void PatientRecord::validate(int n_measures) const {
  if (horizon < 1) throw InvalidInput("patient " + id + ": horizon must be >= 1");
  if (static_cast<int>(adherence.size()) != horizon)
    throw InvalidInput("patient " + id + ": adherence length differs from horizon");
  int prev = 0;
  for (const auto& obs : observations) {
    if (obs.day < 1 || obs.day > horizon)
      throw InvalidInput("patient " + id + ": observation day " + std::to_string(obs.day) +
                         " outside [1, " + std::to_string(horizon) + "]");
    if (obs.day <= prev)
      throw InvalidInput("patient " + id + ": observation days must be strictly increasing");
    if (obs.n_present() == 0)
      throw InvalidInput("patient " + id + ": observation on day " + std::to_string(obs.day) +
                         " has no measured component");
    if (n_measures > 0 && static_cast<int>(obs.values.size()) != n_measures)
      throw InvalidInput("patient " + id + ": observation has wrong number of components");
    prev = obs.day;
  }
  covariates.validate();
}

int PatientRecord::count(AdherenceDay kind) const {
  int n = 0;
  for (auto d : adherence) n += (d == kind) ? 1 : 0;
  return n;
}

void AdherenceParams::validate(int n_covariates) const {
  if (!(sigma_delta > 0.0) || !std::isfinite(sigma_delta))
    throw InvalidInput("sigma_delta must be positive");
  if (lambda.size() != n_covariates)
    throw InvalidInput("lambda has " + std::to_string(lambda.size()) + " entries, covariates have " +
                       std::to_string(n_covariates));
}

Eigen::MatrixXd HealthParams::eps_covariance() const {
  const int k = n_measures();
  Eigen::MatrixXd s(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      s(i, j) = sigma_eps[i] * sigma_eps[j] * (i == j ? 1.0 : rho_eps);
  return s;
}

void HealthParams::validate() const {
  const Eigen::Index k = beta.rows();
  if (k == 0 || beta.cols() == 0) throw InvalidInput("beta must be non-empty");
  if (rho.size() != k || phi.size() != k || sigma_eps.size() != k || sigma_nu.size() != k ||
      sigma_zero.size() != k)
    throw InvalidInput("health parameter vectors must all have K entries");
  for (Eigen::Index i = 0; i < k; ++i) {
    if (!(std::abs(rho[i]) < 1.0)) throw InvalidInput("|rho_k| must be < 1");
    if (!(sigma_eps[i] > 0.0)) throw InvalidInput("sigma_eps must be positive");
    if (!(sigma_nu[i] > 0.0)) throw InvalidInput("sigma_nu must be positive");
    if (!(sigma_zero[i] > 0.0)) throw InvalidInput("sigma_zero must be positive");
    if (!std::isfinite(phi[i])) throw InvalidInput("phi must be finite");
  }
  if (!beta.allFinite()) throw InvalidInput("beta must be finite");
  if (!(std::abs(rho_eps) < 1.0)) throw InvalidInput("|rho_eps| must be < 1");
  // Exchangeable correlation is PD iff rho_eps > -1/(K-1).
  if (k > 1 && !(rho_eps > -1.0 / static_cast<double>(k - 1)))
    throw InvalidInput("rho_eps makes the measurement covariance indefinite");
}

std::vector<AdherenceDay> to_days(std::span<const std::int8_t> path) {
  std::vector<AdherenceDay> out;
  out.reserve(path.size());
  for (auto c : path) out.push_back(c > 0 ? AdherenceDay::Taken : AdherenceDay::NotTaken);
  return out;
}

double average_adherence(std::span<const std::int8_t> path) {
  if (path.empty()) return 0.0;
  long taken = 0;
  for (auto c : path) taken += c > 0 ? 1 : 0;
  return static_cast<double>(taken) / static_cast<double>(path.size());
}

}  // namespace medadhere
