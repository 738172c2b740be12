#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace medadhere {

/// Raised when an argument breaks a documented invariant (bad dimensions,
/// out-of-range parameters, malformed records).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a covariance that must be positive definite is not.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Daily adherence indicator. Taken/NotTaken carry the +1/-1 coding used by
/// every likelihood in the library; Missing days carry no information.
enum class AdherenceDay : std::int8_t { NotTaken = -1, Missing = 0, Taken = 1 };

/// A fully imputed adherence path, entries in {-1, +1}.
using AdherencePath = std::vector<std::int8_t>;

struct CovariateVector {
  Eigen::VectorXd values;          // values[0] == 1 (intercept)
  std::vector<std::string> names;  // same length as values

  int size() const { return static_cast<int>(values.size()); }
  void validate() const;
};

/// Health measures recorded on one day. Components may be individually
/// absent (a visit can record only one of several measures).
struct HealthObservation {
  int day = 1;  // 1-based day index within the patient horizon
  std::vector<std::optional<double>> values;

  int n_present() const;
};

struct PatientRecord {
  std::string id;
  int horizon = 0;
  std::vector<AdherenceDay> adherence;
  std::vector<HealthObservation> observations;  // sorted, unique days
  CovariateVector covariates;

  /// Checks horizon, adherence length, observation ordering and bounds.
  /// When n_measures > 0 every observation must have that many components.
  void validate(int n_measures = 0) const;
  int count(AdherenceDay kind) const;
};

/// theta_a: covariate coefficients and the random-effect standard deviation.
struct AdherenceParams {
  Eigen::VectorXd lambda;
  double sigma_delta = 1.0;

  void validate(int n_covariates) const;
};

/// theta_h of the linear Gaussian state-space model for K health measures.
///
///   y_t     = beta x + alpha_t + eps_t,            eps_t ~ N(0, S_eps)
///   alpha_1 ~ N(0, diag(sigma_zero^2))
///   alpha_t = diag(rho) alpha_{t-1} + phi c_t + nu_t,  nu_t ~ N(0, diag(sigma_nu^2))
///
/// S_eps has exchangeable correlation: entry (j,k) = sigma_eps_j sigma_eps_k
/// rho_eps^{j != k}.
struct HealthParams {
  Eigen::MatrixXd beta;  // K x p
  Eigen::VectorXd rho;
  Eigen::VectorXd phi;
  Eigen::VectorXd sigma_eps;
  double rho_eps = 0.0;
  Eigen::VectorXd sigma_nu;
  Eigen::VectorXd sigma_zero;

  int n_measures() const { return static_cast<int>(beta.rows()); }
  int n_covariates() const { return static_cast<int>(beta.cols()); }
  Eigen::MatrixXd eps_covariance() const;
  void validate() const;
};

/// One joint draw of the latent quantities for a single patient.
struct Trajectory {
  double delta = 0.0;
  Eigen::MatrixXd alpha;  // K x T, may be empty when alpha paths are not kept
  AdherencePath adherence;

  int horizon() const { return static_cast<int>(adherence.size()); }
};

/// Paired parameter draw used for smoothing.
struct ThetaDraw {
  AdherenceParams adherence;
  HealthParams health;
};

/// Converts a path to observed-day encoding.
std::vector<AdherenceDay> to_days(std::span<const std::int8_t> path);

/// Adherence proportion (c+1)/2 averaged over days.
double average_adherence(std::span<const std::int8_t> path);

}  // namespace medadhere
