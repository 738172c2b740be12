#pragma once

#include "medadhere/types.hpp"

#include <span>
#include <vector>

namespace medadhere {

/// Filtered and one-step predicted moments for days 1..T (column t-1 holds day t).
struct KalmanFilterResult {
  double loglik = 0.0;
  Eigen::MatrixXd filtered_means;               // K x T
  std::vector<Eigen::MatrixXd> filtered_covs;   // T matrices, K x K
  Eigen::MatrixXd predicted_means;              // K x T
  std::vector<Eigen::MatrixXd> predicted_covs;  // T matrices, K x K
};

struct KalmanSmootherResult {
  Eigen::MatrixXd smoothed_means;              // K x T
  std::vector<Eigen::MatrixXd> smoothed_covs;  // T matrices, K x K
};

/// Exact Kalman recursion for the health-measure model given a complete
/// adherence path. Days without an observation only run the prediction;
/// partially observed days update on their present components. The
/// covariance update uses the Joseph form.
///
/// Throws InvalidInput on inconsistent dimensions or a path entry outside
/// {-1,+1}, and NumericalError if an innovation covariance is not positive
/// definite.
KalmanFilterResult kalman_filter(std::span<const HealthObservation> observations, int horizon,
                                 const CovariateVector& x, std::span<const std::int8_t> adherence,
                                 const HealthParams& params);

KalmanFilterResult kalman_filter(const PatientRecord& patient,
                                 std::span<const std::int8_t> adherence,
                                 const HealthParams& params);

/// log p(y | c, theta_h) only. Skips the per-day covariance recursion
/// between observations using its closed form; this is the path used inside
/// MCMC and importance sampling.
double kalman_loglik(std::span<const HealthObservation> observations, int horizon,
                     const CovariateVector& x, std::span<const std::int8_t> adherence,
                     const HealthParams& params);

double kalman_loglik(const PatientRecord& patient, std::span<const std::int8_t> adherence,
                     const HealthParams& params);

/// Rauch-Tung-Striebel pass over stored filter output.
KalmanSmootherResult kalman_smoother(const KalmanFilterResult& filtered, const HealthParams& params);

KalmanSmootherResult kalman_smoother(std::span<const HealthObservation> observations, int horizon,
                                     const CovariateVector& x,
                                     std::span<const std::int8_t> adherence,
                                     const HealthParams& params);

KalmanSmootherResult kalman_smoother(const PatientRecord& patient,
                                     std::span<const std::int8_t> adherence,
                                     const HealthParams& params);

}  // namespace medadhere
