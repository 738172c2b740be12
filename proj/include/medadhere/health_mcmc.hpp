#pragma once

#include "medadhere/adherence_mcmc.hpp"
#include "medadhere/mcmc.hpp"
#include "medadhere/rng.hpp"
#include "medadhere/types.hpp"

#include <span>
#include <string>
#include <vector>

namespace medadhere {

struct HealthDraw {
  int imputation = 0;
  int chain = 0;
  int iteration = 0;
  HealthParams params;
};

struct HealthPosterior {
  std::vector<std::string> covariate_names;
  std::vector<HealthDraw> draws;  // imputation-major, then chain
  /// Potential-scale reduction is computed across chains within each
  /// imputation; the worst imputation is reported. ESS is summed.
  std::vector<ParameterDiagnostics> diagnostics;

  double max_rhat() const;
};

/// Prior support bounds on the scale parameters.
inline constexpr double kSigmaEpsUpper = 30.0;
inline constexpr double kSigmaNuUpper = 10.0;
inline constexpr double kSigmaZeroUpper = 30.0;

/// Independent priors: rho_k ~ U(-1,1); phi_k ~ N(0, 25); sigma_eps_k ~ U(0,30);
/// rho_eps ~ U(-1,1); sigma_nu_k ~ U(0,10); sigma_zero_k ~ U(0,30); intercepts
/// of the first two measures ~ N(120, 400) and N(80, 400); every other beta
/// entry ~ N(0, 400). Second Normal argument is a variance. Returns -inf
/// outside the support (including an indefinite measurement covariance).
double log_prior_health(const HealthParams& params);

/// Sum of exact Kalman log-likelihoods plus log_prior_health. Every patient
/// must have a complete adherence record (no Missing days).
double log_posterior_health(const HealthParams& params, std::span<const PatientRecord> cohort);

/// Given rho and the scale/correlation parameters, y is linear-Gaussian in
/// theta = (beta column-major K x p, phi). Integrating theta out against its
/// prior gives log p(y | rest) and a Gaussian conditional for theta.
struct HealthLinearConditional {
  double log_marginal = 0.0;         // -inf when a covariance is not positive definite
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision_factor;  // lower Cholesky factor of the conditional precision
};

/// Ignores params.beta and params.phi. Every patient needs complete adherence.
HealthLinearConditional health_linear_conditional(const HealthParams& params,
                                                  std::span<const PatientRecord> cohort);

/// M completed copies of the cohort. Each copy picks one posterior draw of
/// (theta_a, delta) at random and fills every Missing day with a Bernoulli
/// draw from adherence_prob under that draw.
std::vector<std::vector<PatientRecord>> impute_missing_adherence(
    std::span<const PatientRecord> cohort, const AdherencePosterior& posterior, int m, Rng& rng);

/// Metropolis-within-Gibbs, one set of chains per completed cohort. The
/// scale and correlation parameters are updated with (beta, phi) integrated
/// out, by an adaptive Metropolis block over rho, each measure's total
/// variance, its noise/state split, a rescaled rho_eps and sigma_zero (all
/// unconstrained). After burn-in half of the updates instead use a
/// multivariate-t independence proposal fitted to the pooled late burn-in of
/// all chains for that cohort. (beta, phi) is then drawn from its exact
/// Gaussian conditional. Draws are pooled with the imputation index retained.
HealthPosterior fit_health(std::span<const std::vector<PatientRecord>> completed,
                           const McmcConfig& config);

/// Flattened, labeled view of theta_h used for diagnostics and persistence.
std::vector<std::string> health_parameter_names(const HealthParams& shape,
                                                const std::vector<std::string>& covariate_names);
Eigen::VectorXd flatten_health(const HealthParams& params);

}  // namespace medadhere
