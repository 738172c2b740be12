#pragma once

#include "medadhere/mcmc.hpp"
#include "medadhere/types.hpp"

#include <span>
#include <string>
#include <vector>

namespace medadhere {

/// Bounds that turn the flat priors on lambda and sigma_delta into proper ones.
inline constexpr double kLambdaBound = 1e3;
inline constexpr double kSigmaDeltaBound = 1e3;

struct AdherenceDraw {
  int chain = 0;
  int iteration = 0;
  AdherenceParams params;
  Eigen::VectorXd deltas;  // aligned with AdherencePosterior::patient_ids
};

struct AdherencePosterior {
  std::vector<std::string> patient_ids;
  std::vector<std::string> covariate_names;
  std::vector<AdherenceDraw> draws;  // chain-major, post burn-in, thinned
  std::vector<ParameterDiagnostics> diagnostics;

  /// Index of a patient in patient_ids; throws InvalidInput if absent.
  int patient_index(const std::string& id) const;
  double max_rhat() const;
};

/// Random-effects logistic log posterior: Bernoulli likelihood over
/// non-missing days, N(0, sigma_delta^2) random effects, flat priors on
/// |lambda_j| <= 1e3 and sigma_delta in (0, 1e3]. Returns -inf outside
/// the support.
double log_posterior_adherence(const AdherenceParams& params, const Eigen::VectorXd& deltas,
                               std::span<const PatientRecord> cohort);

/// Metropolis-within-Gibbs: adaptive block update of lambda, per-patient
/// delta updates, log-scale sigma_delta update, and an exact Gibbs draw
/// along the likelihood-invariant direction (lambda + s, delta - X s).
/// Throws InvalidInput when X^T X is singular.
/// Chains run on streams derived from (seed, chain).
AdherencePosterior fit_adherence(std::span<const PatientRecord> cohort, const McmcConfig& config);

}  // namespace medadhere
