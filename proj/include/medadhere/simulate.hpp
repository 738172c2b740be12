#pragma once

#include "medadhere/rng.hpp"
#include "medadhere/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace medadhere {

/// Generative settings for a synthetic cohort. Defaults follow the
/// hypertension cohort descriptives: ~98 observed days, ~2 blood-pressure
/// visits, two measures (systolic, diastolic).
struct SimulationConfig {
  int n_patients = 503;
  double mean_days = 98.0;
  int horizon_dispersion = 4;  // negative-binomial size parameter
  int min_days = 7;
  std::vector<std::string> feature_names{"female", "black", "obese", "diabetes"};
  std::vector<double> covariate_prevalences{0.68, 0.54, 0.60, 0.36};
  double mean_visits = 2.0;
  double missing_adherence_rate = 0.01;
  double missing_measure_rate = 0.0;  // per component, never blanks a whole visit
  AdherenceParams true_adherence;
  HealthParams true_health;
  std::uint64_t seed = 1;

  /// Default configuration with the default true parameters filled in.
  static SimulationConfig defaults();
  void validate() const;
};

AdherenceParams default_adherence_params();
HealthParams default_health_params();

struct PatientTruth {
  std::string id;
  double delta = 0.0;
  Eigen::MatrixXd alpha;     // K x T
  AdherencePath adherence;   // full, unmasked

  double average_adherence() const { return medadhere::average_adherence(adherence); }
};

struct CohortWithTruth {
  std::vector<PatientRecord> patients;
  std::vector<PatientTruth> truths;  // aligned with patients
  AdherenceParams adherence_params;
  HealthParams health_params;
};

/// Intercept followed by independent Bernoulli(prevalence) indicators.
CovariateVector sample_covariates(const SimulationConfig& config, Rng& rng);

/// Draws delta, the daily adherence path, the latent health path and the
/// measurements on `visit_days` (1-based, sorted), then masks adherence days
/// to Missing at `missing_adherence_rate`.
std::pair<PatientRecord, PatientTruth> simulate_patient(
    const std::string& id, const CovariateVector& x, int horizon, const AdherenceParams& theta_a,
    const HealthParams& theta_h, const std::vector<int>& visit_days, Rng& rng,
    double missing_adherence_rate = 0.0, double missing_measure_rate = 0.0);

/// Horizon draw: min_days plus a negative binomial with the remaining mean.
int sample_horizon(const SimulationConfig& config, Rng& rng);

/// Visit days: 1 + Poisson(mean_visits - 1) distinct uniform days (capped at
/// the horizon); Poisson(mean_visits) when mean_visits < 1.
std::vector<int> sample_visit_days(const SimulationConfig& config, int horizon, Rng& rng);

/// Independent patients, each on its own stream derived from (seed, index).
CohortWithTruth simulate_cohort(const SimulationConfig& config);

}  // namespace medadhere
