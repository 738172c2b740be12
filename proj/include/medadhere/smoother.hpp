#pragma once

#include "medadhere/rng.hpp"
#include "medadhere/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace medadhere {

enum class ResamplingScheme { Multinomial, Systematic };

struct SmootherConfig {
  int n_particles = 32;
  int n_iterations = 100;
  double burn_in_fraction = 0.2;
  int n_theta_draws = 100;
  /// Random-walk step for delta, in units of the Laplace posterior SD of
  /// delta given the current adherence path.
  double delta_step_size = 2.4;
  int delta_steps = 5;
  ResamplingScheme resampling = ResamplingScheme::Multinomial;
  /// Particles propagate adherence from the delta-marginal predictive given
  /// their running taken-day count; delta is then refreshed from its
  /// conditional given the selected path. When false, delta is held fixed
  /// within each sweep and days are i.i.d. Bernoulli given it.
  bool collapse_delta = true;
  bool keep_alpha = false;
  std::uint64_t seed = 1;

  int burn_in() const;
  /// ceil((1 - burn_in_fraction) * n_iterations)
  int retained() const;
  void validate() const;
};

struct SmcResult {
  std::vector<Trajectory> trajectories;  // the P ancestral paths at t = T
  Eigen::VectorXd weights;               // normalized final weights
  double loglik_estimate = 0.0;          // log of the particle estimate of p(y | theta, delta)
};

/// One bootstrap particle pass over days 1..T with delta held fixed.
/// Particles carry (alpha_t, c_t); weights are the observation densities on
/// visit days and uniform otherwise; ancestors are resampled every day.
/// With a reference trajectory the last particle is pinned to it and, when
/// `ancestor_sampling` is set, its ancestor is redrawn from ancestor_weights.
SmcResult smc_pass(const PatientRecord& patient, const ThetaDraw& theta, double delta,
                   int n_particles, Rng& rng, const Trajectory* reference = nullptr,
                   ResamplingScheme scheme = ResamplingScheme::Multinomial,
                   bool ancestor_sampling = true);

/// Normalized ancestor-sampling weights for the reference state at day t
/// (t >= 2): w_{t-1}^p * Bernoulli(c_t'; p_adh) * N(alpha_t'; rho alpha_{t-1}^p + phi c_t', S_nu).
/// `previous_alpha` is K x P. Throws NumericalError if every weight vanishes.
Eigen::VectorXd ancestor_weights(const Eigen::VectorXd& reference_alpha, int reference_c,
                                 const Eigen::MatrixXd& previous_alpha,
                                 const Eigen::VectorXd& previous_weights, const ThetaDraw& theta,
                                 double delta, const CovariateVector& x);

/// Random-walk Metropolis steps on delta targeting
/// N(delta; 0, sigma_delta^2) * prod_t Bernoulli(c_t; adherence_prob(delta)).
double update_delta(double delta, std::span<const std::int8_t> path, const AdherenceParams& theta_a,
                    const CovariateVector& x, double step_size, int steps, Rng& rng);

/// Particle Gibbs with ancestor sampling for one patient and one theta.
/// Iteration 1 is an unconditional pass (or a conditional pass from
/// `initial` when given); every later iteration conditions on the previous
/// draw. delta is refreshed by update_delta between sweeps. The reference
/// for the next sweep is drawn from the final weights w_T. The first
/// burn-in iterations are dropped; exactly config.retained() draws remain.
std::vector<Trajectory> pgas_chain(const PatientRecord& patient, const ThetaDraw& theta,
                                   const SmootherConfig& config, Rng& rng,
                                   const Trajectory* initial = nullptr);

struct ImportanceResult {
  std::vector<AdherencePath> paths;
  std::vector<double> deltas;
  Eigen::VectorXd weights;  // normalized
  double ess = 0.0;

  Eigen::VectorXd day_marginals() const;
};

/// Prior draws of (delta, c) reweighted by the Kalman likelihood p(y | c, theta_h).
ImportanceResult importance_smoother(const PatientRecord& patient, const ThetaDraw& theta,
                                     int n_samples, Rng& rng);

struct ExactPosterior {
  Eigen::VectorXd day_marginals;    // P(c_t = +1 | y, theta), length T
  Eigen::VectorXd average_pmf;      // P(#taken days = k | y, theta), k = 0..T
  Eigen::VectorXd path_probabilities;  // 2^T entries; bit t set <=> day t+1 taken
  double log_evidence = 0.0;
};

/// Gauss-Hermite rule for the weight exp(-x^2) (Golub-Welsch).
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};
QuadratureRule gauss_hermite(int n);

/// Exact smoothing by enumeration of all 2^T adherence paths, with delta
/// integrated by Gauss-Hermite quadrature. Throws InvalidInput for T > max_horizon.
ExactPosterior enumerate_exact(const PatientRecord& patient, const ThetaDraw& theta,
                               int max_horizon = 14, int quadrature_nodes = 64);

/// log of the probability of one particular path with the given counts of
/// taken and not-taken days, delta integrated over N(0, sigma_delta^2)
/// (adaptive Gauss-Hermite, 32 nodes centred at the Laplace mode).
double log_marginal_adherence(int taken, int not_taken, const AdherenceParams& theta_a,
                              const CovariateVector& x);

/// Fraction of trajectories taking the medication on each day.
Eigen::VectorXd day_marginals(std::span<const Trajectory> draws);

/// PGAS draws for one (patient, theta draw) task on a stream derived from
/// (config.seed, patient id, theta_index).
std::vector<Trajectory> smooth_patient_theta(const PatientRecord& patient, const ThetaDraw& theta,
                                             int theta_index, const SmootherConfig& config);

}  // namespace medadhere
