#pragma once

#include "medadhere/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace medadhere {

struct McmcConfig {
  int n_chains = 4;
  int n_iterations = 4000;
  double burn_in_fraction = 0.5;
  int thinning = 1;
  double target_acceptance = 0.234;
  std::uint64_t seed = 1;
  int threads = 1;

  int burn_in() const;
  int retained_per_chain() const;
  void validate() const;
};

/// Random-walk Metropolis proposal for one parameter block. While adapting
/// (burn-in only) the global scale follows a Robbins-Monro recursion toward
/// the target acceptance rate and the shape follows the running empirical
/// covariance of the chain.
class AdaptiveMetropolis {
 public:
  AdaptiveMetropolis(const Eigen::VectorXd& initial_sd, double target_acceptance);

  Eigen::VectorXd propose(const Eigen::VectorXd& current, Rng& rng) const;
  void adapt(const Eigen::VectorXd& state, bool accepted);

  int dim() const { return static_cast<int>(initial_sd_.size()); }
  double log_scale() const { return log_scale_; }

 private:
  void refresh_factor();

  Eigen::VectorXd initial_sd_;
  double target_;
  double log_scale_;
  long count_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd scatter_;
  Eigen::MatrixXd factor_;  // lower Cholesky factor of the shape matrix
};

/// One Metropolis step on `state` (log density `logp` is kept in sync).
/// Returns whether the proposal was accepted.
template <typename LogDensity>
bool metropolis_step(Eigen::VectorXd& state, double& logp, AdaptiveMetropolis& kernel,
                     LogDensity&& log_density, Rng& rng, bool adapt) {
  Eigen::VectorXd proposal = kernel.propose(state, rng);
  const double logp_new = log_density(proposal);
  const bool accept = std::isfinite(logp_new) && std::log(rng.uniform()) < logp_new - logp;
  if (accept) {
    state = std::move(proposal);
    logp = logp_new;
  }
  if (adapt) kernel.adapt(state, accept);
  return accept;
}

/// Multivariate Student-t independence proposal fitted to a set of states
/// (typically the second half of burn-in). Used after adaptation has stopped.
class IndependenceProposal {
 public:
  /// Returns false when fewer than dim + 2 states are given or the sample
  /// covariance is singular.
  bool fit(const std::vector<Eigen::VectorXd>& states, double dof = 4.0, double inflate = 1.2);
  bool ready() const { return ready_; }
  Eigen::VectorXd draw(Rng& rng) const;
  /// Log density up to a constant.
  double log_density(const Eigen::VectorXd& x) const;

 private:
  bool ready_ = false;
  double dof_ = 4.0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd factor_;  // lower Cholesky factor of the scale matrix
};

/// Independence Metropolis-Hastings step; `logp` is kept in sync.
template <typename LogDensity>
bool independence_step(Eigen::VectorXd& state, double& logp, const IndependenceProposal& q,
                       LogDensity&& log_density, Rng& rng) {
  Eigen::VectorXd proposal = q.draw(rng);
  const double logp_new = log_density(proposal);
  const double log_ratio = logp_new - logp + q.log_density(state) - q.log_density(proposal);
  const bool accept = std::isfinite(logp_new) && std::log(rng.uniform()) < log_ratio;
  if (accept) {
    state = std::move(proposal);
    logp = logp_new;
  }
  return accept;
}

/// Scalar random-walk step with a Robbins-Monro adapted scale.
struct ScalarWalk {
  double log_sd = 0.0;
  long count = 0;
  double target = 0.44;

  void adapt(bool accepted) {
    ++count;
    log_sd += ((accepted ? 1.0 : 0.0) - target) / std::pow(static_cast<double>(count) + 1.0, 0.6);
  }
};

/// Split potential-scale-reduction factor over chains of equal length.
double potential_scale_reduction(const std::vector<std::vector<double>>& chains);

/// Multi-chain effective sample size (Geyer initial positive sequence).
double effective_sample_size(const std::vector<std::vector<double>>& chains);

struct ParameterDiagnostics {
  std::string name;
  double rhat = 1.0;
  double ess = 0.0;
};

}  // namespace medadhere
