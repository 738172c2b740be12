#pragma once

#include "medadhere/types.hpp"

#include <span>

namespace medadhere {

/// log(1 / (1 + exp(-z))) without overflow for large |z|.
double log_sigmoid(double z);

/// 1 / (1 + exp(-z)), stable for |z| well beyond 700.
double sigmoid(double z);

/// lambda^T x; throws InvalidInput on a dimension mismatch.
double linear_predictor(const AdherenceParams& params, const CovariateVector& x);

/// Probability of taking the medication on any given day.
double adherence_prob(double delta, const AdherenceParams& params, const CovariateVector& x);

/// Sum over non-missing days of log Bernoulli(c_t; adherence_prob).
double adherence_loglik(std::span<const AdherenceDay> adherence, double delta,
                        const AdherenceParams& params, const CovariateVector& x);

/// Same likelihood from sufficient statistics: n_taken * log p + n_not * log(1-p)
/// with p = sigmoid(eta).
inline double binary_loglik(int n_taken, int n_not_taken, double eta) {
  return n_taken * log_sigmoid(eta) + n_not_taken * log_sigmoid(-eta);
}

/// Normal log-density.
double log_normal_pdf(double x, double mean, double sd);

}  // namespace medadhere
