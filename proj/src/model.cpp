#include "medadhere/model.hpp"

#include <cmath>
#include <numbers>

namespace medadhere {

double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double linear_predictor(const AdherenceParams& params, const CovariateVector& x) {
  if (params.lambda.size() != x.values.size())
    throw InvalidInput("lambda and covariates differ in length (" +
                       std::to_string(params.lambda.size()) + " vs " +
                       std::to_string(x.values.size()) + ")");
  return params.lambda.dot(x.values);
}

double adherence_prob(double delta, const AdherenceParams& params, const CovariateVector& x) {
  return sigmoid(delta + linear_predictor(params, x));
}

double adherence_loglik(std::span<const AdherenceDay> adherence, double delta,
                        const AdherenceParams& params, const CovariateVector& x) {
  const double eta = delta + linear_predictor(params, x);
  int taken = 0;
  int not_taken = 0;
  for (auto d : adherence) {
    if (d == AdherenceDay::Taken) ++taken;
    else if (d == AdherenceDay::NotTaken) ++not_taken;
  }
  return binary_loglik(taken, not_taken, eta);
}

double log_normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

}  // namespace medadhere
