#include "medadhere/kalman.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace medadhere {
namespace {

constexpr int kStackDim = 4;

// Small-K fast path keeps every temporary on the stack.
using StackMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kStackDim, kStackDim>;
using StackVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kStackDim, 1>;

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

void check_inputs(std::span<const HealthObservation> observations, int horizon,
                  const CovariateVector& x, std::span<const std::int8_t> adherence,
                  const HealthParams& params) {
  if (horizon < 1) throw InvalidInput("horizon must be >= 1");
  if (static_cast<int>(adherence.size()) != horizon)
    throw InvalidInput("adherence path length " + std::to_string(adherence.size()) +
                       " differs from horizon " + std::to_string(horizon));
  for (auto c : adherence)
    if (c != 1 && c != -1) throw InvalidInput("adherence path must be fully imputed (+1/-1)");
  if (x.size() != params.n_covariates())
    throw InvalidInput("beta has " + std::to_string(params.n_covariates()) +
                       " columns but covariates have " + std::to_string(x.size()));
  const int k = params.n_measures();
  if (k > 64) throw InvalidInput("at most 64 health measures are supported");
  int prev = 0;
  for (const auto& obs : observations) {
    if (obs.day < 1 || obs.day > horizon) throw InvalidInput("observation day outside horizon");
    if (obs.day <= prev) throw InvalidInput("observation days must be strictly increasing");
    if (static_cast<int>(obs.values.size()) != k)
      throw InvalidInput("observation has " + std::to_string(obs.values.size()) +
                         " components, model has " + std::to_string(k));
    prev = obs.day;
  }
}

// Measurement update on the present components of one observation.
// Returns the log predictive density of those components.
template <typename Mat, typename Vec>
double measurement_update(Vec& m, Mat& p, const HealthObservation& obs, const Vec& offset,
                          const Mat& r) {
  const int k = static_cast<int>(m.size());
  int idx[64];
  int d = 0;
  for (int j = 0; j < k; ++j)
    if (obs.values[j].has_value()) idx[d++] = j;
  if (d == 0) return 0.0;

  Mat s(d, d);
  Vec v(d);
  Mat pcols(k, d);  // P H'
  for (int a = 0; a < d; ++a) {
    v[a] = *obs.values[idx[a]] - offset[idx[a]] - m[idx[a]];
    for (int b = 0; b < d; ++b) s(a, b) = p(idx[a], idx[b]) + r(idx[a], idx[b]);
    for (int j = 0; j < k; ++j) pcols(j, a) = p(j, idx[a]);
  }
  Eigen::LLT<Mat> llt(s);
  if (llt.info() != Eigen::Success)
    throw NumericalError("innovation covariance is not positive definite");
  const Mat& lower = llt.matrixLLT();
  double logdet = 0.0;
  for (int a = 0; a < d; ++a) {
    const double diag = lower(a, a);
    if (!(diag > 0.0) || !std::isfinite(diag))
      throw NumericalError("innovation covariance is not positive definite");
    logdet += 2.0 * std::log(diag);
  }
  Vec z = llt.matrixL().solve(v);
  const double loglik = -0.5 * (d * kLog2Pi + logdet + z.squaredNorm());

  // Gain G = P H' S^{-1}; computed as (S^{-1} H P)'.
  Mat gain = llt.solve(pcols.transpose()).transpose();
  m.noalias() += gain * v;

  Mat a = Mat::Identity(k, k);
  for (int c = 0; c < d; ++c) a.col(idx[c]) -= gain.col(c);
  Mat rsub(d, d);
  for (int x = 0; x < d; ++x)
    for (int y = 0; y < d; ++y) rsub(x, y) = r(idx[x], idx[y]);
  Mat updated = a * p * a.transpose() + gain * rsub * gain.transpose();
  p = 0.5 * (updated + updated.transpose());
  return loglik;
}

template <typename Mat, typename Vec>
double loglik_impl(std::span<const HealthObservation> observations, const CovariateVector& x,
                   std::span<const std::int8_t> adherence, const HealthParams& params) {
  const int k = params.n_measures();
  const Vec offset = params.beta * x.values;
  const Mat r = params.eps_covariance();
  Vec m = Vec::Zero(k);
  Mat p = Mat::Zero(k, k);
  for (int j = 0; j < k; ++j) p(j, j) = params.sigma_zero[j] * params.sigma_zero[j];

  double loglik = 0.0;
  int day = 1;  // (m, p) hold the predicted moments for `day`
  for (const auto& obs : observations) {
    const int steps = obs.day - day;
    if (steps > 0) {
      for (int t = day + 1; t <= obs.day; ++t) {
        const double c = adherence[t - 1];
        for (int j = 0; j < k; ++j) m[j] = params.rho[j] * m[j] + params.phi[j] * c;
      }
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) p(i, j) *= std::pow(params.rho[i] * params.rho[j], steps);
        const double r2 = params.rho[i] * params.rho[i];
        const double q = params.sigma_nu[i] * params.sigma_nu[i];
        // sum_{s<steps} r2^s, written to stay accurate as r2 -> 1
        const double geo = (r2 < 1.0 - 1e-12) ? -std::expm1(steps * std::log(r2)) / (1.0 - r2)
                                               : static_cast<double>(steps);
        p(i, i) += q * (r2 == 0.0 ? 1.0 : geo);
      }
      day = obs.day;
    }
    loglik += measurement_update<Mat, Vec>(m, p, obs, offset, r);
  }
  return loglik;
}

}  // namespace

KalmanFilterResult kalman_filter(std::span<const HealthObservation> observations, int horizon,
                                 const CovariateVector& x, std::span<const std::int8_t> adherence,
                                 const HealthParams& params) {
  check_inputs(observations, horizon, x, adherence, params);
  const int k = params.n_measures();
  const Eigen::VectorXd offset = params.beta * x.values;
  const Eigen::MatrixXd r = params.eps_covariance();

  KalmanFilterResult out;
  out.filtered_means.resize(k, horizon);
  out.predicted_means.resize(k, horizon);
  out.filtered_covs.resize(horizon);
  out.predicted_covs.resize(horizon);

  Eigen::VectorXd m = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd p = params.sigma_zero.array().square().matrix().asDiagonal();
  const Eigen::VectorXd q = params.sigma_nu.array().square();

  std::size_t next_obs = 0;
  for (int t = 1; t <= horizon; ++t) {
    if (t > 1) {
      m = params.rho.cwiseProduct(m) + params.phi * static_cast<double>(adherence[t - 1]);
      p = params.rho.asDiagonal() * p * params.rho.asDiagonal();
      p.diagonal() += q;
    }
    out.predicted_means.col(t - 1) = m;
    out.predicted_covs[t - 1] = p;
    if (next_obs < observations.size() && observations[next_obs].day == t) {
      out.loglik += measurement_update<Eigen::MatrixXd, Eigen::VectorXd>(
          m, p, observations[next_obs], offset, r);
      ++next_obs;
    }
    out.filtered_means.col(t - 1) = m;
    out.filtered_covs[t - 1] = p;
  }
  return out;
}

KalmanFilterResult kalman_filter(const PatientRecord& patient,
                                 std::span<const std::int8_t> adherence,
                                 const HealthParams& params) {
  return kalman_filter(patient.observations, patient.horizon, patient.covariates, adherence,
                       params);
}

double kalman_loglik(std::span<const HealthObservation> observations, int horizon,
                     const CovariateVector& x, std::span<const std::int8_t> adherence,
                     const HealthParams& params) {
  check_inputs(observations, horizon, x, adherence, params);
  if (params.n_measures() <= kStackDim)
    return loglik_impl<StackMat, StackVec>(observations, x, adherence, params);
  return loglik_impl<Eigen::MatrixXd, Eigen::VectorXd>(observations, x, adherence, params);
}

double kalman_loglik(const PatientRecord& patient, std::span<const std::int8_t> adherence,
                     const HealthParams& params) {
  return kalman_loglik(patient.observations, patient.horizon, patient.covariates, adherence,
                       params);
}

KalmanSmootherResult kalman_smoother(const KalmanFilterResult& filtered,
                                     const HealthParams& params) {
  const auto horizon = static_cast<int>(filtered.filtered_covs.size());
  KalmanSmootherResult out;
  out.smoothed_means = filtered.filtered_means;
  out.smoothed_covs = filtered.filtered_covs;
  for (int t = horizon - 2; t >= 0; --t) {
    const Eigen::MatrixXd& pf = filtered.filtered_covs[t];
    const Eigen::MatrixXd& pp = filtered.predicted_covs[t + 1];
    // J = P_t D P_{t+1|t}^{-1}
    const Eigen::MatrixXd cross = pf * params.rho.asDiagonal();
    Eigen::LLT<Eigen::MatrixXd> llt(pp);
    if (llt.info() != Eigen::Success)
      throw NumericalError("predicted covariance is not positive definite");
    const Eigen::MatrixXd gain = llt.solve(cross.transpose()).transpose();
    out.smoothed_means.col(t) =
        filtered.filtered_means.col(t) +
        gain * (out.smoothed_means.col(t + 1) - filtered.predicted_means.col(t + 1));
    Eigen::MatrixXd cov = pf + gain * (out.smoothed_covs[t + 1] - pp) * gain.transpose();
    out.smoothed_covs[t] = 0.5 * (cov + cov.transpose());
  }
  return out;
}

KalmanSmootherResult kalman_smoother(std::span<const HealthObservation> observations, int horizon,
                                     const CovariateVector& x,
                                     std::span<const std::int8_t> adherence,
                                     const HealthParams& params) {
  return kalman_smoother(kalman_filter(observations, horizon, x, adherence, params), params);
}

KalmanSmootherResult kalman_smoother(const PatientRecord& patient,
                                     std::span<const std::int8_t> adherence,
                                     const HealthParams& params) {
  return kalman_smoother(kalman_filter(patient, adherence, params), params);
}

}  // namespace medadhere
