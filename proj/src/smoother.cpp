#include "medadhere/smoother.hpp"

#include "medadhere/kalman.hpp"
#include "medadhere/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

namespace medadhere {

int SmootherConfig::burn_in() const {
  return static_cast<int>(std::floor(burn_in_fraction * n_iterations + 1e-9));
}

int SmootherConfig::retained() const { return n_iterations - burn_in(); }

void SmootherConfig::validate() const {
  if (n_particles < 1) throw InvalidInput("n_particles must be >= 1");
  if (n_iterations < 1) throw InvalidInput("n_iterations must be >= 1");
  if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
    throw InvalidInput("burn_in_fraction must lie in [0,1)");
  if (retained() < 1) throw InvalidInput("no smoothing iterations retained after burn-in");
  if (n_theta_draws < 1) throw InvalidInput("n_theta_draws must be >= 1");
  if (delta_steps < 0) throw InvalidInput("delta_steps must be >= 0");
  if (!(delta_step_size > 0.0)) throw InvalidInput("delta_step_size must be positive");
}

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct ObservationTerm {
  std::vector<int> index;     // present components
  Eigen::VectorXd target;     // y - beta x on those components
  Eigen::MatrixXd precision;  // inverse measurement covariance block
  double log_norm = 0.0;
};

// Quantities fixed for one (patient, theta) pair.
struct StateModel {
  int k = 0;
  int horizon = 0;
  double eta = 0.0;  // lambda^T x
  std::vector<double> rho, phi, sd_nu, sd_zero, inv_var_nu;
  double log_norm_nu = 0.0;
  std::vector<int> obs_at;  // day (0-based) -> index into obs, or -1
  std::vector<ObservationTerm> obs;

  double obs_loglik(int oi, const double* alpha) const {
    const auto& term = obs[oi];
    const auto d = static_cast<int>(term.index.size());
    double r[64];
    for (int a = 0; a < d; ++a) r[a] = term.target[a] - alpha[term.index[a]];
    double quad = 0.0;
    for (int a = 0; a < d; ++a) {
      double row = 0.0;
      for (int b = 0; b < d; ++b) row += term.precision(a, b) * r[b];
      quad += r[a] * row;
    }
    return term.log_norm - 0.5 * quad;
  }

  // log N(next; rho * prev + phi * c, S_nu)
  double transition_logpdf(const double* next, const double* prev, int c) const {
    double s = log_norm_nu;
    for (int j = 0; j < k; ++j) {
      const double r = next[j] - rho[j] * prev[j] - phi[j] * c;
      s -= 0.5 * r * r * inv_var_nu[j];
    }
    return s;
  }
};

StateModel make_state_model(const PatientRecord& patient, const ThetaDraw& theta) {
  const auto& h = theta.health;
  h.validate();
  const CovariateVector& x = patient.covariates;
  if (h.n_covariates() != x.size()) throw InvalidInput("beta/covariate dimension mismatch");
  if (h.n_measures() > 64) throw InvalidInput("at most 64 health measures are supported");
  theta.adherence.validate(x.size());
  patient.validate(h.n_measures());

  StateModel m;
  m.k = h.n_measures();
  m.horizon = patient.horizon;
  m.eta = linear_predictor(theta.adherence, x);
  for (int j = 0; j < m.k; ++j) {
    m.rho.push_back(h.rho[j]);
    m.phi.push_back(h.phi[j]);
    m.sd_nu.push_back(h.sigma_nu[j]);
    m.sd_zero.push_back(h.sigma_zero[j]);
    m.inv_var_nu.push_back(1.0 / (h.sigma_nu[j] * h.sigma_nu[j]));
    m.log_norm_nu -= 0.5 * kLog2Pi + std::log(h.sigma_nu[j]);
  }
  const Eigen::VectorXd offset = h.beta * x.values;
  const Eigen::MatrixXd r = h.eps_covariance();
  m.obs_at.assign(patient.horizon, -1);
  for (const auto& o : patient.observations) {
    ObservationTerm term;
    for (int j = 0; j < m.k; ++j)
      if (o.values[j]) term.index.push_back(j);
    const auto d = static_cast<int>(term.index.size());
    term.target.resize(d);
    Eigen::MatrixXd rsub(d, d);
    for (int a = 0; a < d; ++a) {
      term.target[a] = *o.values[term.index[a]] - offset[term.index[a]];
      for (int b = 0; b < d; ++b) rsub(a, b) = r(term.index[a], term.index[b]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(rsub);
    if (llt.info() != Eigen::Success)
      throw NumericalError("measurement covariance is not positive definite");
    term.precision = llt.solve(Eigen::MatrixXd::Identity(d, d));
    double logdet = 0.0;
    for (int a = 0; a < d; ++a) logdet += 2.0 * std::log(llt.matrixLLT()(a, a));
    term.log_norm = -0.5 * (d * kLog2Pi + logdet);
    m.obs_at[o.day - 1] = static_cast<int>(m.obs.size());
    m.obs.push_back(std::move(term));
  }
  return m;
}

struct ParticleStore {
  int n = 0;  // particles
  int k = 0;
  int horizon = 0;
  std::vector<double> alpha;       // ((t * n) + p) * k + j
  std::vector<std::int8_t> c;      // t * n + p
  std::vector<int> ancestor;       // t * n + p, index at t-1
  Eigen::VectorXd weights;         // final normalized weights
  double loglik = 0.0;

  double* alpha_at(int t, int p) { return alpha.data() + (static_cast<std::size_t>(t) * n + p) * k; }
  const double* alpha_at(int t, int p) const {
    return alpha.data() + (static_cast<std::size_t>(t) * n + p) * k;
  }
};

void check_reference(const Trajectory& ref, const StateModel& m) {
  if (ref.horizon() != m.horizon) throw InvalidInput("reference trajectory horizon mismatch");
  if (ref.alpha.rows() != m.k || ref.alpha.cols() != m.horizon)
    throw InvalidInput("reference trajectory must carry a K x T alpha path");
  for (auto c : ref.adherence)
    if (c != 1 && c != -1) throw InvalidInput("reference adherence must be +1/-1");
}

// Concave log target of delta given the path: n1 log p + n0 log(1-p) - delta^2 / (2 sigma^2).
struct DeltaTarget {
  int taken;
  int not_taken;
  double eta;
  double inv_var;

  double operator()(double d) const {
    return binary_loglik(taken, not_taken, d + eta) - 0.5 * d * d * inv_var;
  }
  // Newton iterations for the mode; returns the curvature-based SD there.
  double laplace_sd(double& mode) const {
    double d = 0.0;
    double curvature = inv_var;
    for (int it = 0; it < 100; ++it) {
      const double p = sigmoid(d + eta);
      const double grad = taken * (1.0 - p) - not_taken * p - d * inv_var;
      curvature = (taken + not_taken) * p * (1.0 - p) + inv_var;
      const double step = std::clamp(grad / curvature, -5.0, 5.0);
      d += step;
      if (std::abs(step) < 1e-10 * (1.0 + std::abs(d))) break;
    }
    const double p = sigmoid(d + eta);
    curvature = (taken + not_taken) * p * (1.0 - p) + inv_var;
    mode = d;
    return 1.0 / std::sqrt(curvature);
  }
};


// Adaptive Gauss-Hermite rule (nodes recentred at the Laplace mode).
const QuadratureRule& adaptive_rule() {
  static const QuadratureRule rule = gauss_hermite(32);
  return rule;
}

double log_marginal(const DeltaTarget& target, double sigma) {
  double mode = 0.0;
  const double s = target.laplace_sd(mode);
  const QuadratureRule& rule = adaptive_rule();
  const double log_prior_norm = -0.5 * kLog2Pi - std::log(sigma);
  double top = kNegInf;
  double terms[64];
  const auto n = static_cast<int>(rule.nodes.size());
  for (int i = 0; i < n; ++i) {
    const double z = rule.nodes[i];
    terms[i] = std::log(rule.weights[i]) + z * z + target(mode + std::sqrt(2.0) * s * z);
    top = std::max(top, terms[i]);
  }
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(terms[i] - top);
  return top + std::log(sum) + std::log(std::sqrt(2.0) * s) + log_prior_norm;
}

// log Q(n, m): log probability of one particular m-day path with n taken
// days, delta integrated over its prior. Stored for 0 <= n <= m <= T.
struct PredictiveTable {
  int horizon = 0;
  std::vector<double> logq;
  std::vector<double> p_take;  // P(next day taken | n taken among m days), m < T

  static std::size_t slot(int n, int m) { return static_cast<std::size_t>(m) * (m + 1) / 2 + n; }
  double log_q(int n, int m) const { return logq[slot(n, m)]; }
  double prob_take(int n, int m) const { return p_take[slot(n, m)]; }
};

PredictiveTable make_predictive_table(int horizon, double eta, double sigma) {
  PredictiveTable table;
  table.horizon = horizon;
  table.logq.resize(PredictiveTable::slot(0, horizon + 1));
  table.p_take.resize(PredictiveTable::slot(0, horizon));
  const double inv_var = 1.0 / (sigma * sigma);
  for (int m = 0; m <= horizon; ++m)
    for (int n = 0; n <= m; ++n)
      table.logq[PredictiveTable::slot(n, m)] =
          m == 0 ? 0.0 : log_marginal(DeltaTarget{n, m - n, eta, inv_var}, sigma);
  for (int m = 0; m < horizon; ++m)
    for (int n = 0; n <= m; ++n)
      table.p_take[PredictiveTable::slot(n, m)] = std::exp(table.log_q(n + 1, m + 1) - table.log_q(n, m));
  return table;
}

// Adherence dynamics seen by the particles: i.i.d. Bernoulli(prob) given a
// fixed delta, or the delta-marginal predictive given the running count.
struct AdherenceLaw {
  double prob = 0.5;
  const PredictiveTable* table = nullptr;

  double take(int n_prev, int t) const { return table ? table->prob_take(n_prev, t) : prob; }
};

ParticleStore run_smc(const StateModel& m, const AdherenceLaw& law, int n_particles, Rng& rng,
                      const Trajectory* ref, ResamplingScheme scheme, bool ancestor_sampling) {
  if (ref && n_particles < 2)
    throw InvalidInput("conditional SMC needs at least 2 particles (1 free + reference)");
  if (ref) check_reference(*ref, m);
  const int n = n_particles;
  const int k = m.k;
  const int horizon = m.horizon;
  const int free = ref ? n - 1 : n;

  ParticleStore s;
  s.n = n;
  s.k = k;
  s.horizon = horizon;
  s.alpha.resize(static_cast<std::size_t>(horizon) * n * k);
  s.c.resize(static_cast<std::size_t>(horizon) * n);
  s.ancestor.assign(static_cast<std::size_t>(horizon) * n, -1);
  std::vector<int> count(static_cast<std::size_t>(2) * n, 0);  // taken days so far, two time slices
  int* count_prev = count.data();
  int* count_now = count.data() + n;

  // Taken days in the reference from day t to the end.
  std::vector<int> ref_suffix;
  if (ref) {
    ref_suffix.assign(horizon + 1, 0);
    for (int t = horizon - 1; t >= 0; --t) ref_suffix[t] = ref_suffix[t + 1] + (ref->adherence[t] > 0);
  }

  std::vector<double> w(n, 1.0 / n);
  std::vector<double> logw(n, 0.0);
  std::vector<int> parents;
  std::vector<double> as_logw(n), as_w(n);
  bool uniform = true;

  for (int t = 0; t < horizon; ++t) {
    if (t == 0) {
      const double p0 = law.take(0, 0);
      for (int p = 0; p < free; ++p) {
        const bool taken = rng.bernoulli(p0);
        s.c[p] = taken ? 1 : -1;
        count_now[p] = taken;
        double* a = s.alpha_at(0, p);
        for (int j = 0; j < k; ++j) a[j] = m.sd_zero[j] * rng.normal();
      }
      if (ref) count_now[n - 1] = ref->adherence[0] > 0;
    } else {
      std::swap(count_prev, count_now);
      if (uniform && scheme == ResamplingScheme::Multinomial) {
        parents.resize(free);
        for (int p = 0; p < free; ++p) parents[p] = rng.uniform_int(0, n - 1);
      } else if (scheme == ResamplingScheme::Multinomial) {
        multinomial_resample(w, free, rng, parents);
      } else {
        systematic_resample(w, free, rng, parents);
      }
      int* anc = s.ancestor.data() + static_cast<std::size_t>(t) * n;
      for (int p = 0; p < free; ++p) anc[p] = parents[p];
      if (ref) {
        const int c_ref = ref->adherence[t];
        if (ancestor_sampling) {
          const double* target = ref->alpha.col(t).data();
          double top = kNegInf;
          for (int q = 0; q < n; ++q) {
            double lw = std::log(w[q]) + m.transition_logpdf(target, s.alpha_at(t - 1, q), c_ref);
            if (law.table)
              lw += law.table->log_q(count_prev[q] + ref_suffix[t], horizon) -
                    law.table->log_q(count_prev[q], t);
            as_logw[q] = lw;
            top = std::max(top, lw);
          }
          if (!std::isfinite(top))
            throw NumericalError("ancestor weights vanished (degenerate state noise)");
          for (int q = 0; q < n; ++q) as_w[q] = std::exp(as_logw[q] - top);
          anc[n - 1] = rng.categorical(as_w);
        } else {
          anc[n - 1] = n - 1;
        }
        count_now[n - 1] = count_prev[anc[n - 1]] + (c_ref > 0);
      }
      for (int p = 0; p < free; ++p) {
        const bool taken = rng.bernoulli(law.take(count_prev[anc[p]], t));
        const int c = taken ? 1 : -1;
        count_now[p] = count_prev[anc[p]] + taken;
        s.c[static_cast<std::size_t>(t) * n + p] = static_cast<std::int8_t>(c);
        const double* prev = s.alpha_at(t - 1, anc[p]);
        double* a = s.alpha_at(t, p);
        for (int j = 0; j < k; ++j)
          a[j] = m.rho[j] * prev[j] + m.phi[j] * c + m.sd_nu[j] * rng.normal();
      }
    }
    if (ref) {
      s.c[static_cast<std::size_t>(t) * n + n - 1] = ref->adherence[t];
      double* a = s.alpha_at(t, n - 1);
      for (int j = 0; j < k; ++j) a[j] = ref->alpha(j, t);
    }

    const int oi = m.obs_at[t];
    if (oi >= 0) {
      double top = kNegInf;
      for (int p = 0; p < n; ++p) {
        logw[p] = m.obs_loglik(oi, s.alpha_at(t, p));
        top = std::max(top, logw[p]);
      }
      if (!std::isfinite(top)) throw NumericalError("all particle weights vanished");
      double sum = 0.0;
      for (int p = 0; p < n; ++p) {
        w[p] = std::exp(logw[p] - top);
        sum += w[p];
      }
      for (int p = 0; p < n; ++p) w[p] /= sum;
      s.loglik += top + std::log(sum / n);
      uniform = false;
    } else {
      std::fill(w.begin(), w.end(), 1.0 / n);
      uniform = true;
    }
  }
  s.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), n);
  return s;
}

Trajectory trace_path(const ParticleStore& s, int p, double delta, bool keep_alpha) {
  Trajectory out;
  out.delta = delta;
  out.adherence.resize(s.horizon);
  if (keep_alpha) out.alpha.resize(s.k, s.horizon);
  for (int t = s.horizon - 1; t >= 0; --t) {
    out.adherence[t] = s.c[static_cast<std::size_t>(t) * s.n + p];
    if (keep_alpha) {
      const double* a = s.alpha_at(t, p);
      for (int j = 0; j < s.k; ++j) out.alpha(j, t) = a[j];
    }
    if (t > 0) p = s.ancestor[static_cast<std::size_t>(t) * s.n + p];
  }
  return out;
}

}  // namespace

SmcResult smc_pass(const PatientRecord& patient, const ThetaDraw& theta, double delta,
                   int n_particles, Rng& rng, const Trajectory* reference,
                   ResamplingScheme scheme, bool ancestor_sampling) {
  if (n_particles < 1) throw InvalidInput("n_particles must be >= 1");
  const StateModel m = make_state_model(patient, theta);
  const AdherenceLaw law{sigmoid(delta + m.eta), nullptr};
  const ParticleStore s = run_smc(m, law, n_particles, rng, reference, scheme, ancestor_sampling);
  SmcResult out;
  out.weights = s.weights;
  out.loglik_estimate = s.loglik;
  out.trajectories.reserve(n_particles);
  for (int p = 0; p < n_particles; ++p) out.trajectories.push_back(trace_path(s, p, delta, true));
  return out;
}

Eigen::VectorXd ancestor_weights(const Eigen::VectorXd& reference_alpha, int reference_c,
                                 const Eigen::MatrixXd& previous_alpha,
                                 const Eigen::VectorXd& previous_weights, const ThetaDraw& theta,
                                 double delta, const CovariateVector& x) {
  const auto& h = theta.health;
  const int k = h.n_measures();
  const auto n = static_cast<int>(previous_alpha.cols());
  if (reference_alpha.size() != k || previous_alpha.rows() != k || previous_weights.size() != n)
    throw InvalidInput("ancestor_weights: inconsistent dimensions");
  if (reference_c != 1 && reference_c != -1) throw InvalidInput("reference_c must be +1 or -1");
  const double p_adh = adherence_prob(delta, theta.adherence, x);
  const double log_bern = reference_c > 0 ? std::log(p_adh) : std::log1p(-p_adh);

  Eigen::VectorXd logw(n);
  for (int q = 0; q < n; ++q) {
    double s = std::log(previous_weights[q]) + log_bern;
    for (int j = 0; j < k; ++j) {
      const double mean = h.rho[j] * previous_alpha(j, q) + h.phi[j] * reference_c;
      s += log_normal_pdf(reference_alpha[j], mean, h.sigma_nu[j]);
    }
    logw[q] = s;
  }
  const double top = logw.maxCoeff();
  if (!std::isfinite(top)) throw NumericalError("ancestor weights vanished (degenerate state noise)");
  Eigen::VectorXd w = (logw.array() - top).exp();
  return w / w.sum();
}

double update_delta(double delta, std::span<const std::int8_t> path, const AdherenceParams& theta_a,
                    const CovariateVector& x, double step_size, int steps, Rng& rng) {
  theta_a.validate(x.size());
  DeltaTarget target{0, 0, linear_predictor(theta_a, x),
                     1.0 / (theta_a.sigma_delta * theta_a.sigma_delta)};
  for (auto c : path) (c > 0 ? target.taken : target.not_taken) += 1;
  double mode = 0.0;
  const double scale = step_size * target.laplace_sd(mode);
  double current = target(delta);
  for (int i = 0; i < steps; ++i) {
    const double proposal = delta + scale * rng.normal();
    const double value = target(proposal);
    if (std::log(rng.uniform()) < value - current) {
      delta = proposal;
      current = value;
    }
  }
  return delta;
}

std::vector<Trajectory> pgas_chain(const PatientRecord& patient, const ThetaDraw& theta,
                                   const SmootherConfig& config, Rng& rng,
                                   const Trajectory* initial) {
  config.validate();
  const StateModel m = make_state_model(patient, theta);
  const CovariateVector& x = patient.covariates;

  double delta = 0.0;
  Trajectory ref;
  bool have_ref = false;
  if (initial) {
    check_reference(*initial, m);
    ref = *initial;
    delta = initial->delta;
    have_ref = true;
  } else {
    delta = rng.normal(0.0, theta.adherence.sigma_delta);
  }

  std::optional<PredictiveTable> table;
  if (config.collapse_delta)
    table = make_predictive_table(m.horizon, m.eta, theta.adherence.sigma_delta);

  const int burn = config.burn_in();
  std::vector<Trajectory> draws;
  draws.reserve(config.retained());
  for (int it = 0; it < config.n_iterations; ++it) {
    const AdherenceLaw law = table ? AdherenceLaw{0.5, &*table} : AdherenceLaw{sigmoid(delta + m.eta), nullptr};
    const ParticleStore s = run_smc(m, law, config.n_particles, rng, have_ref ? &ref : nullptr,
                                    config.resampling, true);
    const int pick = rng.categorical(std::span<const double>(s.weights.data(), s.weights.size()));
    ref = trace_path(s, pick, delta, true);
    have_ref = true;
    delta = update_delta(delta, ref.adherence, theta.adherence, x, config.delta_step_size,
                         config.delta_steps, rng);
    ref.delta = delta;
    if (it >= burn) {
      Trajectory kept;
      kept.delta = delta;
      kept.adherence = ref.adherence;
      if (config.keep_alpha) kept.alpha = ref.alpha;
      draws.push_back(std::move(kept));
    }
  }
  return draws;
}

double log_marginal_adherence(int taken, int not_taken, const AdherenceParams& theta_a,
                              const CovariateVector& x) {
  theta_a.validate(x.size());
  if (taken < 0 || not_taken < 0) throw InvalidInput("day counts must be non-negative");
  if (taken + not_taken == 0) return 0.0;
  const double sigma = theta_a.sigma_delta;
  return log_marginal(DeltaTarget{taken, not_taken, linear_predictor(theta_a, x), 1.0 / (sigma * sigma)},
                      sigma);
}

Eigen::VectorXd ImportanceResult::day_marginals() const {
  if (paths.empty()) return {};
  const auto horizon = static_cast<Eigen::Index>(paths.front().size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(horizon);
  for (std::size_t i = 0; i < paths.size(); ++i)
    for (Eigen::Index t = 0; t < horizon; ++t)
      if (paths[i][t] > 0) out[t] += weights[static_cast<Eigen::Index>(i)];
  return out;
}

ImportanceResult importance_smoother(const PatientRecord& patient, const ThetaDraw& theta,
                                     int n_samples, Rng& rng) {
  if (n_samples < 1) throw InvalidInput("n_samples must be >= 1");
  const CovariateVector& x = patient.covariates;
  theta.adherence.validate(x.size());
  theta.health.validate();
  const double eta = linear_predictor(theta.adherence, x);

  ImportanceResult out;
  out.paths.resize(n_samples);
  out.deltas.resize(n_samples);
  Eigen::VectorXd logw(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const double delta = rng.normal(0.0, theta.adherence.sigma_delta);
    const double prob = sigmoid(delta + eta);
    AdherencePath path(patient.horizon);
    for (auto& c : path) c = rng.bernoulli(prob) ? 1 : -1;
    logw[i] = patient.observations.empty() ? 0.0 : kalman_loglik(patient, path, theta.health);
    out.deltas[i] = delta;
    out.paths[i] = std::move(path);
  }
  const double top = logw.maxCoeff();
  Eigen::VectorXd w = (logw.array() - top).exp();
  out.weights = w / w.sum();
  out.ess = 1.0 / out.weights.squaredNorm();
  return out;
}

QuadratureRule gauss_hermite(int n) {
  if (n < 1) throw InvalidInput("quadrature needs at least one node");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) {
    const double b = std::sqrt((i + 1) / 2.0);
    jacobi(i, i + 1) = b;
    jacobi(i + 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  QuadratureRule rule;
  rule.nodes = eig.eigenvalues();
  rule.weights = std::sqrt(std::numbers::pi) * eig.eigenvectors().row(0).array().square().transpose();
  return rule;
}

ExactPosterior enumerate_exact(const PatientRecord& patient, const ThetaDraw& theta,
                               int max_horizon, int quadrature_nodes) {
  const int horizon = patient.horizon;
  if (horizon > max_horizon)
    throw InvalidInput("enumeration limited to horizons <= " + std::to_string(max_horizon));
  if (horizon < 1) throw InvalidInput("horizon must be >= 1");
  const CovariateVector& x = patient.covariates;
  theta.adherence.validate(x.size());
  theta.health.validate();
  const double eta = linear_predictor(theta.adherence, x);
  const double sigma = theta.adherence.sigma_delta;

  // log q(n) = log int p^n (1-p)^(T-n) N(delta; 0, sigma^2) d delta
  const QuadratureRule rule = gauss_hermite(quadrature_nodes);
  std::vector<double> log_q(horizon + 1);
  for (int taken = 0; taken <= horizon; ++taken) {
    double top = kNegInf;
    std::vector<double> terms(quadrature_nodes);
    for (int i = 0; i < quadrature_nodes; ++i) {
      const double delta = std::sqrt(2.0) * sigma * rule.nodes[i];
      terms[i] = std::log(rule.weights[i]) - 0.5 * std::log(std::numbers::pi) +
                 binary_loglik(taken, horizon - taken, delta + eta);
      top = std::max(top, terms[i]);
    }
    double sum = 0.0;
    for (double v : terms) sum += std::exp(v - top);
    log_q[taken] = top + std::log(sum);
  }

  const std::size_t n_paths = std::size_t{1} << horizon;
  Eigen::VectorXd logp(static_cast<Eigen::Index>(n_paths));
  AdherencePath path(horizon);
  for (std::size_t mask = 0; mask < n_paths; ++mask) {
    for (int t = 0; t < horizon; ++t) path[t] = ((mask >> t) & 1U) ? 1 : -1;
    const int taken = std::popcount(mask);
    const double loglik =
        patient.observations.empty() ? 0.0 : kalman_loglik(patient, path, theta.health);
    logp[static_cast<Eigen::Index>(mask)] = log_q[taken] + loglik;
  }
  const double top = logp.maxCoeff();
  Eigen::VectorXd prob = (logp.array() - top).exp();
  const double total = prob.sum();
  prob /= total;

  ExactPosterior out;
  out.log_evidence = top + std::log(total);
  out.path_probabilities = prob;
  out.day_marginals = Eigen::VectorXd::Zero(horizon);
  out.average_pmf = Eigen::VectorXd::Zero(horizon + 1);
  for (std::size_t mask = 0; mask < n_paths; ++mask) {
    const double pm = prob[static_cast<Eigen::Index>(mask)];
    out.average_pmf[std::popcount(mask)] += pm;
    for (int t = 0; t < horizon; ++t)
      if ((mask >> t) & 1U) out.day_marginals[t] += pm;
  }
  return out;
}

Eigen::VectorXd day_marginals(std::span<const Trajectory> draws) {
  if (draws.empty()) return {};
  const int horizon = draws.front().horizon();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(horizon);
  for (const auto& d : draws)
    for (int t = 0; t < horizon; ++t)
      if (d.adherence[t] > 0) out[t] += 1.0;
  return out / static_cast<double>(draws.size());
}

std::vector<Trajectory> smooth_patient_theta(const PatientRecord& patient, const ThetaDraw& theta,
                                             int theta_index, const SmootherConfig& config) {
  Rng rng(derive_seed(config.seed, {0x5300ULL, hash_string(patient.id),
                                    static_cast<std::uint64_t>(theta_index)}));
  return pgas_chain(patient, theta, config, rng);
}

}  // namespace medadhere
