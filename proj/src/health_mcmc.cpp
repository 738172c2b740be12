#include "medadhere/health_mcmc.hpp"

#include "medadhere/kalman.hpp"
#include "medadhere/model.hpp"
#include "medadhere/parallel.hpp"

#include <algorithm>
#include <memory>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_map>

namespace medadhere {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kBetaVariance = 400.0;
constexpr double kPhiVariance = 25.0;
constexpr double kInterceptMeans[] = {120.0, 80.0};

double log_uniform(double x, double lo, double hi) {
  return (x > lo && x < hi) ? -std::log(hi - lo) : kNegInf;
}

AdherencePath complete_path(const PatientRecord& patient) {
  AdherencePath path(patient.adherence.size());
  for (std::size_t t = 0; t < path.size(); ++t) {
    switch (patient.adherence[t]) {
      case AdherenceDay::Taken: path[t] = 1; break;
      case AdherenceDay::NotTaken: path[t] = -1; break;
      case AdherenceDay::Missing:
        throw InvalidInput("patient " + patient.id + " has missing adherence; impute first");
    }
  }
  return path;
}

// Observed components of one patient, in day order.
struct ObservedValue {
  int day;
  int comp;
  double value;
};

struct PreparedPatient {
  const PatientRecord* record;
  AdherencePath path;
  std::vector<ObservedValue> values;
  int last_day = 0;
};

PreparedPatient prepare(const PatientRecord& patient, AdherencePath path) {
  PreparedPatient pp{&patient, std::move(path), {}, 0};
  for (const auto& o : patient.observations)
    for (int j = 0; j < static_cast<int>(o.values.size()); ++j)
      if (o.values[j]) {
        pp.values.push_back({o.day, j, *o.values[j]});
        pp.last_day = o.day;
      }
  return pp;
}

// Sufficient statistics of the Gaussian model y = A theta + e, e ~ N(0, S), summed over
// patients after whitening by chol(S). theta = (beta column-major K x p, phi).
struct LinearStats {
  Eigen::MatrixXd gram;  // A' S^-1 A
  Eigen::VectorXd cross; // A' S^-1 y
  double yy = 0.0;       // y' S^-1 y
  double logdet = 0.0;   // log |S|
  int n = 0;
};

class LinearModel {
 public:
  LinearModel(int k, int p) : k_(k), p_(p), q_(k * p + k) {
    prior_mean_ = Eigen::VectorXd::Zero(q_);
    prior_prec_ = Eigen::VectorXd::Constant(q_, 1.0 / kBetaVariance);
    for (int j = 0; j < std::min(k, 2); ++j) prior_mean_[j] = kInterceptMeans[j];
    prior_prec_.tail(k).setConstant(1.0 / kPhiVariance);
  }

  int dim() const { return q_; }

  // False when some innovation covariance is not positive definite.
  //
  // Row r of the design is (e_j (x) x, g_r e_j) for its measure j, so after
  // whitening by L^-1 it is (x (x) b_r, f_r) with b = L^-1 E and f = L^-1 (E g).
  // Only the K x K sums of b b', b f', f f' and the K-vectors b'y, f'y are needed.
  bool accumulate(const HealthParams& h, const Eigen::MatrixXd& eps, const PreparedPatient& pp,
                  LinearStats& st) {
    const int d = static_cast<int>(pp.values.size());
    if (d == 0) return true;
    const int horizon = pp.last_day;
    mean_.resize(k_, horizon);
    var_.resize(k_, horizon);
    for (int j = 0; j < k_; ++j) {
      double g = 0.0;
      double v = h.sigma_zero[j] * h.sigma_zero[j];
      const double r2 = h.rho[j] * h.rho[j];
      const double nu2 = h.sigma_nu[j] * h.sigma_nu[j];
      mean_(j, 0) = 0.0;
      var_(j, 0) = v;
      for (int t = 1; t < horizon; ++t) {
        g = h.rho[j] * g + pp.path[t];
        v = r2 * v + nu2;
        mean_(j, t) = g;
        var_(j, t) = v;
      }
    }

    // Lower Cholesky factor of the covariance, built row by row.
    l_.resize(d, d);
    for (int r = 0; r < d; ++r) {
      const auto& vr = pp.values[r];
      for (int col = 0; col <= r; ++col) {
        const auto& vc = pp.values[col];
        double cov = 0.0;
        if (vc.comp == vr.comp) cov = std::pow(h.rho[vr.comp], vr.day - vc.day) * var_(vr.comp, vc.day - 1);
        if (vc.day == vr.day) cov += eps(vr.comp, vc.comp);
        for (int m = 0; m < col; ++m) cov -= l_(r, m) * l_(col, m);
        if (col < r) {
          l_(r, col) = cov / l_(col, col);
        } else {
          if (!(cov > 0.0)) return false;
          l_(r, r) = std::sqrt(cov);
          st.logdet += std::log(cov);
        }
      }
    }

    // Forward substitution for b (d x K), f (d x K) and y.
    b_.setZero(d, k_);
    f_.setZero(d, k_);
    y_.resize(d);
    for (int r = 0; r < d; ++r) {
      const auto& vr = pp.values[r];
      b_(r, vr.comp) = 1.0;
      f_(r, vr.comp) = mean_(vr.comp, vr.day - 1);
      double yr = vr.value;
      for (int m = 0; m < r; ++m) {
        const double lrm = l_(r, m);
        yr -= lrm * y_[m];
        for (int j = 0; j < k_; ++j) {
          b_(r, j) -= lrm * b_(m, j);
          f_(r, j) -= lrm * f_(m, j);
        }
      }
      const double inv = 1.0 / l_(r, r);
      y_[r] = yr * inv;
      for (int j = 0; j < k_; ++j) {
        b_(r, j) *= inv;
        f_(r, j) *= inv;
      }
    }
    bb_.noalias() = b_.transpose() * b_;
    bf_.noalias() = b_.transpose() * f_;
    ff_.noalias() = f_.transpose() * f_;
    by_.noalias() = b_.transpose() * y_;
    fy_.noalias() = f_.transpose() * y_;

    const auto& x = pp.record->covariates.values;
    const int phi0 = k_ * p_;
    for (int c1 = 0; c1 < p_; ++c1) {
      if (x[c1] == 0.0) continue;
      for (int j = 0; j < k_; ++j) {
        const int row = j + k_ * c1;
        st.cross[row] += x[c1] * by_[j];
        for (int c2 = 0; c2 < p_; ++c2) {
          if (x[c2] == 0.0) continue;
          const double xx = x[c1] * x[c2];
          for (int l = 0; l < k_; ++l) st.gram(row, l + k_ * c2) += xx * bb_(j, l);
        }
        for (int l = 0; l < k_; ++l) {
          st.gram(row, phi0 + l) += x[c1] * bf_(j, l);
          st.gram(phi0 + l, row) += x[c1] * bf_(j, l);
        }
      }
    }
    for (int j = 0; j < k_; ++j) {
      st.cross[phi0 + j] += fy_[j];
      for (int l = 0; l < k_; ++l) st.gram(phi0 + j, phi0 + l) += ff_(j, l);
    }
    st.yy += y_.squaredNorm();
    st.n += d;
    return true;
  }

  // Integrates theta out against its Gaussian prior.
  HealthLinearConditional conditional(const LinearStats& st) const {
    HealthLinearConditional out;
    Eigen::MatrixXd prec = st.gram;
    prec.diagonal() += prior_prec_;
    const Eigen::VectorXd rhs = st.cross + prior_prec_.cwiseProduct(prior_mean_);
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success) {
      out.log_marginal = kNegInf;
      return out;
    }
    out.mean = llt.solve(rhs);
    double logdet_prec = 0.0;
    for (int i = 0; i < q_; ++i) logdet_prec += 2.0 * std::log(llt.matrixL()(i, i));
    const double quad = st.yy + prior_mean_.dot(prior_prec_.cwiseProduct(prior_mean_)) - rhs.dot(out.mean);
    out.log_marginal = -0.5 * (st.n * std::log(2.0 * std::numbers::pi) + st.logdet + quad) +
                       0.5 * prior_prec_.array().log().sum() - 0.5 * logdet_prec;
    out.precision_factor = llt.matrixL();
    return out;
  }

  LinearStats empty_stats() const {
    return {Eigen::MatrixXd::Zero(q_, q_), Eigen::VectorXd::Zero(q_), 0.0, 0.0, 0};
  }

 private:
  int k_, p_, q_;
  Eigen::VectorXd prior_mean_, prior_prec_;
  Eigen::MatrixXd mean_, var_, l_, b_, f_, bb_, bf_, ff_;
  Eigen::VectorXd y_, by_, fy_;
};

HealthLinearConditional linear_conditional(const HealthParams& h,
                                           const std::vector<PreparedPatient>& patients,
                                           LinearModel& model) {
  LinearStats st = model.empty_stats();
  const Eigen::MatrixXd eps = h.eps_covariance();
  for (const auto& pp : patients)
    if (!model.accumulate(h, eps, pp, st)) return {kNegInf, {}, {}};
  return model.conditional(st);
}

// Metropolis coordinates. With sparse visits the data pin down each measure's
// total variance V = sigma_eps^2 + sigma_nu^2 / (1 - rho^2) and the same-day
// noise covariance far better than the split between noise and state, so the
// sampler works on
//   [atanh rho (K) | log V (K) | logit(2 w / pi) (K) | atanh kappa | logit(sigma_zero / upper) (K)]
// with s = sigma_eps^2 / V = cos^2 w and kappa = rho_eps * g, g = geometric
// mean of s. The angle w splits V between noise and state; flat priors on
// both scales are flat in w, so neither end of the split has a long tail.
// The same holds for sigma_zero on the logit scale of its support.
constexpr double kHalfPi = 1.5707963267948966;

struct Coordinates {
  int k;
  int rho() const { return 0; }
  int total() const { return k; }
  int share() const { return 2 * k; }
  int kappa() const { return 3 * k; }
  int sigma_zero() const { return 3 * k + 1; }
  int size() const { return 4 * k + 1; }
};

double share_mean(const Eigen::VectorXd& share) { return std::exp(share.array().log().mean()); }

Eigen::VectorXd to_unconstrained(const HealthParams& h) {
  const int k = h.n_measures();
  const Coordinates c{k};
  Eigen::VectorXd u(c.size());
  Eigen::VectorXd share(k);
  for (int j = 0; j < k; ++j) {
    const double eps2 = h.sigma_eps[j] * h.sigma_eps[j];
    const double total = eps2 + h.sigma_nu[j] * h.sigma_nu[j] / (1.0 - h.rho[j] * h.rho[j]);
    share[j] = eps2 / total;
    u[c.rho() + j] = std::atanh(h.rho[j]);
    u[c.total() + j] = std::log(total);
    const double q = std::acos(std::sqrt(share[j])) / kHalfPi;
    u[c.share() + j] = std::log(q / (1.0 - q));
    const double z = h.sigma_zero[j] / kSigmaZeroUpper;
    u[c.sigma_zero() + j] = std::log(z / (1.0 - z));
  }
  u[c.kappa()] = std::atanh(h.rho_eps * share_mean(share));
  return u;
}

// Writes the Metropolis coordinates into h, leaving beta and phi untouched.
// Returns false when the implied rho_eps leaves (-1, 1).
bool from_unconstrained(const Eigen::VectorXd& u, HealthParams& h) {
  const int k = h.n_measures();
  const Coordinates c{k};
  Eigen::VectorXd share(k);
  for (int j = 0; j < k; ++j) {
    const double rho = std::tanh(u[c.rho() + j]);
    const double total = std::exp(u[c.total() + j]);
    const double w = kHalfPi / (1.0 + std::exp(-u[c.share() + j]));
    share[j] = std::cos(w) * std::cos(w);
    h.rho[j] = rho;
    h.sigma_eps[j] = std::sqrt(share[j] * total);
    h.sigma_nu[j] = std::sqrt((1.0 - share[j]) * total * (1.0 - rho * rho));
    h.sigma_zero[j] = kSigmaZeroUpper / (1.0 + std::exp(-u[c.sigma_zero() + j]));
  }
  h.rho_eps = std::tanh(u[c.kappa()]) / share_mean(share);
  return std::abs(h.rho_eps) < 1.0;
}

// log |d psi / d u| up to a constant, psi = (rho, sigma_eps, rho_eps, sigma_nu, sigma_zero).
double log_jacobian(const HealthParams& h) {
  // Natural coordinates (atanh rho, log sigma, atanh rho_eps) to psi.
  double s = (1.0 - h.rho.array().square()).log().sum();
  s += std::log(1.0 - h.rho_eps * h.rho_eps);
  s += h.sigma_eps.array().log().sum() + h.sigma_nu.array().log().sum() +
       h.sigma_zero.array().log().sum();
  // u to the natural coordinates: |d logit s / d u| = q (1 - q) / sqrt(s (1 - s))
  // times constants for the variance split, q = 2 w / pi,
  // d atanh rho_eps / d atanh kappa = (1 - kappa^2) / ((1 - rho_eps^2) g) and
  // d log sigma_zero / d u = 1 - sigma_zero / upper.
  const int k = h.n_measures();
  Eigen::VectorXd share(k);
  for (int j = 0; j < k; ++j) {
    const double eps2 = h.sigma_eps[j] * h.sigma_eps[j];
    share[j] = eps2 / (eps2 + h.sigma_nu[j] * h.sigma_nu[j] / (1.0 - h.rho[j] * h.rho[j]));
  }
  for (int j = 0; j < k; ++j) {
    const double q = std::acos(std::sqrt(share[j])) / kHalfPi;
    s += std::log(q) + std::log1p(-q) - 0.5 * std::log(share[j] * (1.0 - share[j]));
  }
  const double g = share_mean(share);
  const double kappa = h.rho_eps * g;
  s += std::log(1.0 - kappa * kappa) - std::log(1.0 - h.rho_eps * h.rho_eps) - std::log(g);
  s += (1.0 - h.sigma_zero.array() / kSigmaZeroUpper).log().sum();
  return s;
}

// Prior terms of the Metropolis coordinates (uniform supports only).
double log_prior_scales(const HealthParams& h) {
  const int k = h.n_measures();
  double s = 0.0;
  for (int j = 0; j < k; ++j) {
    s += log_uniform(h.rho[j], -1.0, 1.0);
    s += log_uniform(h.sigma_eps[j], 0.0, kSigmaEpsUpper);
    s += log_uniform(h.sigma_nu[j], 0.0, kSigmaNuUpper);
    s += log_uniform(h.sigma_zero[j], 0.0, kSigmaZeroUpper);
  }
  s += log_uniform(h.rho_eps, -1.0, 1.0);
  if (k > 1 && !(h.rho_eps > -1.0 / static_cast<double>(k - 1))) return kNegInf;
  return std::isnan(s) ? kNegInf : s;
}

void set_linear(HealthParams& h, const Eigen::VectorXd& theta) {
  const int k = h.n_measures();
  const int p = h.n_covariates();
  h.beta = Eigen::Map<const Eigen::MatrixXd>(theta.data(), k, p);
  h.phi = theta.tail(k);
}

HealthParams initial_guess(const std::vector<PreparedPatient>& patients, int k, int p, Rng& rng) {
  std::vector<double> sum(k, 0.0), sumsq(k, 0.0);
  std::vector<int> count(k, 0);
  for (const auto& pp : patients)
    for (const auto& v : pp.values) {
      sum[v.comp] += v.value;
      sumsq[v.comp] += v.value * v.value;
      ++count[v.comp];
    }
  HealthParams h;
  h.beta = Eigen::MatrixXd::Zero(k, p);
  h.rho.resize(k);
  h.phi = Eigen::VectorXd::Zero(k);
  h.sigma_eps.resize(k);
  h.sigma_nu.resize(k);
  h.sigma_zero.resize(k);
  h.rho_eps = std::clamp(rng.normal(0.0, 0.3), -0.5, 0.5);
  for (int j = 0; j < k; ++j) {
    const double mean = count[j] > 0 ? sum[j] / count[j] : (j < 2 ? kInterceptMeans[j] : 0.0);
    const double var = count[j] > 1 ? std::max(sumsq[j] / count[j] - mean * mean, 1.0) : 25.0;
    const double sd = std::clamp(std::sqrt(var), 1.0, 25.0);
    // Over-dispersed around a split of the marginal spread into noise and state.
    h.beta(j, 0) = mean;
    h.rho[j] = std::clamp(0.5 + rng.normal(0.0, 0.25), -0.9, 0.95);
    h.sigma_eps[j] = std::clamp(0.6 * sd * std::exp(rng.normal(0.0, 0.3)), 0.5, 25.0);
    h.sigma_zero[j] = std::clamp(0.5 * sd * std::exp(rng.normal(0.0, 0.3)), 0.5, 25.0);
    h.sigma_nu[j] = std::clamp(0.2 * sd * std::exp(rng.normal(0.0, 0.3)), 0.2, 8.0);
  }
  return h;
}

// Metropolis on the scale/correlation/persistence coordinates with (beta, phi)
// integrated out, followed by an exact draw of (beta, phi) from its Gaussian
// conditional. Burn-in and sampling are separate phases so that the chains of
// one imputation can share an independence proposal fitted on their pooled
// late burn-in states.
class HealthChain {
 public:
  HealthChain(const std::vector<PreparedPatient>& patients, int k, int p, const McmcConfig& config,
              int imputation, int chain)
      : patients_(&patients),
        config_(&config),
        imputation_(imputation),
        chain_(chain),
        rng_(derive_seed(config.seed, {0x4EA1ULL, static_cast<std::uint64_t>(imputation),
                                       static_cast<std::uint64_t>(chain)})),
        model_(k, p),
        kernel_(Eigen::VectorXd::Zero(0), config.target_acceptance),
        z_(model_.dim()) {
    for (int attempt = 0; attempt < 100 && !std::isfinite(logp_); ++attempt) {
      h_ = initial_guess(patients, k, p, rng_);
      u_ = to_unconstrained(h_);
      logp_ = target(u_, current_);
    }
    if (!std::isfinite(logp_)) throw NumericalError("could not find a valid starting point for theta_h");
    from_unconstrained(u_, h_);
    kernel_ = AdaptiveMetropolis(Eigen::VectorXd::Constant(u_.size(), 0.05), config.target_acceptance);
  }

  // Runs burn-in and returns the states of its second half.
  std::vector<Eigen::VectorXd> burn_in() {
    const int burn = config_->burn_in();
    std::vector<Eigen::VectorXd> late;
    for (int iter = 0; iter < burn; ++iter) {
      step(nullptr, true);
      if (iter >= burn / 2) late.push_back(u_);
    }
    return late;
  }

  // After burn-in, half the updates come from the shared independence proposal.
  std::vector<HealthDraw> sample(const IndependenceProposal& independent) {
    const int burn = config_->burn_in();
    std::vector<HealthDraw> draws;
    draws.reserve(config_->retained_per_chain());
    for (int iter = burn; iter < config_->n_iterations; ++iter) {
      step(independent.ready() ? &independent : nullptr, false);
      if ((iter - burn) % config_->thinning == 0) draws.push_back({imputation_, chain_, iter, h_});
    }
    return draws;
  }

 private:
  double target(const Eigen::VectorXd& u, HealthLinearConditional& cond) {
    if (!u.allFinite()) return kNegInf;
    HealthParams trial = h_;
    if (!from_unconstrained(u, trial)) return kNegInf;
    const double prior = log_prior_scales(trial);
    if (!std::isfinite(prior)) return kNegInf;
    cond = linear_conditional(trial, *patients_, model_);
    return cond.log_marginal + prior + log_jacobian(trial);
  }

  void step(const IndependenceProposal* independent, bool adapt) {
    auto logdens = [&](const Eigen::VectorXd& cand) { return target(cand, proposal_cond_); };
    const bool accepted = (independent && rng_.uniform() < 0.5)
                              ? independence_step(u_, logp_, *independent, logdens, rng_)
                              : metropolis_step(u_, logp_, kernel_, logdens, rng_, adapt);
    if (accepted) {
      std::swap(current_, proposal_cond_);
      from_unconstrained(u_, h_);
    }
    for (Eigen::Index i = 0; i < z_.size(); ++i) z_[i] = rng_.normal();
    const Eigen::VectorXd theta =
        current_.mean + current_.precision_factor.transpose().triangularView<Eigen::Upper>().solve(z_);
    set_linear(h_, theta);
  }

  const std::vector<PreparedPatient>* patients_;
  const McmcConfig* config_;
  int imputation_;
  int chain_;
  Rng rng_;
  LinearModel model_;
  AdaptiveMetropolis kernel_;
  HealthParams h_;
  HealthLinearConditional current_, proposal_cond_;
  Eigen::VectorXd u_, z_;
  double logp_ = kNegInf;
};

}  // namespace

double HealthPosterior::max_rhat() const {
  double worst = 0.0;
  for (const auto& d : diagnostics) worst = std::max(worst, d.rhat);
  return worst;
}

double log_prior_health(const HealthParams& h) {
  const int k = h.n_measures();
  const int p = h.n_covariates();
  if (h.rho.size() != k || h.phi.size() != k || h.sigma_eps.size() != k ||
      h.sigma_nu.size() != k || h.sigma_zero.size() != k)
    throw InvalidInput("health parameter vectors must all have K entries");
  double s = 0.0;
  const double beta_sd = std::sqrt(kBetaVariance);
  for (int j = 0; j < k; ++j) {
    s += log_uniform(h.rho[j], -1.0, 1.0);
    s += log_normal_pdf(h.phi[j], 0.0, std::sqrt(kPhiVariance));
    s += log_uniform(h.sigma_eps[j], 0.0, kSigmaEpsUpper);
    s += log_uniform(h.sigma_nu[j], 0.0, kSigmaNuUpper);
    s += log_uniform(h.sigma_zero[j], 0.0, kSigmaZeroUpper);
    for (int c = 0; c < p; ++c) {
      const double mean = (c == 0 && j < 2) ? kInterceptMeans[j] : 0.0;
      s += log_normal_pdf(h.beta(j, c), mean, beta_sd);
    }
  }
  s += log_uniform(h.rho_eps, -1.0, 1.0);
  if (k > 1 && !(h.rho_eps > -1.0 / static_cast<double>(k - 1))) return kNegInf;
  return std::isnan(s) ? kNegInf : s;
}

double log_posterior_health(const HealthParams& params, std::span<const PatientRecord> cohort) {
  const double prior = log_prior_health(params);
  if (!std::isfinite(prior)) return kNegInf;
  double s = prior;
  for (const auto& patient : cohort) {
    const AdherencePath path = complete_path(patient);
    try {
      s += kalman_loglik(patient, path, params);
    } catch (const NumericalError&) {
      return kNegInf;
    }
  }
  return s;
}

HealthLinearConditional health_linear_conditional(const HealthParams& params,
                                                  std::span<const PatientRecord> cohort) {
  params.validate();
  std::vector<PreparedPatient> prepared;
  for (const auto& patient : cohort) {
    patient.validate(params.n_measures());
    prepared.push_back(prepare(patient, complete_path(patient)));
  }
  LinearModel model(params.n_measures(), params.n_covariates());
  return linear_conditional(params, prepared, model);
}

std::vector<std::vector<PatientRecord>> impute_missing_adherence(
    std::span<const PatientRecord> cohort, const AdherencePosterior& posterior, int m, Rng& rng) {
  if (m < 1) throw InvalidInput("number of imputations must be >= 1");
  if (posterior.draws.empty()) throw InvalidInput("adherence posterior has no draws");
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < posterior.patient_ids.size(); ++i)
    index.emplace(posterior.patient_ids[i], static_cast<int>(i));

  std::vector<std::vector<PatientRecord>> out;
  out.reserve(m);
  for (int r = 0; r < m; ++r) {
    const auto& draw =
        posterior.draws[rng.uniform_int(0, static_cast<int>(posterior.draws.size()) - 1)];
    std::vector<PatientRecord> copy(cohort.begin(), cohort.end());
    for (auto& patient : copy) {
      if (patient.count(AdherenceDay::Missing) == 0) continue;
      auto it = index.find(patient.id);
      if (it == index.end())
        throw InvalidInput("patient " + patient.id + " has no random-effect draws");
      const double prob = adherence_prob(draw.deltas[it->second], draw.params, patient.covariates);
      for (auto& day : patient.adherence)
        if (day == AdherenceDay::Missing)
          day = rng.bernoulli(prob) ? AdherenceDay::Taken : AdherenceDay::NotTaken;
    }
    out.push_back(std::move(copy));
  }
  return out;
}

std::vector<std::string> health_parameter_names(const HealthParams& shape,
                                                const std::vector<std::string>& covariate_names) {
  const int k = shape.n_measures();
  const int p = shape.n_covariates();
  std::vector<std::string> names;
  for (int j = 0; j < k; ++j)
    for (int c = 0; c < p; ++c) {
      const std::string cov = c < static_cast<int>(covariate_names.size()) ? covariate_names[c]
                                                                             : std::to_string(c);
      names.push_back("beta[" + std::to_string(j + 1) + "," + cov + "]");
    }
  auto per_measure = [&](const std::string& base) {
    for (int j = 0; j < k; ++j) names.push_back(base + "[" + std::to_string(j + 1) + "]");
  };
  per_measure("rho");
  per_measure("phi");
  per_measure("sigma_eps");
  names.emplace_back("rho_eps");
  per_measure("sigma_nu");
  per_measure("sigma_zero");
  return names;
}

Eigen::VectorXd flatten_health(const HealthParams& h) {
  const int k = h.n_measures();
  const int p = h.n_covariates();
  Eigen::VectorXd v(k * p + 5 * k + 1);
  int i = 0;
  for (int j = 0; j < k; ++j)
    for (int c = 0; c < p; ++c) v[i++] = h.beta(j, c);
  for (int j = 0; j < k; ++j) v[i++] = h.rho[j];
  for (int j = 0; j < k; ++j) v[i++] = h.phi[j];
  for (int j = 0; j < k; ++j) v[i++] = h.sigma_eps[j];
  v[i++] = h.rho_eps;
  for (int j = 0; j < k; ++j) v[i++] = h.sigma_nu[j];
  for (int j = 0; j < k; ++j) v[i++] = h.sigma_zero[j];
  return v;
}

HealthPosterior fit_health(std::span<const std::vector<PatientRecord>> completed,
                           const McmcConfig& config) {
  config.validate();
  if (completed.empty() || completed.front().empty())
    throw InvalidInput("health fit needs at least one non-empty completed cohort");
  const int p = completed.front().front().covariates.size();
  int k = 0;
  for (const auto& cohort : completed)
    for (const auto& patient : cohort)
      for (const auto& obs : patient.observations) k = std::max(k, static_cast<int>(obs.values.size()));
  if (k == 0) throw InvalidInput("health fit needs at least one observation");

  const int m = static_cast<int>(completed.size());
  std::vector<std::vector<PreparedPatient>> prepared(m);
  for (int r = 0; r < m; ++r) {
    for (const auto& patient : completed[r]) {
      patient.validate(k);
      if (patient.covariates.size() != p)
        throw InvalidInput("patient " + patient.id + " has a different covariate count");
      prepared[r].push_back(prepare(patient, complete_path(patient)));
    }
  }

  const int cells = m * config.n_chains;
  std::vector<std::unique_ptr<HealthChain>> chains(cells);
  std::vector<std::vector<Eigen::VectorXd>> late(cells);
  parallel_for(cells, config.threads, [&](int cell) {
    const int r = cell / config.n_chains;
    chains[cell] = std::make_unique<HealthChain>(prepared[r], k, p, config, r, cell % config.n_chains);
    late[cell] = chains[cell]->burn_in();
  });
  std::vector<IndependenceProposal> proposals(m);
  for (int r = 0; r < m; ++r) {
    std::vector<Eigen::VectorXd> pooled;
    for (int c = 0; c < config.n_chains; ++c) {
      auto& l = late[r * config.n_chains + c];
      pooled.insert(pooled.end(), std::make_move_iterator(l.begin()), std::make_move_iterator(l.end()));
    }
    proposals[r].fit(pooled);
  }
  std::vector<std::vector<HealthDraw>> outputs(cells);
  parallel_for(cells, config.threads, [&](int cell) {
    outputs[cell] = chains[cell]->sample(proposals[cell / config.n_chains]);
    chains[cell].reset();
  });

  HealthPosterior post;
  post.covariate_names = completed.front().front().covariates.names;
  for (auto& o : outputs)
    for (auto& d : o) post.draws.push_back(std::move(d));

  const auto names = health_parameter_names(post.draws.front().params, post.covariate_names);
  const int dim = static_cast<int>(names.size());
  std::vector<ParameterDiagnostics> diags(dim);
  for (int i = 0; i < dim; ++i) diags[i] = {names[i], 0.0, 0.0};
  for (int r = 0; r < m; ++r) {
    std::vector<std::vector<std::vector<double>>> chains(
        dim, std::vector<std::vector<double>>(config.n_chains));
    for (const auto& d : post.draws) {
      if (d.imputation != r) continue;
      const Eigen::VectorXd v = flatten_health(d.params);
      for (int i = 0; i < dim; ++i) chains[i][d.chain].push_back(v[i]);
    }
    for (int i = 0; i < dim; ++i) {
      const double rhat = potential_scale_reduction(chains[i]);
      diags[i].rhat = std::isnan(rhat) ? diags[i].rhat : std::max(diags[i].rhat, rhat);
      diags[i].ess += effective_sample_size(chains[i]);
    }
  }
  post.diagnostics = std::move(diags);
  return post;
}

}  // namespace medadhere
