#include "medadhere/mcmc.hpp"

#include "medadhere/types.hpp"

#include <limits>
#include <numeric>

namespace medadhere {

int McmcConfig::burn_in() const {
  return static_cast<int>(std::floor(burn_in_fraction * n_iterations + 1e-9));
}

int McmcConfig::retained_per_chain() const {
  const int kept = n_iterations - burn_in();
  return kept <= 0 ? 0 : (kept + thinning - 1) / thinning;
}

void McmcConfig::validate() const {
  if (n_chains < 1) throw InvalidInput("n_chains must be >= 1");
  if (n_iterations < 1) throw InvalidInput("n_iterations must be >= 1");
  if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
    throw InvalidInput("burn_in_fraction must lie in [0,1)");
  if (thinning < 1) throw InvalidInput("thinning must be >= 1");
  if (retained_per_chain() < 1) throw InvalidInput("no draws retained after burn-in");
}

AdaptiveMetropolis::AdaptiveMetropolis(const Eigen::VectorXd& initial_sd, double target_acceptance)
    : initial_sd_(initial_sd),
      target_(target_acceptance),
      log_scale_(std::log(2.38 / std::sqrt(static_cast<double>(initial_sd.size())))),
      mean_(Eigen::VectorXd::Zero(initial_sd.size())),
      scatter_(Eigen::MatrixXd::Zero(initial_sd.size(), initial_sd.size())) {
  factor_ = initial_sd_.asDiagonal();
}

Eigen::VectorXd AdaptiveMetropolis::propose(const Eigen::VectorXd& current, Rng& rng) const {
  Eigen::VectorXd z(current.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return current + std::exp(log_scale_) * (factor_ * z);
}

void AdaptiveMetropolis::adapt(const Eigen::VectorXd& state, bool accepted) {
  ++count_;
  const double gain = 1.0 / std::pow(static_cast<double>(count_) + 1.0, 0.6);
  log_scale_ += gain * ((accepted ? 1.0 : 0.0) - target_);
  const Eigen::VectorXd delta = state - mean_;
  mean_ += delta / static_cast<double>(count_);
  scatter_ += delta * (state - mean_).transpose();
  const long warmup = 20L * dim() + 50L;
  if (count_ >= warmup && count_ % 25 == 0) refresh_factor();
}

void AdaptiveMetropolis::refresh_factor() {
  Eigen::MatrixXd cov = scatter_ / static_cast<double>(count_ - 1);
  // Small ridge relative to the starting scales keeps the factor well defined.
  cov.diagonal() += 1e-6 * initial_sd_.array().square().matrix();
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) {
    factor_ = llt.matrixL();
  } else {
    factor_ = Eigen::MatrixXd(cov.diagonal().cwiseSqrt().asDiagonal());
  }
}

bool IndependenceProposal::fit(const std::vector<Eigen::VectorXd>& states, double dof,
                               double inflate) {
  ready_ = false;
  if (states.empty()) return false;
  const auto d = states.front().size();
  if (static_cast<Eigen::Index>(states.size()) < d + 2) return false;
  mean_ = Eigen::VectorXd::Zero(d);
  for (const auto& s : states) mean_ += s;
  mean_ /= static_cast<double>(states.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& s : states) cov.noalias() += (s - mean_) * (s - mean_).transpose();
  cov *= inflate * inflate / static_cast<double>(states.size() - 1);
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) return false;
  factor_ = llt.matrixL();
  dof_ = dof;
  ready_ = true;
  return true;
}

Eigen::VectorXd IndependenceProposal::draw(Rng& rng) const {
  Eigen::VectorXd z(mean_.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  std::chi_squared_distribution<double> chi2(dof_);
  const double w = std::sqrt(dof_ / chi2(rng.engine()));
  return mean_ + w * (factor_ * z);
}

double IndependenceProposal::log_density(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd r = factor_.triangularView<Eigen::Lower>().solve(x - mean_);
  const double d = static_cast<double>(mean_.size());
  return -0.5 * (dof_ + d) * std::log1p(r.squaredNorm() / dof_);
}

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(const std::vector<double>& v, double m) {
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

std::vector<std::vector<double>> split_halves(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> out;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    if (half < 2) {
      out.push_back(c);
      continue;
    }
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

}  // namespace

double potential_scale_reduction(const std::vector<std::vector<double>>& chains) {
  const auto split = split_halves(chains);
  const std::size_t m = split.size();
  if (m < 2) return std::numeric_limits<double>::quiet_NaN();
  std::size_t n = split[0].size();
  for (const auto& c : split) n = std::min(n, c.size());
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> means(m), vars(m);
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> c(split[j].begin(), split[j].begin() + static_cast<std::ptrdiff_t>(n));
    means[j] = mean_of(c);
    vars[j] = variance_of(c, means[j]);
  }
  const double grand = mean_of(means);
  double between = 0.0;
  for (double mu : means) between += (mu - grand) * (mu - grand);
  between *= static_cast<double>(n) / static_cast<double>(m - 1);
  const double within = mean_of(vars);
  if (within <= 0.0) return between <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus =
      (static_cast<double>(n) - 1.0) / static_cast<double>(n) * within + between / n;
  return std::sqrt(var_plus / within);
}

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  const auto split = split_halves(chains);
  const std::size_t m = split.size();
  if (m == 0) return 0.0;
  std::size_t n = split[0].size();
  for (const auto& c : split) n = std::min(n, c.size());
  if (n < 4) return static_cast<double>(m * n);
  std::vector<double> means(m), vars(m);
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> c(split[j].begin(), split[j].begin() + static_cast<std::ptrdiff_t>(n));
    means[j] = mean_of(c);
    vars[j] = variance_of(c, means[j]);
  }
  const double grand = mean_of(means);
  double between = 0.0;
  if (m > 1) {
    for (double mu : means) between += (mu - grand) * (mu - grand);
    between *= static_cast<double>(n) / static_cast<double>(m - 1);
  }
  const double within = mean_of(vars);
  const double var_plus =
      (static_cast<double>(n) - 1.0) / static_cast<double>(n) * within + between / n;
  if (var_plus <= 0.0) return static_cast<double>(m * n);

  auto rho_at = [&](std::size_t lag) {
    double variogram = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t i = lag; i < n; ++i) {
        const double d = split[j][i] - split[j][i - lag];
        variogram += d * d;
      }
    variogram /= static_cast<double>(m * (n - lag));
    return 1.0 - variogram / (2.0 * var_plus);
  };
  double sum = 0.0;
  for (std::size_t t = 1; t + 1 < n; t += 2) {
    const double pair = rho_at(t) + rho_at(t + 1);
    if (pair < 0.0) break;
    sum += pair;
  }
  const double tau = std::max(1.0 + 2.0 * sum, 1.0 / std::log10(static_cast<double>(m * n)));
  return static_cast<double>(m * n) / tau;
}

}  // namespace medadhere
