#include "medadhere/adherence_mcmc.hpp"

#include "medadhere/model.hpp"
#include "medadhere/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace medadhere {

int AdherencePosterior::patient_index(const std::string& id) const {
  auto it = std::find(patient_ids.begin(), patient_ids.end(), id);
  if (it == patient_ids.end())
    throw InvalidInput("patient " + id + " has no random-effect draws");
  return static_cast<int>(it - patient_ids.begin());
}

double AdherencePosterior::max_rhat() const {
  double worst = 0.0;
  for (const auto& d : diagnostics) worst = std::max(worst, d.rhat);
  return worst;
}

double log_posterior_adherence(const AdherenceParams& params, const Eigen::VectorXd& deltas,
                               std::span<const PatientRecord> cohort) {
  if (static_cast<std::size_t>(deltas.size()) != cohort.size())
    throw InvalidInput("one random effect per patient is required");
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (!(params.sigma_delta > 0.0) || params.sigma_delta > kSigmaDeltaBound) return kNegInf;
  if ((params.lambda.array().abs() > kLambdaBound).any()) return kNegInf;
  double total = 0.0;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& patient = cohort[i];
    const double delta = deltas[static_cast<Eigen::Index>(i)];
    total += adherence_loglik(patient.adherence, delta, params, patient.covariates);
    total += log_normal_pdf(delta, 0.0, params.sigma_delta);
  }
  return total;
}

namespace {

struct AdherenceData {
  Eigen::MatrixXd x;  // n x p
  Eigen::VectorXi taken;
  Eigen::VectorXi not_taken;
};

struct ChainTrace {
  std::vector<AdherenceDraw> draws;
};

double block_loglik(const AdherenceData& data, const Eigen::VectorXd& eta) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    s += binary_loglik(data.taken[i], data.not_taken[i], eta[i]);
  return s;
}

ChainTrace run_chain(const AdherenceData& data, const McmcConfig& config, int chain) {
  const auto n = static_cast<int>(data.x.rows());
  const auto p = static_cast<int>(data.x.cols());
  Rng rng(derive_seed(config.seed, {0xADE0ULL, static_cast<std::uint64_t>(chain)}));

  // Over-dispersed start around the pooled logit.
  const double pooled = (data.taken.sum() + 0.5) / (data.taken.sum() + data.not_taken.sum() + 1.0);
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(p);
  lambda[0] = std::log(pooled / (1.0 - pooled));
  for (int j = 0; j < p; ++j) lambda[j] += rng.normal(0.0, 0.5);
  Eigen::VectorXd deltas(n);
  for (int i = 0; i < n; ++i) deltas[i] = rng.normal(0.0, 0.5);
  double log_sigma = rng.normal(0.0, 0.3);

  Eigen::VectorXd xb = data.x * lambda;

  Eigen::VectorXd lambda_sd = Eigen::VectorXd::Constant(p, 0.05);
  AdaptiveMetropolis lambda_kernel(lambda_sd, config.target_acceptance);
  std::vector<ScalarWalk> delta_walks(n, ScalarWalk{std::log(0.8), 0, 0.44});
  ScalarWalk sigma_walk{std::log(0.1), 0, 0.44};
  const Eigen::LLT<Eigen::MatrixXd> gram(data.x.transpose() * data.x);
  if (gram.info() != Eigen::Success)
    throw InvalidInput("covariate matrix is rank deficient; the coefficients are not identified");

  const int burn = config.burn_in();
  ChainTrace trace;
  trace.draws.reserve(config.retained_per_chain());

  auto lambda_logdens = [&](const Eigen::VectorXd& lam) {
    if ((lam.array().abs() > kLambdaBound).any()) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd eta = data.x * lam + deltas;
    return block_loglik(data, eta);
  };

  double lambda_logp = lambda_logdens(lambda);
  for (int iter = 0; iter < config.n_iterations; ++iter) {
    const bool adapt = iter < burn;
    const double sigma = std::exp(log_sigma);
    const double inv_var = 1.0 / (sigma * sigma);

    // lambda | deltas
    lambda_logp = lambda_logdens(lambda);
    if (metropolis_step(lambda, lambda_logp, lambda_kernel, lambda_logdens, rng, adapt))
      xb = data.x * lambda;

    // delta_i | lambda, sigma
    for (int i = 0; i < n; ++i) {
      auto& walk = delta_walks[i];
      const double cur = deltas[i];
      const double prop = cur + std::exp(walk.log_sd) * rng.normal();
      const double log_ratio =
          binary_loglik(data.taken[i], data.not_taken[i], prop + xb[i]) -
          binary_loglik(data.taken[i], data.not_taken[i], cur + xb[i]) +
          0.5 * (cur * cur - prop * prop) * inv_var;
      const bool accept = std::log(rng.uniform()) < log_ratio;
      if (accept) deltas[i] = prop;
      if (adapt) walk.adapt(accept);
    }

    // sigma_delta | deltas, on the log scale (flat prior in sigma => +u Jacobian)
    {
      const double ss = deltas.squaredNorm();
      auto target = [&](double u) {
        if (u > std::log(kSigmaDeltaBound)) return -std::numeric_limits<double>::infinity();
        return -n * u - 0.5 * ss * std::exp(-2.0 * u) + u;
      };
      const double prop = log_sigma + std::exp(sigma_walk.log_sd) * rng.normal();
      const bool accept = std::log(rng.uniform()) < target(prop) - target(log_sigma);
      if (accept) log_sigma = prop;
      if (adapt) sigma_walk.adapt(accept);
    }

    // Joint shift along the likelihood-invariant orbit lambda + s, deltas - X s.
    // With the flat prior on lambda, s is Gaussian given everything else.
    {
      const double sig = std::exp(log_sigma);
      const Eigen::VectorXd centre = gram.solve(data.x.transpose() * deltas);
      Eigen::VectorXd z(p);
      for (int j = 0; j < p; ++j) z[j] = rng.normal();
      const Eigen::VectorXd s = centre + sig * gram.matrixU().solve(z);
      const Eigen::VectorXd moved = lambda + s;
      if ((moved.array().abs() <= kLambdaBound).all()) {
        lambda = moved;
        deltas -= data.x * s;
        xb = data.x * lambda;
      }
    }

    if (iter >= burn && (iter - burn) % config.thinning == 0) {
      AdherenceDraw d;
      d.chain = chain;
      d.iteration = iter;
      d.params.lambda = lambda;
      d.params.sigma_delta = std::exp(log_sigma);
      d.deltas = deltas;
      trace.draws.push_back(std::move(d));
    }
  }
  return trace;
}

}  // namespace

AdherencePosterior fit_adherence(std::span<const PatientRecord> cohort, const McmcConfig& config) {
  config.validate();
  if (cohort.empty()) throw InvalidInput("adherence fit needs at least one patient");
  const int n = static_cast<int>(cohort.size());
  const int p = cohort.front().covariates.size();

  AdherenceData data;
  data.x.resize(n, p);
  data.taken.resize(n);
  data.not_taken.resize(n);
  AdherencePosterior out;
  out.covariate_names = cohort.front().covariates.names;
  for (int i = 0; i < n; ++i) {
    const auto& patient = cohort[i];
    patient.covariates.validate();
    if (patient.covariates.size() != p)
      throw InvalidInput("patient " + patient.id + " has a different covariate count");
    data.x.row(i) = patient.covariates.values.transpose();
    data.taken[i] = patient.count(AdherenceDay::Taken);
    data.not_taken[i] = patient.count(AdherenceDay::NotTaken);
    if (data.taken[i] + data.not_taken[i] == 0)
      throw InvalidInput("patient " + patient.id + " has no observed adherence days");
    out.patient_ids.push_back(patient.id);
  }

  std::vector<ChainTrace> traces(config.n_chains);
  parallel_for(config.n_chains, config.threads,
               [&](int c) { traces[c] = run_chain(data, config, c); });

  for (auto& t : traces)
    for (auto& d : t.draws) out.draws.push_back(std::move(d));

  auto diag = [&](const std::string& name, auto&& extract) {
    std::vector<std::vector<double>> chains(config.n_chains);
    for (const auto& d : out.draws) chains[d.chain].push_back(extract(d));
    out.diagnostics.push_back({name, potential_scale_reduction(chains), effective_sample_size(chains)});
  };
  for (int j = 0; j < p; ++j)
    diag("lambda[" + out.covariate_names[j] + "]",
         [j](const AdherenceDraw& d) { return d.params.lambda[j]; });
  diag("sigma_delta", [](const AdherenceDraw& d) { return d.params.sigma_delta; });
  return out;
}

}  // namespace medadhere
