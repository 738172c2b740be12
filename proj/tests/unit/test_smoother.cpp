#include <doctest.h>

#include "../support/fixtures.hpp"
#include "medadhere/kalman.hpp"
#include "medadhere/model.hpp"
#include "medadhere/simulate.hpp"
#include "medadhere/smoother.hpp"

#include <cmath>
#include <numbers>

using namespace medadhere;
using namespace fixtures;

namespace {

ThetaDraw scalar_theta(double lambda0, double sigma_delta, double phi, double sigma_eps = 1.0) {
  return {adherence({lambda0}, sigma_delta), scalar_health(0.0, 0.6, phi, sigma_eps, 0.5, 1.0)};
}

// Trapezoid rule on a dense grid, the reference for the delta-marginal path probability.
double trapezoid_marginal(int taken, int not_taken, double eta, double sigma) {
  const double h = sigma * 1e-3;
  double s = 0.0;
  for (double d = -14 * sigma; d <= 14 * sigma; d += h)
    s += std::exp(binary_loglik(taken, not_taken, d + eta) + log_normal_pdf(d, 0.0, sigma));
  return std::log(s * h);
}

}  // namespace

TEST_CASE("SmootherConfig: retained count and validation") {
  SmootherConfig c;
  c.n_iterations = 2000;
  c.burn_in_fraction = 0.2;
  CHECK(c.burn_in() == 400);
  CHECK(c.retained() == 1600);
  c.n_iterations = 7;
  c.burn_in_fraction = 0.3;
  CHECK(c.retained() == 5);
  c.burn_in_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
}

TEST_CASE("gauss_hermite: moments of exp(-x^2) and node doubling") {
  for (int n : {8, 16, 32, 64}) {
    const auto r = gauss_hermite(n);
    CHECK(r.weights.sum() == doctest::Approx(std::sqrt(std::numbers::pi)).epsilon(1e-12));
    CHECK((r.weights.array() * r.nodes.array().square()).sum() ==
          doctest::Approx(std::sqrt(std::numbers::pi) / 2).epsilon(1e-12));
  }
  // Logistic-normal integral stabilizes under node doubling.
  auto integral = [](int n) {
    const auto r = gauss_hermite(n);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += r.weights[i] * sigmoid(2.11 + std::sqrt(2.0) * 1.74 * r.nodes[i]);
    return s / std::sqrt(std::numbers::pi);
  };
  CHECK(std::abs(integral(64) - integral(128)) < 1e-10);
  CHECK_THROWS_AS(gauss_hermite(0), InvalidInput);
}

TEST_CASE("log_marginal_adherence agrees with a dense trapezoid integral") {
  const auto x = intercept_only();
  for (auto [taken, not_taken, eta, sigma] :
       std::vector<std::tuple<int, int, double, double>>{{3, 2, 0.5, 1.0}, {30, 5, 2.11, 1.74}, {0, 10, -1.0, 0.3},
                                                         {60, 0, 1.0, 2.5}, {1, 0, 0.0, 1.0}}) {
    const double got = log_marginal_adherence(taken, not_taken, adherence({eta}, sigma), x);
    CHECK(got == doctest::Approx(trapezoid_marginal(taken, not_taken, eta, sigma)).epsilon(1e-7));
  }
  CHECK(log_marginal_adherence(0, 0, adherence({0.0}, 1.0), x) == 0.0);
  CHECK(log_marginal_adherence(1, 0, adherence({0.0}, 1.0), x) == doctest::Approx(std::log(0.5)).epsilon(1e-12));
  CHECK_THROWS_AS(log_marginal_adherence(-1, 0, adherence({0.0}, 1.0), x), InvalidInput);
}

TEST_CASE("enumerate_exact: T=1 equals the Bayes ratio") {
  const auto theta = scalar_theta(0.8, 1.0, -2.0);
  auto p = patient("A", 1, intercept_only(), {obs(1, {-1.2})});
  const auto exact = enumerate_exact(p, theta);
  const double prior = std::exp(log_marginal_adherence(1, 0, theta.adherence, p.covariates));
  const AdherencePath up{1}, down{-1};
  const double lu = std::exp(kalman_loglik(p, up, theta.health));
  const double ld = std::exp(kalman_loglik(p, down, theta.health));
  CHECK(exact.day_marginals[0] == doctest::Approx(prior * lu / (prior * lu + (1 - prior) * ld)).epsilon(1e-10));
  CHECK(exact.average_pmf.sum() == doctest::Approx(1.0));
  CHECK(exact.path_probabilities.size() == 2);
}

TEST_CASE("enumerate_exact: uninformative measures give the prior predictive") {
  const auto theta = scalar_theta(1.2, 0.9, -1.0, 1e6);
  auto p = patient("A", 5, intercept_only(), {obs(3, {100.0})});
  const auto exact = enumerate_exact(p, theta);
  const double prior = std::exp(log_marginal_adherence(1, 0, theta.adherence, p.covariates));
  for (int t = 0; t < 5; ++t) CHECK(exact.day_marginals[t] == doctest::Approx(prior).epsilon(1e-6));
  auto longer = patient("B", 15, intercept_only(), {});
  CHECK_THROWS_AS(enumerate_exact(longer, theta), InvalidInput);
  auto none = patient("C", 0, intercept_only(), {});
  CHECK_THROWS_AS(enumerate_exact(none, theta), InvalidInput);
}

TEST_CASE("ancestor_weights: three hand-computed particles") {
  const auto theta = scalar_theta(0.0, 1.0, 1.0);
  const auto x = intercept_only();
  Eigen::VectorXd ref(1);
  ref << 1.0;
  Eigen::MatrixXd prev(1, 3);
  prev << 0.0, 1.0, -1.0;
  Eigen::VectorXd w(3);
  w << 0.2, 0.3, 0.5;
  const auto a = ancestor_weights(ref, 1, prev, w, theta, 0.0, x);
  // mean = 0.6 a + 1, sd 0.5; residuals 0, -0.6, 0.6
  Eigen::VectorXd expect(3);
  expect << 0.2, 0.3 * std::exp(-0.5 * 0.36 / 0.25), 0.5 * std::exp(-0.5 * 0.36 / 0.25);
  expect /= expect.sum();
  CHECK((a - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(a.sum() == doctest::Approx(1.0));
  CHECK_THROWS_AS(ancestor_weights(ref, 0, prev, w, theta, 0.0, x), InvalidInput);
  CHECK_THROWS_AS(ancestor_weights(ref, 1, prev, Eigen::VectorXd::Ones(2), theta, 0.0, x), InvalidInput);
}

TEST_CASE("update_delta: zero steps is identity, long runs hit the conditional") {
  const auto x = intercept_only();
  const auto a = adherence({0.5}, 1.0);
  const AdherencePath path{1, 1, -1, 1, 1, 1, -1, 1};
  Rng rng(1);
  CHECK(update_delta(0.37, path, a, x, 2.4, 0, rng) == 0.37);
  // Posterior mean of delta by quadrature on a grid.
  double num = 0.0, den = 0.0;
  for (double d = -8; d <= 8; d += 1e-3) {
    const double w = std::exp(binary_loglik(6, 2, d + 0.5) + log_normal_pdf(d, 0, 1));
    num += d * w;
    den += w;
  }
  double delta = 0.0, sum = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    delta = update_delta(delta, path, a, x, 2.4, 1, rng);
    sum += delta;
  }
  CHECK(sum / n == doctest::Approx(num / den).epsilon(0.05));
  // An empty path leaves the prior.
  double s2 = 0.0;
  delta = 0.0;
  for (int i = 0; i < n; ++i) {
    delta = update_delta(delta, {}, a, x, 2.4, 1, rng);
    s2 += delta * delta;
  }
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.08));
}

TEST_CASE("smc_pass: particle likelihood estimate is unbiased") {
  const auto theta = scalar_theta(0.5, 1.0, -1.5);
  auto p = patient("A", 6, intercept_only(), {obs(2, {0.4}), obs(5, {-1.0})});
  // Exact p(y | delta) by enumeration over paths with fixed delta.
  const double delta = 0.3;
  const double prob = adherence_prob(delta, theta.adherence, p.covariates);
  double exact = 0.0;
  AdherencePath c(6);
  for (int mask = 0; mask < 64; ++mask) {
    int taken = 0;
    for (int t = 0; t < 6; ++t) {
      c[t] = (mask >> t) & 1 ? 1 : -1;
      taken += c[t] > 0;
    }
    exact += std::pow(prob, taken) * std::pow(1 - prob, 6 - taken) * std::exp(kalman_loglik(p, c, theta.health));
  }
  Rng rng(2);
  double mean = 0.0;
  const int reps = 4000;
  for (int r = 0; r < reps; ++r) mean += std::exp(smc_pass(p, theta, delta, 16, rng).loglik_estimate);
  mean /= reps;
  CHECK(mean == doctest::Approx(exact).epsilon(0.03));
}

TEST_CASE("smc_pass and pgas_chain: argument checks") {
  const auto theta = scalar_theta(0.5, 1.0, -1.5);
  auto p = patient("A", 4, intercept_only(), {obs(2, {0.4})});
  Rng rng(3);
  const auto first = smc_pass(p, theta, 0.0, 8, rng);
  CHECK(first.trajectories.size() == 8);
  CHECK(first.weights.sum() == doctest::Approx(1.0));
  CHECK_THROWS_AS(smc_pass(p, theta, 0.0, 1, rng, &first.trajectories[0]), InvalidInput);
  Trajectory bad = first.trajectories[0];
  bad.adherence.pop_back();
  CHECK_THROWS_AS(smc_pass(p, theta, 0.0, 8, rng, &bad), InvalidInput);
  SmootherConfig c;
  c.n_particles = 1;
  c.n_iterations = 10;
  CHECK_THROWS_AS(pgas_chain(p, theta, c, rng), InvalidInput);
}

TEST_CASE("pgas_chain: retained count, keep_alpha and no-observation prior") {
  const auto theta = scalar_theta(1.0, 1.0, -1.5);
  auto p = patient("A", 8, intercept_only(), {});
  SmootherConfig c;
  c.n_particles = 8;
  c.n_iterations = 3000;
  c.burn_in_fraction = 0.2;
  c.keep_alpha = true;
  Rng rng(4);
  const auto draws = pgas_chain(p, theta, c, rng);
  CHECK(draws.size() == 2400);
  CHECK(draws[0].alpha.cols() == 8);
  const double prior = std::exp(log_marginal_adherence(1, 0, theta.adherence, p.covariates));
  const auto m = day_marginals(draws);
  for (int t = 0; t < 8; ++t) CHECK(std::abs(m[t] - prior) < 0.06);
  c.keep_alpha = false;
  c.n_iterations = 10;
  CHECK(pgas_chain(p, theta, c, rng)[0].alpha.size() == 0);
}

TEST_CASE("pgas_chain matches enumeration in both delta modes") {
  const auto theta = ThetaDraw{default_adherence_params(), default_health_params()};
  SimulationConfig sc = SimulationConfig::defaults();
  Rng rng(5);
  const auto x = sample_covariates(sc, rng);
  auto [p, truth] = simulate_patient("A", x, 8, theta.adherence, theta.health, {3, 7}, rng);
  const auto exact = enumerate_exact(p, theta);
  for (bool collapse : {true, false}) {
    SmootherConfig c;
    c.n_particles = 32;
    c.n_iterations = 3000;
    c.collapse_delta = collapse;
    const auto m = day_marginals(pgas_chain(p, theta, c, rng));
    CHECK((m - exact.day_marginals).cwiseAbs().maxCoeff() < 0.06);
  }
  const auto is = importance_smoother(p, theta, 100000, rng);
  CHECK((is.day_marginals() - exact.day_marginals).cwiseAbs().maxCoeff() < 0.03);
  CHECK(is.ess > 100);
  CHECK(is.weights.sum() == doctest::Approx(1.0));
}

TEST_CASE("smooth_patient_theta is reproducible and keyed by theta index") {
  const auto theta = scalar_theta(1.0, 1.0, -1.5);
  auto p = patient("A", 10, intercept_only(), {obs(4, {1.0})});
  SmootherConfig c;
  c.n_iterations = 50;
  c.seed = 11;
  const auto a = smooth_patient_theta(p, theta, 0, c);
  const auto b = smooth_patient_theta(p, theta, 0, c);
  const auto d = smooth_patient_theta(p, theta, 1, c);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same = same && a[i].adherence == b[i].adherence && a[i].delta == b[i].delta;
    differs = differs || a[i].delta != d[i].delta;
  }
  CHECK(same);
  CHECK(differs);
}
