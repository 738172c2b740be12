#include <doctest.h>

#include "medadhere/mcmc.hpp"
#include "medadhere/types.hpp"

#include <cmath>

using namespace medadhere;

namespace {

std::vector<double> ar1(Rng& rng, int n, double rho, double shift = 0.0) {
  std::vector<double> v(n);
  double x = rng.normal() / std::sqrt(1.0 - rho * rho);
  for (int i = 0; i < n; ++i) {
    x = rho * x + rng.normal();
    v[i] = x + shift;
  }
  return v;
}

}  // namespace

TEST_CASE("McmcConfig burn-in, retained count and validation") {
  McmcConfig c;
  c.n_iterations = 1000;
  c.burn_in_fraction = 0.5;
  c.thinning = 3;
  CHECK(c.burn_in() == 500);
  CHECK(c.retained_per_chain() == 167);
  c.burn_in_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c.burn_in_fraction = 0.2;
  c.thinning = 0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c.thinning = 1;
  c.n_chains = 0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
}

TEST_CASE("potential scale reduction: iid near 1, shifted chains flagged") {
  Rng rng(1);
  std::vector<std::vector<double>> iid(4);
  for (auto& c : iid) c = ar1(rng, 2000, 0.0);
  CHECK(potential_scale_reduction(iid) < 1.01);
  std::vector<std::vector<double>> shifted(4);
  for (int j = 0; j < 4; ++j) shifted[j] = ar1(rng, 2000, 0.0, 3.0 * j);
  CHECK(potential_scale_reduction(shifted) > 1.5);
  // A within-chain trend shows up through the split halves even with one chain.
  std::vector<double> trend(1000);
  for (int i = 0; i < 1000; ++i) trend[i] = i * 0.01 + rng.normal();
  CHECK(potential_scale_reduction({trend}) > 1.2);
  CHECK(std::isnan(potential_scale_reduction({{1.0}})));
  CHECK(potential_scale_reduction({{2.0, 2.0, 2.0, 2.0}, {2.0, 2.0, 2.0, 2.0}}) == 1.0);
}

TEST_CASE("effective sample size: iid and AR(1)") {
  Rng rng(2);
  std::vector<std::vector<double>> iid(4);
  for (auto& c : iid) c = ar1(rng, 5000, 0.0);
  CHECK(effective_sample_size(iid) == doctest::Approx(20000).epsilon(0.15));
  std::vector<std::vector<double>> corr(4);
  for (auto& c : corr) c = ar1(rng, 5000, 0.8);
  const double expect = 20000 * (1 - 0.8) / (1 + 0.8);
  CHECK(effective_sample_size(corr) == doctest::Approx(expect).epsilon(0.25));
}

TEST_CASE("adaptive Metropolis recovers a correlated Gaussian and tunes acceptance") {
  Eigen::Matrix2d cov;
  cov << 4.0, 1.8, 1.8, 1.0;
  const Eigen::Matrix2d prec = cov.inverse();
  auto logp = [&](const Eigen::VectorXd& v) { return -0.5 * v.dot(prec * v); };
  Rng rng(3);
  AdaptiveMetropolis kernel(Eigen::Vector2d(1.0, 1.0), 0.234);
  Eigen::VectorXd state = Eigen::Vector2d(5.0, -5.0);
  double lp = logp(state);
  const int burn = 5000, n = 60000;
  for (int i = 0; i < burn; ++i) metropolis_step(state, lp, kernel, logp, rng, true);
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
  int accepted = 0;
  for (int i = 0; i < n; ++i) {
    accepted += metropolis_step(state, lp, kernel, logp, rng, false);
    mean += state;
    second += state * state.transpose();
  }
  mean /= n;
  const Eigen::Matrix2d emp = second / n - mean * mean.transpose();
  CHECK(std::abs(mean[0]) < 0.15);
  CHECK(std::abs(mean[1]) < 0.08);
  CHECK(emp(0, 0) == doctest::Approx(4.0).epsilon(0.1));
  CHECK(emp(0, 1) == doctest::Approx(1.8).epsilon(0.1));
  CHECK(emp(1, 1) == doctest::Approx(1.0).epsilon(0.1));
  const double rate = static_cast<double>(accepted) / n;
  CHECK(rate > 0.15);
  CHECK(rate < 0.40);
}

TEST_CASE("metropolis_step rejects non-finite proposals") {
  Rng rng(4);
  AdaptiveMetropolis kernel(Eigen::VectorXd::Ones(1), 0.4);
  Eigen::VectorXd state = Eigen::VectorXd::Zero(1);
  double lp = 0.0;
  auto nan_density = [](const Eigen::VectorXd&) { return std::nan(""); };
  for (int i = 0; i < 50; ++i) CHECK_FALSE(metropolis_step(state, lp, kernel, nan_density, rng, true));
  CHECK(state[0] == 0.0);
}
