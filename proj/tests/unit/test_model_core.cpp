#include <doctest.h>

#include "../support/fixtures.hpp"
#include "../support/gaussian_oracle.hpp"
#include "medadhere/kalman.hpp"
#include "medadhere/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace medadhere;
using namespace fixtures;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("adherence_prob: symmetry, table intercept and saturation") {
  const auto x = covariates({1.0, 0.0, 0.0});
  CHECK(adherence_prob(0.0, adherence({0.0, 0.0, 0.0}, 1.0), x) == doctest::Approx(0.5));
  CHECK(adherence_prob(0.0, adherence({2.11, 0.0, 0.0}, 1.0), x) ==
        doctest::Approx(1.0 / (1.0 + std::exp(-2.11))).epsilon(1e-14));
  CHECK(adherence_prob(0.0, adherence({2.11, 0.0, 0.0}, 1.0), x) == doctest::Approx(0.8919).epsilon(1e-4));
  const double hi = adherence_prob(40.0, adherence({0.0, 0.0, 0.0}, 1.0), x);
  CHECK(std::abs(hi - 1.0) < 1e-15);
  CHECK(std::isfinite(adherence_prob(800.0, adherence({0.0, 0.0, 0.0}, 1.0), x)));
  CHECK(adherence_prob(-800.0, adherence({0.0, 0.0, 0.0}, 1.0), x) >= 0.0);
  CHECK(log_sigmoid(-800.0) == doctest::Approx(-800.0));
}

TEST_CASE("adherence_prob: complement and monotonicity") {
  const auto x = covariates({1.0, 1.0});
  const auto a = adherence({0.3, -1.1}, 1.0);
  double prev = 0.0;
  for (double d = -30; d <= 30; d += 0.5) {
    const double p = adherence_prob(d, a, x);
    CHECK(p + adherence_prob(-d, adherence({-0.3, 1.1}, 1.0), x) == doctest::Approx(1.0));
    CHECK(p >= prev);
    prev = p;
  }
}

TEST_CASE("adherence_prob: dimension mismatch throws") {
  CHECK_THROWS_AS(adherence_prob(0.0, adherence({1.0, 2.0}, 1.0), covariates({1.0})), InvalidInput);
}

TEST_CASE("adherence_loglik examples") {
  const auto x = intercept_only();
  const std::vector<AdherenceDay> missing(5, AdherenceDay::Missing);
  CHECK(adherence_loglik(missing, 0.0, adherence({0.7}, 1.0), x) == 0.0);
  const std::vector<AdherenceDay> one{AdherenceDay::Taken};
  CHECK(adherence_loglik(one, 0.0, adherence({0.0}, 1.0), x) == doctest::Approx(std::log(0.5)));
  const std::vector<AdherenceDay> three{AdherenceDay::Taken, AdherenceDay::NotTaken, AdherenceDay::Taken};
  const double eta = std::log(0.8 / 0.2);
  CHECK(adherence_loglik(three, 0.0, adherence({eta}, 1.0), x) ==
        doctest::Approx(2 * std::log(0.8) + std::log(0.2)).epsilon(1e-12));
}

TEST_CASE("kalman: no observations gives zero log-likelihood and prior smoothing") {
  const auto h = scalar_health(5.0, 0.8, -1.5, 1.0, 0.5, 2.0);
  const auto x = intercept_only();
  const AdherencePath c{1, -1, 1, 1};
  const auto f = kalman_filter({}, 4, x, c, h);
  CHECK(f.loglik == 0.0);
  CHECK(kalman_loglik({}, 4, x, c, h) == 0.0);
  const auto s = kalman_smoother({}, 4, x, c, h);
  double m = 0.0;
  for (int t = 0; t < 4; ++t) {
    if (t > 0) m = 0.8 * m - 1.5 * c[t];
    CHECK(s.smoothed_means(0, t) == doctest::Approx(m));
  }
}

TEST_CASE("kalman: single observation closed forms") {
  const auto x = intercept_only();
  // T=1, K=1, beta x = 0, y = 0, sigma_0 = sigma_eps = 1 -> log N(0; 0, 2)
  const auto h = scalar_health(0.0, 0.5, 0.7, 1.0, 0.3, 1.0);
  const std::vector<HealthObservation> o{obs(1, {0.0})};
  const AdherencePath c1{1};
  CHECK(kalman_filter(o, 1, x, c1, h).loglik == doctest::Approx(-0.5 * std::log(4 * std::numbers::pi)).epsilon(1e-14));
  CHECK(kalman_loglik(o, 1, x, c1, h) == doctest::Approx(-0.5 * std::log(4 * std::numbers::pi)).epsilon(1e-14));

  // rho = 0, phi = 0: a later observation has variance sigma_nu^2 + sigma_eps^2.
  const auto h2 = scalar_health(3.0, 0.0, 0.0, 1.3, 0.6, 2.0);
  const std::vector<HealthObservation> o2{obs(4, {2.2})};
  const AdherencePath c4{1, 1, -1, 1};
  const double var = 0.6 * 0.6 + 1.3 * 1.3;
  const double expect = -0.5 * std::log(2 * std::numbers::pi * var) - 0.5 * (2.2 - 3.0) * (2.2 - 3.0) / var;
  CHECK(kalman_filter(o2, 4, x, c4, h2).loglik == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("kalman: T=1 smoothed moments equal filtered moments") {
  Rng rng(3);
  const auto h = random_health(rng, 2, 1);
  const auto x = intercept_only();
  const std::vector<HealthObservation> o{obs(1, {1.0, std::nullopt})};
  const AdherencePath c{-1};
  const auto f = kalman_filter(o, 1, x, c, h);
  const auto s = kalman_smoother(f, h);
  CHECK((s.smoothed_means - f.filtered_means).norm() < 1e-14);
  CHECK((s.smoothed_covs[0] - f.filtered_covs[0]).norm() < 1e-14);
}

TEST_CASE("kalman: matches the dense joint-Gaussian oracle on random fixtures") {
  Rng rng(20240611);
  for (int rep = 0; rep < 60; ++rep) {
    const int k = 1 + rep % 2;
    const int horizon = 1 + rng.uniform_int(0, 19);
    const auto x = covariates({1.0, static_cast<double>(rng.uniform_int(0, 1)), rng.normal()});
    const auto h = random_health(rng, k, 3);
    const auto o = random_observations(rng, horizon, k, 0.35, 0.3);
    const auto c = random_path(rng, horizon);
    const auto dense = oracle::dense_gaussian(o, horizon, x.values, c, h);
    const auto f = kalman_filter(o, horizon, x, c, h);
    const auto s = kalman_smoother(f, h);
    CHECK(rel_err(f.loglik, dense.loglik) < 1e-8);
    CHECK(rel_err(kalman_loglik(o, horizon, x, c, h), dense.loglik) < 1e-8);
    for (int t = 0; t < horizon; ++t) {
      for (int j = 0; j < k; ++j) {
        CHECK(rel_err(s.smoothed_means(j, t), dense.smoothed_means(j, t)) < 1e-8);
        for (int l = 0; l < k; ++l)
          CHECK(rel_err(s.smoothed_covs[t](j, l), dense.smoothed_covs[t](j, l)) < 1e-8);
      }
    }
  }
}

TEST_CASE("kalman: log-likelihood invariant to component order within a day") {
  Rng rng(11);
  auto h = random_health(rng, 2, 1);
  const auto x = intercept_only();
  const std::vector<HealthObservation> o{obs(2, {1.5, -0.5}), obs(5, {0.3, 2.0})};
  const AdherencePath c{1, 1, -1, 1, 1};
  // Swap the measure labels everywhere: same model, components listed in reverse.
  HealthParams hs = h;
  hs.beta.row(0) = h.beta.row(1);
  hs.beta.row(1) = h.beta.row(0);
  for (auto* v : {&hs.rho, &hs.phi, &hs.sigma_eps, &hs.sigma_nu, &hs.sigma_zero}) std::swap((*v)[0], (*v)[1]);
  const std::vector<HealthObservation> os{obs(2, {-0.5, 1.5}), obs(5, {2.0, 0.3})};
  CHECK(kalman_filter(o, 5, x, c, h).loglik == doctest::Approx(kalman_filter(os, 5, x, c, hs).loglik).epsilon(1e-12));
}

TEST_CASE("kalman: flipping c_t shifts later prior means by rho^(s-t) phi dc") {
  const auto h = scalar_health(0.0, 0.7, -2.0, 1.0, 1e-9, 1e-9);
  const auto x = intercept_only();
  AdherencePath c{1, 1, 1, 1, 1, 1};
  const auto base = kalman_smoother({}, 6, x, c, h);
  c[2] = -1;
  const auto flipped = kalman_smoother({}, 6, x, c, h);
  for (int s = 0; s < 6; ++s) {
    const double expect = s < 2 ? 0.0 : std::pow(0.7, s - 2) * -2.0 * -2.0;
    CHECK(flipped.smoothed_means(0, s) - base.smoothed_means(0, s) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("kalman: invalid inputs") {
  const auto h = scalar_health(0.0, 0.5, 1.0, 1.0, 1.0, 1.0);
  const auto x = intercept_only();
  const std::vector<HealthObservation> o{obs(1, {1.0})};
  const AdherencePath bad{0};
  CHECK_THROWS_AS(kalman_filter(o, 1, x, bad, h), InvalidInput);
  const AdherencePath short_path{1};
  CHECK_THROWS_AS(kalman_filter(o, 2, x, short_path, h), InvalidInput);
  CHECK_THROWS_AS(kalman_filter(o, 1, covariates({1.0, 0.0}), short_path, h), InvalidInput);
}

TEST_CASE("health params validation") {
  auto h = scalar_health(0.0, 1.5, 0.0, 1.0, 1.0, 1.0);
  CHECK_THROWS_AS(h.validate(), InvalidInput);
  Rng rng(1);
  auto h2 = random_health(rng, 2, 1);
  h2.rho_eps = -1.0;
  CHECK_THROWS_AS(h2.validate(), InvalidInput);
  h2.rho_eps = 0.3;
  h2.sigma_nu[1] = 0.0;
  CHECK_THROWS_AS(h2.validate(), InvalidInput);
}

TEST_CASE("patient record invariants") {
  auto p = patient("A", 5, intercept_only(), {obs(2, {1.0}), obs(2, {3.0})});
  CHECK_THROWS_AS(p.validate(), InvalidInput);
  p.observations = {obs(6, {1.0})};
  CHECK_THROWS_AS(p.validate(), InvalidInput);
  p.observations = {obs(3, {std::nullopt})};
  CHECK_THROWS_AS(p.validate(), InvalidInput);
  p.observations = {obs(3, {1.0})};
  CHECK_NOTHROW(p.validate(1));
  CovariateVector bad = covariates({2.0});
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("average adherence uses the proportion scale") {
  const AdherencePath all{1, 1, 1};
  const AdherencePath alt{1, -1, 1, -1};
  const AdherencePath mixed{1, 1, -1, 1};
  CHECK(average_adherence(all) == 1.0);
  CHECK(average_adherence(alt) == 0.5);
  CHECK(average_adherence(mixed) == 0.75);
}
