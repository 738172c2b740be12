#include <doctest.h>

#include "../support/fixtures.hpp"
#include "medadhere/io.hpp"
#include "medadhere/model.hpp"
#include "medadhere/simulate.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace medadhere;
using namespace fixtures;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

HealthParams quiet_health(int p) {
  HealthParams h = default_health_params();
  h.beta = Eigen::MatrixXd::Zero(2, p);
  h.phi.setZero();
  h.sigma_nu.setConstant(1e-9);
  h.sigma_zero.setConstant(1e-9);
  return h;
}

}  // namespace

TEST_CASE("sample_covariates: zero prevalence and defaults") {
  SimulationConfig c = SimulationConfig::defaults();
  CHECK(c.covariate_prevalences == std::vector<double>{0.68, 0.54, 0.60, 0.36});
  c.covariate_prevalences.assign(4, 0.0);
  Rng rng(1);
  const auto x = sample_covariates(c, rng);
  CHECK(x.values[0] == 1.0);
  CHECK(x.values.tail(4).isZero());
  CHECK(x.names.front() == "intercept");

  Rng a(9), b(9);
  const auto c2 = SimulationConfig::defaults();
  for (int i = 0; i < 20; ++i) CHECK(sample_covariates(c2, a).values == sample_covariates(c2, b).values);

  Rng r(5);
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(5);
  const int n = 20000;
  for (int i = 0; i < n; ++i) freq += sample_covariates(c2, r).values;
  freq /= n;
  for (int j = 0; j < 4; ++j) CHECK(std::abs(freq[j + 1] - c2.covariate_prevalences[j]) < 0.02);
}

TEST_CASE("simulate_patient: saturated logistic gives every day taken") {
  const auto x = covariates({1.0, 0.0, 0.0, 0.0, 0.0});
  const auto a = adherence({40.0, 0.0, 0.0, 0.0, 0.0}, 1e-12);
  Rng rng(2);
  auto [rec, truth] = simulate_patient("A", x, 50, a, default_health_params(), {3, 10}, rng);
  CHECK(rec.count(AdherenceDay::Taken) == 50);
  CHECK(truth.average_adherence() == 1.0);
  CHECK(rec.observations.size() == 2);
}

TEST_CASE("simulate_patient: no latent signal leaves pure measurement noise") {
  const auto x = covariates({1.0, 1.0, 0.0, 1.0, 0.0});
  const auto h = quiet_health(5);
  std::vector<int> days(200);
  for (int t = 0; t < 200; ++t) days[t] = t + 1;
  Rng rng(4);
  auto [rec, truth] = simulate_patient("A", x, 200, default_adherence_params(), h, days, rng);
  double m = 0.0, v = 0.0;
  for (const auto& o : rec.observations) m += *o.values[0];
  m /= 200.0;
  for (const auto& o : rec.observations) v += (*o.values[0] - m) * (*o.values[0] - m);
  v /= 199.0;
  CHECK(std::abs(m) < 4 * h.sigma_eps[0] / std::sqrt(200.0));
  CHECK(v == doctest::Approx(h.sigma_eps[0] * h.sigma_eps[0]).epsilon(0.25));
}

TEST_CASE("simulate_patient: empirical adherence matches adherence_prob") {
  const auto x = covariates({1.0, 0.0, 0.0, 0.0, 0.0});
  const auto a = adherence({2.11, 0.0, 0.0, 0.0, 0.0}, 1e-12);
  Rng rng(6);
  auto [rec, truth] = simulate_patient("A", x, 100000, a, default_health_params(), {}, rng);
  const double p = 1.0 / (1.0 + std::exp(-2.11));
  const double se = std::sqrt(p * (1 - p) / 100000.0);
  CHECK(std::abs(truth.average_adherence() - p) < 3 * se);
}

TEST_CASE("simulate_patient: long-run adherence converges to the patient's probability") {
  const auto x = covariates({1.0, 1.0, 0.0, 1.0, 1.0});
  const auto a = default_adherence_params();
  for (int rep = 0; rep < 5; ++rep) {
    Rng rng(100 + rep);
    auto [rec, truth] = simulate_patient("A", x, 10000, a, default_health_params(), {}, rng);
    const double p = adherence_prob(truth.delta, a, x);
    const double se = std::sqrt(p * (1 - p) / 10000.0) + 1e-12;
    CHECK(std::abs(truth.average_adherence() - p) < 4 * se + 1e-9);
  }
}

TEST_CASE("simulate_patient: lag-1 autocorrelation of alpha matches rho") {
  const auto x = covariates({1.0, 0.0, 0.0, 0.0, 0.0});
  HealthParams h = default_health_params();
  h.phi.setZero();
  Rng rng(8);
  auto [rec, truth] = simulate_patient("A", x, 50000, default_adherence_params(), h, {}, rng);
  for (int j = 0; j < 2; ++j) {
    const Eigen::VectorXd s = truth.alpha.row(j).transpose();
    const double m = s.mean();
    double num = 0.0, den = 0.0;
    for (Eigen::Index t = 0; t + 1 < s.size(); ++t) num += (s[t] - m) * (s[t + 1] - m);
    for (Eigen::Index t = 0; t < s.size(); ++t) den += (s[t] - m) * (s[t] - m);
    CHECK(num / den == doctest::Approx(h.rho[j]).epsilon(0.02));
  }
}

TEST_CASE("simulate_patient: missing rate zero never masks, visit bounds checked") {
  const auto x = covariates({1.0, 0.0, 1.0, 0.0, 1.0});
  Rng rng(10);
  auto [rec, truth] = simulate_patient("A", x, 300, default_adherence_params(), default_health_params(), {5}, rng, 0.0);
  CHECK(rec.count(AdherenceDay::Missing) == 0);
  CHECK_THROWS_AS(simulate_patient("A", x, 4, default_adherence_params(), default_health_params(), {5}, rng),
                  InvalidInput);
  CHECK_THROWS_AS(simulate_patient("A", x, 9, default_adherence_params(), default_health_params(), {5, 5}, rng),
                  InvalidInput);
}

TEST_CASE("simulate_cohort: empty, deterministic and default descriptives") {
  SimulationConfig c = SimulationConfig::defaults();
  c.n_patients = 0;
  CHECK(simulate_cohort(c).patients.empty());

  c.n_patients = 2000;
  c.seed = 77;
  const auto cohort = simulate_cohort(c);
  double days = 0.0, visits = 0.0;
  int min_t = 1 << 30;
  for (const auto& p : cohort.patients) {
    days += p.horizon;
    visits += static_cast<double>(p.observations.size());
    min_t = std::min(min_t, p.horizon);
    CHECK(p.observations.size() >= 1);
  }
  CHECK(days / 2000.0 == doctest::Approx(98.0).epsilon(0.04));
  CHECK(visits / 2000.0 == doctest::Approx(2.0).epsilon(0.05));
  CHECK(min_t >= 7);
  REQUIRE(cohort.truths.size() == cohort.patients.size());
  for (std::size_t i = 0; i < cohort.patients.size(); ++i) CHECK(cohort.truths[i].id == cohort.patients[i].id);

  c.n_patients = 25;
  const auto dir = std::filesystem::temp_directory_path() / "medadhere_sim_det";
  io::write_cohort(dir / "a", simulate_cohort(c).patients);
  io::write_cohort(dir / "b", simulate_cohort(c).patients);
  for (const char* f : {io::kPatientsFile, io::kVisitsFile, io::kCovariatesFile})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  std::filesystem::remove_all(dir);
}

TEST_CASE("simulation config validation") {
  SimulationConfig c = SimulationConfig::defaults();
  c.covariate_prevalences[0] = 1.5;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = SimulationConfig::defaults();
  c.mean_days = 0.5;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = SimulationConfig::defaults();
  c.mean_visits = -1.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
}
