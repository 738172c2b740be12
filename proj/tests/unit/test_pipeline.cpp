#include <doctest.h>

#include "../support/fixtures.hpp"
#include "medadhere/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace medadhere;
using namespace fixtures;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PipelineConfig tiny(const fs::path& out) {
  PipelineConfig c = PipelineConfig::defaults();
  c.out_dir = out;
  c.seed = 7;
  c.sim.n_patients = 24;
  c.sim.mean_days = 20;
  c.sim.min_days = 5;
  c.train_fraction = 0.75;
  c.adherence_mcmc.n_chains = 2;
  c.adherence_mcmc.n_iterations = 200;
  c.health_mcmc.n_chains = 2;
  c.health_mcmc.n_iterations = 200;
  c.n_imputations = 2;
  c.smoother.n_theta_draws = 4;
  c.smoother.n_iterations = 20;
  c.smoother.n_particles = 8;
  return c;
}

std::vector<PatientRecord> ids(int n) {
  std::vector<PatientRecord> v;
  for (int i = 0; i < n; ++i) v.push_back(patient("P" + std::to_string(i), 1, intercept_only(), {}));
  return v;
}

}  // namespace

TEST_CASE("split_cohort: 503 patients, determinism, partition") {
  const auto cohort = ids(503);
  const auto a = split_cohort(cohort, 400.0 / 503.0, 11);
  CHECK(a.train.size() == 400);
  CHECK(a.test.size() == 103);
  const auto b = split_cohort(cohort, 400.0 / 503.0, 11);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  std::set<std::string> all(a.train.begin(), a.train.end());
  for (const auto& id : a.test) CHECK(all.insert(id).second);
  CHECK(all.size() == 503);
  CHECK(split_cohort(cohort, 0.795, 11).train.size() == 400);
  CHECK_THROWS_AS(split_cohort(ids(3), 0.1, 1), InvalidInput);
  CHECK_THROWS_AS(split_cohort({}, 0.5, 1), InvalidInput);
}

TEST_CASE("select_theta_draws: evenly spaced, deterministic") {
  const auto s = select_theta_draws(1000, 100, 3);
  REQUIRE(s.size() == 100);
  for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] - s[i - 1] == 10);
  CHECK(s.back() < 1000);
  CHECK(select_theta_draws(1000, 100, 3) == s);
  CHECK(select_theta_draws(5, 8, 1).size() == 8);
  CHECK_THROWS_AS(select_theta_draws(0, 1, 1), InvalidInput);
}

TEST_CASE("config: flat keys round trip and errors") {
  PipelineConfig c = PipelineConfig::defaults();
  c.set("smooth.particles", 64);
  c.set("evaluate.levels", io::Json::array({0.5, 0.9}));
  c.set("sim.true.lambda", io::Json::array({2.0, 0.1, 0.2, 0.3, 0.4}));
  c.set("smooth.resampling", "systematic");
  CHECK(c.smoother.n_particles == 64);
  CHECK(c.smoother.resampling == ResamplingScheme::Systematic);
  PipelineConfig d = PipelineConfig::defaults();
  d.apply(c.to_json());
  CHECK(d.to_json() == c.to_json());
  CHECK(d.hash() == c.hash());
  CHECK_FALSE(c.to_json().contains("threads"));
  CHECK_THROWS_AS(c.set("smooth.nonsense", 1), InvalidInput);
  CHECK_THROWS_AS(c.set("smooth.resampling", "stratified"), InvalidInput);
  c.train_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
}

TEST_CASE("run_pipeline: determinism across threads and per-stage resumption") {
  const fs::path root = fs::temp_directory_path() / "medadhere_pipeline_test";
  fs::remove_all(root);
  PipelineConfig c = tiny(root / "a");
  const auto m1 = run_pipeline(c);
  for (const auto& s : m1.stages) CHECK(s.executed);
  const std::string intervals = slurp(root / "a" / "evaluate" / "intervals.csv");
  CHECK(intervals.rfind("patient,level,lo,hi,truth,covered", 0) == 0);

  PipelineConfig threaded = tiny(root / "b");
  threaded.threads = 3;
  run_pipeline(threaded);
  CHECK(slurp(root / "b" / "evaluate" / "intervals.csv") == intervals);
  CHECK(slurp(root / "b" / "evaluate" / "coverage.csv") == slurp(root / "a" / "evaluate" / "coverage.csv"));

  const auto m2 = run_pipeline(c);
  for (const auto& s : m2.stages) CHECK_FALSE(s.executed);

  fs::remove_all(root / "a" / "smooth");
  const auto m3 = run_pipeline(c);
  for (const auto& s : m3.stages) {
    const bool expect = s.name == "smooth" || s.name == "evaluate";
    CHECK_MESSAGE(s.executed == expect, s.name);
  }
  CHECK(slurp(root / "a" / "evaluate" / "intervals.csv") == intervals);

  c.smoother.n_particles = 9;
  const auto m4 = run_pipeline(c);
  CHECK_FALSE(m4.stages[0].executed);
  CHECK(m4.stages[4].executed);

  const auto manifest = io::read_json(root / "a" / "manifest.json");
  CHECK(manifest.at("seed") == 7);
  CHECK(!manifest.at("digests").empty());
  fs::remove_all(root);
}

TEST_CASE("stage errors carry the stage name") {
  const fs::path root = fs::temp_directory_path() / "medadhere_pipeline_err";
  fs::remove_all(root);
  PipelineConfig c = tiny(root);
  try {
    run_stage(Stage::FitAdherence, c);
    FAIL("expected an error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "fit-adherence");
  }
  fs::remove_all(root);
}
