#include "medadhere/pipeline.hpp"

#include "medadhere/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

namespace medadhere {

namespace fs = std::filesystem;
using io::Json;

// ---------------------------------------------------------------- config

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig c;
  c.adherence_mcmc.n_iterations = 4000;
  c.health_mcmc.n_iterations = 16000;
  c.health_mcmc.thinning = 4;
  return c;
}

namespace {

Eigen::VectorXd as_eigen(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Json mcmc_json(const McmcConfig& m, int imputations = -1) {
  Json j;
  j["chains"] = m.n_chains;
  j["iterations"] = m.n_iterations;
  j["burn_in_fraction"] = m.burn_in_fraction;
  j["thinning"] = m.thinning;
  j["target_acceptance"] = m.target_acceptance;
  if (imputations >= 0) j["imputations"] = imputations;
  return j;
}

bool set_mcmc(McmcConfig& m, const std::string& key, const Json& v) {
  if (key == "chains") m.n_chains = v.get<int>();
  else if (key == "iterations") m.n_iterations = v.get<int>();
  else if (key == "burn_in_fraction") m.burn_in_fraction = v.get<double>();
  else if (key == "thinning") m.thinning = v.get<int>();
  else if (key == "target_acceptance") m.target_acceptance = v.get<double>();
  else return false;
  return true;
}

}  // namespace

Json PipelineConfig::to_json() const {
  Json j;
  j["seed"] = seed;
  j["sim.n_patients"] = sim.n_patients;
  j["sim.mean_days"] = sim.mean_days;
  j["sim.horizon_dispersion"] = sim.horizon_dispersion;
  j["sim.min_days"] = sim.min_days;
  j["sim.feature_names"] = sim.feature_names;
  j["sim.covariate_prevalences"] = sim.covariate_prevalences;
  j["sim.mean_visits"] = sim.mean_visits;
  j["sim.missing_adherence_rate"] = sim.missing_adherence_rate;
  j["sim.missing_measure_rate"] = sim.missing_measure_rate;
  const Json ta = io::to_json(sim.true_adherence);
  for (const auto& [k, v] : ta.items()) j["sim.true." + k] = v;
  const Json th = io::to_json(sim.true_health);
  for (const auto& [k, v] : th.items()) j["sim.true." + k] = v;
  j["split.train_fraction"] = train_fraction;
  const Json am = mcmc_json(adherence_mcmc);
  for (const auto& [k, v] : am.items()) j["adherence." + k] = v;
  const Json hm = mcmc_json(health_mcmc, n_imputations);
  for (const auto& [k, v] : hm.items()) j["health." + k] = v;
  j["smooth.particles"] = smoother.n_particles;
  j["smooth.iterations"] = smoother.n_iterations;
  j["smooth.burn_in_fraction"] = smoother.burn_in_fraction;
  j["smooth.theta_draws"] = smoother.n_theta_draws;
  j["smooth.delta_step_size"] = smoother.delta_step_size;
  j["smooth.delta_steps"] = smoother.delta_steps;
  j["smooth.resampling"] =
      smoother.resampling == ResamplingScheme::Multinomial ? "multinomial" : "systematic";
  j["smooth.collapse_delta"] = smoother.collapse_delta;
  j["smooth.keep_alpha"] = smoother.keep_alpha;
  j["evaluate.levels"] = levels;
  j["evaluate.baseline_mode"] = baseline_mode == BaselineMode::Binomial ? "binomial" : "analytic";
  return j;
}

void PipelineConfig::set(const std::string& key, const Json& v) {
  try {
    if (key == "seed") seed = v.get<std::uint64_t>();
    else if (key == "threads") threads = v.get<int>();
    else if (key == "out") out_dir = v.get<std::string>();
    else if (key == "sim.n_patients") sim.n_patients = v.get<int>();
    else if (key == "sim.mean_days") sim.mean_days = v.get<double>();
    else if (key == "sim.horizon_dispersion") sim.horizon_dispersion = v.get<int>();
    else if (key == "sim.min_days") sim.min_days = v.get<int>();
    else if (key == "sim.feature_names") sim.feature_names = v.get<std::vector<std::string>>();
    else if (key == "sim.covariate_prevalences") sim.covariate_prevalences = v.get<std::vector<double>>();
    else if (key == "sim.mean_visits") sim.mean_visits = v.get<double>();
    else if (key == "sim.missing_adherence_rate") sim.missing_adherence_rate = v.get<double>();
    else if (key == "sim.missing_measure_rate") sim.missing_measure_rate = v.get<double>();
    else if (key == "sim.true.lambda") sim.true_adherence.lambda = as_eigen(v);
    else if (key == "sim.true.sigma_delta") sim.true_adherence.sigma_delta = v.get<double>();
    else if (key == "sim.true.beta") {
      Json h = io::to_json(sim.true_health);
      h["beta"] = v;
      sim.true_health = io::health_params_from_json(h);
    }
    else if (key == "sim.true.rho") sim.true_health.rho = as_eigen(v);
    else if (key == "sim.true.phi") sim.true_health.phi = as_eigen(v);
    else if (key == "sim.true.sigma_eps") sim.true_health.sigma_eps = as_eigen(v);
    else if (key == "sim.true.rho_eps") sim.true_health.rho_eps = v.get<double>();
    else if (key == "sim.true.sigma_nu") sim.true_health.sigma_nu = as_eigen(v);
    else if (key == "sim.true.sigma_zero") sim.true_health.sigma_zero = as_eigen(v);
    else if (key == "split.train_fraction") train_fraction = v.get<double>();
    else if (key.rfind("adherence.", 0) == 0) {
      if (!set_mcmc(adherence_mcmc, key.substr(10), v)) throw InvalidInput("unknown config key " + key);
    } else if (key == "health.imputations") n_imputations = v.get<int>();
    else if (key.rfind("health.", 0) == 0) {
      if (!set_mcmc(health_mcmc, key.substr(7), v)) throw InvalidInput("unknown config key " + key);
    }
    else if (key == "smooth.particles") smoother.n_particles = v.get<int>();
    else if (key == "smooth.iterations") smoother.n_iterations = v.get<int>();
    else if (key == "smooth.burn_in_fraction") smoother.burn_in_fraction = v.get<double>();
    else if (key == "smooth.theta_draws") smoother.n_theta_draws = v.get<int>();
    else if (key == "smooth.delta_step_size") smoother.delta_step_size = v.get<double>();
    else if (key == "smooth.delta_steps") smoother.delta_steps = v.get<int>();
    else if (key == "smooth.resampling") {
      const auto s = v.get<std::string>();
      if (s == "multinomial") smoother.resampling = ResamplingScheme::Multinomial;
      else if (s == "systematic") smoother.resampling = ResamplingScheme::Systematic;
      else throw InvalidInput("smooth.resampling must be multinomial or systematic");
    }
    else if (key == "smooth.collapse_delta") smoother.collapse_delta = v.get<bool>();
    else if (key == "smooth.keep_alpha") smoother.keep_alpha = v.get<bool>();
    else if (key == "evaluate.levels") levels = v.get<std::vector<double>>();
    else if (key == "evaluate.baseline_mode") {
      const auto s = v.get<std::string>();
      if (s == "binomial") baseline_mode = BaselineMode::Binomial;
      else if (s == "analytic") baseline_mode = BaselineMode::Analytic;
      else throw InvalidInput("evaluate.baseline_mode must be binomial or analytic");
    }
    else throw InvalidInput("unknown config key " + key);
  } catch (const Json::exception& e) {
    throw InvalidInput("config key " + key + ": " + e.what());
  }
}

void PipelineConfig::apply(const Json& flat) {
  if (!flat.is_object()) throw InvalidInput("config must be a flat JSON object");
  for (const auto& [k, v] : flat.items()) set(k, v);
}

void PipelineConfig::finalize() {
  sim.seed = derive_seed(seed, {0x51});
  adherence_mcmc.seed = derive_seed(seed, {0xA1});
  health_mcmc.seed = derive_seed(seed, {0xB1});
  smoother.seed = derive_seed(seed, {0xC1});
  adherence_mcmc.threads = threads;
  health_mcmc.threads = threads;
}

void PipelineConfig::validate() const {
  if (threads < 1) throw InvalidInput("threads must be >= 1");
  sim.validate();
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw InvalidInput("train_fraction must lie in (0,1)");
  adherence_mcmc.validate();
  health_mcmc.validate();
  if (n_imputations < 1) throw InvalidInput("health.imputations must be >= 1");
  smoother.validate();
  if (levels.empty()) throw InvalidInput("evaluate.levels must not be empty");
  for (double l : levels)
    if (!(l > 0.0 && l < 1.0)) throw InvalidInput("interval levels must lie in (0,1)");
}

std::string PipelineConfig::hash() const { return io::sha256_string(to_json().dump()); }

PipelineConfig load_config(const fs::path& file) {
  PipelineConfig c = PipelineConfig::defaults();
  c.apply(io::read_json(file));
  return c;
}

// ---------------------------------------------------------------- split / selection

CohortSplit split_cohort(std::span<const PatientRecord> cohort, double train_fraction,
                         std::uint64_t seed) {
  if (cohort.empty()) throw InvalidInput("cannot split an empty cohort");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw InvalidInput("train_fraction must lie in (0,1)");
  const auto n = static_cast<int>(cohort.size());
  const int n_train = static_cast<int>(std::lround(train_fraction * n));
  if (n_train < 1 || n_train >= n)
    throw InvalidInput("train_fraction " + std::to_string(train_fraction) + " leaves an empty side for " +
                       std::to_string(n) + " patients");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  std::sort(order.begin(), order.begin() + n_train);
  std::sort(order.begin() + n_train, order.end());
  CohortSplit split;
  for (int i = 0; i < n; ++i) (i < n_train ? split.train : split.test).push_back(cohort[order[i]].id);
  return split;
}

std::vector<int> select_theta_draws(int n, int f, std::uint64_t seed) {
  if (n < 1 || f < 1) throw InvalidInput("theta draw selection needs n >= 1 and f >= 1");
  Rng rng(seed);
  const double offset = rng.uniform();
  std::vector<int> idx(f);
  for (int j = 0; j < f; ++j)
    idx[j] = std::min(n - 1, static_cast<int>(std::floor((j + offset) * n / f)));
  return idx;
}

std::vector<ThetaDraw> paired_theta_draws(const AdherencePosterior& adherence,
                                          const HealthPosterior& health, int f, std::uint64_t seed) {
  const auto ia = select_theta_draws(static_cast<int>(adherence.draws.size()), f, derive_seed(seed, {0x7A}));
  const auto ih = select_theta_draws(static_cast<int>(health.draws.size()), f, derive_seed(seed, {0x7B}));
  std::vector<ThetaDraw> out(f);
  for (int j = 0; j < f; ++j) {
    out[j].adherence = adherence.draws[ia[j]].params;
    out[j].health = health.draws[ih[j]].params;
  }
  return out;
}

// ---------------------------------------------------------------- stages

const char* stage_name(Stage stage) {
  switch (stage) {
    case Stage::Simulate: return "simulate";
    case Stage::Split: return "split";
    case Stage::FitAdherence: return "fit-adherence";
    case Stage::FitHealth: return "fit-health";
    case Stage::Smooth: return "smooth";
    case Stage::Evaluate: return "evaluate";
  }
  return "?";
}

std::vector<Stage> all_stages() {
  return {Stage::Simulate, Stage::Split, Stage::FitAdherence,
          Stage::FitHealth, Stage::Smooth, Stage::Evaluate};
}

StageError::StageError(const std::string& stage, const std::string& patient, const std::string& what)
    : std::runtime_error("stage " + stage + (patient.empty() ? "" : " (patient " + patient + ")") +
                         ": " + what),
      stage_(stage),
      patient_(patient) {}

Json RunManifest::to_json() const {
  Json stages_json = Json::array();
  for (const auto& s : stages)
    stages_json.push_back({{"name", s.name}, {"executed", s.executed}, {"seconds", s.seconds}});
  Json digests_json = Json::object();
  for (const auto& [path, digest] : digests) digests_json[path] = digest;
  return {{"version", version},
          {"seed", seed},
          {"config_hash", config_hash},
          {"stages", stages_json},
          {"digests", digests_json}};
}

namespace {

fs::path stage_dir(Stage stage, const PipelineConfig& c) {
  switch (stage) {
    case Stage::Simulate: return c.out_dir / "cohort";
    case Stage::Split: return c.out_dir / "split";
    case Stage::FitAdherence: return c.out_dir / "adherence";
    case Stage::FitHealth: return c.out_dir / "health";
    case Stage::Smooth: return c.out_dir / "smooth";
    case Stage::Evaluate: return c.out_dir / "evaluate";
  }
  return c.out_dir;
}

std::vector<std::string> stage_outputs(Stage stage) {
  switch (stage) {
    case Stage::Simulate: return {io::kPatientsFile, io::kVisitsFile, io::kCovariatesFile, io::kTruthFile};
    case Stage::Split: return {"split.json"};
    case Stage::FitAdherence: return {"draws.jsonl", "deltas.jsonl", "meta.json"};
    case Stage::FitHealth: return {"draws.jsonl", "meta.json"};
    case Stage::Smooth: return {"summary.csv", "theta_draws.json", "draws"};
    case Stage::Evaluate:
      return {"intervals.csv", "coverage.csv", "baseline_intervals.csv", "baseline_coverage.csv",
              "plot_intervals.csv", "width_correlates.csv"};
  }
  return {};
}

std::vector<std::string> stage_key_prefixes(Stage stage) {
  switch (stage) {
    case Stage::Simulate: return {"seed", "sim."};
    case Stage::Split: return {"split."};
    case Stage::FitAdherence: return {"adherence."};
    case Stage::FitHealth: return {"health."};
    case Stage::Smooth: return {"smooth."};
    case Stage::Evaluate: return {"evaluate."};
  }
  return {};
}

// Fingerprint of a stage: its own config keys chained with every upstream stage's.
std::string stage_fingerprint(Stage stage, const PipelineConfig& c) {
  const Json flat = c.to_json();
  std::string chain;
  for (Stage s : all_stages()) {
    Json subset = Json::object();
    for (const auto& [k, v] : flat.items())
      for (const auto& prefix : stage_key_prefixes(s))
        if (k.rfind(prefix, 0) == 0) subset[k] = v;
    chain = io::sha256_string(chain + stage_name(s) + subset.dump());
    if (s == stage) break;
  }
  return chain;
}

const char* kStampFile = "stamp.json";

struct SplitFile {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

SplitFile read_split(const PipelineConfig& c) {
  const Json j = io::read_json(stage_dir(Stage::Split, c) / "split.json");
  return {j.at("train").get<std::vector<std::string>>(), j.at("test").get<std::vector<std::string>>()};
}

std::vector<PatientRecord> select_patients(const std::vector<PatientRecord>& cohort,
                                           const std::vector<std::string>& ids) {
  std::map<std::string, const PatientRecord*> by_id;
  for (const auto& p : cohort) by_id[p.id] = &p;
  std::vector<PatientRecord> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InvalidInput("split names unknown patient " + id);
    out.push_back(*it->second);
  }
  return out;
}

// Hides the adherence record: smoothing sees health measures and covariates only.
PatientRecord mask_adherence(PatientRecord p) {
  std::fill(p.adherence.begin(), p.adherence.end(), AdherenceDay::Missing);
  return p;
}

void run_simulate(const PipelineConfig& c, const ProgressSink& log) {
  const CohortWithTruth cohort = simulate_cohort(c.sim);
  const fs::path dir = stage_dir(Stage::Simulate, c);
  io::write_cohort(dir, cohort.patients);
  io::write_truth(dir / io::kTruthFile, cohort);
  if (log) log("simulated " + std::to_string(cohort.patients.size()) + " patients");
}

void run_split(const PipelineConfig& c, const ProgressSink& log) {
  const auto cohort = io::read_cohort(stage_dir(Stage::Simulate, c));
  const CohortSplit split = split_cohort(cohort, c.train_fraction, derive_seed(c.seed, {0x5B}));
  Json j = {{"train_fraction", c.train_fraction}, {"train", split.train}, {"test", split.test}};
  io::write_json(stage_dir(Stage::Split, c) / "split.json", j);
  if (log)
    log("split " + std::to_string(split.train.size()) + " train / " + std::to_string(split.test.size()) + " test");
}

std::string rhat_note(double rhat) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "max R-hat %.4f", rhat);
  return buf;
}

void run_fit_adherence(const PipelineConfig& c, const ProgressSink& log) {
  const auto cohort = io::read_cohort(stage_dir(Stage::Simulate, c));
  const auto train = select_patients(cohort, read_split(c).train);
  const AdherencePosterior post = fit_adherence(train, c.adherence_mcmc);
  io::write_adherence_posterior(stage_dir(Stage::FitAdherence, c), post);
  if (log) log("adherence posterior: " + std::to_string(post.draws.size()) + " draws, " + rhat_note(post.max_rhat()));
}

void run_fit_health(const PipelineConfig& c, const ProgressSink& log) {
  const auto cohort = io::read_cohort(stage_dir(Stage::Simulate, c));
  const auto train = select_patients(cohort, read_split(c).train);
  const AdherencePosterior adh = io::read_adherence_posterior(stage_dir(Stage::FitAdherence, c));
  Rng rng(derive_seed(c.health_mcmc.seed, {0x1A}));
  const auto completed = impute_missing_adherence(train, adh, c.n_imputations, rng);
  const HealthPosterior post = fit_health(completed, c.health_mcmc);
  io::write_health_posterior(stage_dir(Stage::FitHealth, c), post);
  if (log) log("health posterior: " + std::to_string(post.draws.size()) + " draws, " + rhat_note(post.max_rhat()));
}

std::vector<std::vector<io::SmoothingDraw>> smooth_patients(const std::vector<PatientRecord>& patients,
                                                            const std::vector<ThetaDraw>& thetas,
                                                            const PipelineConfig& c) {
  const int f = static_cast<int>(thetas.size());
  const int n_tasks = static_cast<int>(patients.size()) * f;
  std::vector<std::vector<Trajectory>> results(n_tasks);
  parallel_for(n_tasks, c.threads, [&](int task) {
    const auto& patient = patients[task / f];
    try {
      results[task] = smooth_patient_theta(patient, thetas[task % f], task % f, c.smoother);
    } catch (const std::exception& e) {
      throw StageError("smooth", patient.id, e.what());
    }
  });
  const int burn = c.smoother.burn_in();
  std::vector<std::vector<io::SmoothingDraw>> out(patients.size());
  for (int task = 0; task < n_tasks; ++task) {
    auto& dest = out[task / f];
    for (std::size_t r = 0; r < results[task].size(); ++r)
      dest.push_back({burn + static_cast<int>(r), task % f, std::move(results[task][r])});
  }
  return out;
}

void run_smooth(const PipelineConfig& c, const ProgressSink& log) {
  const auto cohort = io::read_cohort(stage_dir(Stage::Simulate, c));
  std::vector<PatientRecord> test;
  for (auto& p : select_patients(cohort, read_split(c).test)) test.push_back(mask_adherence(std::move(p)));
  const AdherencePosterior adh = io::read_adherence_posterior(stage_dir(Stage::FitAdherence, c));
  const HealthPosterior health = io::read_health_posterior(stage_dir(Stage::FitHealth, c));
  const int f = c.smoother.n_theta_draws;
  const auto thetas = paired_theta_draws(adh, health, f, c.smoother.seed);

  const fs::path dir = stage_dir(Stage::Smooth, c);
  fs::remove_all(dir);
  fs::create_directories(dir / "draws");
  io::write_json(dir / "theta_draws.json",
                 {{"adherence_draws", select_theta_draws(static_cast<int>(adh.draws.size()), f,
                                                          derive_seed(c.smoother.seed, {0x7A}))},
                  {"health_draws", select_theta_draws(static_cast<int>(health.draws.size()), f,
                                                       derive_seed(c.smoother.seed, {0x7B}))}});

  const auto draws = smooth_patients(test, thetas, c);
  std::string summary =
      "patient,horizon,n_visits,theta_draws,iterations_total,draws_retained,mean_average_adherence\n";
  for (std::size_t i = 0; i < test.size(); ++i) {
    io::write_smoothing_draws(dir / "draws" / (test[i].id + ".jsonl"), draws[i]);
    double mean = 0.0;
    for (const auto& d : draws[i]) mean += average_adherence(d.trajectory.adherence);
    mean /= static_cast<double>(std::max<std::size_t>(1, draws[i].size()));
    summary += test[i].id + "," + std::to_string(test[i].horizon) + "," +
               std::to_string(test[i].observations.size()) + "," + std::to_string(f) + "," +
               std::to_string(c.smoother.n_iterations * f) + "," + std::to_string(draws[i].size()) + "," +
               io::format_double(mean) + "\n";
  }
  io::write_text(dir / "summary.csv", summary);
  if (log)
    log("smoothed " + std::to_string(test.size()) + " test patients x " + std::to_string(f) + " theta draws");
}

std::string interval_rows(const std::vector<AdherenceSummary>& summaries) {
  std::string text = "patient,level,lo,hi,truth,covered\n";
  for (const auto& s : summaries)
    for (const auto& iv : s.intervals)
      text += s.patient_id + "," + io::format_double(iv.level) + "," + io::format_double(iv.lo) + "," +
              io::format_double(iv.hi) + "," + io::format_double(*s.truth) + "," +
              (iv.contains(*s.truth) ? "1" : "0") + "\n";
  return text;
}

std::string coverage_rows(const CoverageReport& report) {
  std::string text = "level,coverage,mean_width,max_width,n_patients\n";
  for (const auto& l : report.levels)
    text += io::format_double(l.nominal) + "," + io::format_double(l.coverage) + "," +
            io::format_double(l.mean_width) + "," + io::format_double(l.max_width) + "," +
            std::to_string(l.n_patients) + "\n";
  return text;
}

void run_evaluate(const PipelineConfig& c, const ProgressSink& log) {
  const auto cohort = io::read_cohort(stage_dir(Stage::Simulate, c));
  const auto test = select_patients(cohort, read_split(c).test);
  const io::TruthFile truth = io::read_truth(stage_dir(Stage::Simulate, c) / io::kTruthFile);
  const AdherencePosterior adh = io::read_adherence_posterior(stage_dir(Stage::FitAdherence, c));
  std::vector<AdherenceParams> theta_a;
  for (const auto& d : adh.draws) theta_a.push_back(d.params);

  std::vector<AdherenceSummary> model, baseline;
  std::vector<CovariateVector> covariates;
  std::vector<double> baseline_means;
  for (const auto& p : test) {
    auto it = truth.patients.find(p.id);
    if (it == truth.patients.end()) throw StageError("evaluate", p.id, "no truth record");
    const double realized = it->second.average_adherence;
    std::vector<double> draws;
    for (const auto& d : io::read_smoothing_draws(stage_dir(Stage::Smooth, c) / "draws" / (p.id + ".jsonl")))
      draws.push_back(average_adherence(d.trajectory.adherence));
    if (draws.empty()) throw StageError("evaluate", p.id, "no smoothing draws");
    model.push_back(AdherenceSummary::from_draws(p.id, std::move(draws), c.levels, realized));

    Rng rng(derive_seed(c.seed, {0xE1, hash_string(p.id)}));
    auto base = baseline_covariate_predictor(p.covariates, p.horizon, theta_a, rng, c.baseline_mode);
    baseline.push_back(AdherenceSummary::from_draws(p.id, std::move(base), c.levels, realized));
    baseline_means.push_back(baseline.back().mean());
    covariates.push_back(p.covariates);
  }
  const CoverageReport report = coverage_report(model, c.levels);
  const CoverageReport base_report = coverage_report(baseline, c.levels);

  const fs::path dir = stage_dir(Stage::Evaluate, c);
  io::write_text(dir / "intervals.csv", interval_rows(model));
  io::write_text(dir / "coverage.csv", coverage_rows(report));
  io::write_text(dir / "baseline_intervals.csv", interval_rows(baseline));
  io::write_text(dir / "baseline_coverage.csv", coverage_rows(base_report));

  // Long format: one row per patient, model and level; rank orders patients by posterior mean.
  std::vector<std::size_t> order(model.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return model[a].mean() < model[b].mean(); });
  std::string plot = "rank,patient,model,level,lo,hi,mean,truth\n";
  for (std::size_t r = 0; r < order.size(); ++r)
    for (const auto* set : {&model, &baseline}) {
      const auto& s = (*set)[order[r]];
      for (const auto& iv : s.intervals)
        plot += std::to_string(r + 1) + "," + s.patient_id + "," + (set == &model ? "health" : "baseline") +
                "," + io::format_double(iv.level) + "," + io::format_double(iv.lo) + "," +
                io::format_double(iv.hi) + "," + io::format_double(s.mean()) + "," +
                io::format_double(*s.truth) + "\n";
    }
  io::write_text(dir / "plot_intervals.csv", plot);

  std::string corr = "level,variable,correlation\n";
  if (model.size() >= 3) {
    for (double level : c.levels)
      for (const auto& cr : width_correlates(model, level, covariates, baseline_means))
        corr += io::format_double(level) + "," + cr.name + "," +
                (cr.correlation ? io::format_double(*cr.correlation) : "") + "\n";
  }
  io::write_text(dir / "width_correlates.csv", corr);

  if (log) {
    std::string msg = "coverage";
    for (const auto& l : report.levels) {
      char buf[96];
      std::snprintf(buf, sizeof buf, " %.2f:%.3f (baseline %.3f)", l.nominal, l.coverage,
                    base_report.at(l.nominal).coverage);
      msg += buf;
    }
    log(msg);
  }
}

void write_stamp(Stage stage, const PipelineConfig& c) {
  io::write_json(stage_dir(stage, c) / kStampFile,
                 {{"stage", stage_name(stage)}, {"fingerprint", stage_fingerprint(stage, c)}});
}

}  // namespace

bool stage_is_current(Stage stage, const PipelineConfig& c) {
  const fs::path dir = stage_dir(stage, c);
  const fs::path stamp = dir / kStampFile;
  if (!fs::exists(stamp)) return false;
  for (const auto& out : stage_outputs(stage))
    if (!fs::exists(dir / out)) return false;
  try {
    return io::read_json(stamp).at("fingerprint").get<std::string>() == stage_fingerprint(stage, c);
  } catch (const std::exception&) {
    return false;
  }
}

StageRecord run_stage(Stage stage, const PipelineConfig& config, const ProgressSink& log) {
  PipelineConfig c = config;
  c.finalize();
  c.validate();
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = stage_dir(stage, c);
  fs::create_directories(dir);
  fs::remove(dir / kStampFile);
  try {
    switch (stage) {
      case Stage::Simulate: run_simulate(c, log); break;
      case Stage::Split: run_split(c, log); break;
      case Stage::FitAdherence: run_fit_adherence(c, log); break;
      case Stage::FitHealth: run_fit_health(c, log); break;
      case Stage::Smooth: run_smooth(c, log); break;
      case Stage::Evaluate: run_evaluate(c, log); break;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage_name(stage), "", e.what());
  }
  write_stamp(stage, c);
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  return {stage_name(stage), true, elapsed.count()};
}

RunManifest run_pipeline(const PipelineConfig& config, const ProgressSink& log) {
  PipelineConfig c = config;
  c.finalize();
  c.validate();
  fs::create_directories(c.out_dir);
  io::write_json(c.out_dir / "config.json", c.to_json());

  RunManifest manifest;
  manifest.config_hash = c.hash();
  manifest.seed = c.seed;
  manifest.version = MEDADHERE_VERSION;
  bool upstream_ran = false;
  for (Stage stage : all_stages()) {
    if (!upstream_ran && stage_is_current(stage, c)) {
      if (log) log(std::string(stage_name(stage)) + ": up to date");
      manifest.stages.push_back({stage_name(stage), false, 0.0});
      continue;
    }
    if (log) log(std::string(stage_name(stage)) + ": running");
    manifest.stages.push_back(run_stage(stage, c, log));
    upstream_ran = true;
  }

  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(c.out_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), c.out_dir).generic_string();
    if (rel == "manifest.json" || rel.ends_with(".tmp")) continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  for (const auto& rel : files) manifest.digests.emplace_back(rel, io::sha256_file(c.out_dir / rel));
  io::write_json(c.out_dir / "manifest.json", manifest.to_json());
  return manifest;
}

PatientInference infer_patient(const PatientRecord& patient, const AdherencePosterior& adherence,
                               const HealthPosterior& health, const PipelineConfig& config) {
  PipelineConfig c = config;
  c.finalize();
  c.smoother.validate();
  const auto thetas = paired_theta_draws(adherence, health, c.smoother.n_theta_draws, c.smoother.seed);
  const std::vector<PatientRecord> one{mask_adherence(patient)};
  PatientInference out;
  out.draws = std::move(smooth_patients(one, thetas, c).front());
  std::vector<double> avg;
  for (const auto& d : out.draws) avg.push_back(average_adherence(d.trajectory.adherence));
  out.summary = AdherenceSummary::from_draws(patient.id, std::move(avg), c.levels);
  return out;
}

}  // namespace medadhere
