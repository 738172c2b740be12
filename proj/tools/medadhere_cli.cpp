#include "medadhere/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace medadhere;
namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--config", opt.config_path, "Flat JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", opt.seed, "Global seed (overrides the config)");
  cmd->add_option("--threads", opt.threads, "Worker threads (results do not depend on it)");
  cmd->add_option("--out", opt.out, "Output directory");
  cmd->add_option("--set", opt.overrides, "Override a config key: key=value (value parsed as JSON)");
}

PipelineConfig build_config(const CommonOptions& opt) {
  PipelineConfig c = PipelineConfig::defaults();
  if (!opt.config_path.empty()) c = load_config(opt.config_path);
  for (const auto& kv : opt.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidInput("--set expects key=value, got " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string text = kv.substr(eq + 1);
    io::Json value;
    try {
      value = io::Json::parse(text);
    } catch (const io::Json::exception&) {
      value = text;
    }
    c.set(key, value);
  }
  if (opt.seed) c.seed = *opt.seed;
  if (opt.threads) c.threads = *opt.threads;
  if (!opt.out.empty()) c.out_dir = opt.out;
  return c;
}

void log_line(const std::string& msg) { std::cerr << "[medadhere] " << msg << "\n"; }

int run_single_stage(Stage stage, const CommonOptions& opt) {
  const PipelineConfig c = build_config(opt);
  const StageRecord r = run_stage(stage, c, log_line);
  std::printf("%s finished in %.2f s\n", r.name.c_str(), r.seconds);
  return 0;
}

int run_all(const CommonOptions& opt) {
  if (!opt.seed) throw InvalidInput("run-all requires --seed");
  const PipelineConfig c = build_config(opt);
  const RunManifest m = run_pipeline(c, log_line);
  for (const auto& s : m.stages)
    std::printf("%-14s %s %8.2f s\n", s.name.c_str(), s.executed ? "ran    " : "current", s.seconds);
  std::printf("manifest: %s\n", (c.out_dir / "manifest.json").string().c_str());
  return 0;
}

int infer(const CommonOptions& opt, const std::string& patient_dir, const std::string& id,
          const std::string& draws_dir) {
  const PipelineConfig c = build_config(opt);
  const fs::path posterior_root = draws_dir.empty() ? c.out_dir : fs::path(draws_dir);
  const auto cohort = io::read_cohort(patient_dir);
  const PatientRecord* patient = nullptr;
  for (const auto& p : cohort)
    if (id.empty() ? cohort.size() == 1 : p.id == id) patient = &p;
  if (!patient)
    throw InvalidInput(id.empty() ? "patient directory holds several patients; pass --id"
                                  : "patient " + id + " not found in " + patient_dir);
  const auto adh = io::read_adherence_posterior(posterior_root / "adherence");
  const auto health = io::read_health_posterior(posterior_root / "health");
  const PatientInference result = infer_patient(*patient, adh, health, c);

  const fs::path out_file = c.out_dir / "infer" / (patient->id + ".jsonl");
  io::write_smoothing_draws(out_file, result.draws);
  std::printf("patient %s: %zu draws, mean average adherence %.4f\n", patient->id.c_str(),
              result.draws.size(), result.summary.mean());
  for (const auto& iv : result.summary.intervals)
    std::printf("  %.0f%% interval [%.4f, %.4f]\n", 100.0 * iv.level, iv.lo, iv.hi);
  std::printf("draws: %s\n", out_file.string().c_str());
  return 0;
}

// Compares PGAS and the importance sampler against exact enumeration on
// small simulated fixtures drawn from the configured true parameters.
int oracle(const CommonOptions& opt, int n_fixtures, int horizon, int visits, int samples) {
  PipelineConfig c = build_config(opt);
  c.finalize();
  const ThetaDraw theta{c.sim.true_adherence, c.sim.true_health};
  std::string csv = "fixture,day,exact,pgas,importance\n";
  std::printf("%-8s %-4s %-8s %-10s %-10s\n", "fixture", "T", "visits", "tv_pgas", "tv_is");
  for (int f = 0; f < n_fixtures; ++f) {
    Rng rng(derive_seed(c.seed, {0x0AC1, static_cast<std::uint64_t>(f)}));
    const CovariateVector x = sample_covariates(c.sim, rng);
    std::vector<int> days;
    for (int t = 1; t <= horizon; ++t) days.push_back(t);
    std::vector<int> chosen;
    for (int v = 0; v < std::min(visits, horizon); ++v) {
      const int pick = rng.uniform_int(0, static_cast<int>(days.size()) - 1);
      chosen.push_back(days[pick]);
      days.erase(days.begin() + pick);
    }
    std::sort(chosen.begin(), chosen.end());
    auto [patient, truth] = simulate_patient("F" + std::to_string(f), x, horizon, theta.adherence,
                                             theta.health, chosen, rng);
    const ExactPosterior exact = enumerate_exact(patient, theta);
    SmootherConfig sc = c.smoother;
    sc.n_iterations = samples;
    sc.burn_in_fraction = 0.2;
    const auto draws = pgas_chain(patient, theta, sc, rng);
    const Eigen::VectorXd pg = day_marginals(draws);
    const Eigen::VectorXd is = importance_smoother(patient, theta, 50 * samples, rng).day_marginals();
    double tv_pg = 0.0, tv_is = 0.0;
    for (int t = 0; t < horizon; ++t) {
      tv_pg = std::max(tv_pg, std::abs(pg[t] - exact.day_marginals[t]));
      tv_is = std::max(tv_is, std::abs(is[t] - exact.day_marginals[t]));
      csv += std::to_string(f) + "," + std::to_string(t + 1) + "," + io::format_double(exact.day_marginals[t]) +
             "," + io::format_double(pg[t]) + "," + io::format_double(is[t]) + "\n";
    }
    std::printf("%-8d %-4d %-8zu %-10.4f %-10.4f\n", f, horizon, chosen.size(), tv_pg, tv_is);
  }
  const fs::path out_file = c.out_dir / "oracle" / "fixtures.csv";
  io::write_text(out_file, csv);
  std::printf("day marginals: %s\n", out_file.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Infer unobserved medication adherence from sparse health measures"};
  app.set_version_flag("--version", MEDADHERE_VERSION);
  app.require_subcommand(1);

  CommonOptions opt;
  struct StageCmd {
    const char* name;
    Stage stage;
    const char* help;
  };
  const StageCmd stages[] = {
      {"simulate", Stage::Simulate, "Simulate a cohort with known truth"},
      {"split", Stage::Split, "Split the cohort into training and test patients"},
      {"fit-adherence", Stage::FitAdherence, "Sample the adherence-model posterior"},
      {"fit-health", Stage::FitHealth, "Impute missing adherence and sample the health-model posterior"},
      {"smooth", Stage::Smooth, "Smooth adherence paths of the test patients"},
      {"evaluate", Stage::Evaluate, "Intervals, coverage and baseline comparison"},
  };
  std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
  for (const auto& s : stages) {
    CLI::App* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, opt);
    stage_cmds.emplace_back(cmd, s.stage);
  }

  CLI::App* all = app.add_subcommand("run-all", "Run every stale stage and write the manifest");
  add_common(all, opt);

  CLI::App* inf = app.add_subcommand("infer-patient", "Smooth one new patient with persisted draws");
  add_common(inf, opt);
  std::string patient_dir, patient_id, draws_dir;
  inf->add_option("--patient-dir", patient_dir, "Directory with patients.csv, visits.csv, covariates.csv")
      ->required()
      ->check(CLI::ExistingDirectory);
  inf->add_option("--id", patient_id, "Patient id (needed when the directory holds several)");
  inf->add_option("--draws", draws_dir, "Run directory holding adherence/ and health/ (default: --out)");

  CLI::App* orc = app.add_subcommand("oracle", "Check smoothers against exact enumeration");
  add_common(orc, opt);
  int n_fixtures = 5, horizon = 8, visits = 2, samples = 2000;
  orc->add_option("--fixtures", n_fixtures, "Number of fixtures")->check(CLI::PositiveNumber);
  orc->add_option("--horizon", horizon, "Days per fixture (<= 14)")->check(CLI::Range(1, 14));
  orc->add_option("--visits", visits, "Visit days per fixture")->check(CLI::NonNegativeNumber);
  orc->add_option("--iterations", samples, "PGAS iterations")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    for (const auto& [cmd, stage] : stage_cmds)
      if (cmd->parsed()) return run_single_stage(stage, opt);
    if (all->parsed()) return run_all(opt);
    if (inf->parsed()) return infer(opt, patient_dir, patient_id, draws_dir);
    if (orc->parsed()) return oracle(opt, n_fixtures, horizon, visits, samples);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
