#pragma once

#include "medadhere/evaluate.hpp"
#include "medadhere/io.hpp"
#include "medadhere/mcmc.hpp"
#include "medadhere/simulate.hpp"
#include "medadhere/smoother.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace medadhere {

/// Everything a run needs. Serializes to a flat JSON object whose keys are
/// documented in the README ("sim.n_patients", "smooth.particles", ...).
struct PipelineConfig {
  std::filesystem::path out_dir = "medadhere-out";
  std::uint64_t seed = 1;
  int threads = 1;
  SimulationConfig sim = SimulationConfig::defaults();
  double train_fraction = 400.0 / 503.0;
  McmcConfig adherence_mcmc;
  McmcConfig health_mcmc;
  int n_imputations = 5;
  SmootherConfig smoother;
  std::vector<double> levels{0.5, 0.8, 0.95};
  BaselineMode baseline_mode = BaselineMode::Binomial;

  static PipelineConfig defaults();
  /// Flat key/value view; `threads` and `out_dir` are excluded because they
  /// never change results.
  io::Json to_json() const;
  /// Applies every key present in `flat`; unknown keys are an error.
  void apply(const io::Json& flat);
  void set(const std::string& key, const io::Json& value);
  /// Derives every component seed from the global seed and copies the
  /// thread count into the components.
  void finalize();
  void validate() const;
  std::string hash() const;
};

PipelineConfig load_config(const std::filesystem::path& file);

struct CohortSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// Deterministic shuffled split: round(train_fraction * n) training patients.
CohortSplit split_cohort(std::span<const PatientRecord> cohort, double train_fraction,
                         std::uint64_t seed);

/// f indices spread evenly over [0, n) with a seed-derived offset.
std::vector<int> select_theta_draws(int n, int f, std::uint64_t seed);

/// Stages in execution order.
enum class Stage { Simulate, Split, FitAdherence, FitHealth, Smooth, Evaluate };
const char* stage_name(Stage stage);
std::vector<Stage> all_stages();

struct StageRecord {
  std::string name;
  bool executed = false;
  double seconds = 0.0;
};

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string version;
  std::vector<StageRecord> stages;
  std::vector<std::pair<std::string, std::string>> digests;  // relative path, sha256

  io::Json to_json() const;
};

/// Raised when a stage fails; carries the stage name and, when known, the patient.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& patient, const std::string& what);
  const std::string& stage() const { return stage_; }
  const std::string& patient() const { return patient_; }

 private:
  std::string stage_;
  std::string patient_;
};

using ProgressSink = std::function<void(const std::string&)>;

/// Runs one stage from the persisted outputs of its upstream stages.
StageRecord run_stage(Stage stage, const PipelineConfig& config, const ProgressSink& log = {});

/// True when the stage's stamp matches the config and all outputs exist.
bool stage_is_current(Stage stage, const PipelineConfig& config);

/// Runs every stage that is stale or downstream of a stage that ran, then
/// writes manifest.json with per-stage timings and output digests.
RunManifest run_pipeline(const PipelineConfig& config, const ProgressSink& log = {});

struct PatientInference {
  std::vector<io::SmoothingDraw> draws;
  AdherenceSummary summary;
};

/// Smooths one new patient against persisted posterior draws.
PatientInference infer_patient(const PatientRecord& patient, const AdherencePosterior& adherence,
                               const HealthPosterior& health, const PipelineConfig& config);

/// Paired theta draws used for smoothing.
std::vector<ThetaDraw> paired_theta_draws(const AdherencePosterior& adherence,
                                          const HealthPosterior& health, int f, std::uint64_t seed);

}  // namespace medadhere
