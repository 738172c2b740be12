#pragma once

#include "medadhere/adherence_mcmc.hpp"
#include "medadhere/health_mcmc.hpp"
#include "medadhere/simulate.hpp"
#include "medadhere/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace medadhere::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

/// Raised for unreadable or malformed files; the message names the file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Cohort directory layout:
//   patients.csv    id,day,adherence          adherence in {1,0,NA}
//   visits.csv      id,day,y1,...,yK          empty cell = component absent
//   covariates.csv  id,intercept,<features>   one row per patient
//   truth.json      simulation parameters and per-patient realized paths
inline constexpr const char* kPatientsFile = "patients.csv";
inline constexpr const char* kVisitsFile = "visits.csv";
inline constexpr const char* kCovariatesFile = "covariates.csv";
inline constexpr const char* kTruthFile = "truth.json";

void write_cohort(const fs::path& dir, const std::vector<PatientRecord>& patients);
/// Patients in covariates.csv row order. `n_measures` is taken from the
/// visits.csv header.
std::vector<PatientRecord> read_cohort(const fs::path& dir);

struct TruthRecord {
  std::string id;
  double delta = 0.0;
  AdherencePath adherence;
  double average_adherence = 0.0;
};

struct TruthFile {
  AdherenceParams adherence;
  HealthParams health;
  std::map<std::string, TruthRecord> patients;
};

void write_truth(const fs::path& file, const CohortWithTruth& cohort);
TruthFile read_truth(const fs::path& file);

/// "1" for taken, "0" for not taken, day 1 first.
std::string to_bitstring(std::span<const std::int8_t> path);
AdherencePath from_bitstring(const std::string& bits);

Json to_json(const AdherenceParams& params);
Json to_json(const HealthParams& params);
AdherenceParams adherence_params_from_json(const Json& j);
HealthParams health_params_from_json(const Json& j);

// Adherence posterior:
//   draws.jsonl   {"chain","iter","lambda":[...],"sigma_delta"}
//   deltas.jsonl  {"chain","iter","deltas":{"<id>":value,...}}   same line order
//   meta.json     covariate names, patient ids, diagnostics
void write_adherence_posterior(const fs::path& dir, const AdherencePosterior& posterior);
AdherencePosterior read_adherence_posterior(const fs::path& dir);

// Health posterior (schema "medadhere.health_draws" version 1):
//   draws.jsonl   {"imputation","chain","iter","theta":{"<label>":value,...}}
//   meta.json     schema, version, covariate names, n_measures, labels, diagnostics
inline constexpr int kHealthSchemaVersion = 1;
void write_health_posterior(const fs::path& dir, const HealthPosterior& posterior);
HealthPosterior read_health_posterior(const fs::path& dir);

struct SmoothingDraw {
  int iteration = 0;
  int theta_draw = 0;
  Trajectory trajectory;
};

/// One JSON line per retained draw: {"iter","theta_draw","delta","adherence":"0110..."}
/// plus "alpha":[[...],...] when the path is kept.
void write_smoothing_draws(const fs::path& file, const std::vector<SmoothingDraw>& draws);
std::vector<SmoothingDraw> read_smoothing_draws(const fs::path& file);

/// Shortest round-trip representation of a double.
std::string format_double(double v);

Json read_json(const fs::path& file);
void write_json(const fs::path& file, const Json& j);
/// Writes through a temporary file and renames, so a crash never leaves a
/// truncated artifact in place.
void write_text(const fs::path& file, const std::string& text);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const fs::path& file);
std::string sha256_string(const std::string& text);

}  // namespace medadhere::io
