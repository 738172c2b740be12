#pragma once

#include "medadhere/rng.hpp"
#include "medadhere/types.hpp"

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace medadhere {

/// Average adherence of each draw, on the proportion scale.
std::vector<double> average_adherence_draws(std::span<const Trajectory> draws);

/// Equal-tailed interval from the empirical quantiles at (1 -/+ level)/2,
/// linear interpolation between order statistics.
std::pair<double, double> credible_interval(std::span<const double> draws, double level);

double empirical_quantile(std::vector<double> values, double prob);

struct Interval {
  double level = 0.0;
  double lo = 0.0;
  double hi = 0.0;

  double width() const { return hi - lo; }
  bool contains(double v) const { return lo <= v && v <= hi; }  // closed
};

struct AdherenceSummary {
  std::string patient_id;
  std::vector<double> draws;
  std::vector<Interval> intervals;  // one per requested level, in request order
  std::optional<double> truth;

  static AdherenceSummary from_draws(std::string id, std::vector<double> draws,
                                     std::span<const double> levels,
                                     std::optional<double> truth = std::nullopt);
  const Interval& at(double level) const;
  double mean() const;
};

struct LevelCoverage {
  double nominal = 0.0;
  double coverage = 0.0;
  double mean_width = 0.0;
  double max_width = 0.0;
  int n_patients = 0;
};

struct CoverageReport {
  std::vector<LevelCoverage> levels;
  std::vector<std::string> patient_ids;
  std::vector<std::vector<bool>> covered;  // [patient][level]

  const LevelCoverage& at(double level) const;
};

/// Throws InvalidInput listing every patient without a truth value.
CoverageReport coverage_report(std::span<const AdherenceSummary> summaries,
                               std::span<const double> levels);

/// Pearson correlation; nullopt when either column has zero variance.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

struct Correlate {
  std::string name;
  std::optional<double> correlation;
};

/// Correlations of interval width at `level` with every non-intercept
/// covariate and with the baseline-predicted mean adherence.
std::vector<Correlate> width_correlates(std::span<const AdherenceSummary> summaries, double level,
                                        std::span<const CovariateVector> covariates,
                                        std::span<const double> baseline_means);

enum class BaselineMode {
  Binomial,  // realized average over the horizon: Binomial(T, p) / T
  Analytic   // the adherence probability itself
};

/// Covariate-only predictive draws of average adherence, one per theta_a
/// draw: delta ~ N(0, sigma_delta^2), p = adherence_prob(delta, theta_a, x).
std::vector<double> baseline_covariate_predictor(const CovariateVector& x, int horizon,
                                                 std::span<const AdherenceParams> draws, Rng& rng,
                                                 BaselineMode mode = BaselineMode::Binomial);

}  // namespace medadhere
