#include "medadhere/evaluate.hpp"

#include "medadhere/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace medadhere {

std::vector<double> average_adherence_draws(std::span<const Trajectory> draws) {
  if (draws.empty()) throw InvalidInput("average adherence needs at least one draw");
  std::vector<double> out;
  out.reserve(draws.size());
  for (const auto& d : draws) out.push_back(average_adherence(d.adherence));
  return out;
}

double empirical_quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw InvalidInput("quantile of an empty sample");
  if (!(prob >= 0.0 && prob <= 1.0)) throw InvalidInput("quantile probability outside [0,1]");
  const double h = prob * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double a = values[lo];
  if (hi == lo) return a;
  const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return a + (h - static_cast<double>(lo)) * (b - a);
}

std::pair<double, double> credible_interval(std::span<const double> draws, double level) {
  if (draws.empty()) throw InvalidInput("credible interval of an empty sample");
  if (!(level >= 0.0 && level < 1.0)) throw InvalidInput("interval level must lie in [0,1)");
  std::vector<double> v(draws.begin(), draws.end());
  return {empirical_quantile(v, 0.5 * (1.0 - level)), empirical_quantile(v, 0.5 * (1.0 + level))};
}

AdherenceSummary AdherenceSummary::from_draws(std::string id, std::vector<double> draws,
                                              std::span<const double> levels,
                                              std::optional<double> truth) {
  AdherenceSummary s;
  s.patient_id = std::move(id);
  s.draws = std::move(draws);
  s.truth = truth;
  for (double level : levels) {
    auto [lo, hi] = credible_interval(s.draws, level);
    s.intervals.push_back({level, lo, hi});
  }
  return s;
}

const Interval& AdherenceSummary::at(double level) const {
  for (const auto& iv : intervals)
    if (std::abs(iv.level - level) < 1e-12) return iv;
  throw InvalidInput("no interval at level " + std::to_string(level) + " for " + patient_id);
}

double AdherenceSummary::mean() const {
  if (draws.empty()) return 0.0;
  return std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(draws.size());
}

const LevelCoverage& CoverageReport::at(double level) const {
  for (const auto& l : levels)
    if (std::abs(l.nominal - level) < 1e-12) return l;
  throw InvalidInput("coverage report has no level " + std::to_string(level));
}

CoverageReport coverage_report(std::span<const AdherenceSummary> summaries,
                               std::span<const double> levels) {
  std::string missing;
  for (const auto& s : summaries)
    if (!s.truth) missing += (missing.empty() ? "" : ", ") + s.patient_id;
  if (!missing.empty()) throw InvalidInput("patients without truth: " + missing);

  CoverageReport report;
  report.covered.assign(summaries.size(), std::vector<bool>(levels.size(), false));
  for (const auto& s : summaries) report.patient_ids.push_back(s.patient_id);
  for (std::size_t l = 0; l < levels.size(); ++l) {
    LevelCoverage lc;
    lc.nominal = levels[l];
    lc.n_patients = static_cast<int>(summaries.size());
    int hits = 0;
    double width_sum = 0.0;
    for (std::size_t i = 0; i < summaries.size(); ++i) {
      const Interval& iv = summaries[i].at(levels[l]);
      const bool in = iv.contains(*summaries[i].truth);
      report.covered[i][l] = in;
      hits += in ? 1 : 0;
      width_sum += iv.width();
      lc.max_width = std::max(lc.max_width, iv.width());
    }
    if (!summaries.empty()) {
      lc.coverage = static_cast<double>(hits) / static_cast<double>(summaries.size());
      lc.mean_width = width_sum / static_cast<double>(summaries.size());
    }
    report.levels.push_back(lc);
  }
  return report;
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("correlation of columns with different lengths");
  const auto n = static_cast<double>(a.size());
  if (a.size() < 2) return std::nullopt;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  // relative tolerance so that columns constant up to rounding count as constant
  const double tol = 1e-24 * n;
  if (saa <= tol * (1.0 + ma * ma) || sbb <= tol * (1.0 + mb * mb)) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<Correlate> width_correlates(std::span<const AdherenceSummary> summaries, double level,
                                        std::span<const CovariateVector> covariates,
                                        std::span<const double> baseline_means) {
  if (summaries.size() < 3) throw InvalidInput("width correlates need at least 3 patients");
  if (covariates.size() != summaries.size() || baseline_means.size() != summaries.size())
    throw InvalidInput("width correlates: inputs must align with summaries");
  std::vector<double> widths;
  for (const auto& s : summaries) widths.push_back(s.at(level).width());

  std::vector<Correlate> out;
  const int p = covariates.front().size();
  for (int j = 1; j < p; ++j) {
    std::vector<double> col;
    for (const auto& x : covariates) {
      if (x.size() != p) throw InvalidInput("width correlates: covariate length mismatch");
      col.push_back(x.values[j]);
    }
    out.push_back({covariates.front().names.at(j), pearson(widths, col)});
  }
  out.push_back({"baseline_mean", pearson(widths, baseline_means)});
  return out;
}

std::vector<double> baseline_covariate_predictor(const CovariateVector& x, int horizon,
                                                 std::span<const AdherenceParams> draws, Rng& rng,
                                                 BaselineMode mode) {
  if (horizon < 1) throw InvalidInput("baseline predictor needs a horizon >= 1");
  std::vector<double> out;
  out.reserve(draws.size());
  for (const auto& theta : draws) {
    const double delta = rng.normal(0.0, theta.sigma_delta);
    const double p = adherence_prob(delta, theta, x);
    if (mode == BaselineMode::Analytic) {
      out.push_back(p);
    } else {
      std::binomial_distribution<int> binom(horizon, p);
      out.push_back(static_cast<double>(binom(rng.engine())) / horizon);
    }
  }
  return out;
}

}  // namespace medadhere
