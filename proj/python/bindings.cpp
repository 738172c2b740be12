#include "medadhere/adherence_mcmc.hpp"
#include "medadhere/evaluate.hpp"
#include "medadhere/health_mcmc.hpp"
#include "medadhere/io.hpp"
#include "medadhere/kalman.hpp"
#include "medadhere/pipeline.hpp"
#include "medadhere/simulate.hpp"
#include "medadhere/smoother.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace medadhere;

namespace {

// Configs cross the boundary as flat JSON text; the Python wrapper handles dicts.
PipelineConfig make_config(const std::string& flat_json, const std::string& out_dir, int threads) {
  PipelineConfig c = PipelineConfig::defaults();
  c.apply(io::Json::parse(flat_json));
  if (!out_dir.empty()) c.out_dir = out_dir;
  c.threads = threads;
  return c;
}

Stage stage_from_name(const std::string& name) {
  for (Stage s : all_stages())
    if (name == stage_name(s)) return s;
  throw InvalidInput("unknown stage " + name);
}

std::vector<double> average_adherence_of(const std::vector<Trajectory>& draws) {
  return average_adherence_draws(draws);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Adherence inference from sparse health measures";
  m.attr("__version__") = MEDADHERE_VERSION;

  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<io::FormatError>(m, "FormatError", PyExc_IOError);

  py::class_<CovariateVector>(m, "CovariateVector")
      .def(py::init<>())
      .def(py::init([](Eigen::VectorXd values, std::vector<std::string> names) {
             CovariateVector x{std::move(values), std::move(names)};
             x.validate();
             return x;
           }),
           py::arg("values"), py::arg("names"))
      .def_readwrite("values", &CovariateVector::values)
      .def_readwrite("names", &CovariateVector::names);

  py::class_<HealthObservation>(m, "HealthObservation")
      .def(py::init([](int day, std::vector<std::optional<double>> values) {
             return HealthObservation{day, std::move(values)};
           }),
           py::arg("day"), py::arg("values"))
      .def_readwrite("day", &HealthObservation::day)
      .def_readwrite("values", &HealthObservation::values);

  py::class_<PatientRecord>(m, "PatientRecord")
      .def(py::init<>())
      .def_readwrite("id", &PatientRecord::id)
      .def_readwrite("horizon", &PatientRecord::horizon)
      .def_property(
          "adherence",
          [](const PatientRecord& p) {
            std::vector<int> v;
            for (auto d : p.adherence) v.push_back(static_cast<int>(d));
            return v;
          },
          [](PatientRecord& p, const std::vector<int>& v) {
            p.adherence.clear();
            for (int d : v) {
              if (d < -1 || d > 1) throw InvalidInput("adherence entries must be -1, 0 or 1");
              p.adherence.push_back(static_cast<AdherenceDay>(d));
            }
          },
          "Daily adherence: 1 taken, -1 not taken, 0 missing")
      .def_readwrite("observations", &PatientRecord::observations)
      .def_readwrite("covariates", &PatientRecord::covariates)
      .def("validate", &PatientRecord::validate, py::arg("n_measures") = 0);

  py::class_<AdherenceParams>(m, "AdherenceParams")
      .def(py::init<>())
      .def_readwrite("lam", &AdherenceParams::lambda)
      .def_readwrite("sigma_delta", &AdherenceParams::sigma_delta);

  py::class_<HealthParams>(m, "HealthParams")
      .def(py::init<>())
      .def_readwrite("beta", &HealthParams::beta)
      .def_readwrite("rho", &HealthParams::rho)
      .def_readwrite("phi", &HealthParams::phi)
      .def_readwrite("sigma_eps", &HealthParams::sigma_eps)
      .def_readwrite("rho_eps", &HealthParams::rho_eps)
      .def_readwrite("sigma_nu", &HealthParams::sigma_nu)
      .def_readwrite("sigma_zero", &HealthParams::sigma_zero)
      .def("validate", &HealthParams::validate);

  py::class_<ThetaDraw>(m, "ThetaDraw")
      .def(py::init([](AdherenceParams a, HealthParams h) { return ThetaDraw{std::move(a), std::move(h)}; }),
           py::arg("adherence"), py::arg("health"))
      .def_readwrite("adherence", &ThetaDraw::adherence)
      .def_readwrite("health", &ThetaDraw::health);

  py::class_<PatientTruth>(m, "PatientTruth")
      .def_readonly("id", &PatientTruth::id)
      .def_readonly("delta", &PatientTruth::delta)
      .def_readonly("alpha", &PatientTruth::alpha)
      .def_readonly("adherence", &PatientTruth::adherence)
      .def_property_readonly("average_adherence", &PatientTruth::average_adherence);

  py::class_<CohortWithTruth>(m, "Cohort")
      .def_readonly("patients", &CohortWithTruth::patients)
      .def_readonly("truths", &CohortWithTruth::truths)
      .def_readonly("adherence_params", &CohortWithTruth::adherence_params)
      .def_readonly("health_params", &CohortWithTruth::health_params);

  m.def("default_adherence_params", &default_adherence_params);
  m.def("default_health_params", &default_health_params);

  m.def(
      "simulate_cohort",
      [](int n_patients, std::uint64_t seed, double mean_days, double mean_visits) {
        SimulationConfig c = SimulationConfig::defaults();
        c.n_patients = n_patients;
        c.seed = seed;
        c.mean_days = mean_days;
        c.mean_visits = mean_visits;
        c.validate();
        return simulate_cohort(c);
      },
      py::arg("n_patients"), py::arg("seed"), py::arg("mean_days") = 98.0, py::arg("mean_visits") = 2.0,
      "Synthetic cohort under the default true parameters");

  m.def(
      "kalman_loglik",
      [](const PatientRecord& p, const std::vector<std::int8_t>& path, const HealthParams& h) {
        return kalman_loglik(p, path, h);
      },
      py::arg("patient"), py::arg("path"), py::arg("health"), "log p(y | c, theta_h)");

  m.def(
      "kalman_smoother",
      [](const PatientRecord& p, const std::vector<std::int8_t>& path, const HealthParams& h) {
        const auto r = kalman_smoother(p, path, h);
        return py::make_tuple(r.smoothed_means, r.smoothed_covs);
      },
      py::arg("patient"), py::arg("path"), py::arg("health"), "Smoothed means (K x T) and covariances");

  m.def(
      "enumerate_exact",
      [](const PatientRecord& p, const ThetaDraw& theta) {
        const auto r = enumerate_exact(p, theta);
        py::dict d;
        d["day_marginals"] = r.day_marginals;
        d["average_pmf"] = r.average_pmf;
        d["log_evidence"] = r.log_evidence;
        return d;
      },
      py::arg("patient"), py::arg("theta"), "Exact day marginals for horizons up to 14 days");

  m.def(
      "pgas",
      [](const PatientRecord& p, const ThetaDraw& theta, int particles, int iterations,
         double burn_in_fraction, std::uint64_t seed) {
        SmootherConfig c;
        c.n_particles = particles;
        c.n_iterations = iterations;
        c.burn_in_fraction = burn_in_fraction;
        c.seed = seed;
        c.validate();
        std::vector<Trajectory> draws;
        {
          py::gil_scoped_release release;
          Rng rng(seed);
          draws = pgas_chain(p, theta, c, rng);
        }
        py::dict d;
        d["day_marginals"] = day_marginals(draws);
        d["average_adherence"] = average_adherence_of(draws);
        std::vector<double> deltas;
        for (const auto& t : draws) deltas.push_back(t.delta);
        d["delta"] = deltas;
        return d;
      },
      py::arg("patient"), py::arg("theta"), py::arg("particles") = 32, py::arg("iterations") = 100,
      py::arg("burn_in_fraction") = 0.2, py::arg("seed") = 1,
      "Particle Gibbs with ancestor sampling for one patient and one theta draw");

  m.def(
      "importance_smoother",
      [](const PatientRecord& p, const ThetaDraw& theta, int samples, std::uint64_t seed) {
        Rng rng(seed);
        const auto r = importance_smoother(p, theta, samples, rng);
        return py::make_tuple(r.day_marginals(), r.ess);
      },
      py::arg("patient"), py::arg("theta"), py::arg("samples"), py::arg("seed") = 1,
      "Day marginals and effective sample size of the prior importance sampler");

  m.def(
      "credible_interval",
      [](const std::vector<double>& draws, double level) { return credible_interval(draws, level); },
      py::arg("draws"), py::arg("level"));

  m.def("_default_config", [] { return PipelineConfig::defaults().to_json().dump(); });

  m.def(
      "_run_pipeline",
      [](const std::string& flat, const std::string& out_dir, int threads) {
        PipelineConfig c = make_config(flat, out_dir, threads);
        c.finalize();
        py::gil_scoped_release release;
        return run_pipeline(c).to_json().dump();
      },
      py::arg("config"), py::arg("out_dir"), py::arg("threads"));

  m.def(
      "_run_stage",
      [](const std::string& stage, const std::string& flat, const std::string& out_dir, int threads) {
        const PipelineConfig c = make_config(flat, out_dir, threads);
        py::gil_scoped_release release;
        const StageRecord r = run_stage(stage_from_name(stage), c);
        return r.seconds;
      },
      py::arg("stage"), py::arg("config"), py::arg("out_dir"), py::arg("threads"));

  m.def(
      "_infer_patient",
      [](const PatientRecord& p, const std::string& run_dir, const std::string& flat, int threads) {
        PipelineConfig c = make_config(flat, run_dir, threads);
        c.finalize();
        const auto adh = io::read_adherence_posterior(c.out_dir / "adherence");
        const auto health = io::read_health_posterior(c.out_dir / "health");
        PatientInference r;
        {
          py::gil_scoped_release release;
          r = infer_patient(p, adh, health, c);
        }
        py::dict d;
        d["draws"] = r.summary.draws;
        d["mean"] = r.summary.mean();
        py::dict intervals;
        for (const auto& iv : r.summary.intervals) intervals[py::float_(iv.level)] = py::make_tuple(iv.lo, iv.hi);
        d["intervals"] = intervals;
        return d;
      },
      py::arg("patient"), py::arg("run_dir"), py::arg("config"), py::arg("threads"));

  m.def("read_cohort", [](const std::string& dir) { return io::read_cohort(dir); }, py::arg("dir"));
}
