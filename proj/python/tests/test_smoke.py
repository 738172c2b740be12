import math

import numpy as np
import pytest

import medadhere as ma


def small_patient(horizon=6):
    p = ma.PatientRecord()
    p.id = "P1"
    p.horizon = horizon
    p.adherence = [0] * horizon
    p.covariates = ma.CovariateVector(np.array([1.0, 1.0, 0.0, 1.0, 0.0]),
                                      ["intercept", "female", "black", "obese", "diabetes"])
    p.observations = [ma.HealthObservation(2, [128.0, 84.0]), ma.HealthObservation(horizon, [140.0, None])]
    return p


def default_theta():
    return ma.ThetaDraw(ma.default_adherence_params(), ma.default_health_params())


def test_simulate_cohort_shapes():
    cohort = ma.simulate_cohort(10, seed=3, mean_days=30)
    assert len(cohort.patients) == len(cohort.truths) == 10
    for p, t in zip(cohort.patients, cohort.truths):
        assert p.id == t.id
        assert len(p.adherence) == p.horizon == len(t.adherence)
        assert 0.0 <= t.average_adherence <= 1.0
        assert t.alpha.shape == (2, p.horizon)
    again = ma.simulate_cohort(10, seed=3, mean_days=30)
    assert [p.horizon for p in again.patients] == [p.horizon for p in cohort.patients]


def test_kalman_and_exact_smoothing():
    p = small_patient()
    theta = default_theta()
    ll = ma.kalman_loglik(p, [1] * p.horizon, theta.health)
    assert math.isfinite(ll)
    means, covs = ma.kalman_smoother(p, [1] * p.horizon, theta.health)
    assert means.shape == (2, p.horizon) and len(covs) == p.horizon

    exact = ma.enumerate_exact(p, theta)
    assert exact["day_marginals"].shape == (p.horizon,)
    assert exact["average_pmf"].sum() == pytest.approx(1.0)

    est = ma.pgas(p, theta, particles=32, iterations=1500, seed=5)
    assert len(est["average_adherence"]) == 1200
    assert np.max(np.abs(est["day_marginals"] - exact["day_marginals"])) < 0.08
    marg, ess = ma.importance_smoother(p, theta, 20000, seed=2)
    assert np.max(np.abs(marg - exact["day_marginals"])) < 0.03 and ess > 100


def test_credible_interval_and_errors():
    lo, hi = ma.credible_interval(list(np.linspace(0, 1, 101)), 0.8)
    assert lo == pytest.approx(0.1) and hi == pytest.approx(0.9)
    p = small_patient(20)
    with pytest.raises(ma.InvalidInput):
        ma.enumerate_exact(p, default_theta())
    with pytest.raises(ValueError):
        p.adherence = [2] * 20


def test_pipeline_and_infer_patient(tmp_path):
    cfg = ma.default_config()
    assert "smooth.particles" in cfg
    cfg.update({
        "seed": 5,
        "sim.n_patients": 30,
        "sim.mean_days": 20,
        "split.train_fraction": 0.8,
        "adherence.iterations": 400,
        "health.iterations": 400,
        "health.imputations": 1,
        "smooth.theta_draws": 4,
        "smooth.iterations": 20,
    })
    manifest = ma.run_pipeline(cfg, tmp_path / "run")
    assert [s["name"] for s in manifest["stages"]] == list(ma.STAGES)
    assert (tmp_path / "run" / "evaluate" / "coverage.csv").exists()
    again = ma.run_pipeline(cfg, tmp_path / "run")
    assert not any(s["executed"] for s in again["stages"])

    out = ma.infer_patient(small_patient(), tmp_path / "run", cfg)
    assert len(out["draws"]) == 4 * 16
    lo, hi = out["intervals"][0.8]
    assert 0.0 <= lo <= hi <= 1.0
    with pytest.raises(ValueError):
        ma.run_stage("nonsense", cfg, tmp_path / "run")
