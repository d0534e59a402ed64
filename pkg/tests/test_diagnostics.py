"""Bar metric, diameters, operator norms, comparisons, power-law fits."""

import numpy as np
import pytest

from avglorentz import (
    DomainError,
    FieldConfiguration,
    InertialChart,
    LorentzConnection,
    Metric,
    bar_metric,
    compare_trajectories,
    compute_moments,
    diameter,
    fit_power,
    integrate,
    mean_velocity,
    operator_norm,
    sample_ensemble,
)

METRIC = Metric(4)


def unit_velocity(v):
    v = np.asarray(v, dtype=float)
    return np.concatenate([[np.sqrt(1.0 + v @ v)], v])


class TestBarMetric:
    def test_rest_frame_is_euclidean(self):
        U = np.array([1.0, 0.0, 0.0, 0.0])
        bar = bar_metric(U)
        assert np.allclose(bar.matrix, np.eye(4))

    def test_unit_normalization(self):
        U = unit_velocity([0.8, -0.3, 0.1])
        bar = bar_metric(U)
        assert bar.inner(U, U) == pytest.approx(1.0, abs=1e-12)

    def test_positive_definite_at_high_boost(self):
        chi = np.arccosh(np.longdouble(1e3))
        U = np.array([np.cosh(chi), np.sinh(chi), 0, 0], dtype=np.longdouble)
        bar = bar_metric(U)
        assert np.all(bar.eigenvalues() > 0)
        assert abs(bar.inner(U, U) - 1.0) < 1e-12

    def test_boosted_closed_form(self):
        """For U = (gamma, gamma v, 0, 0) the longitudinal eigenvalue is
        2 gamma^2 (1 + v^2) - 1 and transverse directions stay unit."""
        v = 0.6
        gamma = 1.0 / np.sqrt(1.0 - v * v)
        U = np.array([gamma, gamma * v, 0.0, 0.0])
        bar = bar_metric(U)
        assert bar.matrix[2, 2] == pytest.approx(1.0)
        assert bar.matrix[3, 3] == pytest.approx(1.0)
        evs = np.sort(bar.eigenvalues())
        # the time-longitudinal block has det 1, so eigenvalues come in (e, 1/e)
        assert evs[0] * evs[-1] == pytest.approx(1.0, abs=1e-12)

    def test_inner_matches_matrix_form(self):
        U = unit_velocity([0.5, 0.2, -0.1])
        bar = bar_metric(U)
        rng = np.random.default_rng(3)
        a = rng.standard_normal(4)
        b = rng.standard_normal(4)
        assert bar.inner(a, b) == pytest.approx(a @ bar.matrix @ b, rel=1e-12)

    def test_zero_mean_velocity_rejected(self):
        with pytest.raises(DomainError):
            bar_metric(np.zeros(4))
        with pytest.raises(DomainError):
            bar_metric(np.array([2.0, 0.0, 0.0, 0.0]))  # not unit


class TestDiameterAndNorms:
    def test_two_point_diameter(self):
        U = np.array([1.0, 0.0, 0.0, 0.0])
        bar = bar_metric(U)
        ys = np.stack([unit_velocity([0.1, 0, 0]), unit_velocity([-0.1, 0, 0])])
        res = diameter(ys, bar)
        assert res.exact
        assert res.value == pytest.approx(bar.distance(ys[0], ys[1]))

    def test_single_point_diameter_zero(self):
        bar = bar_metric(np.array([1.0, 0, 0, 0]))
        assert diameter(unit_velocity([0.3, 0, 0])[None, :], bar).value == 0.0

    def test_extent_estimate_brackets_exact(self):
        bar = bar_metric(np.array([1.0, 0, 0, 0]))
        rng = np.random.default_rng(4)
        ys = np.stack([unit_velocity(v) for v in 0.1 * rng.standard_normal((50, 3))])
        exact = diameter(ys, bar, exact_limit=1000)
        est = diameter(ys, bar, exact_limit=10)
        assert est.lower <= exact.value <= est.upper + 1e-12

    def test_operator_norm_rest_frame_magnetic(self):
        B = 1.7
        cfg = FieldConfiguration("uniform-magnetic", dimension=4, strength=B)
        bar = bar_metric(np.array([1.0, 0, 0, 0]))
        assert operator_norm(cfg.field_mixed(np.zeros(4)), bar) == pytest.approx(B, abs=1e-10)


class TestMeanVelocity:
    def test_normalized(self):
        mom = compute_moments(sample_ensemble(500, unit_velocity([0.5, 0, 0]), 0.05, seed=1))
        U = mean_velocity(mom)
        assert METRIC.norm2(U) == pytest.approx(1.0, abs=1e-12)

    def test_non_timelike_mean_returns_zero(self):
        class FakeMoments:
            m1 = np.array([0.0, 1.0, 0.0, 0.0])

        assert np.allclose(mean_velocity(FakeMoments()), 0.0)


class TestFitPower:
    def test_recovers_planted_law(self):
        x = np.array([1.0, 2.0, 4.0, 8.0])
        fit = fit_power("alpha", x, 3.0 * x**2.5)
        assert fit.exponent == pytest.approx(2.5, abs=1e-12)
        assert fit.prefactor == pytest.approx(3.0, rel=1e-12)
        assert not fit.refused

    def test_refuses_at_floor(self):
        x = np.array([1.0, 2.0, 4.0])
        fit = fit_power("alpha", x, np.full(3, 1e-16))
        assert fit.refused

    def test_stderr_zero_for_exact_law(self):
        x = np.array([1.0, 2.0, 4.0, 8.0])
        fit = fit_power("E", x, x**-2.0)
        assert fit.stderr == pytest.approx(0.0, abs=1e-10)


class TestCompareTrajectories:
    def test_identical_trajectories_have_zero_gap(self):
        cfg = FieldConfiguration("uniform-magnetic", dimension=4, strength=1.0)
        conn = LorentzConnection(METRIC, InertialChart(4), cfg)
        yc = unit_velocity([0.5, 0.0, 0.0])
        traj = integrate(conn, np.zeros(4), yc, 1.0, 0.01)
        ens = sample_ensemble(200, yc, 0.02, seed=2)
        mom = compute_moments(ens)
        bar = bar_metric(mean_velocity(mom) / np.sqrt(METRIC.norm2(mean_velocity(mom))))
        rep = compare_trajectories(traj, traj, mom, bar)
        assert np.max(rep.dx) == 0.0
        assert np.max(rep.dy) == 0.0
        assert np.all(np.diff(rep.t_lab) > 0)

    def test_csv_schema(self, tmp_path):
        cfg = FieldConfiguration("uniform-magnetic", dimension=4, strength=1.0)
        conn = LorentzConnection(METRIC, InertialChart(4), cfg)
        yc = unit_velocity([0.5, 0.0, 0.0])
        traj = integrate(conn, np.zeros(4), yc, 0.5, 0.01)
        ens = sample_ensemble(100, yc, 0.02, seed=2)
        mom = compute_moments(ens)
        U = mean_velocity(mom)
        bar = bar_metric(U / np.sqrt(METRIC.norm2(U)))
        rep = compare_trajectories(traj, traj, mom, bar)
        path = tmp_path / "cmp.csv"
        rep.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "t_lab,dx,dy,theta2,bar_theta2,gamma_bar,alpha,E"
