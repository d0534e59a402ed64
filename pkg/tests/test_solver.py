"""Integrator: closed-form oracles, order, invariants, serialization."""

import numpy as np
import pytest

from avglorentz import (
    DomainError,
    FieldConfiguration,
    InertialChart,
    LorentzConnection,
    Metric,
    Trajectory,
    convergence_order,
    integrate,
)
from avglorentz.validate import exact_constant_field_state


def unit_velocity(v):
    v = np.asarray(v, dtype=float)
    return np.concatenate([[np.sqrt(1.0 + v @ v)], v])


METRIC = Metric(4)
CHART = InertialChart(4)


class TestOracles:
    def test_cyclotron_final_state(self):
        cfg = FieldConfiguration("uniform-magnetic", dimension=4, strength=1.0, plane=(1, 2))
        conn = LorentzConnection(METRIC, CHART, cfg)
        y0 = unit_velocity([0.6, 0.2, 0.1])
        traj = integrate(conn, np.zeros(4), y0, 2.0, 1e-3)
        xe, ye = exact_constant_field_state(cfg, np.zeros(4), y0, 2.0)
        assert np.max(np.abs(traj.x[-1] - xe)) < 1e-8
        assert np.max(np.abs(traj.y[-1] - ye)) < 1e-8

    def test_hyperbolic_final_state(self):
        cfg = FieldConfiguration("uniform-electric", dimension=4, strength=0.8, axis=1)
        conn = LorentzConnection(METRIC, CHART, cfg)
        y0 = unit_velocity([0.3, 0.0, 0.0])
        traj = integrate(conn, np.zeros(4), y0, 2.0, 1e-3)
        xe, ye = exact_constant_field_state(cfg, np.zeros(4), y0, 2.0)
        assert np.max(np.abs(traj.x[-1] - xe)) < 1e-8

    def test_hyperbolic_matches_cosh_sinh(self):
        """Pure boost from rest: y = (cosh(E tau), sinh(E tau), 0, 0)."""
        E = 0.5
        cfg = FieldConfiguration("uniform-electric", dimension=4, strength=E, axis=1)
        conn = LorentzConnection(METRIC, CHART, cfg)
        y0 = unit_velocity([0.0, 0.0, 0.0])
        T = 1.5
        traj = integrate(conn, np.zeros(4), y0, T, 1e-3)
        assert traj.y[-1][0] == pytest.approx(np.cosh(E * T), abs=1e-9)
        assert abs(traj.y[-1][1]) == pytest.approx(np.sinh(E * T), abs=1e-9)

    def test_zero_field_free_streaming(self):
        cfg = FieldConfiguration("zero", dimension=4)
        conn = LorentzConnection(METRIC, CHART, cfg)
        y0 = unit_velocity([0.4, -0.1, 0.2])
        traj = integrate(conn, np.zeros(4), y0, 3.0, 0.01)
        assert np.allclose(traj.x[-1], 3.0 * y0, atol=1e-12)
        assert np.allclose(traj.y[-1], y0, atol=1e-14)


class TestOrderAndInvariants:
    def test_rk4_order(self):
        cfg = FieldConfiguration("crossed", dimension=4, e_strength=0.5, b_strength=1.0)
        conn = LorentzConnection(METRIC, CHART, cfg)
        rep = convergence_order(conn, np.zeros(4), unit_velocity([0.4, 0.3, 0.0]), 1.0, 0.02)
        assert rep.order == pytest.approx(4.0, abs=0.2)

    def test_order_saturates_on_exact_case(self):
        cfg = FieldConfiguration("zero", dimension=4)
        conn = LorentzConnection(METRIC, CHART, cfg)
        rep = convergence_order(conn, np.zeros(4), unit_velocity([0.2, 0, 0]), 1.0, 0.02)
        assert rep.saturated

    def test_norm_conservation_long_run(self):
        cfg = FieldConfiguration("uniform-magnetic", dimension=4, strength=1.0)
        conn = LorentzConnection(METRIC, CHART, cfg)
        traj = integrate(conn, np.zeros(4), unit_velocity([0.5, 0.2, 0.1]), 10.0, 1e-3)
        assert traj.norm_drift(METRIC) < 1e-9

    def test_initial_velocity_must_be_on_shell(self):
        cfg = FieldConfiguration("uniform-magnetic", dimension=4, strength=1.0)
        conn = LorentzConnection(METRIC, CHART, cfg)
        with pytest.raises(DomainError):
            integrate(conn, np.zeros(4), np.array([1.5, 0.0, 0.0, 0.0]), 1.0, 0.01)

    def test_reproject_keeps_norm_exact(self):
        cfg = FieldConfiguration("uniform-electric", dimension=4, strength=0.8)
        conn = LorentzConnection(METRIC, CHART, cfg)
        traj = integrate(conn, np.zeros(4), unit_velocity([0.3, 0, 0]), 4.0, 0.01,
                         reproject=True, metric=METRIC)
        assert traj.norm_drift(METRIC) < 1e-13


class TestTrajectory:
    def test_csv_roundtrip(self, tmp_path):
        cfg = FieldConfiguration("uniform-magnetic", dimension=4, strength=1.0)
        conn = LorentzConnection(METRIC, CHART, cfg)
        traj = integrate(conn, np.zeros(4), unit_velocity([0.5, 0, 0]), 1.0, 0.01)
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        back = Trajectory.from_csv(path)
        assert np.array_equal(back.x, traj.x)
        assert np.array_equal(back.y, traj.y)

    def test_uniform_time_grid(self):
        cfg = FieldConfiguration("zero", dimension=4)
        conn = LorentzConnection(METRIC, CHART, cfg)
        traj = integrate(conn, np.zeros(4), unit_velocity([0, 0, 0]), 1.0, 0.1)
        assert len(traj.t) == 11
        assert np.allclose(np.diff(traj.t), 0.1)
