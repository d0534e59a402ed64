"""Ensembles, fiber moments, and the averaged affine connection."""

import numpy as np
import pytest

from avglorentz import (
    AveragedConnection,
    ConstantMoments,
    DomainError,
    Ensemble,
    FieldConfiguration,
    InertialChart,
    KernelMoments,
    LorentzConnection,
    Metric,
    averaged_coeffs,
    bar_metric,
    compute_moments,
    normal_frame,
    quadrature_ensemble,
    sample_ensemble,
)

METRIC = Metric(4)
CHART = InertialChart(4)


def unit_velocity(v):
    v = np.asarray(v, dtype=float)
    return np.concatenate([[np.sqrt(1.0 + v @ v)], v])


YC = unit_velocity([0.6, 0.0, 0.0])


class TestSampleEnsemble:
    def test_on_shell_and_weighted(self):
        ens = sample_ensemble(500, YC, 0.05, seed=1)
        assert np.allclose(METRIC.norm2(ens.y), 1.0, atol=1e-12)
        assert np.all(ens.w > 0)
        assert np.sum(ens.w) == pytest.approx(500.0)

    def test_mean_approaches_center(self):
        ens = sample_ensemble(20000, YC, 0.02, seed=2)
        m1 = np.average(ens.y, axis=0, weights=ens.w)
        assert np.max(np.abs(m1 - YC)) < 5e-3

    def test_seed_reproducible_bitwise(self):
        a = sample_ensemble(100, YC, 0.05, seed=3)
        b = sample_ensemble(100, YC, 0.05, seed=3)
        assert np.array_equal(a.y, b.y)
        assert not np.array_equal(a.y, sample_ensemble(100, YC, 0.05, seed=4).y)

    def test_zero_spread_collapses(self):
        ens = sample_ensemble(10, YC, 0.0, seed=5)
        assert np.allclose(ens.y, YC, atol=1e-14)

    def test_negative_spread_rejected(self):
        with pytest.raises(DomainError):
            sample_ensemble(10, YC, -0.1, seed=0)


class TestQuadratureEnsemble:
    def test_weights_and_shell(self):
        ens = quadrature_ensemble(YC, 0.05, 0.4, n_pos=5, n_vel=6)
        assert np.sum(ens.w) == pytest.approx(1.0, abs=1e-14)
        assert np.allclose(METRIC.norm2(ens.y), 1.0, atol=1e-12)

    def test_deterministic(self):
        a = quadrature_ensemble(YC, 0.05, 0.4, n_pos=5, n_vel=6)
        b = quadrature_ensemble(YC, 0.05, 0.4, n_pos=5, n_vel=6)
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.w, b.w)

    def test_zero_spread_single_node(self):
        ens = quadrature_ensemble(YC, 0.0, 0.0, n_pos=1, n_vel=1)
        assert ens.y.shape[0] == 1
        assert np.allclose(ens.y[0], YC, atol=1e-14)

    def test_mean_velocity_accuracy(self):
        """Gauss-Hermite integrates the Gaussian mean exactly."""
        ens = quadrature_ensemble(YC, 0.03, 0.0, n_pos=1, n_vel=10)
        m1 = np.average(ens.y, axis=0, weights=ens.w)
        U = m1 / np.sqrt(METRIC.norm2(m1))
        assert np.max(np.abs(U[2:])) < 1e-14  # symmetry: no transverse drift


class TestMoments:
    def test_m2_consistency(self):
        ens = sample_ensemble(2000, YC, 0.05, seed=7)
        mom = compute_moments(ens)
        m2_direct = np.einsum("a,ai,aj->ij", ens.w / np.sum(ens.w), ens.y, ens.y)
        assert np.allclose(mom.m2, m2_direct, atol=1e-13)

    def test_m3_symmetric(self):
        mom = compute_moments(sample_ensemble(500, YC, 0.1, seed=8))
        for perm in [(0, 2, 1), (1, 0, 2), (2, 1, 0)]:
            assert np.allclose(mom.m3, np.transpose(mom.m3, perm), atol=1e-14)

    def test_energy_is_lab_mean(self):
        ens = sample_ensemble(500, YC, 0.05, seed=9)
        mom = compute_moments(ens)
        assert mom.energy == pytest.approx(np.average(ens.y[:, 0], weights=ens.w))


class TestAveragedConnection:
    def setup_method(self):
        self.cfg = FieldConfiguration("uniform-magnetic", dimension=4, strength=1.0, plane=(1, 2))
        self.ens = sample_ensemble(400, YC, 0.05, seed=5)
        self.mom = compute_moments(self.ens)
        self.conn = AveragedConnection(METRIC, CHART, self.cfg, ConstantMoments(self.mom))

    def test_y_independent_bitwise(self):
        x = np.array([0.3, -0.2, 0.1, 0.4])
        ya = unit_velocity([0.5, 0.1, 0.0])
        yb = unit_velocity([-0.3, 0.6, 0.2])
        assert np.array_equal(self.conn.coeffs(x, ya), self.conn.coeffs(x, yb))

    def test_symmetric_lower_indices(self):
        G = self.conn.coeffs(np.array([0.3, -0.2, 0.1, 0.4]), None)
        assert np.allclose(G, np.swapaxes(G, 1, 2), atol=1e-14)

    def test_frozen_path_matches_direct(self):
        x = np.array([0.1, 0.5, -0.2, 0.0])
        G_direct = averaged_coeffs(METRIC, CHART, self.cfg, self.mom, x)
        assert np.allclose(self.conn.coeffs(x, None), G_direct, atol=1e-15)

    def test_delta_consistency(self):
        """A single-particle bunch recovers the Lorentz force exactly."""
        yc = unit_velocity([0.6, 0.3, 0.0])
        ens = Ensemble(x=np.zeros((1, 4)), y=yc[None, :], w=np.ones(1))
        avg = AveragedConnection(METRIC, CHART, self.cfg, ConstantMoments(compute_moments(ens)))
        lor = LorentzConnection(METRIC, CHART, self.cfg)
        x = np.array([0.2, -0.1, 0.4, 0.0])
        assert np.allclose(avg.acceleration(x, yc), lor.acceleration(x, yc), atol=1e-12)

    def test_mutated_third_moment_breaks_delta_consistency(self):
        yc = unit_velocity([0.6, 0.3, 0.0])
        ens = Ensemble(x=np.zeros((1, 4)), y=yc[None, :], w=np.ones(1))
        avg = AveragedConnection(METRIC, CHART, self.cfg, ConstantMoments(compute_moments(ens)),
                                 flip_third_moment_sign=True)
        lor = LorentzConnection(METRIC, CHART, self.cfg)
        x = np.array([0.2, -0.1, 0.4, 0.0])
        gap = np.max(np.abs(avg.acceleration(x, yc) - lor.acceleration(x, yc)))
        assert gap > 1e-3

    def test_normal_frame_coeffs_vanish(self):
        x0 = np.array([0.1, 0.2, -0.3, 0.0])
        chart = normal_frame(self.conn, x0)
        assert np.max(np.abs(chart.transformed_coeffs(x0))) < 1e-10

    def test_acceleration_from_contraction(self):
        x = np.array([0.0, 0.1, 0.2, 0.0])
        y = unit_velocity([0.5, 0.0, 0.0])
        G = self.conn.coeffs(x, None)
        assert np.allclose(
            self.conn.acceleration(x, y),
            -np.einsum("ijk,j,k->i", G, y, y),
            atol=1e-13,
        )


class TestKernelMoments:
    def test_local_selection_and_global_fallback(self):
        ens = sample_ensemble(300, YC, 0.05, seed=6, position_spread=0.5)
        prov = KernelMoments(ens, radius=0.3)
        near = prov(np.average(ens.x, axis=0, weights=ens.w))
        far = prov(np.array([0.0, 50.0, 0.0, 0.0]))  # empty kernel -> global
        glob = compute_moments(ens)
        assert np.allclose(far.m1, glob.m1)
        assert near.m1.shape == (4,)
