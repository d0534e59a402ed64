"""Geometry layer: metric algebra, field catalog, connection identities."""

import numpy as np
import pytest

from avglorentz import (
    ConfigurationError,
    CylindricalChart,
    FieldConfiguration,
    InertialChart,
    LorentzConnection,
    Metric,
    NonTimelikeError,
    autoparallel_acceleration,
    boost_matrix,
    field_tensor,
    lorentz_coeffs,
    make_chart,
)


def unit_velocity(v):
    v = np.asarray(v, dtype=float)
    return np.concatenate([[np.sqrt(1.0 + v @ v)], v])


class TestMetric:
    def test_signature(self):
        m = Metric(4)
        assert np.allclose(np.diag(m.matrix), [1, -1, -1, -1])

    def test_inner_and_lower_roundtrip(self):
        m = Metric(4)
        rng = np.random.default_rng(0)
        v = rng.standard_normal(4)
        assert m.inner(v, v) == pytest.approx(v[0] ** 2 - np.sum(v[1:] ** 2))
        assert np.allclose(m.raise_(m.lower(v)), v)

    def test_batched_inner(self):
        m = Metric(3)
        V = np.random.default_rng(1).standard_normal((5, 3))
        singles = [m.inner(v, v) for v in V]
        assert np.allclose(m.norm2(V), singles)


class TestBoost:
    def test_maps_rest_frame_to_u(self):
        m = Metric(4)
        u = unit_velocity([0.7, -0.2, 0.4])
        L = boost_matrix(u)
        e0 = np.zeros(4)
        e0[0] = 1.0
        assert np.allclose(L @ e0, u)

    def test_preserves_metric(self):
        m = Metric(4)
        u = unit_velocity([0.9, 0.1, 0.0])
        L = boost_matrix(u)
        assert np.allclose(L.T @ m.matrix @ L, m.matrix, atol=1e-12)


class TestFieldCatalog:
    @pytest.mark.parametrize("name,params", [
        ("zero", {}),
        ("uniform-electric", {"strength": 0.5}),
        ("uniform-magnetic", {"strength": 1.0, "plane": (1, 2)}),
        ("crossed", {}),
        ("plane-wave", {"amplitude": 0.3, "omega": 2.0}),
    ])
    def test_field_antisymmetric(self, name, params):
        cfg = FieldConfiguration(name, dimension=4, **params)
        x = np.array([0.3, 0.1, -0.4, 0.2])
        F = cfg.field(x)
        assert np.allclose(F, -F.T, atol=1e-14)

    def test_field_is_curl_of_potential(self):
        rng = np.random.default_rng(5)
        L = 0.3 * rng.standard_normal((4, 4))
        Q = 0.2 * rng.standard_normal((4, 4, 4))
        cfg = FieldConfiguration("polynomial", dimension=4, linear=L, quadratic=Q)
        x = np.array([0.2, -0.1, 0.3, 0.4])
        eps = 1e-6
        F_num = np.zeros((4, 4))
        for i in range(4):
            dx = np.zeros(4)
            dx[i] = eps
            dA = (cfg.potential(x + dx) - cfg.potential(x - dx)) / (2 * eps)
            F_num[i] += dA
        F_num = F_num - F_num.T
        assert np.allclose(cfg.field(x), F_num, atol=1e-8)

    def test_uniform_magnetic_components(self):
        cfg = FieldConfiguration("uniform-magnetic", dimension=4, strength=2.5, plane=(1, 2))
        F = cfg.field(np.zeros(4))
        assert F[1, 2] == pytest.approx(2.5)
        assert np.count_nonzero(F) == 2

    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigurationError):
            FieldConfiguration("monopole", dimension=4)

    def test_bad_plane_rejected(self):
        with pytest.raises(ConfigurationError):
            FieldConfiguration("uniform-magnetic", dimension=3, plane=(1, 3))

    def test_field_tensor_helper(self):
        cfg = FieldConfiguration("uniform-magnetic", dimension=4, strength=1.0)
        assert np.allclose(field_tensor(cfg, np.zeros(4)), cfg.field(np.zeros(4)))


class TestLorentzConnection:
    def setup_method(self):
        self.metric = Metric(4)
        self.chart = InertialChart(4)
        self.cfg = FieldConfiguration("crossed", dimension=4, e_strength=0.4, b_strength=0.9)
        self.conn = LorentzConnection(self.metric, self.chart, self.cfg)

    def test_coeffs_symmetric_in_lower_indices(self):
        y = unit_velocity([0.5, 0.1, -0.2])
        G = self.conn.coeffs(np.zeros(4), y)
        assert np.allclose(G, np.swapaxes(G, 1, 2), atol=1e-14)

    def test_contraction_matches_force(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.uniform(-1, 1, 4)
            y = unit_velocity(rng.uniform(-0.8, 0.8, 3))
            G = lorentz_coeffs(self.metric, self.chart, self.cfg, x, y)
            a = -np.einsum("ijk,j,k->i", G, y, y)
            assert np.allclose(a, self.conn.acceleration(x, y), atol=1e-12)

    def test_acceleration_orthogonal_to_velocity(self):
        y = unit_velocity([0.6, -0.3, 0.2])
        a = self.conn.acceleration(np.zeros(4), y)
        assert abs(self.metric.inner(y, a)) < 1e-12

    def test_batched_acceleration(self):
        Y = np.stack([unit_velocity([0.5, 0, 0]), unit_velocity([0, 0.4, 0.1])])
        A = self.conn.acceleration(np.zeros(4), Y)
        assert np.allclose(A[0], self.conn.acceleration(np.zeros(4), Y[0]))

    def test_spacelike_velocity_rejected(self):
        with pytest.raises(NonTimelikeError):
            self.conn.coeffs(np.zeros(4), np.array([0.1, 1.0, 0.0, 0.0]))

    def test_autoparallel_acceleration_helper(self):
        y = unit_velocity([0.3, 0.2, 0.0])
        assert np.allclose(
            autoparallel_acceleration(self.conn, np.zeros(4), y),
            self.conn.acceleration(np.zeros(4), y),
        )


class TestCharts:
    def test_make_chart(self):
        assert isinstance(make_chart("inertial", 4), InertialChart)
        assert isinstance(make_chart("cylindrical", 4), CylindricalChart)
        with pytest.raises(ConfigurationError):
            make_chart("spherical", 4)

    def test_cylindrical_roundtrip(self):
        chart = CylindricalChart()
        x = np.array([0.5, 1.2, 0.7, -0.3])  # (t, r, phi, z)
        X = chart.to_inertial(x)
        assert np.allclose(chart.from_inertial(X), x, atol=1e-12)

    def test_cylindrical_jacobian_matches_finite_differences(self):
        chart = CylindricalChart()
        x = np.array([0.1, 0.9, 0.4, 0.2])
        J = chart.jacobian(x)
        eps = 1e-7
        for j in range(4):
            dx = np.zeros(4)
            dx[j] = eps
            col = (chart.to_inertial(x + dx) - chart.to_inertial(x - dx)) / (2 * eps)
            assert np.allclose(J[:, j], col, atol=1e-6)

    def test_cylindrical_christoffel_symmetric(self):
        chart = CylindricalChart()
        G = chart.christoffel(np.array([0.0, 1.5, 0.3, 0.0]))
        assert np.allclose(G, np.swapaxes(G, 1, 2))

    def test_lorentz_force_chart_covariance(self):
        """The same physical trajectory point computed in both charts."""
        metric = Metric(4)
        cfg = FieldConfiguration("uniform-magnetic", dimension=4, strength=1.0)
        inertial = LorentzConnection(metric, InertialChart(4), cfg)
        cyl_chart = CylindricalChart()
        cylindrical = LorentzConnection(metric, cyl_chart, cfg)
        x_cyl = np.array([0.0, 1.0, 0.5, 0.2])
        X = cyl_chart.to_inertial(x_cyl)
        J = cyl_chart.jacobian(x_cyl)
        y_in = unit_velocity([0.4, 0.1, 0.2])
        y_cyl = np.linalg.solve(J, y_in)
        a_in = inertial.acceleration(X, y_in)
        a_cyl = cylindrical.acceleration(x_cyl, y_cyl)
        # transform chart acceleration back: a_in = J a_cyl + dJ/dtau y_cyl
        eps = 1e-6
        dJ = np.zeros((4, 4))
        for j in range(4):
            dx = np.zeros(4)
            dx[j] = eps
            dJ += (cyl_chart.jacobian(x_cyl + dx) - cyl_chart.jacobian(x_cyl - dx)) / (2 * eps) * y_cyl[j]
        assert np.allclose(J @ a_cyl + dJ @ y_cyl, a_in, atol=1e-6)
