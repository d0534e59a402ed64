"""Minkowski geometry, electromagnetic field catalog, and connection fields.

Conventions: natural units c = 1, charge-to-mass ratio folded into the field
tensor, metric signature (+, -, ..., -) so timelike vectors have eta(y, y) > 0.
Indices run 0..d-1 with 0 the laboratory time axis.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, NonTimelikeError

#: strict lower bound on eta(y, y) for the velocity-dependent connection
EPS_TIMELIKE = 1e-10


class Metric:
    """The Minkowski metric diag(+1, -1, ..., -1) in the inertial chart."""

    def __init__(self, dimension=4):
        if dimension < 2:
            raise ConfigurationError(f"spacetime dimension must be >= 2, got {dimension}")
        self.dimension = dimension
        sig = -np.ones(dimension)
        sig[0] = 1.0
        self.matrix = np.diag(sig)
        self.inverse = self.matrix  # diag(+-1) is its own inverse
        self.signature = sig

    def inner(self, a, b):
        """eta(a, b); broadcasts over leading axes, preserves dtype."""
        a = np.asarray(a)
        b = np.asarray(b)
        sig = self.signature.astype(a.dtype) if a.dtype != self.signature.dtype else self.signature
        return np.sum(a * b * sig, axis=-1)

    def norm2(self, y):
        return self.inner(y, y)

    def lower(self, y):
        y = np.asarray(y)
        return y * self.signature.astype(y.dtype)

    def raise_(self, y_cov):
        y_cov = np.asarray(y_cov)
        return y_cov * self.signature.astype(y_cov.dtype)


class Chart:
    """A coordinate chart with analytic maps to/from the inertial chart."""

    name = "abstract"

    def to_inertial(self, x):
        raise NotImplementedError

    def from_inertial(self, X):
        raise NotImplementedError

    def jacobian(self, x):
        """J^a_i = d X^a / d x^i of to_inertial at chart point x."""
        raise NotImplementedError

    def christoffel(self, x):
        """Levi-Civita coefficients of eta expressed in this chart."""
        raise NotImplementedError

    def metric_components(self, x, metric):
        """g_ij(x) = eta_ab J^a_i J^b_j."""
        J = self.jacobian(x)
        return J.T @ metric.matrix @ J


class InertialChart(Chart):
    """The global inertial chart: identity maps, vanishing coefficients."""

    name = "inertial"

    def __init__(self, dimension=4):
        self.dimension = dimension

    def to_inertial(self, x):
        return np.asarray(x)

    def from_inertial(self, X):
        return np.asarray(X)

    def jacobian(self, x):
        return np.eye(self.dimension)

    def christoffel(self, x):
        return np.zeros((self.dimension,) * 3)

    def metric_components(self, x, metric):
        return metric.matrix


class CylindricalChart(Chart):
    """Cylindrical spatial coordinates (t, r, phi, z) on 4d Minkowski space.

    Ships solely for chart-covariance checks of the covariant force law;
    requires r > 0.
    """

    name = "cylindrical"
    dimension = 4

    def to_inertial(self, x):
        t, r, phi, z = x
        return np.array([t, r * np.cos(phi), r * np.sin(phi), z])

    def from_inertial(self, X):
        t, x1, x2, z = X
        return np.array([t, np.hypot(x1, x2), np.arctan2(x2, x1), z])

    def jacobian(self, x):
        _, r, phi, _ = x
        c, s = np.cos(phi), np.sin(phi)
        return np.array(
            [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, c, -r * s, 0.0],
                [0.0, s, r * c, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )

    def christoffel(self, x):
        _, r, _, _ = x
        G = np.zeros((4, 4, 4))
        G[1, 2, 2] = -r
        G[2, 1, 2] = G[2, 2, 1] = 1.0 / r
        return G


_CHARTS = {"inertial": InertialChart, "cylindrical": CylindricalChart}


def make_chart(name, dimension=4):
    try:
        cls = _CHARTS[name]
    except KeyError:
        raise ConfigurationError(f"unknown chart {name!r}") from None
    if cls is CylindricalChart:
        if dimension != 4:
            raise ConfigurationError("cylindrical chart requires dimension 4")
        return cls()
    return cls(dimension)


class FieldConfiguration:
    """An electromagnetic potential from a closed analytic catalog.

    The potential A_j and the field F_ij = dA are evaluated in the inertial
    chart; ``field`` accepts batched events of shape (..., d).

    Catalog entries and parameters:

    - ``zero``
    - ``uniform-electric``: strength, axis (default 1); A_0 = strength * x^axis
    - ``uniform-magnetic``: strength, plane (default (1, 2)); A_p2 = strength * x^p1
    - ``crossed``: e_strength along axis 1 plus b_strength in the (1, 2) plane
    - ``plane-wave``: amplitude, omega; A_2 = amplitude * cos(omega (x^0 - x^1))
    - ``polynomial``: linear (d, d) matrix L with A_j = L[j, m] x^m and
      optional quadratic (d, d, d) array Q (symmetric in its last two slots)
      with A_j += Q[j, m, n] x^m x^n
    """

    CATALOG = ("zero", "uniform-electric", "uniform-magnetic", "crossed", "plane-wave", "polynomial")

    def __init__(self, name, dimension=4, **params):
        if name not in self.CATALOG:
            raise ConfigurationError(f"unknown potential {name!r}; catalog: {self.CATALOG}")
        self.name = name
        self.dimension = d = dimension
        self.params = dict(params)
        self._metric = Metric(d)
        p = self.params
        if name == "uniform-electric":
            p.setdefault("strength", 1.0)
            p.setdefault("axis", 1)
            if not 1 <= p["axis"] < d:
                raise ConfigurationError("uniform-electric axis out of range")
        elif name == "uniform-magnetic":
            p.setdefault("strength", 1.0)
            p.setdefault("plane", (1, 2))
            i, j = p["plane"]
            if not (1 <= i < d and 1 <= j < d and i != j):
                raise ConfigurationError("uniform-magnetic plane out of range")
        elif name == "crossed":
            p.setdefault("e_strength", 1.0)
            p.setdefault("b_strength", 1.0)
            if d < 3:
                raise ConfigurationError("crossed field requires dimension >= 3")
        elif name == "plane-wave":
            p.setdefault("amplitude", 1.0)
            p.setdefault("omega", 1.0)
            if d < 3:
                raise ConfigurationError("plane-wave requires dimension >= 3")
        elif name == "polynomial":
            L = np.asarray(p.get("linear", np.zeros((d, d))), dtype=float)
            if L.shape != (d, d):
                raise ConfigurationError("polynomial linear part must be a (d, d) matrix")
            p["linear"] = L
            Q = p.get("quadratic")
            if Q is not None:
                Q = np.asarray(Q, dtype=float)
                if Q.shape != (d, d, d):
                    raise ConfigurationError("polynomial quadratic part must be (d, d, d)")
                Q = 0.5 * (Q + np.swapaxes(Q, 1, 2))  # symmetrize the slot pair
            p["quadratic"] = Q

    def potential(self, X):
        """Covariant components A_j at inertial event(s) X."""
        X = np.asarray(X, dtype=float)
        d = self.dimension
        A = np.zeros(X.shape)
        p = self.params
        if self.name == "zero":
            pass
        elif self.name == "uniform-electric":
            A[..., 0] = p["strength"] * X[..., p["axis"]]
        elif self.name == "uniform-magnetic":
            i, j = p["plane"]
            A[..., j] = p["strength"] * X[..., i]
        elif self.name == "crossed":
            A[..., 0] = p["e_strength"] * X[..., 1]
            A[..., 2] = p["b_strength"] * X[..., 1]
        elif self.name == "plane-wave":
            phase = p["omega"] * (X[..., 0] - X[..., 1])
            A[..., 2] = p["amplitude"] * np.cos(phase)
        elif self.name == "polynomial":
            A = np.einsum("jm,...m->...j", p["linear"], X)
            if p["quadratic"] is not None:
                A = A + np.einsum("jmn,...m,...n->...j", p["quadratic"], X, X)
        return A

    def field(self, X):
        """F_ij = d_i A_j - d_j A_i at inertial event(s) X, shape (..., d, d)."""
        X = np.asarray(X, dtype=float)
        d = self.dimension
        F = np.zeros(X.shape + (d,))
        p = self.params
        if self.name == "zero":
            pass
        elif self.name == "uniform-electric":
            k, ax = p["strength"], p["axis"]
            F[..., ax, 0] = k
            F[..., 0, ax] = -k
        elif self.name == "uniform-magnetic":
            i, j = p["plane"]
            F[..., i, j] = p["strength"]
            F[..., j, i] = -p["strength"]
        elif self.name == "crossed":
            F[..., 1, 0] = p["e_strength"]
            F[..., 0, 1] = -p["e_strength"]
            F[..., 1, 2] = p["b_strength"]
            F[..., 2, 1] = -p["b_strength"]
        elif self.name == "plane-wave":
            a, w = p["amplitude"], p["omega"]
            s = a * w * np.sin(w * (X[..., 0] - X[..., 1]))
            F[..., 0, 2] = -s
            F[..., 2, 0] = s
            F[..., 1, 2] = s
            F[..., 2, 1] = -s
        elif self.name == "polynomial":
            L = p["linear"]
            F = F + (L.T - L)
            if p["quadratic"] is not None:
                Q = p["quadratic"]
                dA = 2.0 * np.einsum("jin,...n->...ij", Q, X)
                F = F + dA - np.swapaxes(dA, -1, -2)
        return F

    def field_mixed(self, X):
        """F^i_j = eta^{ik} F_kj at inertial event(s) X."""
        F = self.field(X)
        return self._metric.signature[:, None] * F


def field_tensor(config, x):
    """The antisymmetric field tensor F_ij of a catalog potential at x."""
    return config.field(x)


class ConnectionField:
    """A coefficient map (x, y) -> Gamma^i_jk, possibly velocity-dependent."""

    affine = False
    conn_id = "abstract"

    def coeffs(self, x, y):
        raise NotImplementedError

    def acceleration(self, x, y):
        """Autoparallel right-hand side a^i = -Gamma^i_jk(x, y) y^j y^k."""
        G = self.coeffs(x, y)
        y = np.asarray(y)
        return -np.einsum("ijk,j,k->i", G, y, y)


class LeviCivitaConnection(ConnectionField):
    """The Levi-Civita connection of eta in a given chart (affine)."""

    affine = True
    conn_id = "levi-civita"

    def __init__(self, metric, chart):
        self.metric = metric
        self.chart = chart

    def coeffs(self, x, y=None):
        return self.chart.christoffel(x)

    def acceleration(self, x, y):
        if isinstance(self.chart, InertialChart):
            return np.zeros_like(np.asarray(y, dtype=float))
        return super().acceleration(x, y)


class LorentzConnection(ConnectionField):
    """The velocity-dependent connection whose autoparallels are the
    Lorentz-force trajectories.

    coeffs(x, y) =
        chart Levi-Civita
        + (1 / 2 sqrt(e)) (Fm^i_j y_k + Fm^i_k y_j)
        + (Fm^i_m y^m / 2 sqrt(e)) (g_jk - g_js g_kl y^s y^l / e)

    with e = g(y, y), indices lowered with the chart metric components g, and
    Fm the chart components of the mixed field tensor.
    """

    affine = False
    conn_id = "lorentz"

    def __init__(self, metric, chart, field_config):
        self.metric = metric
        self.chart = chart
        self.field_config = field_config
        self._inertial = isinstance(chart, InertialChart)

    def _chart_field(self, x):
        """Chart components (g_ij, F_ij, F^i_j) at chart point x."""
        if self._inertial:
            g = self.metric.matrix
            F = self.field_config.field(x)
            Fm = self.metric.signature[:, None] * F
            return g, F, Fm
        X = self.chart.to_inertial(x)
        J = self.chart.jacobian(x)
        g = J.T @ self.metric.matrix @ J
        F = J.T @ self.field_config.field(X) @ J
        Fm = np.linalg.solve(g, F)
        return g, F, Fm

    def norm2(self, x, y):
        """g(y, y) in the chart at x."""
        if self._inertial:
            return self.metric.norm2(y)
        g, _, _ = self._chart_field(x)
        return float(y @ g @ y)

    def coeffs(self, x, y):
        y = np.asarray(y, dtype=float)
        g, _, Fm = self._chart_field(x)
        e = float(y @ g @ y)
        if e <= EPS_TIMELIKE:
            raise NonTimelikeError(e)
        sqrt_e = np.sqrt(e)
        y_low = g @ y
        G = self.chart.christoffel(x).copy()
        Fy = Fm @ y
        # (1/2 sqrt(e)) (Fm^i_j y_k + Fm^i_k y_j)
        G += (np.einsum("ij,k->ijk", Fm, y_low) + np.einsum("ik,j->ijk", Fm, y_low)) / (2.0 * sqrt_e)
        # (Fm^i_m y^m / 2 sqrt(e)) (g_jk - y_j y_k / e)
        G += np.einsum("i,jk->ijk", Fy / (2.0 * sqrt_e), g - np.outer(y_low, y_low) / e)
        return G

    def acceleration(self, x, y):
        """Contracted form -chartGamma y y - sqrt(g(y,y)) Fm y.

        Algebraically identical to contracting ``coeffs`` with y y (the last
        coefficient term annihilates y^j y^k); supports batched (N, d) input
        in the inertial chart.
        """
        y = np.asarray(y, dtype=float)
        if self._inertial:
            e = self.metric.norm2(y)
            bad = e <= EPS_TIMELIKE
            if np.any(bad):
                raise NonTimelikeError(np.min(e))
            Fm = self.field_config.field_mixed(x)
            Fy = np.einsum("...ij,...j->...i", Fm, y)
            return -np.sqrt(e)[..., None] * Fy if y.ndim > 1 else -np.sqrt(e) * Fy
        g, _, Fm = self._chart_field(x)
        e = float(y @ g @ y)
        if e <= EPS_TIMELIKE:
            raise NonTimelikeError(e)
        Gc = self.chart.christoffel(x)
        return -np.einsum("ijk,j,k->i", Gc, y, y) - np.sqrt(e) * (Fm @ y)


def lorentz_coeffs(metric, chart, config, x, y):
    """Coefficient array of the Lorentz connection at (x, y)."""
    return LorentzConnection(metric, chart, config).coeffs(x, y)


def autoparallel_acceleration(conn, x, y):
    """a^i = -Gamma^i_jk(x, y) y^j y^k for any connection field."""
    return conn.acceleration(x, y)


def boost_matrix(u, dtype=float):
    """The pure boost mapping e_0 to the unit timelike vector u.

    Standard form: L^0_0 = u^0, L^0_k = L^k_0 = u^k,
    L^k_l = delta_kl + u^k u^l / (1 + u^0).
    """
    u = np.asarray(u, dtype=dtype)
    d = u.shape[0]
    L = np.eye(d, dtype=dtype)
    L[0, 0] = u[0]
    L[0, 1:] = u[1:]
    L[1:, 0] = u[1:]
    L[1:, 1:] += np.outer(u[1:], u[1:]) / (1.0 + u[0])
    return L
