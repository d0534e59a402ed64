"""Fiber moments of particle ensembles on the unit hyperboloid and the
averaged affine connection they generate."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateMomentsError, DomainError
from .geometry import ConnectionField, InertialChart, Metric, boost_matrix

#: particles must sit on the unit hyperboloid to this tolerance
SHELL_TOL = 1e-9

#: fixed chunk size for partitioned moment reductions (worker-count independent)
REDUCTION_CHUNK = 1024


def chunked_sum(arr, axis=0):
    """Sum along ``axis`` in fixed-size chunks, accumulated in index order.

    The partitioning depends only on the data layout, never on the number of
    workers, so parallel callers that fan out chunk sums and merge them in
    index order reproduce this result bit for bit.
    """
    arr = np.moveaxis(np.asarray(arr), axis, 0)
    n = arr.shape[0]
    total = np.zeros(arr.shape[1:], dtype=arr.dtype)
    for start in range(0, n, REDUCTION_CHUNK):
        total = total + arr[start : start + REDUCTION_CHUNK].sum(axis=0)
    return total


@dataclass
class Ensemble:
    """Weighted particles (x_a, y_a, w_a) with velocities on the unit
    hyperboloid, plus the parameters that generated them."""

    x: np.ndarray  # (N, d) events
    y: np.ndarray  # (N, d) velocities on the unit hyperboloid
    w: np.ndarray  # (N,) positive weights
    seed: int | None = None
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if np.any(self.w <= 0):
            raise DomainError("all ensemble weights must be positive")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def dimension(self):
        return self.x.shape[1]

    def shell_deviation(self, metric=None):
        metric = metric or Metric(self.dimension)
        return np.max(np.abs(metric.norm2(self.y) - 1.0))

    def to_csv(self, path):
        d = self.dimension
        header = ["a"] + [f"x{i}" for i in range(d)] + [f"y{i}" for i in range(d)] + ["w"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for a in range(self.n):
                row = [a] + [repr(float(v)) for v in self.x[a]] + [repr(float(v)) for v in self.y[a]] + [repr(float(self.w[a]))]
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            d = (len(header) - 2) // 2
            xs, ys, ws = [], [], []
            for row in reader:
                vals = [float(v) for v in row[1:]]
                xs.append(vals[:d])
                ys.append(vals[d : 2 * d])
                ws.append(vals[2 * d])
        return cls(np.array(xs), np.array(ys), np.array(ws))


def sample_ensemble(n, mean_velocity, spread, seed, dimension=4, position_spread=0.0, center=None):
    """Draw a bunch of ``n`` particles on the unit hyperboloid.

    Spatial-velocity offsets come from an isotropic Gaussian of width
    ``spread`` in the rest frame of ``mean_velocity``, are boosted to the lab
    frame, and re-projected onto the hyperboloid by solving for the time
    component. Optional ``position_spread`` scatters spatial positions around
    ``center`` with an isotropic Gaussian. Deterministic given ``seed``; the
    underlying standard-normal draws are independent of both spreads, so
    sweeps at a fixed seed scale a frozen cloud.
    """
    if n < 1:
        raise DomainError(f"need at least one particle, got n={n}")
    if spread < 0:
        raise DomainError("spread must be nonnegative")
    d = dimension
    metric = Metric(d)
    yc = np.asarray(mean_velocity, dtype=float)
    if yc.shape != (d,):
        raise DomainError(f"mean velocity must have shape ({d},)")
    if abs(metric.norm2(yc) - 1.0) > SHELL_TOL:
        raise DomainError(f"mean velocity must be unit timelike; eta(y,y) = {metric.norm2(yc)!r}")

    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((n, d - 1))
    pos = rng.standard_normal((n, d - 1))
    xi = xi * spread
    y_rest = np.empty((n, d))
    y_rest[:, 0] = np.sqrt(1.0 + np.sum(xi * xi, axis=1))
    y_rest[:, 1:] = xi
    L = boost_matrix(yc)
    y = y_rest @ L.T
    y[:, 0] = np.sqrt(1.0 + np.sum(y[:, 1:] ** 2, axis=1))

    x = np.zeros((n, d))
    if center is not None:
        x[:] = np.asarray(center, dtype=float)
    x[:, 1:] += pos * position_spread

    spec = {
        "n": n,
        "mean_velocity": yc.tolist(),
        "spread": spread,
        "position_spread": position_spread,
        "seed": seed,
    }
    return Ensemble(x, y, np.ones(n), seed=seed, spec=spec)


def quadrature_ensemble(mean_velocity, spread, half_width, n_pos, n_vel, dimension=4, center=None):
    """Deterministic tensor-quadrature bunch: Gauss-Hermite nodes in the
    rest-frame velocity offsets (Gaussian of width ``spread``) times a
    uniform grid of positions on the cube [-half_width, half_width]^(d-1).

    Noise-free by construction: the node layout is frozen, so field
    reconstructions are smooth functions of the spread and sweeps measure
    scaling laws without Monte Carlo scatter.
    """
    if spread < 0:
        raise DomainError("spread must be nonnegative")
    if n_pos < 1 or n_vel < 1:
        raise DomainError("quadrature needs at least one node per axis")
    d = dimension
    metric = Metric(d)
    yc = np.asarray(mean_velocity, dtype=float)
    if yc.shape != (d,):
        raise DomainError(f"mean velocity must have shape ({d},)")
    if abs(metric.norm2(yc) - 1.0) > SHELL_TOL:
        raise DomainError(f"mean velocity must be unit timelike; eta(y,y) = {metric.norm2(yc)!r}")

    vnodes, vweights = np.polynomial.hermite_e.hermegauss(n_vel)
    paxis = np.linspace(-half_width, half_width, n_pos) if n_pos > 1 else np.zeros(1)
    grids = np.meshgrid(*([vnodes * spread] * (d - 1) + [paxis] * (d - 1)), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([vweights] * (d - 1) + [np.ones(n_pos)] * (d - 1)), indexing="ij")
    w = np.ones(pts.shape[0])
    for g in wgrids:
        w = w * g.ravel()
    xi = pts[:, : d - 1]
    pos = pts[:, d - 1:]
    y_rest = np.empty((pts.shape[0], d))
    y_rest[:, 0] = np.sqrt(1.0 + np.sum(xi * xi, axis=1))
    y_rest[:, 1:] = xi
    y = y_rest @ boost_matrix(yc).T
    y[:, 0] = np.sqrt(1.0 + np.sum(y[:, 1:] ** 2, axis=1))
    x = np.zeros((pts.shape[0], d))
    if center is not None:
        x[:] = np.asarray(center, dtype=float)
    x[:, 1:] += pos
    spec = {
        "kind": "quadrature",
        "mean_velocity": yc.tolist(),
        "spread": spread,
        "half_width": half_width,
        "n_pos": n_pos,
        "n_vel": n_vel,
    }
    return Ensemble(x, y, w / chunked_sum(w), seed=0, spec=spec)


@dataclass
class MomentSet:
    """First, second and third fiber moments plus the normalization weight."""

    vol: float  # total selected weight, the stand-in for the fiber volume
    m1: np.ndarray  # (d,)   <y^i>
    m2: np.ndarray  # (d, d) <y^i y^j>
    m3: np.ndarray  # (d, d, d) <y^m y^s y^l>, totally symmetric

    @property
    def energy(self):
        """Laboratory-frame mean energy <y^0>."""
        return float(self.m1[0])


def compute_moments(ensemble, at=None, radius=None, kernel="tophat"):
    """Weighted fiber moments of an ensemble.

    With ``at`` omitted the whole ensemble contributes (global bunch moments).
    With ``at`` given, only particles whose spatial position lies within
    ``radius`` of the spatial position of ``at`` are selected; ``kernel``
    chooses a top-hat or a smooth (1 - u^2)^3 falloff inside the ball.
    """
    y, w = ensemble.y, ensemble.w
    if at is not None:
        if radius is None or radius <= 0:
            raise DomainError("kernel moments need a positive radius")
        at = np.asarray(at, dtype=float)
        dist = np.sqrt(np.sum((ensemble.x[:, 1:] - at[1:]) ** 2, axis=1))
        inside = dist < radius
        if not np.any(inside):
            raise DegenerateMomentsError(f"no particles within radius {radius} of {at.tolist()}")
        y = y[inside]
        w = w[inside]
        if kernel == "smooth":
            u = dist[inside] / radius
            w = w * (1.0 - u * u) ** 3
        elif kernel != "tophat":
            raise ConfigurationError(f"unknown kernel {kernel!r}")
    vol = float(chunked_sum(w))
    if vol <= 0:
        raise DegenerateMomentsError("selected weight is not positive")
    m1 = chunked_sum(w[:, None] * y) / vol
    m2 = chunked_sum(w[:, None, None] * np.einsum("as,al->asl", y, y)) / vol
    m3 = chunked_sum(w[:, None, None, None] * np.einsum("am,as,al->amsl", y, y, y)) / vol
    return MomentSet(vol=vol, m1=m1, m2=m2, m3=m3)


def averaged_coeffs(metric, chart, config, moments, x, flip_third_moment_sign=False):
    """Coefficients of the averaged connection at event x.

    For distributions supported on the unit hyperboloid:

        Gbar^i_jk = chartGamma^i_jk
                    + (1/2) (Fm^i_j m1_k + Fm^i_k m1_j)
                    + (1/2) Fm^i_m (m1^m g_jk - g_js g_kl m3^{msl})

    with indices lowered by the chart metric components. The coefficients do
    not depend on any velocity argument (the connection is affine).

    ``flip_third_moment_sign`` is a deliberate-fault switch used only by the
    validation suite's mutation check.
    """
    inertial = isinstance(chart, InertialChart)
    if inertial:
        g = metric.matrix
        Fm = config.field_mixed(x)
    else:
        X = chart.to_inertial(x)
        J = chart.jacobian(x)
        g = J.T @ metric.matrix @ J
        Fm = np.linalg.solve(g, J.T @ config.field(X) @ J)
    m1, m3 = moments.m1, moments.m3
    m1_low = g @ m1
    G = chart.christoffel(x).copy()
    G += 0.5 * (np.einsum("ij,k->ijk", Fm, m1_low) + np.einsum("ik,j->ijk", Fm, m1_low))
    sign = -1.0 if flip_third_moment_sign else 1.0
    G += 0.5 * (
        np.einsum("i,jk->ijk", Fm @ m1, g)
        - sign * np.einsum("im,msl,sj,lk->ijk", Fm, m3, g, g)
    )
    return G


class ConstantMoments:
    """One global moment set: the narrow-bunch regime."""

    def __init__(self, moments):
        self.moments = moments

    def __call__(self, x):
        return self.moments


class KernelMoments:
    """Moments from particles within a smoothing radius of the query event.

    Falls back to the global bunch moments when the kernel selection is
    empty, per the degenerate-moment contract.
    """

    def __init__(self, ensemble, radius, kernel="tophat", fallback_to_global=True):
        self.ensemble = ensemble
        self.radius = radius
        self.kernel = kernel
        self._global = compute_moments(ensemble)
        self.fallback_to_global = fallback_to_global

    def __call__(self, x):
        try:
            return compute_moments(self.ensemble, at=x, radius=self.radius, kernel=self.kernel)
        except DegenerateMomentsError:
            if self.fallback_to_global:
                return self._global
            raise


class AveragedConnection(ConnectionField):
    """The affine connection built from fiber moments of a distribution."""

    affine = True
    conn_id = "averaged"

    def __init__(self, metric, chart, field_config, provider, flip_third_moment_sign=False):
        self.metric = metric
        self.chart = chart
        self.field_config = field_config
        self.provider = provider
        self.flip_third_moment_sign = flip_third_moment_sign
        self._inertial = isinstance(chart, InertialChart)
        self._constant = isinstance(provider, ConstantMoments)
        # uniform fields with global moments give one fixed coefficient array
        self._frozen = None
        if self._constant and self._inertial and field_config.name in ("zero", "uniform-electric", "uniform-magnetic", "crossed"):
            self._frozen = self._coeffs_at(np.zeros(metric.dimension))

    def _coeffs_at(self, x):
        return averaged_coeffs(
            self.metric,
            self.chart,
            self.field_config,
            self.provider(x),
            x,
            flip_third_moment_sign=self.flip_third_moment_sign,
        )

    def coeffs(self, x, y=None):
        if self._frozen is not None:
            return self._frozen
        return self._coeffs_at(np.asarray(x, dtype=float))

    def acceleration(self, x, y):
        y = np.asarray(y, dtype=float)
        if self._frozen is not None:
            return -np.einsum("ijk,...j,...k->...i", self._frozen, y, y)
        x = np.asarray(x, dtype=float)
        if y.ndim == 1:
            return -np.einsum("ijk,j,k->i", self.coeffs(x), y, y)
        out = np.empty_like(y)
        for a in range(y.shape[0]):
            xa = x[a] if x.ndim > 1 else x
            out[a] = -np.einsum("ijk,j,k->i", self.coeffs(xa), y[a], y[a])
        return out


class NormalChart:
    """The quadratic chart of an affine symmetric connection around x0.

    Forward map: x' = (x - x0) + (1/2) G0 (x - x0)(x - x0) with
    G0 = Gbar(x0). Coefficients transform to zero at x0.
    """

    def __init__(self, conn, x0):
        if not conn.affine:
            raise DomainError("normal coordinates require an affine connection")
        self.conn = conn
        self.x0 = np.asarray(x0, dtype=float)
        self.G0 = conn.coeffs(self.x0, None)
        asym = np.max(np.abs(self.G0 - np.swapaxes(self.G0, 1, 2)))
        if asym > 1e-12:
            raise DomainError(f"normal coordinates require symmetric coefficients (asymmetry {asym})")

    def forward(self, x):
        dx = np.asarray(x, dtype=float) - self.x0
        return dx + 0.5 * np.einsum("ijk,j,k->i", self.G0, dx, dx)

    def inverse(self, xp, tol=1e-14, max_iter=100):
        """Local inverse by fixed-point iteration dx <- x' - (1/2) G0 dx dx."""
        xp = np.asarray(xp, dtype=float)
        dx = xp.copy()
        for _ in range(max_iter):
            nxt = xp - 0.5 * np.einsum("ijk,j,k->i", self.G0, dx, dx)
            if np.max(np.abs(nxt - dx)) < tol:
                dx = nxt
                break
            dx = nxt
        return self.x0 + dx

    def jacobian(self, x):
        """d x'^i / d x^a at chart point x."""
        dx = np.asarray(x, dtype=float) - self.x0
        d = dx.shape[0]
        return np.eye(d) + np.einsum("ijk,k->ij", self.G0, dx)

    def transformed_coeffs(self, x):
        """Connection coefficients expressed in the normal chart, at the
        point whose original coordinates are x."""
        J = self.jacobian(x)
        B = np.linalg.inv(J)
        G = self.conn.coeffs(np.asarray(x, dtype=float), None)
        term = np.einsum("ia,abc,bj,ck->ijk", J, G, B, B)
        hess = np.einsum("ibc,bj,ck->ijk", self.G0, B, B)
        return term - hess


def normal_frame(avg_connection, x0):
    """Quadratic chart in which the averaged coefficients vanish at x0."""
    return NormalChart(avg_connection, x0)
