"""Kinetic transport by characteristics: Vlasov and averaged-Vlasov ensemble
pushes, marker comparisons against the time-dependent averaged field,
distribution evaluation along flows, the distribution-gap diagnostic, and the
cold-fluid residual machinery on sampled velocity-field grids."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .averaging import SHELL_TOL, Ensemble, chunked_sum, compute_moments
from .errors import DegenerateMomentsError, DomainError, OutOfDomainError
from .geometry import InertialChart, Metric, boost_matrix
from .solver import Trajectory

#: default truncation radius of catalog profiles, in units of their width
PROFILE_CUTOFF_SIGMAS = 6.0


def central_moments(Y, w):
    """Weighted centered fiber moments (vol, mean c, C2^{sl}, C3^{msl}).

    Centered tensors keep the averaged acceleration free of the catastrophic
    cancellation that raw third moments suffer at large boosts.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    w = np.asarray(w, dtype=float)
    vol = float(chunked_sum(w))
    c = chunked_sum(w[:, None] * Y) / vol
    D = Y - c
    C2 = chunked_sum(w[:, None, None] * np.einsum("as,al->asl", D, D)) / vol
    C3 = chunked_sum(w[:, None, None, None] * np.einsum("am,as,al->amsl", D, D, D)) / vol
    return vol, c, C2, C3


def averaged_acceleration(metric, Fm, c, C2, C3, y):
    """-Gbar^i_jk y^j y^k of the averaged connection in an inertial chart,
    written in centered moments:

        a = -[ eta(c, y) F y + (1/2) F ( c (e - p^2 - C2:yy)
                                         - 2 p C2.y_low - C3:yy ) ]

    with e = eta(y, y) and p = eta(c, y). Algebraically identical to
    contracting the Eq.-style raw-moment coefficients, but exact where the
    raw form loses ~gamma^3 digits. Supports batched y.
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    Y = np.atleast_2d(y)
    yl = Y * metric.signature
    e = np.einsum("ai,ai->a", Y, yl)
    p = yl @ c
    C2y = yl @ C2
    C2yy = np.einsum("ai,ai->a", C2y, yl)
    C3yy = np.einsum("msl,as,al->am", C3, yl, yl)
    bracket = c[None, :] * (e - p * p - C2yy)[:, None] - 2.0 * p[:, None] * C2y - C3yy
    a = -(p[:, None] * (Y @ Fm.T) + 0.5 * bracket @ Fm.T)
    return a[0] if single else a


@dataclass
class MomentHistory:
    """Centered moments of a transported ensemble sampled along parameter
    time, with cubic interpolation in between."""

    t: np.ndarray  # (n,)
    c: np.ndarray  # (n, d)
    C2: np.ndarray  # (n, d, d)
    C3: np.ndarray  # (n, d, d, d)

    def __post_init__(self):
        self._sp_c = CubicSpline(self.t, self.c, axis=0)
        self._sp_C2 = CubicSpline(self.t, self.C2, axis=0)
        self._sp_C3 = CubicSpline(self.t, self.C3, axis=0)

    @property
    def span(self):
        return float(self.t[0]), float(self.t[-1])

    def at(self, t):
        lo, hi = self.span
        pad = 1e-9 * max(1.0, abs(hi))
        if t < lo - pad or t > hi + pad:
            raise OutOfDomainError(f"moment history covers [{lo}, {hi}], asked for {t}")
        t = min(max(t, lo), hi)
        return self._sp_c(t), self._sp_C2(t), self._sp_C3(t)


def _require_inertial(chart):
    if not isinstance(chart, InertialChart):
        raise DomainError("kinetic transport is implemented for inertial charts")


def transport_ensemble(conn, ensemble, T, h, reproject=True):
    """Push every particle along the autoparallels of ``conn``.

    The characteristic map of the Liouville equation: the transported support
    is exactly the per-particle flow image. Velocities are re-projected onto
    the unit hyperboloid afterwards when the integration drift exceeds the
    shell tolerance (recorded in the returned ensemble's spec).
    """
    metric = Metric(ensemble.dimension)
    X = ensemble.x.copy()
    Y = ensemble.y.copy()
    n = int(round(T / h))
    for _ in range(n):
        k1y = conn.acceleration(X, Y)
        k2x = Y + 0.5 * h * k1y
        k2y = conn.acceleration(X + 0.5 * h * Y, k2x)
        k3x = Y + 0.5 * h * k2y
        k3y = conn.acceleration(X + 0.5 * h * k2x, k3x)
        k4x = Y + h * k3y
        k4y = conn.acceleration(X + h * k3x, k4x)
        X = X + (h / 6.0) * (Y + 2.0 * k2x + 2.0 * k3x + k4x)
        Y = Y + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
    norms = metric.norm2(Y)
    if np.any(norms <= 0):
        bad = int(np.argmin(norms))
        raise DomainError(f"particle {bad} left the timelike cone (eta(y,y) = {norms[bad]!r})")
    drift = float(np.max(np.abs(norms - 1.0)))
    spec = dict(ensemble.spec)
    spec["transport"] = {"conn": conn.conn_id, "T": T, "h": h, "shell_drift": drift}
    if reproject and drift > SHELL_TOL:
        Y = Y / np.sqrt(metric.norm2(Y))[:, None]
        spec["transport"]["reprojected"] = True
    return Ensemble(X, Y, ensemble.w.copy(), seed=ensemble.seed, spec=spec)


@dataclass
class TransportRecord:
    """Averaged-Vlasov run artifacts: final ensemble, moment history, and the
    per-snapshot phase-space samples."""

    ensemble: Ensemble
    history: MomentHistory
    snapshot_t: np.ndarray  # (m,)
    snapshot_x: np.ndarray  # (m, N, d)
    snapshot_y: np.ndarray  # (m, N, d)


def averaged_vlasov_transport(metric, chart, config, ensemble, T, h, record_every=1, record_window=None):
    """Self-consistent transport under the averaged field, explicit coupling:
    at each step the fiber moments of the current ensemble freeze the affine
    coefficients, every particle takes one RK4 step, and the moments are
    rebuilt. Returns the final ensemble plus the moment history needed to
    integrate markers (forwards or backwards) through the same field.

    ``record_window`` restricts phase-space snapshots to a parameter-time
    interval (the moment history always covers the full run)."""
    _require_inertial(chart)
    X = ensemble.x.copy()
    Y = ensemble.y.copy()
    w = ensemble.w
    n = int(round(T / h))
    ts = h * np.arange(n + 1)
    cs = np.empty((n + 1, ensemble.dimension))
    C2s = np.empty((n + 1, ensemble.dimension, ensemble.dimension))
    C3s = np.empty((n + 1,) + (ensemble.dimension,) * 3)
    snaps_t, snaps_x, snaps_y = [], [], []

    def accel_factory(c, C2, C3):
        def acc(x, y):
            Fm = config.field_mixed(np.mean(np.atleast_2d(x), axis=0))
            return averaged_acceleration(metric, Fm, c, C2, C3, y)

        return acc

    def in_window(t):
        return record_window is None or record_window[0] <= t <= record_window[1]

    for k in range(n + 1):
        _, cs[k], C2s[k], C3s[k] = central_moments(Y, w)
        if (k % record_every == 0 or k == n) and in_window(ts[k]):
            snaps_t.append(ts[k])
            snaps_x.append(X.copy())
            snaps_y.append(Y.copy())
        if k == n:
            break
        acc = accel_factory(cs[k], C2s[k], C3s[k])
        k1y = acc(X, Y)
        k2x = Y + 0.5 * h * k1y
        k2y = acc(X + 0.5 * h * Y, k2x)
        k3x = Y + 0.5 * h * k2y
        k3y = acc(X + 0.5 * h * k2x, k3x)
        k4x = Y + h * k3y
        k4y = acc(X + h * k3x, k4x)
        X = X + (h / 6.0) * (Y + 2.0 * k2x + 2.0 * k3x + k4x)
        Y = Y + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)

    spec = dict(ensemble.spec)
    spec["transport"] = {"conn": "averaged-vlasov", "T": T, "h": h}
    out = Ensemble(X, Y, w.copy(), seed=ensemble.seed, spec=spec)
    history = MomentHistory(ts, cs, C2s, C3s)
    return TransportRecord(
        ensemble=out,
        history=history,
        snapshot_t=np.asarray(snaps_t),
        snapshot_x=np.asarray(snaps_x),
        snapshot_y=np.asarray(snaps_y),
    )


def vlasov_transport(conn, ensemble, T, h, record_every=1, record_window=None):
    """Characteristic transport under ``conn`` with moment history and
    phase-space snapshots, mirroring averaged_vlasov_transport for flows
    whose field does not couple back to the moments."""
    metric = Metric(ensemble.dimension)
    X = ensemble.x.copy()
    Y = ensemble.y.copy()
    w = ensemble.w
    n = int(round(T / h))
    ts = h * np.arange(n + 1)
    d = ensemble.dimension
    cs = np.empty((n + 1, d))
    C2s = np.empty((n + 1, d, d))
    C3s = np.empty((n + 1,) + (d,) * 3)
    snaps_t, snaps_x, snaps_y = [], [], []

    def in_window(t):
        return record_window is None or record_window[0] <= t <= record_window[1]

    for k in range(n + 1):
        _, cs[k], C2s[k], C3s[k] = central_moments(Y, w)
        if (k % record_every == 0 or k == n) and in_window(ts[k]):
            snaps_t.append(ts[k])
            snaps_x.append(X.copy())
            snaps_y.append(Y.copy())
        if k == n:
            break
        k1y = conn.acceleration(X, Y)
        k2x = Y + 0.5 * h * k1y
        k2y = conn.acceleration(X + 0.5 * h * Y, k2x)
        k3x = Y + 0.5 * h * k2y
        k3y = conn.acceleration(X + 0.5 * h * k2x, k3x)
        k4x = Y + h * k3y
        k4y = conn.acceleration(X + h * k3x, k4x)
        X = X + (h / 6.0) * (Y + 2.0 * k2x + 2.0 * k3x + k4x)
        Y = Y + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)

    norms = metric.norm2(Y)
    if np.any(norms <= 0):
        bad = int(np.argmin(norms))
        raise DomainError(f"particle {bad} left the timelike cone (eta(y,y) = {norms[bad]!r})")
    spec = dict(ensemble.spec)
    spec["transport"] = {"conn": conn.conn_id, "T": T, "h": h}
    out = Ensemble(X, Y, w.copy(), seed=ensemble.seed, spec=spec)
    return TransportRecord(
        ensemble=out,
        history=MomentHistory(ts, cs, C2s, C3s),
        snapshot_t=np.asarray(snaps_t),
        snapshot_x=np.asarray(snaps_x),
        snapshot_y=np.asarray(snaps_y),
    )


@dataclass
class ComparisonRun:
    """Marker trajectories of one Lorentz vs averaged comparison."""

    lorentz: Trajectory
    averaged: Trajectory
    history: MomentHistory


def comparison_run(metric, chart, config, ensemble, x0, y0, T, h):
    """Integrate the two marker autoparallels of the trajectory-comparison
    theorems from the same initial condition.

    The distribution support is transported by the Lorentz flow (the
    theorems' invariant-support hypothesis), so the averaged field along the
    run is built from the fiber moments of the Lorentz-pushed ensemble. The
    ensemble and both markers advance inside one RK4 loop with the moments
    rebuilt at every stage, which keeps a point-supported ensemble's averaged
    marker on the Lorentz trajectory to roundoff.
    """
    _require_inertial(chart)
    from .geometry import LorentzConnection

    lorentz = LorentzConnection(metric, chart, config)
    w = ensemble.w
    N = ensemble.n
    X = np.vstack([ensemble.x, np.asarray(x0, float), np.asarray(x0, float)])
    Y = np.vstack([ensemble.y, np.asarray(y0, float), np.asarray(y0, float)])
    # rows 0..N-1: ensemble under the Lorentz flow; row N: Lorentz marker;
    # row N+1: averaged marker in the field of rows 0..N-1

    def acc(Xs, Ys):
        out = np.empty_like(Ys)
        out[: N + 1] = lorentz.acceleration(Xs[: N + 1], Ys[: N + 1])
        _, c, C2, C3 = central_moments(Ys[:N], w)
        Fm = config.field_mixed(Xs[N + 1])
        out[N + 1] = averaged_acceleration(metric, Fm, c, C2, C3, Ys[N + 1])
        return out

    n = int(round(T / h))
    ts = h * np.arange(n + 1)
    d = ensemble.dimension
    mx = np.empty((n + 1, 2, d))
    my = np.empty((n + 1, 2, d))
    cs = np.empty((n + 1, d))
    C2s = np.empty((n + 1, d, d))
    C3s = np.empty((n + 1,) + (d,) * 3)
    mx[0], my[0] = X[N:], Y[N:]
    _, cs[0], C2s[0], C3s[0] = central_moments(Y[:N], w)
    for k in range(n):
        k1y = acc(X, Y)
        k2x = Y + 0.5 * h * k1y
        k2y = acc(X + 0.5 * h * Y, k2x)
        k3x = Y + 0.5 * h * k2y
        k3y = acc(X + 0.5 * h * k2x, k3x)
        k4x = Y + h * k3y
        k4y = acc(X + h * k3x, k4x)
        X = X + (h / 6.0) * (Y + 2.0 * k2x + 2.0 * k3x + k4x)
        Y = Y + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        mx[k + 1], my[k + 1] = X[N:], Y[N:]
        _, cs[k + 1], C2s[k + 1], C3s[k + 1] = central_moments(Y[:N], w)
    lt = Trajectory(ts, mx[:, 0], my[:, 0], "lorentz", h)
    at = Trajectory(ts, mx[:, 1], my[:, 1], "averaged", h)
    return ComparisonRun(lorentz=lt, averaged=at, history=MomentHistory(ts, cs, C2s, C3s))


class DistributionFunction:
    """Analytic nonnegative initial profile f0(x, y).

    Catalog: a Gaussian bunch in space times a Gaussian on the hyperboloid in
    velocity, expressed through the rest-frame offsets of the bunch frame and
    truncated at a compact support radius.
    """

    def __init__(self, center_x, center_y, position_width, velocity_width, cutoff=PROFILE_CUTOFF_SIGMAS):
        self.center_x = np.asarray(center_x, dtype=float)
        self.center_y = np.asarray(center_y, dtype=float)
        d = self.center_x.shape[0]
        self.metric = Metric(d)
        if abs(self.metric.norm2(self.center_y) - 1.0) > SHELL_TOL:
            raise DomainError("bunch frame velocity must be unit timelike")
        if position_width <= 0 or velocity_width <= 0:
            raise DomainError("profile widths must be positive")
        self.position_width = float(position_width)
        self.velocity_width = float(velocity_width)
        self.cutoff = float(cutoff)
        self._Linv = np.linalg.inv(boost_matrix(self.center_y))

    def rest_offsets(self, x, y):
        """Spatial and velocity offsets in the bunch rest frame."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        dx = (x - self.center_x)[..., 1:]
        y_rest = np.einsum("ij,...j->...i", self._Linv, y)
        return dx, y_rest[..., 1:]

    def __call__(self, x, y):
        dx, xi = self.rest_offsets(x, y)
        q = np.sum(dx * dx, axis=-1) / self.position_width**2
        q = q + np.sum(xi * xi, axis=-1) / self.velocity_width**2
        return np.where(q <= self.cutoff**2, np.exp(-0.5 * q), 0.0)


def backward_lorentz_point(conn, x, y, t, h):
    """Preimage of the phase point (x, y) under duration-t Lorentz flow."""
    X = np.asarray(x, dtype=float).copy()
    Y = np.asarray(y, dtype=float).copy()
    n = max(1, int(round(t / h)))
    hb = -t / n
    for _ in range(n):
        k1y = conn.acceleration(X, Y)
        k2x = Y + 0.5 * hb * k1y
        k2y = conn.acceleration(X + 0.5 * hb * Y, k2x)
        k3x = Y + 0.5 * hb * k2y
        k3y = conn.acceleration(X + 0.5 * hb * k2x, k3x)
        k4x = Y + hb * k3y
        k4y = conn.acceleration(X + hb * k3x, k4x)
        X = X + (hb / 6.0) * (Y + 2.0 * k2x + 2.0 * k3x + k4x)
        Y = Y + (hb / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
    return X, Y


def backward_averaged_point(metric, config, history, x, y, t, h):
    """Preimage of (x, y) under the duration-t averaged flow whose moment
    history is recorded on [0, t_max]; t is measured from history time t
    back to 0."""
    lo, hi = history.span
    if t < lo - 1e-12 or t > hi + 1e-12:
        raise OutOfDomainError(f"history spans [{lo}, {hi}], cannot flow back from {t}")
    X = np.asarray(x, dtype=float).copy()
    Y = np.asarray(y, dtype=float).copy()
    n = max(1, int(round(t / h)))
    hb = -t / n

    def acc(tau, Xs, Ys):
        c, C2, C3 = history.at(tau)
        Fm = config.field_mixed(Xs)
        return averaged_acceleration(metric, Fm, c, C2, C3, Ys)

    tau = t
    for _ in range(n):
        k1y = acc(tau, X, Y)
        k2x = Y + 0.5 * hb * k1y
        k2y = acc(tau + 0.5 * hb, X + 0.5 * hb * Y, k2x)
        k3x = Y + 0.5 * hb * k2y
        k3y = acc(tau + 0.5 * hb, X + 0.5 * hb * k2x, k3x)
        k4x = Y + hb * k3y
        k4y = acc(tau + hb, X + hb * k3x, k4x)
        X = X + (hb / 6.0) * (Y + 2.0 * k2x + 2.0 * k3x + k4x)
        Y = Y + (hb / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        tau += hb
    return X, Y


def evaluate_distribution(f0, conn, x, y, t, h):
    """Value of the Vlasov-transported distribution at (x, y) after duration
    t: by Liouville constancy, f(t, x, y) = f0 at the backward characteristic
    preimage."""
    if t < 0:
        raise DomainError("transport duration must be nonnegative")
    if t == 0:
        return float(f0(x, y))
    X0, Y0 = backward_lorentz_point(conn, x, y, t, h)
    return float(f0(X0, Y0))


def evaluate_averaged_distribution(f0, metric, config, history, x, y, t, h):
    """Value of the averaged-Vlasov-transported distribution at (x, y)."""
    if t < 0:
        raise DomainError("transport duration must be nonnegative")
    if t == 0:
        return float(f0(x, y))
    X0, Y0 = backward_averaged_point(metric, config, history, x, y, t, h)
    return float(f0(X0, Y0))


@dataclass
class DistributionGap:
    """Per-sample |f - f_avg| against the marker position gap, plus the
    through-origin slope C_M of the proportionality fit."""

    t: np.ndarray
    f_gap: np.ndarray
    x_gap: np.ndarray
    C_M: float
    fit_residual: float  # relative rms residual of the through-origin fit


def distribution_gap(f0, metric, config, run, bar, window=(0.0, 1.0), skip=10, floor=1e-300):
    """Prop.-5.1 diagnostic along the Lorentz marker of a comparison run.

    At each retained sample time inside ``window`` (fractions of the run) the
    Vlasov value f(x(t), y(t)) (a Liouville constant, evaluated honestly by
    backward integration) is compared with the averaged-transported value,
    and |f - f_avg| is regressed through the origin against the bar-metric
    position gap of the two markers.
    """
    from .geometry import LorentzConnection

    lt, at = run.lorentz, run.averaged
    conn = LorentzConnection(metric, InertialChart(lt.dimension), config)
    idx = np.arange(0, len(lt.t), skip)
    if idx[-1] != len(lt.t) - 1:
        idx = np.append(idx, len(lt.t) - 1)
    span = float(lt.t[-1])
    lo, hi = window[0] * span, window[1] * span
    idx = idx[(lt.t[idx] >= lo) & (lt.t[idx] <= hi)]
    ts, fg, xg = [], [], []
    for k in idx:
        if lt.t[k] == 0.0:
            continue
        t = float(lt.t[k])
        fv = evaluate_distribution(f0, conn, lt.x[k], lt.y[k], t, lt.h)
        fa = evaluate_averaged_distribution(f0, metric, config, run.history, lt.x[k], lt.y[k], t, lt.h)
        ts.append(t)
        fg.append(abs(fv - fa))
        xg.append(float(bar.norm(at.x[k] - lt.x[k])))
    ts = np.asarray(ts)
    fg = np.asarray(fg)
    xg = np.asarray(xg)
    denom = float(np.sum(xg * xg))
    if denom <= floor or np.max(fg) <= floor:
        return DistributionGap(ts, fg, xg, np.nan, np.nan)
    C = float(np.sum(fg * xg) / denom)
    resid = float(np.sqrt(np.mean((fg - C * xg) ** 2)) / max(np.max(fg), floor))
    return DistributionGap(ts, fg, xg, C, resid)


@dataclass
class SampleCloud:
    """Flattened spacetime phase samples of a transported ensemble."""

    x: np.ndarray  # (M, d) events
    y: np.ndarray  # (M, d) velocities
    w: np.ndarray  # (M,)
    slice_t: np.ndarray | None = None  # equal-time slice labels, if collapsed

    @classmethod
    def from_record(cls, record, equal_time=False):
        """Flatten a transport record's snapshots.

        With ``equal_time`` every snapshot is collapsed onto an equal-time
        slice at its weighted mean lab time. Kernel estimators with a time
        radius below half the slice spacing then read exactly one snapshot
        per time node, which removes the time-smoothing bias of spacetime
        kernels (the per-particle lab-time scatter within a snapshot is
        attributed to the slice, an O(spread^2)-consistent assignment).
        """
        m, N, d = record.snapshot_x.shape
        w0 = np.asarray(record.ensemble.w)
        sx = record.snapshot_x
        slice_t = None
        if equal_time:
            slice_t = np.average(sx[:, :, 0], axis=1, weights=w0)
            sx = sx.copy()
            sx[:, :, 0] = slice_t[:, None]
        w = np.tile(w0, m)
        return cls(sx.reshape(m * N, d), record.snapshot_y.reshape(m * N, d), w, slice_t=slice_t)


#: cells carrying less than this fraction of the total cloud weight are empty
EMPTY_CELL_FRACTION = 1e-6


def _cell_diameters(cloud, axes, mask):
    """Velocity diameter per populated cell, by nearest-node assignment."""
    from .diagnostics import bar_metric, diameter

    metric = Metric(len(axes))
    shape = tuple(len(a) for a in axes)
    lows = np.array([a[0] for a in axes])
    steps = np.array([a[1] - a[0] if len(a) > 1 else 1.0 for a in axes])
    idx = np.rint((cloud.x - lows) / steps).astype(int)
    ok = np.all((idx >= 0) & (idx < np.array(shape)), axis=1)
    flat = np.ravel_multi_index(tuple(idx[ok].T), shape)
    alpha = np.zeros(shape)
    order = np.argsort(flat, kind="stable")
    flat = flat[order]
    rows = np.nonzero(ok)[0][order]
    starts = np.searchsorted(flat, np.unique(flat))
    bounds = np.append(starts, len(flat))
    for b0, b1 in zip(bounds[:-1], bounds[1:]):
        cell = np.unravel_index(flat[b0], shape)
        if not mask[cell]:
            continue
        Y = cloud.y[rows[b0:b1]]
        v = np.average(Y, axis=0, weights=cloud.w[rows[b0:b1]])
        q = metric.norm2(v)
        if q <= 0:
            continue
        alpha[cell] = diameter(Y, bar_metric(v / np.sqrt(q))).value
    return alpha


class VelocityFieldGrid:
    """Unit mean-velocity field sampled on a regular grid over the chart
    coordinates.

    ``axes`` is a tuple of 1-D coordinate arrays, one per spacetime
    dimension; V holds the eta-normalized mean velocity per cell, ``mask``
    marks cells with enough support to be trusted, and ``weight`` / ``alpha``
    carry the per-cell deposit weight and velocity diameter.
    """

    def __init__(self, axes, V, mask, weight=None, alpha=None):
        self.axes = tuple(np.asarray(a, dtype=float) for a in axes)
        self.V = V
        self.mask = mask
        shape = tuple(len(a) for a in self.axes)
        self.weight = weight if weight is not None else np.zeros(shape)
        self.alpha = alpha if alpha is not None else np.zeros(shape)
        self.dimension = len(self.axes)

    @property
    def spacing(self):
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @classmethod
    def from_kernel(cls, cloud, axes, radius, cell_alpha=False):
        """Smooth-kernel reconstruction: each cell averages the velocities of
        samples inside the (possibly anisotropic) ellipsoid u < 1 with
        u^2 = sum_j (dx_j / radius_j)^2, weighted by w (1 - u^2)^3, then
        normalizes onto the hyperboloid. A scalar ``radius`` gives the
        spherical kernel."""
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        d = len(axes)
        metric = Metric(d)
        r = np.broadcast_to(np.asarray(radius, dtype=float), (d,))
        shape = tuple(len(a) for a in axes)
        nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        tree = cKDTree(cloud.x / r)
        floor = EMPTY_CELL_FRACTION * float(np.sum(cloud.w))
        V = np.zeros((len(nodes), d))
        weight = np.zeros(len(nodes))
        mask = np.zeros(len(nodes), dtype=bool)
        hits = tree.query_ball_point(nodes / r, r=1.0)
        for i, sel in enumerate(hits):
            if not sel:
                continue
            sel = np.sort(np.asarray(sel))
            u2 = np.sum(((cloud.x[sel] - nodes[i]) / r) ** 2, axis=1)
            ww = cloud.w[sel] * (1.0 - u2) ** 3
            tot = float(np.sum(ww))
            weight[i] = tot
            if tot <= floor:
                continue
            v = ww @ cloud.y[sel] / tot
            q = metric.norm2(v)
            if q <= 0:
                continue
            V[i] = v / np.sqrt(q)
            mask[i] = True
        mask = mask.reshape(shape)
        out = cls(axes, V.reshape(shape + (d,)), mask, weight.reshape(shape))
        if cell_alpha:
            out.alpha = _cell_diameters(cloud, axes, mask)
        return out

    @classmethod
    def from_cic(cls, cloud, axes, cell_alpha=False):
        """Cloud-in-cell reconstruction: multilinear deposition of weight and
        momentum onto the cells, then the Shepard ratio and normalization."""
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        d = len(axes)
        metric = Metric(d)
        shape = tuple(len(a) for a in axes)
        wsum = np.zeros(shape)
        vsum = np.zeros(shape + (d,))
        lows = np.array([a[0] for a in axes])
        steps = np.array([a[1] - a[0] for a in axes])
        sizes = np.array(shape)
        rel = (cloud.x - lows) / steps
        base = np.floor(rel).astype(int)
        frac = rel - base
        ok = np.all((base >= 0) & (base < sizes - 1), axis=1)
        order = np.nonzero(ok)[0]
        for corner in range(1 << d):
            bits = np.array([(corner >> j) & 1 for j in range(d)])
            idx = base[order] + bits
            cw = np.prod(np.where(bits, frac[order], 1.0 - frac[order]), axis=1) * cloud.w[order]
            flat = np.ravel_multi_index(tuple(idx.T), shape)
            np.add.at(wsum.reshape(-1), flat, cw)
            for j in range(d):
                np.add.at(vsum.reshape(-1, d)[:, j], flat, cw * cloud.y[order, j])
        mask = wsum > EMPTY_CELL_FRACTION * float(np.sum(cloud.w))
        V = np.zeros(shape + (d,))
        v = vsum[mask] / wsum[mask][:, None]
        q = metric.norm2(v)
        good = q > 0
        vm = np.zeros_like(v)
        vm[good] = v[good] / np.sqrt(q[good])[:, None]
        V[mask] = vm
        mask = mask.copy()
        mask[mask] = good
        out = cls(axes, V, mask, wsum)
        if cell_alpha:
            out.alpha = _cell_diameters(cloud, axes, mask)
        return out

    def interpolate(self, x):
        """Multilinear interpolation of V at event x (masked nodes only)."""
        x = np.asarray(x, dtype=float)
        d = self.dimension
        idx = []
        frac = []
        for j in range(d):
            a = self.axes[j]
            if x[j] < a[0] or x[j] > a[-1]:
                raise OutOfDomainError(f"coordinate {j} = {x[j]} outside grid [{a[0]}, {a[-1]}]")
            r = (x[j] - a[0]) / (a[1] - a[0])
            i = min(int(np.floor(r)), len(a) - 2)
            idx.append(i)
            frac.append(r - i)
        out = np.zeros(d)
        wtot = 0.0
        for corner in range(1 << d):
            bits = [(corner >> j) & 1 for j in range(d)]
            node = tuple(idx[j] + bits[j] for j in range(d))
            if not self.mask[node]:
                continue
            cw = 1.0
            for j in range(d):
                cw *= frac[j] if bits[j] else 1.0 - frac[j]
            out += cw * self.V[node]
            wtot += cw
        if wtot <= 0:
            raise OutOfDomainError(f"no populated grid nodes around {x.tolist()}")
        return out / wtot

    def interior_mask(self):
        """Nodes whose full central-difference stencil is populated."""
        m = self.mask.copy()
        for j in range(self.dimension):
            m &= np.roll(self.mask, 1, axis=j) & np.roll(self.mask, -1, axis=j)
            sl = [slice(None)] * self.dimension
            sl[j] = [0, -1]
            m[tuple(sl)] = False
        return m

    def gradient(self):
        """Central-difference dV^i/dx^k as an array grid_shape + (k, i)."""
        d = self.dimension
        out = np.zeros(self.V.shape[:-1] + (d, d))
        for k in range(d):
            hk = self.spacing[k]
            out[..., k, :] = (np.roll(self.V, -1, axis=k) - np.roll(self.V, 1, axis=k)) / (2.0 * hk)
        return out


class CloudMoments:
    """Moment provider over a spacetime sample cloud: at each query event the
    fiber moments of the samples inside the (possibly anisotropic) smooth
    kernel are returned, with a fallback to the global cloud moments when the
    kernel selection is empty. Plugs into AveragedConnection as a provider."""

    def __init__(self, cloud, radius, min_weight=1e-12):
        from .averaging import MomentSet

        self.cloud = cloud
        d = cloud.x.shape[1]
        self.radius = np.broadcast_to(np.asarray(radius, dtype=float), (d,)).copy()
        if np.any(self.radius <= 0):
            raise DomainError("kernel moments need positive radii")
        self.min_weight = float(min_weight)
        self._tree = cKDTree(cloud.x / self.radius)
        self._moment_set = MomentSet
        self._global = self._raw(cloud.y, cloud.w)

    def _raw(self, y, w):
        vol = float(np.sum(w))
        if vol <= self.min_weight:
            raise DegenerateMomentsError("kernel selection carries no weight")
        m1 = w @ y / vol
        m2 = np.einsum("a,as,al->sl", w, y, y) / vol
        m3 = np.einsum("a,am,as,al->msl", w, y, y, y) / vol
        return self._moment_set(vol=vol, m1=m1, m2=m2, m3=m3)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        sel = self._tree.query_ball_point(x / self.radius, r=1.0)
        if sel:
            sel = np.sort(np.asarray(sel))
            u2 = np.sum(((self.cloud.x[sel] - x) / self.radius) ** 2, axis=1)
            ww = self.cloud.w[sel] * (1.0 - u2) ** 3
            try:
                return self._raw(self.cloud.y[sel], ww)
            except DegenerateMomentsError:
                pass
        return self._global


@dataclass
class ResidualReport:
    R: float  # max interior bar-metric norm of the residual
    residual: np.ndarray  # grid_shape + (d,)
    interior: np.ndarray  # boolean grid mask


def fluid_residual(avg, grid, bar):
    """Cold-fluid residual r^i = V^k d_k V^i + Gbar^i_jk V^j V^k of the
    reconstructed unit mean-velocity field against the averaged connection,
    with the scalar R the max over interior cells in the bar-metric norm."""
    if any(len(a) < 3 for a in grid.axes):
        raise DomainError("residual stencil needs at least 3 cells per axis")
    dV = grid.gradient()
    adv = np.einsum("...k,...ki->...i", grid.V, dV)
    interior = grid.interior_mask()
    resid = np.zeros_like(grid.V)
    nodes = np.argwhere(interior)
    if len(nodes) == 0:
        raise DomainError("no interior cells with full finite-difference stencils")
    coords = [grid.axes[j][nodes[:, j]] for j in range(grid.dimension)]
    pts = np.stack(coords, axis=-1)
    for row, node in zip(pts, map(tuple, nodes)):
        G = avg.coeffs(row)
        v = grid.V[node]
        resid[node] = adv[node] + np.einsum("ijk,j,k->i", G, v, v)
    norms = bar.norm(resid[interior])
    return ResidualReport(R=float(np.max(norms)), residual=resid, interior=interior)


@dataclass
class FluidTrack:
    t: np.ndarray
    x_fluid: np.ndarray
    gap: np.ndarray  # bar-metric position gap against the reference


def fluid_vs_particle(grid, lorentz_traj, bar, h=None, skip=1):
    """Integral curve of the reconstructed velocity field from the reference
    trajectory's initial point, compared against that trajectory at matched
    parameter times."""
    h = h if h is not None else lorentz_traj.h
    steps_per = max(1, int(round(lorentz_traj.h / h)))
    hh = lorentz_traj.h / steps_per
    metric = Metric(lorentz_traj.dimension)

    def u(p):
        v = grid.interpolate(p)
        q = metric.norm2(v)
        if q <= 0:
            raise OutOfDomainError(f"interpolated velocity not timelike at {p.tolist()}")
        return v / np.sqrt(q)

    x = lorentz_traj.x[0].copy()
    ts, xs, gaps = [0.0], [x.copy()], [0.0]
    for k in range(1, len(lorentz_traj.t)):
        try:
            for _ in range(steps_per):
                k1 = u(x)
                k2 = u(x + 0.5 * hh * k1)
                k3 = u(x + 0.5 * hh * k2)
                k4 = u(x + hh * k3)
                x = x + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        except OutOfDomainError:
            break
        if k % skip == 0 or k == len(lorentz_traj.t) - 1:
            ts.append(float(lorentz_traj.t[k]))
            xs.append(x.copy())
            gaps.append(float(bar.norm(x - lorentz_traj.x[k])))
    return FluidTrack(np.asarray(ts), np.asarray(xs), np.asarray(gaps))
