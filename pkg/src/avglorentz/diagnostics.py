"""Comparison apparatus: mean velocity field, the positive-definite bar
metric, distribution diameter, field operator norm, theta diagnostics, and
scaling-exponent fits."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial.distance import pdist

from .errors import DomainError
from .geometry import Metric

#: gaps below this floor refuse an exponent fit
FIT_FLOOR = 1e-10

#: largest particle count for the exact pairwise diameter scan
EXACT_DIAMETER_LIMIT = 4096


def mean_velocity(moments, metric=None):
    """Normalized mean velocity U = m1 / sqrt(eta(m1, m1)).

    Returns the zero vector when eta(m1, m1) <= 0 (the in-band branch for
    non-timelike means).
    """
    m1 = np.asarray(moments.m1)
    metric = metric or Metric(m1.shape[0])
    q = metric.norm2(m1)
    if q <= 0:
        return np.zeros_like(m1)
    return m1 / np.sqrt(q)


class BarMetric:
    """The Riemannian metric -eta + 2 eta(., U) eta(., U) of a unit timelike U.

    Positive definite; reduces to the identity in the rest frame of U. All
    arithmetic preserves the dtype of U, so extended-precision inputs give
    extended-precision norms.
    """

    def __init__(self, U, metric=None, unit_tol=1e-9):
        U = np.asarray(U)
        self.metric = metric or Metric(U.shape[0])
        q = self.metric.norm2(U)
        if np.all(U == 0):
            raise DomainError("bar metric undefined for U = 0; use a fallback frame")
        if abs(float(q) - 1.0) > unit_tol:
            raise DomainError(f"bar metric needs a unit timelike U; eta(U,U) = {q!r}")
        self.U = U
        u_low = self.metric.lower(U)
        eta = self.metric.matrix.astype(U.dtype)
        self.matrix = -eta + 2.0 * np.outer(u_low, u_low)
        self._u_low = u_low
        self._chol = None

    @property
    def cholesky(self):
        """Lower-triangular L with matrix = L L^T (computed in float64)."""
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.matrix.astype(float))
        return self._chol

    def inner(self, a, b):
        """Factored evaluation -eta(a, b) + 2 eta(a, U) eta(b, U): the
        gamma^4-sized cancellations of the assembled matrix never form, so
        highly boosted frames stay accurate."""
        a = np.asarray(a)
        b = np.asarray(b)
        ua = np.einsum("...i,i->...", a, self._u_low)
        ub = np.einsum("...i,i->...", b, self._u_low)
        return -self.metric.inner(a, b) + 2.0 * ua * ub

    def norm2(self, v):
        return self.inner(v, v)

    def norm(self, v):
        return np.sqrt(self.norm2(v))

    def distance(self, a, b):
        """Flat distance on the tangent space: the norm of the difference."""
        return self.norm(np.asarray(a) - np.asarray(b))

    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix.astype(float))


def bar_metric(U, metric=None):
    """BarMetric of a nonzero unit timelike mean velocity."""
    return BarMetric(U, metric=metric)


@dataclass
class DiameterResult:
    """Distribution diameter; exact below the pairwise-scan limit, otherwise
    a bounding-box bracket [lower, upper]."""

    lower: float
    upper: float
    exact: bool

    @property
    def value(self):
        return self.upper


def diameter(velocities, bar, exact_limit=EXACT_DIAMETER_LIMIT):
    """sup over particle pairs of the bar-metric distance between velocities."""
    ys = np.atleast_2d(np.asarray(velocities, dtype=float))
    if ys.shape[0] == 1:
        return DiameterResult(0.0, 0.0, True)
    z = ys @ bar.cholesky  # rows become bar-orthonormal coordinates
    if ys.shape[0] <= exact_limit:
        val = float(np.max(pdist(z)))
        return DiameterResult(val, val, True)
    extent = z.max(axis=0) - z.min(axis=0)
    return DiameterResult(float(np.max(extent)), float(np.sqrt(np.sum(extent**2))), False)


def operator_norm(F_mixed, bar):
    """Largest singular value of the operator in a bar-orthonormal basis."""
    L = bar.cholesky
    M = L.T @ np.asarray(F_mixed, dtype=float) @ np.linalg.inv(L.T)
    return float(np.linalg.norm(M, 2))


def resample_to_lab_time(traj, t_lab):
    """Cubic resampling of a trajectory onto laboratory times t_lab = x^0."""
    x0 = traj.x[:, 0]
    if np.any(np.diff(x0) <= 0):
        raise DomainError("trajectory laboratory time must be strictly increasing")
    xs = CubicSpline(x0, traj.x, axis=0)(t_lab)
    ys = CubicSpline(x0, traj.y, axis=0)(t_lab)
    return xs, ys


@dataclass
class ComparisonReport:
    """Per-laboratory-time records of the pairwise trajectory comparison."""

    t_lab: np.ndarray
    dx: np.ndarray  # bar-metric position gap
    dy: np.ndarray  # bar-metric velocity gap
    theta2: np.ndarray
    bar_theta2: np.ndarray
    gamma_bar: float
    alpha: float
    energy: float
    meta: dict = field(default_factory=dict)

    def to_rows(self):
        for k in range(len(self.t_lab)):
            yield {
                "t_lab": float(self.t_lab[k]),
                "dx": float(self.dx[k]),
                "dy": float(self.dy[k]),
                "theta2": float(self.theta2[k]),
                "bar_theta2": float(self.bar_theta2[k]),
                "gamma_bar": float(self.gamma_bar),
                "alpha": float(self.alpha),
                "E": float(self.energy),
            }

    def to_csv(self, path):
        cols = ["t_lab", "dx", "dy", "theta2", "bar_theta2", "gamma_bar", "alpha", "E"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in self.to_rows():
                writer.writerow([repr(row[c]) for c in cols])

    def to_json(self, path):
        payload = {
            "gamma_bar": float(self.gamma_bar),
            "alpha": float(self.alpha),
            "E": float(self.energy),
            "records": list(self.to_rows()),
            "meta": self.meta,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)


def compare_trajectories(lorentz_traj, averaged_traj, moments, bar, skip=1):
    """Position and velocity gaps at matched laboratory time, plus the theta
    diagnostics, between a Lorentz autoparallel and its averaged counterpart.

    The averaged trajectory is resampled by cubic interpolation onto the
    laboratory times read off the Lorentz trajectory.
    """
    t_lab = lorentz_traj.x[::skip, 0]
    lx = lorentz_traj.x[::skip]
    ly = lorentz_traj.y[::skip]
    hi = min(float(t_lab[-1]), float(averaged_traj.x[-1, 0]))
    keep = t_lab <= hi
    t_lab, lx, ly = t_lab[keep], lx[keep], ly[keep]
    ax, ay = resample_to_lab_time(averaged_traj, t_lab)

    dx = bar.norm(ax - lx)
    dy = bar.norm(ay - ly)

    mean_sp2 = float(np.sum(moments.m1[1:] ** 2))
    theta2 = np.sum(ly[:, 1:] ** 2, axis=1) - mean_sp2
    bar_theta2 = mean_sp2 - np.sum(ay[:, 1:] ** 2, axis=1)
    U = mean_velocity(moments)
    return ComparisonReport(
        t_lab=t_lab,
        dx=np.asarray(dx, dtype=float),
        dy=np.asarray(dy, dtype=float),
        theta2=theta2,
        bar_theta2=bar_theta2,
        gamma_bar=float(U[0]),
        alpha=np.nan,  # caller fills in the measured diameter
        energy=float(moments.energy),
    )


@dataclass
class ThetaReport:
    theta2: np.ndarray
    bar_theta2: np.ndarray
    gamma_bar: np.ndarray
    sup_theta2: float
    sup_bar_theta2: float
    hypothesis4_gap: float


def theta_diagnostics(lorentz_traj, averaged_traj, moments_provider):
    """Spatial-spread diagnostics along an integrated trajectory pair.

    theta^2 compares the Lorentz solution's spatial velocity against the
    distribution mean; bar-theta^2 compares the mean against the averaged
    solution. Both are laboratory-frame squared norms; the report carries the
    suprema over the window and the hypothesis gap sup |theta^2 - bar-theta^2|.
    """
    t_lab = lorentz_traj.x[:, 0]
    ax, ay = resample_to_lab_time(averaged_traj, np.clip(t_lab, None, averaged_traj.x[-1, 0]))
    n = len(t_lab)
    theta2 = np.empty(n)
    bar_theta2 = np.empty(n)
    gamma_bar = np.empty(n)
    for k in range(n):
        m = moments_provider(lorentz_traj.x[k])
        mean_sp2 = float(np.sum(m.m1[1:] ** 2))
        theta2[k] = np.sum(lorentz_traj.y[k, 1:] ** 2) - mean_sp2
        bar_theta2[k] = mean_sp2 - np.sum(ay[k, 1:] ** 2)
        U = mean_velocity(m)
        gamma_bar[k] = U[0]
    return ThetaReport(
        theta2=theta2,
        bar_theta2=bar_theta2,
        gamma_bar=gamma_bar,
        sup_theta2=float(np.max(np.abs(theta2))),
        sup_bar_theta2=float(np.max(np.abs(bar_theta2))),
        hypothesis4_gap=float(np.max(np.abs(theta2 - bar_theta2))),
    )


@dataclass
class PowerFit:
    variable: str
    exponent: float
    stderr: float
    prefactor: float
    refused: bool = False
    floor: float | None = None

    def to_dict(self):
        out = {
            "variable": self.variable,
            "exponent": self.exponent,
            "stderr": self.stderr,
            "prefactor": self.prefactor,
        }
        if self.refused:
            out["refused"] = True
            out["floor"] = self.floor
        return out


def fit_power(variable, values, gaps, floor=FIT_FLOOR):
    """Least-squares power-law fit gap = prefactor * value^exponent in
    log-log space; refused when every gap sits at the numerical floor."""
    values = np.asarray(values, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if np.max(gaps) <= floor:
        return PowerFit(variable, np.nan, np.nan, np.nan, refused=True, floor=float(np.max(gaps)))
    keep = gaps > floor
    lv = np.log(values[keep])
    lg = np.log(gaps[keep])
    A = np.vstack([lv, np.ones_like(lv)]).T
    coef, res, _, _ = np.linalg.lstsq(A, lg, rcond=None)
    slope, intercept = coef
    dof = max(1, len(lv) - 2)
    if len(res):
        sigma2 = float(res[0]) / dof
    else:
        sigma2 = float(np.sum((lg - A @ coef) ** 2)) / dof
    sxx = float(np.sum((lv - lv.mean()) ** 2))
    stderr = float(np.sqrt(sigma2 / sxx)) if sxx > 0 else np.nan
    return PowerFit(variable, float(slope), stderr, float(np.exp(intercept)))


def bound_evaluation(sweeps, reference=None, floor=FIT_FLOOR):
    """Exponent and prefactor fits for the trajectory-gap scaling model
    gap ~ P * alpha^2 * E^-2 * t_lab^2 (and the velocity analogue).

    ``sweeps`` maps a variable name to (values, gaps) pairs where every other
    model variable was held fixed. ``reference``, when given, is a dict with
    keys alpha, E, t_lab, gap used to calibrate the overall prefactor
    P = gap / (alpha^2 E^-2 t_lab^k); its ``t_exponent`` entry (default 2)
    selects the time power of the model.
    """
    fits = {name: fit_power(name, vals, gaps, floor=floor) for name, (vals, gaps) in sweeps.items()}
    prefactor = None
    if reference is not None:
        k = reference.get("t_exponent", 2)
        denom = reference["alpha"] ** 2 * reference["E"] ** -2 * reference["t_lab"] ** k
        prefactor = float(reference["gap"] / denom)
    return fits, prefactor
