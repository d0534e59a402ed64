"""Fixed-step integration of the autoparallel system for any connection field."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IntegrationAbort, NonTimelikeError
from .geometry import Metric

#: unit-hyperboloid tolerance on initial data for velocity-dependent runs
INIT_SHELL_TOL = 1e-12


@dataclass
class Trajectory:
    """Uniformly sampled autoparallel: samples (t_k, x_k, y_k)."""

    t: np.ndarray  # (n,) parameter times, uniform spacing h
    x: np.ndarray  # (n, d)
    y: np.ndarray  # (n, d)
    conn_id: str
    h: float

    @property
    def dimension(self):
        return self.x.shape[1]

    def final_state(self):
        return self.x[-1], self.y[-1]

    def norm_drift(self, metric=None):
        """max |eta(y,y) - eta(y0,y0)| along the trajectory."""
        metric = metric or Metric(self.dimension)
        e = metric.norm2(self.y)
        return float(np.max(np.abs(e - e[0])))

    def to_csv(self, path):
        d = self.dimension
        header = ["t"] + [f"x{i}" for i in range(d)] + [f"y{i}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(len(self.t)):
                row = [repr(float(self.t[k]))]
                row += [repr(float(v)) for v in self.x[k]]
                row += [repr(float(v)) for v in self.y[k]]
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path, conn_id="unknown"):
        data = np.genfromtxt(path, delimiter=",", skip_header=1)
        d = (data.shape[1] - 1) // 2
        t = data[:, 0]
        h = float(t[1] - t[0]) if len(t) > 1 else 0.0
        return cls(t=t, x=data[:, 1 : 1 + d], y=data[:, 1 + d :], conn_id=conn_id, h=h)


def rk4_step(accel, x, y, h):
    """One classical fourth-order step of (x' = y, y' = a(x, y))."""
    k1x = y
    k1y = accel(x, y)
    k2x = y + 0.5 * h * k1y
    k2y = accel(x + 0.5 * h * k1x, k2x)
    k3x = y + 0.5 * h * k2y
    k3y = accel(x + 0.5 * h * k2x, k3x)
    k4x = y + h * k3y
    k4y = accel(x + h * k3x, k4x)
    xn = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    yn = y + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
    return xn, yn


def integrate(conn, x0, y0, T, h, reproject=False, metric=None):
    """Integrate the autoparallel system with the classical 4th-order method.

    For velocity-dependent connections the initial velocity must lie on the
    unit hyperboloid; no renormalization is applied during the run (norm
    conservation is a diagnostic). ``reproject`` rescales y onto the unit
    hyperboloid after every step and is intended for averaged-connection runs.
    """
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    metric = metric or Metric(x0.shape[0])
    if T <= 0:
        raise DomainError(f"duration must be positive, got T={T}")
    if not 0 < h <= T:
        raise DomainError(f"step must satisfy 0 < h <= T, got h={h}")
    if not conn.affine:
        # the quadratic form of a rounded unit vector can only be evaluated
        # to ~eps * sum(y^2), so the shell tolerance scales with that floor
        tol = INIT_SHELL_TOL * max(1.0, float(np.sum(y0 * y0)))
        if abs(metric.norm2(y0) - 1.0) > tol:
            raise DomainError(
                f"velocity-dependent run needs unit initial velocity; eta(y0,y0) = {metric.norm2(y0)!r}"
            )
    n = int(round(T / h))
    t = h * np.arange(n + 1)
    xs = np.empty((n + 1, x0.shape[0]))
    ys = np.empty_like(xs)
    xs[0], ys[0] = x0, y0
    x, y = x0, y0
    for k in range(n):
        try:
            x, y = rk4_step(conn.acceleration, x, y, h)
        except NonTimelikeError as exc:
            raise IntegrationAbort(k, f"velocity left the timelike cone at step {k}: {exc}") from exc
        if reproject:
            y = y / np.sqrt(metric.norm2(y))
        xs[k + 1], ys[k + 1] = x, y
    return Trajectory(t=t, x=xs, y=ys, conn_id=conn.conn_id, h=h)


@dataclass
class ConvergenceReport:
    order: float | None
    saturated: bool
    errors: tuple  # (|z_h - z_{h/2}|, |z_{h/2} - z_{h/4}|)

    #: differences below this floor cannot support an order estimate
    FLOOR = 1e-13


def convergence_order(conn, x0, y0, T, h):
    """Richardson order estimate from steps h, h/2, h/4 of the final state."""
    finals = []
    for step in (h, h / 2.0, h / 4.0):
        traj = integrate(conn, x0, y0, T, step)
        finals.append(np.concatenate(traj.final_state()))
    e1 = float(np.max(np.abs(finals[0] - finals[1])))
    e2 = float(np.max(np.abs(finals[1] - finals[2])))
    scale = max(1.0, float(np.max(np.abs(finals[2]))))
    if e2 <= ConvergenceReport.FLOOR * scale or e1 <= ConvergenceReport.FLOOR * scale:
        return ConvergenceReport(order=None, saturated=True, errors=(e1, e2))
    return ConvergenceReport(order=float(np.log2(e1 / e2)), saturated=False, errors=(e1, e2))
