"""Scenario configuration, experiment pipelines, and result emission.

A scenario is one TOML file with nested tables (dimension/chart/potential/
ensemble/integrator/experiment/output). Unknown keys are configuration
errors. Every pipeline is deterministic for a fixed config and seed: sweep
points are independent single-seeded jobs, result files are named by sweep
index, and all floats are serialized through repr, so the emitted bytes are
identical at any worker count.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - python < 3.11
    import tomli as tomllib

from .averaging import (
    AveragedConnection,
    ConstantMoments,
    compute_moments,
    quadrature_ensemble,
    sample_ensemble,
)
from .diagnostics import bar_metric, compare_trajectories, diameter, fit_power, mean_velocity
from .errors import ConfigurationError
from .geometry import FieldConfiguration, LorentzConnection, Metric, boost_matrix, make_chart
from .kinetic import (
    CloudMoments,
    ComparisonRun,
    DistributionFunction,
    SampleCloud,
    VelocityFieldGrid,
    averaged_vlasov_transport,
    comparison_run,
    distribution_gap,
    fluid_residual,
    fluid_vs_particle,
    vlasov_transport,
)
from .solver import integrate

ARTIFACT_VERSION = "1"

EXPERIMENT_KINDS = ("simulate", "compare", "scale", "residual", "fluid", "validate")


# --------------------------------------------------------------------------
# configuration schema

_GRID_KEYS = {
    "nt": int,
    "nx": int,
    "dx": float,
    "kernel_radius": float,
    "t_center": float,
    "record_every": int,
    "bounds": list,
}

_SCHEMA = {
    "dimension": int,
    "chart": str,
    "potential": {"name": str, "params": dict},
    "ensemble": {
        "kind": str,
        "n": int,
        "energy": float,
        "spread": float,
        "seed": int,
        "position_spread": float,
        "half_width": float,
        "n_pos": int,
        "n_vel": int,
    },
    "integrator": {"h": float, "T": float, "reproject": bool},
    "experiment": {
        "kind": str,
        "skip": int,
        "connection": str,
        "marker_offset": list,
        "alpha_sweep": list,
        "energy_sweep": list,
        "spread_sweep": list,
        "t_lab_max": float,
        "eval_time": float,
        "t_fit_window": list,
        "t_fit_index": int,
        "window": list,
        "profile_position_width": float,
        "include_cold": bool,
        "synthetic": bool,
        "mutate": bool,
        "grid": _GRID_KEYS,
    },
    "output": {"directory": str, "formats": str},
}

_DEFAULTS = {
    "dimension": 4,
    "chart": "inertial",
    "potential": {"name": "uniform-magnetic", "params": {"strength": 1.0}},
    "ensemble": {
        "kind": "random",
        "n": 2000,
        "energy": 100.0,
        "spread": 0.01,
        "seed": 7,
        "position_spread": 0.0,
        "half_width": 0.4,
        "n_pos": 21,
        "n_vel": 10,
    },
    "integrator": {"h": 0.002, "T": 1.0, "reproject": True},
    "experiment": {
        "kind": "compare",
        "skip": 1,
        "connection": "lorentz",
        "marker_offset": [],
        "alpha_sweep": [],
        "energy_sweep": [],
        "spread_sweep": [],
        "t_lab_max": 0.5,
        "eval_time": 0.25,
        "t_fit_window": [0.04, 0.5],
        "t_fit_index": -2,
        "window": [0.0, 1.0],
        "profile_position_width": 0.3,
        "include_cold": True,
        "synthetic": False,
        "mutate": False,
        "grid": {
            "nt": 5,
            "nx": 9,
            "dx": 0.04,
            "kernel_radius": 0.16,
            "t_center": 0.15,
            "record_every": 1,
            "bounds": [],
        },
    },
    "output": {"directory": "results", "formats": "both"},
}


def _check_table(value, schema, defaults, path):
    if not isinstance(value, dict):
        raise ConfigurationError(f"{path or 'config'} must be a table")
    out = {}
    for key, sub in value.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigurationError(f"unknown configuration key {here!r}")
        want = schema[key]
        if isinstance(want, dict):
            if key == "params":
                if not isinstance(sub, dict):
                    raise ConfigurationError(f"{here} must be a table")
                out[key] = dict(sub)  # validated by FieldConfiguration
            else:
                out[key] = _check_table(sub, want, defaults.get(key, {}), here)
        else:
            if want is float and isinstance(sub, int) and not isinstance(sub, bool):
                sub = float(sub)
            if want is not list and not isinstance(sub, want):
                raise ConfigurationError(f"{here} must be {want.__name__}, got {type(sub).__name__}")
            if want is list and not isinstance(sub, list):
                raise ConfigurationError(f"{here} must be a list")
            out[key] = sub
    for key, default in defaults.items():
        if key not in out:
            out[key] = json.loads(json.dumps(default)) if isinstance(default, (dict, list)) else default
    return out


@dataclass
class ScenarioConfig:
    """A fully resolved scenario: defaults filled, every key validated."""

    data: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = _check_table(self.data, _SCHEMA, _DEFAULTS, "")
        self._validate()

    def _validate(self):
        d = self.data
        if d["dimension"] < 2:
            raise ConfigurationError("dimension must be >= 2")
        ens = d["ensemble"]
        if ens["kind"] not in ("random", "quadrature"):
            raise ConfigurationError(f"unknown ensemble kind {ens['kind']!r}")
        if ens["n"] < 1:
            raise ConfigurationError("ensemble.n must be >= 1")
        if ens["energy"] < 1.0:
            raise ConfigurationError("ensemble.energy must be >= 1 (lab-frame <y^0>)")
        if ens["spread"] < 0:
            raise ConfigurationError("ensemble.spread must be nonnegative")
        it = d["integrator"]
        if not (it["h"] > 0 and it["T"] > 0):
            raise ConfigurationError("integrator.h and integrator.T must be positive")
        exp = d["experiment"]
        if exp["kind"] not in EXPERIMENT_KINDS:
            raise ConfigurationError(f"unknown experiment kind {exp['kind']!r}")
        for name in ("alpha_sweep", "energy_sweep", "spread_sweep"):
            sweep = exp[name]
            if any(not isinstance(v, (int, float)) or isinstance(v, bool) for v in sweep):
                raise ConfigurationError(f"experiment.{name} must be numeric")
            if any(b <= a for a, b in zip(sweep, sweep[1:])):
                raise ConfigurationError(f"experiment.{name} must be strictly increasing")
        if d["output"]["formats"] not in ("csv", "json", "both"):
            raise ConfigurationError("output.formats must be csv, json or both")
        for value in (ens["energy"], ens["spread"], it["h"], it["T"]):
            if not np.isfinite(value):
                raise ConfigurationError("numeric configuration values must be finite")

    # ---- convenience accessors -------------------------------------------
    @property
    def dimension(self):
        return self.data["dimension"]

    @property
    def seed(self):
        return self.data["ensemble"]["seed"]

    @property
    def experiment(self):
        return self.data["experiment"]

    @property
    def kind(self):
        return self.data["experiment"]["kind"]

    def with_overrides(self, **kw):
        """A copy with ensemble/experiment scalar overrides applied."""
        data = json.loads(json.dumps(self.data))
        for key, value in kw.items():
            table, _, name = key.partition("__")
            if name:
                data[table][name] = value
            else:
                data[key] = value
        return ScenarioConfig(data)

    def config_hash(self):
        payload = json.dumps(self.data, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    @classmethod
    def from_toml(cls, path):
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"malformed config {path}: {exc}") from exc
        return cls(raw)


# --------------------------------------------------------------------------
# scenario building blocks


def mean_velocity_for_energy(energy, dimension):
    """Unit timelike vector with lab energy y^0 = energy, boosted along x^1."""
    yc = np.zeros(dimension)
    yc[0] = energy
    yc[1] = np.sqrt(energy * energy - 1.0)
    return yc


def build_field(config):
    pot = config.data["potential"]
    return FieldConfiguration(pot["name"], dimension=config.dimension, **pot["params"])


def build_ensemble(config, spread=None, energy=None, n_vel=None, seed=None):
    ens = config.data["ensemble"]
    d = config.dimension
    yc = mean_velocity_for_energy(energy if energy is not None else ens["energy"], d)
    s = ens["spread"] if spread is None else spread
    if ens["kind"] == "quadrature":
        return quadrature_ensemble(
            yc, s, ens["half_width"], ens["n_pos"],
            n_vel if n_vel is not None else ens["n_vel"], dimension=d,
        )
    return sample_ensemble(
        ens["n"], yc, s, seed if seed is not None else ens["seed"],
        dimension=d, position_spread=ens["position_spread"],
    )


def marker_velocity(config, U):
    """Marker initial velocity: U boosted by the configured rest-frame offset."""
    metric = Metric(config.dimension)
    offset = config.experiment["marker_offset"]
    if not offset:
        return U
    xi = np.zeros(config.dimension - 1)
    xi[: len(offset)] = offset
    y_rest = np.concatenate([[np.sqrt(1.0 + xi @ xi)], xi])
    y0 = boost_matrix(U) @ y_rest
    return y0 / np.sqrt(metric.norm2(y0))


def _scenario_stage(config, spread=None, energy=None, seed=None):
    """Common preamble: field, ensemble, moments, bar metric, diameter."""
    metric = Metric(config.dimension)
    chart = make_chart(config.data["chart"], config.dimension)
    fieldcfg = build_field(config)
    ensemble = build_ensemble(config, spread=spread, energy=energy, seed=seed)
    moments = compute_moments(ensemble)
    U = mean_velocity(moments)
    U = U / np.sqrt(metric.norm2(U))
    bar = bar_metric(U)
    alpha = diameter(ensemble.y, bar).value
    return metric, chart, fieldcfg, ensemble, moments, U, bar, alpha


# --------------------------------------------------------------------------
# result emission


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def grid_to_csv(grid, residual, path):
    """Velocity-grid CSV: cell index, center coordinates, V components,
    per-cell diameter and weight, residual components."""
    d = grid.dimension
    header = (
        ["cell"] + [f"x{j}" for j in range(d)] + [f"V{j}" for j in range(d)]
        + ["alpha_cell", "weight"] + [f"r{j}" for j in range(d)]
    )
    rows = []
    shape = tuple(len(a) for a in grid.axes)
    for cell in range(int(np.prod(shape))):
        node = np.unravel_index(cell, shape)
        if not grid.mask[node]:
            continue
        center = [float(grid.axes[j][node[j]]) for j in range(d)]
        rows.append(
            [cell] + center + [float(v) for v in grid.V[node]]
            + [float(grid.alpha[node]), float(grid.weight[node])]
            + [float(v) for v in residual[node]]
        )
    _write_csv(path, header, rows)


@dataclass
class RunManifest:
    """Provenance record of one experiment invocation."""

    config_hash: str
    seed: int
    artifact_version: str
    files: list
    wall_clock_s: float

    def write(self, path):
        _write_json(path, {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "artifact_version": self.artifact_version,
            "files": sorted(self.files),
            "wall_clock_s": self.wall_clock_s,
        })


# --------------------------------------------------------------------------
# compare pipeline


def hypothesis_summary(energy, alpha, report):
    """Thm 4.1 hypothesis bookkeeping attached to every comparison output."""
    theta_gap = float(np.max(np.abs(report.theta2 - report.bar_theta2)))
    return {
        "E": float(energy),
        "alpha": float(alpha),
        "ultra_relativistic_E_gg_1": bool(energy > 10.0),
        "narrow_E_gg_alpha": bool(energy > 10.0 * alpha),
        "hypothesis_warning": bool(energy <= 10.0 * alpha),
        "max_theta2_gap": theta_gap,
        "window_note": "short-time window; T calibrated so the gap stays below 1% of the orbit scale",
    }


def _compare_report(config, spread=None, energy=None, T=None, h=None, seed=None):
    """One Lorentz-vs-averaged comparison; returns (report, summary, run, bar)."""
    metric, chart, fieldcfg, ensemble, moments, U, bar, alpha = _scenario_stage(
        config, spread=spread, energy=energy, seed=seed)
    it = config.data["integrator"]
    T = it["T"] if T is None else T
    h = it["h"] if h is None else h
    y0 = marker_velocity(config, U)
    x0 = np.average(ensemble.x, axis=0, weights=ensemble.w)
    run = comparison_run(metric, chart, fieldcfg, ensemble, x0, y0, T, h)
    report = compare_trajectories(run.lorentz, run.averaged, moments, bar,
                                  skip=config.experiment["skip"])
    report.alpha = alpha
    summary = hypothesis_summary(moments.energy, alpha, report)
    return report, summary, run, bar


def run_compare(config, out_dir, workers=1):
    report, summary, _, _ = _compare_report(config)
    files = []
    fmt = config.data["output"]["formats"]
    if fmt in ("csv", "both"):
        path = Path(out_dir) / "compare.csv"
        report.to_csv(path)
        files.append(path.name)
    if fmt in ("json", "both"):
        path = Path(out_dir) / "compare.json"
        report.meta = summary
        report.to_json(path)
        files.append(path.name)
    return files, {"summary": summary}


# --------------------------------------------------------------------------
# scale pipeline


def _lab_window_steps(config):
    it = config.data["integrator"]
    return max(1, int(round(it["T"] / it["h"])))


def _scale_point(args):
    """One sweep point of run_scale (worker-safe)."""
    data, spread, energy, t_lab_max = args
    config = ScenarioConfig(data)
    nsteps = _lab_window_steps(config)
    metric, chart, fieldcfg, ensemble, moments, U, bar, alpha = _scenario_stage(
        config, spread=spread, energy=energy)
    y0 = marker_velocity(config, U)
    x0 = np.average(ensemble.x, axis=0, weights=ensemble.w)
    T = 1.2 * t_lab_max / y0[0]
    run = comparison_run(metric, chart, fieldcfg, ensemble, x0, y0, T, T / nsteps)
    report = compare_trajectories(run.lorentz, run.averaged, moments, bar, skip=1)
    report.alpha = alpha
    return {
        "alpha": float(alpha),
        "E": float(moments.energy),
        "t_lab": [float(v) for v in report.t_lab],
        "dx": [float(v) for v in report.dx],
        "dy": [float(v) for v in report.dy],
    }


def _at_lab_time(point, t_eval):
    t = np.asarray(point["t_lab"])
    k = min(int(np.searchsorted(t, t_eval)), len(t) - 1)
    return point["dx"][k], point["dy"][k]


def _synthetic_points(config):
    """Planted sweep obeying the Thm 4.1/4.2 laws exactly (fitter self-test)."""
    exp = config.experiment
    ens = config.data["ensemble"]
    t = np.linspace(0.01, exp["t_lab_max"], 100)
    points = []
    for s in exp["alpha_sweep"]:
        alpha = 2.0 * s
        points.append({
            "alpha": alpha, "E": ens["energy"], "t_lab": t.tolist(),
            "dx": (alpha**2 * ens["energy"] ** -2.0 * t**2).tolist(),
            "dy": (alpha**2 * ens["energy"] ** -2.0 * t).tolist(),
        })
    epoints = []
    for E in exp["energy_sweep"]:
        alpha = 2.0 * exp["alpha_sweep"][-1]
        epoints.append({
            "alpha": alpha, "E": E, "t_lab": t.tolist(),
            "dx": (alpha**2 * E**-2.0 * t**2).tolist(),
            "dy": (alpha**2 * E**-2.0 * t).tolist(),
        })
    return points, epoints


def run_scale(config, out_dir, workers=1):
    exp = config.experiment
    if len(exp["alpha_sweep"]) < 3 or len(exp["energy_sweep"]) < 3:
        raise ConfigurationError("scale experiment needs >= 3 sweep points per variable")
    if exp["synthetic"]:
        apoints, epoints = _synthetic_points(config)
    else:
        ajobs = [(config.data, s, None, exp["t_lab_max"]) for s in exp["alpha_sweep"]]
        ejobs = [(config.data, exp["alpha_sweep"][exp["t_fit_index"]], E, exp["eval_time"])
                 for E in exp["energy_sweep"]]
        results = _run_jobs(_scale_point, ajobs + ejobs, workers)
        apoints = results[: len(ajobs)]
        epoints = results[len(ajobs):]

    t_end = exp["t_lab_max"]
    alphas = np.array([p["alpha"] for p in apoints])
    dx_end = np.array([_at_lab_time(p, t_end)[0] for p in apoints])
    dy_end = np.array([_at_lab_time(p, t_end)[1] for p in apoints])
    energies = np.array([p["E"] for p in epoints])
    dx_E = np.array([_at_lab_time(p, exp["eval_time"])[0] for p in epoints])
    dy_E = np.array([_at_lab_time(p, exp["eval_time"])[1] for p in epoints])

    tp = apoints[exp["t_fit_index"]]
    tl = np.asarray(tp["t_lab"])
    lo, hi = exp["t_fit_window"]
    sel = (tl > lo) & (tl <= hi)
    fits = {
        "alpha_dx": fit_power("alpha", alphas, dx_end).to_dict(),
        "alpha_dy": fit_power("alpha", alphas, dy_end).to_dict(),
        "E_dx": fit_power("E", energies, dx_E).to_dict(),
        "E_dy": fit_power("E", energies, dy_E).to_dict(),
        "t_dx": fit_power("t", tl[sel], np.asarray(tp["dx"])[sel]).to_dict(),
        "t_dy": fit_power("t", tl[sel], np.asarray(tp["dy"])[sel]).to_dict(),
    }
    k_end = len(tl) - 1
    prefactors = {
        "P_dx": float(tp["dx"][k_end] / (tp["alpha"] ** 2 * tp["E"] ** -2.0 * tl[k_end] ** 2)),
        "Q_dy": float(tp["dy"][k_end] / (tp["alpha"] ** 2 * tp["E"] ** -2.0 * tl[k_end])),
    }
    summary = {
        "fits": fits,
        "prefactors": prefactors,
        "synthetic": exp["synthetic"],
        "window_note": "short-time window; T calibrated so the gap stays below 1% of the orbit scale",
    }

    files = []
    fmt = config.data["output"]["formats"]
    if fmt in ("csv", "both"):
        for i, p in enumerate(apoints):
            path = Path(out_dir) / f"scale_alpha_{i:03d}.csv"
            _write_csv(path, ["t_lab", "dx", "dy", "alpha", "E"],
                       [[t, dx, dy, p["alpha"], p["E"]]
                        for t, dx, dy in zip(p["t_lab"], p["dx"], p["dy"])])
            files.append(path.name)
        for i, p in enumerate(epoints):
            path = Path(out_dir) / f"scale_energy_{i:03d}.csv"
            _write_csv(path, ["t_lab", "dx", "dy", "alpha", "E"],
                       [[t, dx, dy, p["alpha"], p["E"]]
                        for t, dx, dy in zip(p["t_lab"], p["dx"], p["dy"])])
            files.append(path.name)
    if fmt in ("json", "both"):
        path = Path(out_dir) / "scale.json"
        _write_json(path, summary)
        files.append(path.name)
    return files, summary


# --------------------------------------------------------------------------
# residual pipeline


def _slice_grid(config, record, energy):
    """Equal-time-slice cloud plus the velocity grid around the window center."""
    grid_cfg = config.experiment["grid"]
    cloud = SampleCloud.from_record(record, equal_time=True)
    slice_t = cloud.slice_t
    if len(slice_t) < grid_cfg["nt"]:
        raise ConfigurationError("record window holds fewer slices than grid.nt")
    dt = slice_t[1] - slice_t[0]
    k_c = int(np.argmin(np.abs(slice_t - grid_cfg["t_center"])))
    k_lo = min(max(k_c - grid_cfg["nt"] // 2, 0), len(slice_t) - grid_cfg["nt"])
    ax_t = slice_t[k_lo: k_lo + grid_cfg["nt"]]
    t_mid = ax_t[len(ax_t) // 2]
    sel = np.abs(cloud.x[:, 0] - t_mid) < 2 * dt
    xc = np.average(cloud.x[sel, 1:], axis=0, weights=cloud.w[sel])
    nx, dx = grid_cfg["nx"], grid_cfg["dx"]
    axes = (ax_t,) + tuple(
        xc[j] + dx * np.arange(-(nx // 2), nx - nx // 2) for j in range(config.dimension - 1)
    )
    radius = [0.4 * dt] + [grid_cfg["kernel_radius"]] * (config.dimension - 1)
    grid = VelocityFieldGrid.from_kernel(cloud, axes, radius, cell_alpha=True)
    return cloud, grid, radius


def _residual_point(args):
    data, spread, n_vel = args
    config = ScenarioConfig(data)
    metric = Metric(config.dimension)
    chart = make_chart(config.data["chart"], config.dimension)
    fieldcfg = build_field(config)
    ensemble = build_ensemble(config, spread=spread, n_vel=n_vel)
    it = config.data["integrator"]
    grid_cfg = config.experiment["grid"]
    energy = config.data["ensemble"]["energy"]
    tau_c = grid_cfg["t_center"] / energy
    margin = (grid_cfg["nt"] // 2 + 2) * it["h"] * grid_cfg["record_every"]
    record = averaged_vlasov_transport(
        metric, chart, fieldcfg, ensemble, it["T"], it["h"],
        record_every=grid_cfg["record_every"],
        record_window=(tau_c - margin, tau_c + margin),
    )
    cloud, grid, radius = _slice_grid(config, record, energy)
    avg = AveragedConnection(metric, chart, fieldcfg, CloudMoments(cloud, radius))
    moments = compute_moments(record.ensemble)
    U = mean_velocity(moments)
    U = U / np.sqrt(metric.norm2(U))
    bar = bar_metric(U)
    rep = fluid_residual(avg, grid, bar)
    alpha = diameter(record.ensemble.y, bar).value
    return {
        "spread": float(spread),
        "alpha": float(alpha),
        "R": float(rep.R),
        "interior_cells": int(np.sum(rep.interior)),
        "grid": grid,
        "residual": rep.residual,
    }


def run_residual(config, out_dir, workers=1):
    exp = config.experiment
    sweep = exp["spread_sweep"]
    if not sweep:
        raise ConfigurationError("residual experiment needs experiment.spread_sweep")
    jobs = [(config.data, s, None) for s in sweep]
    if exp["include_cold"]:
        jobs.append((config.data, 0.0, 1))
    results = _run_jobs(_residual_point, jobs, workers)
    warm = results[: len(sweep)]
    cold = results[len(sweep)] if exp["include_cold"] else None

    alphas = np.array([p["alpha"] for p in warm])
    Rs = np.array([p["R"] for p in warm])
    fit = fit_power("alpha", alphas, Rs)
    summary = {
        "points": [{k: p[k] for k in ("spread", "alpha", "R", "interior_cells")} for p in warm],
        "slope": fit.to_dict(),
        "cold_floor": None if cold is None else {"R": cold["R"], "interior_cells": cold["interior_cells"]},
    }

    files = []
    fmt = config.data["output"]["formats"]
    if fmt in ("csv", "both"):
        for i, p in enumerate(results):
            path = Path(out_dir) / f"residual_{i:03d}.csv"
            grid_to_csv(p["grid"], p["residual"], path)
            files.append(path.name)
    if fmt in ("json", "both"):
        path = Path(out_dir) / "residual.json"
        _write_json(path, summary)
        files.append(path.name)
    return files, summary


# --------------------------------------------------------------------------
# fluid pipeline


def _fluid_point(args):
    data, spread, n_vel = args
    config = ScenarioConfig(data)
    metric = Metric(config.dimension)
    chart = make_chart(config.data["chart"], config.dimension)
    fieldcfg = build_field(config)
    conn = LorentzConnection(metric, chart, fieldcfg)
    ensemble = build_ensemble(config, spread=spread, n_vel=n_vel)
    moments = compute_moments(ensemble)
    U = mean_velocity(moments)
    U = U / np.sqrt(metric.norm2(U))
    bar = bar_metric(U)
    alpha = diameter(ensemble.y, bar).value
    it = config.data["integrator"]
    grid_cfg = config.experiment["grid"]
    record = vlasov_transport(conn, ensemble, it["T"], it["h"],
                              record_every=grid_cfg["record_every"])
    cloud = SampleCloud.from_record(record, equal_time=True)
    slice_t = cloud.slice_t
    dt = slice_t[1] - slice_t[0]
    bounds = grid_cfg["bounds"]
    if len(bounds) != config.dimension - 1:
        raise ConfigurationError("fluid experiment needs grid.bounds per spatial axis")
    dx = grid_cfg["dx"]
    axes = (slice_t,) + tuple(
        np.arange(int(round(lo / dx)), int(round(hi / dx)) + 1) * dx for lo, hi in bounds
    )
    radius = [0.4 * dt] + [grid_cfg["kernel_radius"]] * (config.dimension - 1)
    grid = VelocityFieldGrid.from_kernel(cloud, axes, radius)
    lorentz_traj = integrate(conn, np.zeros(config.dimension), U, it["T"], it["h"])
    track = fluid_vs_particle(grid, lorentz_traj, bar)
    return {
        "spread": float(spread),
        "alpha": float(alpha),
        "gap_end": float(track.gap[-1]),
        "t_end": float(track.t[-1]),
        "t": [float(v) for v in track.t],
        "gap": [float(v) for v in track.gap],
    }


def run_fluid(config, out_dir, workers=1):
    exp = config.experiment
    sweep = exp["spread_sweep"]
    if not sweep:
        raise ConfigurationError("fluid experiment needs experiment.spread_sweep")
    jobs = [(config.data, s, None) for s in sweep]
    if exp["include_cold"]:
        jobs.append((config.data, 0.0, 1))
    results = _run_jobs(_fluid_point, jobs, workers)
    warm = results[: len(sweep)]
    cold = results[len(sweep)] if exp["include_cold"] else None

    alphas = np.array([p["alpha"] for p in warm])
    gaps = np.array([p["gap_end"] for p in warm])
    fit = fit_power("alpha", alphas, gaps)
    summary = {
        "points": [{k: p[k] for k in ("spread", "alpha", "gap_end", "t_end")} for p in warm],
        "exponent": fit.to_dict(),
        "cold_gap": None if cold is None else cold["gap_end"],
    }

    files = []
    fmt = config.data["output"]["formats"]
    if fmt in ("csv", "both"):
        for i, p in enumerate(results):
            path = Path(out_dir) / f"fluid_{i:03d}.csv"
            _write_csv(path, ["t", "gap", "alpha", "spread"],
                       [[t, g, p["alpha"], p["spread"]] for t, g in zip(p["t"], p["gap"])])
            files.append(path.name)
    if fmt in ("json", "both"):
        path = Path(out_dir) / "fluid.json"
        _write_json(path, summary)
        files.append(path.name)
    return files, summary


# --------------------------------------------------------------------------
# simulate & validate pipelines


def run_simulate(config, out_dir, workers=1):
    metric, chart, fieldcfg, ensemble, moments, U, bar, alpha = _scenario_stage(config)
    it = config.data["integrator"]
    which = config.experiment["connection"]
    if which == "lorentz":
        conn = LorentzConnection(metric, chart, fieldcfg)
    elif which == "averaged":
        conn = AveragedConnection(metric, chart, fieldcfg, ConstantMoments(moments))
    else:
        raise ConfigurationError(f"unknown connection {which!r}")
    x0 = np.average(ensemble.x, axis=0, weights=ensemble.w)
    traj = integrate(conn, x0, U, it["T"], it["h"])
    files = []
    fmt = config.data["output"]["formats"]
    summary = {
        "connection": which,
        "norm_drift": traj.norm_drift(metric),
        "alpha": float(alpha),
        "E": float(moments.energy),
    }
    if fmt in ("csv", "both"):
        path = Path(out_dir) / "trajectory.csv"
        traj.to_csv(path)
        files.append(path.name)
    if fmt in ("json", "both"):
        path = Path(out_dir) / "simulate.json"
        _write_json(path, summary)
        files.append(path.name)
    return files, summary


def run_validate(config, out_dir, workers=1):
    from .validate import run_all

    checks = run_all(seed=config.seed, mutate=config.experiment["mutate"])
    summary = {
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
        "n_checks": len(checks),
    }
    path = Path(out_dir) / "validate.json"
    _write_json(path, summary)
    return [path.name], summary


# --------------------------------------------------------------------------
# orchestration

_RUNNERS = {
    "simulate": run_simulate,
    "compare": run_compare,
    "scale": run_scale,
    "residual": run_residual,
    "fluid": run_fluid,
    "validate": run_validate,
}


def _run_jobs(fn, jobs, workers):
    """Deterministic sweep execution: results ordered by submission index."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def run_experiment(config, out_dir=None, workers=1, seed=None, formats=None):
    """Dispatch one configured experiment and write its manifest."""
    if seed is not None:
        config = config.with_overrides(ensemble__seed=int(seed))
    if formats is not None:
        config = config.with_overrides(output__formats=formats)
    out = Path(out_dir if out_dir is not None else config.data["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    files, summary = _RUNNERS[config.kind](config, out, workers=workers)
    manifest = RunManifest(
        config_hash=config.config_hash(),
        seed=config.seed,
        artifact_version=ARTIFACT_VERSION,
        files=files,
        wall_clock_s=time.perf_counter() - start,
    )
    manifest.write(out / "manifest.json")
    return manifest, summary
