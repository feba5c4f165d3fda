"""Scenario configs, presets and the experiment runner.

A scenario is a JSON object (see ``ScenarioConfig``).  Running it writes

* ``com.csv``       ``t, com_1..com_D``
* ``dogs.csv``      ``t, a<m>_<d>`` for every dog ``m`` and component ``d``
* ``controls.csv``  ``t, u<m>_<d>`` (``t`` is the start of each control cell)
* ``residuals.csv`` ``sm_iter, residual`` (``window, sm_iter, residual`` in
  receding-horizon mode)
* ``snapshots.csv`` ``t, agent, index, x_1..x_D`` when snapshot times are set
* ``summary.json``  the :class:`RunRecord`, written last

All CSVs use ``,`` separators, ``.`` decimals, LF line endings and shortest
round-trip float formatting, so a fixed (config, seed) pair reproduces every
CSV byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import subprocess
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .coarse_opt import ArmijoConfig, CoarseOptConfig, solve_coarse_ocp
from .dynamics import simulate_ode
from .errors import ConfigError, GridMismatch, MaxItersReached, ParseError, SheepdogError, ValidationError
from .horizon import HorizonSchedule, run_receding_horizon, straight_line
from .model import (
    DOG_POTENTIAL,
    SHEEP_POTENTIAL,
    ControlSignal,
    ModelParams,
    PotentialParams,
    ReferenceData,
    SystemState,
    TimeGrid,
)
from .space_mapping import SpaceMappingConfig, amcsm

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODES = ("coarse-only", "amcsm-open-loop", "receding-horizon")
_INIT_KEY = 0x696E6974  # spawn key of the initial-condition stream


def _potential_dict(p: PotentialParams):
    return {"c_r": p.c_r, "c_a": p.c_a, "l_r": p.l_r, "l_a": p.l_a}


@dataclass(frozen=True)
class InitialCondition:
    """Initial placement.

    ``sheep``: ``"box"`` (uniform in a square of side ``box_size`` around
    ``box_center``) or an explicit ``N x D`` list.  ``dogs``: ``"circle"``
    (evenly spaced on a circle of ``dog_radius`` around ``dog_center``,
    default the box center), ``"behind"`` (a segment of width ``dog_spread``
    perpendicular to the line from the initial center of mass to ``z_des``,
    ``dog_radius`` behind the center of mass) or an explicit ``M x D`` list.
    Sheep start at rest unless ``sheep_velocities`` is given.
    """

    sheep: object = "box"
    box_center: tuple = (0.0, 0.0)
    box_size: float = 1.0
    sheep_velocities: object = None
    dogs: object = "circle"
    dog_radius: float = 2.0
    dog_center: object = None
    dog_spread: float = 1.2


@dataclass(frozen=True)
class ScenarioConfig:
    """One experiment.  Defaults are the fixed values of the shepherding study."""

    n_sheep: int
    n_dogs: int
    mode: str
    schema_version: int = SCHEMA_VERSION
    label: str = ""
    dim: int = 2
    friction: float = 0.5
    noise: float = 0.0
    u_max: float = 5e-2
    sheep_potential: dict = field(default_factory=lambda: _potential_dict(SHEEP_POTENTIAL))
    dog_potential: dict = field(default_factory=lambda: _potential_dict(DOG_POTENTIAL))
    dt: float = 1e-2
    T: float = 20.0
    gamma: float = 1e-2
    eps_opt: float = 5e-3
    max_iters: int = 500
    armijo_initial_step: float | None = None
    armijo_shrink: float = 0.5
    armijo_slope: float = 1e-4
    armijo_max_backtracks: int = 40
    cg_restart_period: int = 10
    eps_sm: float = 0.3
    accept_threshold: float = 0.3
    rel_gap_stop: float | None = 5e-3
    max_sm_iters: int = 10
    n_samples: int = 100
    step_length: float = 1.0
    workers: int = 1
    n_windows: int = 20
    window_len: float | None = None
    commit_len: float | None = None
    steering_tol: float | None = None
    max_windows: int | None = None
    plant_seed: int | None = None
    initial: InitialCondition = field(default_factory=InitialCondition)
    z_des: tuple = (5.0, 5.0)
    seed: int = 0
    output_dir: str = "out"
    snapshot_times: tuple = ()

    def to_dict(self):
        out = dataclasses.asdict(self)
        return json.loads(json.dumps(out))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def replace(self, **changes):
        return config_from_dict({**self.to_dict(), **changes})

    # builders -------------------------------------------------------------

    def model_params(self):
        return ModelParams(
            n_sheep=self.n_sheep, n_dogs=self.n_dogs, dim=self.dim, friction=self.friction,
            noise=self.noise, u_max=self.u_max,
            sheep_potential=PotentialParams(**self.sheep_potential),
            dog_potential=PotentialParams(**self.dog_potential),
        )

    def solver_config(self):
        arm = ArmijoConfig(self.armijo_initial_step, self.armijo_shrink, self.armijo_slope,
                           self.armijo_max_backtracks)
        return CoarseOptConfig(self.eps_opt, self.max_iters, arm, self.cg_restart_period)

    def sm_config(self):
        return SpaceMappingConfig(self.eps_sm, self.max_sm_iters, self.rel_gap_stop, self.accept_threshold,
                                  self.n_samples, self.seed, self.step_length, self.workers)

    def grid(self):
        return TimeGrid.over(self.T, self.dt)

    def schedule(self):
        if self.window_len is None:
            return HorizonSchedule.from_total(self.T, self.n_windows, self.dt)
        commit = self.window_len / 2 if self.commit_len is None else self.commit_len
        c = int(round(commit / self.dt))
        w = int(round(self.window_len / self.dt))
        return HorizonSchedule(((self.n_windows - 1) * c + w) * self.dt, self.n_windows,
                               self.window_len, commit, self.dt)

    def initial_state(self):
        return make_initial_state(self)


# -- validation --------------------------------------------------------------

def _check(cond, name, message):
    if not cond:
        raise ValidationError(name, message)


def _as_int(d, name):
    v = d[name]
    _check(isinstance(v, int) and not isinstance(v, bool), name, "must be an integer")
    return v


def _as_float(d, name, optional=False):
    v = d[name]
    if v is None and optional:
        return None
    _check(isinstance(v, (int, float)) and not isinstance(v, bool), name, "must be a number")
    _check(math.isfinite(v), name, "must be finite")
    return float(v)


def _array(v, name, shape):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(name, "must be a numeric array") from None
    _check(arr.shape == shape, name, f"must have shape {shape}, got {arr.shape}")
    _check(bool(np.isfinite(arr).all()), name, "must be finite")
    return arr


def _reject_unknown(d, allowed, where):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ValidationError(f"{where}{unknown[0]}", "unknown key")


def _initial_from_dict(d, n, m, dim):
    if not isinstance(d, dict):
        raise ValidationError("initial", "must be an object")
    names = [f.name for f in dataclasses.fields(InitialCondition)]
    _reject_unknown(d, names, "initial.")
    ic = {**dataclasses.asdict(InitialCondition()), **d}
    if isinstance(ic["sheep"], str):
        _check(ic["sheep"] == "box", "initial.sheep", 'must be "box" or an explicit array')
    else:
        ic["sheep"] = _array(ic["sheep"], "initial.sheep", (n, dim)).tolist()
    if isinstance(ic["dogs"], str):
        _check(ic["dogs"] in ("circle", "behind"), "initial.dogs", 'must be "circle", "behind" or an array')
    else:
        ic["dogs"] = _array(ic["dogs"], "initial.dogs", (m, dim)).tolist()
    ic["box_center"] = tuple(_array(ic["box_center"], "initial.box_center", (dim,)).tolist())
    for key in ("box_size", "dog_radius", "dog_spread"):
        ic[key] = _as_float({f"initial.{key}": ic[key]}, f"initial.{key}")
        _check(ic[key] >= 0, f"initial.{key}", "must be nonnegative")
    if ic["dog_center"] is not None:
        ic["dog_center"] = tuple(_array(ic["dog_center"], "initial.dog_center", (dim,)).tolist())
    if ic["sheep_velocities"] is not None:
        ic["sheep_velocities"] = _array(ic["sheep_velocities"], "initial.sheep_velocities", (n, dim)).tolist()
    return InitialCondition(**ic)


def config_from_dict(d):
    """Validate a raw mapping and build a :class:`ScenarioConfig`."""
    if not isinstance(d, dict):
        raise ValidationError("<root>", "config must be a JSON object")
    names = [f.name for f in dataclasses.fields(ScenarioConfig)]
    _reject_unknown(d, names, "")
    for key in ("n_sheep", "n_dogs", "mode"):
        _check(key in d, key, "is required")
    base = {f.name: (f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default)
            for f in dataclasses.fields(ScenarioConfig) if f.name not in ("n_sheep", "n_dogs", "mode")}
    raw = {**base, **d}
    out = {}

    _check(raw["schema_version"] == SCHEMA_VERSION, "schema_version",
           f"unsupported schema version (expected {SCHEMA_VERSION})")
    out["schema_version"] = SCHEMA_VERSION
    _check(raw["mode"] in MODES, "mode", f"must be one of {MODES}")
    out["mode"] = raw["mode"]
    _check(isinstance(raw["label"], str), "label", "must be a string")
    out["label"] = raw["label"]
    _check(isinstance(raw["output_dir"], str) and raw["output_dir"] != "", "output_dir", "must be a path")
    out["output_dir"] = raw["output_dir"]

    for key in ("n_sheep", "n_dogs", "dim", "max_iters", "armijo_max_backtracks", "cg_restart_period",
                "max_sm_iters", "n_samples", "workers", "n_windows", "seed"):
        out[key] = _as_int(raw, key)
    _check(out["n_sheep"] >= 1, "n_sheep", "must be >= 1")
    _check(out["n_dogs"] >= 0, "n_dogs", "must be >= 0")
    _check(out["dim"] >= 1, "dim", "must be >= 1")
    for key in ("max_iters", "armijo_max_backtracks", "cg_restart_period", "n_samples", "workers", "n_windows"):
        _check(out[key] >= 1, key, "must be >= 1")
    _check(out["max_sm_iters"] >= 0, "max_sm_iters", "must be >= 0")
    _check(out["seed"] >= 0, "seed", "must be nonnegative")

    for key in ("friction", "noise", "u_max", "dt", "T", "gamma", "eps_opt", "armijo_shrink", "armijo_slope",
                "eps_sm", "accept_threshold", "step_length"):
        out[key] = _as_float(raw, key)
    for key in ("armijo_initial_step", "rel_gap_stop", "window_len", "commit_len", "steering_tol"):
        out[key] = _as_float(raw, key, optional=True)
    for key in ("friction", "noise", "accept_threshold"):
        _check(out[key] >= 0, key, "must be nonnegative")
    for key in ("u_max", "dt", "T", "gamma", "eps_opt", "eps_sm", "step_length"):
        _check(out[key] > 0, key, "must be positive")
    for key in ("armijo_shrink", "armijo_slope"):
        _check(0 < out[key] < 1, key, "must lie in (0, 1)")
    for key in ("armijo_initial_step", "window_len", "commit_len", "steering_tol"):
        _check(out[key] is None or out[key] > 0, key, "must be positive")
    _check(out["rel_gap_stop"] is None or out["rel_gap_stop"] >= 0, "rel_gap_stop", "must be nonnegative")
    n_steps = out["T"] / out["dt"]
    _check(abs(n_steps - round(n_steps)) < 1e-6 * max(1.0, n_steps), "T", "must be a multiple of dt")

    for key in ("max_windows", "plant_seed"):
        out[key] = None if raw[key] is None else _as_int(raw, key)
    _check(out["max_windows"] is None or out["max_windows"] >= 1, "max_windows", "must be >= 1")
    _check(out["plant_seed"] is None or out["plant_seed"] >= 0, "plant_seed", "must be nonnegative")

    for key in ("sheep_potential", "dog_potential"):
        pot = raw[key]
        _check(isinstance(pot, dict), key, "must be an object")
        _reject_unknown(pot, ("c_r", "c_a", "l_r", "l_a"), f"{key}.")
        pot = {**_potential_dict(SHEEP_POTENTIAL if key == "sheep_potential" else DOG_POTENTIAL), **pot}
        vals = {k: _as_float(pot, k) for k in ("c_r", "c_a", "l_r", "l_a")}
        _check(vals["c_r"] >= 0 and vals["c_a"] >= 0, key, "strengths must be nonnegative")
        _check(vals["l_r"] > 0 and vals["l_a"] > 0, key, "ranges must be positive")
        out[key] = vals

    dim = out["dim"]
    out["z_des"] = tuple(_array(raw["z_des"], "z_des", (dim,)).tolist())
    init = raw["initial"]
    if isinstance(init, InitialCondition):
        init = dataclasses.asdict(init)
    out["initial"] = _initial_from_dict(init, out["n_sheep"], out["n_dogs"], dim)
    try:
        times = [float(t) for t in raw["snapshot_times"]]
    except (TypeError, ValueError):
        raise ValidationError("snapshot_times", "must be a list of numbers") from None
    _check(all(math.isfinite(t) and t >= 0 for t in times), "snapshot_times", "must be finite and >= 0")
    out["snapshot_times"] = tuple(times)

    cfg = ScenarioConfig(**out)
    if cfg.mode == "receding-horizon":
        if cfg.window_len is not None:
            w = cfg.window_len / cfg.dt
            _check(abs(w - round(w)) < 1e-6 and round(w) % 2 == 0 and w >= 2, "window_len",
                   "must be an even multiple of dt")
        if cfg.commit_len is not None:
            _check(cfg.window_len is not None, "commit_len", "requires window_len")
            c = cfg.commit_len / cfg.dt
            _check(abs(c - round(c)) < 1e-6 and cfg.commit_len <= cfg.window_len, "commit_len",
                   "must be a multiple of dt not exceeding window_len")
        try:
            cfg.schedule()
        except ValueError as exc:
            raise ValidationError("n_windows", str(exc)) from None
    return cfg


def load_config(path):
    """Read and validate a JSON scenario file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed config {path}: {exc}") from exc
    return config_from_dict(raw)


# -- initial conditions --------------------------------------------------------

def make_initial_state(cfg: ScenarioConfig):
    ic = cfg.initial
    n, m, dim = cfg.n_sheep, cfg.n_dogs, cfg.dim
    if isinstance(ic.sheep, str):
        ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(_INIT_KEY,))
        rng = np.random.Generator(np.random.Philox(ss))
        x = np.asarray(ic.box_center) + ic.box_size * (rng.random((n, dim)) - 0.5)
    else:
        x = np.asarray(ic.sheep, dtype=float)
    v = np.zeros((n, dim)) if ic.sheep_velocities is None else np.asarray(ic.sheep_velocities, dtype=float)
    com = x.mean(axis=0)
    if not isinstance(ic.dogs, str):
        a = np.asarray(ic.dogs, dtype=float).reshape(m, dim)
    elif ic.dogs == "circle":
        center = np.asarray(ic.box_center if ic.dog_center is None else ic.dog_center, dtype=float)
        a = np.tile(center, (m, 1))
        ang = 2 * np.pi * np.arange(m) / max(m, 1)
        a[:, 0] += ic.dog_radius * np.cos(ang)
        if dim > 1:
            a[:, 1] += ic.dog_radius * np.sin(ang)
    else:
        heading = np.asarray(cfg.z_des) - com
        norm = np.linalg.norm(heading)
        heading = heading / norm if norm > 0 else np.eye(dim)[0]
        perp = np.zeros(dim)
        if dim > 1:
            perp[0], perp[1] = -heading[1], heading[0]
        offsets = np.linspace(-0.5, 0.5, m) * ic.dog_spread if m > 1 else np.zeros(m)
        a = com - ic.dog_radius * heading + offsets[:, None] * perp
    return SystemState(x, v, a)


def straight_reference(y0: SystemState, z_des, grid: TimeGrid, n_dogs, gamma):
    """Straight line from the initial center of mass to ``z_des``, zero reference control."""
    z_des = np.asarray(z_des, dtype=float)
    line = straight_line(y0.center_of_mass(), z_des, grid.n_steps)
    return ReferenceData(line, ControlSignal.zeros(grid, n_dogs, len(z_des)), z_des, gamma)


def compute_l2_com_error(path_a, path_b, dt=None):
    """dt-weighted discrete L2 distance of two center-of-mass paths.

    Paths are ``(n_steps+1, D)`` arrays (or objects with ``values`` and
    ``grid``); the rectangle rule uses the left end of every cell.
    """
    grid_a = getattr(path_a, "grid", None)
    grid_b = getattr(path_b, "grid", None)
    if grid_a is not None and grid_b is not None and not grid_a.same_as(grid_b):
        raise GridMismatch("center-of-mass paths live on different grids")
    a = np.asarray(getattr(path_a, "values", path_a), dtype=float)
    b = np.asarray(getattr(path_b, "values", path_b), dtype=float)
    if a.shape != b.shape:
        raise GridMismatch(f"paths have shapes {a.shape} and {b.shape}")
    if dt is None:
        dt = (grid_a or grid_b).dt if (grid_a or grid_b) is not None else None
    if dt is None:
        raise ValueError("dt is required for bare arrays")
    if a.shape[0] < 2:
        return 0.0
    diff = a[:-1] - b[:-1]
    return float(np.sqrt(dt * np.sum(diff * diff)))


# -- records and output ----------------------------------------------------------

@dataclass
class RunRecord:
    config_hash: str
    version: str
    mode: str
    label: str
    seed: int
    status: str = "ok"
    error: str = ""
    wall_time: float = 0.0
    residuals: list = field(default_factory=list)
    sm_iterations: int | list | None = None
    l2_error_deterministic: float | None = None
    l2_error_space_mapping: float | None = None
    steering_time: float | None = None
    coarse_cost: float | None = None
    coarse_iterations: int | None = None
    coarse_converged: bool | None = None
    final_com: list | None = None
    windows: int | None = None
    manifest: dict = field(default_factory=dict)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class RunOutputs:
    """Arrays handed to :func:`emit_outputs`; any of them may be empty."""

    times: np.ndarray
    com: np.ndarray
    dogs: np.ndarray
    control: ControlSignal | None
    residual_rows: list
    residual_header: tuple = ("sm_iter", "residual")
    snapshots: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def version_string():
    try:
        base = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        base = "0+unknown"
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{base}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def _fmt(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return buf.getvalue()


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_outputs(record: RunRecord, out: RunOutputs, directory, dim=2, n_dogs=None):
    """Write the CSVs and ``summary.json``; returns the manifest ``{file: sha256}``."""
    directory = Path(directory)
    com = np.asarray(out.com, dtype=float).reshape(-1, dim)
    times = np.asarray(out.times, dtype=float).ravel()
    dogs = np.asarray(out.dogs, dtype=float)
    m = n_dogs if n_dogs is not None else (dogs.shape[1] if dogs.ndim == 3 else 0)
    dogs = dogs.reshape(-1, m, dim)
    files = {}
    files["com.csv"] = _csv_text(["t"] + [f"com_{d + 1}" for d in range(dim)],
                                 ([t, *c] for t, c in zip(times, com)))
    dog_cols = [f"a{j + 1}_{d + 1}" for j in range(m) for d in range(dim)]
    files["dogs.csv"] = _csv_text(["t"] + dog_cols, ([t, *a.ravel()] for t, a in zip(times, dogs)))
    ctrl_cols = [f"u{j + 1}_{d + 1}" for j in range(m) for d in range(dim)]
    if out.control is not None:
        ct = out.control.grid.times()[:-1]
        rows = ([t, *u.ravel()] for t, u in zip(ct, out.control.values))
    else:
        rows = ()
    files["controls.csv"] = _csv_text(["t"] + ctrl_cols, rows)
    files["residuals.csv"] = _csv_text(list(out.residual_header), out.residual_rows)
    if out.snapshots:
        files["snapshots.csv"] = _csv_text(["t", "agent", "index"] + [f"x_{d + 1}" for d in range(dim)],
                                           out.snapshots)
    for name, text in out.extra.items():
        files[name] = text
    manifest = {}
    for name in sorted(files):
        _atomic_write(directory / name, files[name])
        manifest[name] = hashlib.sha256(files[name].encode()).hexdigest()
    record.manifest = manifest
    _atomic_write(directory / "summary.json", json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest


def _snapshot_rows(times, xs, as_, wanted):
    rows = []
    for t in wanted:
        i = int(np.argmin(np.abs(times - t)))
        ti = times[i]
        rows += [[ti, "sheep", k, *xs[i, k]] for k in range(xs.shape[1])]
        rows += [[ti, "dog", j, *as_[i, j]] for j in range(as_.shape[1])]
    return rows


# -- running ---------------------------------------------------------------------

def _run_coarse(cfg, y0, params, record):
    grid = cfg.grid()
    ref = straight_reference(y0, cfg.z_des, grid, cfg.n_dogs, cfg.gamma)
    sol = solve_coarse_ocp(y0, ref, params.coarse(), cfg.solver_config())
    record.coarse_cost = sol.cost
    record.coarse_iterations = sol.iterations
    record.coarse_converged = sol.converged
    return ref, sol


def run_scenario(cfg: ScenarioConfig, output_dir=None):
    """Run one scenario and write its outputs.

    Numerical failures do not propagate: the returned record has
    ``status == "failed"`` and whatever was computed is still written.
    """
    out_dir = Path(output_dir or cfg.output_dir)
    t_start = time.perf_counter()
    record = RunRecord(cfg.config_hash(), version_string(), cfg.mode, cfg.label, cfg.seed)
    y0 = cfg.initial_state()
    params = cfg.model_params()
    dim, m = cfg.dim, cfg.n_dogs
    empty = RunOutputs(np.zeros(0), np.zeros((0, dim)), np.zeros((0, m, dim)), None, [])
    outputs = empty
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MaxItersReached)
            if cfg.mode == "coarse-only":
                ref, sol = _run_coarse(cfg, y0, params, record)
                traj = sol.traj
                outputs = RunOutputs(traj.grid.times(), traj.center_of_mass(), traj.a, sol.u_opt, [])
            elif cfg.mode == "amcsm-open-loop":
                outputs = _run_open_loop(cfg, y0, params, record)
            else:
                outputs = _run_horizon(cfg, y0, params, record)
    except ConfigError:
        raise
    except SheepdogError as exc:
        log.error("run failed: %s", exc)
        record.status, record.error = "failed", f"{type(exc).__name__}: {exc}"
    if record.status == "ok" and len(outputs.com):
        record.final_com = [float(c) for c in outputs.com[-1]]
    record.wall_time = time.perf_counter() - t_start
    emit_outputs(record, outputs, out_dir, dim, m)
    return record


def _run_open_loop(cfg, y0, params, record):
    ref, sol = _run_coarse(cfg, y0, params, record)
    res = amcsm(y0, params, ref, cfg.sm_config(), cfg.solver_config(), coarse_solution=sol)
    coarse_com = sol.center_of_mass()
    dt = cfg.dt
    record.residuals = [float(r) for r in res.residual_history]
    record.sm_iterations = res.iterations
    record.l2_error_deterministic = compute_l2_com_error(res.mean_com_history[0], coarse_com, dt)
    record.l2_error_space_mapping = compute_l2_com_error(res.mean_com, coarse_com, dt)
    dogs = simulate_ode(y0, res.u_f, params.coarse()).a
    times = res.u_f.grid.times()
    coarse_csv = _csv_text(["t"] + [f"com_{d + 1}" for d in range(cfg.dim)],
                           ([t, *c] for t, c in zip(times, coarse_com)))
    return RunOutputs(times, res.mean_com, dogs, res.u_f, [[k, r] for k, r in enumerate(res.residual_history)],
                      extra={"com_coarse.csv": coarse_csv})


def _run_horizon(cfg, y0, params, record):
    sched = cfg.schedule()
    max_windows = cfg.max_windows
    if cfg.steering_tol is not None and max_windows is None:
        max_windows = 10 * cfg.n_windows
    res = run_receding_horizon(y0, np.asarray(cfg.z_des), sched, params, cfg.sm_config(), cfg.solver_config(),
                               steering_tol=cfg.steering_tol, plant_seed=cfg.plant_seed, gamma=cfg.gamma,
                               max_windows=max_windows)
    record.windows = res.n_windows
    record.steering_time = res.steering_time
    record.residuals = [[float(r) for r in w.residuals] for w in res.window_reports]
    record.sm_iterations = [w.iterations for w in res.window_reports]
    rows = [[w.index, k, r] for w in res.window_reports for k, r in enumerate(w.residuals)]
    if res.failed:
        record.status, record.error = "failed", res.error
    if res.plant is None:
        return RunOutputs(np.zeros(0), np.zeros((0, cfg.dim)), np.zeros((0, cfg.n_dogs, cfg.dim)), None, rows,
                          ("window", "sm_iter", "residual"))
    times = res.u_committed.grid.times()
    snaps = _snapshot_rows(times, res.plant.x, res.plant.a, cfg.snapshot_times) if cfg.snapshot_times else []
    return RunOutputs(times, res.plant_com(), res.plant.a, res.u_committed, rows,
                      ("window", "sm_iter", "residual"), snaps)


# -- presets -------------------------------------------------------------------------

PRESET_NAMES = ("sigma-sweep", "dog-sweep", "stabilization")


def preset(name):
    """Scenario list of a preset: ``[(label, ScenarioConfig), ...]``."""
    if name == "sigma-sweep":
        return [(f"sigma-{s}", config_from_dict({
            "label": f"sigma-{s}", "mode": "amcsm-open-loop", "n_sheep": 30, "n_dogs": 5, "noise": s,
            "T": 20.0, "n_samples": 100, "eps_sm": 0.3, "accept_threshold": 0.3, "rel_gap_stop": 0.005,
        })) for s in (0.01, 0.02, 0.03, 0.04)]
    if name == "dog-sweep":
        return [(f"dogs-{m}", config_from_dict({
            "label": f"dogs-{m}", "mode": "receding-horizon", "n_sheep": 20, "n_dogs": m, "noise": 0.01,
            "eps_sm": 0.5, "accept_threshold": 0.5, "steering_tol": 0.05, "n_samples": 100,
            "window_len": 10.0, "commit_len": 5.0, "n_windows": 20, "max_windows": 100,
        })) for m in range(1, 7)]
    if name == "stabilization":
        return [("stabilization", config_from_dict({
            "label": "stabilization", "mode": "receding-horizon", "n_sheep": 20, "n_dogs": 5, "noise": 0.01,
            "T": 250.0, "gamma": 1e-3, "max_sm_iters": 2, "n_windows": 20,
            "snapshot_times": [10, 25, 50, 75, 125, 250],
        }))]
    raise ValidationError("preset", f"unknown preset {name!r}; choose from {PRESET_NAMES}")


def sweep_table(records):
    """One CSV row per run of a sweep."""
    rows = []
    for r in records:
        iters = r.sm_iterations if not isinstance(r.sm_iterations, list) else sum(r.sm_iterations)
        rows.append([r.label, r.status, "" if iters is None else iters,
                     "" if r.l2_error_deterministic is None else r.l2_error_deterministic,
                     "" if r.l2_error_space_mapping is None else r.l2_error_space_mapping,
                     "" if r.steering_time is None else r.steering_time])
    return _csv_text(["label", "status", "sm_iterations", "l2_error_deterministic", "l2_error_space_mapping",
                      "steering_time"], rows)
