"""Receding-horizon closed loop around AMCSM.

Window ``k`` covers cells ``[k c, k c + w)`` of a global grid (``c`` the
commit length, ``w`` the window length, both in steps).  Each window builds
its own reference, runs space mapping from the current plant state, commits
the first ``c`` cells of the returned control and advances one designated
plant path over them.  The plant has its own noise streams, independent of
the Monte Carlo ensembles used for planning.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .coarse_opt import CoarseOptConfig, solve_coarse_ocp
from .dynamics import Trajectory, sample_seed, simulate_sde_increments
from .errors import GridMismatch, SheepdogError
from .model import ControlSignal, ModelParams, ReferenceData, SystemState, TimeGrid
from .space_mapping import SpaceMappingConfig, amcsm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HorizonSchedule:
    """Uniform windows of ``window_len`` whose first ``commit_len`` is kept.

    Windows start at multiples of ``commit_len``; the last of the
    ``n_windows`` windows is committed in full, so
    ``(n_windows - 1) * commit_len + window_len == total_T``.
    """

    total_T: float
    n_windows: int
    window_len: float
    commit_len: float
    grid_dt: float

    def __post_init__(self):
        if not self.grid_dt > 0:
            raise ValueError("grid_dt must be positive")
        if self.n_windows < 1:
            raise ValueError("n_windows must be >= 1")
        w, c = self.window_steps, self.commit_steps
        if not math.isclose(w * self.grid_dt, self.window_len, rel_tol=1e-9) or w < 2 or w % 2:
            raise ValueError("window_len must be an even multiple of grid_dt")
        if not math.isclose(c * self.grid_dt, self.commit_len, rel_tol=1e-9) or not 1 <= c <= w:
            raise ValueError("commit_len must be a grid multiple in (0, window_len]")
        if (self.n_windows - 1) * c + w != self.total_steps:
            raise ValueError("windows do not cover total_T exactly")

    @classmethod
    def from_total(cls, total_T, n_windows, dt):
        """``n_windows`` half-committed windows covering ``total_T``.

        The commit length is rounded to the grid, so the covered span
        ``(n_windows + 1) * commit_len`` can differ from ``total_T`` by less
        than ``(n_windows + 1) * dt / 2``.
        """
        c = max(1, int(round(total_T / dt / (n_windows + 1))))
        return cls((n_windows + 1) * c * dt, n_windows, 2 * c * dt, c * dt, dt)

    @classmethod
    def from_window(cls, window_len, n_windows, dt):
        """``n_windows`` windows of ``window_len`` committing half of each."""
        w = int(round(window_len / dt))
        c = w // 2
        return cls((n_windows - 1) * c * dt + w * dt, n_windows, w * dt, c * dt, dt)

    @property
    def window_steps(self):
        return int(round(self.window_len / self.grid_dt))

    @property
    def commit_steps(self):
        return int(round(self.commit_len / self.grid_dt))

    @property
    def total_steps(self):
        return int(round(self.total_T / self.grid_dt))


@dataclass(frozen=True)
class WindowReport:
    index: int
    t_start: float
    t_commit: float
    iterations: int
    residuals: tuple
    stop_reason: str
    best_index: int


@dataclass(frozen=True)
class ClosedLoopResult:
    """Closed-loop outcome.

    ``plant`` is the committed plant path on the grid of ``u_committed``;
    ``mean_com`` stitches, window by window, the Monte Carlo expected center
    of mass that AMCSM predicted for the committed cells.  ``failed`` marks
    a run aborted by a window-level error (``error`` holds the message);
    everything committed before the failure is kept.
    """

    u_committed: ControlSignal | None
    plant: Trajectory | None
    mean_com: np.ndarray | None
    window_reports: tuple
    steering_time: float | None
    failed: bool = False
    error: str = ""

    @property
    def n_windows(self):
        return len(self.window_reports)

    def plant_com(self):
        return None if self.plant is None else self.plant.center_of_mass()


class PlantNoise:
    """Brownian increments of the plant, drawn window by window.

    Particle ``i`` owns the Philox stream keyed by ``(seed, i)``, read
    sequentially, so the increments of global step ``s`` do not depend on
    how the horizon is cut into windows.
    """

    def __init__(self, seed, n_particles, dim, dt):
        self.dim = dim
        self.scale = np.sqrt(dt)
        self.gens = [np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=int(seed), spawn_key=(i,))))
                     for i in range(n_particles)]
        self.position = 0

    def draw(self, n_steps):
        out = np.empty((n_steps, len(self.gens), self.dim))
        for i, gen in enumerate(self.gens):
            out[:, i, :] = gen.standard_normal((n_steps, self.dim))
        self.position += n_steps
        return out * self.scale


def stitch_controls(segments):
    """Concatenate abutting control segments into one signal."""
    segments = list(segments)
    if not segments:
        raise ValueError("no segments to stitch")
    first = segments[0]
    dt = first.grid.dt
    t = first.grid.t1
    for seg in segments[1:]:
        g = seg.grid
        if not math.isclose(g.dt, dt, rel_tol=1e-12):
            raise GridMismatch("segments use different time steps")
        if abs(g.t0 - t) > 1e-6 * dt:
            raise GridMismatch(f"segment starting at t={g.t0} does not abut t={t}")
        if seg.values.shape[1:] != first.values.shape[1:]:
            raise GridMismatch("segments have different dog counts or dimensions")
        t = g.t1
    values = np.concatenate([s.values for s in segments], axis=0)
    return ControlSignal(values, TimeGrid(first.grid.t0, dt, values.shape[0]))


def straight_line(start, end, n_steps):
    """``n_steps + 1`` equispaced points from ``start`` to ``end``, both hit exactly."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    frac = np.arange(n_steps + 1)[:, None] / n_steps
    line = start + frac * (end - start)
    line[-1] = end
    return line


def build_reference(state: SystemState, z_des, window: TimeGrid, params: ModelParams,
                    solver_cfg: CoarseOptConfig | None = None, gamma=1e-2):
    """Desired center-of-mass path for one window.

    A straight line from the current center of mass to ``z_des`` is tracked
    by the coarse model (zero reference control); the coarse-optimal
    center-of-mass path then becomes the window's reference.
    """
    z_des = np.asarray(z_des, dtype=float)
    params = params.coarse()
    line = straight_line(state.center_of_mass(), z_des, window.n_steps)
    zero = ControlSignal.zeros(window, params.n_dogs, params.dim)
    provisional = ReferenceData(line, zero, z_des, gamma)
    sol = solve_coarse_ocp(state, provisional, params, solver_cfg)
    return ReferenceData(sol.center_of_mass(), zero, z_des, gamma), sol


def run_receding_horizon(y0: SystemState, z_des, schedule: HorizonSchedule, params_fine: ModelParams,
                         sm_cfg: SpaceMappingConfig | None = None, solver_cfg: CoarseOptConfig | None = None,
                         steering_tol=None, plant_seed=None, gamma=1e-2, max_windows=None):
    """Closed loop over the windows of ``schedule``.

    Without ``steering_tol`` exactly ``schedule.n_windows`` windows run.
    With it, windows keep coming (past ``total_T`` if need be, up to
    ``max_windows``) until ``|com - z_des| < steering_tol`` holds for the
    plant at a commit boundary; every window then commits ``commit_len``.

    Window ``k`` plans with Monte Carlo seed ``sample_seed(sm_cfg.seed, k)``,
    fixed across its AMCSM iterations.  The plant draws from
    ``plant_seed`` (default: ``sm_cfg.seed + 1``).
    """
    sm_cfg = sm_cfg or SpaceMappingConfig()
    solver_cfg = solver_cfg or CoarseOptConfig()
    z_des = np.asarray(z_des, dtype=float)
    plant_seed = sm_cfg.seed + 1 if plant_seed is None else plant_seed
    steering = steering_tol is not None
    if max_windows is None:
        max_windows = schedule.n_windows
    if steering and max_windows < 1:
        raise ValueError("max_windows must be >= 1")
    dt = schedule.grid_dt
    c, w = schedule.commit_steps, schedule.window_steps
    n_windows = max_windows if steering else schedule.n_windows
    noise = PlantNoise(plant_seed, params_fine.n_sheep, params_fine.dim, dt)

    state = y0
    segments, xs, vs, as_, coms, reports = [], [y0.x[None]], [y0.v[None]], [y0.a[None]], [], []
    steering_time = None
    failed, error = False, ""
    for k in range(n_windows):
        start = k * c
        last = not steering and k == n_windows - 1
        keep = w if last else c
        window = TimeGrid(start * dt, dt, w)
        try:
            ref, ref_sol = build_reference(state, z_des, window, params_fine, solver_cfg, gamma)
            # the reference solve's control is a natural warm start for u_c*
            res = amcsm(state, params_fine, ref, replace(sm_cfg, seed=sample_seed(sm_cfg.seed, k)), solver_cfg,
                        u_init=ref_sol.u_opt)
            seg = res.u_f.segment(0, keep)
            path = simulate_sde_increments(state, seg, params_fine, noise.draw(keep))
        except SheepdogError as exc:
            log.warning("window %d failed: %s", k, exc)
            failed, error = True, f"window {k}: {exc}"
            break
        reports.append(WindowReport(k, window.t0, seg.grid.t1, res.iterations, res.residual_history,
                                    res.stop_reason, res.best_index))
        segments.append(seg)
        xs.append(path.x[1:])
        vs.append(path.v[1:])
        as_.append(path.a[1:])
        if not coms:
            coms.append(res.mean_com[:1])
        coms.append(res.mean_com[1:keep + 1])
        state = path.final
        log.info("window %d: t=%.2f, |com - z_des|=%.4f, residuals %s", k, seg.grid.t1,
                 np.linalg.norm(state.center_of_mass() - z_des), np.round(res.residual_history, 4))
        if steering and np.linalg.norm(state.center_of_mass() - z_des) < steering_tol:
            steering_time = seg.grid.t1
            break

    if not segments:
        return ClosedLoopResult(None, None, None, (), None, failed, error)
    u = stitch_controls(segments)
    plant = Trajectory(np.concatenate(xs), np.concatenate(vs), np.concatenate(as_), u.grid)
    return ClosedLoopResult(u, plant, np.concatenate(coms), tuple(reports), steering_time, failed, error)
