"""Aggressive Monte Carlo space mapping (AMCSM) with Broyden updates.

The fine model is the stochastic particle system, observed through the Monte
Carlo estimate of its expected center of mass.  The space map ``T(u_f)`` is
the coarse control whose deterministic center of mass best tracks that
estimate (regularised towards the coarse optimum ``u_c*``).  AMCSM drives the
residual ``T(u_f) - u_c*`` to zero by quasi-Newton steps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coarse_opt import CoarseOptConfig, CoarseSolution, _project, solve_coarse_ocp
from .dynamics import monte_carlo_expectation
from .errors import DegenerateStep, SingularBroyden
from .model import ControlSignal, ModelParams, ReferenceData, SystemState

log = logging.getLogger(__name__)

DEGENERATE_STEP = 1e-14


@dataclass(frozen=True)
class BroydenState:
    """Broyden matrix ``B = I + sum_j c_j h_j^T / |h_j|^2`` kept in factored form.

    ``cols`` holds the ``c_j`` and ``rows`` the scaled ``h_j / |h_j|^2``.
    The factored form is exact; ``b`` materialises it for small problems.
    """

    dim: int
    cols: tuple = ()
    rows: tuple = ()
    k: int = 0
    prev_h: np.ndarray | None = None
    step_length: float = 1.0

    @property
    def rank(self):
        return len(self.cols)

    @property
    def b(self):
        out = np.eye(self.dim)
        for c, r in zip(self.cols, self.rows):
            out += np.outer(c, r)
        return out

    def matvec(self, w):
        w = np.asarray(w, dtype=float)
        out = w.copy()
        for c, r in zip(self.cols, self.rows):
            out += c * (r @ w)
        return out

    def solve(self, rhs):
        """Solve ``B x = rhs`` by the Woodbury identity on the low-rank part."""
        rhs = np.asarray(rhs, dtype=float)
        if not self.cols:
            return rhs.copy()
        U = np.column_stack(self.cols)
        V = np.column_stack(self.rows)
        cap = np.eye(self.rank) + V.T @ U
        try:
            inner = np.linalg.solve(cap, V.T @ rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularBroyden("Broyden matrix is singular") from exc
        if np.linalg.cond(cap) > 1e14 or not np.all(np.isfinite(inner)):
            raise SingularBroyden("Broyden matrix is numerically singular")
        return rhs - U @ inner

    def reset(self):
        return BroydenState(self.dim, step_length=self.step_length)


def broyden_update(bs: BroydenState, residual_new, h_prev):
    """Rank-one update ``B += residual_new h_prev^T / |h_prev|^2``."""
    h_prev = np.asarray(h_prev, dtype=float).ravel()
    residual_new = np.asarray(residual_new, dtype=float).ravel()
    hh = float(h_prev @ h_prev)
    if np.sqrt(hh) < DEGENERATE_STEP:
        raise DegenerateStep("Broyden step has (numerically) zero length")
    return BroydenState(bs.dim, bs.cols + (residual_new.copy(),), bs.rows + (h_prev / hh,),
                        bs.k + 1, h_prev.copy(), bs.step_length)


@dataclass(frozen=True)
class SpaceMappingConfig:
    """Stopping rules and Monte Carlo settings of AMCSM.

    Iteration stops once the relative residual drops below ``accept_threshold``
    or ``eps_sm``, once two consecutive residuals improve by less than
    ``rel_gap_stop`` (``None`` disables the test), or after ``max_sm_iters``
    control updates.
    """

    eps_sm: float = 0.3
    max_sm_iters: int = 10
    rel_gap_stop: float | None = 0.005
    accept_threshold: float = 0.3
    n_samples: int = 100
    seed: int = 0
    step_length: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if not self.eps_sm > 0:
            raise ValueError("eps_sm must be positive")
        if self.accept_threshold < 0 or (self.rel_gap_stop is not None and self.rel_gap_stop < 0):
            raise ValueError("thresholds must be nonnegative")
        if self.max_sm_iters < 0 or self.n_samples < 1:
            raise ValueError("max_sm_iters must be >= 0 and n_samples >= 1")
        if not self.step_length > 0:
            raise ValueError("step_length must be positive")


@dataclass(frozen=True)
class SpaceMappingResult:
    """Outcome of one AMCSM run.

    ``u_f`` is the evaluated iterate with the smallest residual;
    ``mean_com_history[k]`` is the fine expected center of mass under iterate
    ``k`` and ``coarse_com`` the coarse center of mass under ``u_c_star``.
    """

    u_f: ControlSignal
    iterations: int
    residual_history: tuple
    u_c_star: ControlSignal
    mean_com_history: tuple = ()
    coarse_com: np.ndarray | None = None
    coarse_solution: CoarseSolution | None = None
    best_index: int = 0
    iterates: tuple = ()
    stop_reason: str = ""

    @property
    def mean_com(self):
        """Fine expected center of mass under the returned control."""
        return self.mean_com_history[self.best_index] if self.mean_com_history else None


def relative_residual(t_of_uf: ControlSignal, u_c_star: ControlSignal):
    num = np.linalg.norm(t_of_uf.values - u_c_star.values)
    den = np.linalg.norm(u_c_star.values)
    # dt weights cancel in the ratio
    return float(num / den) if den > 1e-12 else float(num * np.sqrt(u_c_star.grid.dt))


def evaluate_space_map(u_f: ControlSignal, u_c_star: ControlSignal, y0: SystemState,
                       params_fine: ModelParams, cfg: SpaceMappingConfig,
                       solver_cfg: CoarseOptConfig | None = None, gamma=1e-2, z_des=None):
    """``T(u_f)``: fit a coarse control to the fine expected center of mass.

    Returns ``(T(u_f), mean_com)``.  The fit minimises
    ``int 1/2 |com_c(t) - mean_com(t)|^2 + gamma/2 |u - u_c*|^2`` starting from
    ``u_c*``, so identical models give ``T(u_c*) = u_c*`` exactly.
    """
    stats = monte_carlo_expectation(y0, u_f, params_fine, cfg.n_samples, cfg.seed, workers=cfg.workers)
    z_des = stats.mean_com[-1] if z_des is None else z_des
    ref = ReferenceData(stats.mean_com, u_c_star, z_des, gamma, observable="com")
    sol = solve_coarse_ocp(y0, ref, params_fine.coarse(), solver_cfg, u_init=u_c_star)
    return sol.u_opt, stats.mean_com


SpaceMap = Callable[[ControlSignal], "tuple[ControlSignal, np.ndarray | None]"]


def amcsm(y0: SystemState, params_fine: ModelParams, ref: ReferenceData,
          cfg: SpaceMappingConfig | None = None, solver_cfg: CoarseOptConfig | None = None,
          space_map: SpaceMap | None = None, u_c_star: ControlSignal | None = None,
          coarse_solution: CoarseSolution | None = None, u_init: ControlSignal | None = None):
    """Aggressive Monte Carlo space mapping.

    ``u_c*`` minimises the coarse cost against ``ref`` (unless supplied).
    From ``u_f = u_c*`` the loop evaluates ``T(u_f)``, updates the Broyden
    matrix (from the third evaluation on), solves ``B h = -(T(u_f) - u_c*)``
    and sets ``u_f <- P(u_f + rho h)``.

    ``space_map`` replaces :func:`evaluate_space_map` (test doubles, other
    fine models); it maps a control to ``(T(u_f), mean_com)``.
    """
    cfg = cfg or SpaceMappingConfig()
    solver_cfg = solver_cfg or CoarseOptConfig()
    if u_c_star is None:
        if coarse_solution is None:
            coarse_solution = solve_coarse_ocp(y0, ref, params_fine.coarse(), solver_cfg, u_init)
        u_c_star = coarse_solution.u_opt
    if space_map is None:
        def space_map(u):
            return evaluate_space_map(u, u_c_star, y0, params_fine, cfg, solver_cfg,
                                      ref.gamma, ref.z_des)

    dim = u_c_star.values.size
    shape = u_c_star.values.shape
    u_max = params_fine.u_max
    target = u_c_star.flat()
    bs = BroydenState(dim, step_length=cfg.step_length)
    reset_used = False

    u_f = u_c_star
    residuals, coms, iterates = [], [], []
    f_prev = s_prev = None
    k = 0
    reason = "max_sm_iters"
    while True:
        t_u, com = space_map(u_f)
        f = t_u.flat() - target
        r = relative_residual(t_u, u_c_star)
        residuals.append(r)
        coms.append(None if com is None else np.asarray(com))
        iterates.append(u_f)
        log.info("AMCSM iteration %d: relative residual %.4g", k, r)
        if r < cfg.accept_threshold or r <= cfg.eps_sm:
            reason = "accepted"
            break
        if k > 0 and cfg.rel_gap_stop is not None and residuals[-2] - r < cfg.rel_gap_stop:
            reason = "stalled"
            break
        if k >= cfg.max_sm_iters:
            break
        if k > 1:
            # secant form of the rank-one update; equals the plain update
            # f_k h^T/|h|^2 whenever the previous step was taken unprojected
            try:
                bs = broyden_update(bs, f - f_prev - bs.matvec(s_prev), s_prev)
            except DegenerateStep:
                reason = "degenerate_step"
                break
        try:
            h = bs.solve(-f)
        except SingularBroyden:
            if reset_used:
                raise
            reset_used = True
            bs = bs.reset()
            h = -f
        new_vals = _project(u_f.values + cfg.step_length * h.reshape(shape), u_max)
        s_prev = (new_vals - u_f.values).ravel()
        f_prev = f
        u_f = u_f.with_values(new_vals)
        k += 1

    best = int(np.argmin(residuals))
    return SpaceMappingResult(
        u_f=iterates[best],
        iterations=k,
        residual_history=tuple(residuals),
        u_c_star=u_c_star,
        mean_com_history=tuple(coms),
        coarse_com=None if coarse_solution is None else coarse_solution.center_of_mass(),
        coarse_solution=coarse_solution,
        best_index=best,
        iterates=tuple(iterates),
        stop_reason=reason,
    )
