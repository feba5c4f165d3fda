"""Projected nonlinear conjugate gradient for the deterministic control problem."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .adjoint import GradientField, _values, reduced_gradient, solve_adjoint
from .dynamics import Trajectory, evaluate_cost, simulate_ode
from .errors import LineSearchFailed, MaxItersReached
from .model import ControlSignal, ModelParams, ReferenceData, SystemState

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArmijoConfig:
    """Backtracking parameters.

    ``initial_step=None`` starts the first search at ``1/gamma``, the step
    that solves the control-cost part of the problem exactly.  Later
    searches start one expansion (``1/shrink``) above the last accepted step.
    """

    initial_step: float | None = None
    shrink: float = 0.5
    slope: float = 1e-4
    max_backtracks: int = 40

    def __post_init__(self):
        if not 0 < self.shrink < 1 or not 0 < self.slope < 1:
            raise ValueError("shrink and slope must lie in (0, 1)")
        if self.initial_step is not None and not self.initial_step > 0:
            raise ValueError("initial_step must be positive")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be >= 1")


@dataclass(frozen=True)
class CoarseOptConfig:
    eps_opt: float = 5e-3
    max_iters: int = 500
    armijo: ArmijoConfig = field(default_factory=ArmijoConfig)
    cg_restart_period: int = 10

    def __post_init__(self):
        if not self.eps_opt > 0:
            raise ValueError("eps_opt must be positive")
        if self.max_iters < 1 or self.cg_restart_period < 1:
            raise ValueError("max_iters and cg_restart_period must be >= 1")


@dataclass(frozen=True)
class CoarseSolution:
    u_opt: ControlSignal
    traj: Trajectory
    cost: float
    iterations: int
    converged: bool
    cost_history: tuple = ()
    step_history: tuple = ()
    gradient: GradientField | None = None
    max_speed_history: tuple = ()
    u_max: float = np.inf

    def center_of_mass(self):
        return self.traj.center_of_mass()

    def projected_gradient_norm(self):
        return projected_gradient_norm(self.u_opt, self.gradient, self.u_max)


class LineSearchResult(NamedTuple):
    step: float
    u: ControlSignal
    cost: float
    traj: Trajectory


# vectors within a few ulp of the bound are left alone, which makes the
# projection exactly idempotent (a rescaled vector can land one ulp outside)
_BOUND_SLACK = 1 + 4 * np.finfo(float).eps


def _project(values, u_max):
    speed = np.linalg.norm(values, axis=-1, keepdims=True)
    scale = np.where(speed > u_max * _BOUND_SLACK, u_max / np.where(speed > 0, speed, 1.0), 1.0)
    return values * scale


def project_control(h: ControlSignal, u_max):
    """Radial projection of every dog velocity onto the ball ``|u_m| <= u_max``."""
    if not u_max > 0:
        raise ValueError("u_max must be positive")
    return h.with_values(_project(h.values, u_max))


def projected_gradient_norm(u: ControlSignal, grad: GradientField, u_max):
    """L2 norm of ``u - P(u - grad)``; zero exactly at stationary points."""
    diff = u.values - _project(u.values - grad.values, u_max)
    return float(np.sqrt(u.grid.dt * np.sum(diff * diff)))


def ncg_direction(grad: GradientField, prev_grad, prev_dir, iteration, restart_period=10):
    """Polak-Ribiere(+) conjugate direction with restart and descent safeguard."""
    steepest = -grad
    if prev_grad is None or prev_dir is None or iteration == 0 or iteration % restart_period == 0:
        return steepest
    denom = prev_grad.dot(prev_grad)
    if denom <= 0:
        return steepest
    beta = max(0.0, grad.dot(grad.values - prev_grad.values) / denom)
    d = GradientField(-grad.values + beta * prev_dir.values, grad.grid)
    if d.dot(steepest) <= 0:
        return steepest
    return d


def armijo_line_search(u, direction, ref, y0, params, cfg: CoarseOptConfig, cost_u=None, step0=None):
    """Backtrack ``s = step0 * shrink**k`` until the projected Armijo test holds.

    Accepts ``u(s) = P(u + s d)`` once
    ``J(u(s)) <= J(u) - (slope / s) ||u - u(s)||^2``.
    """
    arm = cfg.armijo
    if cost_u is None:
        cost_u = evaluate_cost(simulate_ode(y0, u, params).x, u, ref)
    s = step0 if step0 is not None else (arm.initial_step or 1.0 / ref.gamma)
    d = _values(direction)
    dt = u.grid.dt
    for _ in range(arm.max_backtracks + 1):
        trial = u.with_values(_project(u.values + s * d, params.u_max))
        traj = simulate_ode(y0, trial, params)
        cost = evaluate_cost(traj.x, trial, ref)
        diff = u.values - trial.values
        if cost <= cost_u - arm.slope / s * dt * np.sum(diff * diff):
            return LineSearchResult(s, trial, cost, traj)
        s *= arm.shrink
    raise LineSearchFailed(f"no Armijo step after {arm.max_backtracks} backtracks")


def solve_coarse_ocp(y0: SystemState, ref: ReferenceData, params: ModelParams,
                     cfg: CoarseOptConfig | None = None, u_init: ControlSignal | None = None):
    """Minimise the deterministic reduced cost over admissible dog velocities.

    Loop: state solve, adjoint solve, gradient, projected Armijo step along a
    PR+ direction; stop when ``||u_{n+1} - u_n||_L2 <= eps_opt``.
    A stalled line search restarts from steepest descent once; a second
    failure ends the run (reported as not converged).
    """
    cfg = cfg or CoarseOptConfig()
    params = params.coarse()
    grid = ref.grid
    if u_init is None:
        u = ControlSignal.zeros(grid, params.n_dogs, params.dim)
    else:
        u = project_control(u_init, params.u_max)
    traj = simulate_ode(y0, u, params)
    cost = evaluate_cost(traj.x, u, ref)
    grad = reduced_gradient(u, ref, solve_adjoint(traj, ref, params))
    costs, steps, speeds = [cost], [], [u.max_speed()]
    prev_grad = prev_dir = None
    step = None
    converged = False
    iterations = 0
    k = 0  # iterations since the last restart
    while iterations < cfg.max_iters:
        direction = ncg_direction(grad, prev_grad, prev_dir, k, cfg.cg_restart_period)
        try:
            ls = armijo_line_search(u, direction, ref, y0, params, cfg, cost, _next_step(step, cfg, ref))
        except LineSearchFailed:
            if k == 0:
                log.debug("line search stalled on steepest descent at iteration %d", iterations)
                break
            k = 0
            prev_grad = prev_dir = None
            continue
        iterations += 1
        diff = ls.u.values - u.values
        change = float(np.sqrt(grid.dt * np.sum(diff * diff)))
        u, cost, traj, step = ls.u, ls.cost, ls.traj, ls.step
        costs.append(cost)
        steps.append(change)
        speeds.append(u.max_speed())
        prev_grad, prev_dir = grad, direction
        grad = reduced_gradient(u, ref, solve_adjoint(traj, ref, params))
        if change <= cfg.eps_opt:
            converged = True
            break
        k += 1
    if not converged:
        warnings.warn(f"coarse solver stopped after {iterations} iterations without meeting "
                      f"eps_opt={cfg.eps_opt}", MaxItersReached, stacklevel=2)
    return CoarseSolution(u, traj, cost, iterations, converged, tuple(costs), tuple(steps),
                          grad, tuple(speeds), params.u_max)


def _next_step(step, cfg, ref):
    if step is None:
        return cfg.armijo.initial_step or 1.0 / ref.gamma
    return step / cfg.armijo.shrink
