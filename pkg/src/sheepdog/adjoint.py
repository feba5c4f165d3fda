"""Adjoint (costate) sweep and reduced gradient of the coarse tracking cost.

The costates ``xi1, xi2, xi3`` (positions, velocities, dogs) solve

    xi1' = l_x + (dW/dx)^T xi2,   xi2' = alpha xi2 - xi1,   xi3' = (dW/da)^T xi2,

backwards from zero terminal data, where ``l_x`` is the derivative of the
tracking integrand.  The L2 gradient of the reduced cost is
``gamma (u - u_bar) - xi3``.  Time stepping is the exact discrete adjoint of
the explicit Euler forward solver, so gradients agree with finite
differences of the discrete cost up to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import Trajectory, evaluate_cost, simulate_ode
from .errors import GridMismatch, NonFiniteState
from .model import ControlSignal, ModelParams, ReferenceData, SystemState, TimeGrid


@dataclass(frozen=True)
class AdjointTrajectory:
    xi1: np.ndarray
    xi2: np.ndarray
    xi3: np.ndarray
    grid: TimeGrid


@dataclass(frozen=True)
class GradientField:
    """An L2 function on the control grid, shape ``(n_steps, M, D)``.

    Used both for gradients and for search directions.
    """

    values: np.ndarray
    grid: TimeGrid

    def dot(self, other):
        return float(self.grid.dt * np.vdot(self.values, _values(other)))

    def norm(self):
        return float(np.sqrt(self.dot(self)))

    def __neg__(self):
        return GradientField(-self.values, self.grid)


def _values(obj):
    return obj.values if hasattr(obj, "values") else np.asarray(obj)


def tracking_source(x_path, ref: ReferenceData, tracking_scale=None):
    """Derivative of the tracking integrand w.r.t. every sheep position."""
    n = x_path.shape[1]
    scale = 1.0 / n if tracking_scale is None else tracking_scale
    if ref.observable == "com":
        dev = x_path.mean(axis=1) - ref.z_bar
        return np.ascontiguousarray(np.repeat(scale * dev[:, None, :], n, axis=1))
    return np.ascontiguousarray(scale * (x_path - ref.z_bar[:, None, :]))


def solve_adjoint(traj: Trajectory, ref: ReferenceData, params: ModelParams, tracking_scale=None):
    """Integrate the costate system backwards along a coarse trajectory.

    ``tracking_scale`` multiplies ``(x - z_bar)`` in the source term; the
    default ``1/N`` is the derivative of the implemented ``1/(2N)`` cost.
    """
    if not traj.grid.same_as(ref.grid):
        raise GridMismatch("trajectory and reference live on different grids")
    src = tracking_source(traj.x, ref, tracking_scale)
    xi1 = np.empty_like(traj.x)
    xi2 = np.empty_like(traj.x)
    xi3 = np.empty_like(traj.a)
    _kernels.adjoint_sweep(traj.x, traj.a, src, traj.grid.dt, params.coefficients(),
                           params.eps_reg, xi1, xi2, xi3)
    if not (np.isfinite(xi1).all() and np.isfinite(xi2).all() and np.isfinite(xi3).all()):
        raise NonFiniteState("adjoint state overflowed")
    return AdjointTrajectory(xi1, xi2, xi3, traj.grid)


def reduced_gradient(u: ControlSignal, ref: ReferenceData, adj: AdjointTrajectory):
    """``gamma (u - u_bar) - xi3`` on every control cell.

    Cell ``n`` = ``[t_n, t_{n+1})`` takes ``xi3`` at ``t_{n+1}``: the control of
    cell ``n`` first moves the dogs at grid point ``n+1``.
    """
    grad = ref.gamma * (u.values - ref.u_bar.values) - adj.xi3[1:]
    return GradientField(grad, u.grid)


def cost_and_gradient(y0: SystemState, u: ControlSignal, ref: ReferenceData, params: ModelParams):
    """Reduced cost, its gradient and the state trajectory in one forward/backward pass."""
    traj = simulate_ode(y0, u, params)
    cost = evaluate_cost(traj.x, u, ref)
    adj = solve_adjoint(traj, ref, params)
    return cost, reduced_gradient(u, ref, adj), traj


def reduced_cost(y0, u, ref, params):
    return evaluate_cost(simulate_ode(y0, u, params).x, u, ref)


def finite_difference_gradient(y0, u: ControlSignal, ref, params, h=1e-6):
    """Central-difference L2 gradient, one pair of solves per control entry.

    Costs ``2 * n_steps * M * D`` forward simulations; meant for tiny
    verification instances.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    base = u.values.ravel()
    grad = np.empty_like(base)
    for idx in range(base.size):
        plus = base.copy()
        minus = base.copy()
        plus[idx] += h
        minus[idx] -= h
        jp = reduced_cost(y0, u.with_values(plus.reshape(u.values.shape)), ref, params)
        jm = reduced_cost(y0, u.with_values(minus.reshape(u.values.shape)), ref, params)
        grad[idx] = (jp - jm) / (2 * h)
    # partial derivative -> L2 Riesz representative
    return GradientField(grad.reshape(u.values.shape) / u.grid.dt, u.grid)
