"""Forward simulation of the coarse (ODE) and fine (SDE) particle models.

All noise is derived from integer seeds through Philox streams keyed by
``(seed, sample)`` and ``(sample seed, particle)``, so every Brownian
increment is a fixed function of (seed, sample, particle, step) and Monte
Carlo estimates do not depend on evaluation order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import GridMismatch, NonFiniteState
from .model import ControlSignal, ModelParams, ReferenceData, SystemState, TimeGrid

_NO_NOISE = np.zeros((1, 1, 1))


@dataclass(frozen=True)
class Trajectory:
    """States on the grid points of ``grid``; arrays have a leading time axis."""

    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    grid: TimeGrid

    def __len__(self):
        return self.x.shape[0]

    def state(self, i):
        return SystemState(self.x[i], self.v[i], self.a[i])

    @property
    def states(self):
        return [self.state(i) for i in range(len(self))]

    @property
    def initial(self):
        return self.state(0)

    @property
    def final(self):
        return self.state(-1)

    def center_of_mass(self):
        return self.x.mean(axis=1)


@dataclass(frozen=True)
class EnsembleStats:
    """Monte Carlo sample means.  ``mean_com`` is the expected center of mass."""

    mean_x: np.ndarray
    mean_com: np.ndarray
    n_samples: int
    seed: int
    grid: TimeGrid


def sample_seed(seed, sample):
    """64-bit seed of Monte Carlo sample ``sample`` under master ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(sample),))
    return int(ss.generate_state(1, np.uint64)[0])


def brownian_increments(seed, n_steps, n_particles, dim, dt):
    """Normal(0, dt) increments of shape ``(n_steps, n_particles, dim)``.

    Particle ``i`` draws from its own Philox stream keyed by ``(seed, i)``;
    step ``s`` is the ``s``-th draw of that stream, so a longer horizon
    extends rather than reshuffles the noise.
    """
    out = np.empty((n_steps, n_particles, dim))
    scale = np.sqrt(dt)
    for i in range(n_particles):
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(i,))
        gen = np.random.Generator(np.random.Philox(ss))
        out[:, i, :] = gen.standard_normal((n_steps, dim))
    out *= scale
    return out


def _check_inputs(y0: SystemState, u: ControlSignal, params: ModelParams):
    y0.check(params)
    if u.values.shape[1:] != (params.n_dogs, params.dim):
        raise ValueError(f"control shape {u.values.shape} does not match M={params.n_dogs}, D={params.dim}")


def _first_bad_step(*arrays):
    bad = np.zeros(arrays[0].shape[0], dtype=bool)
    for arr in arrays:
        bad |= ~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
    return int(np.argmax(bad)) if bad.any() else None


def _run(y0, u, params, sigma, noise, sample=None):
    n = u.grid.n_steps
    X = np.empty((n + 1,) + y0.x.shape)
    V = np.empty_like(X)
    A = np.empty((n + 1,) + y0.a.shape)
    use_noise = noise is not None and sigma != 0
    _kernels.euler_path(
        y0.x, y0.v, y0.a, np.ascontiguousarray(u.values), u.grid.dt, params.coefficients(),
        params.eps_reg, float(sigma), noise if use_noise else _NO_NOISE.repeat(n, axis=0),
        use_noise, X, V, A,
    )
    bad = _first_bad_step(X, V, A)
    if bad is not None:
        where = f" in sample {sample}" if sample is not None else ""
        raise NonFiniteState(f"state became non-finite at step {bad}{where}", step=bad, sample=sample)
    return Trajectory(X, V, A, u.grid)


def step_euler(state: SystemState, u_cell, dt, params: ModelParams):
    """One explicit Euler step of the deterministic system (noise ignored)."""
    return step_euler_maruyama(state, u_cell, dt, params.coarse(), None)


def step_euler_maruyama(state: SystemState, u_cell, dt, params: ModelParams, noise_increments):
    """One Euler-Maruyama step; ``noise_increments`` are Normal(0, dt) draws of shape (N, D)."""
    state.check(params)
    u_cell = np.ascontiguousarray(u_cell, dtype=float).reshape(params.n_dogs, params.dim)
    xo, vo, ao = np.empty_like(state.x), np.empty_like(state.v), np.empty_like(state.a)
    sigma = params.noise
    use_noise = noise_increments is not None and sigma != 0
    noise = np.asarray(noise_increments, dtype=float) if use_noise else _NO_NOISE[0]
    _kernels.euler_step(state.x, state.v, state.a, u_cell, float(dt), params.coefficients(),
                        params.eps_reg, float(sigma), noise, use_noise, xo, vo, ao,
                        np.empty_like(state.x))
    return SystemState(xo, vo, ao)


def simulate_ode(y0: SystemState, u: ControlSignal, params: ModelParams):
    """Deterministic trajectory under control ``u`` (``params.noise`` is ignored)."""
    _check_inputs(y0, u, params)
    return _run(y0, u, params, 0.0, None)


def simulate_sde(y0: SystemState, u: ControlSignal, params: ModelParams, seed, sample=None):
    """One Euler-Maruyama sample path driven by the noise streams of ``seed``."""
    _check_inputs(y0, u, params)
    if params.noise == 0:
        return _run(y0, u, params, 0.0, None, sample)
    g = u.grid
    noise = brownian_increments(seed, g.n_steps, params.n_sheep, params.dim, g.dt)
    return _run(y0, u, params, params.noise, noise, sample)


def simulate_sde_increments(y0: SystemState, u: ControlSignal, params: ModelParams, increments):
    """Euler-Maruyama path driven by given Normal(0, dt) increments ``(n_steps, N, D)``."""
    _check_inputs(y0, u, params)
    increments = np.ascontiguousarray(increments, dtype=float)
    expected = (u.grid.n_steps, params.n_sheep, params.dim)
    if increments.shape != expected:
        raise ValueError(f"increments must have shape {expected}, got {increments.shape}")
    if params.noise == 0:
        return _run(y0, u, params, 0.0, None)
    return _run(y0, u, params, params.noise, increments)


def monte_carlo_expectation(y0, u, params, n_samples, seed, workers=1, chunk=16, order=None):
    """Sample-mean sheep paths and expected center of mass over ``n_samples`` paths.

    Sample ``s`` uses ``sample_seed(seed, s)``.  Paths are summed in sample
    index order whatever ``order`` they are simulated in (or however many
    ``workers`` threads run them), so the result is bitwise reproducible.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    _check_inputs(y0, u, params)
    g = u.grid
    if params.noise == 0:
        x = simulate_ode(y0, u, params).x
        mean_x = x.copy()
        return EnsembleStats(mean_x, mean_x.mean(axis=1), n_samples, int(seed), g)

    def one(s):
        return simulate_sde(y0, u, params, sample_seed(seed, s), sample=s).x

    indices = list(range(n_samples)) if order is None else [int(s) for s in order]
    if sorted(indices) != list(range(n_samples)):
        raise ValueError("order must be a permutation of range(n_samples)")
    total = np.zeros((g.n_steps + 1, params.n_sheep, params.dim))
    pending = {}
    next_s = 0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for start in range(0, n_samples, chunk):
            batch = indices[start:start + chunk]
            pending.update(zip(batch, pool.map(one, batch) if pool else map(one, batch)))
            # reduce strictly in sample-index order, whatever the schedule
            while next_s in pending:
                total += pending.pop(next_s)
                next_s += 1
    finally:
        if pool:
            pool.shutdown()
    mean_x = total / n_samples
    return EnsembleStats(mean_x, mean_x.mean(axis=1), n_samples, int(seed), g)


def evaluate_cost(x_path, u: ControlSignal, ref: ReferenceData):
    """Tracking-plus-control cost with left-rectangle quadrature.

    ``x_path`` is ``(n_steps+1, N, D)`` sheep positions (deterministic, or
    Monte Carlo means).  With ``ref.observable == "com"`` only the center of
    mass is tracked: ``(1/2)|mean_k x_k - z_bar|^2``.
    """
    x_path = np.asarray(x_path, dtype=float)
    g = u.grid
    if x_path.shape[0] != g.n_steps + 1 or not g.same_as(ref.grid):
        raise GridMismatch("state path, control and reference must share one grid")
    dt = g.dt
    xs = x_path[:-1]
    zb = ref.z_bar[:-1]
    if ref.observable == "com":
        dev = xs.mean(axis=1) - zb
        tracking = 0.5 * np.sum(dev * dev)
    else:
        dev = xs - zb[:, None, :]
        tracking = np.sum(dev * dev) / (2 * x_path.shape[1])
    du = u.values - ref.u_bar.values
    control = 0.5 * ref.gamma * np.sum(du * du)
    return float(dt * (tracking + control))
