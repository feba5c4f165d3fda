"""Domain types and Morse interaction forces for the sheep/dog particle model.

Sheep positions ``x`` and velocities ``v`` are ``(N, D)`` arrays, dog
positions ``a`` are ``(M, D)``.  The sheep velocity drift is

    -W_i(y) = -(1/N) sum_k G1(x_i - x_k) - sum_m G2(x_i - a_m) - alpha v_i

where ``G_j(z) = grad_z Phi_j(|z|)`` and ``Phi_j`` is a Morse potential.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels

EPS_REG = 1e-12


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PotentialParams:
    """Morse potential ``c_r exp(-r/l_r) - c_a exp(-r/l_a)``."""

    c_r: float
    c_a: float
    l_r: float
    l_a: float

    def __post_init__(self):
        if self.c_r < 0 or self.c_a < 0:
            raise ValueError("potential strengths must be nonnegative")
        if not (self.l_r > 0 and self.l_a > 0):
            raise ValueError("potential ranges l_r, l_a must be positive")

    def as_tuple(self):
        return (float(self.c_r), float(self.c_a), float(self.l_r), float(self.l_a))


# Sheep-sheep and dog-sheep interaction used throughout the herding experiments.
SHEEP_POTENTIAL = PotentialParams(c_r=1.0, c_a=5e-4, l_r=2.0, l_a=1e-2)
DOG_POTENTIAL = PotentialParams(c_r=1e-2, c_a=5e-4, l_r=0.5, l_a=1e-2)
ZERO_POTENTIAL = PotentialParams(c_r=0.0, c_a=0.0, l_r=1.0, l_a=1.0)


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the particle system.

    ``noise == 0`` is the deterministic (coarse) model, ``noise > 0`` the
    stochastic (fine) one.
    """

    n_sheep: int
    n_dogs: int
    dim: int = 2
    friction: float = 0.5
    noise: float = 0.0
    u_max: float = 5e-2
    sheep_potential: PotentialParams = SHEEP_POTENTIAL
    dog_potential: PotentialParams = DOG_POTENTIAL
    eps_reg: float = EPS_REG

    def __post_init__(self):
        if self.n_sheep < 1:
            raise ValueError("n_sheep must be >= 1")
        if self.n_dogs < 0:
            raise ValueError("n_dogs must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.friction < 0 or self.noise < 0:
            raise ValueError("friction and noise must be nonnegative")
        if not self.u_max > 0:
            raise ValueError("u_max must be positive")
        if self.eps_reg < 0:
            raise ValueError("eps_reg must be nonnegative")

    @property
    def is_coarse(self):
        return self.noise == 0

    def coarse(self):
        """The same model with the noise switched off."""
        return replace(self, noise=0.0)

    def with_noise(self, sigma):
        return replace(self, noise=float(sigma))

    def coefficients(self):
        """Flat coefficient vector consumed by the compiled kernels."""
        return np.array(
            self.sheep_potential.as_tuple() + self.dog_potential.as_tuple() + (self.friction,),
            dtype=np.float64,
        )


@dataclass(frozen=True)
class SystemState:
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        x = _frozen(self.x)
        v = _frozen(self.v)
        a = _frozen(self.a)
        if x.ndim != 2 or v.shape != x.shape:
            raise ValueError(f"x and v must be matching (N, D) arrays, got {x.shape}, {v.shape}")
        if a.ndim != 2 or (a.shape[0] > 0 and a.shape[1] != x.shape[1]):
            raise ValueError(f"a must be (M, D) with D={x.shape[1]}, got {a.shape}")
        if a.shape[0] == 0:
            a = _frozen(np.zeros((0, x.shape[1])))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "a", a)

    @property
    def n_sheep(self):
        return self.x.shape[0]

    @property
    def n_dogs(self):
        return self.a.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    def center_of_mass(self):
        return self.x.mean(axis=0)

    def is_finite(self):
        return bool(np.isfinite(self.x).all() and np.isfinite(self.v).all() and np.isfinite(self.a).all())

    def check(self, params: ModelParams):
        """Raise ``ValueError`` unless the shapes agree with ``params`` and all entries are finite."""
        n, m, d = params.n_sheep, params.n_dogs, params.dim
        if self.x.shape != (n, d) or self.a.shape != (m, d):
            raise ValueError(
                f"state shapes x{self.x.shape}, a{self.a.shape} do not match N={n}, M={m}, D={d}"
            )
        if not self.is_finite():
            raise ValueError("state has non-finite entries")
        return self


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0, t0 + dt, ..., t0 + n_steps * dt``."""

    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be an integer >= 1")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def over(cls, duration, dt, t0=0.0):
        """Grid covering ``[t0, t0 + duration]``; duration must be a multiple of dt."""
        n = int(round(duration / dt))
        if n < 1 or not np.isclose(n * dt, duration, rtol=1e-9, atol=1e-12):
            raise ValueError(f"duration {duration} is not a positive multiple of dt={dt}")
        return cls(t0=t0, dt=dt, n_steps=n)

    @property
    def t1(self):
        return self.t0 + self.n_steps * self.dt

    @property
    def duration(self):
        return self.n_steps * self.dt

    def times(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def sub(self, start, stop):
        """Grid of cells ``start..stop-1`` (grid points ``start..stop``)."""
        if not 0 <= start < stop <= self.n_steps:
            raise ValueError(f"invalid sub-grid [{start}, {stop}) of {self.n_steps} cells")
        return TimeGrid(self.t0 + start * self.dt, self.dt, stop - start)

    def same_as(self, other, rtol=1e-9):
        return (
            self.n_steps == other.n_steps
            and np.isclose(self.dt, other.dt, rtol=rtol, atol=0)
            and np.isclose(self.t0, other.t0, rtol=rtol, atol=1e-12)
        )


@dataclass(frozen=True)
class ControlSignal:
    """Dog velocities, piecewise constant on the cells of ``grid``.

    ``values`` has shape ``(n_steps, M, D)``.
    """

    values: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim != 3 or vals.shape[0] != self.grid.n_steps:
            raise ValueError(
                f"control values must be (n_steps={self.grid.n_steps}, M, D), got {vals.shape}"
            )
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid, n_dogs, dim=2):
        return cls(np.zeros((grid.n_steps, n_dogs, dim)), grid)

    @property
    def n_dogs(self):
        return self.values.shape[1]

    def with_values(self, values):
        return ControlSignal(values, self.grid)

    def segment(self, start, stop):
        """Cells ``start..stop-1`` on the matching sub-grid."""
        return ControlSignal(self.values[start:stop], self.grid.sub(start, stop))

    def flat(self):
        return self.values.ravel().copy()

    def l2_norm(self):
        """Continuous L2 norm of the piecewise-constant signal."""
        return float(np.sqrt(self.grid.dt * np.sum(self.values * self.values)))

    def max_speed(self):
        if self.values.size == 0:
            return 0.0
        return float(np.linalg.norm(self.values, axis=-1).max())


@dataclass(frozen=True)
class ReferenceData:
    """Desired trajectory, reference control and weights of the tracking cost.

    ``observable`` selects what is tracked against ``z_bar``: ``"particles"``
    penalises every sheep's distance, ``"com"`` only the center of mass.
    """

    z_bar: np.ndarray
    u_bar: ControlSignal
    z_des: np.ndarray
    gamma: float = 1e-2
    observable: str = "particles"

    def __post_init__(self):
        z_bar = _frozen(self.z_bar)
        grid = self.u_bar.grid
        if z_bar.ndim != 2 or z_bar.shape[0] != grid.n_steps + 1:
            raise ValueError(f"z_bar must be (n_steps+1, D), got {z_bar.shape}")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.observable not in ("particles", "com"):
            raise ValueError(f"unknown observable {self.observable!r}")
        object.__setattr__(self, "z_bar", z_bar)
        object.__setattr__(self, "z_des", _frozen(self.z_des))

    @property
    def grid(self):
        return self.u_bar.grid

    @classmethod
    def constant(cls, point, grid, n_dogs, gamma=1e-2, observable="particles"):
        point = np.asarray(point, dtype=float)
        z_bar = np.tile(point, (grid.n_steps + 1, 1))
        return cls(z_bar, ControlSignal.zeros(grid, n_dogs, point.size), point, gamma, observable)

    def replace(self, **changes):
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# pointwise potential functions
# ---------------------------------------------------------------------------


def potential_value(r, p: PotentialParams):
    """Morse potential at distance ``r >= 0``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distance must be nonnegative")
    val = p.c_r * np.exp(-r / p.l_r) - p.c_a * np.exp(-r / p.l_a)
    return float(val) if val.ndim == 0 else val


def potential_derivative(r, p: PotentialParams):
    """First radial derivative Phi'(r)."""
    r = np.asarray(r, dtype=float)
    return -(p.c_r / p.l_r) * np.exp(-r / p.l_r) + (p.c_a / p.l_a) * np.exp(-r / p.l_a)


def potential_second_derivative(r, p: PotentialParams):
    r = np.asarray(r, dtype=float)
    return (p.c_r / p.l_r**2) * np.exp(-r / p.l_r) - (p.c_a / p.l_a**2) * np.exp(-r / p.l_a)


def interaction_force(z, p: PotentialParams, eps_reg=EPS_REG):
    """Gradient of ``Phi(|z|)`` with respect to ``z``; zero for ``|z| <= eps_reg``."""
    z = np.asarray(z, dtype=float)
    r = np.linalg.norm(z)
    if r <= eps_reg:
        return np.zeros_like(z)
    return potential_derivative(r, p) * z / r


def interaction_jacobian(z, p: PotentialParams, eps_reg=EPS_REG):
    """Jacobian of :func:`interaction_force` (the Hessian of ``Phi(|z|)``)."""
    z = np.asarray(z, dtype=float)
    d = z.size
    r = np.linalg.norm(z)
    if r <= eps_reg:
        return np.zeros((d, d))
    zh = z / r
    outer = np.outer(zh, zh)
    return potential_second_derivative(r, p) * outer + (potential_derivative(r, p) / r) * (np.eye(d) - outer)


def velocity_drift(state: SystemState, params: ModelParams):
    """Sheep acceleration ``-W(y)`` for every sheep, shape ``(N, D)``.

    Self-interaction is excluded.  The dog term carries no ``1/M`` factor.
    """
    state.check(params)
    out = np.empty_like(state.x)
    _kernels.drift(state.x, state.v, state.a, params.coefficients(), params.eps_reg, out)
    return out
