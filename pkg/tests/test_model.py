import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sheepdog.model import (
    DOG_POTENTIAL,
    SHEEP_POTENTIAL,
    ZERO_POTENTIAL,
    ControlSignal,
    ModelParams,
    PotentialParams,
    ReferenceData,
    SystemState,
    TimeGrid,
    interaction_force,
    interaction_jacobian,
    potential_derivative,
    potential_value,
    velocity_drift,
)

finite = st.floats(-5, 5, allow_nan=False)
vec2 = arrays(float, 2, elements=finite)


def brute_drift(x, v, a, params):
    """Naive double loop, written independently of the compiled kernel."""
    s, d = params.sheep_potential, params.dog_potential
    n = len(x)
    out = np.zeros_like(x)
    for i in range(n):
        w = np.zeros(x.shape[1])
        for k in range(n):
            if k == i:
                continue
            z = x[i] - x[k]
            r = math.sqrt(sum(c * c for c in z))
            dphi = -(s.c_r / s.l_r) * math.exp(-r / s.l_r) + (s.c_a / s.l_a) * math.exp(-r / s.l_a)
            w += dphi * z / r / n
        for m in range(len(a)):
            z = x[i] - a[m]
            r = math.sqrt(sum(c * c for c in z))
            dphi = -(d.c_r / d.l_r) * math.exp(-r / d.l_r) + (d.c_a / d.l_a) * math.exp(-r / d.l_a)
            w += dphi * z / r
        out[i] = -(w + params.friction * v[i])
    return out


def test_potential_values():
    p = PotentialParams(2.0, 0.5, 1.0, 3.0)
    assert potential_value(0.0, p) == pytest.approx(1.5)
    assert potential_value(1.0, SHEEP_POTENTIAL) == pytest.approx(0.606531, abs=1e-6)
    assert potential_value(1.0, SHEEP_POTENTIAL) == pytest.approx(math.exp(-0.5) - 5e-4 * math.exp(-100))
    assert abs(potential_value(200.0, SHEEP_POTENTIAL)) < 1e-40


def test_potential_decays_monotonically_in_magnitude():
    r = np.linspace(5, 60, 200)
    vals = np.abs([potential_value(x, SHEEP_POTENTIAL) for x in r])
    assert np.all(np.diff(vals) < 0)


def test_force_examples():
    np.testing.assert_array_equal(interaction_force(np.zeros(2), SHEEP_POTENTIAL), np.zeros(2))
    f = interaction_force(np.array([1.0, 0.0]), SHEEP_POTENTIAL)
    expected = -0.5 * math.exp(-0.5) + 0.05 * math.exp(-100)
    assert f[0] == pytest.approx(-0.303265, abs=1e-6)
    assert f[0] == pytest.approx(expected, rel=1e-14)
    assert f[1] == 0.0


def test_force_is_derivative_of_potential():
    for r in (0.01, 0.3, 1.0, 4.0):
        h = 1e-6
        fd = (potential_value(r + h, DOG_POTENTIAL) - potential_value(r - h, DOG_POTENTIAL)) / (2 * h)
        assert potential_derivative(r, DOG_POTENTIAL) == pytest.approx(fd, rel=1e-6)


@given(vec2)
def test_force_odd(z):
    np.testing.assert_allclose(interaction_force(-z, SHEEP_POTENTIAL), -interaction_force(z, SHEEP_POTENTIAL),
                               rtol=0, atol=1e-15)


@given(vec2, st.floats(0, 2 * np.pi))
def test_force_rotation_equivariant(z, theta):
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    lhs = interaction_force(R @ z, DOG_POTENTIAL)
    rhs = R @ interaction_force(z, DOG_POTENTIAL)
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)


def test_jacobian_at_origin_is_zero():
    np.testing.assert_array_equal(interaction_jacobian(np.zeros(2), SHEEP_POTENTIAL), np.zeros((2, 2)))


def _fd_jacobian(z, p, h=1e-6):
    J = np.zeros((len(z), len(z)))
    for c in range(len(z)):
        e = np.zeros(len(z))
        e[c] = h
        J[:, c] = (interaction_force(z + e, p) - interaction_force(z - e, p)) / (2 * h)
    return J


def test_jacobian_example():
    z = np.array([1.0, 0.0])
    J = interaction_jacobian(z, SHEEP_POTENTIAL)
    fd = _fd_jacobian(z, SHEEP_POTENTIAL)
    assert np.linalg.norm(J - fd) / np.linalg.norm(J) < 1e-6


@given(arrays(float, 2, elements=st.floats(-3, 3)).filter(lambda z: np.linalg.norm(z) > 0.05),
       st.sampled_from([SHEEP_POTENTIAL, DOG_POTENTIAL]))
def test_jacobian_matches_numerical_and_is_symmetric(z, p):
    J = interaction_jacobian(z, p)
    np.testing.assert_array_equal(J, J.T)
    fd = _fd_jacobian(z, p, h=1e-7)
    assert np.linalg.norm(J - fd) <= 1e-5 * np.linalg.norm(J) + 1e-12


def test_drift_single_sheep_at_rest():
    params = ModelParams(1, 0, friction=0.7)
    state = SystemState(np.array([[0.3, -0.2]]), np.zeros((1, 2)), np.zeros((0, 2)))
    np.testing.assert_array_equal(velocity_drift(state, params), np.zeros((1, 2)))


def test_drift_antipodal_dogs_vanish():
    z = np.array([5.0, 5.0])
    p = np.array([0.3, -0.4])
    state = SystemState(z[None], np.zeros((1, 2)), np.stack([z + p, z - p]))
    np.testing.assert_array_equal(velocity_drift(state, ModelParams(1, 2)), np.zeros((1, 2)))


def test_drift_matches_brute_force(rng):
    for n, m in ((3, 1), (3, 2), (7, 4)):
        x = rng.normal(size=(n, 2))
        v = rng.normal(size=(n, 2))
        a = rng.normal(size=(m, 2)) * 2
        params = ModelParams(n, m, friction=0.5)
        got = velocity_drift(SystemState(x, v, a), params)
        # pair-symmetric accumulation differs from the naive order only by rounding
        np.testing.assert_allclose(got, brute_drift(x, v, a, params), rtol=1e-13, atol=1e-15)


def test_drift_zero_without_potentials_and_friction(rng):
    params = ModelParams(5, 2, friction=0.0, sheep_potential=ZERO_POTENTIAL, dog_potential=ZERO_POTENTIAL)
    state = SystemState(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), rng.normal(size=(2, 2)))
    np.testing.assert_array_equal(velocity_drift(state, params), np.zeros((5, 2)))


@given(arrays(float, (6, 2), elements=st.floats(-4, 4)))
def test_sheep_forces_sum_to_zero(x):
    params = ModelParams(6, 0, friction=0.0)
    drift = velocity_drift(SystemState(x, np.zeros_like(x), np.zeros((0, 2))), params)
    scale = np.abs(drift).max() + 1.0
    assert np.abs(drift.sum(axis=0)).max() <= 1e-14 * scale * 6


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(0, 1)
    with pytest.raises(ValueError):
        ModelParams(1, -1)
    with pytest.raises(ValueError):
        PotentialParams(1.0, 1.0, 0.0, 1.0)
    p = ModelParams(3, 2, noise=0.02)
    assert not p.is_coarse and p.coarse().is_coarse and p.coarse().noise == 0


def test_state_checks_shape_and_finiteness():
    params = ModelParams(2, 1)
    with pytest.raises(ValueError):
        SystemState(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((1, 2))).check(params)
    with pytest.raises(ValueError):
        SystemState(np.array([[np.nan, 0.0], [0, 0]]), np.zeros((2, 2)), np.zeros((1, 2))).check(params)


def test_time_grid():
    g = TimeGrid.over(2.0, 0.01)
    assert g.n_steps == 200 and g.t1 == pytest.approx(2.0)
    assert g.times()[-1] == pytest.approx(2.0)
    s = g.sub(50, 120)
    assert s.n_steps == 70 and s.t0 == pytest.approx(0.5)
    with pytest.raises(ValueError):
        TimeGrid.over(0.015, 0.01)
    with pytest.raises(ValueError):
        TimeGrid(0.0, -0.01, 3)


def test_control_and_reference_shapes():
    g = TimeGrid(0.0, 0.1, 4)
    u = ControlSignal.zeros(g, 2)
    assert u.values.shape == (4, 2, 2) and u.l2_norm() == 0.0
    with pytest.raises(ValueError):
        ControlSignal(np.zeros((3, 2, 2)), g)
    with pytest.raises(ValueError):
        ReferenceData(np.zeros((4, 2)), u, np.zeros(2))
    with pytest.raises(ValueError):
        ReferenceData(np.zeros((5, 2)), u, np.zeros(2), gamma=0.0)
    assert not u.values.flags.writeable
