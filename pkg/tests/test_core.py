"""States, parameter containers, saturation, and the double-integrator step."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flockgrf import (
    DynamicsParams,
    ParamBundle,
    PotentialParams,
    RobotState,
    saturate,
    step_dynamics,
    vec3,
)
from flockgrf.core import ControllerParams, HeuristicParams, clamp_speed

# ---------- oracles ----------


def exact_step(p, v, u, dt):
    """Closed-form double-integrator step, written out independently."""
    p2 = np.array([p[k] + v[k] * dt + 0.5 * u[k] * dt * dt for k in range(3)])
    v2 = np.array([v[k] + u[k] * dt for k in range(3)])
    return p2, v2


finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)
vec = st.tuples(finite, finite, finite).map(np.array)


# ---------- vec3 / RobotState ----------


def test_vec3_copies_and_casts():
    src = np.array([1, 2, 3], dtype=np.int32)
    out = vec3(src)
    assert out.dtype == np.float64
    out_from_list = vec3([1.5, 2.5, 3.5])
    assert out_from_list.shape == (3,)
    base = np.array([1.0, 2.0, 3.0])
    copy = vec3(base)
    base[0] = 99.0
    assert copy[0] == 1.0


def test_vec3_rejects_bad_shapes():
    with pytest.raises(ValueError):
        vec3([1.0, 2.0])
    with pytest.raises(ValueError):
        vec3(np.zeros((2, 3)))


def test_robot_state_rejects_non_finite():
    with pytest.raises(ValueError):
        RobotState(np.array([np.nan, 0, 0]), np.zeros(3))
    with pytest.raises(ValueError):
        RobotState(np.zeros(3), np.array([np.inf, 0, 0]))


# ---------- parameter validation ----------


def test_potential_params_validation():
    with pytest.raises(ValueError):
        PotentialParams(r_s=0.3, r_f=0.421)  # perception must exceed spacing
    with pytest.raises(ValueError):
        PotentialParams(k_rho=1.0)
    with pytest.raises(ValueError):
        PotentialParams(k_t=0.0)
    with pytest.raises(ValueError):
        PotentialParams(k_t=2.5)
    with pytest.raises(ValueError):
        PotentialParams(delta=0.0)
    with pytest.raises(ValueError):
        PotentialParams(delta=1.0)


def test_controller_params_validation():
    with pytest.raises(ValueError):
        ControllerParams(k_u=0.0)
    with pytest.raises(ValueError):
        ControllerParams(k_u=1.5)
    ControllerParams(k_u=1.0)  # inclusive upper end


def test_dynamics_params_validation():
    with pytest.raises(ValueError):
        DynamicsParams(horizon=0.01, dt=0.05)  # lookahead below one tick
    DynamicsParams(horizon=0.05, dt=0.05)


def test_effective_spacing_switch():
    p = PotentialParams()
    assert p.effective_r_f(False) == p.r_f
    assert p.effective_r_f(True) == pytest.approx(p.k_n * p.r_f, rel=0, abs=0)


def test_lam_is_inverse_one_plus_k_delta():
    p = PotentialParams(k_delta=0.5)
    assert p.lam == pytest.approx(1.0 / 1.5, abs=1e-15)
    p2 = PotentialParams(k_delta=2.0)
    assert p2.lam == pytest.approx(1.0 / 3.0, abs=1e-15)


def test_default_gain_set():
    # the published base configuration the library ships with
    p = PotentialParams()
    assert (p.k_a, p.r_f, p.k_t, p.k_n) == (12.0, 0.421, 2.0, 1.6)
    assert (p.k_or, p.k_od, p.k_delta, p.delta, p.k_rho) == (20.0, 10.0, 0.5, 0.3, 2.0)
    assert (p.k_rp, p.k_rv, p.r_s, p.r_c) == (5.0, 15.0, 0.4631, 0.12)
    h = HeuristicParams()
    assert (h.k_av, h.k_rv2, h.k_ob) == (40.0, 0.1, 10.0)
    c = ControllerParams()
    assert (c.k_theta, c.k_phi, c.n_u, c.k_u) == (12, 12, 2, 0.2)
    d = DynamicsParams()
    assert (d.dt, d.horizon, d.v_max, d.u_max) == (0.05, 0.15, 0.3, 0.4)


def test_bundle_with_overrides():
    b = ParamBundle()
    b2 = b.with_controller(k_u=1.0)
    assert b2.controller.k_u == 1.0
    assert b.controller.k_u == 0.2  # original untouched
    b3 = b.with_potentials(k_a=99.0)
    assert b3.potentials.k_a == 99.0
    assert b3.potentials.r_f == b.potentials.r_f


# ---------- saturation / clamping ----------


@given(vec, st.floats(min_value=1e-6, max_value=5.0))
def test_saturate_bounds_norm(w, b):
    out = saturate(w, b)
    assert float(np.linalg.norm(out)) <= b * (1.0 + 1e-12)


@given(vec, st.floats(min_value=1e-6, max_value=5.0))
def test_saturate_idempotent(w, b):
    once = saturate(w, b)
    twice = saturate(once, b)
    assert np.array_equal(once, twice)


@given(vec, st.floats(min_value=1e-6, max_value=5.0))
def test_saturate_preserves_direction(w, b):
    out = saturate(w, b)
    n = float(np.linalg.norm(w))
    if n > 1e-9:
        cos = float(np.dot(out, w)) / (n * max(float(np.linalg.norm(out)), 1e-300))
        assert cos > 1.0 - 1e-9


def test_saturate_returns_copy_below_bound():
    w = np.array([0.1, 0.0, 0.0])
    out = saturate(w, 1.0)
    out[0] = 9.0
    assert w[0] == 0.1


def test_clamp_speed_preserves_direction():
    v = np.array([3.0, 4.0, 0.0])  # norm 5
    out = clamp_speed(v, 1.0)
    assert np.allclose(out, np.array([0.6, 0.8, 0.0]), atol=1e-15)
    under = clamp_speed(np.array([0.1, 0.0, 0.0]), 1.0)
    assert np.array_equal(under, np.array([0.1, 0.0, 0.0]))


# ---------- double-integrator step ----------


@settings(max_examples=200)
@given(vec, vec, vec, st.floats(min_value=1e-3, max_value=1.0))
def test_step_matches_closed_form(p, v, u, dt):
    params = DynamicsParams(dt=dt, horizon=dt, v_max=1e9, u_max=1e9)
    x2 = step_dynamics(RobotState(p, v), u, dt, params)
    p_ref, v_ref = exact_step(p, v, u, dt)
    assert np.allclose(x2.p, p_ref, rtol=1e-12, atol=1e-12)
    assert np.allclose(x2.v, v_ref, rtol=1e-12, atol=1e-12)


@given(vec, vec, vec)
def test_two_half_steps_compose(p, v, u):
    dt = 0.05
    params = DynamicsParams(dt=dt, horizon=dt, v_max=1e9, u_max=1e9)
    full = step_dynamics(RobotState(p, v), u, dt, params)
    half = step_dynamics(step_dynamics(RobotState(p, v), u, dt / 2, params),
                         u, dt / 2, params)
    assert np.allclose(half.v, full.v, rtol=1e-15, atol=1e-15)
    assert np.allclose(half.p, full.p, rtol=1e-12, atol=1e-12)


def test_two_half_steps_compose_exactly_on_dyadic_inputs():
    # with a power-of-two step every product is exact, so the algebraic
    # identity v + u*dt/2 + u*dt/2 = v + u*dt survives floating point bitwise
    dt = 0.0625
    params = DynamicsParams(dt=dt, horizon=dt, v_max=1e9, u_max=1e9)
    p, v, u = np.array([1.0, -2.0, 0.5]), np.array([1.0, 3.0, -4.0]), np.array([2.0, -1.0, 8.0])
    full = step_dynamics(RobotState(p, v), u, dt, params)
    half = step_dynamics(step_dynamics(RobotState(p, v), u, dt / 2, params),
                         u, dt / 2, params)
    assert np.array_equal(half.v, full.v)


def test_step_saturates_input():
    params = DynamicsParams()
    big_u = np.array([10.0, 0.0, 0.0])
    x2 = step_dynamics(RobotState(np.zeros(3), np.zeros(3)), big_u, params.dt, params)
    # applied acceleration is clipped to u_max before integrating
    assert x2.v[0] == pytest.approx(params.u_max * params.dt, rel=1e-12)


def test_step_clamps_speed():
    params = DynamicsParams()
    fast = np.array([params.v_max, 0.0, 0.0])
    x2 = step_dynamics(RobotState(np.zeros(3), fast),
                       np.array([params.u_max, 0.0, 0.0]), params.dt, params)
    assert float(np.linalg.norm(x2.v)) <= params.v_max + 1e-12


def test_step_rejects_bad_dt_and_input():
    params = DynamicsParams()
    x = RobotState(np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        step_dynamics(x, np.zeros(3), 0.0, params)
    with pytest.raises(ValueError):
        step_dynamics(x, np.array([np.nan, 0, 0]), 0.05, params)
