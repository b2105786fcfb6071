"""Core state types, parameter bundles, and the discrete double-integrator step."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

EPS_NUM = 1e-9
EPS_V = 1e-9


def vec3(x, y=None, z=None) -> np.ndarray:
    """Build a float64 3-vector from components or any length-3 sequence."""
    if y is None:
        a = np.asarray(x, dtype=np.float64)
        if a.shape != (3,):
            raise ValueError(f"expected a 3-vector, got shape {a.shape}")
        return a.copy()
    return np.array([x, y, z], dtype=np.float64)


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite {what}: {a!r}")


@dataclass(frozen=True)
class RobotState:
    """Position/velocity pair of one robot in the inertial frame."""

    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", vec3(self.p))
        object.__setattr__(self, "v", vec3(self.v))
        _check_finite(self.p, "position")
        _check_finite(self.v, "velocity")

    def with_(self, p=None, v=None) -> "RobotState":
        return RobotState(self.p if p is None else p, self.v if v is None else v)


@dataclass(frozen=True)
class DynamicsParams:
    dt: float = 0.05
    horizon: float = 0.15
    v_max: float = 0.3
    u_max: float = 0.4

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError("dt must be > 0")
        if not (self.horizon >= self.dt):
            raise ValueError("horizon must be >= dt")
        if not (self.v_max > 0 and self.u_max > 0):
            raise ValueError("v_max and u_max must be > 0")


@dataclass(frozen=True)
class PotentialParams:
    """Gains and geometric constants of the potential-energy model."""

    k_a: float = 12.0
    r_f: float = 0.421
    k_t: float = 2.0
    k_n: float = 1.6
    k_or: float = 20.0
    k_od: float = 10.0
    k_delta: float = 0.5
    delta: float = 0.3
    k_rho: float = 2.0
    k_rp: float = 5.0
    k_rv: float = 15.0
    r_s: float = 0.4631
    r_c: float = 0.12

    def __post_init__(self):
        positive = (
            "k_a k_or k_od k_delta k_rp k_rv r_f r_s r_c k_n".split()
        )
        for name in positive:
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be > 0")
        if not (0 < self.k_t <= 2):
            raise ValueError("k_t must lie in (0, 2]")
        if not (0 < self.delta < 1):
            raise ValueError("delta must lie in (0, 1)")
        if not (self.k_rho > 1):
            raise ValueError("k_rho must be > 1")
        if not (self.r_s > self.r_f):
            raise ValueError("r_s must exceed r_f")

    @property
    def lam(self) -> float:
        """Inner risk-sector threshold 1/(1+k_delta)."""
        return 1.0 / (1.0 + self.k_delta)

    def effective_r_f(self, obstacle_zone: bool) -> float:
        return self.k_n * self.r_f if obstacle_zone else self.r_f


@dataclass(frozen=True)
class HeuristicParams:
    k_av: float = 40.0
    k_rv2: float = 0.1  # damping gain on v_i - v_r in the goal term
    k_ob: float = 10.0

    def __post_init__(self):
        for name in ("k_av", "k_rv2", "k_ob"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class ControllerParams:
    k_theta: int = 12
    k_phi: int = 12
    n_u: int = 2
    k_u: float = 0.2

    def __post_init__(self):
        if self.k_theta < 1 or self.k_phi < 1:
            raise ValueError("k_theta and k_phi must be >= 1")
        if self.n_u < 1:
            raise ValueError("n_u must be >= 1")
        if not (0 < self.k_u <= 1):
            raise ValueError("k_u must lie in (0, 1]")

    @property
    def d_theta(self) -> float:
        return 2.0 * np.pi / self.k_theta

    @property
    def d_phi(self) -> float:
        return 2.0 * np.pi / self.k_phi


@dataclass(frozen=True)
class ParamBundle:
    """Everything one robot's controller needs, in one immutable value."""

    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    potentials: PotentialParams = field(default_factory=PotentialParams)
    heuristic: HeuristicParams = field(default_factory=HeuristicParams)
    controller: ControllerParams = field(default_factory=ControllerParams)

    def with_controller(self, **kw) -> "ParamBundle":
        return replace(self, controller=replace(self.controller, **kw))

    def with_potentials(self, **kw) -> "ParamBundle":
        return replace(self, potentials=replace(self.potentials, **kw))


def saturate(w: np.ndarray, bound: float) -> np.ndarray:
    """Clamp a vector to the given norm, preserving direction."""
    if not (bound > 0):
        raise ValueError("bound must be > 0")
    w = np.asarray(w, dtype=np.float64)
    n = float(np.linalg.norm(w))
    if n <= bound:
        return w.copy()
    out = w * (bound / n)
    # rounding can leave the norm a hair above the bound; nudge until the
    # stored vector actually satisfies it, so repeated clamps are no-ops
    n = float(np.linalg.norm(out))
    while n > bound:
        out = out * (bound / n)
        n = float(np.linalg.norm(out))
    return out


def clamp_speed(v: np.ndarray, v_max: float) -> np.ndarray:
    """Radially project a velocity onto the speed ball of radius v_max."""
    return saturate(v, v_max)


def step_dynamics(x: RobotState, u: np.ndarray, dt: float, params: DynamicsParams) -> RobotState:
    """Advance one robot by one step of the discrete double integrator.

    The input is saturated to u_max before integration and the resulting
    velocity is clamped to v_max (direction preserved).
    """
    if not (dt > 0):
        raise ValueError("dt must be > 0")
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (3,) or not np.all(np.isfinite(u)):
        raise ValueError(f"invalid control input: {u!r}")
    u = saturate(u, params.u_max)
    p = x.p + x.v * dt + 0.5 * u * dt * dt
    v = clamp_speed(x.v + u * dt, params.v_max)
    return RobotState(p, v)
