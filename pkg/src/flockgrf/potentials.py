"""Potential energies: inter-robot well, obstacle repulsion/direction terms,
goal tracking, clique factors, and the total configuration energy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EPS_V, HeuristicParams, PotentialParams, RobotState, vec3
from .environment import (
    SECTOR_IV,
    BetaAgent,
    DynamicObstacle,
    GeometryError,
    RiskAssessment,
    StaticObstacle,
    assess_risk,
    perceived_sets,
)


@dataclass(frozen=True)
class ReferenceState:
    """Reference position/velocity the flock tracks; v is constant per segment."""

    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", vec3(self.p))
        object.__setattr__(self, "v", vec3(self.v))

    def advanced(self, dt: float) -> "ReferenceState":
        return ReferenceState(self.p + self.v * dt, self.v)


@dataclass(frozen=True)
class EnergyBreakdown:
    psi_ar_total: float
    psi_or_total: float
    psi_od_total: float
    psi_rp: float
    psi_rv: float

    @property
    def total(self) -> float:
        return (self.psi_ar_total + self.psi_or_total + self.psi_od_total
                + self.psi_rp + self.psi_rv)


def angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Angle in [0, pi] between two vectors; 0 when either is (near) zero."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < EPS_V or nb < EPS_V:
        return 0.0
    c = float(np.dot(a, b)) / (na * nb)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


# ---------------------------------------------------------------------------
# inter-robot pair energy
# ---------------------------------------------------------------------------


def psi_ar_dist(d: float, params: PotentialParams, obstacle_zone: bool = False) -> float:
    """Pair energy as a function of separation distance.

    Cosine well with its minimum at r_f (or k_n*r_f in an obstacle zone) up to
    k_t*r_f, extended linearly beyond with the branch-point slope so the energy
    stays continuous.
    """
    if d <= 0.0:
        raise GeometryError("coincident robots")
    r_eff = params.effective_r_f(obstacle_zone)
    knee = params.k_t * r_eff
    if d <= knee:
        return params.k_a * (1.0 + np.cos(np.pi * d / r_eff))
    slope = -(np.pi * params.k_a / r_eff) * np.sin(np.pi * params.k_t)
    return params.k_a * (1.0 + np.cos(np.pi * params.k_t)) + slope * (d - knee)


def psi_ar(x_i: RobotState, x_j: RobotState, params: PotentialParams,
           obstacle_zone: bool = False) -> float:
    return psi_ar_dist(float(np.linalg.norm(x_i.p - x_j.p)), params, obstacle_zone)


# ---------------------------------------------------------------------------
# obstacle repulsion
# ---------------------------------------------------------------------------


def psi_or_dist(d: float, params: PotentialParams) -> float:
    """Obstacle repulsion energy vs distance; zero at and beyond r_f."""
    if d <= 0.0:
        raise GeometryError("zero robot-obstacle distance")
    if d > params.r_f:
        return 0.0
    return params.k_or * (np.exp(1.0 - np.sin(np.pi * d / (2.0 * params.r_f))) - 1.0)


def psi_or(x_i: RobotState, beta: BetaAgent, params: PotentialParams) -> float:
    return psi_or_dist(float(np.linalg.norm(x_i.p - beta.p)), params)


def psi_or_grad(p_ib: np.ndarray, params: PotentialParams) -> np.ndarray:
    """Gradient of psi_or with respect to the robot position (p_ib = p_i - p_beta)."""
    d = float(np.linalg.norm(p_ib))
    if d <= 0.0:
        raise GeometryError("zero robot-obstacle distance")
    if d > params.r_f:
        return np.zeros(3)
    arg = np.pi * d / (2.0 * params.r_f)
    dpsi_dd = -params.k_or * np.exp(1.0 - np.sin(arg)) * np.cos(arg) * (np.pi / (2.0 * params.r_f))
    return dpsi_dd * (p_ib / d)


# ---------------------------------------------------------------------------
# direction energy and its transition weight
# ---------------------------------------------------------------------------


def rho(lam: float, delta: float, z: float, k_rho: float) -> float:
    """Piecewise transition weight on the normalized miss distance z.

    Branches are evaluated in order, so when lam >= delta the plateau branch
    is simply empty and z < lam still yields k_rho.
    """
    if z < lam:
        return k_rho
    if z < delta:
        return 1.0
    if z < 1.0:
        return 0.5 * (1.0 + np.cos(np.pi * (z - delta) / (1.0 - delta)))
    return 0.0


def psi_od(x_i: RobotState, beta: BetaAgent, u_go: np.ndarray,
           risk: RiskAssessment, params: PotentialParams) -> float:
    """Direction energy: penalizes velocity misaligned with the bypass direction.

    Zero in risk sector IV and whenever the velocity or the bypass direction is
    (near) zero, where the angle is undefined.
    """
    if risk.sector == SECTOR_IV:
        return 0.0
    if float(np.linalg.norm(x_i.v)) < EPS_V or float(np.linalg.norm(u_go)) < EPS_V:
        return 0.0
    w = rho(risk.lam, params.delta, risk.z, params.k_rho)
    if w == 0.0:
        return 0.0
    ang = angle_between(x_i.v, u_go)
    return params.k_od * w * (np.exp(ang) - 1.0)


# ---------------------------------------------------------------------------
# goal energies
# ---------------------------------------------------------------------------


def psi_goal(x_i: RobotState, x_r: ReferenceState, params: PotentialParams) -> tuple[float, float]:
    """(position, velocity) tracking energies relative to the reference."""
    d_p = float(np.linalg.norm(x_i.p - x_r.p))
    d_v = float(np.linalg.norm(x_i.v - x_r.v))
    return (params.k_rp * (np.exp(d_p) - 1.0), params.k_rv * (np.exp(d_v) - 1.0))


# ---------------------------------------------------------------------------
# clique factors and total configuration energy
# ---------------------------------------------------------------------------


def obstacle_energy(x_i: RobotState, beta: BetaAgent, params: PotentialParams,
                    hparams: HeuristicParams) -> tuple[float, float]:
    """(psi_or, psi_od) for one robot-obstacle pair, computing the risk and the
    bypass direction internally."""
    # Deferred import: heuristic builds on these potentials, so the avoidance
    # direction is pulled in lazily to keep the module graph acyclic.
    from .heuristic import avoidance_direction

    p_ib = x_i.p - beta.p
    v_ib = x_i.v - beta.v
    risk = assess_risk(p_ib, v_ib, beta.r_beta, params)
    e_or = psi_or(x_i, beta, params)
    u_go = avoidance_direction(p_ib, v_ib, risk, params, hparams)
    e_od = psi_od(x_i, beta, u_go, risk, params)
    return e_or, e_od


def clique_potentials(x_i: RobotState, x_j: RobotState | None = None,
                      betas: tuple[BetaAgent, ...] = (),
                      x_r: ReferenceState | None = None, *,
                      params: PotentialParams,
                      hparams: HeuristicParams | None = None,
                      obstacle_zone: bool = False) -> dict[str, float]:
    """Exponentiated clique factors Psi = exp(-psi) for the cliques robot i is
    part of: the pair factor (when x_j is given), one obstacle factor per beta
    agent, and the goal factor (when x_r is given)."""
    out: dict[str, float] = {}
    if x_j is not None:
        out["Psi_ar"] = float(np.exp(-psi_ar(x_i, x_j, params, obstacle_zone)))
    if betas:
        if hparams is None:
            raise ValueError("obstacle factors need heuristic params for the bypass direction")
        psi_o = 0.0
        for beta in betas:
            e_or, e_od = obstacle_energy(x_i, beta, params, hparams)
            psi_o += e_or + e_od
        out["Psi_o"] = float(np.exp(-psi_o))
    if x_r is not None:
        e_rp, e_rv = psi_goal(x_i, x_r, params)
        out["Psi_r"] = float(np.exp(-(e_rp + e_rv)))
    return out


def configuration_energy(states: list[RobotState],
                         statics: list[StaticObstacle],
                         dynamics: list[DynamicObstacle],
                         x_r: ReferenceState,
                         params: PotentialParams,
                         hparams: HeuristicParams,
                         obstacle_zone_flags: list[bool] | None = None) -> EnergyBreakdown:
    """Negated exponent of the joint field distribution at the given
    configuration: pair energies summed over ordered neighbor pairs (each
    unordered pair twice, as the double sum is written), obstacle energies over
    each robot's perceived beta agents, goal energies per robot."""
    n = len(states)
    flags = obstacle_zone_flags or [False] * n
    e_ar = e_or = e_od = e_rp = e_rv = 0.0
    for i in range(n):
        neighbors, o_static, o_dynamic = perceived_sets(i, states, statics, dynamics, params.r_s)
        for j in neighbors:
            e_ar += psi_ar(states[i], states[j], params, flags[i])
        for beta in o_static + o_dynamic:
            a, b = obstacle_energy(states[i], beta, params, hparams)
            e_or += a
            e_od += b
        a, b = psi_goal(states[i], x_r, params)
        e_rp += a
        e_rv += b
    return EnergyBreakdown(e_ar, e_or, e_od, e_rp, e_rv)
