"""Gradient-based heuristic control solution: cohesion/damping terms, goal
tracking, and the rotation-frame obstacle bypass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import EPS_V, HeuristicParams, PotentialParams, RobotState, vec3
from .environment import (
    SECTOR_IV,
    BetaAgent,
    GeometryError,
    RiskAssessment,
    assess_risk,
)
from .potentials import ReferenceState, psi_or_grad

_CANON = np.eye(3)


@dataclass(frozen=True)
class AvoidanceFrame:
    """Orthonormal triad around a robot-obstacle encounter plus the bypass
    direction v_ob (unit norm; scaling by k_ob happens in the caller)."""

    L1: np.ndarray
    L2: np.ndarray
    L3: np.ndarray
    R_GL: np.ndarray  # local -> global, columns are L1, L2, L3
    R_L: np.ndarray   # rotation by theta_3 about the local third axis
    v_ob: np.ndarray


@dataclass(frozen=True)
class HeuristicSolution:
    u_g0: np.ndarray
    u_g1: np.ndarray
    terms: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def u_g(self) -> np.ndarray:
        return self.u_g0 + self.u_g1


# ---------------------------------------------------------------------------
# obstacle-free terms
# ---------------------------------------------------------------------------


def grad_inter_robot(x_i: RobotState, x_j: RobotState, params: PotentialParams,
                     obstacle_zone: bool = False) -> np.ndarray:
    """u_gar: negative gradient of the pair energy with respect to p_i."""
    p_ij = x_i.p - x_j.p
    d = float(np.linalg.norm(p_ij))
    if d <= 0.0:
        raise GeometryError("coincident robots")
    r_eff = params.effective_r_f(obstacle_zone)
    n_ij = p_ij / d
    if d <= params.k_t * r_eff:
        mag = (np.pi * params.k_a / r_eff) * np.sin(np.pi * d / r_eff)
    else:
        mag = (np.pi * params.k_a / r_eff) * np.sin(np.pi * params.k_t)
    return mag * n_ij


def grad_goal(x_i: RobotState, x_r: ReferenceState, params: PotentialParams) -> np.ndarray:
    """u_grp: negative gradient of the position-tracking energy; 0 at the goal."""
    p_ir = x_i.p - x_r.p
    d = float(np.linalg.norm(p_ir))
    if d < EPS_V:
        return np.zeros(3)
    return -params.k_rp * np.exp(d) * (p_ir / d)


def heuristic_free(x_i: RobotState, neighbors: list[RobotState], x_r: ReferenceState,
                   params: PotentialParams, hparams: HeuristicParams,
                   obstacle_zone: bool = False) -> np.ndarray:
    """u_g0: cohesion + velocity alignment over neighbors, plus goal tracking
    and damping toward the reference velocity."""
    u = grad_goal(x_i, x_r, params) - hparams.k_rv2 * (x_i.v - x_r.v)
    for x_j in neighbors:
        u = u + grad_inter_robot(x_i, x_j, params, obstacle_zone)
        u = u - hparams.k_av * (x_i.v - x_j.v)
    return u


# ---------------------------------------------------------------------------
# obstacle bypass frame
# ---------------------------------------------------------------------------


def _fallback_axis(p_ib: np.ndarray) -> np.ndarray:
    # canonical axis least aligned with p_ib; ties broken in x, y, z order
    align = np.abs(_CANON @ (p_ib / np.linalg.norm(p_ib)))
    return _CANON[int(np.argmin(align))]


def build_avoidance_frame(p_ib: np.ndarray, v_ib: np.ndarray,
                          risk: RiskAssessment,
                          hparams: HeuristicParams) -> AvoidanceFrame:
    """Build the local triad and the bypass direction: L1 points from the
    obstacle toward the robot, and v_ob is L1 rotated by theta_3 about L3
    (staying inside the span of p_ib and v_ib)."""
    p_ib = vec3(p_ib)
    v_ib = vec3(v_ib)
    dist = float(np.linalg.norm(p_ib))
    if dist <= 0.0:
        raise GeometryError("zero robot-obstacle distance")
    L1 = -p_ib / dist
    cross = np.cross(p_ib, v_ib)
    nc = float(np.linalg.norm(cross))
    if nc < EPS_V:
        # p_ib and v_ib are parallel (or v_ib is too small to define a plane):
        # pick a deterministic perpendicular instead; the axis order fixes
        # which side a perfectly head-on encounter gets deflected to
        cross = np.cross(_fallback_axis(p_ib), p_ib)
        nc = float(np.linalg.norm(cross))
    L3 = -cross / nc
    L2 = np.cross(L3, L1)
    R_GL = np.column_stack([L1, L2, L3])
    c, s = np.cos(risk.theta_3), np.sin(risk.theta_3)
    R_L = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    v_ob = R_GL @ (R_L @ np.array([1.0, 0.0, 0.0]))
    return AvoidanceFrame(L1, L2, L3, R_GL, R_L, v_ob)


def avoidance_direction(p_ib: np.ndarray, v_ib: np.ndarray, risk: RiskAssessment,
                        params: PotentialParams, hparams: HeuristicParams) -> np.ndarray:
    """u_go for one robot-obstacle pair: repulsion gradient plus the scaled
    bypass direction when the encounter calls for an active maneuver."""
    u = -psi_or_grad(p_ib, params)
    dist = float(np.linalg.norm(p_ib))
    if risk.sector != SECTOR_IV and dist < params.r_s:
        frame = build_avoidance_frame(p_ib, v_ib, risk, hparams)
        u = u + hparams.k_ob * frame.v_ob
    return u


# ---------------------------------------------------------------------------
# full solution
# ---------------------------------------------------------------------------


def heuristic_full(x_i: RobotState, neighbors: list[RobotState],
                   betas: list[BetaAgent], x_r: ReferenceState,
                   params: PotentialParams, hparams: HeuristicParams,
                   obstacle_zone: bool = False,
                   risks: list[RiskAssessment] | None = None) -> HeuristicSolution:
    """Assemble u_g = u_g0 + u_g1 with a per-term breakdown.

    Pass precomputed risk assessments (aligned with betas) to skip recomputing
    them; otherwise they are assessed here.
    """
    u_gar = np.zeros(3)
    u_gav = np.zeros(3)
    for x_j in neighbors:
        u_gar = u_gar + grad_inter_robot(x_i, x_j, params, obstacle_zone)
        u_gav = u_gav - hparams.k_av * (x_i.v - x_j.v)
    u_grp = grad_goal(x_i, x_r, params)
    u_grv = -hparams.k_rv2 * (x_i.v - x_r.v)
    u_g0 = u_gar + u_gav + u_grp + u_grv

    u_gor = np.zeros(3)
    u_gob = np.zeros(3)
    for k, beta in enumerate(betas):
        p_ib = x_i.p - beta.p
        v_ib = x_i.v - beta.v
        risk = risks[k] if risks is not None else assess_risk(p_ib, v_ib, beta.r_beta, params)
        u_gor = u_gor - psi_or_grad(p_ib, params)
        dist = float(np.linalg.norm(p_ib))
        if risk.sector != SECTOR_IV and dist < params.r_s:
            frame = build_avoidance_frame(p_ib, v_ib, risk, hparams)
            u_gob = u_gob + hparams.k_ob * frame.v_ob
    u_g1 = u_gor + u_gob

    terms = {"u_gar": u_gar, "u_gav": u_gav, "u_grp": u_grp, "u_grv": u_grv,
             "u_gor": u_gor, "u_gob": u_gob}
    return HeuristicSolution(u_g0, u_g1, terms)
