"""Obstacle shapes, closest-point virtual agents, perception sets, and risk geometry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EPS_V, PotentialParams, RobotState, vec3


class GeometryError(ValueError):
    """Degenerate geometry (coincident points, zero relative position)."""


class PenetrationError(ValueError):
    """A robot position lies strictly inside an obstacle."""


# ---------------------------------------------------------------------------
# obstacle shapes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", vec3(self.center))
        if not (self.radius > 0):
            raise ValueError("sphere radius must be > 0")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its min/max corners."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", vec3(self.lo))
        object.__setattr__(self, "hi", vec3(self.hi))
        if not np.all(self.lo < self.hi):
            raise ValueError("box min must be strictly below max componentwise")


@dataclass(frozen=True)
class Plane:
    """Infinite plane; the outward normal points toward free space."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", vec3(self.point))
        n = vec3(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        object.__setattr__(self, "normal", n)


StaticObstacle = Sphere | Box | Plane


@dataclass(frozen=True)
class DynamicObstacle:
    p: np.ndarray
    v: np.ndarray
    r_beta: float

    def __post_init__(self):
        object.__setattr__(self, "p", vec3(self.p))
        object.__setattr__(self, "v", vec3(self.v))
        if not (self.r_beta > 0):
            raise ValueError("dynamic obstacle radius must be > 0")


@dataclass(frozen=True)
class BetaAgent:
    """Virtual agent standing in for an obstacle: a surface point (static) or a
    moving ball center (dynamic)."""

    p: np.ndarray
    v: np.ndarray
    r_beta: float
    kind: str  # "static" | "dynamic"

    def __post_init__(self):
        object.__setattr__(self, "p", vec3(self.p))
        object.__setattr__(self, "v", vec3(self.v))
        if self.kind == "static":
            if self.r_beta != 0.0 or np.any(self.v != 0.0):
                raise ValueError("static beta agents have r_beta = 0 and v = 0")
        elif self.kind != "dynamic":
            raise ValueError(f"unknown beta agent kind {self.kind!r}")


# ---------------------------------------------------------------------------
# closest-point projection
# ---------------------------------------------------------------------------


def closest_point(p: np.ndarray, obstacle: StaticObstacle) -> np.ndarray:
    """Closest point on the obstacle surface to p (p assumed outside or on it)."""
    if isinstance(obstacle, Sphere):
        d = p - obstacle.center
        n = float(np.linalg.norm(d))
        if n == 0.0:
            raise GeometryError("point coincides with sphere center")
        return obstacle.center + d * (obstacle.radius / n)
    if isinstance(obstacle, Box):
        return np.clip(p, obstacle.lo, obstacle.hi)
    if isinstance(obstacle, Plane):
        signed = float(np.dot(p - obstacle.point, obstacle.normal))
        return p - signed * obstacle.normal
    raise TypeError(f"unknown obstacle type {type(obstacle)!r}")


def _strictly_inside(p: np.ndarray, obstacle: StaticObstacle) -> bool:
    if isinstance(obstacle, Sphere):
        return float(np.linalg.norm(p - obstacle.center)) < obstacle.radius
    if isinstance(obstacle, Box):
        return bool(np.all(p > obstacle.lo) and np.all(p < obstacle.hi))
    if isinstance(obstacle, Plane):
        return float(np.dot(p - obstacle.point, obstacle.normal)) < 0.0
    raise TypeError(f"unknown obstacle type {type(obstacle)!r}")


def project_beta(p_i: np.ndarray, obstacle: StaticObstacle) -> BetaAgent:
    """Project a robot position onto an obstacle surface, yielding the static
    beta agent (zero radius, zero velocity).

    Raises PenetrationError when p_i lies strictly inside the obstacle.
    """
    p_i = vec3(p_i)
    if _strictly_inside(p_i, obstacle):
        raise PenetrationError(f"position {p_i} lies inside obstacle {obstacle}")
    return BetaAgent(closest_point(p_i, obstacle), np.zeros(3), 0.0, "static")


def surface_distance(p: np.ndarray, obstacle: StaticObstacle) -> float:
    """Distance from p to the obstacle surface (0 if on it, valid only outside)."""
    return float(np.linalg.norm(p - closest_point(p, obstacle)))


def surface_query(p: np.ndarray, obstacle: StaticObstacle) -> tuple[float, np.ndarray]:
    """Signed surface distance (negative inside) and the outward unit direction.

    Well-defined for interior points too, unlike project_beta: boxes snap to
    the nearest face, spheres stay radial, planes use their fixed normal. Used
    when evaluating candidate states that may momentarily predict into an
    obstacle.
    """
    p = vec3(p)
    if isinstance(obstacle, Sphere):
        d = p - obstacle.center
        n = float(np.linalg.norm(d))
        if n < 1e-15:
            return -obstacle.radius, np.array([1.0, 0.0, 0.0])
        return n - obstacle.radius, d / n
    if isinstance(obstacle, Box):
        q = np.clip(p, obstacle.lo, obstacle.hi)
        diff = p - q
        dist = float(np.linalg.norm(diff))
        if dist > 0.0:
            return dist, diff / dist
        # interior (or on the surface): snap to the nearest face
        gap_lo = p - obstacle.lo
        gap_hi = obstacle.hi - p
        k_lo = int(np.argmin(gap_lo))
        k_hi = int(np.argmin(gap_hi))
        out = np.zeros(3)
        if gap_lo[k_lo] <= gap_hi[k_hi]:
            out[k_lo] = -1.0
            return -float(gap_lo[k_lo]), out
        out[k_hi] = 1.0
        return -float(gap_hi[k_hi]), out
    if isinstance(obstacle, Plane):
        signed = float(np.dot(p - obstacle.point, obstacle.normal))
        return signed, obstacle.normal.copy()
    raise TypeError(f"unknown obstacle type {type(obstacle)!r}")


def perceived_indices(
    i: int,
    robots: list[RobotState],
    statics: list[StaticObstacle],
    dynamics: list[DynamicObstacle],
    r_s: float,
) -> tuple[list[int], list[int], list[int]]:
    """Index form of perceived_sets: (neighbor, static-obstacle, dynamic-
    obstacle) indices visible to robot i. Same inclusion rules."""
    p_i = robots[i].p
    neighbors = [
        j
        for j, r in enumerate(robots)
        if j != i and float(np.linalg.norm(r.p - p_i)) <= r_s
    ]
    s_idx = []
    for k, obs in enumerate(statics):
        beta = project_beta(p_i, obs)
        if float(np.linalg.norm(beta.p - p_i)) <= r_s:
            s_idx.append(k)
    d_idx = [
        k
        for k, obs in enumerate(dynamics)
        if float(np.linalg.norm(obs.p - p_i)) <= r_s + obs.r_beta
    ]
    return neighbors, s_idx, d_idx


# ---------------------------------------------------------------------------
# perception
# ---------------------------------------------------------------------------


def perceived_sets(
    i: int,
    robots: list[RobotState],
    statics: list[StaticObstacle],
    dynamics: list[DynamicObstacle],
    r_s: float,
) -> tuple[list[int], list[BetaAgent], list[BetaAgent]]:
    """Everything robot i can see: neighbor indices N_i, static beta agents
    O_s,i (surface point within r_s), dynamic beta agents O_d,i (center within
    r_s + r_beta). All boundaries inclusive.
    """
    p_i = robots[i].p
    neighbors = [
        j
        for j, r in enumerate(robots)
        if j != i and float(np.linalg.norm(r.p - p_i)) <= r_s
    ]
    o_static = []
    for obs in statics:
        beta = project_beta(p_i, obs)
        if float(np.linalg.norm(beta.p - p_i)) <= r_s:
            o_static.append(beta)
    o_dynamic = []
    for obs in dynamics:
        if float(np.linalg.norm(obs.p - p_i)) <= r_s + obs.r_beta:
            o_dynamic.append(BetaAgent(obs.p, obs.v, obs.r_beta, "dynamic"))
    return neighbors, o_static, o_dynamic


def neighbor_graph(robots: list[RobotState], r_s: float) -> np.ndarray:
    """Symmetric boolean adjacency over robot indices (no self-loops)."""
    n = len(robots)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            if float(np.linalg.norm(robots[i].p - robots[j].p)) <= r_s:
                adj[i, j] = adj[j, i] = True
    return adj


# ---------------------------------------------------------------------------
# risk sectors
# ---------------------------------------------------------------------------

SECTOR_I = 1
SECTOR_II = 2
SECTOR_III = 3
SECTOR_IV = 4


@dataclass(frozen=True)
class RiskAssessment:
    """Angular collision-risk classification of one robot-obstacle pair.

    theta is the angle between the closing direction (-p_ib) and the relative
    velocity; r_rho the miss distance; z the miss distance normalized by the
    outer safety radius (1+k_delta)(r_beta+r_c); lam the inner threshold.
    """

    theta: float
    r_rho: float
    z: float
    lam: float
    theta_1: float
    theta_3: float
    sector: int


def assess_risk(
    p_ib: np.ndarray, v_ib: np.ndarray, r_beta: float, params: PotentialParams
) -> RiskAssessment:
    """Classify the collision risk of a robot-obstacle pair.

    p_ib = p_i - p_beta (obstacle-to-robot), v_ib = v_i - v_beta. A pair with
    no relative motion (or one already receding past theta_3) is sector IV: no
    avoidance needed.
    """
    p_ib = np.asarray(p_ib, dtype=np.float64)
    v_ib = np.asarray(v_ib, dtype=np.float64)
    dist = float(np.linalg.norm(p_ib))
    if dist == 0.0:
        raise GeometryError("zero robot-obstacle distance")
    speed = float(np.linalg.norm(v_ib))
    safe = r_beta + params.r_c
    lam = params.lam

    penetrating = dist < safe
    if penetrating:
        # Already inside the safety ball: the arcsin arguments would exceed 1.
        theta_1 = theta_3 = np.pi / 2
    else:
        theta_1 = float(np.arcsin(min(1.0, safe / dist)))
        theta_3 = float(np.arcsin(min(1.0, (1.0 + params.k_delta) * safe / dist)))

    if speed < EPS_V:
        # No relative motion: angle undefined, stored as pi; never a collision course.
        return RiskAssessment(np.pi, dist, dist / ((1.0 + params.k_delta) * safe),
                              lam, theta_1, theta_3, SECTOR_IV)

    cos_t = float(np.dot(-p_ib, v_ib)) / (dist * speed)
    theta = float(np.arccos(np.clip(cos_t, -1.0, 1.0)))
    r_rho = dist * np.sin(theta)
    z = r_rho / ((1.0 + params.k_delta) * safe)

    if penetrating:
        sector = SECTOR_I
    elif theta >= theta_3:
        sector = SECTOR_IV
    elif z < lam:
        sector = SECTOR_I
    elif z < params.delta:
        sector = SECTOR_II  # empty whenever lam >= delta
    else:
        sector = SECTOR_III
    return RiskAssessment(theta, r_rho, z, lam, theta_1, theta_3, sector)
