"""Biased control discretization, state prediction, distributed mean-field
belief iteration, and MAP control selection for one robot."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import _kernels
from .core import (
    EPS_V,
    ControllerParams,
    DynamicsParams,
    ParamBundle,
    RobotState,
    step_dynamics,
    vec3,
)
from .environment import (
    BetaAgent,
    Box,
    DynamicObstacle,
    Plane,
    Sphere,
    StaticObstacle,
    surface_query,
)
from .heuristic import heuristic_full
from .potentials import ReferenceState, obstacle_energy, psi_goal

_DEDUP_TOL = 1e-9  # chordal tolerance for duplicate grid directions


# ---------------------------------------------------------------------------
# candidate generation
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _direction_grid(k_theta: int, k_phi: int) -> np.ndarray:
    """Deduplicated unit directions e(k1*dtheta, k2*dphi) in (k1, k2) order.

    The spherical grid double-covers the sphere (poles and antipodal phi
    rows), so duplicates are dropped keeping the first occurrence.
    """
    d_theta = 2.0 * np.pi / k_theta
    d_phi = 2.0 * np.pi / k_phi
    kept: list[np.ndarray] = []
    for k1 in range(k_theta):
        for k2 in range(k_phi):
            th = k1 * d_theta
            ph = k2 * d_phi
            e = np.array([np.cos(ph) * np.cos(th), np.cos(ph) * np.sin(th), np.sin(ph)])
            if all(float(np.linalg.norm(e - f)) > _DEDUP_TOL for f in kept):
                kept.append(e)
    out = np.array(kept)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CandidateSet:
    """Discretized inputs for one agent with their predicted states."""

    u: np.ndarray  # (n, 3) candidate inputs; zero input is the last row
    p: np.ndarray  # (n, 3) predicted positions at t_k + H
    v: np.ndarray  # (n, 3) predicted velocities at t_k + H
    k_u: float
    n_directions: int  # deduplicated grid directions available
    n_in_cone: int     # directions that survived the cone filter
    fallback: bool = False

    def __len__(self) -> int:
        return int(self.u.shape[0])

    def state(self, m: int) -> RobotState:
        return RobotState(self.p[m], self.v[m])

    def items(self) -> list[tuple[np.ndarray, RobotState]]:
        return [(self.u[m], self.state(m)) for m in range(len(self))]


def predict(x: RobotState, u: np.ndarray, H: float, params: DynamicsParams) -> RobotState:
    """Single-shot state prediction over the horizon; identical to one
    dynamics step of length H."""
    return step_dynamics(x, u, H, params)


def build_candidate_set(x: RobotState, u_g: np.ndarray | None,
                        cparams: ControllerParams,
                        dparams: DynamicsParams) -> CandidateSet:
    """Magnitude ladder x direction grid, cone-filtered around u_g.

    The cone keeps directions within k_u*pi of u_g and is disabled when u_g is
    zero (angle undefined) or k_u >= 1 (full sphere). If no direction survives,
    the grid direction nearest to u_g is used instead. The zero input is always
    appended last, and every candidate is paired with its predicted state.
    """
    dirs = _direction_grid(cparams.k_theta, cparams.k_phi)
    n_dirs = dirs.shape[0]
    g = vec3(u_g) if u_g is not None else np.zeros(3)
    ng = float(np.linalg.norm(g))
    fallback = False
    if cparams.k_u >= 1.0 or ng < EPS_V:
        kept = dirs
    else:
        cos_ang = dirs @ (g / ng)
        ang = np.arccos(np.clip(cos_ang, -1.0, 1.0))
        mask = ang <= cparams.k_u * np.pi
        if mask.any():
            kept = dirs[mask]
        else:
            fallback = True
            kept = dirs[int(np.argmax(cos_ang))][None, :]

    mags = dparams.u_max * np.arange(1, cparams.n_u + 1) / cparams.n_u
    blocks = [m * kept for m in mags]
    blocks.append(np.zeros((1, 3)))
    us = np.vstack(blocks)

    H = dparams.horizon
    p = x.p + x.v * H + 0.5 * us * H * H
    v_raw = x.v + us * H
    vn = np.linalg.norm(v_raw, axis=1)
    scale = np.where(vn > dparams.v_max, dparams.v_max / np.maximum(vn, 1e-300), 1.0)
    v = v_raw * scale[:, None]
    return CandidateSet(us, p, v, cparams.k_u, n_dirs, kept.shape[0], fallback)


# ---------------------------------------------------------------------------
# local inference problem
# ---------------------------------------------------------------------------


@dataclass
class LocalProblem:
    """Precomputed clique energies for one robot's local field.

    singles[a][m]: obstacle + goal energy of agent a's candidate m.
    edges/pairs: pair energies over coupled agent pairs (local indices, a < b).
    """

    singles: list[np.ndarray]
    edges: np.ndarray              # (E, 2) int64, local indices, a < b
    pairs: list[np.ndarray]        # aligned with edges, shape (n_a, n_b)
    cand: list[CandidateSet] | None = None
    agent_ids: tuple[int, ...] | None = None
    ego: int | None = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        for e, (a, b) in enumerate(self.edges):
            expect = (len(self.singles[a]), len(self.singles[b]))
            if self.pairs[e].shape != expect:
                raise ValueError(f"pair table {e} has shape {self.pairs[e].shape}, "
                                 f"expected {expect}")

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.singles)

    def packed(self):
        """Padded-array form consumed by the compiled iteration."""
        counts = self.counts
        A = len(counts)
        M = max(counts) if counts else 0
        n_cands = np.array(counts, dtype=np.int64)
        singles = np.zeros((A, M))
        for a, s in enumerate(self.singles):
            singles[a, : len(s)] = s
        E = self.edges.shape[0]
        pairs = np.zeros((E, M, M))
        for e, (a, b) in enumerate(self.edges):
            pa, pb = self.pairs[e].shape
            pairs[e, :pa, :pb] = self.pairs[e]
        return n_cands, singles, self.edges, pairs


def full_coupling_edges(n_agents: int) -> np.ndarray:
    """Every unordered agent pair, as used by the local field."""
    return np.array([(a, b) for a in range(n_agents) for b in range(a + 1, n_agents)],
                    dtype=np.int64).reshape(-1, 2)


def encode_statics(statics: list[StaticObstacle]) -> np.ndarray:
    """Fixed-width obstacle rows for the compiled energy kernel."""
    rows = np.zeros((len(statics), 7))
    for k, obs in enumerate(statics):
        if isinstance(obs, Sphere):
            rows[k, 0] = 0.0
            rows[k, 1:4] = obs.center
            rows[k, 4] = obs.radius
        elif isinstance(obs, Box):
            rows[k, 0] = 1.0
            rows[k, 1:4] = obs.lo
            rows[k, 4:7] = obs.hi
        elif isinstance(obs, Plane):
            rows[k, 0] = 2.0
            rows[k, 1:4] = obs.point
            rows[k, 4:7] = obs.normal
        else:
            raise TypeError(f"unknown obstacle type {type(obs)!r}")
    return rows


def pair_table_np(p_a: np.ndarray, p_b: np.ndarray, params, obstacle_zone: bool = False) -> np.ndarray:
    """Reference pair-energy table (vectorized, no compiled code)."""
    d = np.linalg.norm(p_a[:, None, :] - p_b[None, :, :], axis=2)
    r_eff = params.effective_r_f(obstacle_zone)
    knee = params.k_t * r_eff
    near = params.k_a * (1.0 + np.cos(np.pi * d / r_eff))
    slope = -(np.pi * params.k_a / r_eff) * np.sin(np.pi * params.k_t)
    far = params.k_a * (1.0 + np.cos(np.pi * params.k_t)) + slope * (d - knee)
    return np.where(d <= knee, near, far)


def single_table_np(cand: CandidateSet, statics: list[StaticObstacle],
                    dyn_betas: list[BetaAgent], x_r: ReferenceState,
                    params, hparams) -> np.ndarray:
    """Reference per-candidate obstacle + goal energies (no compiled code).

    statics are re-projected per candidate; dyn_betas and x_r must already be
    propagated to the prediction instant.
    """
    out = np.zeros(len(cand))
    for m in range(len(cand)):
        x_m = cand.state(m)
        e = 0.0
        for obs in statics:
            sd, n_out = surface_query(x_m.p, obs)
            d_eff = max(sd, 1e-9)
            beta = BetaAgent(x_m.p - d_eff * n_out, np.zeros(3), 0.0, "static")
            a, b = obstacle_energy(x_m, beta, params, hparams)
            e += a + b
        for beta in dyn_betas:
            a, b = obstacle_energy(x_m, beta, params, hparams)
            e += a + b
        rp, rv = psi_goal(x_m, x_r, params)
        out[m] = e + rp + rv
    return out


# ---------------------------------------------------------------------------
# belief iteration
# ---------------------------------------------------------------------------


@dataclass
class BeliefTable:
    """Per-agent candidate beliefs plus iteration diagnostics."""

    q: list[np.ndarray]
    sweeps: int = 0
    max_change: float = np.inf
    underflow: bool = False
    converged: bool = False

    @classmethod
    def uniform(cls, counts) -> "BeliefTable":
        return cls([np.full(n, 1.0 / n) for n in counts])

    def copy(self) -> "BeliefTable":
        return BeliefTable([qa.copy() for qa in self.q], self.sweeps,
                           self.max_change, self.underflow, self.converged)


def mean_field_sweep(beliefs: BeliefTable, problem: LocalProblem) -> BeliefTable:
    """One full pass updating every agent in ascending index order, each update
    seeing the freshest beliefs of the agents already updated this sweep."""
    q = [qa.copy() for qa in beliefs.q]
    underflow = beliefs.underflow
    max_change = 0.0
    for a in range(len(q)):
        logits = -problem.singles[a].astype(float)
        for e in range(problem.edges.shape[0]):
            s, t = int(problem.edges[e, 0]), int(problem.edges[e, 1])
            if s == a:
                logits = logits - problem.pairs[e] @ q[t]
            elif t == a:
                logits = logits - problem.pairs[e].T @ q[s]
        mx = float(np.max(logits))
        if not np.isfinite(mx):
            qa = np.full(len(logits), 1.0 / len(logits))
            underflow = True
        else:
            w = np.exp(logits - mx)
            qa = w / w.sum()
        max_change = max(max_change, float(np.max(np.abs(qa - q[a]))))
        q[a] = qa
    return BeliefTable(q, beliefs.sweeps + 1, max_change, underflow)


def mean_field_converge(problem: LocalProblem, initial: BeliefTable | None = None,
                        tol: float = 1e-9, max_sweeps: int = 500,
                        use_kernel: bool = True) -> BeliefTable:
    """Sweep to a fixed point (max per-entry change < tol) or the sweep budget."""
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    beliefs = (initial or BeliefTable.uniform(problem.counts)).copy()
    if use_kernel:
        n_cands, singles, edges, pairs = problem.packed()
        A, M = singles.shape
        qpad = np.zeros((A, M))
        for a, qa in enumerate(beliefs.q):
            qpad[a, : len(qa)] = qa
        sweeps, max_change, uf = _kernels.gs_converge(
            qpad, n_cands, singles, edges, pairs, tol, max_sweeps)
        beliefs = BeliefTable(
            [qpad[a, : n].copy() for a, n in enumerate(problem.counts)],
            beliefs.sweeps + int(sweeps), float(max_change),
            beliefs.underflow or bool(uf))
    else:
        for _ in range(max_sweeps):
            beliefs = mean_field_sweep(beliefs, problem)
            if beliefs.max_change < tol:
                break
    beliefs.converged = beliefs.max_change < tol
    if not beliefs.converged:
        warnings.warn(f"belief iteration hit the sweep budget ({max_sweeps}) "
                      f"with max change {beliefs.max_change:.3e}", RuntimeWarning)
    return beliefs


def free_energy(beliefs: BeliefTable, problem: LocalProblem) -> float:
    """Expected log-factor sum plus total belief entropy. Non-decreasing under
    sweeps, which is the convergence argument for the iteration."""
    f = 0.0
    for a, qa in enumerate(beliefs.q):
        f -= float(qa @ problem.singles[a])
    for e in range(problem.edges.shape[0]):
        s, t = int(problem.edges[e, 0]), int(problem.edges[e, 1])
        f -= float(beliefs.q[s] @ problem.pairs[e] @ beliefs.q[t])
    for qa in beliefs.q:
        nz = qa[qa > 0.0]
        f -= float(np.sum(nz * np.log(nz)))
    return f


def exact_posterior(problem: LocalProblem, max_configs: int = 1_000_000) -> np.ndarray:
    """Exhaustive joint posterior over all candidate combinations (with the
    explicit normalizer). Only for small diagnostic instances."""
    counts = problem.counts
    total = int(np.prod(counts)) if counts else 0
    if total > max_configs:
        raise ValueError(f"{total} joint configurations exceed the "
                         f"{max_configs} enumeration limit")
    energy = np.zeros(counts)
    for a, s in enumerate(problem.singles):
        shape = [1] * len(counts)
        shape[a] = counts[a]
        energy = energy + s.reshape(shape)
    for e in range(problem.edges.shape[0]):
        s_i, t_i = int(problem.edges[e, 0]), int(problem.edges[e, 1])
        shape = [1] * len(counts)
        shape[s_i] = counts[s_i]
        shape[t_i] = counts[t_i]
        energy = energy + problem.pairs[e].reshape(shape)
    mn = float(energy.min())
    w = np.exp(-(energy - mn))
    return w / w.sum()


# ---------------------------------------------------------------------------
# full control step
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorldView:
    """Immutable world snapshot handed to a robot's control step. Other-group
    robots enter through `dynamics`; `obstacle_zone` is the ego robot's
    widened-spacing flag."""

    robots: tuple[RobotState, ...]
    statics: tuple[StaticObstacle, ...]
    dynamics: tuple[DynamicObstacle, ...]
    x_r: ReferenceState
    obstacle_zone: bool = False


@dataclass(frozen=True)
class ControlDecision:
    u: np.ndarray
    x_pred: RobotState
    posterior: float
    index: int
    q: np.ndarray
    sweeps: int
    converged: bool
    underflow: bool
    candidate_counts: tuple[int, ...]
    agent_ids: tuple[int, ...]
    u_g: np.ndarray
    t_wall: float


@lru_cache(maxsize=64)
def _pvec_cached(params, hparams) -> np.ndarray:
    out = _kernels.pack_pvec(params, hparams)
    out.setflags(write=False)
    return out


def _visible(p_h: np.ndarray, statics: list[StaticObstacle],
             dynamics: list[DynamicObstacle], r_s: float):
    """Obstacles within sensing range of a position; statics keep their raw
    shape (they get re-projected per candidate later)."""
    s_near = [obs for obs in statics if surface_query(p_h, obs)[0] <= r_s]
    d_near = [d for d in dynamics
              if float(np.linalg.norm(d.p - p_h)) <= r_s + d.r_beta]
    return s_near, d_near


def _current_betas(x_h: RobotState, s_near: list[StaticObstacle],
                   d_near: list[DynamicObstacle]) -> list[BetaAgent]:
    betas = []
    for obs in s_near:
        sd, n_out = surface_query(x_h.p, obs)
        d_eff = max(sd, 1e-9)
        betas.append(BetaAgent(x_h.p - d_eff * n_out, np.zeros(3), 0.0, "static"))
    for d in d_near:
        betas.append(BetaAgent(d.p, d.v, d.r_beta, "dynamic"))
    return betas


def compute_control(i: int, view: WorldView, bundle: ParamBundle,
                    method: str = "heuristic", use_kernel: bool = True,
                    tol: float = 1e-9, max_sweeps: int = 500,
                    statics_enc: np.ndarray | None = None,
                    arrays: tuple | None = None) -> ControlDecision:
    """One full control step for robot i from its own viewpoint.

    Builds the heuristic solution and candidate set for every agent it can
    see (plus itself), predicts each candidate over the horizon, iterates the
    local beliefs to a fixed point, and returns the input whose predicted
    state carries the largest belief mass. Reads nothing outside sensing
    range, so per-robot calls are independent and may run concurrently.

    statics_enc, when given, must be encode_statics(view.statics), and arrays
    must be (robots_p, robots_v, dyn_p, dyn_v, dyn_r) rows aligned with
    view.robots / view.dynamics; a caller stepping many robots against one
    snapshot can share both instead of rebuilding them per decision.
    """
    if method not in ("heuristic", "nonheuristic"):
        raise ValueError(f"unknown method {method!r}")
    t0 = time.perf_counter()
    params = bundle.potentials
    hparams = bundle.heuristic
    dparams = bundle.dynamics
    cparams = bundle.controller if method == "heuristic" \
        else replace(bundle.controller, k_u=1.0)

    x_i = view.robots[i]
    H = dparams.horizon
    pvec = _pvec_cached(params, hparams).copy()
    r_eff = params.effective_r_f(view.obstacle_zone)

    if use_kernel:
        if statics_enc is None:
            statics_enc = encode_statics(list(view.statics))
        if arrays is not None:
            robots_p, robots_v, dyn_p, dyn_v, dyn_r = arrays
            (lid, ego, states_p, states_v, nbr_mask, smask,
             dmask) = _kernels.build_masks_local(
                i, robots_p, robots_v, statics_enc, dyn_p, dyn_r, params.r_s)
            ego = int(ego)
            local_ids = [int(j) for j in lid]
        else:
            local_ids = sorted([i] + [
                j for j, r in enumerate(view.robots)
                if j != i and float(np.linalg.norm(r.p - x_i.p)) <= params.r_s
            ])
            ego = local_ids.index(i)
            A = len(local_ids)
            states_p = np.array([view.robots[h].p for h in local_ids]).reshape(A, 3)
            states_v = np.array([view.robots[h].v for h in local_ids]).reshape(A, 3)
            dyn_p = np.array([d.p for d in view.dynamics]).reshape(-1, 3)
            dyn_v = np.array([d.v for d in view.dynamics]).reshape(-1, 3)
            dyn_r = np.array([d.r_beta for d in view.dynamics])
            nbr_mask, smask, dmask = _kernels.build_masks(
                ego, states_p, statics_enc, dyn_p, dyn_r, params.r_s)
        if method == "heuristic":
            ug = _kernels.heuristic_ug(
                states_p, states_v, nbr_mask, statics_enc, smask,
                dyn_p, dyn_v, dyn_r, dmask, view.x_r.p, view.x_r.v, pvec,
                params.k_a, r_eff, params.k_t, hparams.k_av, hparams.k_rv2)
        else:
            ug = np.zeros((states_p.shape[0], 3))
        dirs = np.asarray(_direction_grid(cparams.k_theta, cparams.k_phi))
        (q, cand_u, cand_p, cand_v, n_cands, _n_cone, _fb, sweeps, max_change,
         uf) = _kernels.local_infer(
            states_p, states_v, ug, dirs, cparams.n_u, dparams.u_max,
            cparams.k_u, H, dparams.v_max, statics_enc, smask,
            dyn_p, dyn_v, dyn_r, dmask, view.x_r.p, view.x_r.v, pvec,
            params.k_a, r_eff, params.k_t, tol, max_sweeps)
        converged = bool(max_change < tol)
        if not converged:
            warnings.warn(f"belief iteration hit the sweep budget ({max_sweeps}) "
                          f"with max change {max_change:.3e}", RuntimeWarning)
        q_i = q[ego, : int(n_cands[ego])].copy()
        m_star = int(np.argmax(q_i))
        return ControlDecision(
            u=cand_u[ego, m_star].copy(),
            x_pred=RobotState(cand_p[ego, m_star].copy(),
                              cand_v[ego, m_star].copy()),
            posterior=float(q_i[m_star]),
            index=m_star,
            q=q_i,
            sweeps=int(sweeps),
            converged=converged,
            underflow=bool(uf),
            candidate_counts=tuple(int(n) for n in n_cands),
            agent_ids=tuple(local_ids),
            u_g=ug[ego].copy(),
            t_wall=time.perf_counter() - t0,
        )

    local_ids = sorted([i] + [
        j for j, r in enumerate(view.robots)
        if j != i and float(np.linalg.norm(r.p - x_i.p)) <= params.r_s
    ])
    ego = local_ids.index(i)
    statics_i, dynamics_i = _visible(x_i.p, list(view.statics), list(view.dynamics),
                                     params.r_s)
    x_r_H = view.x_r.advanced(H)
    cands: list[CandidateSet] = []
    singles: list[np.ndarray] = []
    u_g_ego = np.zeros(3)
    for h in local_ids:
        x_h = view.robots[h]
        s_near, d_near = _visible(x_h.p, statics_i, dynamics_i, params.r_s)
        if method == "heuristic":
            nbrs_h = [view.robots[j] for j in local_ids
                      if j != h and float(np.linalg.norm(view.robots[j].p - x_h.p)) <= params.r_s]
            sol = heuristic_full(x_h, nbrs_h, _current_betas(x_h, s_near, d_near),
                                 view.x_r, params, hparams, view.obstacle_zone)
            u_gh = sol.u_g
        else:
            u_gh = np.zeros(3)
        if h == i:
            u_g_ego = u_gh
        cand = build_candidate_set(x_h, u_gh, cparams, dparams)
        cands.append(cand)
        dyn_betas = [BetaAgent(d.p + H * d.v, d.v, d.r_beta, "dynamic")
                     for d in d_near]
        singles.append(single_table_np(cand, s_near, dyn_betas, x_r_H,
                                       params, hparams))

    edges = full_coupling_edges(len(local_ids))
    pairs = [pair_table_np(cands[a].p, cands[b].p, params, view.obstacle_zone)
             for a, b in edges]
    problem = LocalProblem(singles, edges, pairs, cands, tuple(local_ids), ego)

    beliefs = mean_field_converge(problem, tol=tol, max_sweeps=max_sweeps,
                                  use_kernel=False)
    q_i = beliefs.q[ego]
    m_star = int(np.argmax(q_i))
    cand_i = cands[ego]
    return ControlDecision(
        u=cand_i.u[m_star].copy(),
        x_pred=cand_i.state(m_star),
        posterior=float(q_i[m_star]),
        index=m_star,
        q=q_i.copy(),
        sweeps=beliefs.sweeps,
        converged=beliefs.converged,
        underflow=beliefs.underflow,
        candidate_counts=tuple(len(c) for c in cands),
        agent_ids=tuple(local_ids),
        u_g=u_g_ego,
        t_wall=time.perf_counter() - t0,
    )


def belief_trace_line(tick: int, robot: int, d: ControlDecision) -> str:
    """One structured text line describing a control decision, for debugging
    the MAP selection."""
    top = np.argsort(d.q)[::-1][:3]
    tops = " ".join(f"{int(m)}:{d.q[m]:.4f}" for m in top)
    u = d.u
    return (f"tick={tick} robot={robot} agents={list(d.agent_ids)} "
            f"counts={list(d.candidate_counts)} sweeps={d.sweeps} "
            f"converged={int(d.converged)} underflow={int(d.underflow)} "
            f"chosen={d.index} mass={d.posterior:.6f} "
            f"u=({u[0]:.6f},{u[1]:.6f},{u[2]:.6f}) top=[{tops}]")
