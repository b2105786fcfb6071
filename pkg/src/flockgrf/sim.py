"""Multi-group episode driver: scenario description, synchronous world
stepping, trajectory recording, safety monitoring, and the metric suite."""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from .core import (
    ControllerParams,
    DynamicsParams,
    HeuristicParams,
    ParamBundle,
    PotentialParams,
    RobotState,
    saturate,
    step_dynamics,
    vec3,
)
from .environment import (
    Box,
    DynamicObstacle,
    Plane,
    Sphere,
    StaticObstacle,
    surface_query,
)
from .heuristic import heuristic_full
from .potentials import ReferenceState
from .controller import (
    WorldView,
    _current_betas,
    _visible,
    belief_trace_line,
    compute_control,
    encode_statics,
)

CSV_HEADER = "t,robot,group,px,py,pz,vx,vy,vz,ux,uy,uz,tcal_s"
CSV_FORMAT = "trajectory-v1"

METHODS = ("heuristic", "nonheuristic", "gradient-only")


class ScenarioError(ValueError):
    """A scenario file or description that cannot be used."""


class RecordError(ValueError):
    """A trajectory file that cannot be read back."""


# ---------------------------------------------------------------------------
# reference trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Piecewise-linear reference: straight segments between waypoints, so the
    reference velocity is constant on each segment. Beyond the last waypoint
    the reference parks (zero velocity)."""

    waypoints: np.ndarray  # (W, 3)
    times: np.ndarray      # (W,) seconds, strictly increasing, starts at 0

    def __post_init__(self):
        w = np.asarray(self.waypoints, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.times, dtype=np.float64).reshape(-1)
        if w.shape[0] != t.shape[0] or w.shape[0] < 1:
            raise ScenarioError("waypoints and times must align, with at least one point")
        if t[0] != 0.0:
            raise ScenarioError("reference times must start at 0")
        if np.any(np.diff(t) <= 0.0):
            raise ScenarioError("reference times must be strictly increasing")
        object.__setattr__(self, "waypoints", w)
        object.__setattr__(self, "times", t)

    @classmethod
    def from_speed(cls, waypoints, speed: float) -> "ReferenceTrajectory":
        """Times from a constant travel speed along the polyline."""
        w = np.asarray(waypoints, dtype=np.float64).reshape(-1, 3)
        if w.shape[0] == 1:
            return cls(w, np.zeros(1))
        if not (speed > 0):
            raise ScenarioError("speed must be positive")
        seg = np.linalg.norm(np.diff(w, axis=0), axis=1)
        if np.any(seg <= 0.0):
            raise ScenarioError("repeated waypoints produce a zero-length segment")
        return cls(w, np.concatenate([[0.0], np.cumsum(seg / speed)]))

    def state(self, t: float) -> ReferenceState:
        w, ts = self.waypoints, self.times
        t = max(float(t), 0.0)
        if w.shape[0] == 1 or t >= ts[-1]:
            return ReferenceState(w[-1], np.zeros(3))
        k = int(np.searchsorted(ts, t, side="right")) - 1
        v = (w[k + 1] - w[k]) / (ts[k + 1] - ts[k])
        return ReferenceState(w[k] + (t - ts[k]) * v, v)


# ---------------------------------------------------------------------------
# scenario description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupSpec:
    """One flock: initial robot states, its reference, and its parameters."""

    states: tuple[RobotState, ...]
    reference: ReferenceTrajectory
    bundle: ParamBundle

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))


@dataclass(frozen=True)
class Scenario:
    name: str
    groups: tuple[GroupSpec, ...]
    statics: tuple[StaticObstacle, ...]
    duration: float
    r_beta: float = 0.12
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "statics", tuple(self.statics))

    @property
    def n_robots(self) -> int:
        return sum(len(g.states) for g in self.groups)

    def flat_states(self) -> tuple[list[RobotState], np.ndarray]:
        """All robots in group order plus the group id of each."""
        states: list[RobotState] = []
        gids: list[int] = []
        for gi, g in enumerate(self.groups):
            states.extend(g.states)
            gids.extend([gi] * len(g.states))
        return states, np.array(gids, dtype=np.int64)


def validate_scenario(s: Scenario) -> None:
    """Reject scenarios that violate the start invariants: positive duration,
    one timestep across groups, robots pairwise separated by more than twice
    the body radius, and every robot clear of every static obstacle."""
    if not (s.duration > 0):
        raise ScenarioError("duration must be positive")
    if not s.groups or any(len(g.states) == 0 for g in s.groups):
        raise ScenarioError("every scenario needs at least one robot per group")
    dts = {g.bundle.dynamics.dt for g in s.groups}
    if len(dts) != 1:
        raise ScenarioError(f"groups disagree on the timestep: {sorted(dts)}")
    states, gids = s.flat_states()
    r_cs = np.array([s.groups[g].bundle.potentials.r_c for g in gids])
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            d = float(np.linalg.norm(states[i].p - states[j].p))
            bar = 2.0 * max(r_cs[i], r_cs[j])
            if d <= bar:
                raise ScenarioError(
                    f"robots {i} and {j} start {d:.4f} m apart (need > {bar:.4f})")
        for k, obs in enumerate(s.statics):
            sd, _ = surface_query(states[i].p, obs)
            if sd <= r_cs[i]:
                raise ScenarioError(
                    f"robot {i} starts {sd:.4f} m from obstacle {k} "
                    f"(need > {r_cs[i]:.4f})")


# ---------------------------------------------------------------------------
# scenario (de)serialization
# ---------------------------------------------------------------------------


def _vec_list(a) -> list[float]:
    return [float(x) for x in np.asarray(a).reshape(-1)]


def obstacle_to_dict(obs: StaticObstacle) -> dict:
    if isinstance(obs, Sphere):
        return {"type": "sphere", "center": _vec_list(obs.center),
                "radius": float(obs.radius)}
    if isinstance(obs, Box):
        return {"type": "box", "lo": _vec_list(obs.lo), "hi": _vec_list(obs.hi)}
    if isinstance(obs, Plane):
        return {"type": "plane", "point": _vec_list(obs.point),
                "normal": _vec_list(obs.normal)}
    raise ScenarioError(f"unknown obstacle type {type(obs)!r}")


def obstacle_from_dict(d: dict) -> StaticObstacle:
    try:
        kind = d["type"]
        if kind == "sphere":
            return Sphere(vec3(d["center"]), float(d["radius"]))
        if kind == "box":
            return Box(vec3(d["lo"]), vec3(d["hi"]))
        if kind == "plane":
            return Plane(vec3(d["point"]), vec3(d["normal"]))
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError(f"bad obstacle entry {d!r}: {e}") from e
    raise ScenarioError(f"unknown obstacle type {kind!r}")


_BUNDLE_PARTS = {
    "dynamics": DynamicsParams,
    "potentials": PotentialParams,
    "heuristic": HeuristicParams,
    "controller": ControllerParams,
}


def bundle_to_dict(b: ParamBundle) -> dict:
    out: dict = {}
    for part, cls in _BUNDLE_PARTS.items():
        sub = getattr(b, part)
        out[part] = {f.name: (int(v) if isinstance(v := getattr(sub, f.name), (int, np.integer)) else float(v))
                     for f in fields(cls)}
    return out


def bundle_from_dict(d: dict) -> ParamBundle:
    kw = {}
    for part, cls in _BUNDLE_PARTS.items():
        sub = dict(d.get(part, {}))
        known = {f.name for f in fields(cls)}
        unknown = set(sub) - known
        if unknown:
            raise ScenarioError(f"unknown {part} parameter(s): {sorted(unknown)}")
        try:
            kw[part] = cls(**sub)
        except (TypeError, ValueError) as e:
            raise ScenarioError(f"bad {part} parameters: {e}") from e
    return ParamBundle(**kw)


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "format": "scenario-v1",
        "name": s.name,
        "seed": int(s.seed),
        "duration": float(s.duration),
        "r_beta": float(s.r_beta),
        "statics": [obstacle_to_dict(o) for o in s.statics],
        "groups": [
            {
                "robots": [{"p": _vec_list(x.p), "v": _vec_list(x.v)} for x in g.states],
                "reference": {"waypoints": [_vec_list(w) for w in g.reference.waypoints],
                              "times": _vec_list(g.reference.times)},
                "params": bundle_to_dict(g.bundle),
            }
            for g in s.groups
        ],
    }


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioError(f"expected an object at the top level, got {type(d).__name__}")
    fmt = d.get("format")
    if fmt != "scenario-v1":
        raise ScenarioError(f"unsupported scenario format {fmt!r} (expected 'scenario-v1')")
    try:
        groups = []
        for gi, g in enumerate(d["groups"]):
            states = tuple(RobotState(vec3(r["p"]), vec3(r["v"])) for r in g["robots"])
            ref = ReferenceTrajectory(np.array([vec3(w) for w in g["reference"]["waypoints"]]),
                                      np.asarray(g["reference"]["times"], dtype=np.float64))
            groups.append(GroupSpec(states, ref, bundle_from_dict(g.get("params", {}))))
        scenario = Scenario(
            name=str(d.get("name", "")),
            groups=tuple(groups),
            statics=tuple(obstacle_from_dict(o) for o in d.get("statics", [])),
            duration=float(d["duration"]),
            r_beta=float(d.get("r_beta", 0.12)),
            seed=int(d.get("seed", 0)),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError(f"malformed scenario: {e}") from e
    validate_scenario(scenario)
    return scenario


# ---------------------------------------------------------------------------
# trajectory record
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    """Tick-major, robot-minor log of one episode. Wall times live only in
    tcal; everything else is a pure function of the scenario and method."""

    dt: float
    n_robots: int
    t: np.ndarray       # (K,)
    robot: np.ndarray   # (K,) int
    group: np.ndarray   # (K,) int
    p: np.ndarray       # (K, 3)
    v: np.ndarray       # (K, 3)
    u: np.ndarray       # (K, 3)
    tcal: np.ndarray    # (K,) seconds
    n_cand: np.ndarray  # (K,) int, ego candidate count (0 when not applicable)
    sweeps: np.ndarray  # (K,) int

    @property
    def n_ticks(self) -> int:
        return 0 if self.n_robots == 0 else self.t.shape[0] // self.n_robots

    def tick_view(self, field: str) -> np.ndarray:
        """Reshape a per-row array to (n_ticks, n_robots, ...)."""
        a = getattr(self, field)
        return a.reshape((self.n_ticks, self.n_robots) + a.shape[1:])

    def to_csv(self, path, strip_timing: bool = False) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(CSV_HEADER + "\n")
            for k in range(self.t.shape[0]):
                tc = 0.0 if strip_timing else float(self.tcal[k])
                cells = [repr(float(self.t[k])), str(int(self.robot[k])),
                         str(int(self.group[k]))]
                cells += [repr(float(x)) for x in self.p[k]]
                cells += [repr(float(x)) for x in self.v[k]]
                cells += [repr(float(x)) for x in self.u[k]]
                cells.append(repr(tc))
                fh.write(",".join(cells) + "\n")

    @classmethod
    def from_csv(cls, path) -> "TrajectoryRecord":
        with open(path) as fh:
            header = fh.readline().rstrip("\n")
            if header != CSV_HEADER:
                raise RecordError(f"unexpected trajectory header {header!r}")
            rows = []
            for ln, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                cells = line.split(",")
                if len(cells) != 13:
                    raise RecordError(f"line {ln}: expected 13 fields, got {len(cells)}")
                try:
                    rows.append([float(c) for c in cells])
                except ValueError as e:
                    raise RecordError(f"line {ln}: {e}") from e
        if not rows:
            raise RecordError("trajectory file has no data rows")
        a = np.array(rows)
        robot = a[:, 1].astype(np.int64)
        group = a[:, 2].astype(np.int64)
        if np.any(a[:, 1] != robot) or np.any(a[:, 2] != group):
            raise RecordError("robot/group ids must be integers")
        n = int(robot.max()) + 1
        if a.shape[0] % n != 0:
            raise RecordError(f"{a.shape[0]} rows do not tile {n} robots")
        ticks = a.shape[0] // n
        if np.any(robot.reshape(ticks, n) != np.arange(n)):
            raise RecordError("rows must be tick-major with robots in 0..n-1 order")
        tt = a[:, 0].reshape(ticks, n)
        if np.any(tt != tt[:, :1]):
            raise RecordError("all robots in one tick must share the timestamp")
        if ticks > 1 and np.any(np.diff(tt[:, 0]) <= 0.0):
            raise RecordError("tick timestamps must increase")
        for i in range(n):
            gcol = group.reshape(ticks, n)[:, i]
            if np.any(gcol != gcol[0]):
                raise RecordError(f"robot {i} changes group mid-record")
        dt = float(tt[1, 0] - tt[0, 0]) if ticks > 1 else 0.0
        return cls(dt=dt, n_robots=n, t=a[:, 0], robot=robot, group=group,
                   p=a[:, 3:6], v=a[:, 6:9], u=a[:, 9:12], tcal=a[:, 12],
                   n_cand=np.zeros(a.shape[0], dtype=np.int64),
                   sweeps=np.zeros(a.shape[0], dtype=np.int64))


# ---------------------------------------------------------------------------
# safety monitoring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SafetyEvent:
    t: float
    kind: str   # "pair" | "static" | "dynamic"
    a: int      # robot index
    b: int      # other robot / obstacle index
    value: float


@dataclass
class SafetyLog:
    events: list[SafetyEvent]

    @property
    def count(self) -> int:
        return len(self.events)


def scan_violations(record: TrajectoryRecord, scenario: Scenario) -> SafetyLog:
    """Distance-based safety conditions checked at every recorded state:
    same-group robots must stay further apart than twice the body radius,
    clear of every static surface by more than the body radius, and clear of
    other groups' robots by more than body radius + presented radius."""
    _, gids = scenario.flat_states()
    if record.n_robots != gids.shape[0]:
        raise ValueError(f"record has {record.n_robots} robots, scenario "
                         f"{gids.shape[0]}")
    r_cs = np.array([scenario.groups[g].bundle.potentials.r_c for g in gids])
    P = record.tick_view("p")
    T = record.tick_view("t")[:, 0]
    events: list[SafetyEvent] = []
    n = record.n_robots
    D = np.linalg.norm(P[:, :, None, :] - P[:, None, :, :], axis=3)
    same = gids[:, None] == gids[None, :]
    off = ~np.eye(n, dtype=bool)
    pair_bad = (D <= 2.0 * r_cs[None, :, None]) & same[None] & np.triu(off)[None]
    for k, i, j in np.argwhere(pair_bad):
        events.append(SafetyEvent(float(T[k]), "pair", int(i), int(j),
                                  float(D[k, i, j])))
    dyn_bad = (D <= (r_cs[:, None] + scenario.r_beta)[None]) & ~same[None] & off[None]
    for k, i, j in np.argwhere(dyn_bad):
        events.append(SafetyEvent(float(T[k]), "dynamic", int(i), int(j),
                                  float(D[k, i, j])))
    for k in range(P.shape[0]):
        for i in range(n):
            for s, obs in enumerate(scenario.statics):
                sd, _ = surface_query(P[k, i], obs)
                if sd <= r_cs[i]:
                    events.append(SafetyEvent(float(T[k]), "static", i, s, sd))
    return SafetyLog(events)


# ---------------------------------------------------------------------------
# world stepping
# ---------------------------------------------------------------------------


@dataclass
class StepResult:
    u: np.ndarray       # (n, 3) applied inputs
    tcal: np.ndarray    # (n,) control wall time, seconds
    n_cand: np.ndarray  # (n,) int
    sweeps: np.ndarray  # (n,) int
    lines: list[str]    # belief trace lines (empty unless requested)


def obstacle_zone_flags(scenario: Scenario, states: list[RobotState],
                        raw_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Widened-spacing flags with a one-tick turn-off delay: a robot enters
    the zone the tick it first perceives a static obstacle and leaves one
    tick after it stops perceiving any."""
    _, gids = scenario.flat_states()
    raw = np.zeros(len(states), dtype=bool)
    for i, x in enumerate(states):
        r_s = scenario.groups[gids[i]].bundle.potentials.r_s
        raw[i] = any(surface_query(x.p, obs)[0] <= r_s for obs in scenario.statics)
    return raw | raw_prev, raw


def step_world(scenario: Scenario, states: list[RobotState], zone: np.ndarray,
               t_k: float, method: str = "heuristic", executor=None,
               use_kernel: bool = True, tick: int = 0,
               trace: bool = False) -> tuple[list[RobotState], StepResult]:
    """One synchronous tick: every control decision is computed from the same
    state snapshot, then every robot advances by dt. Robots of other groups
    enter each decision as dynamic obstacles presenting r_beta."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r} (expected one of {METHODS})")
    _, gids = scenario.flat_states()
    n = len(states)
    group_members: list[list[int]] = [[] for _ in scenario.groups]
    for i, g in enumerate(gids):
        group_members[int(g)].append(i)

    group_robots = []
    group_dyn = []
    group_ref = []
    group_arrays = []
    for gi, members in enumerate(group_members):
        group_robots.append(tuple(states[i] for i in members))
        others = [j for j in range(n) if gids[j] != gi]
        group_dyn.append(tuple(
            DynamicObstacle(states[j].p, states[j].v, scenario.r_beta)
            for j in others))
        group_ref.append(scenario.groups[gi].reference.state(t_k))
        group_arrays.append((
            np.array([states[i].p for i in members]).reshape(len(members), 3),
            np.array([states[i].v for i in members]).reshape(len(members), 3),
            np.array([states[j].p for j in others]).reshape(len(others), 3),
            np.array([states[j].v for j in others]).reshape(len(others), 3),
            np.full(len(others), scenario.r_beta),
        ))
    statics_enc = encode_statics(list(scenario.statics))

    def decide(i: int):
        gi = int(gids[i])
        bundle = scenario.groups[gi].bundle
        li = group_members[gi].index(i)
        if method == "gradient-only":
            t0 = time.perf_counter()
            x_i = states[i]
            params = bundle.potentials
            nbrs = [states[j] for j in group_members[gi]
                    if j != i and float(np.linalg.norm(states[j].p - x_i.p)) <= params.r_s]
            s_near, d_near = _visible(x_i.p, list(scenario.statics),
                                      list(group_dyn[gi]), params.r_s)
            sol = heuristic_full(x_i, nbrs, _current_betas(x_i, s_near, d_near),
                                 group_ref[gi], params, bundle.heuristic,
                                 bool(zone[i]))
            u = saturate(sol.u_g, bundle.dynamics.u_max)
            return u, time.perf_counter() - t0, 0, 0, ""
        view = WorldView(group_robots[gi], scenario.statics, group_dyn[gi],
                         group_ref[gi], obstacle_zone=bool(zone[i]))
        d = compute_control(li, view, bundle, method=method, use_kernel=use_kernel,
                            statics_enc=statics_enc,
                            arrays=group_arrays[gi] if use_kernel else None)
        line = belief_trace_line(tick, i, d) if trace else ""
        return d.u, d.t_wall, len(d.q), d.sweeps, line

    if executor is not None:
        results = list(executor.map(decide, range(n)))
    else:
        results = [decide(i) for i in range(n)]

    u = np.array([r[0] for r in results]).reshape(n, 3)
    res = StepResult(
        u=u,
        tcal=np.array([r[1] for r in results]),
        n_cand=np.array([r[2] for r in results], dtype=np.int64),
        sweeps=np.array([r[3] for r in results], dtype=np.int64),
        lines=[r[4] for r in results if r[4]],
    )
    new_states = [
        step_dynamics(states[i], u[i], scenario.groups[int(gids[i])].bundle.dynamics.dt,
                      scenario.groups[int(gids[i])].bundle.dynamics)
        for i in range(n)
    ]
    return new_states, res


def run_episode(scenario: Scenario, method: str = "heuristic",
                duration: float | None = None, threads: int = 1,
                use_kernel: bool = True,
                trace_sink=None) -> tuple[TrajectoryRecord, SafetyLog]:
    """Drive a scenario to completion and return the trajectory plus the
    safety scan. The last recorded tick is the final state: the world is
    advanced between rows, never past the last one."""
    validate_scenario(scenario)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r} (expected one of {METHODS})")
    dt = scenario.groups[0].bundle.dynamics.dt
    T = scenario.duration if duration is None else float(duration)
    ticks = int(round(T / dt))
    if ticks < 1:
        raise ScenarioError(f"duration {T} shorter than one {dt} s tick")

    states, gids = scenario.flat_states()
    n = len(states)
    K = ticks * n
    rec = TrajectoryRecord(
        dt=dt, n_robots=n,
        t=np.zeros(K), robot=np.zeros(K, dtype=np.int64),
        group=np.zeros(K, dtype=np.int64),
        p=np.zeros((K, 3)), v=np.zeros((K, 3)), u=np.zeros((K, 3)),
        tcal=np.zeros(K), n_cand=np.zeros(K, dtype=np.int64),
        sweeps=np.zeros(K, dtype=np.int64),
    )
    raw_prev = np.zeros(n, dtype=bool)
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for k in range(ticks):
            t_k = k * dt
            zone, raw_prev = obstacle_zone_flags(scenario, states, raw_prev)
            states_next, step = step_world(
                scenario, states, zone, t_k, method=method, executor=executor,
                use_kernel=use_kernel, tick=k, trace=trace_sink is not None)
            if trace_sink is not None:
                for line in step.lines:
                    trace_sink.write(line + "\n")
            sl = slice(k * n, (k + 1) * n)
            rec.t[sl] = t_k
            rec.robot[sl] = np.arange(n)
            rec.group[sl] = gids
            rec.p[sl] = np.array([x.p for x in states])
            rec.v[sl] = np.array([x.v for x in states])
            rec.u[sl] = step.u
            rec.tcal[sl] = step.tcal
            rec.n_cand[sl] = step.n_cand
            rec.sweeps[sl] = step.sweeps
            if k < ticks - 1:
                states = states_next
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    return rec, scan_violations(rec, scenario)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def metric_t_cal(record: TrajectoryRecord) -> float:
    """Average control wall time per robot per tick."""
    if record.t.shape[0] == 0:
        raise ValueError("cannot average an empty record")
    return float(np.mean(record.tcal))


def metric_r_dev(record: TrajectoryRecord, scenario: Scenario) -> tuple[np.ndarray, float]:
    """Mean distance to the (own-group) reference, per tick and averaged."""
    _, gids = scenario.flat_states()
    if record.n_robots != gids.shape[0]:
        raise ValueError("record/scenario robot counts disagree")
    P = record.tick_view("p")
    T = record.tick_view("t")[:, 0]
    series = np.zeros(P.shape[0])
    for k in range(P.shape[0]):
        by_group = [g.reference.state(float(T[k])).p for g in scenario.groups]
        refs = np.array([by_group[g] for g in gids])
        series[k] = float(np.mean(np.linalg.norm(P[k] - refs, axis=1)))
    return series, float(np.mean(series)) if series.size else 0.0


def metric_u_avg(record: TrajectoryRecord) -> float:
    """Average applied input magnitude per robot per tick."""
    if record.t.shape[0] == 0:
        raise ValueError("cannot average an empty record")
    return float(np.mean(np.linalg.norm(record.u, axis=1)))


def metric_L(record: TrajectoryRecord) -> np.ndarray:
    """Path length travelled by each robot (polyline over recorded ticks)."""
    P = record.tick_view("p")
    if P.shape[0] < 2:
        return np.zeros(record.n_robots)
    return np.sum(np.linalg.norm(np.diff(P, axis=0), axis=2), axis=0)


def metric_distances(record: TrajectoryRecord, scenario: Scenario):
    """(min same-group robot distance per robot, min static surface distance,
    min other-group center distance). The obstacle minima are None when the
    scenario has nothing of that kind."""
    _, gids = scenario.flat_states()
    if record.n_robots != gids.shape[0]:
        raise ValueError("record/scenario robot counts disagree")
    n = record.n_robots
    P = record.tick_view("p")
    D = np.linalg.norm(P[:, :, None, :] - P[:, None, :, :], axis=3)
    same = gids[:, None] == gids[None, :]
    off = ~np.eye(n, dtype=bool)
    D_same = np.where((same & off)[None], D, np.inf)
    r_min = D_same.min(axis=(0, 2))
    D_cross = np.where((~same)[None], D, np.inf)
    r_dynamic = float(D_cross.min())
    r_static = np.inf
    for k in range(P.shape[0]):
        for i in range(n):
            for obs in scenario.statics:
                sd, _ = surface_query(P[k, i], obs)
                r_static = min(r_static, sd)
    r_min = np.where(np.isinf(r_min), np.nan, r_min)
    multi_group = len({int(g) for g in gids}) > 1
    return (r_min,
            float(r_static) if scenario.statics else None,
            float(r_dynamic) if multi_group else None)


@dataclass
class MetricsReport:
    n_robots: int
    n_ticks: int
    dt: float
    t_cal_avg: float
    u_avg: float
    L: np.ndarray
    r_dev_series: np.ndarray | None = None
    r_dev_avg: float | None = None
    r_min: np.ndarray | None = None
    r_static_min: float | None = None
    r_dynamic_min: float | None = None
    violations: int | None = None

    def to_text(self) -> str:
        def fmt(x):
            if x is None:
                return "absent"
            if isinstance(x, float):
                return repr(x)
            return str(x)

        def fmt_arr(a):
            if a is None:
                return "absent"
            return ",".join("absent" if (isinstance(x, float) and math.isnan(x))
                            else repr(float(x)) for x in a)

        lines = [
            "format=metrics-v1",
            f"n_robots={self.n_robots}",
            f"n_ticks={self.n_ticks}",
            f"dt={fmt(self.dt)}",
            f"t_cal_avg_s={fmt(self.t_cal_avg)}",
            f"u_avg={fmt(self.u_avg)}",
            f"L_m={fmt_arr(self.L)}",
            f"r_dev_avg_m={fmt(self.r_dev_avg)}",
            f"r_min_m={fmt_arr(self.r_min)}",
            f"r_static_min_m={fmt(self.r_static_min)}",
            f"r_dynamic_min_m={fmt(self.r_dynamic_min)}",
            f"violations={fmt(self.violations)}",
            f"r_dev_series_m={fmt_arr(self.r_dev_series)}",
        ]
        return "\n".join(lines) + "\n"


def compute_metrics(record: TrajectoryRecord,
                    scenario: Scenario | None = None) -> MetricsReport:
    """Full metric suite; without a scenario only the record-intrinsic
    metrics are available."""
    rep = MetricsReport(
        n_robots=record.n_robots,
        n_ticks=record.n_ticks,
        dt=record.dt,
        t_cal_avg=metric_t_cal(record),
        u_avg=metric_u_avg(record),
        L=metric_L(record),
    )
    if scenario is not None:
        series, avg = metric_r_dev(record, scenario)
        rep.r_dev_series = series
        rep.r_dev_avg = avg
        r_min, r_static, r_dynamic = metric_distances(record, scenario)
        rep.r_min = r_min
        rep.r_static_min = r_static
        rep.r_dynamic_min = r_dynamic
        rep.violations = scan_violations(record, scenario).count
    return rep


# ---------------------------------------------------------------------------
# builtin scenarios
# ---------------------------------------------------------------------------

_PUBLISHED_N = (2, 4, 6, 8)


def table_params(n: int) -> ParamBundle:
    """Published gain set for a group of n robots. Sizes without their own
    row reuse the nearest smaller published row."""
    b = ParamBundle()
    if n >= 8:
        b = replace(b,
                    potentials=replace(b.potentials, k_a=18.0, k_n=1.7,
                                       k_or=18.0, k_od=12.0, k_rp=26.0, k_rv=20.0),
                    heuristic=replace(b.heuristic, k_ob=18.0))
    elif n >= 6:
        b = replace(b, potentials=replace(b.potentials, k_n=1.65,
                                          k_rp=25.0, k_rv=17.0))
    return b


def _grid_positions(n: int, center: np.ndarray, spacing: float,
                    rng: np.random.Generator) -> list[np.ndarray]:
    """n jittered lattice points in the y-z plane through center."""
    rows = 1 if n <= 3 else 2
    cols = int(math.ceil(n / rows))
    pts = []
    for c in range(cols):
        for r in range(rows):
            if len(pts) == n:
                break
            dy = (c - (cols - 1) / 2.0) * spacing
            dz = (r - (rows - 1) / 2.0) * spacing
            jit = rng.uniform(-0.02, 0.02, size=3)
            pts.append(center + np.array([0.0, dy, dz]) + jit)
    return pts


def build_doorway_scenario(n: int = 4, seed: int = 0,
                           duration: float = 35.0) -> Scenario:
    """Two flocks on crossing straight paths, each through its own doorway.

    The wall spans x in [-0.05, 0.05], z in [0, 2], with 0.8 m openings
    centered at y = -0.5 and y = +0.5. The reference lines mirror each other
    at slope -/+0.75: they intersect at (-0.67, 0) mid-flight — a ~74 degree
    crossing that forces the groups to weave through each other in open
    space — then thread the lower and upper openings simultaneously and
    diverge east of the wall. References move at 0.15 m/s and park just
    shy of the horizon; robots start on a jittered lattice at rest.
    """
    if n not in _PUBLISHED_N:
        warnings.warn(f"no published gain set for groups of {n}; "
                      f"reusing the nearest published row", stacklevel=2)
    bundle = table_params(n)
    spacing = bundle.potentials.r_f
    statics = (
        Box(vec3(-0.05, -2.4, 0.0), vec3(0.05, -0.9, 2.0)),
        Box(vec3(-0.05, -0.1, 0.0), vec3(0.05, 0.1, 2.0)),
        Box(vec3(-0.05, 0.9, 0.0), vec3(0.05, 2.4, 2.0)),
    )
    rng = np.random.default_rng(seed)
    groups = []
    for side in (1.0, -1.0):
        center = vec3(-2.5, 1.375 * side, 1.0)
        robots = tuple(RobotState(p, np.zeros(3))
                       for p in _grid_positions(n, center, spacing, rng))
        ref = ReferenceTrajectory.from_speed(
            np.array([[-2.5, 1.375 * side, 1.0], [1.5, -1.625 * side, 1.0]]),
            0.15)
        groups.append(GroupSpec(robots, ref, bundle))
    s = Scenario(name=f"doorway-n{n}", groups=tuple(groups), statics=statics,
                 duration=duration, r_beta=0.12, seed=seed)
    validate_scenario(s)
    return s


def build_freeflock_scenario(n: int = 4, seed: int = 0,
                             duration: float = 40.0) -> Scenario:
    """One flock, no obstacles, a parked reference: the group settles into
    its natural spacing around the goal."""
    bundle = table_params(n)
    rng = np.random.default_rng(seed)
    center = vec3(0.0, 0.0, 1.0)
    robots = tuple(RobotState(p, np.zeros(3))
                   for p in _grid_positions(n, center, bundle.potentials.r_f, rng))
    ref = ReferenceTrajectory(center.reshape(1, 3), np.zeros(1))
    s = Scenario(name=f"freeflock-n{n}",
                 groups=(GroupSpec(robots, ref, bundle),),
                 statics=(), duration=duration, r_beta=0.12, seed=seed)
    validate_scenario(s)
    return s


BUILTIN_SCENARIOS = {
    "doorway": lambda seed=0: build_doorway_scenario(4, seed),
    "doorway-n2": lambda seed=0: build_doorway_scenario(2, seed),
    "doorway-n4": lambda seed=0: build_doorway_scenario(4, seed),
    "doorway-n6": lambda seed=0: build_doorway_scenario(6, seed),
    "doorway-n8": lambda seed=0: build_doorway_scenario(8, seed),
    "freeflock": lambda seed=0: build_freeflock_scenario(4, seed),
}


def builtin_scenario(name: str, seed: int = 0) -> Scenario:
    try:
        factory = BUILTIN_SCENARIOS[name]
    except KeyError:
        raise ScenarioError(f"unknown builtin scenario {name!r}; available: "
                            f"{', '.join(sorted(BUILTIN_SCENARIOS))}") from None
    return factory(seed)
