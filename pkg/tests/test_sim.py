"""Scenario plumbing, episode determinism, metrics, and the safety scan."""

import json

import numpy as np
import pytest

from flockgrf import (
    Box,
    ParamBundle,
    ReferenceTrajectory,
    RobotState,
    Scenario,
    ScenarioError,
    RecordError,
    Sphere,
    GroupSpec,
    TrajectoryRecord,
    build_doorway_scenario,
    build_freeflock_scenario,
    builtin_scenario,
    metric_L,
    metric_distances,
    metric_r_dev,
    metric_t_cal,
    metric_u_avg,
    run_episode,
    scan_violations,
    scenario_from_dict,
    scenario_to_dict,
    table_params,
    validate_scenario,
    vec3,
)
from flockgrf.sim import obstacle_zone_flags

BUNDLE = ParamBundle()

# ---------- fixtures ----------


def parked_ref(p=(0.0, 0.0, 0.0)):
    return ReferenceTrajectory(np.array([p], dtype=float), np.array([0.0]))


def make_scenario(positions, groups=None, statics=(), duration=5.0, name="probe"):
    """One scenario per distinct group id, robots parked at `positions`."""
    positions = np.asarray(positions, dtype=float)
    if groups is None:
        groups = np.zeros(len(positions), dtype=int)
    groups = np.asarray(groups)
    specs = []
    for g in range(int(groups.max()) + 1):
        states = tuple(RobotState(p, np.zeros(3)) for p in positions[groups == g])
        specs.append(GroupSpec(states, parked_ref(), BUNDLE))
    return Scenario(name, tuple(specs), tuple(statics), duration)


def make_record(P, U=None, groups=None, dt=1.0, tcal=0.005):
    """Row-major record: P is (ticks, robots, 3)."""
    P = np.asarray(P, dtype=float)
    K, n, _ = P.shape
    t = np.repeat(np.arange(K) * dt, n)
    robot = np.tile(np.arange(n), K)
    if groups is None:
        groups = np.zeros(n, dtype=int)
    group = np.tile(np.asarray(groups, dtype=int), K)
    U = np.zeros((K * n, 3)) if U is None else np.asarray(U, dtype=float).reshape(K * n, 3)
    return TrajectoryRecord(dt, n, t, robot, group, P.reshape(K * n, 3),
                            np.zeros((K * n, 3)), U, np.full(K * n, tcal),
                            np.zeros(K * n, dtype=int), np.zeros(K * n, dtype=int))


# ---------- reference trajectories ----------


def test_reference_from_speed():
    ref = ReferenceTrajectory.from_speed([[0, 0, 0], [1, 0, 0], [1, 3, 0]], 0.5)
    assert np.allclose(ref.times, [0.0, 2.0, 8.0], atol=1e-12)
    mid = ref.state(1.0)
    assert np.allclose(mid.p, [0.5, 0, 0], atol=1e-12)
    assert np.allclose(mid.v, [0.5, 0, 0], atol=1e-12)
    leg2 = ref.state(5.0)
    assert np.allclose(leg2.p, [1.0, 1.5, 0], atol=1e-12)
    assert np.allclose(leg2.v, [0, 0.5, 0], atol=1e-12)


def test_reference_parks_and_clamps():
    ref = ReferenceTrajectory.from_speed([[0, 0, 0], [2, 0, 0]], 0.4)
    end = ref.state(1e6)
    assert np.allclose(end.p, [2, 0, 0]) and np.array_equal(end.v, np.zeros(3))
    early = ref.state(-3.0)
    assert np.allclose(early.p, [0, 0, 0])


def test_reference_validation():
    with pytest.raises(ScenarioError):
        ReferenceTrajectory(np.array([[0, 0, 0], [1, 0, 0]]), np.array([1.0, 2.0]))
    with pytest.raises(ScenarioError):
        ReferenceTrajectory(np.array([[0, 0, 0], [1, 0, 0]]), np.array([0.0, 0.0]))
    with pytest.raises(ScenarioError):
        ReferenceTrajectory(np.array([[0, 0, 0], [1, 0, 0]]), np.array([0.0]))
    with pytest.raises(ScenarioError):
        ReferenceTrajectory.from_speed([[1, 1, 1], [1, 1, 1]], 0.5)
    with pytest.raises(ScenarioError):
        ReferenceTrajectory.from_speed([[0, 0, 0], [1, 0, 0]], 0.0)


# ---------- scenario validation ----------


def test_scenario_rejects_bad_duration():
    sc = make_scenario([[0, 0, 0], [1, 0, 0]], duration=0.0)
    with pytest.raises(ScenarioError):
        validate_scenario(sc)


def test_scenario_rejects_empty_group():
    sc = Scenario("probe", (GroupSpec((), parked_ref(), BUNDLE),), (), 5.0)
    with pytest.raises(ScenarioError):
        validate_scenario(sc)


def test_scenario_rejects_contact_start():
    # closer than two body radii
    sc = make_scenario([[0, 0, 0], [0.2, 0, 0]])
    with pytest.raises(ScenarioError):
        validate_scenario(sc)
    # static surface within a body radius
    sc = make_scenario([[0, 0, 0], [1, 0, 0]],
                       statics=(Sphere(vec3(0.0, 0.3, 0.0), 0.25),))
    with pytest.raises(ScenarioError):
        validate_scenario(sc)


def test_scenario_rejects_mixed_timestep():
    from flockgrf.core import DynamicsParams
    other = ParamBundle(dynamics=DynamicsParams(dt=0.1))
    specs = (GroupSpec((RobotState(vec3(0, 0, 0), np.zeros(3)),), parked_ref(), BUNDLE),
             GroupSpec((RobotState(vec3(5, 0, 0), np.zeros(3)),), parked_ref(), other))
    with pytest.raises(ScenarioError):
        validate_scenario(Scenario("probe", specs, (), 5.0))


# ---------- metrics on hand-built records ----------


def test_path_length_metric():
    K = 11
    P = np.zeros((K, 2, 3))
    P[:, 0, 0] = 0.1 * np.arange(K)   # robot 0 walks +x
    P[:, 1, 1] = 2.0                  # robot 1 parked
    rec = make_record(P)
    assert np.allclose(metric_L(rec), [1.0, 0.0], atol=1e-12)
    assert np.array_equal(metric_L(make_record(P[:1])), np.zeros(2))


def test_u_avg_metric():
    P = np.zeros((3, 2, 3))
    P[:, 1, 0] = 1.0
    U = np.zeros((3, 2, 3))
    U[:, 0, 0] = 0.1
    U[:, 1, 1] = 0.3
    assert metric_u_avg(make_record(P, U=U)) == pytest.approx(0.2, abs=1e-12)


def test_t_cal_metric():
    P = np.zeros((4, 1, 3))
    assert metric_t_cal(make_record(P, tcal=0.005)) == pytest.approx(0.005, abs=1e-15)
    empty = make_record(np.zeros((0, 1, 3)))
    with pytest.raises(ValueError):
        metric_t_cal(empty)


def test_r_dev_metric():
    # robots 1 m and 3 m from a reference parked at the origin
    P = np.zeros((5, 2, 3))
    P[:, 0, 0] = 1.0
    P[:, 1, 0] = 3.0
    rec = make_record(P)
    sc = make_scenario([[1, 0, 0], [3, 0, 0]])
    series, avg = metric_r_dev(rec, sc)
    assert np.allclose(series, 2.0, atol=1e-12)
    assert avg == pytest.approx(2.0, abs=1e-12)


def test_min_distance_metrics():
    P = np.zeros((3, 2, 3))
    P[:, 1, 0] = 0.4
    sphere = Sphere(vec3(0.0, 1.0, 0.0), 0.5)  # surface 0.5 below robot 0
    rec = make_record(P)
    sc = make_scenario([[0, 0, 0], [0.4, 0, 0]], statics=(sphere,))
    r_min, r_static, r_dynamic = metric_distances(rec, sc)
    assert np.allclose(r_min, [0.4, 0.4], atol=1e-12)
    assert r_static == pytest.approx(0.5, abs=1e-12)
    assert r_dynamic is None  # single group

    sc2 = make_scenario([[0, 0, 0], [0.4, 0, 0]], groups=[0, 1])
    rec2 = make_record(P, groups=[0, 1])
    r_min2, _, r_dyn2 = metric_distances(rec2, sc2)
    assert np.isnan(r_min2).all()  # nobody shares a group
    assert r_dyn2 == pytest.approx(0.4, abs=1e-12)


def test_scan_violations_kinds():
    # tick 1 pushes the pair within two body radii (2 * 0.12)
    P = np.zeros((2, 2, 3))
    P[0, 1, 0] = 1.0
    P[1, 1, 0] = 0.2
    rec = make_record(P)
    sc = make_scenario([[0, 0, 0], [1, 0, 0]])
    log = scan_violations(rec, sc)
    assert log.count == 1
    assert log.events[0].kind == "pair"
    assert log.events[0].value == pytest.approx(0.2, abs=1e-12)

    # same geometry, separate groups: body + presented radius = 0.24
    rec2 = make_record(P, groups=[0, 1])
    sc2 = make_scenario([[0, 0, 0], [1, 0, 0]], groups=[0, 1])
    log2 = scan_violations(rec2, sc2)
    assert log2.count >= 1
    assert {e.kind for e in log2.events} == {"dynamic"}

    # static contact: surface 0.1 m away at tick 0
    wall = Box(vec3(0.0, 0.1, -1.0), vec3(2.0, 0.4, 1.0))
    sc3 = make_scenario([[0, 0, 0], [1, 0, 0]], statics=(wall,))
    P3 = np.zeros((1, 2, 3))
    P3[0, 1, 0] = 1.0
    log3 = scan_violations(make_record(P3), sc3)
    assert log3.count == 2
    assert all(e.kind == "static" for e in log3.events)

    clean = make_record(np.array([[[0, 0, 0], [1, 0, 0]]], dtype=float))
    assert scan_violations(clean, sc).count == 0


# ---------- the flat file ----------


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    P = rng.normal(size=(4, 3, 3))
    U = rng.normal(size=(4, 3, 3))
    rec = make_record(P, U=U, tcal=0.00123456789012345)
    path = tmp_path / "out.csv"
    rec.to_csv(path)
    back = TrajectoryRecord.from_csv(path)
    assert back.dt == rec.dt and back.n_robots == 3
    for field in ("t", "p", "v", "u", "tcal"):
        assert np.array_equal(getattr(back, field), getattr(rec, field))
    assert np.array_equal(back.robot, rec.robot)
    assert np.all(back.n_cand == 0) and np.all(back.sweeps == 0)

    rec.to_csv(path, strip_timing=True)
    stripped = TrajectoryRecord.from_csv(path)
    assert np.all(stripped.tcal == 0.0)
    assert np.array_equal(stripped.p, rec.p)


def test_csv_rejects_malformed(tmp_path):
    rec = make_record(np.zeros((2, 2, 3)))
    path = tmp_path / "ok.csv"
    rec.to_csv(path)
    lines = path.read_text().splitlines()

    def write(mutate):
        bad = lines[:]
        mutate(bad)
        p = tmp_path / "bad.csv"
        p.write_text("\n".join(bad) + "\n")
        return p

    cases = [
        lambda ls: ls.__setitem__(0, ls[0].replace("tcal_s", "tcal")),
        lambda ls: ls.__setitem__(1, ",".join(ls[1].split(",")[:-1])),
        lambda ls: ls.__setitem__(1, ls[1].replace("0", "x", 1)),
        lambda ls: ls.pop(),                       # no longer tiles n_robots
        lambda ls: ls.__setitem__(2, ls[2].replace(",1,", ",0,", 1)),  # robot order
    ]
    for mutate in cases:
        with pytest.raises(RecordError):
            TrajectoryRecord.from_csv(write(mutate))

    with pytest.raises(RecordError):
        TrajectoryRecord.from_csv(write(lambda ls: ls.__delitem__(slice(1, None))))


# ---------- episodes ----------


def test_episode_deterministic():
    sc = builtin_scenario("doorway-n2")
    a, _ = run_episode(sc, duration=0.5)
    b, _ = run_episode(sc, duration=0.5)
    c, _ = run_episode(sc, duration=0.5, threads=3)
    for field in ("p", "v", "u"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
        assert np.array_equal(getattr(a, field), getattr(c, field))
    assert a.n_ticks == 10
    assert a.n_robots == 4


def test_groups_evolve_independently_when_far_apart():
    near = [[0.0, 0.0, 1.0], [0.5, 0.0, 1.0]]
    far = [[100.0, 0.0, 1.0], [100.5, 0.0, 1.0]]
    ref_a = parked_ref((0.25, 0.0, 1.0))
    ref_b = parked_ref((100.25, 0.0, 1.0))
    spec_a = GroupSpec(tuple(RobotState(vec3(*p), np.zeros(3)) for p in near),
                       ref_a, BUNDLE)
    spec_b = GroupSpec(tuple(RobotState(vec3(*p), np.zeros(3)) for p in far),
                       ref_b, BUNDLE)
    both = Scenario("pairs", (spec_a, spec_b), (), 0.5)
    solo = Scenario("solo", (spec_a,), (), 0.5)
    rec_both, _ = run_episode(both)
    rec_solo, _ = run_episode(solo)
    for field in ("p", "v", "u"):
        full = rec_both.tick_view(field)[:, :2]
        alone = rec_solo.tick_view(field)
        assert np.array_equal(full, alone)


def test_obstacle_zone_hysteresis():
    wall = Box(vec3(-0.05, -1.0, 0.0), vec3(0.05, 1.0, 2.0))
    sc = make_scenario([[-0.3, 0.0, 1.0]], statics=(wall,))
    near = [RobotState(vec3(-0.3, 0.0, 1.0), np.zeros(3))]   # 0.25 < r_s
    far = [RobotState(vec3(-5.0, 0.0, 1.0), np.zeros(3))]

    zone, raw = obstacle_zone_flags(sc, near, np.zeros(1, dtype=bool))
    assert zone[0] and raw[0]
    zone, raw = obstacle_zone_flags(sc, far, raw)
    assert zone[0] and not raw[0]      # leaves one tick late
    zone, raw = obstacle_zone_flags(sc, far, raw)
    assert not zone[0] and not raw[0]


# ---------- published gain tiers ----------


def test_table_params_tiers():
    base = table_params(4)
    assert base.potentials.k_a == 12.0
    assert base.potentials.k_n == 1.6
    assert base.potentials.k_rp == 5.0
    assert table_params(2).potentials.k_rp == 5.0

    mid = table_params(6)
    assert mid.potentials.k_a == 12.0
    assert mid.potentials.k_n == 1.65
    assert mid.potentials.k_rp == 25.0
    assert mid.potentials.k_rv == 17.0

    big = table_params(8)
    assert big.potentials.k_a == 18.0
    assert big.potentials.k_n == 1.7
    assert big.potentials.k_or == 18.0
    assert big.potentials.k_od == 12.0
    assert big.potentials.k_rp == 26.0
    assert big.potentials.k_rv == 20.0
    assert big.heuristic.k_ob == 18.0


# ---------- built-in scenarios ----------


def test_doorway_builder():
    sc = build_doorway_scenario(n=4)
    assert sc.n_robots == 8
    assert len(sc.groups) == 2 and all(len(g.states) == 4 for g in sc.groups)
    assert len(sc.statics) == 3 and all(isinstance(b, Box) for b in sc.statics)
    assert sc.duration == 35.0
    validate_scenario(sc)
    # both references cross at 0.15 m/s over the 4 x 3 diagonal
    for g in sc.groups:
        assert g.reference.times[-1] == pytest.approx(5.0 / 0.15, abs=1e-9)
    assert np.allclose(sc.groups[0].reference.state(0.0).p, [-2.5, 1.375, 1.0])
    assert np.allclose(sc.groups[1].reference.state(0.0).p, [-2.5, -1.375, 1.0])


def test_doorway_builder_seeding_and_warning():
    a = build_doorway_scenario(n=2, seed=5)
    b = build_doorway_scenario(n=2, seed=5)
    c = build_doorway_scenario(n=2, seed=6)
    pa, _ = a.flat_states()
    pb, _ = b.flat_states()
    pc, _ = c.flat_states()
    stack = lambda states: np.array([x.p for x in states])
    assert np.array_equal(stack(pa), stack(pb))
    assert not np.array_equal(stack(pa), stack(pc))
    with pytest.warns(UserWarning):
        build_doorway_scenario(n=3)


def test_freeflock_builder():
    sc = build_freeflock_scenario(n=4)
    assert sc.n_robots == 4
    assert sc.statics == ()
    assert sc.duration == 40.0
    validate_scenario(sc)
    end = sc.groups[0].reference.state(40.0)
    assert np.array_equal(end.v, np.zeros(3))


def test_builtin_lookup():
    assert builtin_scenario("doorway-n6").n_robots == 12
    assert builtin_scenario("doorway").n_robots == 8
    with pytest.raises(ScenarioError):
        builtin_scenario("hallway")


# ---------- serialization ----------


def test_scenario_dict_round_trip():
    sc = build_doorway_scenario(n=2)
    d1 = scenario_to_dict(sc)
    json.dumps(d1)  # must be a plain JSON document
    sc2 = scenario_from_dict(d1)
    assert scenario_to_dict(sc2) == d1
    assert sc2.n_robots == sc.n_robots


def test_scenario_dict_validation():
    d = scenario_to_dict(build_doorway_scenario(n=2))
    bad = json.loads(json.dumps(d))
    bad["duration"] = -1.0
    with pytest.raises(ScenarioError):
        scenario_from_dict(bad)

    bad2 = json.loads(json.dumps(d))
    bad2["groups"][0]["params"]["potentials"]["k_zz"] = 1.0
    with pytest.raises(ScenarioError):
        scenario_from_dict(bad2)
