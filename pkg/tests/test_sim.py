import math
import random
from dataclasses import replace

import pytest

from oracles import euler_pose
from sonswarm.errors import UnknownRobot
from sonswarm.model import Obstacle, Pose2D, RobotKind, RobotSetup, RobotSpec
from sonswarm.scenario import demo_scenario
from sonswarm.sim import (
    Command,
    WorldState,
    check_mission_complete,
    forward_progress,
    integrate,
    sense,
    step,
)


def two_robot_world(obstacles=()):
    s = demo_scenario()
    robots = (
        RobotSetup(RobotSpec.with_defaults(1, RobotKind.GROUND), Pose2D(0.0, 0.0)),
        RobotSetup(RobotSpec.with_defaults(2, RobotKind.AERIAL), Pose2D(0.0, 1.0)),
    )
    s = replace(s, robots=robots, obstacles=tuple(obstacles))
    return s, WorldState.initial(s)


def test_arc_matches_closed_form():
    rng = random.Random(11)
    for _ in range(500):
        th = rng.uniform(-math.pi, math.pi)
        v, w = rng.uniform(-0.3, 0.3), rng.uniform(-2, 2)
        if abs(w) < 1e-3:
            continue
        p = integrate(Pose2D(0.0, 0.0, th), Command(v, w), 0.1)
        cx = v / w * (math.sin(th + w * 0.1) - math.sin(th))
        cy = -v / w * (math.cos(th + w * 0.1) - math.cos(th))
        assert math.hypot(p.x - cx, p.y - cy) < 1e-12


def test_arc_within_euler_truncation():
    # forward Euler with n substeps lags the arc by about |v w| dt^2 / (2 n)
    rng = random.Random(12)
    for _ in range(200):
        th = rng.uniform(-math.pi, math.pi)
        lin, lat, ang = rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-2, 2)
        got = integrate(Pose2D(1.0, -2.0, th), Command(lin, ang, lat), 0.1)
        ex, ey, _ = euler_pose(1.0, -2.0, th, lin, lat, ang, 0.1)
        bound = math.hypot(lin, lat) * abs(ang) * 0.1**2 / 2000
        assert math.hypot(got.x - ex, got.y - ey) <= 1.01 * bound + 1e-12


def test_straight_and_turn_in_place():
    p = integrate(Pose2D(0, 0, 0), Command(0.2, 0.0), 0.5)
    assert (p.x, p.y, p.theta) == pytest.approx((0.1, 0.0, 0.0))
    q = integrate(Pose2D(1, 1, 0), Command(0.0, 1.0), 0.5)
    assert (q.x, q.y, q.theta) == pytest.approx((1.0, 1.0, 0.5))


def test_half_circle():
    # radius 1, pi seconds at w=1 ends diametrically opposite
    p = integrate(Pose2D(0, 0, 0), Command(1.0, 1.0), math.pi)
    assert p.x == pytest.approx(0.0, abs=1e-12)
    assert p.y == pytest.approx(2.0)


def test_ground_robot_blocked_by_obstacle():
    s, w = two_robot_world([Obstacle(1, 0.35, 0.0, 0.2)])
    w2 = step(w, {1: Command(0.2, 0.0), 2: Command(0.2, 0.0)}, 0.5)
    assert w2.blocked[1] and w2.pose(1) == w.pose(1)
    assert not w2.blocked[2] and w2.pose(2).x == pytest.approx(0.1)
    assert w2.tick == 1


def test_blocked_robot_may_still_turn():
    s, w = two_robot_world([Obstacle(1, 0.35, 0.0, 0.2)])
    w2 = step(w, {1: Command(0.2, 1.0)}, 0.5)
    assert w2.blocked[1]
    assert w2.pose(1).theta == pytest.approx(0.5)


def test_walls_block_ground_robots():
    s, w = two_robot_world()
    w = replace(w, arena=(-1, -1, 0.15, 2))
    assert step(w, {1: Command(0.2, 0.0)}, 0.5).blocked[1]


def test_ground_robot_cannot_slide():
    _, w = two_robot_world()
    with pytest.raises(ValueError):
        step(w, {1: Command(0.0, 0.0, 0.1)}, 0.1)


def test_unknown_robot():
    _, w = two_robot_world()
    with pytest.raises(UnknownRobot):
        step(w, {9: Command(0.1, 0)}, 0.1)
    with pytest.raises(UnknownRobot):
        sense(w, 9)


def test_sense_inverse_transform():
    rng = random.Random(5)
    s, w = two_robot_world([Obstacle(1, 0.5, 0.4, 0.1), Obstacle(2, -0.3, 0.2, 0.1)])
    for _ in range(100):
        pose = Pose2D(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-4, 4))
        w = replace(w, poses={1: pose, 2: Pose2D(0.1, 0.3)})
        per = sense(w, 1)
        for o in per.obstacles_rel:
            ox, oy = pose.to_world(o.x, o.y)
            real = next(q for q in s.obstacles if q.id == o.id)
            assert math.hypot(ox - real.x, oy - real.y) < 1e-9
        for r in per.robots_rel:
            rx, ry = pose.to_world(r.x, r.y)
            assert math.hypot(rx - 0.1, ry - 0.3) < 1e-9


def test_sense_facing_left():
    _, w = two_robot_world([Obstacle(1, 0.0, 0.5, 0.1)])
    w = replace(w, poses={1: Pose2D(0, 0, math.pi / 2), 2: Pose2D(5, 5)})
    (o,) = sense(w, 1).obstacles_rel
    assert o.x == pytest.approx(0.5) and o.y == pytest.approx(0.0, abs=1e-12)
    assert sense(w, 1).robots_rel == ()


def test_sense_range_uses_surface_distance():
    _, w = two_robot_world([Obstacle(1, 1.05, 0.0, 0.3)])
    assert len(sense(w, 1).obstacles_rel) == 1  # surface at 0.75 <= 0.8


def test_completion_needs_every_ground_robot():
    s, w = two_robot_world()
    s = replace(s, finish_line_x=0.5)
    assert not check_mission_complete(w, s)
    w2 = replace(w, poses={1: Pose2D(0.6, 0), 2: Pose2D(0.0, 1.0)})
    assert check_mission_complete(w2, s)  # aerial robots do not count


def test_progress_ignores_lateral_motion():
    _, w = two_robot_world()
    w2 = step(w, {2: Command(0.0, 0.0, 0.3)}, 1.0)
    assert forward_progress(w, w2, 2) == pytest.approx(0.0)
    assert w2.pose(2).y == pytest.approx(1.3)


def test_noise_is_seeded():
    s, _ = two_robot_world()
    s = replace(s, noise_std=0.1)
    runs = []
    for _ in range(2):
        w = WorldState.initial(s)
        for _ in range(10):
            w = step(w, {1: Command(0.1, 0.0), 2: Command(0.1, 0.2)}, 0.1)
        runs.append(w.poses)
    assert runs[0] == runs[1]
