"""Deterministic kinematic world: unicycle ground robots, holonomic aerial robots.

Ground robots are stopped by obstacles and arena walls; aerial robots fly over
everything. Sensing is perfect.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from typing import Mapping, NamedTuple

from .errors import UnknownRobot
from .model import Obstacle, Pose2D, RobotKind, RobotSpec, Scenario


class Command(NamedTuple):
    """Actuation for one tick. ``lateral`` is only meaningful for aerial robots."""

    linear: float
    angular: float
    lateral: float = 0.0


class ObstacleSighting(NamedTuple):
    id: int
    x: float  # body frame
    y: float
    radius: float


class RobotSighting(NamedTuple):
    id: int
    kind: RobotKind
    x: float
    y: float


@dataclass(frozen=True, slots=True)
class Perception:
    observer: int
    tick: int
    obstacles_rel: tuple[ObstacleSighting, ...] = ()
    robots_rel: tuple[RobotSighting, ...] = ()


@dataclass(frozen=True)
class WorldState:
    tick: int
    poses: Mapping[int, Pose2D]
    blocked: Mapping[int, bool]
    obstacles: tuple[Obstacle, ...]
    specs: Mapping[int, RobotSpec]
    arena: tuple[float, float, float, float]
    rng_state: object = None
    noise_std: float = 0.0

    @classmethod
    def initial(cls, scenario: Scenario, poses: Mapping[int, Pose2D] | None = None) -> WorldState:
        poses = dict(poses) if poses is not None else {r.spec.id: r.pose for r in scenario.robots}
        rng = random.Random(scenario.seed)
        return cls(
            tick=0,
            poses=poses,
            blocked={rid: False for rid in poses},
            obstacles=tuple(scenario.obstacles),
            specs=scenario.specs,
            arena=scenario.arena,
            rng_state=rng.getstate(),
            noise_std=scenario.noise_std,
        )

    def pose(self, rid: int) -> Pose2D:
        try:
            return self.poses[rid]
        except KeyError:
            raise UnknownRobot(rid) from None


def _chord(linear: float, lateral: float, angular: float, theta: float, dt: float) -> tuple[float, float, float]:
    """Exact displacement for constant body-frame velocity under constant turn rate."""
    half = 0.5 * angular * dt
    if abs(half) < 1e-9:
        k = 1.0 - half * half / 6.0
    else:
        k = math.sin(half) / half
    heading = theta + half
    c, s = math.cos(heading), math.sin(heading)
    dx = (c * linear - s * lateral) * dt * k
    dy = (s * linear + c * lateral) * dt * k
    return dx, dy, theta + angular * dt


def integrate(pose: Pose2D, cmd: Command, dt: float) -> Pose2D:
    dx, dy, theta = _chord(cmd.linear, cmd.lateral, cmd.angular, pose.theta, dt)
    return Pose2D(pose.x + dx, pose.y + dy, theta)


def collides(x: float, y: float, radius: float, obstacles, arena) -> bool:
    xmin, ymin, xmax, ymax = arena
    if x - radius < xmin or x + radius > xmax or y - radius < ymin or y + radius > ymax:
        return True
    for o in obstacles:
        dx, dy, rr = x - o.x, y - o.y, radius + o.radius
        if dx * dx + dy * dy < rr * rr:
            return True
    return False


def step(world: WorldState, commands: Mapping[int, Command], dt: float) -> WorldState:
    """Advance one tick. Robots without a command stay still."""
    for rid in commands:
        if rid not in world.poses:
            raise UnknownRobot(rid)
    rng = None
    if world.noise_std > 0:
        rng = random.Random()
        rng.setstate(world.rng_state)
    poses = dict(world.poses)
    blocked = {}
    for rid in sorted(world.poses):
        pose = world.poses[rid]
        spec = world.specs[rid]
        cmd = commands.get(rid)
        if cmd is None:
            blocked[rid] = world.blocked.get(rid, False) if spec.kind is RobotKind.GROUND else False
            continue
        if spec.kind is RobotKind.GROUND and cmd.lateral != 0.0:
            raise ValueError(f"ground robot {rid} cannot move laterally")
        if rng is not None:
            cmd = Command(
                cmd.linear * (1.0 + rng.gauss(0.0, world.noise_std)),
                cmd.angular + rng.gauss(0.0, world.noise_std),
                cmd.lateral,
            )
        new = integrate(pose, cmd, dt)
        if spec.kind is RobotKind.GROUND and collides(new.x, new.y, spec.body_radius, world.obstacles, world.arena):
            poses[rid] = Pose2D(pose.x, pose.y, new.theta)
            blocked[rid] = True
        else:
            poses[rid] = new
            blocked[rid] = False
    return replace(
        world,
        tick=world.tick + 1,
        poses=poses,
        blocked=blocked,
        rng_state=rng.getstate() if rng is not None else world.rng_state,
    )


def sense(world: WorldState, observer: int) -> Perception:
    """Everything within the observer's sensing radius, in its body frame, ordered by id.

    Obstacles count by distance to their surface, robots by center distance.
    """
    me = world.pose(observer)
    reach = world.specs[observer].sensing_radius
    c, s = math.cos(me.theta), math.sin(me.theta)
    obstacles = []
    for o in sorted(world.obstacles, key=lambda o: o.id):
        dx, dy = o.x - me.x, o.y - me.y
        if math.hypot(dx, dy) - o.radius <= reach:
            obstacles.append(ObstacleSighting(o.id, c * dx + s * dy, -s * dx + c * dy, o.radius))
    robots = []
    for rid in sorted(world.poses):
        if rid == observer:
            continue
        p = world.poses[rid]
        dx, dy = p.x - me.x, p.y - me.y
        if math.hypot(dx, dy) <= reach:
            robots.append(RobotSighting(rid, world.specs[rid].kind, c * dx + s * dy, -s * dx + c * dy))
    return Perception(observer, world.tick, tuple(obstacles), tuple(robots))


def check_mission_complete(world: WorldState, scenario: Scenario) -> bool:
    return all(world.poses[rid].x > scenario.finish_line_x for rid in scenario.ground_ids)


def forward_progress(world_prev: WorldState, world: WorldState, robot_id: int) -> float:
    """Displacement along the mission axis (+x) between two snapshots."""
    return world.pose(robot_id).x - world_prev.pose(robot_id).x
