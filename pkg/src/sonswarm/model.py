"""Domain types: poses, velocities, robots, obstacles, scenarios, mission programs.

Also holds the two small pieces of geometry everything else leans on: the square
formation layout and the conversion from a desired planar velocity to a
differential-drive (linear, angular) pair.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import NamedTuple

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    r = math.remainder(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


@dataclass(frozen=True, slots=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def to_body(self, wx: float, wy: float) -> tuple[float, float]:
        """World point -> this pose's body frame."""
        dx, dy = wx - self.x, wy - self.y
        c, s = math.cos(self.theta), math.sin(self.theta)
        return c * dx + s * dy, -s * dx + c * dy

    def to_world(self, bx: float, by: float) -> tuple[float, float]:
        """Body-frame point -> world frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return self.x + c * bx - s * by, self.y + s * bx + c * by

    def relative_to(self, other: Pose2D) -> Pose2D:
        """This pose expressed in ``other``'s body frame."""
        bx, by = other.to_body(self.x, self.y)
        return Pose2D(bx, by, self.theta - other.theta)


@dataclass(frozen=True, slots=True)
class PlanarVelocity:
    """Body-frame velocity: forward ``vx``, lateral ``vy`` (left positive), angular ``w``."""

    vx: float = 0.0
    vy: float = 0.0
    w: float = 0.0

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def __add__(self, other: PlanarVelocity) -> PlanarVelocity:
        return PlanarVelocity(self.vx + other.vx, self.vy + other.vy, self.w + other.w)

    def rotated(self, angle: float) -> PlanarVelocity:
        """Rotate the translational part by ``angle`` (w unchanged)."""
        c, s = math.cos(angle), math.sin(angle)
        return PlanarVelocity(c * self.vx - s * self.vy, s * self.vx + c * self.vy, self.w)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.vx, self.vy, self.w))


ZERO_VELOCITY = PlanarVelocity()


class RobotKind(str, enum.Enum):
    GROUND = "ground"
    AERIAL = "aerial"


# Defaults loosely follow small ground robots and overhead quadrotors.
KIND_DEFAULTS: dict[RobotKind, dict[str, float]] = {
    RobotKind.GROUND: dict(body_radius=0.1, sensing_radius=0.8, v_max=0.2, w_max=1.5, comm_range=3.0),
    RobotKind.AERIAL: dict(body_radius=0.25, sensing_radius=3.0, v_max=0.3, w_max=1.0, comm_range=5.0),
}


@dataclass(frozen=True, slots=True)
class RobotSpec:
    id: int
    kind: RobotKind
    body_radius: float
    sensing_radius: float
    v_max: float
    w_max: float
    comm_range: float

    @classmethod
    def with_defaults(cls, id: int, kind: RobotKind | str, **overrides: float) -> RobotSpec:
        kind = RobotKind(kind)
        params = {**KIND_DEFAULTS[kind], **overrides}
        return cls(id=id, kind=kind, **params)

    @property
    def is_ground(self) -> bool:
        return self.kind is RobotKind.GROUND


@dataclass(frozen=True, slots=True)
class RobotSetup:
    spec: RobotSpec
    pose: Pose2D


@dataclass(frozen=True, slots=True)
class Obstacle:
    id: int
    x: float
    y: float
    radius: float


@dataclass(frozen=True)
class Scenario:
    robots: tuple[RobotSetup, ...]
    obstacles: tuple[Obstacle, ...]
    arena: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    formation_spacing: float
    d_safe: float
    target_speed: float
    theta1: int
    theta2: float
    theta3: float
    finish_line_x: float
    dt: float
    max_ticks: int
    seed: int
    # tunables with defaults
    k_w: float = 2.0
    k_f: float = 1.0
    epsilon: float | None = None
    formation_max_correction: float | None = None
    initial_brain: int | None = None
    llm_latency: int = 10
    cooldown: int = 20
    drop_prob: float = 0.0
    noise_std: float = 0.0
    pose_jitter: float = 0.0
    script_instructions: int = 1_000_000
    script_seconds: float = 0.05
    name: str = field(default="", compare=False)

    @property
    def progress_epsilon(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 0.2 * self.target_speed * self.dt

    @property
    def specs(self) -> dict[int, RobotSpec]:
        return {r.spec.id: r.spec for r in self.robots}

    @property
    def ground_ids(self) -> list[int]:
        return sorted(r.spec.id for r in self.robots if r.spec.is_ground)

    @property
    def aerial_ids(self) -> list[int]:
        return sorted(r.spec.id for r in self.robots if not r.spec.is_ground)

    def default_brain(self) -> int:
        if self.initial_brain is not None:
            return self.initial_brain
        aerial = self.aerial_ids
        return aerial[0] if aerial else min(r.spec.id for r in self.robots)


def program_hash(source: str) -> int:
    """64-bit content hash of a script."""
    return int.from_bytes(hashlib.blake2b(source.encode("utf-8"), digest_size=8).digest(), "big")


@dataclass(frozen=True, slots=True)
class MissionProgram:
    version: int
    source: str
    hash: int
    origin: str = "default"  # "default" | "llm:<request index>" | "canned:<name>"

    @classmethod
    def build(cls, version: int, source: str, origin: str = "default") -> MissionProgram:
        if version < 0:
            raise ValueError("version must be non-negative")
        return cls(version=version, source=source, hash=program_hash(source), origin=origin)


class Offset(NamedTuple):
    x: float
    y: float


def square_formation_targets(n_ground: int, spacing: float) -> list[Offset]:
    """Offsets of ``n_ground`` robots on a k x k grid, k = ceil(sqrt(n)).

    Cells are filled row-major; row 0 is the front row (largest x) and columns
    run from left (+y) to right. The result is recentered so the centroid of
    the used cells is the origin.
    """
    if n_ground < 1:
        raise ValueError("n_ground must be >= 1")
    if not spacing > 0:
        raise ValueError("spacing must be > 0")
    k = math.isqrt(n_ground)
    if k * k < n_ground:
        k += 1
    cells = [(-(i // k) * spacing, -(i % k) * spacing) for i in range(n_ground)]
    cx = math.fsum(c[0] for c in cells) / n_ground
    cy = math.fsum(c[1] for c in cells) / n_ground
    return [Offset(x - cx, y - cy) for x, y in cells]


def clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def clamp_velocity(v: PlanarVelocity, v_max: float, w_max: float) -> PlanarVelocity:
    """Scale the translational part into the v_max disk and clip w."""
    speed = v.speed
    vx, vy = v.vx, v.vy
    if speed > v_max:
        k = v_max / speed
        vx, vy = vx * k, vy * k
    return PlanarVelocity(vx, vy, clamp(v.w, -w_max, w_max))


def unicycle_convert(desired: PlanarVelocity, limits: RobotSpec, k_w: float = 2.0) -> tuple[float, float]:
    """Map a body-frame planar velocity onto a differential-drive (linear, angular).

    The robot turns toward the desired direction at rate ``k_w * phi`` (plus the
    requested ``w``) and only drives forward by the projection of the desired
    velocity on its heading. A desired direction straight behind resolves to a
    positive turn.
    """
    w_max = limits.w_max
    if desired.vx == 0.0 and desired.vy == 0.0:
        return 0.0, clamp(desired.w, -w_max, w_max)
    phi = math.atan2(desired.vy, desired.vx)
    if phi == -math.pi:
        phi = math.pi
    angular = clamp(k_w * phi + desired.w, -w_max, w_max)
    linear = clamp(desired.speed * max(0.0, math.cos(phi)), 0.0, limits.v_max)
    return linear, angular
