"""Scenario files: strict ``key = value`` text with ``[robot]`` / ``[obstacle]`` sections.

Example::

    dt = 0.1
    seed = 7
    arena = -2 -3 8 3
    ...

    [robot]
    kind = ground
    x = 0.0
    y = 0.25

    [obstacle]
    x = 2.0
    y = 0.3
    radius = 0.25
"""

from __future__ import annotations

import math
import random
from dataclasses import fields, replace
from importlib import resources
from pathlib import Path

from .errors import ParseError, ValidationError
from .model import (
    KIND_DEFAULTS,
    Obstacle,
    Pose2D,
    RobotKind,
    RobotSetup,
    RobotSpec,
    Scenario,
    square_formation_targets,
)

REQUIRED_KEYS = {
    "dt": float,
    "seed": int,
    "max_ticks": int,
    "target_speed": float,
    "theta1": int,
    "theta2": float,
    "theta3": float,
    "d_safe": float,
    "formation_spacing": float,
    "finish_line_x": float,
    "arena": None,  # four floats
}
OPTIONAL_KEYS = {
    "name": str,
    "k_w": float,
    "k_f": float,
    "epsilon": float,
    "formation_max_correction": float,
    "initial_brain": int,
    "llm_latency": int,
    "cooldown": int,
    "drop_prob": float,
    "noise_std": float,
    "pose_jitter": float,
    "script_instructions": int,
    "script_seconds": float,
}
ROBOT_KEYS = {"kind", "x", "y", "theta", "id", *KIND_DEFAULTS[RobotKind.GROUND]}
OBSTACLE_KEYS = {"id", "x", "y", "radius"}

BUNDLED = ("demo", "sim")


def _number(raw: str, kind, where: str):
    try:
        if kind is int:
            value = int(raw, 0)
        else:
            value = float(raw)
    except ValueError:
        raise ParseError(f"{where}: expected {kind.__name__}, got {raw!r}") from None
    if kind is float and not math.isfinite(value):
        raise ParseError(f"{where}: non-finite value {raw!r}")
    return value


def parse_scenario(text: str, name: str = "") -> Scenario:
    """Parse and validate scenario text."""
    top: dict[str, str] = {}
    sections: list[tuple[str, int, dict[str, str]]] = []
    current = top
    allowed = set(REQUIRED_KEYS) | set(OPTIONAL_KEYS)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        if line.startswith("["):
            if line not in ("[robot]", "[obstacle]"):
                raise ParseError(f"{where}: unknown section {line!r}")
            current = {}
            kind = line[1:-1]
            sections.append((kind, lineno, current))
            allowed = ROBOT_KEYS if kind == "robot" else OBSTACLE_KEYS
            continue
        if "=" not in line:
            raise ParseError(f"{where}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in allowed:
            raise ParseError(f"{where}: unknown key {key!r}")
        if key in current:
            raise ParseError(f"{where}: duplicate key {key!r}")
        current[key] = value

    missing = sorted(set(REQUIRED_KEYS) - set(top))
    if missing:
        raise ParseError(f"missing required keys: {', '.join(missing)}")

    kwargs: dict = {}
    for key, value in top.items():
        kind = REQUIRED_KEYS.get(key, OPTIONAL_KEYS.get(key))
        if key == "arena":
            parts = value.split()
            if len(parts) != 4:
                raise ParseError("arena: expected 'xmin ymin xmax ymax'")
            kwargs[key] = tuple(_number(p, float, "arena") for p in parts)
        elif kind is str:
            kwargs[key] = value
        else:
            kwargs[key] = _number(value, kind, key)
    kwargs.setdefault("name", name)

    robots: list[RobotSetup] = []
    obstacles: list[Obstacle] = []
    for kind, lineno, values in sections:
        where = f"[{kind}] at line {lineno}"
        if kind == "robot":
            for req in ("kind", "x", "y"):
                if req not in values:
                    raise ParseError(f"{where}: missing {req!r}")
            try:
                rkind = RobotKind(values["kind"])
            except ValueError:
                raise ParseError(f"{where}: unknown robot kind {values['kind']!r}") from None
            rid = _number(values["id"], int, where) if "id" in values else len(robots) + 1
            overrides = {
                k: _number(v, float, where) for k, v in values.items() if k in KIND_DEFAULTS[rkind]
            }
            pose = Pose2D(
                _number(values["x"], float, where),
                _number(values["y"], float, where),
                _number(values.get("theta", "0"), float, where),
            )
            robots.append(RobotSetup(RobotSpec.with_defaults(rid, rkind, **overrides), pose))
        else:
            for req in ("x", "y", "radius"):
                if req not in values:
                    raise ParseError(f"{where}: missing {req!r}")
            oid = _number(values["id"], int, where) if "id" in values else len(obstacles) + 1
            obstacles.append(
                Obstacle(
                    oid,
                    _number(values["x"], float, where),
                    _number(values["y"], float, where),
                    _number(values["radius"], float, where),
                )
            )

    scenario = Scenario(robots=tuple(robots), obstacles=tuple(obstacles), **kwargs)
    validate_scenario(scenario)
    return scenario


def validate_scenario(s: Scenario) -> None:
    """Raise ValidationError on the first violated invariant."""
    if not s.robots:
        raise ValidationError("scenario has no robots")
    if not s.ground_ids:
        raise ValidationError("scenario has no ground robots")
    ids = [r.spec.id for r in s.robots]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate robot ids")
    oids = [o.id for o in s.obstacles]
    if len(set(oids)) != len(oids):
        raise ValidationError("duplicate obstacle ids")
    if not s.dt > 0:
        raise ValidationError("dt must be > 0")
    if s.theta1 < 1:
        raise ValidationError("theta1 must be >= 1")
    if s.max_ticks < 1:
        raise ValidationError("max_ticks must be >= 1")
    if not 0 <= s.seed < 2**64:
        raise ValidationError("seed must fit in 64 unsigned bits")
    for name in ("target_speed", "formation_spacing", "theta2"):
        if not getattr(s, name) > 0:
            raise ValidationError(f"{name} must be > 0")
    if s.d_safe < 0:
        raise ValidationError("d_safe must be >= 0")
    if not 0.0 <= s.drop_prob < 1.0:
        raise ValidationError("drop_prob must be in [0, 1)")
    xmin, ymin, xmax, ymax = s.arena
    if not (xmin < xmax and ymin < ymax):
        raise ValidationError("arena bounds are empty")
    if s.initial_brain is not None and s.initial_brain not in ids:
        raise ValidationError(f"initial_brain {s.initial_brain} is not a robot")

    ground_sensing = [r.spec.sensing_radius for r in s.robots if r.spec.is_ground]
    aerial_sensing = [r.spec.sensing_radius for r in s.robots if not r.spec.is_ground]
    if aerial_sensing and min(aerial_sensing) < max(ground_sensing):
        raise ValidationError("aerial sensing radius must be >= ground sensing radius")
    for r in s.robots:
        spec, pose = r.spec, r.pose
        if not spec.sensing_radius > spec.body_radius:
            raise ValidationError(f"robot {spec.id}: sensing_radius must exceed body_radius")
        if min(spec.body_radius, spec.v_max, spec.w_max, spec.comm_range) <= 0:
            raise ValidationError(f"robot {spec.id}: radii and limits must be positive")
        if not (xmin <= pose.x <= xmax and ymin <= pose.y <= ymax):
            raise ValidationError(f"robot {spec.id}: initial pose outside arena")
        if spec.is_ground:
            # aerial robots hover above obstacles
            for o in s.obstacles:
                if math.hypot(pose.x - o.x, pose.y - o.y) < spec.body_radius + o.radius + s.d_safe:
                    raise ValidationError(
                        f"robot {spec.id} starts inside obstacle {o.id} inflated by d_safe"
                    )
    for o in s.obstacles:
        if not o.radius > 0:
            raise ValidationError(f"obstacle {o.id}: radius must be > 0")


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario file, or a bundled scenario by name ("demo", "sim")."""
    path = resolve_scenario_path(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 text") from exc
    return parse_scenario(text, name=Path(path).stem)


def resolve_scenario_path(path: str | Path) -> Path:
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        return bundled_scenario_path(str(path))
    return p


def bundled_scenario_path(name: str) -> Path:
    ref = resources.files("sonswarm") / "scenarios" / f"{name}.scn"
    return Path(str(ref))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_scenario(s: Scenario) -> str:
    """Serialize to the scenario text format (round-trips through parse_scenario)."""
    lines = []
    if s.name:
        lines.append(f"name = {s.name}")
    for key in REQUIRED_KEYS:
        v = getattr(s, key)
        lines.append(f"arena = {' '.join(_fmt(float(a)) for a in v)}" if key == "arena" else f"{key} = {_fmt(v)}")
    defaults = {f.name: f.default for f in fields(Scenario) if f.name in OPTIONAL_KEYS}
    for key in OPTIONAL_KEYS:
        if key == "name":
            continue
        v = getattr(s, key)
        if v != defaults[key]:
            lines.append(f"{key} = {_fmt(v)}")
    for r in s.robots:
        spec = r.spec
        lines += ["", "[robot]", f"id = {spec.id}", f"kind = {spec.kind.value}",
                  f"x = {_fmt(r.pose.x)}", f"y = {_fmt(r.pose.y)}", f"theta = {_fmt(r.pose.theta)}"]
        for key, default in KIND_DEFAULTS[spec.kind].items():
            if getattr(spec, key) != default:
                lines.append(f"{key} = {_fmt(getattr(spec, key))}")
    for o in s.obstacles:
        lines += ["", "[obstacle]", f"id = {o.id}", f"x = {_fmt(o.x)}", f"y = {_fmt(o.y)}",
                  f"radius = {_fmt(o.radius)}"]
    return "\n".join(lines) + "\n"


# --- layouts for the bundled scenarios -------------------------------------


def formation_robots(
    n_ground: int,
    n_aerial: int,
    spacing: float,
    aerial_spacing: float,
    center: tuple[float, float] = (0.0, 0.0),
) -> tuple[RobotSetup, ...]:
    """Ground robots on the square formation, aerial robots on a wider square above it.

    Ground ids come first (1..n_ground) so the lowest-id aerial robot is ``n_ground + 1``.
    """
    cx, cy = center
    robots = [
        RobotSetup(RobotSpec.with_defaults(i + 1, RobotKind.GROUND), Pose2D(cx + ox, cy + oy))
        for i, (ox, oy) in enumerate(square_formation_targets(n_ground, spacing))
    ]
    if n_aerial:
        for j, (ox, oy) in enumerate(square_formation_targets(n_aerial, aerial_spacing)):
            robots.append(
                RobotSetup(RobotSpec.with_defaults(n_ground + j + 1, RobotKind.AERIAL), Pose2D(cx + ox, cy + oy))
            )
    return tuple(robots)


def slice_gaps_ok(obstacles, ymin: float, ymax: float, min_gap: float, x0: float, x1: float, step: float = 0.02) -> bool:
    """True if every x-slice in [x0, x1] leaves a free y-interval of at least ``min_gap``."""
    x = x0
    while x <= x1:
        blocked = []
        for o in obstacles:
            dx = abs(x - o.x)
            if dx < o.radius:
                half = math.sqrt(o.radius**2 - dx**2)
                blocked.append((o.y - half, o.y + half))
        blocked.sort()
        best, cursor = 0.0, ymin
        for lo, hi in blocked:
            best = max(best, lo - cursor)
            cursor = max(cursor, hi)
        best = max(best, ymax - cursor)
        if best < min_gap:
            return False
        x += step
    return True


def random_obstacle_band(
    seed: int,
    count: int,
    x_band: tuple[float, float],
    y_band: tuple[float, float],
    radius_range: tuple[float, float],
    min_clearance: float,
    arena_y: tuple[float, float],
) -> tuple[Obstacle, ...]:
    """Seeded random circular obstacles with pairwise surface clearance ``min_clearance``.

    Rejection-samples until ``count`` obstacles fit, and re-draws the whole set if
    some x-slice no longer has a gap of ``min_clearance``.
    """
    rng = random.Random(seed)
    for _attempt in range(1000):
        placed: list[Obstacle] = []
        tries = 0
        while len(placed) < count and tries < 20000:
            tries += 1
            r = rng.uniform(*radius_range)
            x = rng.uniform(*x_band)
            y = rng.uniform(*y_band)
            if all(math.hypot(x - o.x, y - o.y) >= r + o.radius + min_clearance for o in placed):
                placed.append(Obstacle(len(placed) + 1, round(x, 3), round(y, 3), round(r, 3)))
        if len(placed) == count and slice_gaps_ok(placed, *arena_y, min_clearance, *x_band):
            return tuple(placed)
    raise ValidationError("could not place a feasible obstacle layout")


def demo_scenario() -> Scenario:
    """4 ground + 2 aerial robots, 2 obstacles."""
    robots = formation_robots(4, 2, spacing=0.5, aerial_spacing=1.0)
    obstacles = (Obstacle(1, 2.0, 0.3, 0.25), Obstacle(2, 2.8, -0.35, 0.25))
    return Scenario(
        name="demo",
        robots=robots,
        obstacles=obstacles,
        arena=(-2.0, -3.0, 8.0, 3.0),
        formation_spacing=0.5,
        d_safe=0.1,
        target_speed=0.1,
        theta1=50,
        theta2=0.3,
        theta3=0.1,
        finish_line_x=3.6,
        dt=0.1,
        max_ticks=12000,
        seed=1,
        formation_max_correction=0.05,
    )


def sim_scenario(layout_seed: int = 2025) -> Scenario:
    """25 ground + 9 aerial robots, 15 seeded-random obstacles."""
    robots = formation_robots(25, 9, spacing=0.6, aerial_spacing=1.2)
    d_safe, body = 0.1, KIND_DEFAULTS[RobotKind.GROUND]["body_radius"]
    obstacles = random_obstacle_band(
        layout_seed,
        15,
        x_band=(2.5, 7.0),
        y_band=(-2.0, 2.0),
        radius_range=(0.15, 0.3),
        min_clearance=2 * (body + d_safe),
        arena_y=(-5.0, 5.0),
    )
    far = max(o.x + o.radius for o in obstacles)
    return Scenario(
        name="sim",
        robots=robots,
        obstacles=obstacles,
        arena=(-3.0, -5.0, 20.0, 5.0),
        formation_spacing=0.6,
        d_safe=d_safe,
        target_speed=0.1,
        theta1=50,
        theta2=0.3,
        theta3=0.1,
        finish_line_x=round(far + 0.5, 3),
        dt=0.1,
        max_ticks=12000,
        seed=layout_seed,
        formation_max_correction=0.05,
        pose_jitter=0.05,
    )


def write_bundled(directory: str | Path | None = None) -> None:
    """Regenerate the bundled ``demo.scn`` and ``sim.scn``."""
    directory = Path(directory) if directory else bundled_scenario_path("demo").parent
    for s in (demo_scenario(), sim_scenario()):
        (directory / f"{s.name}.scn").write_text(dump_scenario(s), encoding="utf-8")


def without_obstacles(s: Scenario) -> Scenario:
    return replace(s, obstacles=())


if __name__ == "__main__":
    write_bundled()
