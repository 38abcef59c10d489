"""Conversation with a chat-completions endpoint (or the built-in mock) and code extraction."""

from __future__ import annotations

import logging
import os
import random
import time
from dataclasses import dataclass, field
from typing import Callable

import httpx

from .errors import (
    AuthError,
    MalformedReply,
    NoCodeBlock,
    PendingReply,
    RateLimited,
    ServerError,
    Timeout,
)
from .model import RobotKind, Scenario
from .runtime import DIALECT, ENTRY_POINT, HOST_RESERVED, canned_source
from .sons import GlobalEstimate

log = logging.getLogger(__name__)

OPENING = "I am a leader of a swarm, can you write some {dialect} program to control the swarm for me?"
HELP_REQUEST = "There seems to be something wrong, can you check what happened and improve my code?"
FENCE = "```"


@dataclass
class Conversation:
    """Append-only chat history."""

    messages: list[tuple[str, str]] = field(default_factory=list)
    request_count: int = 0
    reply_count: int = 0

    def append(self, role: str, content: str) -> None:
        if role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role {role!r}")
        self.messages.append((role, content))
        if role == "assistant":
            self.reply_count += 1

    @property
    def awaiting_reply(self) -> bool:
        return self.request_count > self.reply_count

    def as_payload(self) -> list[dict]:
        return [{"role": r, "content": c} for r, c in self.messages]


@dataclass(frozen=True)
class PromptContext:
    """Everything the opening message describes about the swarm."""

    n_ground: int
    n_aerial: int
    ground_radius: float
    aerial_radius: float
    ground_sensing: float
    aerial_sensing: float
    v_max: float
    w_max: float
    obstacle_radii: tuple[float, float]
    d_safe: float
    target_speed: float
    theta2: float
    theta3: float
    dt: float
    dialect: str = DIALECT

    @classmethod
    def from_scenario(cls, s: Scenario) -> PromptContext:
        ground = [r.spec for r in s.robots if r.spec.kind is RobotKind.GROUND]
        aerial = [r.spec for r in s.robots if r.spec.kind is RobotKind.AERIAL]
        radii = [o.radius for o in s.obstacles] or [0.0]
        return cls(
            n_ground=len(ground),
            n_aerial=len(aerial),
            ground_radius=ground[0].body_radius,
            aerial_radius=aerial[0].body_radius if aerial else 0.0,
            ground_sensing=ground[0].sensing_radius,
            aerial_sensing=aerial[0].sensing_radius if aerial else 0.0,
            v_max=min(g.v_max for g in ground),
            w_max=min(g.w_max for g in ground),
            obstacle_radii=(min(radii), max(radii)),
            d_safe=s.d_safe,
            target_speed=s.target_speed,
            theta2=s.theta2,
            theta3=s.theta3,
            dt=s.dt,
        )


def _f(x: float) -> str:
    return f"{x:.3f}"


def prepare_conversation(ctx: PromptContext) -> Conversation:
    """The opening user message: who is asking, then five context sections."""
    d = ctx.dialect
    parts = [
        OPENING.format(dialect=d),
        "",
        "## SoNS context",
        "The robots form a self-organizing nervous system (SoNS): a tree of robots rooted at one brain "
        "robot. Motion is split into two velocity components. The global component "
        "(v_global, w_global) is decided by the brain and forwarded down the tree every step, so every "
        "robot moves with the swarm and the host keeps the square formation around it. The local "
        "component (v_local, w_local) is added by each robot on its own, for example to keep away from "
        "obstacles. Sensor data flows up the tree, so the brain sees an estimate of the whole swarm "
        "and its surroundings.",
        "",
        "## Robot capabilities",
        f"- {ctx.n_ground} ground robots: differential drive (forward speed and turn rate only, no sideways "
        f"motion), max speed {_f(ctx.v_max)} m/s, max turn rate {_f(ctx.w_max)} rad/s.",
        f"- {ctx.n_aerial} aerial robots hovering above the ground robots; one of them is the brain.",
        "- Every robot works in its own relative coordinate frame: x points forward, y to the left, "
        "units are meters.",
        f"- Sensing: ground robots detect robots and obstacles within {_f(ctx.ground_sensing)} m, aerial "
        f"robots within {_f(ctx.aerial_sensing)} m.",
        "",
        "## Environment",
        f"- Ground robot radius {_f(ctx.ground_radius)} m, aerial robot radius {_f(ctx.aerial_radius)} m.",
        f"- Obstacles are cylinders with radius between {_f(ctx.obstacle_radii[0])} and "
        f"{_f(ctx.obstacle_radii[1])} m; their positions are not known in advance.",
        f"- Desired safety distance to an obstacle: {_f(ctx.d_safe)} m.",
        f"- Tuning thresholds available to the program: theta2 = {_f(ctx.theta2)}, theta3 = {_f(ctx.theta3)}.",
        f"- Control step: {_f(ctx.dt)} s.",
        "",
        "## Mission goal",
        f"All robots move forward at a desired speed of {_f(ctx.target_speed)} m/s while keeping the "
        "square formation.",
        "",
        "## Code format",
        f"Write {d} code that defines one function `{ENTRY_POINT}(ctx)`, called once per step on every robot.",
        "`ctx` is read-only:",
        "- ctx.self_id, ctx.is_brain, ctx.tick, ctx.kind (\"ground\" or \"aerial\")",
        "- ctx.constants: target_speed, theta2, theta3, d_safe, body_radius, dt",
        "- ctx.perception.obstacles: list of {id, x, y, radius, distance} (distance = gap between the "
        "robot body and the obstacle surface)",
        "- ctx.perception.robots: list of {id, kind, x, y}",
        "- ctx.command: the global command {x, y, w} this robot last received",
        "- ctx.estimate (brain only): obstacles {id, x, y, radius, age} and robots "
        "{id, kind, x, y, blocked, age} in the brain's frame",
        "Return a table {v_local = {x, y, w}, v_global = {x, y, w}}; v_global is only used on the brain. "
        "Only math, string, table, pairs, ipairs and similar pure helpers are available. "
        f"These names are reserved by the robot and must not be used: {', '.join(sorted(HOST_RESERVED))}.",
        "This is the program the robots run now:",
        f"{FENCE}{d}",
        canned_source("default"),
        FENCE,
    ]
    conv = Conversation()
    conv.append("user", "\n".join(parts))
    return conv


def describe_estimate(estimate: GlobalEstimate) -> list[str]:
    lines = []
    for e in estimate.obstacles():
        lines.append(f"- obstacle {e.id}: x={_f(e.x)}, y={_f(e.y)}, radius={_f(e.radius)}")
    for e in estimate.robots():
        kind = e.robot_kind.value if e.robot_kind else "unknown"
        flag = "yes" if estimate.blocked(e.id) else "no"
        lines.append(f"- robot {e.id} ({kind}): x={_f(e.x)}, y={_f(e.y)}, stuck={flag}")
    return lines


def request_help(conv: Conversation, estimate: GlobalEstimate) -> Conversation:
    """Append the sensor dump and the help request as one user message."""
    if conv.awaiting_reply:
        raise PendingReply("previous request has no reply yet")
    lines = describe_estimate(estimate)
    body = [
        f"Positional information of everything I detect (my frame, meters), {len(lines)} entities:",
        *(lines or ["- (none)"]),
        "",
        HELP_REQUEST,
    ]
    conv.append("user", "\n".join(body))
    conv.request_count += 1
    return conv


def extract_code(reply: str) -> str:
    """Contents of the last complete triple-backtick block, minus its language tag."""
    blocks = []
    current: list[str] | None = None
    for line in reply.split("\n"):
        line = line.removesuffix("\r")
        if line.lstrip().startswith(FENCE):
            if current is None:
                current = []
            else:
                blocks.append(current)
                current = None
        elif current is not None:
            current.append(line)
    if not blocks:
        raise NoCodeBlock("reply has no fenced code block")
    lines = blocks[-1]
    while lines and not lines[0].strip():
        lines = lines[1:]
    while lines and not lines[-1].strip():
        lines = lines[:-1]
    return "\n".join(lines)


def wrap_in_fence(source: str, lang: str = DIALECT) -> str:
    return f"{FENCE}{lang}\n{source}\n{FENCE}"


# --- endpoint --------------------------------------------------------------


@dataclass(frozen=True)
class LlmEndpointConfig:
    base_url: str = "https://openrouter.ai/api/v1"
    model: str = "deepseek/deepseek-r1"
    api_key_env: str = "OPENROUTER_API_KEY"
    timeout: float = 300.0
    max_retries: int = 3
    backoff: float = 2.0

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")

    @property
    def api_key(self) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise AuthError(f"environment variable {self.api_key_env} is not set")
        return key


def send_chat(
    config: LlmEndpointConfig,
    conv: Conversation,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
    events: list | None = None,
) -> str:
    """POST the conversation; return the first choice's content and append it to ``conv``.

    Retries 429, 5xx and timeouts with exponential backoff. ``events`` (if given)
    receives one dict per retry.
    """
    headers = {"Authorization": f"Bearer {config.api_key}", "Content-Type": "application/json"}
    body = {"model": config.model, "messages": conv.as_payload()}
    url = config.base_url.rstrip("/") + "/chat/completions"
    own_client = client is None
    client = client or httpx.Client(timeout=config.timeout)
    try:
        attempt = 0
        while True:
            failure: Exception
            try:
                resp = client.post(url, json=body, headers=headers, timeout=config.timeout)
            except httpx.TimeoutException as exc:
                failure = Timeout(str(exc) or "request timed out")
            else:
                status = resp.status_code
                if 200 <= status < 300:
                    try:
                        content = resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise MalformedReply(f"no choices[0].message.content in reply: {exc}") from exc
                    if not isinstance(content, str):
                        raise MalformedReply("reply content is not text")
                    conv.append("assistant", content)
                    return content
                if status in (401, 403):
                    raise AuthError(f"HTTP {status}")
                if status == 429:
                    failure = RateLimited("HTTP 429")
                elif status >= 500:
                    failure = ServerError(f"HTTP {status}")
                else:
                    raise ServerError(f"HTTP {status}: {resp.text[:200]}")
            if attempt >= config.max_retries:
                raise failure
            delay = config.backoff * 2**attempt
            attempt += 1
            log.warning("chat request failed (%s), retry %d in %.1fs", failure, attempt, delay)
            if events is not None:
                events.append({"retry": attempt, "error": type(failure).__name__, "delay": delay})
            sleep(delay)
    finally:
        if own_client:
            client.close()


# --- mock ------------------------------------------------------------------

MOCK_MODES = ("example1", "example2", "faulty", "alternate")

_PREAMBLES = {
    "example1": (
        "The positions show several ground robots pressed against obstacles: the current program has no "
        "obstacle avoidance, so they keep driving into them. Below, every robot now steers away from "
        "obstacles that are closer than theta2, and because the robots use differential drive the "
        "sideways part of that motion is enlarged so they turn and go around instead of stalling."
    ),
    "example2": (
        "Some robots are blocked by obstacles directly in front of them. In the updated program each "
        "robot moves away from nearby obstacles, and the brain checks whether anything is within theta3 "
        "ahead of the swarm; if so it slows down and moves the swarm toward the side with fewer obstacles."
    ),
    "faulty": (
        "The robots stop because obstacles are in the way. The new program makes each robot back away "
        "from close obstacles and keeps the swarm moving forward at full speed, so it no longer needs to "
        "wait for anyone."
    ),
}


def alternate_pick(seed: int) -> str:
    """Seeded choice between the two working examples."""
    return "example1" if random.Random(seed).random() < 0.5 else "example2"


def resolve_mock_mode(mode: str, seed: int = 0) -> str:
    if mode not in MOCK_MODES:
        raise ValueError(f"unknown mock mode {mode!r}; expected one of {', '.join(MOCK_MODES)}")
    return alternate_pick(seed) if mode == "alternate" else mode


def mock_llm(conv: Conversation, mode: str, seed: int = 0) -> str:
    """Deterministic canned reply: a short explanation and one fenced script."""
    name = resolve_mock_mode(mode, seed)
    return f"{_PREAMBLES[name]}\n\n{wrap_in_fence(canned_source(name))}\n"
