"""Mission-script host.

Robot software is split in two. The static host (this module plus the SoNS
plumbing and the harness) owns stuck detection, the safety clamp and all
messaging. The replaceable part is a single Lua function ``mission(ctx)``
that returns local and, at the brain, global velocity commands.

Scripts run in an empty environment that only exposes pure helpers; every
call is bounded by an instruction count and a CPU-time limit.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass, replace
from importlib import resources
from typing import NamedTuple

from lupa import lua54

from .errors import (
    BudgetExceeded,
    CompileFailed,
    ForbiddenApi,
    MissingEntryPoint,
    ScriptError,
    ScriptRuntimeError,
    ScriptSyntaxError,
)
from .model import (
    MissionProgram,
    PlanarVelocity,
    RobotSpec,
    ZERO_VELOCITY,
    clamp_velocity,
)
from .sim import Perception
from .sons import GlobalEstimate

DIALECT = "lua"
ENTRY_POINT = "mission"

# Names a script may not mention. The first group would break the sandbox or
# determinism; the second belongs to the static host.
FORBIDDEN_GLOBALS = frozenset(
    {
        "os", "io", "debug", "require", "load", "loadstring", "loadfile", "dofile",
        "package", "collectgarbage", "coroutine", "setmetatable", "getmetatable",
        "rawset", "rawget", "rawequal", "rawlen", "_G", "_ENV", "pcall", "xpcall",
        "setfenv", "getfenv", "module", "newproxy", "jit", "python",
    }
)
HOST_RESERVED = frozenset(
    {"request_help", "stuck_monitor", "update_stuck_monitor", "send_program", "send_command", "sons_send"}
)

_BUDGET_TOKEN = "__sonswarm_budget__"

_SANDBOX_LUA = """
local pairs, ipairs, next, type, tostring, tonumber, select, error, assert =
      pairs, ipairs, next, type, tostring, tonumber, select, error, assert
local math, string, table = math, string, table
local function copy(t) local r = {} for k, v in pairs(t) do r[k] = v end return r end
local base_math = copy(math); base_math.randomseed = nil
local base_string = copy(string); base_string.dump = nil
local base_table = copy(table)
return function(print_fn)
  return {
    math = copy(base_math), string = copy(base_string), table = copy(base_table),
    pairs = pairs, ipairs = ipairs, next = next, type = type, tostring = tostring,
    tonumber = tonumber, select = select, error = error, assert = assert,
    unpack = table.unpack, print = print_fn,
  }
end
"""

_GUARD_LUA = """
local sethook, clock, pcall, tostring = debug.sethook, os.clock, pcall, tostring
local TOKEN = "%s"
return function(fn, arg, budget, limit)
  local count = 0
  local deadline = clock() + limit
  sethook(function()
    count = count + 1000
    if count > budget or clock() > deadline then
      sethook()
      error(TOKEN, 0)
    end
  end, "", 1000)
  local ok, res = pcall(fn, arg)
  sethook()
  if ok then return true, res end
  if res == TOKEN then return false, TOKEN end
  return false, tostring(res)
end
""" % _BUDGET_TOKEN


class Budget(NamedTuple):
    instructions: int = 1_000_000
    seconds: float = 0.05


# --- static checks ---------------------------------------------------------

_LONG_OPEN = re.compile(r"\[(=*)\[")


def strip_lua(source: str) -> str:
    """Blank out comments and string literals, keeping everything else in place."""
    out = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if source.startswith("--", i):
            m = _LONG_OPEN.match(source, i + 2)
            if m:
                close = "]" + m.group(1) + "]"
                end = source.find(close, m.end())
                i = n if end < 0 else end + len(close)
            else:
                end = source.find("\n", i)
                i = n if end < 0 else end
            out.append(" ")
            continue
        if ch == "[":
            m = _LONG_OPEN.match(source, i)
            if m:
                close = "]" + m.group(1) + "]"
                end = source.find(close, m.end())
                i = n if end < 0 else end + len(close)
                out.append('""')
                continue
        if ch in "\"'":
            j = i + 1
            while j < n and source[j] != ch and source[j] != "\n":
                j += 2 if source[j] == "\\" else 1
            i = j + 1
            out.append('""')
            continue
        out.append(ch)
        i += 1
    return "".join(out)


_TOKEN = re.compile(r"[A-Za-z_]\w*|\.\.\.?|[.:]|\S")


def global_names(source: str) -> set[str]:
    """Identifiers that are not field names (i.e. not right after ``.`` or ``:``)."""
    names = set()
    prev = ""
    for m in _TOKEN.finditer(strip_lua(source)):
        tok = m.group()
        if (tok[0].isalpha() or tok[0] == "_") and prev not in (".", ":"):
            names.add(tok)
        prev = tok
    return names


def check_forbidden(source: str) -> None:
    bad = global_names(source) & (FORBIDDEN_GLOBALS | HOST_RESERVED)
    if bad:
        raise ForbiddenApi(f"script references reserved names: {', '.join(sorted(bad))}")


# --- Lua host --------------------------------------------------------------


class _LuaSandbox:
    """One Lua state with a sandboxed-environment factory and a budget guard."""

    def __init__(self, seed: int = 0, max_memory: int = 32 * 2**20):
        self.lua = lua54.LuaRuntime(
            register_eval=False,
            register_builtins=False,
            unpack_returned_tuples=True,
            max_memory=max_memory,
        )
        g = self.lua.globals()
        g.math.randomseed(seed & 0x7FFFFFFF)
        self._make_env = self.lua.execute(_SANDBOX_LUA)
        self._guard = self.lua.execute(_GUARD_LUA)
        self._load = self.lua.eval(
            'function(src, env) local f, e = load(src, "=mission", "t", env) return f or false, e or "" end'
        )
        self.printed: deque[str] = deque(maxlen=50)

    def _print(self, *args) -> None:
        self.printed.append(" ".join(str(a) for a in args))

    def load(self, source: str, budget: Budget):
        """Compile and run the chunk in a fresh env; return the entry function."""
        check_forbidden(source)
        env = self._make_env(self._print)
        chunk, err = self._load(source, env)
        if chunk is False:
            raise ScriptSyntaxError(str(err))
        self.call(chunk, None, budget)
        fn = env[ENTRY_POINT]
        if self.lua.globals().type(fn) != "function":
            raise MissingEntryPoint(f"script does not define function {ENTRY_POINT}(ctx)")
        return fn

    def call(self, fn, arg, budget: Budget):
        try:
            ok, res = self._guard(fn, arg, budget.instructions, budget.seconds)
        except Exception as exc:  # lupa memory errors surface here
            raise ScriptRuntimeError(str(exc)) from exc
        if ok:
            return res
        if res == _BUDGET_TOKEN:
            raise BudgetExceeded(f"script exceeded {budget.instructions} instructions or {budget.seconds}s")
        raise ScriptRuntimeError(res)

    def table(self, obj):
        return self.lua.table_from(obj, recursive=True)


_checker: _LuaSandbox | None = None


def _shared_checker() -> _LuaSandbox:
    global _checker
    if _checker is None:
        _checker = _LuaSandbox()
    return _checker


def compile_mission(
    source: str,
    version: int | None = None,
    *,
    current_version: int = -1,
    origin: str = "default",
    budget: Budget = Budget(),
) -> MissionProgram:
    """Validate a script and wrap it as a MissionProgram.

    Without an explicit ``version`` the program gets ``current_version + 1``.
    Raises ScriptSyntaxError, MissingEntryPoint or ForbiddenApi (also
    ScriptRuntimeError / BudgetExceeded if top-level code fails).
    """
    _shared_checker().load(source, budget)
    if version is None:
        version = current_version + 1
    return MissionProgram.build(version, source, origin)


def canned_source(name: str) -> str:
    """Source of a bundled script: ``default``, ``example1``, ``example2`` or ``faulty``."""
    ref = resources.files("sonswarm") / "scripts" / f"{name}.lua"
    return ref.read_text(encoding="utf-8").rstrip("\n")


def default_mission() -> MissionProgram:
    return MissionProgram.build(0, canned_source("default"), "default")


# --- context / output ------------------------------------------------------


@dataclass(frozen=True)
class MissionContext:
    self_id: int
    is_brain: bool
    perception: Perception
    received_global_cmd: PlanarVelocity
    constants: dict
    tick: int
    global_estimate: GlobalEstimate | None = None
    kind: str = "ground"
    body_radius: float = 0.1

    def __post_init__(self) -> None:
        if (self.global_estimate is not None) != self.is_brain:
            raise ValueError("global_estimate must be present exactly when is_brain")

    def to_plain(self) -> dict:
        """Plain dict/list form handed to the script (see the ABI in the prompt)."""
        r = self.body_radius
        obstacles = [
            {"id": o.id, "x": o.x, "y": o.y, "radius": o.radius,
             "distance": math.hypot(o.x, o.y) - o.radius - r}
            for o in self.perception.obstacles_rel
        ]
        robots = [{"id": s.id, "kind": s.kind.value, "x": s.x, "y": s.y} for s in self.perception.robots_rel]
        cmd = self.received_global_cmd
        plain = {
            "self_id": self.self_id,
            "is_brain": self.is_brain,
            "tick": self.tick,
            "kind": self.kind,
            "constants": dict(self.constants),
            "perception": {"obstacles": obstacles, "robots": robots},
            "command": {"x": cmd.vx, "y": cmd.vy, "w": cmd.w},
        }
        est = self.global_estimate
        if est is not None:
            plain["estimate"] = {
                "obstacles": [
                    {"id": e.id, "x": e.x, "y": e.y, "radius": e.radius, "age": est.tick - e.sensed_tick}
                    for e in est.obstacles()
                ],
                "robots": [
                    {"id": e.id, "kind": e.robot_kind.value if e.robot_kind else "unknown",
                     "x": e.x, "y": e.y, "blocked": est.blocked(e.id), "age": est.tick - e.sensed_tick}
                    for e in est.robots()
                ],
            }
        return plain


@dataclass(frozen=True)
class MissionOutput:
    v_local: PlanarVelocity = ZERO_VELOCITY
    v_global: PlanarVelocity | None = None


def _velocity(table, what: str) -> PlanarVelocity | None:
    if table is None:
        return None
    try:
        vals = [table[k] for k in ("x", "y", "w")]
    except (TypeError, KeyError):
        raise ScriptRuntimeError(f"{what} must be a table with x, y, w") from None
    out = []
    for v in vals:
        if v is None:
            v = 0.0
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ScriptRuntimeError(f"{what} fields must be numbers")
        out.append(float(v))
    vel = PlanarVelocity(*out)
    if not vel.is_finite():
        raise ScriptRuntimeError(f"{what} is not finite")
    return vel


class HostEvent(NamedTuple):
    tick: int
    robot: int
    kind: str  # "runtime_error" | "budget_exceeded" | "compile_failed"
    detail: str


class MissionHost:
    """Per-robot script host. Swaps programs only between ticks."""

    def __init__(self, spec: RobotSpec, budget: Budget = Budget(), seed: int = 0):
        self.spec = spec
        self.budget = budget
        self.sandbox = _LuaSandbox(seed=seed ^ spec.id)
        self.program: MissionProgram | None = None
        self._fn = None
        self.events: list[HostEvent] = []

    @property
    def version(self) -> int:
        return -1 if self.program is None else self.program.version

    def install(self, program: MissionProgram, tick: int = 0) -> None:
        try:
            fn = self.sandbox.load(program.source, self.budget)
        except ScriptError as exc:
            self.events.append(HostEvent(tick, self.spec.id, "compile_failed", str(exc)))
            raise CompileFailed(f"version {program.version}: {exc}") from exc
        self.program, self._fn = program, fn

    def step(self, ctx: MissionContext, raise_errors: bool = False) -> MissionOutput:
        """Run one tick of the mission; clamp the result to this robot's limits.

        A failing or over-budget script yields a zero output (the robot holds
        position) and a recorded host event.
        """
        if self._fn is None:
            raise ScriptRuntimeError("no program installed")
        try:
            res = self.sandbox.call(self._fn, self.sandbox.table(ctx.to_plain()), self.budget)
            if res is None or self.sandbox.lua.globals().type(res) != "table":
                raise ScriptRuntimeError("mission(ctx) must return a table")
            v_local = _velocity(res["v_local"], "v_local") or ZERO_VELOCITY
            v_global = _velocity(res["v_global"], "v_global") if ctx.is_brain else None
        except ScriptError as exc:
            kind = "budget_exceeded" if isinstance(exc, BudgetExceeded) else "runtime_error"
            self.events.append(HostEvent(ctx.tick, self.spec.id, kind, str(exc)))
            if raise_errors:
                raise
            return MissionOutput(ZERO_VELOCITY, ZERO_VELOCITY if ctx.is_brain else None)
        v_max, w_max = self.spec.v_max, self.spec.w_max
        return MissionOutput(
            clamp_velocity(v_local, v_max, w_max),
            clamp_velocity(v_global, v_max, w_max) if v_global is not None else None,
        )


def run_mission_step(
    program: MissionProgram,
    ctx: MissionContext,
    budget: Budget = Budget(),
    spec: RobotSpec | None = None,
    raise_errors: bool = False,
) -> MissionOutput:
    """One-shot execution of ``program`` (fresh host each call)."""
    spec = spec or RobotSpec.with_defaults(ctx.self_id, ctx.kind)
    host = MissionHost(spec, budget)
    host.install(program)
    return host.step(ctx, raise_errors=raise_errors)


def apply_new_program(host: MissionHost, program: MissionProgram, tick: int = 0) -> bool:
    """Swap in a strictly newer program. Returns False (no change) for stale versions.

    Raises CompileFailed and keeps the old program if the new one does not load.
    """
    if program.version <= host.version:
        return False
    host.install(program, tick)
    return True


# --- stuck detection -------------------------------------------------------


@dataclass(frozen=True)
class StuckMonitor:
    theta1: int
    epsilon: float
    timer: int = 0
    outstanding_request: bool = False

    def program_applied(self) -> StuckMonitor:
        return replace(self, timer=0, outstanding_request=False)

    def release(self) -> StuckMonitor:
        """Allow a new request after a failed one (timer keeps counting)."""
        return replace(self, outstanding_request=False)


def update_stuck_monitor(monitor: StuckMonitor, swarm_progress: float, any_stuck_report: bool) -> tuple[StuckMonitor, bool]:
    """One brain tick of the stuck timer. Returns (monitor', trigger)."""
    if swarm_progress <= monitor.epsilon or any_stuck_report:
        timer = monitor.timer + 1
    else:
        timer = 0
    trigger = timer > monitor.theta1 and not monitor.outstanding_request
    return replace(monitor, timer=timer, outstanding_request=monitor.outstanding_request or trigger), trigger
