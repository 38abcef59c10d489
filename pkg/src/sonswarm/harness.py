"""Trial orchestration: the per-robot program loop, phase metrics, batches, plot data."""

from __future__ import annotations

import concurrent.futures
import copy
import csv
import io
import json
import logging
import random
import statistics
from dataclasses import dataclass, field, fields, replace
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Union

from .errors import CompileFailed, EmptyMetrics, InvalidCount, LlmError, ScriptError
from .llm import (
    Conversation,
    LlmEndpointConfig,
    PromptContext,
    extract_code,
    mock_llm,
    prepare_conversation,
    request_help,
    resolve_mock_mode,
    send_chat,
)
from .model import (
    Pose2D,
    RobotKind,
    Scenario,
    ZERO_VELOCITY,
    clamp_velocity,
    unicycle_convert,
)
from .runtime import (
    Budget,
    MissionContext,
    MissionHost,
    StuckMonitor,
    apply_new_program,
    compile_mission,
    default_mission,
    update_stuck_monitor,
)
from .sim import Command, WorldState, check_mission_complete, forward_progress, sense, step
from .sons import CompileFailure, Formation, SonsNetwork, form_tree, formation_control

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MockLlm:
    mode: str
    latency: int | None = None  # ticks; None -> scenario.llm_latency


@dataclass(frozen=True)
class EndpointLlm:
    config: LlmEndpointConfig = LlmEndpointConfig()


LlmChoice = Union[MockLlm, EndpointLlm]


def parse_llm(text: str) -> LlmChoice:
    """``mock:<mode>`` or ``endpoint``."""
    if text == "endpoint":
        return EndpointLlm()
    if text.startswith("mock:"):
        mode = text[5:]
        if mode != "mixed":
            resolve_mock_mode(mode)
        return MockLlm(mode)
    raise ValueError(f"--llm must be mock:<mode> or endpoint, got {text!r}")


# --- metrics ---------------------------------------------------------------

PHASES = ("phase1", "phase2", "phase3", "phase4")


@dataclass
class TrialMetrics:
    trial_id: int
    seed: int
    mode: str
    dt: float
    success: bool = False
    num_requests: int = 0
    t_first_obstacle: int | None = None
    t_request: int | None = None
    t_code_applied: int | None = None
    t_converged: int | None = None
    t_complete: int | None = None
    ticks: int = 0

    def phase_ticks(self) -> dict[str, int | None]:
        def span(a, b):
            return None if a is None or b is None else b - a

        return {
            "phase1": span(self.t_first_obstacle, self.t_request),
            "phase2": span(self.t_request, self.t_code_applied),
            "phase3": span(self.t_code_applied, self.t_converged),
            "phase4": span(self.t_converged, self.t_complete) if self.success else None,
        }

    def phase_seconds(self) -> dict[str, Decimal | None]:
        """Phase durations as exact decimals (ticks * dt)."""
        dt = Decimal(repr(self.dt))
        return {k: None if v is None else v * dt for k, v in self.phase_ticks().items()}

    def check_invariants(self) -> None:
        if self.t_request is not None:
            assert self.t_first_obstacle is not None and self.t_first_obstacle <= self.t_request
        if self.t_code_applied is not None:
            assert self.t_request is not None and self.t_request < self.t_code_applied
        if self.t_converged is not None:
            assert self.t_code_applied is not None and self.t_code_applied <= self.t_converged
        if self.success:
            assert self.t_complete is not None
            if self.t_converged is not None:
                assert self.t_complete >= self.t_converged

    def row(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = "" if v is None else str(int(v)) if isinstance(v, bool) else str(v)
        for k, v in self.phase_seconds().items():
            out[f"{k}_s"] = "" if v is None else str(v)
        return out


METRIC_COLUMNS = [f.name for f in fields(TrialMetrics)] + [f"{p}_s" for p in PHASES]


@dataclass
class TrialResult:
    metrics: TrialMetrics
    trace: list[dict] = field(default_factory=list)
    conversation: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)


# --- the trial loop --------------------------------------------------------


def _jittered_poses(scenario: Scenario, seed: int) -> dict[int, Pose2D]:
    poses = {r.spec.id: r.pose for r in scenario.robots}
    if scenario.pose_jitter <= 0:
        return poses
    rng = random.Random(seed)
    j = scenario.pose_jitter
    return {rid: Pose2D(p.x + rng.uniform(-j, j), p.y + rng.uniform(-j, j), p.theta) for rid, p in sorted(poses.items())}


class _LlmLink:
    """Hands a request to the mock or the endpoint and yields the reply at some later tick."""

    def __init__(self, choice: LlmChoice, scenario: Scenario, seed: int, mode: str):
        self.choice = choice
        self.latency = max(1, (choice.latency if isinstance(choice, MockLlm) and choice.latency is not None
                               else scenario.llm_latency))
        self.mode = mode
        self.seed = seed
        self.dt = scenario.dt
        self._due: tuple[int, str | Exception] | None = None
        self._future: concurrent.futures.Future | None = None
        self._pool: concurrent.futures.ThreadPoolExecutor | None = None
        self.retry_events: list[dict] = []

    def submit(self, conv: Conversation, tick: int) -> None:
        if isinstance(self.choice, MockLlm):
            self._due = (tick + self.latency, mock_llm(conv, self.mode, self.seed))
            return
        if self._pool is None:
            self._pool = concurrent.futures.ThreadPoolExecutor(max_workers=1)
        snapshot = copy.deepcopy(conv)
        self._future = self._pool.submit(send_chat, self.choice.config, snapshot, None, events=self.retry_events)

    @property
    def pending(self) -> bool:
        return self._due is not None or self._future is not None

    def poll(self, tick: int) -> str | Exception | None:
        if self._due is not None:
            due, reply = self._due
            if tick >= due:
                self._due = None
                return reply
            return None
        if self._future is not None:
            # sim time runs roughly at wall-clock pace while a live request is out
            concurrent.futures.wait([self._future], timeout=self.dt)
            if self._future.done():
                fut, self._future = self._future, None
                try:
                    return fut.result()
                except LlmError as exc:
                    return exc
        return None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=False, cancel_futures=True)


def _mode_label(choice: LlmChoice, seed: int) -> str:
    if isinstance(choice, EndpointLlm):
        return "endpoint"
    if choice.mode == "alternate":
        return f"alternate:{resolve_mock_mode('alternate', seed)}"
    return choice.mode


def run_trial(
    scenario: Scenario,
    llm: LlmChoice,
    seed: int | None = None,
    trial_id: int = 0,
    record_trace: bool = True,
) -> TrialResult:
    """Run one trial until every ground robot is past the finish line or max_ticks."""
    seed = scenario.seed if seed is None else seed
    if isinstance(llm, MockLlm) and llm.mode == "mixed":
        raise ValueError("mock:mixed is a batch-level mode; pick a concrete mode per trial")
    mode = _mode_label(llm, seed)
    dt = scenario.dt
    specs = scenario.specs
    ids = sorted(specs)
    ground = scenario.ground_ids
    poses0 = _jittered_poses(scenario, seed)
    world = WorldState.initial(replace(scenario, seed=seed), poses0)

    tree = form_tree(replace(scenario, robots=tuple(replace(r, pose=poses0[r.spec.id]) for r in scenario.robots)))
    brain = tree.brain
    kinds = {rid: s.kind for rid, s in specs.items()}
    net = SonsNetwork(tree, drop_prob=scenario.drop_prob, seed=seed, kinds=kinds)
    formation = Formation.from_scenario(scenario)

    budget = Budget(scenario.script_instructions, scenario.script_seconds)
    base = default_mission()
    hosts = {}
    for rid in ids:
        hosts[rid] = MissionHost(specs[rid], budget, seed=seed)
        hosts[rid].install(base)
        net.mark_applied(rid, base)

    ground_radius = specs[ground[0]].body_radius
    constants = {
        "target_speed": scenario.target_speed,
        "theta2": scenario.theta2,
        "theta3": scenario.theta3,
        "d_safe": scenario.d_safe,
        "body_radius": ground_radius,
        "dt": dt,
    }

    metrics = TrialMetrics(trial_id=trial_id, seed=seed, mode=mode, dt=dt)
    result = TrialResult(metrics)
    conv = prepare_conversation(PromptContext.from_scenario(scenario))

    def log_message(tick: int) -> None:
        role, content = conv.messages[-1]
        result.conversation.append({"trial": trial_id, "tick": tick, "role": role, "content": content})

    log_message(0)
    link = _LlmLink(llm, scenario, seed, resolve_mock_mode(llm.mode, seed) if isinstance(llm, MockLlm) else "")
    monitor = StuckMonitor(scenario.theta1, scenario.progress_epsilon)
    first_llm_version: int | None = None
    release_at: int | None = None
    prev_world: WorldState | None = None

    def reply_failed(tick: int, why: str) -> None:
        nonlocal release_at
        result.events.append({"tick": tick, "robot": brain, "event": "llm_reply_unusable", "detail": why})
        log.warning("trial %d tick %d: LLM reply unusable (%s)", trial_id, tick, why)
        release_at = tick + scenario.cooldown

    try:
        for t in range(scenario.max_ticks + 1):
            if check_mission_complete(world, scenario):
                metrics.t_complete = t
                metrics.success = True
                break
            if t == scenario.max_ticks:
                break
            delivered = net.deliver(t)

            # brain: LLM reply -> new program
            if release_at is not None and t >= release_at:
                monitor = monitor.release()
                release_at = None
            reply = link.poll(t) if link.pending else None
            if isinstance(reply, Exception):
                reply_failed(t, f"{type(reply).__name__}: {reply}")
            elif reply is not None:
                conv.append("assistant", reply)
                log_message(t)
                try:
                    source = extract_code(reply)
                    program = compile_mission(
                        source,
                        current_version=net.nodes[brain].seen_version,
                        origin=f"llm:{conv.request_count}",
                        budget=budget,
                    )
                    apply_new_program(hosts[brain], program, t)
                except (LlmError, ScriptError) as exc:
                    reply_failed(t, f"{type(exc).__name__}: {exc}")
                else:
                    net.originate_program(program, t)
                    net.mark_applied(brain, program)
                    monitor = monitor.program_applied()
                    if first_llm_version is None:
                        first_llm_version = program.version
                        metrics.t_code_applied = t

            # everyone else: adopt flooded programs
            for rid in ids:
                if rid == brain:
                    continue
                for program in net.receive_programs(rid, t, delivered):
                    try:
                        if apply_new_program(hosts[rid], program, t):
                            net.mark_applied(rid, program)
                    except CompileFailed as exc:
                        net.send(rid, tree.parent[rid], t, CompileFailure(rid, program.version, str(exc)))
                        result.events.append({"tick": t, "robot": rid, "event": "compile_failed", "detail": str(exc)})
            if (
                first_llm_version is not None
                and metrics.t_converged is None
                and all(net.nodes[rid].version >= first_llm_version for rid in ids)
            ):
                metrics.t_converged = t

            # upstream sensing
            perceptions = {rid: sense(world, rid) for rid in ids}
            in_parent = {rid: world.poses[rid].relative_to(world.poses[tree.parent[rid]]) for rid in ids if rid != brain}
            stuck_reports = net.upstream(t, delivered, perceptions, in_parent, world.blocked)
            for m in delivered.get(brain, ()):
                if isinstance(m.payload, CompileFailure):
                    result.events.append({"tick": t, "robot": m.payload.robot, "event": "compile_failure_report",
                                          "detail": m.payload.reason})
            if metrics.t_first_obstacle is None and any(world.blocked[g] for g in ground):
                metrics.t_first_obstacle = t

            # stuck detection lives in the host, outside any mission script
            if prev_world is not None:
                progress = forward_progress(prev_world, world, brain)
                monitor, trigger = update_stuck_monitor(monitor, progress, bool(stuck_reports) or world.blocked[brain])
                if trigger:
                    request_help(conv, net.estimate)
                    log_message(t)
                    metrics.num_requests += 1
                    if metrics.t_request is None:
                        metrics.t_request = t
                    link.submit(conv, t)

            # mission step: brain first so its command goes out this tick
            outputs = {}
            ctx_common = dict(constants=constants, tick=t, body_radius=ground_radius)
            brain_ctx = MissionContext(
                self_id=brain, is_brain=True, perception=perceptions[brain],
                received_global_cmd=net.nodes[brain].command, global_estimate=net.estimate,
                kind=kinds[brain].value, **ctx_common,
            )
            outputs[brain] = hosts[brain].step(brain_ctx)
            brain_cmd = outputs[brain].v_global or ZERO_VELOCITY
            if monitor.outstanding_request:
                brain_cmd = ZERO_VELOCITY
            net.downstream_commands(t, delivered, brain_cmd)
            for rid in ids:
                if rid == brain:
                    continue
                ctx = MissionContext(
                    self_id=rid, is_brain=False, perception=perceptions[rid],
                    received_global_cmd=net.nodes[rid].command, kind=kinds[rid].value, **ctx_common,
                )
                outputs[rid] = hosts[rid].step(ctx)

            # host: formation + local command -> clamped actuation
            positions = {rid: (p.x, p.y) for rid, p in world.poses.items()}
            global_cmds = {rid: net.nodes[rid].command for rid in ids}
            desired = formation_control(tree, formation, positions, global_cmds)
            commands = {}
            for rid in ids:
                pose = world.poses[rid]
                spec = specs[rid]
                v_world = desired[rid] + outputs[rid].v_local.rotated(pose.theta)
                body = clamp_velocity(v_world.rotated(-pose.theta), spec.v_max, spec.w_max)
                if spec.kind is RobotKind.GROUND:
                    linear, angular = unicycle_convert(body, spec, scenario.k_w)
                    commands[rid] = Command(linear, angular)
                else:
                    commands[rid] = Command(body.vx, 0.0, body.vy)

            if record_trace:
                for rid in ids:
                    p = world.poses[rid]
                    result.trace.append({
                        "tick": t, "id": rid, "x": p.x, "y": p.y, "theta": p.theta,
                        "blocked": world.blocked[rid], "program_version": net.nodes[rid].version,
                        "parent": tree.parent[rid], "depth": tree.depth[rid],
                        "linear": commands[rid].linear, "angular": commands[rid].angular,
                        "lateral": commands[rid].lateral,
                    })
            prev_world = world
            world = step(world, commands, dt)
    finally:
        link.close()

    metrics.ticks = world.tick
    log.info("trial %d (%s, seed %d): %s after %d ticks, %d requests", trial_id, mode, seed,
             "success" if metrics.success else "failure", metrics.ticks, metrics.num_requests)
    for rid in ids:
        for ev in hosts[rid].events:
            result.events.append({"tick": ev.tick, "robot": ev.robot, "event": ev.kind, "detail": ev.detail})
    result.events.extend({"event": "llm_retry", **e} for e in link.retry_events)
    result.events.sort(key=lambda e: (e.get("tick", -1), e.get("robot", -1)))
    return result


# --- files -----------------------------------------------------------------


def _jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=False) + "\n" for r in records)


def metrics_csv(rows: Iterable[TrialMetrics]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    w.writeheader()
    for m in rows:
        w.writerow(m.row())
    return buf.getvalue()


def read_metrics_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_trial(result: TrialResult, out: str | Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_text(_jsonl(result.trace), encoding="utf-8")
    (out / "conversation.jsonl").write_text(_jsonl(result.conversation), encoding="utf-8")
    (out / "events.jsonl").write_text(_jsonl(result.events), encoding="utf-8")
    (out / "metrics.csv").write_text(metrics_csv([result.metrics]), encoding="utf-8")
    (out / "summary.txt").write_text(summarize([result.metrics]), encoding="utf-8")


# --- batches ---------------------------------------------------------------


def mixed_modes(n_trials: int, base_seed: int, faulty_fraction: float = 0.15) -> list[str]:
    """Seeded assignment of mock modes: round(n * fraction) faulty, the rest alternate."""
    n_faulty = round(n_trials * faulty_fraction)
    modes = ["faulty"] * n_faulty + ["alternate"] * (n_trials - n_faulty)
    random.Random(base_seed).shuffle(modes)
    return modes


def _quartiles(values: list[Decimal]) -> tuple[Decimal, ...]:
    if len(values) == 1:
        return (values[0],) * 5
    q1, q2, q3 = statistics.quantiles(values, n=4, method="inclusive")
    return (min(values), q1, q2, q3, max(values))


def summarize(metrics: list[TrialMetrics]) -> str:
    n = len(metrics)
    ok = sum(m.success for m in metrics)
    lines = [f"trials = {n}", f"successes = {ok}", f"success_rate = {ok / n}"]
    lines.append(f"requests = {sum(m.num_requests for m in metrics)}")
    for phase in PHASES:
        vals = [m.phase_seconds()[phase] for m in metrics]
        vals = [v for v in vals if v is not None]
        if not vals:
            lines.append(f"{phase}_s: n=0")
            continue
        lo, q1, med, q3, hi = _quartiles(vals)
        lines.append(f"{phase}_s: n={len(vals)} min={lo} q1={q1} median={med} q3={q3} max={hi}")
    return "\n".join(lines) + "\n"


def _run_one(args) -> TrialMetrics:
    scenario, choice, seed, trial_id = args
    return run_trial(scenario, choice, seed, trial_id, record_trace=False).metrics


def run_batch(
    scenario: Scenario,
    llm: LlmChoice,
    n_trials: int,
    base_seed: int,
    out: str | Path | None = None,
    workers: int = 1,
    faulty_fraction: float = 0.15,
) -> tuple[str, list[TrialMetrics]]:
    """Run trials with seeds base_seed .. base_seed + n - 1; return (summary, metrics)."""
    if n_trials < 1:
        raise InvalidCount("n_trials must be >= 1")
    if isinstance(llm, MockLlm) and llm.mode == "mixed":
        choices = [MockLlm(m, llm.latency) for m in mixed_modes(n_trials, base_seed, faulty_fraction)]
    else:
        choices = [llm] * n_trials
    jobs = [(scenario, choices[i], base_seed + i, i) for i in range(n_trials)]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            metrics = list(pool.map(_run_one, jobs))
    else:
        metrics = [_run_one(j) for j in jobs]
    summary = summarize(metrics)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(metrics_csv(metrics), encoding="utf-8")
        (out / "summary.txt").write_text(summary, encoding="utf-8")
    return summary, metrics


# --- plot data -------------------------------------------------------------

PLOT_COLUMNS = ["trial_id", *(f"{p}_s" for p in PHASES), "total_s", "failed"]


def emit_plot_data(metrics_file: str | Path, out: str | Path | None = None, svg: str | Path | None = None) -> list[dict[str, str]]:
    """Stacked-bar rows, one per trial: four phase durations and a failure flag.

    Successful trials come first, shortest total first; failed trials follow
    (their fourth phase is blank).
    """
    rows = read_metrics_csv(metrics_file)
    if not rows:
        raise EmptyMetrics(f"{metrics_file} has no trials")
    plot = []
    for r in rows:
        failed = r["success"] != "1"
        phases = {f"{p}_s": r[f"{p}_s"] for p in PHASES}
        if failed:
            phases["phase4_s"] = ""
        total = sum((Decimal(v) for v in phases.values() if v), Decimal(0))
        plot.append({"trial_id": r["trial_id"], **phases, "total_s": str(total), "failed": "1" if failed else "0"})
    plot.sort(key=lambda p: (p["failed"] == "1", Decimal(p["total_s"]), int(p["trial_id"])))
    if out is not None:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=PLOT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(plot)
        Path(out).write_text(buf.getvalue(), encoding="utf-8")
    if svg is not None:
        render_svg(plot, svg)
    return plot


def render_svg(plot: list[dict[str, str]], path: str | Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = ["fail to move forward", "request help", "receive and run code", "get unstuck"]
    colors = ["#9e9e9e", "#4c72b0", "#55a868", "#dd8452"]
    fig, ax = plt.subplots(figsize=(8, 4))
    for i, row in enumerate(plot):
        left = 0.0
        for p, color, label in zip(PHASES, colors, labels):
            v = float(row[f"{p}_s"] or 0)
            ax.barh(i, v, left=left, color=color, label=label if i == 0 else None)
            left += v
        if row["failed"] == "1":
            ax.barh(i, max(left, 1.0), left=0, fill=False, edgecolor="red", linewidth=1.5)
    ax.set_yticks(range(len(plot)), [r["trial_id"] for r in plot])
    ax.set_xlabel("time (s)")
    ax.set_ylabel("trial")
    ax.legend(loc="lower right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
