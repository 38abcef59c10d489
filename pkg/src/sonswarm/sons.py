"""Simplified self-organizing nervous system (SoNS) over a static rooted tree.

Messages travel one hop per tick. Sensor digests flow up to the brain and are
merged into its global estimate; global commands and mission programs flow
down. Everything here is deterministic: delivery order is a pure function of
(sent_tick, src, per-source sequence number).
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence, Union

from .errors import DisconnectedSwarm, NotBrain, UnassignedRobot
from .model import (
    MissionProgram,
    Offset,
    PlanarVelocity,
    Pose2D,
    RobotKind,
    Scenario,
    ZERO_VELOCITY,
    clamp_velocity,
    square_formation_targets,
)
from .sim import Perception

# --- tree ------------------------------------------------------------------


@dataclass(frozen=True)
class SonsTree:
    brain: int
    parent: Mapping[int, int]
    children: Mapping[int, tuple[int, ...]]
    depth: Mapping[int, int]

    @property
    def n(self) -> int:
        return max(self.depth.values())

    @property
    def nodes(self) -> list[int]:
        return sorted(self.parent)

    def neighbors(self, rid: int) -> list[int]:
        out = list(self.children[rid])
        if rid != self.brain:
            out.insert(0, self.parent[rid])
        return out

    def path_to_brain(self, rid: int) -> list[int]:
        path = [rid]
        while path[-1] != self.brain:
            path.append(self.parent[path[-1]])
        return path

    def validate(self) -> None:
        """Raise AssertionError if any tree invariant is broken."""
        assert self.parent[self.brain] == self.brain
        assert self.depth[self.brain] == 0
        assert set(self.parent) == set(self.children) == set(self.depth)
        for rid, kids in self.children.items():
            for c in kids:
                assert self.parent[c] == rid and c != rid
                assert self.depth[c] == self.depth[rid] + 1
        for rid, p in self.parent.items():
            if rid != self.brain:
                assert rid in self.children[p]
            # acyclic and reachable: walking up terminates at the brain
            assert len(self.path_to_brain(rid)) == self.depth[rid] + 1


def comm_graph(positions: Mapping[int, tuple[float, float]], comm_range: Mapping[int, float]) -> dict[int, list[int]]:
    """Undirected links between robots within min(range_i, range_j) of each other."""
    ids = sorted(positions)
    adj: dict[int, list[int]] = {i: [] for i in ids}
    for a_idx, a in enumerate(ids):
        ax, ay = positions[a]
        for b in ids[a_idx + 1:]:
            bx, by = positions[b]
            if math.hypot(ax - bx, ay - by) <= min(comm_range[a], comm_range[b]):
                adj[a].append(b)
                adj[b].append(a)
    return adj


def bfs_tree(adjacency: Mapping[int, Sequence[int]], brain: int) -> SonsTree:
    """Breadth-first tree; a node's parent is the lowest-id neighbor one level up."""
    if brain not in adjacency:
        raise DisconnectedSwarm(f"brain {brain} is not in the swarm")
    parent = {brain: brain}
    depth = {brain: 0}
    children: dict[int, list[int]] = {brain: []}
    frontier = [brain]
    while frontier:
        nxt = []
        for node in sorted(frontier):
            for nb in sorted(adjacency[node]):
                if nb not in parent:
                    parent[nb] = node
                    depth[nb] = depth[node] + 1
                    children[nb] = []
                    children[node].append(nb)
                    nxt.append(nb)
        frontier = nxt
    missing = sorted(set(adjacency) - set(parent))
    if missing:
        raise DisconnectedSwarm(f"robots unreachable from brain {brain}: {missing}")
    return SonsTree(
        brain=brain,
        parent=parent,
        children={k: tuple(sorted(v)) for k, v in children.items()},
        depth=depth,
    )


def form_tree(scenario: Scenario, initial_brain: int | None = None) -> SonsTree:
    brain = scenario.default_brain() if initial_brain is None else initial_brain
    positions = {r.spec.id: (r.pose.x, r.pose.y) for r in scenario.robots}
    ranges = {r.spec.id: r.spec.comm_range for r in scenario.robots}
    return bfs_tree(comm_graph(positions, ranges), brain)


# --- messages --------------------------------------------------------------


class Entry(NamedTuple):
    """One entity in a digest or estimate, positioned in the holder's body frame."""

    kind: str  # "obstacle" | "robot"
    id: int
    x: float
    y: float
    sensed_tick: int
    radius: float = 0.0
    robot_kind: RobotKind | None = None


class Status(NamedTuple):
    blocked: bool
    tick: int


@dataclass(frozen=True)
class Digest:
    entries: Mapping[tuple[str, int], Entry]
    status: Mapping[int, Status]


@dataclass(frozen=True)
class SensorUp:
    digest: Digest
    pose_in_parent: Pose2D


@dataclass(frozen=True)
class CommandDown:
    velocity: PlanarVelocity
    issued_tick: int


@dataclass(frozen=True)
class CodeUpdate:
    program: MissionProgram


@dataclass(frozen=True)
class StuckReport:
    robot: int
    tick: int


@dataclass(frozen=True)
class CompileFailure:
    robot: int
    version: int
    reason: str


Payload = Union[SensorUp, CommandDown, CodeUpdate, StuckReport, CompileFailure]


class NetMessage(NamedTuple):
    src: int
    dst: int
    sent_tick: int
    seq: int
    payload: Payload


def _order(m: NetMessage):
    return (m.sent_tick, m.src, m.seq)


def tick_network(
    inflight: Iterable[NetMessage],
    new_outbox: Iterable[NetMessage],
    tick: int,
    drop_prob: float = 0.0,
    rng: random.Random | None = None,
) -> tuple[dict[int, list[NetMessage]], list[NetMessage]]:
    """Deliver every message sent before ``tick``; keep the rest in flight.

    Delivery order per recipient is (sent_tick, src, seq). With ``drop_prob`` > 0
    each due message is independently lost using ``rng``.
    """
    pending = sorted([*inflight, *new_outbox], key=_order)
    delivered: dict[int, list[NetMessage]] = {}
    remaining = []
    for m in pending:
        if m.sent_tick < tick:
            if drop_prob and rng is not None and rng.random() < drop_prob:
                continue
            delivered.setdefault(m.dst, []).append(m)
        else:
            remaining.append(m)
    return delivered, remaining


# --- upstream aggregation --------------------------------------------------


def perception_digest(own: Perception, blocked: bool = False, kind: RobotKind | None = None) -> Digest:
    """A node's own perception as digest entries, plus a self entry at its origin."""
    t = own.tick
    entries: dict[tuple[str, int], Entry] = {
        ("robot", own.observer): Entry("robot", own.observer, 0.0, 0.0, t, 0.0, kind)
    }
    for o in own.obstacles_rel:
        entries[("obstacle", o.id)] = Entry("obstacle", o.id, o.x, o.y, t, o.radius)
    for r in own.robots_rel:
        entries[("robot", r.id)] = Entry("robot", r.id, r.x, r.y, t, 0.0, r.kind)
    return Digest(entries, {own.observer: Status(blocked, t)})


def reframe(digest: Digest, pose: Pose2D) -> Digest:
    """Re-express a child's digest in the parent frame given the child's pose in it."""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    px, py = pose.x, pose.y
    entries = {
        k: Entry(kind, rid, px + c * x - s * y, py + s * x + c * y, t, r, rk)
        for k, (kind, rid, x, y, t, r, rk) in digest.entries.items()
    }
    return Digest(entries, digest.status)


def merge_digests(digests: Iterable[Digest]) -> Digest:
    """Newest entry per entity id; earlier digests win ties."""
    entries: dict[tuple[str, int], Entry] = {}
    status: dict[int, Status] = {}
    for d in digests:
        for k, e in d.entries.items():
            old = entries.get(k)
            if old is None or e.sensed_tick > old.sensed_tick:
                entries[k] = e
            elif e.sensed_tick == old.sensed_tick and old.robot_kind is None and e.robot_kind is not None:
                entries[k] = old._replace(robot_kind=e.robot_kind)
        for rid, st in d.status.items():
            old = status.get(rid)
            if old is None or st.tick > old.tick:
                status[rid] = st
    return Digest(entries, status)


def aggregate_upstream(
    own: Perception, delivered: Iterable[SensorUp], blocked: bool = False, kind: RobotKind | None = None
) -> Digest:
    """Merge this tick's child digests (reframed) with the node's own fresh perception."""
    parts = [perception_digest(own, blocked, kind)]
    parts.extend(reframe(m.digest, m.pose_in_parent) for m in delivered)
    return merge_digests(parts)


@dataclass(frozen=True)
class GlobalEstimate:
    holder: int
    tick: int = -1
    entries: Mapping[tuple[str, int], Entry] = field(default_factory=dict)
    status: Mapping[int, Status] = field(default_factory=dict)

    def merged(self, digest: Digest, tick: int) -> GlobalEstimate:
        d = merge_digests([digest, Digest(self.entries, self.status)])
        return GlobalEstimate(self.holder, tick, d.entries, d.status)

    def age(self, key: tuple[str, int]) -> int:
        return self.tick - self.entries[key].sensed_tick

    def obstacles(self) -> list[Entry]:
        return [e for k, e in sorted(self.entries.items()) if k[0] == "obstacle"]

    def robots(self) -> list[Entry]:
        return [e for k, e in sorted(self.entries.items()) if k[0] == "robot"]

    def blocked(self, rid: int) -> bool:
        st = self.status.get(rid)
        return bool(st and st.blocked)


# --- downstream ------------------------------------------------------------


def disseminate_command(tree: SonsTree, caller: int, global_cmd: PlanarVelocity, tick: int) -> list[NetMessage]:
    """The brain's per-tick CommandDown to each of its children."""
    if caller != tree.brain:
        raise NotBrain(f"robot {caller} is not the brain ({tree.brain})")
    return relay_command(tree, caller, CommandDown(global_cmd, tick), tick)


def relay_command(tree: SonsTree, node: int, cmd: CommandDown, tick: int) -> list[NetMessage]:
    return [NetMessage(node, child, tick, -1, cmd) for child in tree.children[node]]


@dataclass
class NodeState:
    id: int
    version: int = 0  # program version currently running
    seen_version: int = 0  # highest version received (forwarding guard)
    command: PlanarVelocity = ZERO_VELOCITY
    command_issued: int = -1
    applied: Counter = field(default_factory=Counter)


def propagate_program(
    node: NodeState,
    program: MissionProgram,
    sender: int | None,
    neighbors: Iterable[int],
    tick: int,
) -> tuple[bool, list[NetMessage]]:
    """Flooding step for a received (or locally produced) program.

    Returns (adopt, messages). A strictly newer version is adopted once and
    forwarded to every neighbor except the sender; anything else is dropped.
    The caller installs the program and bumps ``node.version`` on success.
    """
    if program.version <= node.seen_version:
        return False, []
    node.seen_version = program.version
    msgs = [NetMessage(node.id, nb, tick, -1, CodeUpdate(program)) for nb in neighbors if nb != sender]
    return True, msgs


# --- formation -------------------------------------------------------------


@dataclass(frozen=True)
class Formation:
    """Assigned offsets from the ground-robot centroid, plus gains."""

    targets: Mapping[int, Offset]
    ground: frozenset[int]
    k_f: float = 1.0
    max_correction: float | None = None

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> Formation:
        ground = scenario.ground_ids
        targets = dict(zip(ground, square_formation_targets(len(ground), scenario.formation_spacing)))
        poses = {r.spec.id: r.pose for r in scenario.robots}
        cx = math.fsum(poses[g].x for g in ground) / len(ground)
        cy = math.fsum(poses[g].y for g in ground) / len(ground)
        for a in scenario.aerial_ids:
            targets[a] = Offset(poses[a].x - cx, poses[a].y - cy)
        return cls(targets, frozenset(ground), scenario.k_f, scenario.formation_max_correction)


def formation_control(
    tree: SonsTree,
    formation: Formation,
    positions: Mapping[int, tuple[float, float]],
    global_cmd: PlanarVelocity | Mapping[int, PlanarVelocity],
    limits: Mapping[int, tuple[float, float]] | None = None,
) -> dict[int, PlanarVelocity]:
    """World-frame velocity per robot: its global command plus a proportional pull
    toward its assigned offset from the ground centroid.

    ``global_cmd`` may be one command for all robots or a per-robot mapping (each
    robot acts on the command it last received). ``limits`` maps id -> (v_max, w_max).
    """
    for rid in tree.nodes:
        if rid not in formation.targets:
            raise UnassignedRobot(f"robot {rid} has no formation slot")
    ground = [g for g in sorted(formation.ground) if g in positions]
    cx = math.fsum(positions[g][0] for g in ground) / len(ground)
    cy = math.fsum(positions[g][1] for g in ground) / len(ground)
    out = {}
    for rid in tree.nodes:
        g = global_cmd if isinstance(global_cmd, PlanarVelocity) else global_cmd[rid]
        tx, ty = formation.targets[rid]
        px, py = positions[rid]
        ex = formation.k_f * (tx - (px - cx))
        ey = formation.k_f * (ty - (py - cy))
        if formation.max_correction is not None and rid in formation.ground:
            mag = math.hypot(ex, ey)
            if mag > formation.max_correction:
                ex, ey = ex * formation.max_correction / mag, ey * formation.max_correction / mag
        v = PlanarVelocity(g.vx + ex, g.vy + ey, g.w)
        if limits is not None:
            v = clamp_velocity(v, *limits[rid])
        out[rid] = v
    return out


# --- network orchestration -------------------------------------------------


class SonsNetwork:
    """Message plumbing and per-node SoNS state for one trial.

    Each tick: ``deliver(t)`` hands out everything sent at t-1; handlers post
    replies with ``post`` (stamped with sent_tick t); nothing posted during tick t
    is visible before t+1.
    """

    def __init__(
        self,
        tree: SonsTree,
        flood: str = "tree",
        comm_neighbors: Mapping[int, Sequence[int]] | None = None,
        drop_prob: float = 0.0,
        seed: int = 0,
        kinds: Mapping[int, RobotKind] | None = None,
    ):
        if flood not in ("tree", "comm"):
            raise ValueError("flood must be 'tree' or 'comm'")
        if flood == "comm" and comm_neighbors is None:
            raise ValueError("comm flooding needs comm_neighbors")
        self.tree = tree
        self.kinds = dict(kinds or {})
        self.flood = flood
        self.comm_neighbors = comm_neighbors
        self.drop_prob = drop_prob
        self.rng = random.Random(seed ^ 0x5EED)
        self.nodes = {rid: NodeState(rid) for rid in tree.nodes}
        self.estimate = GlobalEstimate(tree.brain)
        self.inflight: list[NetMessage] = []
        self.outbox: list[NetMessage] = []
        self._seq: Counter = Counter()

    def program_neighbors(self, rid: int) -> list[int]:
        if self.flood == "comm":
            return sorted(self.comm_neighbors[rid])
        return self.tree.neighbors(rid)

    def post(self, msgs: Iterable[NetMessage]) -> None:
        for m in msgs:
            seq = self._seq[m.src]
            self._seq[m.src] += 1
            self.outbox.append(m._replace(seq=seq))

    def send(self, src: int, dst: int, tick: int, payload: Payload) -> None:
        self.post([NetMessage(src, dst, tick, -1, payload)])

    def deliver(self, tick: int) -> dict[int, list[NetMessage]]:
        delivered, self.inflight = tick_network(self.inflight, self.outbox, tick, self.drop_prob, self.rng)
        self.outbox = []
        return delivered

    # upstream
    def upstream(
        self,
        tick: int,
        delivered: Mapping[int, list[NetMessage]],
        perceptions: Mapping[int, Perception],
        poses_in_parent: Mapping[int, Pose2D],
        blocked: Mapping[int, bool] | None = None,
    ) -> set[int]:
        """Aggregate sensor digests one hop and relay stuck reports.

        Returns the set of robots whose StuckReport reached the brain this tick.
        """
        blocked = blocked or {}
        reports_at_brain: set[int] = set()
        brain = self.tree.brain
        for rid in self.tree.nodes:
            inbox = delivered.get(rid, ())
            ups = [m.payload for m in inbox if isinstance(m.payload, SensorUp)]
            digest = aggregate_upstream(perceptions[rid], ups, blocked.get(rid, False), self.kinds.get(rid))
            stuck = [m.payload for m in inbox if isinstance(m.payload, StuckReport)]
            if blocked.get(rid, False):
                stuck.append(StuckReport(rid, tick))
            if rid == brain:
                self.estimate = self.estimate.merged(digest, tick)
                reports_at_brain.update(r.robot for r in stuck)
            else:
                parent = self.tree.parent[rid]
                self.send(rid, parent, tick, SensorUp(digest, poses_in_parent[rid]))
                for r in stuck:
                    self.send(rid, parent, tick, r)
        return reports_at_brain

    # downstream
    def downstream_commands(self, tick: int, delivered: Mapping[int, list[NetMessage]], brain_cmd: PlanarVelocity) -> None:
        """Brain issues ``brain_cmd``; every other node adopts and relays what it received."""
        brain = self.tree.brain
        node = self.nodes[brain]
        node.command, node.command_issued = brain_cmd, tick
        self.post(disseminate_command(self.tree, brain, brain_cmd, tick))
        for rid in self.tree.nodes:
            if rid == brain:
                continue
            cmds = [m.payload for m in delivered.get(rid, ()) if isinstance(m.payload, CommandDown)]
            if cmds:
                latest = max(cmds, key=lambda c: c.issued_tick)
                node = self.nodes[rid]
                node.command, node.command_issued = latest.velocity, latest.issued_tick
                self.post(relay_command(self.tree, rid, latest, tick))

    def receive_programs(self, rid: int, tick: int, delivered: Mapping[int, list[NetMessage]]) -> list[MissionProgram]:
        """Programs this node should adopt now (already forwarded onward)."""
        adopt = []
        for m in delivered.get(rid, ()):
            if isinstance(m.payload, CodeUpdate):
                ok, msgs = propagate_program(self.nodes[rid], m.payload.program, m.src, self.program_neighbors(rid), tick)
                if ok:
                    self.post(msgs)
                    adopt.append(m.payload.program)
        return adopt

    def originate_program(self, program: MissionProgram, tick: int) -> bool:
        """The brain starts flooding a program it produced itself."""
        brain = self.tree.brain
        ok, msgs = propagate_program(self.nodes[brain], program, None, self.program_neighbors(brain), tick)
        if ok:
            self.post(msgs)
        return ok

    def mark_applied(self, rid: int, program: MissionProgram) -> None:
        node = self.nodes[rid]
        node.version = program.version
        node.applied[program.version] += 1
