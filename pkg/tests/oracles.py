"""Reference implementations used only by the tests.

Each one is written independently of the package code, trading speed for
obviousness.
"""

from __future__ import annotations

import math
from collections import deque


def euler_pose(x, y, theta, linear, lateral, angular, dt, substeps=1000):
    """Fine forward-Euler integration of a constant body-frame command."""
    h = dt / substeps
    for _ in range(substeps):
        x += (math.cos(theta) * linear - math.sin(theta) * lateral) * h
        y += (math.sin(theta) * linear + math.cos(theta) * lateral) * h
        theta += angular * h
    return x, y, theta


def grid_offsets(n, spacing):
    """Square grid by explicit enumeration of (row, col) cells."""
    k = 1
    while k * k < n:
        k += 1
    cells = []
    for row in range(k):
        for col in range(k):
            if len(cells) < n:
                cells.append((-row * spacing, -col * spacing))
    mx = sum(c[0] for c in cells) / n
    my = sum(c[1] for c in cells) / n
    return [(a - mx, b - my) for a, b in cells]


def best_unicycle(vx, vy, w, v_max, w_max, k_w=2.0):
    """Heading error by angle search, then the same turn law and projection."""
    if vx == 0 and vy == 0:
        return 0.0, max(-w_max, min(w_max, w))
    phi = math.atan2(vy, vx)
    if phi <= -math.pi + 1e-15:
        phi = math.pi
    speed = math.hypot(vx, vy)
    return (
        min(v_max, max(0.0, speed * math.cos(phi))),
        max(-w_max, min(w_max, k_w * phi + w)),
    )


def bfs_levels(adjacency, root):
    """Hop distance from ``root`` for every reachable node."""
    dist = {root: 0}
    q = deque([root])
    while q:
        u = q.popleft()
        for v in adjacency[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def fence_blocks(text):
    """All fenced blocks as raw line lists (language line dropped)."""
    out, inside, cur = [], False, []
    for line in text.split("\n"):
        if line.strip().startswith("```"):
            if inside:
                out.append(cur)
                cur = []
            inside = not inside
        elif inside:
            cur.append(line)
    return out
