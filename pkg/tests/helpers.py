"""Shared builders for the test suite."""

import math
import random

from sonswarm.sons import bfs_tree, comm_graph


def random_swarm(rng: random.Random, n: int):
    """Connected random geometric swarm: each robot lands within range of an earlier one."""
    pos = {1: (0.0, 0.0)}
    for rid in range(2, n + 1):
        ax, ay = pos[rng.randint(1, rid - 1)]
        a = rng.uniform(-3.2, 3.2)
        r = rng.uniform(0.2, 0.95)
        pos[rid] = (ax + r * math.cos(a), ay + r * math.sin(a))
    ranges = {rid: 1.0 for rid in pos}
    adj = comm_graph(pos, ranges)
    brain = rng.choice(sorted(pos))
    return pos, adj, bfs_tree(adj, brain)

