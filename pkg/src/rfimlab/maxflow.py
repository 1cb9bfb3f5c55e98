"""Dinic max-flow on float capacities, jitted for repeated lattice solves.

Edges are stored as paired residual arcs (arc i and i^1 are reverses), the
usual adjacency-head/next linked-list layout.
"""

from __future__ import annotations

import numpy as np
from numba import njit

EPS = 1e-12


@njit(cache=True)
def _bfs_levels(n, s, t, head, nxt, to, cap, level, queue):
    for i in range(n):
        level[i] = -1
    level[s] = 0
    queue[0] = s
    qh, qt = 0, 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        e = head[u]
        while e != -1:
            v = to[e]
            if cap[e] > EPS and level[v] == -1:
                level[v] = level[u] + 1
                queue[qt] = v
                qt += 1
            e = nxt[e]
    return level[t] != -1


@njit(cache=True)
def _dfs_push(s, t, head, nxt, to, cap, level, it, stack_node, stack_edge):
    # iterative blocking-flow DFS with current-arc optimization
    total = 0.0
    while True:
        # find an augmenting path
        depth = 0
        stack_node[0] = s
        found = False
        while depth >= 0:
            u = stack_node[depth]
            if u == t:
                found = True
                break
            e = it[u]
            advanced = False
            while e != -1:
                v = to[e]
                if cap[e] > EPS and level[v] == level[u] + 1:
                    it[u] = e
                    stack_edge[depth] = e
                    depth += 1
                    stack_node[depth] = v
                    advanced = True
                    break
                e = nxt[e]
            if not advanced:
                it[u] = -1
                level[u] = -1  # dead end, prune
                depth -= 1
        if not found:
            return total
        # bottleneck
        bott = 1e300
        for d in range(depth):
            e = stack_edge[d]
            if cap[e] < bott:
                bott = cap[e]
        for d in range(depth):
            e = stack_edge[d]
            cap[e] -= bott
            cap[e ^ 1] += bott
        total += bott


@njit(cache=True)
def max_flow(n, s, t, head, nxt, to, cap):
    """Runs Dinic to completion; cap becomes the residual capacities."""
    level = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    it = np.empty(n, dtype=np.int64)
    stack_node = np.empty(n + 2, dtype=np.int64)
    stack_edge = np.empty(n + 2, dtype=np.int64)
    flow = 0.0
    while _bfs_levels(n, s, t, head, nxt, to, cap, level, queue):
        for i in range(n):
            it[i] = head[i]
        flow += _dfs_push(s, t, head, nxt, to, cap, level, it,
                          stack_node, stack_edge)
    return flow


@njit(cache=True)
def residual_reachable(n, start, head, nxt, to, cap, forward):
    """Nodes reachable from `start` through positive-residual arcs; when
    forward is False, traverses arcs backwards (positive residual into start's
    side), giving the sink-side set."""
    seen = np.zeros(n, dtype=np.uint8)
    queue = np.empty(n, dtype=np.int64)
    seen[start] = 1
    queue[0] = start
    qh, qt = 0, 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        e = head[u]
        while e != -1:
            v = to[e]
            c = cap[e] if forward else cap[e ^ 1]
            if c > EPS and seen[v] == 0:
                seen[v] = 1
                queue[qt] = v
                qt += 1
            e = nxt[e]
    return seen


class FlowGraph:
    """Edge-list builder producing the arrays the kernels need."""

    def __init__(self, n_nodes: int, max_edges: int):
        self.n = n_nodes
        self.head = np.full(n_nodes, -1, dtype=np.int64)
        self.nxt = np.empty(2 * max_edges, dtype=np.int64)
        self.to = np.empty(2 * max_edges, dtype=np.int64)
        self.cap = np.zeros(2 * max_edges, dtype=np.float64)
        self.m = 0

    def add_edge(self, u: int, v: int, c: float, c_rev: float = 0.0) -> int:
        e = self.m
        self.to[e] = v
        self.cap[e] = c
        self.nxt[e] = self.head[u]
        self.head[u] = e
        self.to[e + 1] = u
        self.cap[e + 1] = c_rev
        self.nxt[e + 1] = self.head[v]
        self.head[v] = e + 1
        self.m += 2
        return e
