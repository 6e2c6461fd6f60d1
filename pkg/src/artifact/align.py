"""MPAlign: align two sparse graphs by testing dangling neighborhood trees."""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

from .likelihood import ContractViolation, ResourceError
from .sampling import Graph
from .testing import TestSpec, TreeTester
from .treespace import TreeArena


@dataclass
class NeighborhoodView:
    center: int
    radius: int
    tree: int | None
    parent: dict[int, int | None] = field(default_factory=dict)

    @property
    def has_cycle(self) -> bool:
        return self.tree is None


def _bfs(g: Graph, root: int, radius: int, banned: int | None = None):
    """BFS layers from root, never entering ``banned``."""
    parent: dict[int, int | None] = {root: None}
    depth = {root: 0}
    order = [root]
    queue = deque([root])
    while queue:
        u = queue.popleft()
        if depth[u] == radius:
            continue
        for v in g.adj[u]:
            if v == banned or v in parent:
                continue
            parent[v] = u
            depth[v] = depth[u] + 1
            order.append(v)
            queue.append(v)
    return parent, order


def _intern_bfs_tree(parent: dict[int, int | None], order: list[int], arena: TreeArena) -> int:
    kids: dict[int, list[int]] = {}
    ids: dict[int, int] = {}
    for u in reversed(order):
        ids[u] = arena.intern(kids.pop(u, ()))
        p = parent[u]
        if p is not None:
            kids.setdefault(p, []).append(ids[u])
    return ids[order[0]]


def extract_neighborhood(g: Graph, i: int, radius: int, arena: TreeArena) -> NeighborhoodView:
    """Ball of the given radius around i, as a canonical tree unless it holds a cycle."""
    if not 0 <= i < g.n:
        raise ContractViolation(f"node {i} out of range")
    parent, order = _bfs(g, i, radius)
    inside = parent.keys()
    edges = sum(1 for u in order for v in g.adj[u] if v in inside) // 2
    if edges != len(order) - 1:
        return NeighborhoodView(i, radius, None, parent)
    return NeighborhoodView(i, radius, _intern_bfs_tree(parent, order, arena), parent)


def dangling_tree(g: Graph, i: int, i_nb: int, depth: int, arena: TreeArena) -> int:
    """Subtree at neighbor i_nb pointing away from i, cut depth - 1 levels below i_nb."""
    if i_nb not in g.adj[i]:
        raise ContractViolation(f"{i_nb} is not adjacent to {i}")
    if depth < 1:
        raise ContractViolation("depth must be at least 1")
    parent, order = _bfs(g, i_nb, depth - 1, banned=i)
    return _intern_bfs_tree(parent, order, arena)


def _max_matching(adj: list[list[int]], n_right: int, need: int) -> list[tuple[int, int]]:
    """Augmenting-path bipartite matching, stopped once ``need`` pairs are found."""
    match_r = [-1] * n_right

    def augment(u: int, seen: list[bool]) -> bool:
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                if match_r[v] < 0 or augment(match_r[v], seen):
                    match_r[v] = u
                    return True
        return False

    size = 0
    for u in range(len(adj)):
        if augment(u, [False] * n_right):
            size += 1
            if size >= need:
                break
    return [(u, v) for v, u in enumerate(match_r) if u >= 0]


@dataclass
class AlignmentResult:
    matches: dict[int, int]
    candidates: list[tuple[int, int, float]]
    overlap: float | None = None
    error_fraction: float | None = None
    diagnostics: dict = field(default_factory=dict)


def overlap(matches: dict[int, int], sigma_star: dict[int, int], n_star: int) -> float:
    """Fraction of the n* planted nodes mapped to their true partner."""
    if n_star == 0:
        return 0.0
    good = sum(1 for i, j in matches.items() if sigma_star.get(i) == j)
    return good / n_star


def error_fraction(matches: dict[int, int], sigma_star: dict[int, int], n: int) -> float:
    """Matched nodes outside V* or sent to a wrong partner, over n."""
    if n == 0:
        return 0.0
    bad = sum(1 for i, j in matches.items() if sigma_star.get(i) != j)
    return bad / n


def default_depth(c: float, N: int, lam: float, s: float, sp: float) -> int:
    """d = floor(c log N); warns when 4 c log(lam max(s, s')) >= 1."""
    if 4.0 * c * math.log(lam * max(s, sp)) >= 1.0:
        warnings.warn("depth constant c violates 4 c log(lam max(s, s')) < 1", RuntimeWarning)
    return int(math.floor(c * math.log(N)))


def _eligible(g: Graph, d: int, arena: TreeArena, diag: dict, side: str) -> dict[int, list[int]]:
    """Dangling trees of every node with degree >= 3 and a cycle-free 2d-ball."""
    out = {}
    low = cyc = 0
    for i in range(g.n):
        if g.degree(i) < 3:
            low += 1
            continue
        if extract_neighborhood(g, i, 2 * d, arena).has_cycle:
            cyc += 1
            continue
        out[i] = [dangling_tree(g, i, k, d, arena) for k in g.adj[i]]
    diag[f"low_degree_{side}"] = low
    diag[f"cycle_skipped_{side}"] = cyc
    diag[f"eligible_{side}"] = len(out)
    return out


def mpalign(
    g: Graph,
    gp: Graph,
    d: int,
    test: TestSpec,
    tester: TreeTester,
    sigma_star: dict[int, int] | None = None,
    n_star: int | None = None,
) -> AlignmentResult:
    """Run MPAlign and resolve its candidates into an injective map.

    A pair (i, j) is a candidate when three distinct neighbors of i can be
    matched to three distinct neighbors of j with every matched pair of
    dangling trees accepted by ``test``. The candidate score is the largest
    value v such that such a triple exists using only pairs with
    log L_{d-1} >= v; candidates are then accepted greedily by score.
    """
    if d < 2:
        raise ContractViolation("MPAlign needs d >= 2")
    if test.depth != d - 1:
        raise ContractViolation("test must act at depth d - 1")
    arena = tester.arena
    diag: dict = {}
    left = _eligible(g, d, arena, diag, "a")
    right = _eligible(gp, d, arena, diag, "b")

    verdict: dict[tuple[int, int], bool] = {}
    resource_errors = 0
    candidates: list[tuple[int, int, float]] = []
    for i, trees in left.items():
        for j, trees_p in right.items():
            try:
                adj = []
                for a in trees:
                    row = []
                    for col, b in enumerate(trees_p):
                        key = (a, b)
                        ok = verdict.get(key)
                        if ok is None:
                            ok = verdict[key] = tester(test, a, b)
                        if ok:
                            row.append(col)
                    adj.append(row)
                if sum(1 for r in adj if r) < 3:
                    continue
                if len(_max_matching(adj, len(trees_p), 3)) < 3:
                    continue
                score = _bottleneck_score(adj, trees, trees_p, d - 1, tester)
            except ResourceError:
                resource_errors += 1
                continue
            candidates.append((i, j, score))
    diag["pairs_tested"] = len(left) * len(right)
    diag["resource_errors"] = resource_errors
    diag["candidates"] = len(candidates)

    matches: dict[int, int] = {}
    used = set()
    for i, j, _ in sorted(candidates, key=lambda c: (-c[2], c[0], c[1])):
        if i in matches or j in used:
            continue
        matches[i] = j
        used.add(j)
    result = AlignmentResult(matches, candidates, diagnostics=diag)
    if sigma_star is not None:
        result.overlap = overlap(matches, sigma_star, len(sigma_star) if n_star is None else n_star)
        result.error_fraction = error_fraction(matches, sigma_star, g.n)
    return result


def _bottleneck_score(adj, trees, trees_p, depth, tester: TreeTester) -> float:
    weights = {(u, v): tester.log_lr(trees[u], trees_p[v], depth) for u, row in enumerate(adj) for v in row}
    for level in sorted(set(weights.values()), reverse=True):
        sub = [[v for v in row if weights[(u, v)] >= level] for u, row in enumerate(adj)]
        if len(_max_matching(sub, len(trees_p), 3)) >= 3:
            return level
    return -math.inf
