"""Canonical unlabeled rooted trees of bounded depth.

Trees are hash-consed into a :class:`TreeArena`. A tree is identified by an
integer id; its children are stored as a sorted tuple of child ids, so two
isomorphic trees always intern to the same id. Id 0 is the single node.
"""

from __future__ import annotations

import threading
from collections import Counter
from typing import Hashable, Iterable, Mapping, Sequence

OTTER_ALPHA = 0.3383219


class StructuralInputError(ValueError):
    """Input graph is not a finite rooted tree."""


class TreeArena:
    """Append-only intern table for canonical rooted trees."""

    def __init__(self) -> None:
        self._children: list[tuple[int, ...]] = [()]
        self._size: list[int] = [1]
        self._depth: list[int] = [0]
        self._index: dict[tuple[int, ...], int] = {(): 0}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._children)

    def key(self, t: int) -> tuple[int, int, int]:
        return (self._size[t], self._depth[t], t)

    def intern(self, children: Iterable[int]) -> int:
        """Return the id of the tree whose root has the given child multiset."""
        kids = tuple(sorted(children, key=self.key))
        t = self._index.get(kids)
        if t is not None:
            return t
        with self._lock:
            t = self._index.get(kids)
            if t is None:
                t = len(self._children)
                self._children.append(kids)
                self._size.append(1 + sum(self._size[c] for c in kids))
                self._depth.append(1 + max(self._depth[c] for c in kids))
                self._index[kids] = t
        return t

    def children(self, t: int) -> tuple[int, ...]:
        return self._children[t]

    def size(self, t: int) -> int:
        return self._size[t]

    def depth(self, t: int) -> int:
        return self._depth[t]

    def degree(self, t: int) -> int:
        return len(self._children[t])

    def root_counts(self, t: int) -> Counter:
        """Subtree counts N_tau at the root, as a Counter over child ids."""
        return Counter(self._children[t])

    def truncate(self, t: int, d: int) -> int:
        """Id of the tree cut below depth d."""
        if d <= 0:
            return 0
        if self._depth[t] <= d:
            return t
        return self.intern(self.truncate(c, d - 1) for c in self._children[t])

    def star(self, k: int) -> int:
        return self.intern([0] * k)

    def path(self, n: int) -> int:
        """Path on n nodes rooted at an end."""
        t = 0
        for _ in range(n - 1):
            t = self.intern([t])
        return t

    def to_parens(self, t: int) -> str:
        """Nested-parenthesis text; children ordered by (size, depth, text)."""
        memo: dict[int, str] = {}

        def rec(u: int) -> str:
            s = memo.get(u)
            if s is None:
                parts = sorted(
                    (self._size[c], self._depth[c], rec(c)) for c in self._children[u]
                )
                s = "(" + "".join(p[2] for p in parts) + ")"
                memo[u] = s
            return s

        return rec(t)

    def from_parens(self, text: str) -> int:
        """Parse nested-parenthesis text into a canonical id."""
        text = "".join(text.split())
        if not text:
            raise StructuralInputError("empty tree text")
        stack: list[list[int]] = []
        result = None
        for pos, ch in enumerate(text):
            if result is not None:
                raise StructuralInputError(f"trailing input at position {pos}")
            if ch == "(":
                stack.append([])
            elif ch == ")":
                if not stack:
                    raise StructuralInputError(f"unbalanced ')' at position {pos}")
                t = self.intern(stack.pop())
                if stack:
                    stack[-1].append(t)
                else:
                    result = t
            else:
                raise StructuralInputError(f"unexpected character {ch!r}")
        if result is None:
            raise StructuralInputError("unbalanced '('")
        return result


def canonicalize(
    adjacency: Mapping[Hashable, Iterable[Hashable]] | Sequence[Iterable[int]],
    root: Hashable,
    arena: TreeArena,
) -> int:
    """Intern a labeled rooted tree given as an adjacency structure.

    Every vertex listed in ``adjacency`` must be reachable from ``root`` and
    the graph must be acyclic.
    """
    if isinstance(adjacency, Mapping):
        adj = {u: list(vs) for u, vs in adjacency.items()}
    else:
        adj = {u: list(vs) for u, vs in enumerate(adjacency)}
    adj.setdefault(root, [])

    parent = {root: None}
    order = [root]
    stack = [root]
    while stack:
        u = stack.pop()
        seen_parent = False
        for v in adj.get(u, ()):
            if v == parent[u] and not seen_parent:
                seen_parent = True
                continue
            if v in parent:
                raise StructuralInputError("input contains a cycle")
            parent[v] = u
            order.append(v)
            stack.append(v)
    if len(parent) != len(adj):
        raise StructuralInputError("input is disconnected")

    kids: dict[Hashable, list[int]] = {}
    ids: dict[Hashable, int] = {}
    for u in reversed(order):
        ids[u] = arena.intern(kids.pop(u, ()))
        p = parent[u]
        if p is not None:
            kids.setdefault(p, []).append(ids[u])
    return ids[root]


def enumerate_trees(max_depth: int, max_size: int, arena: TreeArena) -> list[int]:
    """All canonical trees with depth <= max_depth and size <= max_size."""
    if max_depth < 0 or max_size < 1:
        raise ValueError("need max_depth >= 0 and max_size >= 1")
    level = [0]
    for _ in range(max_depth):
        subs = sorted(level, key=arena.key)
        out: list[int] = []

        def grow(start: int, budget: int, acc: list[int]) -> None:
            out.append(arena.intern(acc))
            for idx in range(start, len(subs)):
                sz = arena.size(subs[idx])
                if sz > budget:
                    break
                acc.append(subs[idx])
                grow(idx, budget - sz, acc)
                acc.pop()

        grow(0, max_size - 1, [])
        level = out
    return sorted(level, key=arena.key)


def count_by_size(max_depth: int, max_size: int) -> dict[int, int]:
    """Exact counts n -> |X_d^(n)| for n = 1..max_size.

    Uses the Euler transform: multisets of depth-(d-1) trees of total size
    n - 1 are in bijection with depth-d trees of size n.
    """
    if max_depth < 0 or max_size < 1:
        raise ValueError("need max_depth >= 0 and max_size >= 1")
    a = [0] * (max_size + 1)
    a[1] = 1
    for _ in range(max_depth):
        m = max_size - 1
        c = [0] * (m + 1)
        for size in range(1, m + 1):
            if a[size]:
                for k in range(size, m + 1, size):
                    c[k] += size * a[size]
        b = [0] * (m + 1)
        b[0] = 1
        for n in range(1, m + 1):
            b[n] = sum(c[k] * b[n - k] for k in range(1, n + 1)) // n
        a = [0] + b
    return {n: a[n] for n in range(1, max_size + 1)}


def otter_ratio(max_n: int, corrected: bool = False) -> dict[int, float]:
    """Ratios |X_n^(n+1)| / |X_(n-1)^(n)| for n = 1..max_n.

    With ``corrected`` the ratio is multiplied by (1 + 1/n)^(3/2), which
    removes the polynomial factor n^(-3/2) of the asymptotic count.
    """
    if max_n < 3:
        raise ValueError("need max_n >= 3")
    counts = count_by_size(max_n, max_n + 1)
    out = {}
    for n in range(1, max_n + 1):
        r = counts[n + 1] / counts[n]
        if corrected:
            r *= (1.0 + 1.0 / n) ** 1.5
        out[n] = r
    return out
