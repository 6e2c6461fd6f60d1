"""Tree likelihoods and the recursive correlated/independent likelihood ratio.

Values that may span many orders of magnitude are carried as natural logs
with ``-inf`` standing for an exact zero.
"""

from __future__ import annotations

import math
import threading
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .sampling import ModelParams
from .treespace import TreeArena

NEG_INF = -math.inf
STATE_CAP = 1 << 20


class ResourceError(RuntimeError):
    """A computation would exceed its configured size bound."""


class ContractViolation(ValueError):
    """Arguments violate an operation's precondition."""


def log_poisson(k: int, mu: float) -> float:
    if mu == 0.0:
        return 0.0 if k == 0 else NEG_INF
    return -mu + k * math.log(mu) - math.lgamma(k + 1)


def poisson_cutoff(mu: float, tail: float = 1e-18) -> int:
    """A child count beyond which Poisson(mu) mass is negligible (pmf below tail, plus slack)."""
    if mu <= 0:
        return 0
    k = int(mu) + 1
    while log_poisson(k, mu) > math.log(tail):
        k += 1
    return k + 10


def _xlogy(n: int, y: float) -> float:
    """n log y with the convention 0 log 0 = 0."""
    if n == 0:
        return 0.0
    return n * math.log(y) if y > 0.0 else NEG_INF


def psi(k: int, c: int, cp: int, lam: float, s: float, sp: float) -> float:
    """log psi(k, c, c') = lam s s' - k log lam - log k! + (c-k) log(1-s') + (c'-k) log(1-s)."""
    if not 0 <= k <= min(c, cp):
        raise ContractViolation(f"k={k} outside [0, min({c}, {cp})]")
    if k > 0 and lam <= 0.0:
        raise ContractViolation("psi with k > 0 needs lam > 0")
    val = lam * s * sp - math.lgamma(k + 1) + _xlogy(c - k, 1.0 - sp) + _xlogy(cp - k, 1.0 - s)
    if k:
        val -= k * math.log(lam)
    return val


def gw_log_likelihood(
    t: int, d: int, mu: float, arena: TreeArena, memo: dict | None = None
) -> float:
    """log GW_d^(mu)(t) for the unlabeled tree t read down to depth d.

    Each internal node contributes log Poisson(mu) of its child count plus
    the multinomial log(c! / prod N_tau!) counting the orderings of its
    children, so that the masses over unlabeled trees sum to one.
    """
    if memo is None:
        memo = {}

    def rec(u: int, depth: int) -> float:
        if depth <= 0:
            return 0.0
        key = (u, depth)
        v = memo.get(key)
        if v is None:
            kids: dict[int, int] = {}
            for c in arena.children(u):
                c = arena.truncate(c, depth - 1)
                kids[c] = kids.get(c, 0) + 1
            n = arena.degree(u)
            v = log_poisson(n, mu) + math.lgamma(n + 1)
            for c, m in kids.items():
                v += m * rec(c, depth - 1) - math.lgamma(m + 1)
            memo[key] = v
        return v

    return rec(t, d)


def grouped_matching_sums(
    log_w: np.ndarray, row_mult: Sequence[int], col_mult: Sequence[int]
) -> np.ndarray:
    """log m_k for k = 0..min(c, c') where rows/columns come in identical groups.

    ``log_w[a, b]`` is the log entry shared by every row of group a and every
    column of group b. m_k sums, over all sets of k disjoint (row, column)
    pairs, the product of entries. The DP state records how many columns of
    each group are used, so identical columns are never distinguished.
    """
    log_w = np.asarray(log_w, dtype=np.float64)
    row_mult = [int(x) for x in row_mult]
    col_mult = [int(x) for x in col_mult]
    if math.prod(m + 1 for m in row_mult) < math.prod(m + 1 for m in col_mult):
        log_w = log_w.T
        row_mult, col_mult = col_mult, row_mult
    c, cp = sum(row_mult), sum(col_mult)
    kmax = min(c, cp)
    if kmax == 0:
        return np.zeros(1)
    n_states = math.prod(m + 1 for m in col_mult)
    if n_states > STATE_CAP:
        raise ResourceError(
            f"matching DP needs {n_states} states (cap {STATE_CAP}); "
            "lower lam or cap the degree"
        )
    idx = np.arange(n_states)
    strides, used = [], []
    stride = 1
    for m in col_mult:
        strides.append(stride)
        used.append((idx // stride) % (m + 1))
        stride *= m + 1
    k_of = np.sum(used, axis=0) if used else np.zeros(n_states, dtype=np.int64)

    moves = []
    for b, m in enumerate(col_mult):
        src = np.nonzero(used[b] < m)[0]
        moves.append((b, src, src + strides[b], np.log(m - used[b][src])))

    dp = np.full(n_states, NEG_INF)
    dp[0] = 0.0
    with np.errstate(invalid="ignore"):
        for a, r in enumerate(row_mult):
            for _ in range(r):
                new = dp.copy()
                for b, src, dst, log_ways in moves:
                    w = log_w[a, b]
                    if w == NEG_INF:
                        continue
                    new[dst] = np.logaddexp(new[dst], dp[src] + log_ways + w)
                dp = new
    out = np.full(kmax + 1, NEG_INF)
    for k in range(kmax + 1):
        sel = dp[k_of == k]
        if sel.size:
            out[k] = logsumexp(sel)
    return out


def matching_sums(log_m: np.ndarray) -> np.ndarray:
    """log m_k of a c x c' matrix given entrywise in log domain."""
    log_m = np.atleast_2d(np.asarray(log_m, dtype=np.float64))
    c, cp = log_m.shape
    if min(c, cp) > 20:
        raise ResourceError(
            f"matching DP bound exceeded: min(c, c') = {min(c, cp)} > 20; "
            "lower lam or cap the degree"
        )
    return grouped_matching_sums(log_m, [1] * c, [1] * cp)


class LRCache:
    """Memo of log L_d(t, t') for one parameter set and one arena."""

    def __init__(self, params: ModelParams, arena: TreeArena) -> None:
        self.params = params
        self.arena = arena
        self.lam, self.s, self.sp = params.lam, params.s, params.sp
        self._table: dict[tuple[int, int, int], float] = {}
        self._lock = threading.Lock()
        self._psi: dict[tuple[int, int, int], float] = {}

    def __len__(self) -> int:
        return len(self._table)

    def get(self, t: int, tp: int, d: int) -> float | None:
        return self._table.get((t, tp, d))

    def put(self, t: int, tp: int, d: int, value: float) -> float:
        with self._lock:
            return self._table.setdefault((t, tp, d), value)

    def log_psi(self, k: int, c: int, cp: int) -> float:
        key = (k, c, cp)
        v = self._psi.get(key)
        if v is None:
            v = psi(k, c, cp, self.lam, self.s, self.sp)
            self._psi[key] = v
        return v


def _lr(t: int, tp: int, d: int, cache: LRCache) -> float:
    if d <= 0:
        return 0.0
    hit = cache.get(t, tp, d)
    if hit is not None:
        return hit
    arena = cache.arena
    rows = arena.root_counts(t)
    cols = arena.root_counts(tp)
    c, cp = arena.degree(t), arena.degree(tp)
    row_ids, row_mult = list(rows), list(rows.values())
    col_ids, col_mult = list(cols), list(cols.values())
    kmax = min(c, cp)
    terms = []
    ks = [k for k in range(kmax + 1) if cache.log_psi(k, c, cp) > NEG_INF]
    if ks:
        if max(ks) == 0:
            m = np.zeros(1)
        else:
            log_w = np.array(
                [[_lr(a, b, d - 1, cache) for b in col_ids] for a in row_ids]
            ).reshape(len(row_ids), len(col_ids))
            m = grouped_matching_sums(log_w, row_mult, col_mult)
        for k in ks:
            terms.append(cache.log_psi(k, c, cp) + math.lgamma(k + 1) + m[k])
    value = float(logsumexp(terms)) if terms else NEG_INF
    return cache.put(t, tp, d, value)


def likelihood_ratio(
    t: int, tp: int, d: int, params: ModelParams, arena: TreeArena, cache: LRCache | None = None
) -> float:
    """log L_d(t, t') = log P^corr_d(t, t') / P^ind_d(t, t') by the psi recursion."""
    if d < 0:
        raise ContractViolation("d must be non-negative")
    if params.lam <= 0.0:
        raise ContractViolation("likelihood ratio needs lam > 0")
    if cache is None:
        cache = LRCache(params, arena)
    elif cache.params != params or cache.arena is not arena:
        raise ContractViolation("cache was built for other params or arena")
    return _lr(t, tp, d, cache)


Address = tuple[int, ...]


def _node_at(arena: TreeArena, t: int, addr: Address) -> int:
    for pos in addr:
        kids = arena.children(t)
        if not 0 <= pos < len(kids):
            raise ContractViolation(f"address {addr} does not exist")
        t = kids[pos]
    return t


def _check_embedding(
    arena: TreeArena, t_star: int, t: int, emb: Mapping[Address, Address], d: int
) -> None:
    """Embeddings map child-position addresses of t* (down to depth d) into t."""
    if emb.get(()) != ():
        raise ContractViolation("embedding must map root to root")
    stack: list[Address] = [()]
    while stack:
        a = stack.pop()
        if a not in emb:
            raise ContractViolation(f"embedding misses node {a}")
        image = emb[a]
        _node_at(arena, t, image)
        if len(a) >= d:
            continue
        kids = arena.children(_node_at(arena, t_star, a))
        images = set()
        for pos in range(len(kids)):
            child = a + (pos,)
            ci = emb.get(child)
            if ci is None or len(ci) != len(image) + 1 or ci[:-1] != image:
                raise ContractViolation(f"embedding breaks parent relation at {child}")
            images.add(ci)
            stack.append(child)
        if len(images) != len(kids):
            raise ContractViolation(f"embedding is not injective below {a}")


def lr_lower_bound(
    t: int,
    tp: int,
    t_star: int,
    emb: Mapping[Address, Address],
    emb_p: Mapping[Address, Address],
    d: int,
    k: int,
    params: ModelParams,
    arena: TreeArena,
    cache: LRCache | None = None,
) -> float:
    """Explicit lower bound on log L_{d+k}(t, t') from a common subtree t*.

    Nodes of t* are addressed by child positions in canonical order from
    the root; ``emb`` and ``emb_p`` send each address of t* (to depth d) to
    an address in t and t'.
    """
    if d < 1 or k < 0:
        raise ContractViolation("need d >= 1 and k >= 0")
    if cache is None:
        cache = LRCache(params, arena)
    _check_embedding(arena, t_star, t, emb, d)
    _check_embedding(arena, t_star, tp, emb_p, d)
    total = 0.0
    stack: list[Address] = [()]
    while stack:
        a = stack.pop()
        u = _node_at(arena, t, emb[a])
        up = _node_at(arena, tp, emb_p[a])
        if len(a) == d:
            total += likelihood_ratio(u, up, k, params, arena, cache)
            continue
        c_star = arena.degree(_node_at(arena, t_star, a))
        total += cache.log_psi(c_star, arena.degree(u), arena.degree(up))
        stack.extend(a + (pos,) for pos in range(c_star))
    return total


def identity_embedding(arena: TreeArena, t_star: int, d: int) -> dict[Address, Address]:
    """Embedding of t* into itself, to depth d."""
    out: dict[Address, Address] = {}
    stack: list[tuple[Address, int]] = [((), t_star)]
    while stack:
        a, u = stack.pop()
        out[a] = a
        if len(a) < d:
            stack.extend((a + (i,), c) for i, c in enumerate(arena.children(u)))
    return out
