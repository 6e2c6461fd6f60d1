"""Seeded samplers: Erdos-Renyi graphs, correlated graph pairs, GW trees."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .treespace import TreeArena

GW_NODE_CAP = 10**6


class ParameterError(ValueError):
    """Model parameters outside their valid range."""


class TruncationError(RuntimeError):
    """A Galton-Watson sample exceeded the node cap."""


@dataclass(frozen=True)
class ModelParams:
    """Parameters of CER(N, lam, q, q', r, r'); s = q r and s' = q' r'."""

    N: int
    lam: float
    q: float = 1.0
    qp: float = 1.0
    r: float = 1.0
    rp: float = 1.0

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ParameterError("N must be positive")
        if not self.lam >= 0:
            raise ParameterError("lam must be non-negative")
        for name in ("q", "qp"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1]")
        for name in ("r", "rp"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ParameterError(f"{name} must lie in (0, 1]")
        for name, p in self.edge_probabilities().items():
            if p > 1.0:
                raise ParameterError(f"{name} probability {p} exceeds 1")

    @classmethod
    def for_trees(cls, lam: float, s: float, sp: float, N: int = 10**9) -> "ModelParams":
        """Parameters carrying only (lam, s, s'); node correlation set to s, s'."""
        return cls(N=N, lam=lam, q=s, qp=sp)

    @property
    def s(self) -> float:
        return self.q * self.r

    @property
    def sp(self) -> float:
        return self.qp * self.rp

    def edge_probabilities(self) -> dict[str, float]:
        f = self.lam / self.N
        return {
            "intersection": self.r * self.rp * f,
            "augment": self.r * (1.0 - self.rp) * f,
            "augment_prime": (1.0 - self.r) * self.rp * f,
        }


@dataclass
class Graph:
    """Simple undirected graph with sorted neighbor lists."""

    n: int
    adj: list[list[int]] = field(default_factory=list)

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        adj: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop at {u}")
            adj[u].add(v)
            adj[v].add(u)
        return cls(n, [sorted(a) for a in adj])

    def degree(self, i: int) -> int:
        return len(self.adj[i])

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.n) for v in self.adj[u] if u < v]

    def num_edges(self) -> int:
        return sum(len(a) for a in self.adj) // 2

    def relabel(self, perm: np.ndarray) -> "Graph":
        """Graph with node u renamed to perm[u]."""
        return Graph.from_edges(self.n, ((perm[u], perm[v]) for u, v in self.edges()))


@dataclass
class CorrelatedPair:
    g: Graph
    g_prime: Graph
    g_star: Graph
    v_star: np.ndarray
    v_star_prime: np.ndarray
    sigma_star: dict[int, int]
    n_plus: int
    n_plus_prime: int

    @property
    def n(self) -> int:
        return self.g.n

    @property
    def n_prime(self) -> int:
        return self.g_prime.n

    @property
    def n_star(self) -> int:
        return self.g_star.n


def _skip_sample(start: int, stop: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Indices in [start, stop) kept independently with probability p, by geometric jumps."""
    total = stop - start
    if total <= 0 or p <= 0.0:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(start, stop, dtype=np.int64)
    chunks = []
    pos = -1
    batch = max(16, int(total * p * 1.1) + 16)
    while True:
        gaps = rng.geometric(p, size=batch)
        idx = pos + np.cumsum(gaps)
        hit = idx < total
        chunks.append(idx[hit])
        if not hit.all():
            break
        pos = int(idx[-1])
    return start + np.concatenate(chunks).astype(np.int64)


def _pair_from_index(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower-triangle index k -> pair (v, w), w < v, with k = v(v-1)/2 + w."""
    v = ((1 + np.sqrt(1 + 8 * k.astype(np.float64))) // 2).astype(np.int64)
    v -= ((v * (v - 1) // 2) > k).astype(np.int64)
    v += (((v + 1) * v // 2) <= k).astype(np.int64)
    return v, k - v * (v - 1) // 2


def _er_pairs(n: int, p: float, rng: np.random.Generator, first_new: int = 0) -> np.ndarray:
    """Pair indices of an ER sample restricted to pairs whose larger node is >= first_new."""
    lo = first_new * (first_new - 1) // 2
    hi = n * (n - 1) // 2
    return _skip_sample(lo, hi, p, rng)


def _graph_from_pairs(n: int, keys: np.ndarray) -> Graph:
    v, w = _pair_from_index(keys)
    return Graph.from_edges(n, zip(v.tolist(), w.tolist()))


def sample_er(n: int, p: float, rng: np.random.Generator) -> Graph:
    """G(n, p) by geometric skipping over the n(n-1)/2 vertex pairs."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError("p must lie in [0, 1]")
    return _graph_from_pairs(n, _er_pairs(n, p, rng))


def sample_cer(params: ModelParams, rng: np.random.Generator) -> CorrelatedPair:
    """Sample (G, G') from CER(N, lam, q, q', r, r') with planted matching."""
    N = params.N
    probs = params.edge_probabilities()
    q, qp = params.q, params.qp
    # one multinomial split keeps every marginal binomial, including n ~ Bin(N, q)
    cats = [q * qp, q * (1.0 - qp), (1.0 - q) * qp, (1.0 - q) * (1.0 - qp)]
    n_star, n_plus, n_plus_p, _ = (int(x) for x in rng.multinomial(N, cats))

    star_keys = _er_pairs(n_star, probs["intersection"], rng)

    def augment(n_new: int, p_aug: float) -> np.ndarray:
        n = n_star + n_new
        node_keys = _er_pairs(n, probs["intersection"], rng, first_new=n_star)
        edge_keys = _er_pairs(n, p_aug, rng)
        return np.union1d(np.union1d(star_keys, node_keys), edge_keys)

    keys = augment(n_plus, probs["augment"])
    keys_p = augment(n_plus_p, probs["augment_prime"])
    n, n_p = n_star + n_plus, n_star + n_plus_p

    perm = rng.permutation(n)
    perm_p = rng.permutation(n_p)
    g = _graph_from_pairs(n, keys).relabel(perm)
    g_p = _graph_from_pairs(n_p, keys_p).relabel(perm_p)
    v_star = perm[:n_star].copy()
    v_star_p = perm_p[:n_star].copy()
    sigma = dict(zip(v_star.tolist(), v_star_p.tolist()))
    return CorrelatedPair(
        g=g,
        g_prime=g_p,
        g_star=_graph_from_pairs(n_star, star_keys),
        v_star=v_star,
        v_star_prime=v_star_p,
        sigma_star=sigma,
        n_plus=n_plus,
        n_plus_prime=n_plus_p,
    )


def _build_forest(
    counts_by_level: list[np.ndarray], extra: list[list[int]] | None, arena: TreeArena
) -> list[int]:
    """Intern trees bottom-up from per-level child counts.

    ``counts_by_level[l][i]`` is the child count of node i at level l; children
    of level-l nodes are the level-(l+1) nodes in parent order. ``extra[l][i]``
    optionally lists additional already-interned child ids.
    """
    ids: list[int] = []
    for lvl in range(len(counts_by_level) - 1, -1, -1):
        counts = counts_by_level[lvl]
        new_ids = []
        pos = 0
        for i, c in enumerate(counts.tolist()):
            kids = ids[pos:pos + c]
            pos += c
            if extra is not None and extra[lvl]:
                kids = kids + extra[lvl][i]
            new_ids.append(arena.intern(kids))
        ids = new_ids
    return ids


def _gw_levels(
    mu: float, n_roots: int, depth: int, rng: np.random.Generator, cap: int
) -> list[np.ndarray]:
    levels = []
    width = n_roots
    total = n_roots
    for _ in range(depth):
        counts = rng.poisson(mu, size=width) if mu > 0 else np.zeros(width, dtype=np.int64)
        levels.append(counts)
        width = int(counts.sum())
        total += width
        if total > cap:
            raise TruncationError(f"Galton-Watson sample exceeded {cap} nodes")
    levels.append(np.zeros(width, dtype=np.int64))
    return levels


def sample_gw_forest(
    mu: float, n_roots: int, depth: int, rng: np.random.Generator, arena: TreeArena,
    cap: int = GW_NODE_CAP,
) -> list[int]:
    """Ids of n_roots independent GW(mu) trees cut at depth."""
    if n_roots == 0:
        return []
    return _build_forest(_gw_levels(mu, n_roots, depth, rng, cap), None, arena)


def sample_gw(
    mu: float, depth: int, rng: np.random.Generator, arena: TreeArena, cap: int = GW_NODE_CAP
) -> int:
    """GW tree with Poisson(mu) offspring, cut at depth, as a canonical id."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    return sample_gw_forest(mu, 1, depth, rng, arena, cap)[0]


def sample_corr_gw(
    params: ModelParams, depth: int, rng: np.random.Generator, arena: TreeArena,
    cap: int = GW_NODE_CAP,
) -> tuple[int, int]:
    """Correlated pair (t, t') built around an intersection tree t* ~ GW(lam s s')."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    lam, s, sp = params.lam, params.s, params.sp
    core = _gw_levels(lam * s * sp, 1, depth, rng, cap)

    def decorate(mu_extra: float, mu_sub: float) -> int:
        extra: list[list[list[int]]] = []
        for lvl in range(depth + 1):
            width = core[lvl].size
            if lvl == depth:
                extra.append([])
                continue
            k = rng.poisson(mu_extra, size=width) if mu_extra > 0 else np.zeros(width, int)
            subs = sample_gw_forest(mu_sub, int(k.sum()), depth - lvl - 1, rng, arena, cap)
            splits = np.cumsum(k)[:-1]
            extra.append([a.tolist() for a in np.split(np.asarray(subs, dtype=np.int64), splits)])
        return _build_forest(core, extra, arena)[0]

    t = decorate(lam * s * (1.0 - sp), lam * s)
    tp = decorate(lam * sp * (1.0 - s), lam * sp)
    return t, tp


def sample_ind_gw(
    params: ModelParams, depth: int, rng: np.random.Generator, arena: TreeArena,
    cap: int = GW_NODE_CAP,
) -> tuple[int, int]:
    """Independent pair GW(lam s) x GW(lam s')."""
    t = sample_gw(params.lam * params.s, depth, rng, arena, cap)
    tp = sample_gw(params.lam * params.sp, depth, rng, arena, cap)
    return t, tp


def spawn_rng(seed: int, *index: int) -> np.random.Generator:
    """Generator for a cell of an experiment, split from a master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, index)]))


def write_graph(g: Graph, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{g.n}\n")
        for u, v in g.edges():
            fh.write(f"{u} {v}\n")


def read_graph(path) -> Graph:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines or len(lines[0]) != 1:
        raise ValueError(f"{path}: expected node count header")
    n = int(lines[0][0])
    edges = []
    for ln in lines[1:]:
        u, v = int(ln[0]), int(ln[1])
        if not (0 <= u < n and 0 <= v < n):
            raise ValueError(f"{path}: edge ({u}, {v}) out of range")
        edges.append((u, v))
    return Graph.from_edges(n, edges)


def write_sigma(sigma: dict[int, int], path) -> None:
    with open(path, "w") as fh:
        fh.write("sigma\n")
        for i in sorted(sigma):
            fh.write(f"{i} {sigma[i]}\n")


def read_sigma(path) -> dict[int, int]:
    sigma = {}
    with open(path) as fh:
        for ln in fh:
            parts = ln.split()
            if len(parts) == 2 and not ln.startswith("#"):
                sigma[int(parts[0])] = int(parts[1])
    return sigma
