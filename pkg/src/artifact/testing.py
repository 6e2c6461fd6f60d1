"""One-sided tree correlation tests and their Monte Carlo operating points."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .likelihood import (
    NEG_INF, ContractViolation, LRCache, gw_log_likelihood, likelihood_ratio, poisson_cutoff,
)
from .sampling import ModelParams, sample_corr_gw, sample_gw, sample_ind_gw
from .treespace import TreeArena, enumerate_trees

LR_THRESHOLD = "lr_threshold"
Z_AMPLIFIED = "z_amplified"
CONSTANT = "constant"


@dataclass(frozen=True)
class EstimateWithError:
    mean: float
    se: float
    n: int

    def __post_init__(self) -> None:
        if self.se < 0 or self.n < 2:
            raise ValueError("need se >= 0 and at least two samples")

    @classmethod
    def from_samples(cls, x) -> "EstimateWithError":
        x = np.asarray(x, dtype=np.float64)
        return cls(float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)), int(x.size))


@dataclass(eq=False)
class Centering:
    """Reference measures standing in for GW_d^(lam s) and GW_d^(lam s').

    Z is centred with these weights in place of the exact GW masses, which
    turns the infinite centering sums into finite ones. ``dropped`` and
    ``dropped_p`` record the GW mass outside the supports.
    """

    support: list[int]
    weights: np.ndarray
    support_p: list[int]
    weights_p: np.ndarray
    method: str
    dropped: float = 0.0
    dropped_p: float = 0.0
    accept_mass: float = math.nan
    _row: dict[int, float] = field(default_factory=dict)
    _col: dict[int, float] = field(default_factory=dict)


@dataclass(eq=False)
class TestSpec:
    """A test at depth ``depth``: LR threshold, Z-amplified, or constant."""

    __test__ = False

    kind: str
    depth: int
    params: ModelParams
    log_threshold: float = 0.0
    xi: float = 0.0
    inner: "TestSpec | None" = None
    centering: Centering | None = None
    value: bool = False

    def __post_init__(self) -> None:
        if self.kind not in (LR_THRESHOLD, Z_AMPLIFIED, CONSTANT):
            raise ContractViolation(f"unknown test kind {self.kind!r}")
        if self.kind == Z_AMPLIFIED:
            if self.inner is None or self.inner.depth != self.depth - 1:
                raise ContractViolation("z_amplified needs an inner test at depth d-1")
            if not self.xi > 0:
                raise ContractViolation("xi must be positive")


class TreeTester:
    """Evaluates tests on tree pairs with shared arena and LR memo."""

    def __init__(self, params: ModelParams, arena: TreeArena, cache: LRCache | None = None):
        self.params = params
        self.arena = arena
        self.cache = cache or LRCache(params, arena)

    def log_lr(self, t: int, tp: int, d: int) -> float:
        return likelihood_ratio(t, tp, d, self.params, self.arena, self.cache)

    def __call__(self, spec: TestSpec, t: int, tp: int) -> bool:
        if spec.kind == CONSTANT:
            return spec.value
        if spec.kind == LR_THRESHOLD:
            return self.log_lr(t, tp, spec.depth) > spec.log_threshold
        return self.z_statistic(t, tp, spec.inner, spec.centering) >= spec.xi

    def z_statistic(self, t: int, tp: int, inner: TestSpec, centering: Centering) -> float:
        """Z = sum over accepted (tau, tau') of (N_tau - lam s w(tau)) (N'_tau' - lam s' w'(tau')).

        N and N' count the depth-d subtrees hanging from the roots of t and
        t'; w and w' are the centering reference masses.
        """
        d = inner.depth
        lam, s, sp = self.params.lam, self.params.s, self.params.sp
        counts = self._root_counts(t, d)
        counts_p = self._root_counts(tp, d)
        z = 0.0
        for tau, n in counts.items():
            for taup, n_p in counts_p.items():
                if self(inner, tau, taup):
                    z += n * n_p
        z -= lam * sp * sum(n * self._row_mass(tau, inner, centering) for tau, n in counts.items())
        z -= lam * s * sum(n * self._col_mass(tp_, inner, centering) for tp_, n in counts_p.items())
        z += lam * lam * s * sp * self.accept_mass(inner, centering)
        return z

    def _root_counts(self, t: int, d: int) -> dict[int, int]:
        out: dict[int, int] = {}
        for c in self.arena.children(t):
            c = self.arena.truncate(c, d)
            out[c] = out.get(c, 0) + 1
        return out

    def _row_mass(self, tau: int, inner: TestSpec, ctr: Centering) -> float:
        v = ctr._row.get(tau)
        if v is None:
            v = float(sum(w for taup, w in zip(ctr.support_p, ctr.weights_p) if self(inner, tau, taup)))
            ctr._row[tau] = v
        return v

    def _col_mass(self, taup: int, inner: TestSpec, ctr: Centering) -> float:
        v = ctr._col.get(taup)
        if v is None:
            v = float(sum(w for tau, w in zip(ctr.support, ctr.weights) if self(inner, tau, taup)))
            ctr._col[taup] = v
        return v

    def accept_mass(self, inner: TestSpec, ctr: Centering) -> float:
        """Acceptance probability of the inner test under the product reference measure."""
        if math.isnan(ctr.accept_mass):
            ctr.accept_mass = float(
                sum(w * self._row_mass(tau, inner, ctr) for tau, w in zip(ctr.support, ctr.weights))
            )
        return ctr.accept_mass


def _gw_weights(support: list[int], d: int, mu: float, arena: TreeArena) -> np.ndarray:
    memo: dict = {}
    return np.array([math.exp(gw_log_likelihood(t, d, mu, arena, memo)) for t in support])


def build_centering(
    params: ModelParams,
    d: int,
    arena: TreeArena,
    method: str = "exact",
    size_cap: int = 14,
    n_ref: int = 20000,
    rng: np.random.Generator | None = None,
) -> Centering:
    """Reference measures for Z centering at depth d.

    ``exact`` lists trees with their GW masses (all stars up to a Poisson
    cutoff when d = 1, trees of size <= size_cap when d >= 2). ``mc`` uses
    the empirical law of n_ref independent GW samples.
    """
    mu, mup = params.lam * params.s, params.lam * params.sp
    if method == "exact":
        def listing(m: float) -> list[int]:
            if d == 0:
                return [0]
            if d == 1:
                return [arena.star(k) for k in range(poisson_cutoff(m) + 1)]
            return enumerate_trees(d, size_cap, arena)

        sup, sup_p = listing(mu), listing(mup)
        w, w_p = _gw_weights(sup, d, mu, arena), _gw_weights(sup_p, d, mup, arena)
        return Centering(sup, w, sup_p, w_p, "exact",
                         max(0.0, 1.0 - float(w.sum())), max(0.0, 1.0 - float(w_p.sum())))
    if method == "mc":
        if rng is None:
            raise ContractViolation("mc centering needs an rng")

        def empirical(m: float) -> tuple[list[int], np.ndarray]:
            draws: dict[int, int] = {}
            for _ in range(n_ref):
                t = sample_gw(m, d, rng, arena)
                draws[t] = draws.get(t, 0) + 1
            keys = sorted(draws)
            return keys, np.array([draws[k] / n_ref for k in keys])

        sup, w = empirical(mu)
        sup_p, w_p = empirical(mup)
        return Centering(sup, w, sup_p, w_p, "mc")
    raise ContractViolation(f"unknown centering method {method!r}")


def lr_spec(params: ModelParams, d: int, log_threshold: float) -> TestSpec:
    return TestSpec(LR_THRESHOLD, d, params, log_threshold=log_threshold)


def lr_test(t: int, tp: int, spec: TestSpec, tester: TreeTester) -> bool:
    """1{L_d(t, t') > theta}."""
    if spec.kind != LR_THRESHOLD:
        raise ContractViolation("lr_test needs an lr_threshold spec")
    return tester(spec, t, tp)


def threshold_schedule(gamma: float, params: ModelParams, d: int) -> float:
    """log theta_d = gamma (lam s s')^d."""
    rate = params.lam * params.s * params.sp
    if rate <= 1.0:
        warnings.warn(f"lam s s' = {rate} <= 1; schedule does not grow", RuntimeWarning)
    return gamma * rate**d


def _draw_log_lr(tester: TreeTester, d: int, n: int, rng: np.random.Generator,
                 correlated: bool) -> np.ndarray:
    draw = sample_corr_gw if correlated else sample_ind_gw
    out = np.empty(n)
    for i in range(n):
        t, tp = draw(tester.params, d, rng, tester.arena)
        out[i] = tester.log_lr(t, tp, d)
    return out


def calibrate_threshold(
    params: ModelParams, d: int, target_type1: float, n_samples: int,
    rng: np.random.Generator, tester: TreeTester,
) -> float:
    """Empirical (1 - target) quantile of log L_d under P^ind, upper order statistic."""
    if not 0.0 < target_type1 <= 1.0:
        raise ContractViolation("target_type1 must lie in (0, 1]")
    if n_samples * target_type1 < 20:
        raise ContractViolation("need n_samples * target_type1 >= 20")
    vals = np.sort(_draw_log_lr(tester, d, n_samples, rng, correlated=False))
    rank = max(1, math.ceil((1.0 - target_type1) * n_samples))
    return float(vals[rank - 1])


def amplify_test(inner: TestSpec, type1_at_d: float | EstimateWithError,
                 centering: Centering) -> TestSpec:
    """Depth d+1 test 1{Z >= xi} built on an inner depth-d test."""
    p = type1_at_d.mean if isinstance(type1_at_d, EstimateWithError) else float(type1_at_d)
    params = inner.params
    lam, ss = params.lam, params.s * params.sp
    xi = max(4.0 * lam * math.sqrt(ss) * max(p, 0.0) ** 0.25, 3.0 * lam**0.75 * ss**0.25)
    return TestSpec(Z_AMPLIFIED, inner.depth + 1, params, xi=xi, inner=inner, centering=centering)


def estimate_kl(params: ModelParams, d: int, n_samples: int, rng: np.random.Generator,
                tester: TreeTester) -> EstimateWithError:
    """Mean and SE of log L_d over P^corr draws."""
    if n_samples < 100:
        raise ContractViolation("need n_samples >= 100")
    return EstimateWithError.from_samples(_draw_log_lr(tester, d, n_samples, rng, correlated=True))


def _binomial_estimate(hits: np.ndarray) -> EstimateWithError:
    n = hits.size
    p = float(hits.mean())
    return EstimateWithError(p, math.sqrt(p * (1.0 - p) / n), n)


def estimate_operating_point(
    spec: TestSpec, n_samples: int, rng: np.random.Generator, tester: TreeTester,
) -> tuple[EstimateWithError, EstimateWithError]:
    """(type-I error under P^ind, power under P^corr) with binomial SEs."""
    out = []
    for draw in (sample_ind_gw, sample_corr_gw):
        hits = np.empty(n_samples, dtype=bool)
        for i in range(n_samples):
            t, tp = draw(spec.params, spec.depth, rng, tester.arena)
            hits[i] = tester(spec, t, tp)
        out.append(_binomial_estimate(hits))
    return out[0], out[1]


def sample_statistic(
    stat: Callable[[int, int], float], params: ModelParams, d: int, n_samples: int,
    rng: np.random.Generator, arena: TreeArena, correlated: bool,
) -> np.ndarray:
    """Values of stat(t, t') over pairs drawn at depth d."""
    draw = sample_corr_gw if correlated else sample_ind_gw
    out = np.empty(n_samples)
    for i in range(n_samples):
        out[i] = stat(*draw(params, d, rng, arena))
    return out


__all__ = [
    "CONSTANT", "Centering", "EstimateWithError", "LR_THRESHOLD", "NEG_INF", "TestSpec",
    "TreeTester", "Z_AMPLIFIED", "amplify_test", "build_centering", "calibrate_threshold",
    "estimate_kl", "estimate_operating_point", "lr_spec", "lr_test", "sample_statistic",
    "threshold_schedule",
]
