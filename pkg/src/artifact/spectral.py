"""Orthonormal tree basis, diagonalized likelihood ratio and second moments.

The basis f_{d,beta}^(mu) is built from depth d-1 by coefficient extraction
in a truncated multivariate polynomial ring. Every infinite sum over trees is
cut at a size cap and the dropped part is reported next to the result.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve

from .likelihood import LRCache, gw_log_likelihood, likelihood_ratio, poisson_cutoff
from .sampling import ModelParams, sample_corr_gw
from .treespace import TreeArena, count_by_size, enumerate_trees

@dataclass
class CheckReport:
    """Deviation of a numerical identity next to its truncation budget."""

    name: str
    deviation: float
    budget: float
    detail: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return bool(self.deviation <= self.budget)


def _poly_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of two truncated polynomials with the same shape."""
    full = convolve(a, b, method="direct")
    return full[tuple(slice(0, n) for n in a.shape)]


class Basis:
    """Lazily evaluated f_{d,beta}^(mu)(t) for d <= 2.

    ``tau_cap`` bounds the subtree size used when the inner sums
    S_beta = sum_tau GW_d(tau) f_{d,beta}(tau) run over depth-2 trees.
    """

    def __init__(self, mu: float, arena: TreeArena, tau_cap: int = 12) -> None:
        if mu <= 0:
            raise ValueError("mu must be positive")
        self.mu = mu
        self.arena = arena
        self.tau_cap = tau_cap
        self._f: dict[tuple[int, int, int], float] = {}
        self._s: dict[tuple[int, int], float] = {}
        self._gw: dict = {}
        self.s_budget = 0.0

    def gw(self, t: int, d: int) -> float:
        return math.exp(gw_log_likelihood(t, d, self.mu, self.arena, self._gw))

    def support(self, d: int) -> list[int]:
        """Trees summed over in S at depth d."""
        if d == 0:
            return [0]
        if d == 1:
            return [self.arena.star(k) for k in range(poisson_cutoff(self.mu) + 1)]
        if d == 2:
            return enumerate_trees(2, self.tau_cap, self.arena)
        raise ValueError("basis is limited to depth <= 2")

    def inner_sum(self, beta: int, d: int) -> float:
        """S_beta = sum over tau of GW_d(tau) f_{d,beta}(tau), cut at the support."""
        key = (beta, d)
        v = self._s.get(key)
        if v is None:
            sup = self.support(d)
            w = [self.gw(tau, d) for tau in sup]
            v = math.fsum(wi * self.f(beta, tau, d) for wi, tau in zip(w, sup))
            self.s_budget = max(self.s_budget, 1.0 - math.fsum(w))
            self._s[key] = v
        return v

    def f(self, beta: int, t: int, d: int) -> float:
        """f_{d,beta}(t); trees are read through their depth-d truncation."""
        if d < 0 or d > 2:
            raise ValueError("basis is limited to depth <= 2")
        arena = self.arena
        beta = arena.truncate(beta, d)
        t = arena.truncate(t, d)
        key = (beta, t, d)
        v = self._f.get(key)
        if v is not None:
            return v
        if d == 0 or beta == 0:
            v = 1.0
        else:
            v = self._extract(beta, t, d)
        self._f[key] = v
        return v

    def _extract(self, beta: int, t: int, d: int) -> float:
        arena = self.arena
        gamma = arena.root_counts(beta)
        vars_ = list(gamma)
        shape = tuple(gamma[b] + 1 for b in vars_)
        total = sum(gamma.values())
        rt = math.sqrt(self.mu)

        poly = np.ones(shape)
        for axis, b in enumerate(vars_):
            coef = -rt * self.inner_sum(b, d - 1)
            n = shape[axis]
            series = np.array([coef**i / math.factorial(i) for i in range(n)])
            poly = poly * series.reshape([n if j == axis else 1 for j in range(len(vars_))])

        for tau, n_tau in arena.root_counts(t).items():
            lin = np.zeros(shape)
            lin[(0,) * len(vars_)] = 1.0
            for axis, b in enumerate(vars_):
                idx = [0] * len(vars_)
                idx[axis] = 1
                lin[tuple(idx)] = self.f(b, tau, d - 1) / rt
            power = np.zeros(shape)
            power[(0,) * len(vars_)] = 1.0
            term = power.copy()
            x = lin - power
            for j in range(1, min(n_tau, total) + 1):
                term = _poly_mul(term, x)
                power = power + math.comb(n_tau, j) * term
            poly = _poly_mul(poly, power)

        norm = math.sqrt(math.prod(math.factorial(g) for g in gamma.values()))
        return norm * float(poly[tuple(gamma[b] for b in vars_)])


@dataclass
class BasisTable:
    """Dense table f[beta][t] over enumerated trees."""

    d: int
    mu: float
    beta_ids: list[int]
    t_ids: list[int]
    values: np.ndarray


def f_basis(d: int, mu: float, beta_cap: int, t_cap: int, arena: TreeArena,
            basis: Basis | None = None) -> BasisTable:
    """Tabulate f_{d,beta}^(mu)(t) for |beta| <= beta_cap and |t| <= t_cap."""
    if not 0 <= d <= 2:
        raise ValueError("f_basis supports d in {0, 1, 2}")
    basis = basis or Basis(mu, arena)
    betas = enumerate_trees(d, beta_cap, arena)
    ts = enumerate_trees(d, t_cap, arena)
    vals = np.array([[basis.f(b, t, d) for t in ts] for b in betas])
    if not np.all(np.isfinite(vals)):
        raise ArithmeticError("non-finite basis value")
    return BasisTable(d, mu, betas, ts, vals)


def verify_orthogonality(d: int, mu: float, beta_cap: int, t_cap: int, arena: TreeArena,
                         shell: int = 8) -> CheckReport:
    """max |sum_t GW_d(t) f_beta(t) f_beta'(t) - 1{beta = beta'}| over the caps.

    The budget bounds the dropped part sum_{|t| > t_cap} GW |f_beta f_beta'|:
    ``shell`` further size shells are summed exactly and the rest is
    extrapolated geometrically from the last two shells.
    """
    basis = Basis(mu, arena)
    if d == 0:
        return CheckReport("orthogonality", 0.0, 0.0, {"d": 0, "mu": mu})
    betas = enumerate_trees(d, beta_cap, arena)
    ts = enumerate_trees(d, t_cap + shell, arena)
    if d == 1:
        ts = [arena.star(k) for k in range(max(t_cap + shell, poisson_cutoff(mu)))]
    gw = np.array([basis.gw(t, d) for t in ts])
    sizes = np.array([arena.size(t) for t in ts])
    f = np.array([[basis.f(b, t, d) for t in ts] for b in betas])
    inside = sizes <= t_cap
    gram = (f[:, inside] * gw[inside]) @ f[:, inside].T
    dev = float(np.max(np.abs(gram - np.eye(len(betas)))))

    absf = np.abs(f)
    outside = ~inside
    tail = (absf[:, outside] * gw[outside]) @ absf[:, outside].T
    if d == 2 and shell >= 2:
        last_n = t_cap + shell
        last = (absf[:, sizes == last_n] * gw[sizes == last_n]) @ absf[:, sizes == last_n].T
        prev = (absf[:, sizes == last_n - 1] * gw[sizes == last_n - 1]) @ absf[:, sizes == last_n - 1].T
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(prev > 0, last / prev, 0.0)
        ratio = np.clip(ratio, 0.0, 0.99)
        tail = tail + last * ratio / (1.0 - ratio)
    budget = float(np.max(tail)) + 64 * np.finfo(float).eps * len(ts) + basis.s_budget
    return CheckReport(
        "orthogonality", dev, budget,
        {"d": d, "mu": mu, "beta_cap": beta_cap, "t_cap": t_cap,
         "dropped_gw_mass": float(1.0 - gw[inside].sum())},
    )


def _pow(x: float, e: float) -> float:
    return 1.0 if e == 0 else x**e


def diagonal_series(t: int, tp: int, d: int, params: ModelParams, beta_cap: int,
                    basis: Basis, basis_p: Basis) -> float:
    """sum over |beta| <= beta_cap of sqrt(ss')^(|beta|-1) f^(lam s)(t) f^(lam s')(t')."""
    arena = basis.arena
    rho = math.sqrt(params.s * params.sp)
    total = 0.0
    for b in enumerate_trees(d, beta_cap, arena):
        w = _pow(rho, arena.size(b) - 1)
        if w:
            total += w * basis.f(b, t, d) * basis_p.f(b, tp, d)
    return total


def verify_diagonalization(d: int, params: ModelParams, beta_cap: int, t_cap: int,
                           arena: TreeArena, cache: LRCache | None = None) -> CheckReport:
    """Relative gap between the truncated basis expansion and L_d over all pairs.

    Each pair carries the bound sqrt(ss')^beta_cap / sqrt(GW(t) GW'(t')) on
    the dropped beta-mass, which follows from the second orthogonality
    relation sum_beta f_beta(t)^2 = 1 / GW(t).
    """
    cache = cache or LRCache(params, arena)
    if d == 0:
        return CheckReport("diagonalization", 0.0, 0.0, {"d": 0})
    basis = Basis(params.lam * params.s, arena)
    basis_p = Basis(params.lam * params.sp, arena)
    rho = math.sqrt(params.s * params.sp)
    ts = enumerate_trees(d, t_cap, arena)
    worst_dev, worst_budget, worst_margin = 0.0, 0.0, -math.inf
    for t in ts:
        for tp in ts:
            lr = math.exp(likelihood_ratio(t, tp, d, params, arena, cache))
            series = diagonal_series(t, tp, d, params, beta_cap, basis, basis_p)
            rel = abs(series - lr) / lr
            bound = _pow(rho, beta_cap) / math.sqrt(basis.gw(t, d) * basis_p.gw(tp, d)) / lr
            bound += 1e-12 + basis.s_budget + basis_p.s_budget
            if rel - bound > worst_margin:
                worst_margin = rel - bound
                worst_dev, worst_budget = rel, bound
    return CheckReport("diagonalization", worst_dev, worst_budget,
                       {"d": d, "beta_cap": beta_cap, "t_cap": t_cap, "pairs": len(ts) ** 2})


@dataclass
class SeriesValue:
    value: float
    tail: float
    terms: int


def second_moment_exact(d: int, ss: float, n_max: int = 200) -> SeriesValue:
    """E^ind[L_d^2] = sum_n |X_d^(n)| (ss')^(n-1), with a geometric tail estimate."""
    if not 0.0 <= ss < 1.0:
        raise ValueError("ss' must lie in [0, 1)")
    counts = count_by_size(d, n_max)
    terms = [counts[n] * ss ** (n - 1) for n in range(1, n_max + 1)]
    tail = 0.0
    if n_max >= 2 and terms[-1] > 0:
        r = terms[-1] / terms[-2] if terms[-2] else 0.0
        if r >= 1.0:
            warnings.warn(f"second-moment series not decreasing at n={n_max}; ss'={ss} "
                          "is too close to the radius of convergence", RuntimeWarning)
            tail = math.inf
        else:
            tail = terms[-1] * r / (1.0 - r)
    return SeriesValue(math.fsum(terms), tail, n_max)


def y_transform(t: int, d: int, mu: float, basis: Basis, beta_ids: list[int]) -> np.ndarray:
    """y_beta(t) = mu^(-1/2) sum_tau f_{d,beta}(tau) (N_tau - mu GW_d(tau)) over beta_ids."""
    arena = basis.arena
    counts: dict[int, int] = {}
    for tau in arena.children(t):
        tau = arena.truncate(tau, d)
        counts[tau] = counts.get(tau, 0) + 1
    out = np.empty(len(beta_ids))
    for i, b in enumerate(beta_ids):
        realized = math.fsum(n * basis.f(b, tau, d) for tau, n in counts.items())
        out[i] = (realized - mu * basis.inner_sum(b, d)) / math.sqrt(mu)
    return out


@dataclass
class CovarianceReport:
    beta_ids: list[int]
    auto: np.ndarray
    cross: np.ndarray
    auto_target: np.ndarray
    cross_target: np.ndarray
    cross_se: np.ndarray
    auto_se: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(max(np.max(np.abs(self.auto - self.auto_target)),
                         np.max(np.abs(self.cross - self.cross_target))))

    @property
    def max_z(self) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            za = np.abs(self.auto - self.auto_target) / self.auto_se
            zc = np.abs(self.cross - self.cross_target) / self.cross_se
        za = np.where(np.isfinite(za), za, 0.0)
        zc = np.where(np.isfinite(zc), zc, 0.0)
        return float(max(za.max(), zc.max()))


def _cov_with_se(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = a.shape[0]
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    prod = ac[:, :, None] * bc[:, None, :]
    cov = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / math.sqrt(n)
    return cov, se


def gaussian_covariance_check(params: ModelParams, d: int, n_samples: int, beta_cap: int,
                              rng: np.random.Generator, arena: TreeArena) -> CovarianceReport:
    """Empirical covariance of (y(t), y(t')) under P^corr_{d+1} against its target."""
    if d > 1:
        raise ValueError("covariance check supports d <= 1")
    if params.lam < 20:
        warnings.warn("covariance check is meant for lam >= 20", RuntimeWarning)
    mu, mup = params.lam * params.s, params.lam * params.sp
    basis, basis_p = Basis(mu, arena), Basis(mup, arena)
    betas = enumerate_trees(d, beta_cap, arena)
    ys = np.empty((n_samples, len(betas)))
    yps = np.empty((n_samples, len(betas)))
    for i in range(n_samples):
        t, tp = sample_corr_gw(params, d + 1, rng, arena)
        ys[i] = y_transform(t, d, mu, basis, betas)
        yps[i] = y_transform(tp, d, mup, basis_p, betas)
    auto, auto_se = _cov_with_se(ys, ys)
    cross, cross_se = _cov_with_se(ys, yps)
    rho = math.sqrt(params.s * params.sp)
    sizes = np.array([arena.size(b) for b in betas])
    return CovarianceReport(
        betas, auto, cross, np.eye(len(betas)), np.diag(rho**sizes), cross_se, auto_se,
    )
