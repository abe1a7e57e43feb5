"""Difficulty-balanced cohort sampling.

A cohort ``S`` of ``n`` items is chosen so its difficulty mean and standard
deviation track the corpus: minimize ``|mu_S - mu| + lam * |sigma_S - sigma|``.
Sampling has two stages, a stratified draw over difficulty quantiles and then
random in/out swaps that are kept only when they lower the objective.
All standard deviations are population (ddof=0).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .errors import CorpusTooSmall, EmptySubset, InvalidCohortSize

MIN_COHORT = 5
MAX_COHORT = 20
LAMBDA_EPS = 1e-6

Corpus = Sequence[tuple[str, int]]


@dataclass(frozen=True)
class SamplerConfig:
    kappa: float
    strata_L: int
    eps_k: float
    max_rounds: int = 3
    proposals_per_round: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.kappa <= 0 or self.strata_L < 1 or self.eps_k <= 0:
            raise ValueError(f"invalid sampler config: {self}")

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "SamplerConfig":
        base = MODE_DEFAULTS[mode]
        return cls(**{**base, **overrides})


MODE_DEFAULTS = {
    "T2I": {"kappa": 1.5, "strata_L": 7, "eps_k": 0.10},
    "TI2I": {"kappa": 1.8, "strata_L": 10, "eps_k": 0.05},
}


@dataclass(frozen=True)
class CorpusStats:
    mu: float
    sigma: float

    @classmethod
    def from_difficulties(cls, values: Iterable[float]) -> "CorpusStats":
        arr = np.asarray(list(values), dtype=np.float64)
        if arr.size == 0:
            raise EmptySubset("no difficulties given")
        return cls(float(arr.mean()), float(arr.std()))


@dataclass(frozen=True)
class CohortResult:
    item_ids: tuple[str, ...]
    mu_S: float
    sigma_S: float
    J: float
    converged: bool
    seed_used: int
    lam: float = 0.0
    epsilon: float = 0.0
    accepted_swaps: int = 0
    proposals: int = 0

    def to_dict(self) -> dict:
        return {
            "item_ids": list(self.item_ids),
            "mu_S": self.mu_S,
            "sigma_S": self.sigma_S,
            "J": self.J,
            "converged": self.converged,
            "seed_used": self.seed_used,
            "lam": self.lam,
            "epsilon": self.epsilon,
            "accepted_swaps": self.accepted_swaps,
            "proposals": self.proposals,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CohortResult":
        return cls(**{**d, "item_ids": tuple(d["item_ids"])})


def objective_J(subset_difficulties: Sequence[float], stats: CorpusStats, lam: float) -> float:
    arr = np.asarray(subset_difficulties, dtype=np.float64)
    if arr.size == 0:
        raise EmptySubset("objective needs a non-empty subset")
    return abs(float(arr.mean()) - stats.mu) + lam * abs(float(arr.std()) - stats.sigma)


def adaptive_lambda(stats: CorpusStats, kappa: float) -> float:
    if stats.mu < 0:
        raise ValueError("mean difficulty must be non-negative")
    return kappa * stats.sigma / (stats.mu + LAMBDA_EPS)


def convergence_threshold(stats: CorpusStats, eps_k: float, n: int) -> float:
    return eps_k * stats.sigma * (20.0 / n)


def _check_size(n: int) -> None:
    if not MIN_COHORT <= n <= MAX_COHORT:
        raise InvalidCohortSize(f"cohort size must be in [{MIN_COHORT}, {MAX_COHORT}], got {n}")


def quantile_strata(corpus: Corpus, L: int) -> list[list[str]]:
    """Split items into ``L`` equal-count strata by (difficulty, id) rank.

    The item of rank ``i`` among ``M`` goes to stratum ``floor(i * L / M)``.
    """
    ordered = sorted(corpus, key=lambda item: (item[1], item[0]))
    m = len(ordered)
    strata: list[list[str]] = [[] for _ in range(L)]
    for rank, (item_id, _) in enumerate(ordered):
        strata[rank * L // m].append(item_id)
    return strata


def spread_indices(k: int, L: int) -> list[int]:
    """``k`` distinct stratum indices spread evenly over ``range(L)``, k <= L."""
    return [int(math.floor((j + 0.5) * L / k)) for j in range(k)]


def stratum_quotas(n: int, L: int) -> list[int]:
    """Items to draw from each stratum so the quotas sum to ``n``.

    With ``n >= L`` every stratum gets ``n // L`` and the remainder goes to
    evenly spread strata; with ``n < L``, ``n`` evenly spread strata get one.
    """
    quotas = [n // L] * L
    for idx in spread_indices(n % L, L) if n % L else []:
        quotas[idx] += 1
    return quotas


def stratified_init(corpus: Corpus, n: int, L: int, seed: int | np.random.Generator) -> list[str]:
    _check_size(n)
    if len(corpus) < n:
        raise CorpusTooSmall(f"corpus has {len(corpus)} items, cohort needs {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    L = min(L, len(corpus))
    strata = quantile_strata(corpus, L)
    quotas = stratum_quotas(n, L)
    remaining = [list(s) for s in strata]
    chosen: list[str] = []
    for idx, quota in enumerate(quotas):
        for _ in range(quota):
            # an exhausted stratum spills to the nearest one with items left
            src = min(
                (j for j in range(L) if remaining[j]),
                key=lambda j: (abs(j - idx), j),
            )
            pick = int(rng.integers(len(remaining[src])))
            chosen.append(remaining[src].pop(pick))
    return chosen


class _Moments:
    """Exact running sums for integer difficulties."""

    def __init__(self, values: Sequence[int]):
        self.n = len(values)
        self.total = sum(values)
        self.sq = sum(v * v for v in values)

    def stats_after(self, out_v: int, in_v: int) -> tuple[float, float]:
        total = self.total - out_v + in_v
        sq = self.sq - out_v * out_v + in_v * in_v
        return self._stats(total, sq)

    def _stats(self, total, sq) -> tuple[float, float]:
        n = self.n
        var = (n * sq - total * total) / (n * n)
        return total / n, math.sqrt(max(var, 0.0))

    def current(self) -> tuple[float, float]:
        return self._stats(self.total, self.sq)

    def swap(self, out_v: int, in_v: int) -> None:
        self.total += in_v - out_v
        self.sq += in_v * in_v - out_v * out_v


def refine_greedy(
    initial: Sequence[str],
    corpus: Corpus,
    stats: CorpusStats,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> CohortResult:
    """Improve ``initial`` by random single swaps accepted only when J drops.

    Runs at most ``cfg.max_rounds * cfg.proposals_per_round`` proposals and
    stops as soon as J falls to the convergence threshold.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    difficulty = dict(corpus)
    members = list(initial)
    if not members:
        raise EmptySubset("initial cohort is empty")
    missing = [m for m in members if m not in difficulty]
    if missing:
        raise ValueError(f"initial cohort has items outside the corpus: {missing[:5]}")
    member_set = set(members)
    outside = [item_id for item_id, _ in corpus if item_id not in member_set]
    n = len(members)

    lam = adaptive_lambda(stats, cfg.kappa)
    eps = convergence_threshold(stats, cfg.eps_k, n)
    moments = _Moments([difficulty[m] for m in members])

    def J_of(mu_s, sigma_s):
        return abs(mu_s - stats.mu) + lam * abs(sigma_s - stats.sigma)

    J = J_of(*moments.current())
    accepted = proposals = 0
    if J > eps and outside:
        budget = cfg.max_rounds * cfg.proposals_per_round
        while proposals < budget:
            proposals += 1
            i = int(rng.integers(n))
            o = int(rng.integers(len(outside)))
            out_v, in_v = difficulty[members[i]], difficulty[outside[o]]
            candidate = J_of(*moments.stats_after(out_v, in_v))
            if candidate < J:
                moments.swap(out_v, in_v)
                members[i], outside[o] = outside[o], members[i]
                J = candidate
                accepted += 1
                if J <= eps:
                    break

    values = [difficulty[m] for m in members]
    arr = np.asarray(values, dtype=np.float64)
    final_J = objective_J(values, stats, lam)
    return CohortResult(
        tuple(members),
        float(arr.mean()),
        float(arr.std()),
        final_J,
        bool(J <= eps),
        cfg.seed,
        lam,
        eps,
        accepted,
        proposals,
    )


def sample_cohort(
    corpus: Corpus,
    n: int,
    mode: str,
    seed: int,
    cfg: SamplerConfig | None = None,
    stats: CorpusStats | None = None,
) -> CohortResult:
    """Draw one cohort of ``n`` items: stratified start, then greedy swaps."""
    _check_size(n)
    if len(corpus) < n:
        raise CorpusTooSmall(f"corpus has {len(corpus)} items, cohort needs {n}")
    cfg = cfg or SamplerConfig.for_mode(mode, seed=seed)
    if cfg.seed != seed:
        cfg = SamplerConfig(**{**cfg.__dict__, "seed": seed})
    stats = stats or CorpusStats.from_difficulties(d for _, d in corpus)
    rng = np.random.default_rng(seed)
    initial = stratified_init(corpus, n, cfg.strata_L, rng)
    return refine_greedy(initial, corpus, stats, cfg, rng)


@dataclass(frozen=True)
class McRow:
    n: int
    delta: float
    sigma_mean: float
    worst: float
    cohort_means: tuple[float, ...] = field(repr=False, default=())


@dataclass(frozen=True)
class McReport:
    mode: str
    mu: float
    R: int
    seed: int
    rows: tuple[McRow, ...]

    def row(self, n: int) -> McRow:
        for r in self.rows:
            if r.n == n:
                return r
        raise KeyError(n)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# diagrameval {__version__} schema 1 mode={self.mode} R={self.R} seed={self.seed}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["mode", "n", "delta", "sigma_mean", "worst"])
        for r in self.rows:
            writer.writerow([self.mode, r.n, repr(r.delta), repr(r.sigma_mean), repr(r.worst)])
        return buf.getvalue()


def mc_statistics(cohort_means: Sequence[float], mu: float) -> tuple[float, float, float]:
    """(mean bias, std of cohort means, worst-case gap)."""
    arr = np.asarray(cohort_means, dtype=np.float64)
    return abs(float(arr.mean()) - mu), float(arr.std()), float(np.max(np.abs(arr - mu)))


def monte_carlo_validate(
    corpus: Corpus,
    n_values: Sequence[int],
    R: int = 100,
    seed: int = 0,
    mode: str = "T2I",
    cfg: SamplerConfig | None = None,
) -> McReport:
    """Repeat the sampler ``R`` times per cohort size with seeds ``seed + k``."""
    for n in n_values:
        _check_size(n)
    stats = CorpusStats.from_difficulties(d for _, d in corpus)
    rows = []
    for n in n_values:
        means = tuple(
            sample_cohort(corpus, n, mode, seed + k, cfg=cfg, stats=stats).mu_S for k in range(R)
        )
        delta, sigma_mean, worst = mc_statistics(means, stats.mu)
        rows.append(McRow(n, delta, sigma_mean, worst, means))
    return McReport(mode, stats.mu, R, seed, tuple(rows))


def synthetic_corpus(
    size: int,
    mu: float,
    sigma: float,
    seed: int = 0,
    prefix: str = "item",
    match_moments: bool = True,
) -> list[tuple[str, int]]:
    """Integer element counts from a normal, rounded and floored at 1.

    With ``match_moments`` the raw draw is standardized first so its sample
    mean and std equal ``mu`` and ``sigma`` before rounding.
    """
    rng = np.random.default_rng(seed)
    raw = rng.normal(0.0, 1.0, size)
    if match_moments and size > 1:
        raw = (raw - raw.mean()) / raw.std()
    values = np.maximum(1, np.rint(mu + sigma * raw)).astype(int)
    return [(f"{prefix}-{i:04d}", int(v)) for i, v in enumerate(values)]
