"""Budget-aware coalition sampling with border enumeration and pairing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import full_mask, popcount, subsets_of_size


def default_size_weights(n: int, kernel: str = "uniform") -> np.ndarray:
    """Probability over coalition sizes 1..n-1 (index 0 is size 1).

    ``"shapley_kernel"`` is proportional to ``1 / binom(n - 2, t - 1)``.
    """
    if n < 2:
        raise ValueError("size weights need at least two players")
    sizes = np.arange(1, n)
    if kernel == "uniform":
        w = np.ones(n - 1)
    elif kernel == "shapley_kernel":
        w = np.array([1.0 / math.comb(n - 2, t - 1) for t in sizes])
    else:
        raise ValueError(f"unknown size kernel {kernel!r}")
    return w / w.sum()


@dataclass(frozen=True)
class SamplerConfig:
    n: int
    budget: int
    size_weights: np.ndarray | None = None
    pairing: bool = True
    border: bool = True
    seed: int = 0

    def weights(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros(0)
        w = default_size_weights(self.n) if self.size_weights is None else np.asarray(self.size_weights, float)
        if w.shape != (self.n - 1,) or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise ValueError("size_weights must be a distribution over sizes 1..n-1")
        return w


@dataclass
class CoalitionBatch:
    n: int
    coalitions: list[int]
    counts: dict[int, int]
    stratum_totals: dict[int, int]
    exhausted_sizes: set[int] = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.coalitions)

    def sizes(self) -> np.ndarray:
        return np.array([popcount(m) for m in self.coalitions], dtype=np.int64)


def _random_subset(rng: np.random.Generator, n: int, size: int) -> int:
    members = rng.choice(n, size=size, replace=False)
    return int(sum(1 << int(i) for i in members))


def sample(config: SamplerConfig) -> CoalitionBatch:
    """Draw distinct coalitions within the configured budget.

    The empty and grand coalitions always come first.  With ``border`` on,
    sizes at the edges whose whole stratum fits in their expected share of
    the budget are enumerated deterministically.  The remaining budget is
    filled by drawing a size from the renormalized weights and a uniform
    subset of that size; with ``pairing`` on, each draw is followed by its
    complement.  ``counts`` keeps draw multiplicities, duplicates are free.
    """
    n, budget = config.n, int(config.budget)
    if budget < 2:
        raise ValueError("budget must cover at least the empty and grand coalitions")
    grand = full_mask(n)
    budget = min(budget, 1 << n)
    coalitions = [0, grand]
    counts = {0: 1, grand: 1}
    stratum_totals: dict[int, int] = {0: 1, n: 1}
    exhausted: set[int] = {0, n}
    present = {0, grand}
    if n < 2:
        return CoalitionBatch(n, coalitions, counts, stratum_totals, exhausted)

    weights = {t: w for t, w in zip(range(1, n), config.weights())}
    remaining = budget - 2
    if remaining == (1 << n) - 2:
        for t in range(1, n):
            masks = subsets_of_size(n, t)
            coalitions.extend(masks)
            counts.update(dict.fromkeys(masks, 1))
            stratum_totals[t] = len(masks)
            exhausted.add(t)
        return CoalitionBatch(n, coalitions, counts, stratum_totals, exhausted)

    if config.border:
        while True:
            open_sizes = [t for t in weights if weights[t] > 0]
            if not open_sizes:
                break
            total = sum(weights[t] for t in open_sizes)
            done = False
            for t in sorted({open_sizes[0], open_sizes[-1]}):
                stratum = math.comb(n, t)
                if stratum <= remaining and stratum <= remaining * weights[t] / total:
                    for mask in subsets_of_size(n, t):
                        coalitions.append(mask)
                        present.add(mask)
                        counts[mask] = 1
                    stratum_totals[t] = stratum
                    exhausted.add(t)
                    remaining -= stratum
                    del weights[t]
                    done = True
                    break
            if not done:
                break
        # strata with zero weight are never sampled, drop them
        weights = {t: w for t, w in weights.items() if w > 0}
    else:
        weights = {t: w for t, w in weights.items() if w > 0}

    if remaining > 0 and weights:
        rng = np.random.default_rng(config.seed)
        sizes = np.array(sorted(weights))
        probs = np.array([weights[t] for t in sizes])
        probs = probs / probs.sum()
        reachable = sum(math.comb(n, int(t)) for t in sizes)
        covered = sum(1 for m in present if popcount(m) in weights)
        max_draws = 64 * budget + 1024

        def _take(mask: int, t: int) -> None:
            nonlocal remaining, covered
            counts[mask] = counts.get(mask, 0) + 1
            stratum_totals[t] = stratum_totals.get(t, 0) + 1
            if mask not in present:
                present.add(mask)
                coalitions.append(mask)
                remaining -= 1
                covered += 1

        draws = 0
        while remaining > 0 and covered < reachable and draws < max_draws:
            draws += 1
            t = int(rng.choice(sizes, p=probs))
            mask = _random_subset(rng, n, t)
            _take(mask, t)
            if config.pairing and n - t in weights:
                comp = grand ^ mask
                # complement is skipped once the budget is used up
                if comp in present or remaining >= 1:
                    _take(comp, n - t)

    return CoalitionBatch(n, coalitions, counts, stratum_totals, exhausted)
