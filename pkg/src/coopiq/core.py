"""Shared types for coalitions, weight kernels and interaction values.

Coalitions are plain Python ints used as bitmasks: bit ``i`` is set when
player ``i + 1`` is present.  Text formats (JSON, SOUM files) always use the
1-based player ids.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

MAX_PLAYERS = 32


class BudgetExceededError(RuntimeError):
    """Raised when an estimator tries to spend more evaluations than allowed."""


class WeightFamily(str, enum.Enum):
    SHAPLEY = "Shapley"
    BANZHAF = "Banzhaf"
    CHAINING = "Chaining"


class IndexKind(str, enum.Enum):
    SV = "SV"
    BV = "BV"
    MI = "MI"
    CoMI = "CoMI"
    SII = "SII"
    BII = "BII"
    CHII = "CHII"
    STII = "STII"
    kSII = "kSII"
    FSII = "FSII"
    FBII = "FBII"
    SGV = "SGV"
    BGV = "BGV"
    CHGV = "CHGV"

    @property
    def order_one_only(self) -> bool:
        return self in (IndexKind.SV, IndexKind.BV)


# ---------------------------------------------------------------------------
# bitmask helpers
# ---------------------------------------------------------------------------


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def full_mask(n: int) -> int:
    return (1 << n) - 1


def check_coalition(mask: int, n: int) -> None:
    if not 1 <= n <= MAX_PLAYERS:
        raise ValueError(f"player count must be in [1, {MAX_PLAYERS}], got {n}")
    if mask < 0 or mask >> n:
        raise ValueError(f"mask {mask:#x} has bits outside the {n} players")


def players_of(mask: int) -> list[int]:
    """Sorted 1-based player ids contained in ``mask``."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i + 1)
        mask >>= 1
        i += 1
    return out


def mask_of(players: Iterable[int]) -> int:
    """Bitmask for an iterable of 1-based player ids."""
    mask = 0
    for p in players:
        if p < 1:
            raise ValueError(f"player ids are 1-based, got {p}")
        mask |= 1 << (p - 1)
    return mask


def subsets_of_size(n: int, t: int) -> list[int]:
    """All size-``t`` coalitions of ``n`` players in increasing mask order."""
    if not 0 <= t <= n:
        raise ValueError(f"subset size {t} outside [0, {n}]")
    masks = [sum(1 << i for i in combo) for combo in itertools.combinations(range(n), t)]
    masks.sort()
    return masks


def submasks(mask: int) -> list[int]:
    """All submasks of ``mask`` (including 0 and ``mask`` itself)."""
    out = []
    sub = mask
    while True:
        out.append(sub)
        if sub == 0:
            break
        sub = (sub - 1) & mask
    return out


def popcount_array(masks: np.ndarray) -> np.ndarray:
    """Vectorised population count for an integer array."""
    masks = np.asarray(masks, dtype=np.int64)
    counts = np.zeros(masks.shape, dtype=np.int64)
    work = masks.copy()
    while np.any(work):
        counts += work & 1
        work >>= 1
    return counts


# ---------------------------------------------------------------------------
# weight kernels
# ---------------------------------------------------------------------------


def log_binom(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def weight(t: int, s: int, n: int, family: WeightFamily | str) -> float:
    """Cardinal-probabilistic weight ``p_t^s(n)`` of a coalition T given S.

    Args:
        t: size of the conditioning coalition T (disjoint from S).
        s: size of the interaction S.
        n: number of players.
        family: Shapley, Banzhaf or Chaining.

    Returns:
        The kernel value, computed in log-space so that n up to 32 is safe.
    """
    family = WeightFamily(family)
    if not 1 <= s <= n:
        raise ValueError(f"interaction size s={s} outside [1, {n}]")
    if not 0 <= t <= n - s:
        raise ValueError(f"coalition size t={t} outside [0, {n - s}]")
    if family is WeightFamily.SHAPLEY:
        return math.exp(-math.log(n - s + 1) - log_binom(n - s, t))
    if family is WeightFamily.CHAINING:
        return math.exp(math.log(s) - math.log(s + t) - log_binom(n, s + t))
    return math.ldexp(1.0, s - n)


def weight_vector(s: int, n: int, family: WeightFamily | str) -> np.ndarray:
    """``weight(t, s, n, family)`` for t = 0 .. n - s."""
    return np.array([weight(t, s, n, family) for t in range(n - s + 1)])


# ---------------------------------------------------------------------------
# interaction values
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InteractionValues:
    """Values attached to coalitions of sizes ``min_order .. max_order``."""

    index: IndexKind
    n: int
    min_order: int
    max_order: int
    values: Mapping[int, float]
    baseline: float = 0.0
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "index", IndexKind(self.index))
        if not 1 <= self.min_order <= self.max_order <= self.n:
            raise ValueError(
                f"invalid order bounds [{self.min_order}, {self.max_order}] for n={self.n}"
            )
        for mask in self.values:
            check_coalition(mask, self.n)
            if not self.min_order <= popcount(mask) <= self.max_order:
                raise ValueError(f"key {players_of(mask)} violates the order bounds")

    def __getitem__(self, players) -> float:
        """Look up by mask (int) or by an iterable of 1-based player ids."""
        mask = players if isinstance(players, (int, np.integer)) else mask_of(players)
        return self.values.get(int(mask), 0.0)

    def __len__(self) -> int:
        return len(self.values)

    def keys_sorted(self) -> list[int]:
        return sorted(self.values, key=lambda m: (popcount(m), m))

    def total(self) -> float:
        return float(sum(self.values.values()))

    def order_values(self, order: int) -> dict[int, float]:
        return {m: v for m, v in self.values.items() if popcount(m) == order}

    def as_array(self, keys: Sequence[int]) -> np.ndarray:
        return np.array([self.values.get(m, 0.0) for m in keys])

    def to_dict(self) -> dict:
        return {
            "index": self.index.value,
            "n": self.n,
            "baseline": self.baseline,
            "min_order": self.min_order,
            "max_order": self.max_order,
            "values": [
                {"subset": players_of(m), "value": float(self.values[m])}
                for m in self.keys_sorted()
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "InteractionValues":
        values = {mask_of(item["subset"]): float(item["value"]) for item in data["values"]}
        return cls(
            index=IndexKind(data["index"]),
            n=int(data["n"]),
            min_order=int(data["min_order"]),
            max_order=int(data["max_order"]),
            values=values,
            baseline=float(data["baseline"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "InteractionValues":
        return cls.from_dict(json.loads(text))


def top_k_by_magnitude(iv: InteractionValues, k: int) -> list[int]:
    """The ``k`` keys with the largest absolute value; ties go to the smaller mask."""
    if k < 1:
        raise ValueError("k must be at least 1")
    ranked = sorted(iv.values.items(), key=lambda item: (-abs(item[1]), item[0]))
    return [mask for mask, _ in ranked[:k]]


# ---------------------------------------------------------------------------
# budget accounting
# ---------------------------------------------------------------------------


class BudgetLedger:
    """Counts distinct coalition evaluations against a fixed budget."""

    def __init__(self, budget: int):
        if budget < 0:
            raise ValueError("budget must be non-negative")
        self.budget = int(budget)
        self.spent = 0

    @property
    def remaining(self) -> int:
        return self.budget - self.spent

    def charge(self, count: int = 1) -> None:
        if self.spent + count > self.budget:
            raise BudgetExceededError(
                f"charging {count} evaluations exceeds budget {self.budget} (spent {self.spent})"
            )
        self.spent += count
