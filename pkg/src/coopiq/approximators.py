"""Budget-limited estimators of semivalues and interaction indices.

Every estimator takes a game, a budget counted in distinct coalition
evaluations, and a seed.  Evaluations go through a memo that charges the
budget once per coalition and returns values relative to the empty
coalition.  When the budget covers all ``2**n`` coalitions the estimators
enumerate the lattice and return the expectation of their sampling law,
which equals the exact index.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy import linalg

from .core import (
    BudgetLedger,
    IndexKind,
    InteractionValues,
    WeightFamily,
    popcount,
    subsets_of_size,
    weight,
)
from .exact import DEFAULT_MU_INF, aggregate_ksii, kernel_mu, si_from_moebius
from .games import Game, sizes_table
from .sampler import SamplerConfig, default_size_weights, sample

logger = logging.getLogger(__name__)

# exhaustive evaluation is only attempted for lattices this small
_MAX_EXHAUSTIVE_PLAYERS = 16


class UnderdeterminedWarning(RuntimeWarning):
    """A regression had fewer informative coalitions than model columns."""


@dataclass(frozen=True)
class ApproximationResult:
    estimate: InteractionValues
    budget_used: int
    method: str
    seed: int

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "budget_used": self.budget_used,
            "estimate": self.estimate.to_dict(),
        }


class _Memo:
    """Coalition values cached per run and charged to a budget ledger."""

    def __init__(self, game: Game, budget: int):
        self.game = game
        self.n = game.n
        self.ledger = BudgetLedger(budget)
        self.cache: dict[int, float] = {}
        self.offset = 0.0
        self.offset = float(self.values([0])[0])
        self.cache[0] = 0.0

    @property
    def remaining(self) -> int:
        return self.ledger.remaining

    def missing(self, masks: Iterable[int]) -> list[int]:
        seen = set()
        out = []
        for m in masks:
            m = int(m)
            if m not in self.cache and m not in seen:
                seen.add(m)
                out.append(m)
        return out

    def fits(self, masks: Iterable[int]) -> bool:
        return len(self.missing(masks)) <= self.ledger.remaining

    def values(self, masks) -> np.ndarray:
        masks = [int(m) for m in masks]
        new = self.missing(masks)
        if new:
            self.ledger.charge(len(new))
            fresh = self.game.evaluate(np.array(new, dtype=np.int64))
            for m, v in zip(new, fresh):
                self.cache[m] = float(v) - self.offset
        return np.array([self.cache[m] for m in masks])

    def full_table(self) -> np.ndarray:
        masks = np.arange(1 << self.n, dtype=np.int64)
        return self.values(masks)

    def exhaustive(self) -> bool:
        return self.n <= _MAX_EXHAUSTIVE_PLAYERS and self.ledger.budget >= 1 << self.n


def _result(memo: _Memo, estimate: InteractionValues, method: str, seed: int) -> ApproximationResult:
    return ApproximationResult(estimate, memo.ledger.spent, method, int(seed))


def _orders(orders, n: int) -> list[int]:
    if isinstance(orders, (int, np.integer)):
        orders = range(1, int(orders) + 1)
    orders = sorted(set(int(o) for o in orders))
    if not orders or orders[0] < 1 or orders[-1] > n:
        raise ValueError(f"orders must lie in [1, {n}]")
    if orders != list(range(orders[0], orders[-1] + 1)):
        raise ValueError("orders must be contiguous")
    return orders


def _bits(mask: int, n: int) -> list[int]:
    return [i for i in range(n) if mask >> i & 1]


def _submask_list(mask: int, n: int) -> np.ndarray:
    bits = _bits(mask, n)
    out = np.zeros(1 << len(bits), dtype=np.int64)
    for j, b in enumerate(bits):
        out[1 << j : 2 << j] = out[: 1 << j] | (1 << b)
    return out


def _deriv_signs(subs: np.ndarray, s: int) -> np.ndarray:
    return np.array([(-1.0) ** (s - popcount(int(L))) for L in subs])


def _ii_kind(family: WeightFamily, orders: list[int]) -> IndexKind:
    if orders == [1] and family is WeightFamily.SHAPLEY:
        return IndexKind.SV
    if orders == [1] and family is WeightFamily.BANZHAF:
        return IndexKind.BV
    return {
        WeightFamily.SHAPLEY: IndexKind.SII,
        WeightFamily.BANZHAF: IndexKind.BII,
        WeightFamily.CHAINING: IndexKind.CHII,
    }[family]


def _random_subset(rng: np.random.Generator, pool: np.ndarray, t: int) -> int:
    if t == 0:
        return 0
    return int(pool[rng.choice(pool.size, size=t, replace=False)].sum())


# ---------------------------------------------------------------------------
# permutation sampling
# ---------------------------------------------------------------------------


def mc_permutation_sv(
    game: Game, budget: int, seed: int = 0, max_permutations: int | None = None
) -> ApproximationResult:
    """Average marginal contributions along uniformly drawn permutations.

    Sampling stops at the first permutation whose prefixes no longer fit in
    the budget.  With a budget of ``2**n`` and n <= 8 every one of the n!
    permutations is walked instead.
    """
    n = game.n
    if budget < n + 1:
        raise ValueError(f"permutation sampling needs budget >= n + 1 = {n + 1}, got {budget}")
    memo = _Memo(game, budget)
    acc = np.zeros(n)
    walked = 0
    if memo.exhaustive() and n <= 8:
        for perm in itertools.permutations(range(n)):
            prefixes = np.cumsum([1 << i for i in perm])
            vals = memo.values(np.concatenate(([0], prefixes)))
            acc[list(perm)] += np.diff(vals)
            walked += 1
    elif memo.exhaustive():
        # closed form of the same average over all n! orderings
        table = memo.full_table()
        sizes = sizes_table(n)
        w = np.array([1.0 / (n * math.comb(n - 1, t)) for t in range(n)])
        for i in range(n):
            Ts = np.arange(1 << n, dtype=np.int64)
            Ts = Ts[(Ts >> i & 1) == 0]
            acc[i] = (table[Ts | (1 << i)] - table[Ts]) @ w[sizes[Ts]]
        walked = 1
    else:
        rng = np.random.default_rng(seed)
        cap = max_permutations if max_permutations is not None else 100 * budget
        while walked < cap:
            perm = rng.permutation(n)
            masks = np.concatenate(([0], np.cumsum(np.left_shift(1, perm))))
            if not memo.fits(masks):
                break
            acc[perm] += np.diff(memo.values(masks))
            walked += 1
    values = {1 << i: float(acc[i] / walked) for i in range(n)}
    estimate = InteractionValues(IndexKind.SV, n, 1, 1, values, game.baseline, {"permutations": walked})
    return _result(memo, estimate, "mc_permutation_sv", seed)


# ---------------------------------------------------------------------------
# uniform-size Monte Carlo for discrete derivatives
# ---------------------------------------------------------------------------


class _Target:
    """Precomputed data for estimating one interaction ``S``."""

    __slots__ = ("mask", "s", "subs", "signs", "pool", "ratio")

    def __init__(self, mask: int, n: int, kernel: Callable[[int, int], float]):
        self.mask = mask
        self.s = popcount(mask)
        self.subs = _submask_list(mask, n)
        self.signs = _deriv_signs(self.subs, self.s)
        self.pool = np.array([1 << i for i in range(n) if not mask >> i & 1], dtype=np.int64)
        m = n - self.s
        # importance ratio of the target kernel against the uniform-size law
        self.ratio = np.array([kernel(t, self.s) * (m + 1) * math.comb(m, t) for t in range(m + 1)])


def _uniform_size_mc(
    memo: _Memo, targets: list[int], kernel: Callable[[int, int], float], rng: np.random.Generator
) -> tuple[dict[int, float], int]:
    """Round-robin draws in a fresh random target order per round.

    Stops at the first draw that no longer fits so that accepted draws are
    never filtered by cost.  Returns the estimates and the smallest number
    of draws any target received.
    """
    n = memo.n
    prepared = [_Target(S, n, kernel) for S in targets]
    acc = np.zeros(len(prepared))
    cnt = np.zeros(len(prepared))
    max_rounds = 64 * memo.ledger.budget + 1024
    stop = False
    for _ in range(max_rounds):
        for j in rng.permutation(len(prepared)):
            tg = prepared[j]
            t = int(rng.integers(0, n - tg.s + 1))
            T = _random_subset(rng, tg.pool, t)
            masks = T | tg.subs
            if not memo.fits(masks):
                stop = True
                break
            acc[j] += tg.ratio[t] * (memo.values(masks) @ tg.signs)
            cnt[j] += 1
        if stop:
            break
    values = {tg.mask: float(acc[j] / cnt[j]) if cnt[j] else 0.0 for j, tg in enumerate(prepared)}
    return values, int(cnt.min()) if cnt.size else 0


def _kernel_expectation(table: np.ndarray, n: int, targets: list[int], kernel) -> dict[int, float]:
    """Exact expectation of the uniform-size estimator: sum_T kernel * Delta_S(T)."""
    sizes = sizes_table(n)
    everything = np.arange(1 << n, dtype=np.int64)
    out = {}
    for S in targets:
        s = popcount(S)
        subs = _submask_list(S, n)
        signs = _deriv_signs(subs, s)
        Ts = everything[(everything & S) == 0]
        deltas = table[Ts[:, None] | subs[None, :]] @ signs
        w = np.array([kernel(t, s) for t in range(n - s + 1)])
        out[S] = float(deltas @ w[sizes[Ts]])
    return out


def _family_kernel(family: WeightFamily, n: int):
    return lambda t, s: weight(t, s, n, family)


def _mc_ii_uniform(
    memo: _Memo, family: WeightFamily, orders: list[int], seed: int
) -> tuple[dict[int, float], int | None]:
    n = memo.n
    targets = [S for o in orders for S in subsets_of_size(n, o)]
    kernel = _family_kernel(family, n)
    if memo.exhaustive():
        return _kernel_expectation(memo.full_table(), n, targets, kernel), None
    return _uniform_size_mc(memo, targets, kernel, np.random.default_rng(seed))


def mc_ii_uniform_size(game: Game, family, orders, budget: int, seed: int = 0) -> ApproximationResult:
    """Monte Carlo interaction index with sizes drawn uniformly.

    For each target S, T is drawn by picking a size uniformly on 0..n-|S|
    and then a uniform subset of that size outside S; the discrete
    derivative is reweighted by the family kernel against this law (the
    ratio is 1 for the Shapley family).  Targets are visited round-robin.
    """
    family = WeightFamily(family)
    n = game.n
    orders = _orders(orders, n)
    if budget < 1 << orders[-1]:
        raise ValueError(f"budget {budget} cannot cover one derivative of order {orders[-1]}")
    memo = _Memo(game, budget)
    values, min_draws = _mc_ii_uniform(memo, family, orders, seed)
    kind = _ii_kind(family, orders)
    estimate = InteractionValues(kind, n, orders[0], orders[-1], values, game.baseline, {"min_draws": min_draws})
    return _result(memo, estimate, "mc_ii_uniform_size", seed)


# ---------------------------------------------------------------------------
# stratified estimator with shared updates
# ---------------------------------------------------------------------------


def _size_means(masks: np.ndarray, vals: np.ndarray, n: int) -> np.ndarray:
    """Mean value per coalition size, interpolated for sizes never sampled."""
    sizes = np.array([popcount(int(m)) for m in masks])
    sums = np.bincount(sizes, weights=vals, minlength=n + 1)
    cnts = np.bincount(sizes, minlength=n + 1)
    seen = np.flatnonzero(cnts)
    means = np.zeros(n + 1)
    means[seen] = sums[seen] / cnts[seen]
    return np.interp(np.arange(n + 1), seen, means[seen])


def _stratified_shared(memo: _Memo, family: WeightFamily, orders: list[int], seed: int) -> dict[int, float]:
    n = memo.n
    batch = sample(
        SamplerConfig(n, min(memo.ledger.remaining + 1, 1 << n), pairing=True, border=True, seed=seed)
    )
    masks = np.array(batch.coalitions, dtype=np.int64)
    vals = memo.values(masks)
    fallback = _size_means(masks, vals, n)
    sizes = np.array([popcount(int(m)) for m in masks])
    out = {}
    for s in orders:
        m = n - s
        w = np.array([weight(t, s, n, family) * math.comb(m, t) for t in range(m + 1)])
        n_cells = (1 << s) * (m + 1)
        local_sizes = np.array([popcount(L) for L in range(1 << s)])
        signs = (-1.0) ** (s - local_sizes)
        for S in subsets_of_size(n, s):
            bits = _bits(S, n)
            local = np.zeros(masks.shape, dtype=np.int64)
            for j, b in enumerate(bits):
                local |= ((masks >> b) & 1) << j
            l_size = local_sizes[local]
            t = sizes - l_size
            cell = local * (m + 1) + t
            sums = np.bincount(cell, weights=vals, minlength=n_cells).reshape(1 << s, m + 1)
            cnts = np.bincount(cell, minlength=n_cells).reshape(1 << s, m + 1)
            means = np.where(
                cnts > 0,
                sums / np.maximum(cnts, 1),
                fallback[local_sizes[:, None] + np.arange(m + 1)[None, :]],
            )
            out[S] = float(signs @ means @ w)
    return out


def mc_ii_stratified_shared(game: Game, family, orders, budget: int, seed: int = 0) -> ApproximationResult:
    """Stratified estimator where every evaluation updates every target.

    Coalitions come from the sampler with border enumeration, pairing and
    uniform size weights.  For a target S each evaluated coalition A lands
    in the cell (A & S, |A \\ S|); cell means are recombined with the
    family kernel times the cell population, so a fully enumerated lattice
    reproduces the exact index.  Empty cells borrow the mean value of
    sampled coalitions of the same size.
    """
    family = WeightFamily(family)
    n = game.n
    orders = _orders(orders, n)
    if budget < 2:
        raise ValueError("budget must be at least 2")
    memo = _Memo(game, budget)
    values = _stratified_shared(memo, family, orders, seed)
    kind = _ii_kind(family, orders)
    estimate = InteractionValues(kind, n, orders[0], orders[-1], values, game.baseline)
    return _result(memo, estimate, "mc_ii_stratified_shared", seed)


# ---------------------------------------------------------------------------
# kernel-weighted regression
# ---------------------------------------------------------------------------


def _weighted_fit(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, bool]:
    """Weighted least squares; rank deficiency yields the minimum-norm solution."""
    root = np.sqrt(w)
    beta, _, rank, _ = np.linalg.lstsq(root[:, None] * X, root * y, rcond=None)
    return beta, bool(rank < X.shape[1])


def _efficient_fit(X: np.ndarray, y: np.ndarray, w: np.ndarray, total: float) -> tuple[np.ndarray, bool]:
    """Weighted least squares subject to ``sum(beta) == total``.

    The fit runs over an orthonormal basis of the constraint's null space,
    so a rank-deficient sample still yields the minimum-norm correction.
    """
    p = X.shape[1]
    base = np.full(p, total / p)
    if p == 1:
        return base, False
    null = linalg.null_space(np.ones((1, p)))
    if X.shape[0] == 0:
        return base, True
    gamma, flagged = _weighted_fit(X @ null, y - X @ base, w)
    return base + null @ gamma, flagged


def _regress(
    memo: _Memo, k: int, kernel: str, mu_inf: float, seed: int, pin_grand: bool
) -> tuple[dict[int, float], bool]:
    n = memo.n
    cols = np.array([S for o in range(1, k + 1) for S in subsets_of_size(n, o)], dtype=np.int64)
    mu = kernel_mu(n, kernel, mu_inf)
    size_w = default_size_weights(n, "shapley_kernel") if kernel == "shapley" else None
    budget = min(memo.ledger.remaining + 1, 1 << n)
    batch = sample(SamplerConfig(n, budget, size_weights=size_w, pairing=True, border=True, seed=seed))
    masks = np.array(batch.coalitions, dtype=np.int64)
    y = memo.values(masks)
    w = np.empty(masks.size)
    for j, T in enumerate(batch.coalitions):
        t = popcount(T)
        if t in batch.exhausted_sizes:
            w[j] = mu[t]
        else:
            w[j] = mu[t] * math.comb(n, t) * batch.counts[T] / batch.stratum_totals[t]
    X = ((masks[:, None] & cols[None, :]) == cols[None, :]).astype(float)
    if kernel == "shapley" and (pin_grand or masks.size < 1 << n):
        beta, flagged = _efficient_fit(X[2:], y[2:], w[2:], y[1])
    else:
        # a complete lattice reproduces the penalized objective of faithful_exact
        beta, flagged = _weighted_fit(X, y, w)
    if flagged:
        warnings.warn(
            f"regression with {masks.size} coalitions for {cols.size} columns is underdetermined; "
            "returning the minimum-norm solution",
            UnderdeterminedWarning,
            stacklevel=3,
        )
    return {int(S): float(v) for S, v in zip(cols, beta)}, flagged


def _check_regression_budget(n: int, k: int, budget: int) -> None:
    if not 1 <= k <= n:
        raise ValueError(f"explanation order must be in [1, {n}], got {k}")
    # the saturated model (k = n) has 2**n - 1 columns, so cap at the lattice size
    needed = min(sum(math.comb(n, o) for o in range(1, k + 1)) + 2, 1 << n)
    if budget < needed:
        raise ValueError(f"regression needs budget >= {needed} (columns + 2), got {budget}")


def regress_faithful(
    game: Game, k: int, kernel: str, mu_inf: float, budget: int, seed: int = 0, efficient: bool = False
) -> ApproximationResult:
    """Faithful interactions from a sampled, kernel-weighted regression.

    Coalitions are drawn with size weights proportional to the per-coalition
    kernel weight.  Exhausted sizes keep their exact weight; sampled sizes
    carry ``weight * stratum_size * multiplicity / draws`` so the sampled
    loss is an unbiased estimate of the full one.  With the Shapley kernel
    a sampled fit holds the grand coalition as an exact constraint, so the
    estimate is efficient.  Over the whole lattice the empty and grand
    coalitions get weight ``mu_inf`` instead, as in :func:`faithful_exact`,
    unless ``efficient`` asks for the constraint there too; at ``k = 1``
    that yields the Shapley value.
    """
    kernel = kernel.lower()
    if kernel not in ("shapley", "banzhaf"):
        raise ValueError(f"unknown kernel {kernel!r}; expected 'shapley' or 'banzhaf'")
    _check_regression_budget(game.n, k, budget)
    memo = _Memo(game, budget)
    values, flagged = _regress(memo, k, kernel, mu_inf, seed, efficient)
    kind = IndexKind.FSII if kernel == "shapley" else IndexKind.FBII
    if k == 1 and kernel == "shapley" and efficient:
        kind = IndexKind.SV
    extra = {"mu_inf": mu_inf, "kernel": kernel, "underdetermined": flagged}
    estimate = InteractionValues(kind, game.n, 1, k, values, game.baseline, extra)
    return _result(memo, estimate, "regress_faithful", seed)


def regress_moebius_bounded(
    game: Game,
    k: int,
    budget: int,
    seed: int = 0,
    index: IndexKind | str = IndexKind.SII,
    order: int | None = None,
    mu_inf: float = DEFAULT_MU_INF,
) -> ApproximationResult:
    """Fit Möbius coefficients up to order ``k`` and convert them to ``index``.

    The fit is the Shapley-kernel regression of :func:`regress_faithful`;
    its coefficients are read as a Möbius representation bounded to order
    ``k``.  ``order`` is the explanation order of the converted index
    (defaults to ``k``).
    """
    _check_regression_budget(game.n, k, budget)
    memo = _Memo(game, budget)
    # a first-order fit is read as the Shapley value, which is exactly efficient
    coeffs, flagged = _regress(memo, k, "shapley", mu_inf, seed, pin_grand=k == 1)
    order = k if order is None else order
    estimate = si_from_moebius(coeffs, index, order, n=game.n, baseline=game.baseline)
    object.__setattr__(estimate, "extra", {"fit_order": k, "underdetermined": flagged})
    return _result(memo, estimate, "regress_moebius_bounded", seed)


# ---------------------------------------------------------------------------
# multilinear extension
# ---------------------------------------------------------------------------


def quadrature(grid: int, rule: str = "gauss") -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1] for ``grid`` points."""
    if rule == "gauss":
        x, w = np.polynomial.legendre.leggauss(grid)
        return (x + 1.0) / 2.0, w / 2.0
    if rule == "trapezoid":
        if grid < 2:
            raise ValueError("the trapezoid rule needs at least two points")
        q = np.linspace(0.0, 1.0, grid)
        w = np.full(grid, 1.0 / (grid - 1))
        w[[0, -1]] /= 2.0
        return q, w
    raise ValueError(f"unknown quadrature rule {rule!r}")


def _spread_order(count: int) -> list[int]:
    """Node indices ordered so that every prefix is spread over [0, 1]."""
    order: list[int] = []
    m = 0
    while len(order) < count and m < 64 * count:
        # base-2 radical inverse
        r, f, x = 0.0, 0.5, m
        while x:
            r += f * (x & 1)
            x >>= 1
            f /= 2
        j = min(int(r * count), count - 1)
        if j not in order:
            order.append(j)
        m += 1
    order.extend(j for j in range(count) if j not in order)
    return order


def owen_sv(game: Game, budget: int, seed: int = 0, grid: int = 11, rule: str = "gauss") -> ApproximationResult:
    """Shapley values via the multilinear extension.

    For each node q and player i, T includes every other player
    independently with probability q and ``v(T + i) - v(T)`` is averaged.
    Node means are combined with the quadrature weights; nodes a player has
    not reached yet are interpolated from its visited ones.  Gauss-Legendre
    nodes integrate the degree n-1 polynomial exactly when n <= 2 * grid.
    """
    n = game.n
    if budget < 2 * grid:
        raise ValueError(f"owen sampling needs budget >= 2 * grid = {2 * grid}, got {budget}")
    q, qw = quadrature(grid, rule)
    memo = _Memo(game, budget)
    est = np.zeros(n)
    if memo.exhaustive():
        table = memo.full_table()
        sizes = sizes_table(n)
        everything = np.arange(1 << n, dtype=np.int64)
        for i in range(n):
            Ts = everything[(everything >> i & 1) == 0]
            deltas = table[Ts | (1 << i)] - table[Ts]
            per_size = np.bincount(sizes[Ts], weights=deltas, minlength=n)
            t = np.arange(n)
            node = (q[:, None] ** t[None, :] * (1.0 - q[:, None]) ** (n - 1 - t)[None, :]) @ per_size
            est[i] = node @ qw
    else:
        rng = np.random.default_rng(seed)
        sums = np.zeros((grid, n))
        cnts = np.zeros((grid, n))
        nodes = _spread_order(grid)
        players = np.array([1 << i for i in range(n)], dtype=np.int64)
        stop = False
        for _ in range(64 * budget + 1024):
            for j in nodes:
                for i in range(n):
                    draw = rng.random(n) < q[j]
                    draw[i] = False
                    T = int(players[draw].sum())
                    masks = [T, T | (1 << i)]
                    if not memo.fits(masks):
                        stop = True
                        break
                    v = memo.values(masks)
                    sums[j, i] += v[1] - v[0]
                    cnts[j, i] += 1
                if stop:
                    break
            if stop:
                break
        for i in range(n):
            seen = np.flatnonzero(cnts[:, i])
            if seen.size == 0:
                continue
            means = sums[seen, i] / cnts[seen, i]
            est[i] = np.interp(q, q[seen], means) @ qw
    values = {1 << i: float(est[i]) for i in range(n)}
    estimate = InteractionValues(IndexKind.SV, n, 1, 1, values, game.baseline, {"grid": grid, "rule": rule})
    return _result(memo, estimate, "owen_sv", seed)


# ---------------------------------------------------------------------------
# per-player, per-size strata
# ---------------------------------------------------------------------------


class _Stratum:
    """Uniform draws without replacement from subsets of ``pool`` of size ``t``."""

    _ENUMERATE_LIMIT = 20000

    def __init__(self, pool: np.ndarray, t: int, rng: np.random.Generator):
        self.pool = pool
        self.t = t
        self.size = math.comb(pool.size, t)
        self.rng = rng
        self.order: list[int] | None = None
        self.used: set[int] = set()
        self.taken = 0

    @property
    def exhausted(self) -> bool:
        return self.taken >= self.size

    def peek(self) -> int:
        if self.size <= self._ENUMERATE_LIMIT:
            if self.order is None:
                members = [int(sum(c)) for c in itertools.combinations(self.pool.tolist(), self.t)]
                self.order = [members[j] for j in self.rng.permutation(len(members))]
            return self.order[self.taken]
        while True:
            T = _random_subset(self.rng, self.pool, self.t)
            if T not in self.used:
                self.used.add(T)
                self.order = (self.order or []) + [T]
                return T

    def take(self) -> None:
        self.taken += 1


def _size_schedule(n: int) -> list[int]:
    lo, hi = 0, n - 1
    out = []
    while lo <= hi:
        out.append(lo)
        if hi != lo:
            out.append(hi)
        lo += 1
        hi -= 1
    return out


def stratified_sv(game: Game, budget: int, seed: int = 0) -> ApproximationResult:
    """Shapley values from per-player, per-size strata sampled without replacement.

    Strata are visited round-robin, border sizes first.  Each stratum mean
    estimates the average marginal contribution for its size; the SV is the
    plain average over sizes.  A stratum that was never reached takes the
    pooled mean of its size, and sizes nobody reached are interpolated.
    """
    n = game.n
    if budget < 2 * n:
        raise ValueError(f"stratified sampling needs budget >= 2n = {2 * n}, got {budget}")
    memo = _Memo(game, budget)
    rng = np.random.default_rng(seed)
    players = np.array([1 << i for i in range(n)], dtype=np.int64)
    strata = {
        (i, t): _Stratum(np.delete(players, i), t, rng) for t in range(n) for i in range(n)
    }
    sums = np.zeros((n, n))
    cnts = np.zeros((n, n))
    schedule = [(i, t) for t in _size_schedule(n) for i in range(n)]
    active = True
    while active:
        active = False
        for i, t in schedule:
            st = strata[(i, t)]
            if st.exhausted:
                continue
            T = st.peek()
            masks = [T, T | (1 << i)]
            if not memo.fits(masks):
                active = False
                break
            st.take()
            v = memo.values(masks)
            sums[i, t] += v[1] - v[0]
            cnts[i, t] += 1
            active = True
    filled = cnts > 0
    means = np.where(filled, sums / np.maximum(cnts, 1), 0.0)
    pooled = np.zeros(n)
    reached = np.flatnonzero(filled.any(axis=0))
    for t in reached:
        pooled[t] = means[filled[:, t], t].mean()
    if reached.size:
        pooled = np.interp(np.arange(n), reached, pooled[reached])
    means = np.where(filled, means, pooled[None, :])
    values = {1 << i: float(means[i].mean()) for i in range(n)}
    estimate = InteractionValues(
        IndexKind.SV, n, 1, 1, values, game.baseline, {"strata_filled": int(filled.sum())}
    )
    return _result(memo, estimate, "stratified_sv", seed)


# ---------------------------------------------------------------------------
# Shapley-Taylor and k-SII
# ---------------------------------------------------------------------------


def stii_approx(game: Game, k: int, budget: int, seed: int = 0) -> ApproximationResult:
    """Shapley-Taylor interactions with exact lower orders and a sampled top order.

    Orders below ``k`` are derivatives at the empty coalition and only need
    coalitions of size < k.  The top order uses the uniform-size sampler
    reweighted to the top-order kernel ``k / (n * binom(n - 1, t))``.
    """
    n = game.n
    if not 1 <= k <= n:
        raise ValueError(f"explanation order must be in [1, {n}], got {k}")
    needed = sum(math.comb(n, j) for j in range(k + 1))
    if budget < needed:
        raise ValueError(f"budget {budget} below the {needed} evaluations needed for order {k}")
    memo = _Memo(game, budget)
    values: dict[int, float] = {}
    extra: dict = {}
    for s in range(1, k):
        for S in subsets_of_size(n, s):
            subs = _submask_list(S, n)
            values[S] = float(memo.values(subs) @ _deriv_signs(subs, s))
    top = subsets_of_size(n, k)

    def kernel(t, s):
        return k / n / math.comb(n - 1, t)

    if memo.exhaustive():
        values.update(_kernel_expectation(memo.full_table(), n, top, kernel))
    else:
        sampled, min_draws = _uniform_size_mc(memo, top, kernel, np.random.default_rng(seed))
        values.update(sampled)
        extra["min_draws"] = min_draws
    estimate = InteractionValues(IndexKind.STII, n, 1, k, values, game.baseline, extra)
    return _result(memo, estimate, "stii_approx", seed)


KSII_BASES = ("uniform_size", "stratified_shared")


def ksii_approx(game: Game, k: int, budget: int, seed: int = 0, base: str = "uniform_size") -> ApproximationResult:
    """Estimate SII of orders 1..k with ``base`` and aggregate them into k-SII."""
    n = game.n
    if not 1 <= k <= n:
        raise ValueError(f"explanation order must be in [1, {n}], got {k}")
    orders = list(range(1, k + 1))
    if base == "uniform_size":
        if budget < 1 << k:
            raise ValueError(f"budget {budget} cannot cover one derivative of order {k}")
        memo = _Memo(game, budget)
        sii, _ = _mc_ii_uniform(memo, WeightFamily.SHAPLEY, orders, seed)
    elif base == "stratified_shared":
        if budget < 2:
            raise ValueError("budget must be at least 2")
        memo = _Memo(game, budget)
        sii = _stratified_shared(memo, WeightFamily.SHAPLEY, orders, seed)
    else:
        raise ValueError(f"unknown base estimator {base!r}; expected one of {', '.join(KSII_BASES)}")
    estimate = aggregate_ksii(sii, n, k, game.baseline)
    return _result(memo, estimate, "ksii_approx", seed)




# ---------------------------------------------------------------------------
# name-based dispatch shared by the benchmark runner and the command line
# ---------------------------------------------------------------------------

_II_INDICES = (IndexKind.SV, IndexKind.BV, IndexKind.SII, IndexKind.BII, IndexKind.CHII)
_FAMILY_BY_INDEX = {
    IndexKind.SV: WeightFamily.SHAPLEY,
    IndexKind.SII: WeightFamily.SHAPLEY,
    IndexKind.BV: WeightFamily.BANZHAF,
    IndexKind.BII: WeightFamily.BANZHAF,
    IndexKind.CHII: WeightFamily.CHAINING,
}

METHOD_INDICES: dict[str, tuple[IndexKind, ...]] = {
    "mc_permutation_sv": (IndexKind.SV,),
    "owen_sv": (IndexKind.SV,),
    "stratified_sv": (IndexKind.SV,),
    "mc_ii_uniform_size": _II_INDICES,
    "mc_ii_stratified_shared": _II_INDICES,
    "regress_faithful": (IndexKind.SV, IndexKind.FSII, IndexKind.FBII),
    "regress_moebius_bounded": (
        IndexKind.SV,
        IndexKind.BV,
        IndexKind.MI,
        IndexKind.SII,
        IndexKind.BII,
        IndexKind.CHII,
        IndexKind.kSII,
        IndexKind.STII,
    ),
    "stii_approx": (IndexKind.SV, IndexKind.STII),
    "ksii_approx": (IndexKind.SV, IndexKind.kSII),
}


class IncompatibleMethodError(ValueError):
    """The method cannot estimate the requested index."""


def _retag(result: ApproximationResult, index: IndexKind) -> ApproximationResult:
    est = result.estimate
    if est.index is index:
        return result
    relabeled = InteractionValues(index, est.n, est.min_order, est.max_order, dict(est.values), est.baseline, est.extra)
    return ApproximationResult(relabeled, result.budget_used, result.method, result.seed)


def effective_order(index: IndexKind | str, order: int | None, n: int) -> int:
    """Explanation order implied by ``index``: 1 for SV/BV, n for MI."""
    index = IndexKind(index)
    if index in (IndexKind.SV, IndexKind.BV):
        return 1
    if index in (IndexKind.MI, IndexKind.CoMI):
        return n
    if order is None:
        raise ValueError(f"index {index.value} needs an explanation order")
    if not 1 <= order <= n:
        raise ValueError(f"explanation order must be in [1, {n}], got {order}")
    return int(order)


def run_method(
    name: str,
    game: Game,
    index: IndexKind | str,
    order: int | None,
    budget: int,
    seed: int = 0,
    **params,
) -> ApproximationResult:
    """Run estimator ``name`` for ``index`` up to ``order``.

    The returned estimate is tagged with ``index`` so that it can be compared
    directly against the exact values.  Extra keyword arguments are passed
    to the estimator (``grid``, ``rule``, ``mu_inf``, ``fit_order``, ``base``).
    """
    if name not in METHOD_INDICES:
        raise IncompatibleMethodError(
            f"unknown method {name!r}; available: {', '.join(sorted(METHOD_INDICES))}"
        )
    index = IndexKind(index)
    if index not in METHOD_INDICES[name]:
        raise IncompatibleMethodError(
            f"method {name} cannot estimate {index.value}; supported: "
            + ", ".join(i.value for i in METHOD_INDICES[name])
        )
    k = effective_order(index, order, game.n)
    if name == "mc_permutation_sv":
        result = mc_permutation_sv(game, budget, seed, **params)
    elif name == "owen_sv":
        result = owen_sv(game, budget, seed, **params)
    elif name == "stratified_sv":
        result = stratified_sv(game, budget, seed, **params)
    elif name == "mc_ii_uniform_size":
        result = mc_ii_uniform_size(game, _FAMILY_BY_INDEX[index], k, budget, seed, **params)
    elif name == "mc_ii_stratified_shared":
        result = mc_ii_stratified_shared(game, _FAMILY_BY_INDEX[index], k, budget, seed, **params)
    elif name == "regress_faithful":
        kernel = "banzhaf" if index is IndexKind.FBII else "shapley"
        mu_inf = params.pop("mu_inf", DEFAULT_MU_INF)
        result = regress_faithful(game, k, kernel, mu_inf, budget, seed, efficient=index is IndexKind.SV, **params)
    elif name == "regress_moebius_bounded":
        fit_order = int(params.pop("fit_order", k))
        if fit_order < k and index is not IndexKind.MI:
            raise ValueError(f"fit_order {fit_order} is below the explanation order {k}")
        result = regress_moebius_bounded(game, fit_order, budget, seed, index=index, order=k, **params)
    elif name == "stii_approx":
        result = stii_approx(game, k, budget, seed, **params)
    else:
        result = ksii_approx(game, k, budget, seed, **params)
    return _retag(result, index)


__all__ = [
    "ApproximationResult",
    "IncompatibleMethodError",
    "KSII_BASES",
    "METHOD_INDICES",
    "UnderdeterminedWarning",
    "effective_order",
    "ksii_approx",
    "mc_ii_stratified_shared",
    "mc_ii_uniform_size",
    "mc_permutation_sv",
    "owen_sv",
    "quadrature",
    "regress_faithful",
    "regress_moebius_bounded",
    "run_method",
    "stii_approx",
    "stratified_sv",
]
