"""Exact ground truth: lattice transforms, semivalues, interaction indices.

Every engine here enumerates the full coalition table, so it is meant for
small games (n <= 16, Möbius transforms up to n = 20).  The Möbius route
(:func:`si_from_moebius`) works on sparse coefficient maps and is what makes
SOUM ground truth cheap for large n.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np
from scipy import linalg

from .core import (
    IndexKind,
    InteractionValues,
    WeightFamily,
    full_mask,
    popcount,
    subsets_of_size,
    weight_vector,
)
from .games import CapacityError, Game, SoumSpec, conjugate, sizes_table, table_of

logger = logging.getLogger(__name__)

MAX_EXACT_PLAYERS = 20
DEFAULT_MU_INF = 1e6
# largest design matrix (rows * columns) solved densely in faithful_exact
DENSE_FIT_LIMIT = 1 << 24

_FAMILY_OF = {
    IndexKind.SV: WeightFamily.SHAPLEY,
    IndexKind.SII: WeightFamily.SHAPLEY,
    IndexKind.SGV: WeightFamily.SHAPLEY,
    IndexKind.BV: WeightFamily.BANZHAF,
    IndexKind.BII: WeightFamily.BANZHAF,
    IndexKind.BGV: WeightFamily.BANZHAF,
    IndexKind.CHII: WeightFamily.CHAINING,
    IndexKind.CHGV: WeightFamily.CHAINING,
}
_II_KIND = {
    WeightFamily.SHAPLEY: IndexKind.SII,
    WeightFamily.BANZHAF: IndexKind.BII,
    WeightFamily.CHAINING: IndexKind.CHII,
}
_GV_KIND = {
    WeightFamily.SHAPLEY: IndexKind.SGV,
    WeightFamily.BANZHAF: IndexKind.BGV,
    WeightFamily.CHAINING: IndexKind.CHGV,
}


@dataclass(frozen=True)
class MoebiusCoefficients:
    n: int
    coeffs: np.ndarray

    def sparse(self, tol: float = 0.0) -> dict[int, float]:
        nz = np.flatnonzero(np.abs(self.coeffs) > tol)
        return {int(m): float(self.coeffs[m]) for m in nz if m != 0}

    def recover(self) -> np.ndarray:
        """Game values rebuilt through the recovery property."""
        return subset_sum(self.coeffs, self.n)


@dataclass(frozen=True)
class FaithfulnessReport:
    order: int
    loss: float
    r2: float
    mu_inf: float


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _normalized_table(game: Game, max_n: int = MAX_EXACT_PLAYERS) -> np.ndarray:
    if game.n > max_n:
        raise CapacityError(f"exact computation supports n <= {max_n}, got n={game.n}")
    if not game.normalized:
        raise ValueError("exact engines require a normalized game (v(empty) = 0)")
    table = np.asarray(table_of(game), dtype=float)
    if table[0] != 0.0:
        raise ValueError("game is flagged normalized but v(empty) != 0")
    return table


def _order_range(orders, n: int) -> list[int]:
    if isinstance(orders, (int, np.integer)):
        orders = range(1, int(orders) + 1)
    orders = sorted(set(int(o) for o in orders))
    if not orders:
        raise ValueError("at least one order is required")
    if orders[0] < 1:
        raise ValueError("interaction order must be at least 1")
    if orders[-1] > n:
        raise ValueError(f"interaction order {orders[-1]} exceeds n={n}")
    if orders != list(range(orders[0], orders[-1] + 1)):
        raise ValueError("orders must be a contiguous range")
    return orders


def subset_sum(values: np.ndarray, n: int) -> np.ndarray:
    """Zeta transform: ``out[T] = sum_{S subset of T} values[S]``."""
    out = np.array(values, dtype=float)
    for i in range(n):
        view = out.reshape(-1, 2, 1 << i)
        view[:, 1, :] += view[:, 0, :]
    return out


def superset_sum(values: np.ndarray, n: int) -> np.ndarray:
    """``out[S] = sum_{T superset of S} values[T]``."""
    out = np.array(values, dtype=float)
    for i in range(n):
        view = out.reshape(-1, 2, 1 << i)
        view[:, 0, :] += view[:, 1, :]
    return out


def _deposit(idx: np.ndarray, bits: list[int]) -> np.ndarray:
    out = np.zeros_like(idx)
    for j, b in enumerate(bits):
        out |= ((idx >> j) & 1) << b
    return out


def _submask_array(mask: int) -> np.ndarray:
    bits = [i for i in range(mask.bit_length()) if mask >> i & 1]
    return _deposit(np.arange(1 << len(bits), dtype=np.int64), bits)


def _complement_array(mask: int, n: int) -> np.ndarray:
    return _submask_array(full_mask(n) ^ mask)


def discrete_derivatives(table: np.ndarray, n: int, S: int) -> tuple[np.ndarray, np.ndarray]:
    """All coalitions T disjoint from S and the derivatives ``Delta_S(T)``."""
    Ts = _complement_array(S, n)
    Ls = _submask_array(S)
    s = popcount(S)
    signs = np.array([(-1.0) ** (s - popcount(int(L))) for L in Ls])
    return Ts, table[Ts[:, None] | Ls[None, :]] @ signs


@lru_cache(maxsize=None)
def bernoulli_numbers(count: int) -> tuple[Fraction, ...]:
    """B_0 .. B_{count-1} with the B_1 = -1/2 convention."""
    numbers: list[Fraction] = []
    for m in range(count):
        if m == 0:
            numbers.append(Fraction(1))
            continue
        acc = sum(math.comb(m + 1, j) * numbers[j] for j in range(m))
        numbers.append(-acc / (m + 1))
    return tuple(numbers)


def _all_subsets(n: int, orders: list[int]) -> list[int]:
    return [m for o in orders for m in subsets_of_size(n, o)]


# ---------------------------------------------------------------------------
# Möbius transforms
# ---------------------------------------------------------------------------


def moebius(game: Game) -> MoebiusCoefficients:
    """Möbius transform of a normalized game via the in-place subset transform."""
    table = _normalized_table(game)
    n = game.n
    coeffs = table.copy()
    for i in range(n):
        view = coeffs.reshape(-1, 2, 1 << i)
        view[:, 1, :] -= view[:, 0, :]
    return MoebiusCoefficients(n, coeffs)


def co_moebius(game: Game) -> MoebiusCoefficients:
    """Möbius coefficients of the normalized conjugate game."""
    _normalized_table(game)
    return moebius(conjugate(game))


def _moebius_values(mi: MoebiusCoefficients, index: IndexKind, baseline: float) -> InteractionValues:
    values = {m: float(mi.coeffs[m]) for m in range(1, 1 << mi.n)}
    return InteractionValues(index, mi.n, 1, mi.n, values, baseline)


# ---------------------------------------------------------------------------
# interaction indices, semivalues, generalized values
# ---------------------------------------------------------------------------


def ii_exact(game: Game, family: WeightFamily | str, orders) -> InteractionValues:
    """Cardinal-probabilistic interaction index over the requested orders.

    ``orders`` is either a maximum order k (meaning 1..k) or a contiguous
    iterable of orders.  The family picks SII, BII or CHII.
    """
    family = WeightFamily(family)
    table = _normalized_table(game, 16)
    n = game.n
    orders = _order_range(orders, n)
    sizes = sizes_table(n)
    values = {}
    for s in orders:
        w = weight_vector(s, n, family)
        for S in subsets_of_size(n, s):
            Ts, deltas = discrete_derivatives(table, n, S)
            values[S] = float(deltas @ w[sizes[Ts]])
    return InteractionValues(_II_KIND[family], n, orders[0], orders[-1], values, game.baseline)


def semivalue_exact(game: Game, family: WeightFamily | str = WeightFamily.SHAPLEY) -> InteractionValues:
    family = WeightFamily(family)
    if family is WeightFamily.BANZHAF:
        kind = IndexKind.BV
    elif family is WeightFamily.SHAPLEY:
        kind = IndexKind.SV
    else:
        raise ValueError("the chaining family has no dedicated semivalue tag; use ii_exact")
    iv = ii_exact(game, family, [1])
    return InteractionValues(kind, iv.n, 1, 1, dict(iv.values), iv.baseline)


def gv_exact(game: Game, family: WeightFamily | str, orders) -> InteractionValues:
    """Generalized value: weighted joint marginal contributions."""
    family = WeightFamily(family)
    table = _normalized_table(game, 16)
    n = game.n
    orders = _order_range(orders, n)
    sizes = sizes_table(n)
    values = {}
    for s in orders:
        w = weight_vector(s, n, family)
        for S in subsets_of_size(n, s):
            Ts = _complement_array(S, n)
            values[S] = float((table[Ts | S] - table[Ts]) @ w[sizes[Ts]])
    return InteractionValues(_GV_KIND[family], n, orders[0], orders[-1], values, game.baseline)


def stii_exact(game: Game, k: int) -> InteractionValues:
    """Shapley-Taylor interactions up to order ``k``."""
    table = _normalized_table(game, 16)
    n = game.n
    if not 1 <= k <= n:
        raise ValueError(f"explanation order must be in [1, {n}], got {k}")
    sizes = sizes_table(n)
    values = {}
    for s in range(1, k):
        for S in subsets_of_size(n, s):
            Ls = _submask_array(S)
            signs = np.array([(-1.0) ** (s - popcount(int(L))) for L in Ls])
            values[S] = float(table[Ls] @ signs)
    top_w = np.array([k / n / math.comb(n - 1, t) for t in range(n - k + 1)])
    for S in subsets_of_size(n, k):
        Ts, deltas = discrete_derivatives(table, n, S)
        values[S] = float(deltas @ top_w[sizes[Ts]])
    return InteractionValues(IndexKind.STII, n, 1, k, values, game.baseline)


def aggregate_ksii(sii: Mapping[int, float], n: int, k: int, baseline: float = 0.0) -> InteractionValues:
    """Combine SII values of orders 1..k into k-SII via Bernoulli numbers."""
    bern = [float(b) for b in bernoulli_numbers(k + 1)]
    out = {S: 0.0 for o in range(1, k + 1) for S in subsets_of_size(n, o)} if n <= 20 else {}
    for R, value in sii.items():
        r = popcount(R)
        if r > k or value == 0.0:
            continue
        bits = [i for i in range(n) if R >> i & 1]
        for s in range(1, r + 1):
            coef = bern[r - s] * value
            if coef == 0.0:
                continue
            for combo in itertools.combinations(bits, s):
                S = sum(1 << i for i in combo)
                out[S] = out.get(S, 0.0) + coef
    return InteractionValues(IndexKind.kSII, n, 1, k, out, baseline)


def ksii_exact(game: Game, k: int) -> InteractionValues:
    """k-SII: efficient aggregation of SII values of orders up to ``k``."""
    if not 1 <= k <= game.n:
        raise ValueError(f"explanation order must be in [1, {game.n}], got {k}")
    sii = ii_exact(game, WeightFamily.SHAPLEY, k)
    return aggregate_ksii(sii.values, game.n, k, game.baseline)


# ---------------------------------------------------------------------------
# faithful interactions
# ---------------------------------------------------------------------------


def shapley_mu(n: int, mu_inf: float) -> np.ndarray:
    """Faithfulness weight per coalition size 0..n."""
    mu = np.empty(n + 1)
    for t in range(n + 1):
        mu[t] = mu_inf if t in (0, n) else 1.0 / math.comb(n - 2, t - 1)
    return mu


def kernel_mu(n: int, kernel: str, mu_inf: float) -> np.ndarray:
    kernel = kernel.lower()
    if kernel == "shapley":
        return shapley_mu(n, mu_inf)
    if kernel == "banzhaf":
        return np.ones(n + 1)
    raise ValueError(f"unknown kernel {kernel!r}; expected 'shapley' or 'banzhaf'")


def _solve_normal(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=True)
    except linalg.LinAlgError:
        logger.warning("normal matrix not positive definite; adding 1e-10 ridge")
        try:
            factor = linalg.cho_factor(A + 1e-10 * np.eye(A.shape[0]), lower=True)
        except linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("faithful regression is rank deficient") from exc
    return linalg.cho_solve(factor, b)


def faithful_exact(
    game: Game, k: int, mu_inf: float = DEFAULT_MU_INF, kernel: str = "shapley"
) -> InteractionValues:
    """Weighted least-squares fit of all interactions up to order ``k``.

    The loss runs over all ``2**n`` coalitions.  Small problems are solved
    on the weighted design matrix.  Larger ones use the normal equations:
    every column is a superset indicator, so the entry for (S, S') only
    depends on ``|S | S'|`` and the right-hand side is a superset sum.

    Args:
        game: normalized game with n <= 16.
        k: explanation order.
        mu_inf: weight of the empty and grand coalitions (Shapley kernel only).
        kernel: ``"shapley"`` gives FSII, ``"banzhaf"`` (uniform weights) FBII.
    """
    table = _normalized_table(game, 16)
    n = game.n
    if not 1 <= k <= n:
        raise ValueError(f"explanation order must be in [1, {n}], got {k}")
    mu = kernel_mu(n, kernel, mu_inf)
    sizes = sizes_table(n)
    cols = np.array(_all_subsets(n, list(range(1, k + 1))), dtype=np.int64)
    if (1 << n) * cols.size <= DENSE_FIT_LIMIT:
        # the normal matrix squares the conditioning of the superset design,
        # which is poor for high orders; solve the weighted system directly
        masks = np.arange(1 << n, dtype=np.int64)
        root = np.sqrt(mu[sizes])
        X = ((masks[:, None] & cols[None, :]) == cols[None, :]) * root[:, None]
        beta = np.linalg.lstsq(X, root * table, rcond=None)[0]
    else:
        # g[u] = sum of mu over coalitions containing a fixed set of size u
        g = np.array([sum(math.comb(n - u, j) * mu[u + j] for j in range(n - u + 1)) for u in range(n + 1)])
        A = g[sizes[cols[:, None] | cols[None, :]]]
        b = superset_sum(mu[sizes] * table, n)[cols]
        beta = _solve_normal(A, b)
    kind = IndexKind.FSII if kernel.lower() == "shapley" else IndexKind.FBII
    values = {int(S): float(v) for S, v in zip(cols, beta)}
    out = InteractionValues(kind, n, 1, k, values, game.baseline)
    object.__setattr__(out, "extra", {"mu_inf": mu_inf, "kernel": kernel.lower()})
    return out


def _surrogate(iv: InteractionValues) -> np.ndarray:
    dense = np.zeros(1 << iv.n)
    for mask, value in iv.values.items():
        dense[mask] = value
    return subset_sum(dense, iv.n)


def faithfulness_loss(game: Game, phi: InteractionValues, mu_inf: float = DEFAULT_MU_INF) -> FaithfulnessReport:
    """Shapley-weighted faithfulness of ``phi`` and its weighted R².

    The R² baseline is the constant predictor at the weighted mean of the
    game values; a constant game has R² = 1 by convention.
    """
    table = _normalized_table(game, 16)
    n = game.n
    if phi.n != n:
        raise ValueError("interaction values and game disagree on n")
    w = shapley_mu(n, mu_inf)[sizes_table(n)]
    resid = table - _surrogate(phi)
    loss = float(w @ resid**2)
    mean = float(w @ table) / float(w.sum())
    base = float(w @ (table - mean) ** 2)
    r2 = 1.0 if base == 0.0 else 1.0 - loss / base
    return FaithfulnessReport(phi.max_order, loss, r2, mu_inf)


# ---------------------------------------------------------------------------
# Möbius conversions
# ---------------------------------------------------------------------------

_MOEBIUS_SUPPORTED = (
    IndexKind.SV,
    IndexKind.BV,
    IndexKind.MI,
    IndexKind.SII,
    IndexKind.BII,
    IndexKind.CHII,
    IndexKind.kSII,
    IndexKind.STII,
)


def _ii_conversion(family: WeightFamily, r: int, s: int) -> float:
    if family is WeightFamily.SHAPLEY:
        return 1.0 / (r - s + 1)
    if family is WeightFamily.BANZHAF:
        return math.ldexp(1.0, s - r)
    return s / r


def _key_space(n: int, lo: int, hi: int, support: Iterable[int]) -> dict[int, float]:
    count = sum(math.comb(n, o) for o in range(lo, hi + 1))
    if count <= 1 << 20:
        return {S: 0.0 for o in range(lo, hi + 1) for S in subsets_of_size(n, o)}
    return {S: 0.0 for S in support if lo <= popcount(S) <= hi}


def _spread(mi: Mapping[int, float], n: int, lo: int, hi: int, coef) -> dict[int, float]:
    """``out[S] = sum_{R superset of S} mi[R] * coef(|R|, |S|)`` for lo <= |S| <= hi."""
    out = _key_space(n, lo, hi, mi.keys())
    for R, value in mi.items():
        if value == 0.0:
            continue
        r = popcount(R)
        bits = [i for i in range(n) if R >> i & 1]
        for s in range(lo, min(hi, r) + 1):
            c = coef(r, s)
            if c == 0.0:
                continue
            for combo in itertools.combinations(bits, s):
                S = sum(1 << i for i in combo)
                out[S] = out.get(S, 0.0) + value * c
    return out


def si_from_moebius(
    mi: MoebiusCoefficients | Mapping[int, float],
    index: IndexKind | str,
    k: int,
    n: int | None = None,
    baseline: float = 0.0,
) -> InteractionValues:
    """Convert Möbius coefficients into SV, BV, MI, SII, BII, CHII, kSII or STII.

    ``k`` is the explanation order (ignored for SV/BV, clipped to n for MI).
    ``mi`` may be dense coefficients or a sparse ``{mask: value}`` map, in
    which case ``n`` is required.
    """
    index = IndexKind(index)
    if index not in _MOEBIUS_SUPPORTED:
        raise ValueError(
            f"index {index.value} has no Möbius conversion; supported: "
            + ", ".join(i.value for i in _MOEBIUS_SUPPORTED)
        )
    if isinstance(mi, MoebiusCoefficients):
        n = mi.n
        sparse = mi.sparse()
    else:
        if n is None:
            raise ValueError("n is required for sparse Möbius coefficients")
        sparse = {int(m): float(v) for m, v in mi.items() if m != 0}
    if index in (IndexKind.SV, IndexKind.BV):
        k = 1
    if index is IndexKind.MI:
        k = n
    if not 1 <= k <= n:
        raise ValueError(f"explanation order must be in [1, {n}], got {k}")

    if index is IndexKind.MI:
        values = _spread(sparse, n, 1, n, lambda r, s: 1.0 if r == s else 0.0)
    elif index in (IndexKind.SV, IndexKind.SII):
        values = _spread(sparse, n, 1, k, lambda r, s: _ii_conversion(WeightFamily.SHAPLEY, r, s))
    elif index in (IndexKind.BV, IndexKind.BII):
        values = _spread(sparse, n, 1, k, lambda r, s: _ii_conversion(WeightFamily.BANZHAF, r, s))
    elif index is IndexKind.CHII:
        values = _spread(sparse, n, 1, k, lambda r, s: _ii_conversion(WeightFamily.CHAINING, r, s))
    elif index is IndexKind.STII:
        values = _spread(
            sparse, n, 1, k, lambda r, s: (1.0 if r == s else 0.0) if s < k else 1.0 / math.comb(r, k)
        )
    else:
        sii = _spread(sparse, n, 1, k, lambda r, s: 1.0 / (r - s + 1))
        return aggregate_ksii(sii, n, k, baseline)
    return InteractionValues(index, n, 1, k, values, baseline)


def soum_moebius(spec: SoumSpec) -> dict[int, float]:
    """Sparse Möbius coefficients of a SOUM; duplicate subsets accumulate."""
    out: dict[int, float] = {}
    for a, u in zip(spec.coefficients, spec.subsets):
        out[u] = out.get(u, 0.0) + a
    return out


def soum_ground_truth(spec: SoumSpec, index: IndexKind | str, k: int) -> InteractionValues:
    """Closed-form interaction values of a SOUM without touching 2**n coalitions."""
    index = IndexKind(index)
    if index not in (IndexKind.SV, IndexKind.SII, IndexKind.kSII, IndexKind.STII, IndexKind.MI,
                     IndexKind.BV, IndexKind.BII, IndexKind.CHII):
        raise ValueError(f"no closed form for index {index.value} on SOUM games")
    return si_from_moebius(soum_moebius(spec), index, k, n=spec.n)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

EXACT_INDICES = tuple(IndexKind)


def exact_index(game: Game, index: IndexKind | str, order: int | None = None, mu_inf: float = DEFAULT_MU_INF) -> InteractionValues:
    """Compute any supported index on a (normalized) game.

    ``order`` is the maximum explanation order; it is ignored for SV/BV and
    for MI/CoMI, which always cover orders 1..n.
    """
    index = IndexKind(index)
    if index in (IndexKind.SV, IndexKind.BV):
        return semivalue_exact(game, _FAMILY_OF[index])
    if index is IndexKind.MI:
        return _moebius_values(moebius(game), index, game.baseline)
    if index is IndexKind.CoMI:
        return _moebius_values(co_moebius(game), index, game.baseline)
    if order is None:
        raise ValueError(f"index {index.value} needs an explanation order")
    if index in (IndexKind.SII, IndexKind.BII, IndexKind.CHII):
        return ii_exact(game, _FAMILY_OF[index], order)
    if index in (IndexKind.SGV, IndexKind.BGV, IndexKind.CHGV):
        return gv_exact(game, _FAMILY_OF[index], order)
    if index is IndexKind.STII:
        return stii_exact(game, order)
    if index is IndexKind.kSII:
        return ksii_exact(game, order)
    if index is IndexKind.FSII:
        return faithful_exact(game, order, mu_inf, "shapley")
    if index is IndexKind.FBII:
        return faithful_exact(game, order, mu_inf, "banzhaf")
    raise ValueError(f"unsupported index {index.value}")  # pragma: no cover


def family_of(index: IndexKind | str) -> WeightFamily:
    return _FAMILY_OF[IndexKind(index)]


__all__ = [
    "FaithfulnessReport",
    "MoebiusCoefficients",
    "aggregate_ksii",
    "co_moebius",
    "discrete_derivatives",
    "exact_index",
    "faithful_exact",
    "faithfulness_loss",
    "gv_exact",
    "ii_exact",
    "ksii_exact",
    "moebius",
    "semivalue_exact",
    "shapley_mu",
    "si_from_moebius",
    "soum_ground_truth",
    "soum_moebius",
    "stii_exact",
    "subset_sum",
    "superset_sum",
]
