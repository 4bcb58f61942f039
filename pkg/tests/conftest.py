"""Shared fixtures and brute-force oracles.

The oracles below loop over explicit subsets with Python integers and the
fractions module where cheap.  They share no code with the package beyond
the game containers, so they serve as an independent check.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.special import bernoulli

from coopiq.games import ValueTableGame


def subsets(items):
    items = list(items)
    for r in range(len(items) + 1):
        yield from itertools.combinations(items, r)


def to_mask(players) -> int:
    return sum(1 << (p - 1) for p in players)


def players(n):
    return list(range(1, n + 1))


def p_weight(t, s, n, family):
    if family == "Shapley":
        return Fraction(1, (n - s + 1) * math.comb(n - s, t))
    if family == "Chaining":
        return Fraction(s, s + t) / math.comb(n, s + t)
    return Fraction(1, 2 ** (n - s))


def derivative(v, S, T):
    return sum((-1) ** (len(S) - len(L)) * v[to_mask(set(T) | set(L))] for L in subsets(S))


def naive_ii(v, n, S, family):
    rest = [p for p in players(n) if p not in S]
    return sum(float(p_weight(len(T), len(S), n, family)) * derivative(v, S, T) for T in subsets(rest))


def naive_gv(v, n, S, family):
    rest = [p for p in players(n) if p not in S]
    return sum(
        float(p_weight(len(T), len(S), n, family)) * (v[to_mask(set(T) | set(S))] - v[to_mask(T)])
        for T in subsets(rest)
    )


def naive_moebius(v, n, S):
    return sum((-1) ** (len(S) - len(T)) * v[to_mask(T)] for T in subsets(S))


def naive_stii(v, n, S, k):
    if len(S) < k:
        return derivative(v, S, ())
    rest = [p for p in players(n) if p not in S]
    return sum(k / n / math.comb(n - 1, len(T)) * derivative(v, S, T) for T in subsets(rest))


def naive_ksii(v, n, S, k, cache=None):
    """Bernoulli aggregation of SII values; Bernoulli numbers from scipy."""
    cache = {} if cache is None else cache
    b = bernoulli(k)
    rest = [p for p in players(n) if p not in S]
    total = 0.0
    for j in range(0, k - len(S) + 1):
        for extra in itertools.combinations(rest, j):
            key = tuple(sorted(tuple(S) + extra))
            if key not in cache:
                cache[key] = naive_ii(v, n, key, "Shapley")
            total += b[j] * cache[key]
    return total


def naive_comoebius(v, n, S):
    full = to_mask(players(n))
    return sum((-1) ** (len(S) - len(T)) * (v[full ^ to_mask(T)] - v[full]) for T in subsets(S))


def naive_faithful(v, n, k, mu_inf, kernel="shapley"):
    """Weighted least squares on an explicitly built design matrix."""
    cols = [S for r in range(1, k + 1) for S in itertools.combinations(players(n), r)]
    rows, weights, target = [], [], []
    for T in subsets(players(n)):
        t = len(T)
        if kernel == "banzhaf":
            mu = 1.0
        elif t in (0, n):
            mu = mu_inf
        else:
            mu = 1.0 / math.comb(n - 2, t - 1)
        rows.append([1.0 if set(S) <= set(T) else 0.0 for S in cols])
        weights.append(mu)
        target.append(v[to_mask(T)])
    root = np.sqrt(np.array(weights))
    beta = np.linalg.lstsq(np.array(rows) * root[:, None], np.array(target) * root, rcond=None)[0]
    return {to_mask(S): float(b) for S, b in zip(cols, beta)}


def all_keys(n, lo, hi):
    return [to_mask(S) for r in range(lo, hi + 1) for S in itertools.combinations(players(n), r)]


@pytest.fixture
def g2():
    """Two-player game with v(1)=1, v(2)=2, v(12)=4."""
    return ValueTableGame([0.0, 1.0, 2.0, 4.0])


def unanimity_table(n, U):
    mask = to_mask(U)
    return ValueTableGame([1.0 if m & mask == mask else 0.0 for m in range(1 << n)])


def random_game(rng, n):
    table = rng.uniform(-1, 1, size=1 << n)
    table[0] = 0.0
    return ValueTableGame(table)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, title: str, problems: list[str]) -> None:
    """Record one pass/fail line, print it, and fail the calling test on problems."""
    status = "PASS" if not problems else "FAIL"
    line = f"criterion {number:>2} {status}  {title}"
    if problems:
        line += f"  [{len(problems)} problem(s); first: {problems[0]}]"
    ACCEPTANCE_LINES.append(line)
    for problem in problems:
        print(f"  - {problem}")
    print(line)
    assert not problems, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
