import math
import warnings

import numpy as np
import pytest

from coopiq.approximators import (
    KSII_BASES,
    METHOD_INDICES,
    IncompatibleMethodError,
    UnderdeterminedWarning,
    effective_order,
    ksii_approx,
    mc_ii_stratified_shared,
    mc_ii_uniform_size,
    mc_permutation_sv,
    owen_sv,
    quadrature,
    regress_faithful,
    regress_moebius_bounded,
    run_method,
    stii_approx,
    stratified_sv,
)
from coopiq.core import BudgetExceededError, IndexKind
from coopiq.exact import exact_index, faithfulness_loss, moebius
from coopiq.games import FunctionGame, SoumGame, SoumSpec, ValueTableGame, precompute_table, soum_generate

from conftest import random_game, to_mask, unanimity_table


class CountingGame(FunctionGame):
    """Records every distinct coalition it is asked about."""

    def __init__(self, table):
        self.seen = set()
        self.table = np.asarray(table, dtype=float)
        super().__init__(self.table.size.bit_length() - 1, self._look)

    def _look(self, mask):
        self.seen.add(mask)
        return float(self.table[mask])


# (method, index, order, extra params) pairs covering every estimator
CASES = [
    ("mc_permutation_sv", "SV", None, {}),
    ("owen_sv", "SV", None, {}),
    ("stratified_sv", "SV", None, {}),
    ("mc_ii_uniform_size", "SII", 3, {}),
    ("mc_ii_uniform_size", "BII", 2, {}),
    ("mc_ii_uniform_size", "CHII", 2, {}),
    ("mc_ii_uniform_size", "BV", None, {}),
    ("mc_ii_stratified_shared", "SII", 2, {}),
    ("mc_ii_stratified_shared", "BII", 3, {}),
    ("mc_ii_stratified_shared", "CHII", 2, {}),
    ("regress_faithful", "SV", None, {}),
    ("regress_faithful", "FSII", 1, {}),
    ("regress_faithful", "FSII", 2, {}),
    ("regress_faithful", "FBII", 3, {}),
    ("regress_moebius_bounded", "SII", 2, {"fit_order": 5}),
    ("regress_moebius_bounded", "kSII", 3, {"fit_order": 5}),
    ("regress_moebius_bounded", "STII", 2, {"fit_order": 5}),
    ("regress_moebius_bounded", "MI", None, {}),
    ("stii_approx", "STII", 2, {}),
    ("stii_approx", "STII", 5, {}),
    ("ksii_approx", "kSII", 2, {"base": "uniform_size"}),
    ("ksii_approx", "kSII", 3, {"base": "stratified_shared"}),
]


@pytest.mark.parametrize("name,index,order,params", CASES)
def test_full_budget_reproduces_exact(name, index, order, params):
    rng = np.random.default_rng(0)
    for n in (2, 3, 5):
        game = random_game(rng, n)
        k = None if order is None else min(order, n)
        if "fit_order" in params:
            params = {"fit_order": n}
        if name == "owen_sv":
            params = {"grid": min(11, 1 << (n - 1))}
        est = run_method(name, game, index, k, 1 << n, seed=3, **params).estimate
        gt = exact_index(game, index, k)
        assert set(est.values) == set(gt.values)
        assert max(abs(est.values[S] - gt.values[S]) for S in gt.values) <= 1e-8


@pytest.mark.parametrize("name,index,order,params", CASES)
def test_seed_determinism_and_budget_compliance(name, index, order, params):
    rng = np.random.default_rng(1)
    n = 7
    table = rng.uniform(-1, 1, size=1 << n)
    params = {"fit_order": 3} if "fit_order" in params else params
    ran = 0
    for budget in (70, 121, 128):
        game = CountingGame(table)
        try:
            a = run_method(name, game, index, order, budget, seed=11, **params)
        except ValueError:
            continue
        ran += 1
        b = run_method(name, CountingGame(table), index, order, budget, seed=11, **params)
        assert a == b
        assert a.budget_used <= budget
        assert len(game.seen) == a.budget_used
    assert ran


def test_budget_ledger_surfaces_overspending():
    from coopiq.approximators import _Memo

    memo = _Memo(random_game(np.random.default_rng(2), 4), 3)
    memo.values([1, 2])
    with pytest.raises(BudgetExceededError):
        memo.values([4])
    assert memo.ledger.spent == 3


def test_permutation_examples(g2):
    res = mc_permutation_sv(g2, 4, seed=0)
    assert res.estimate.values == pytest.approx({1: 1.5, 2: 2.5}, abs=1e-15)
    assert res.estimate.extra["permutations"] == 2
    base = random_game(np.random.default_rng(3), 4)
    table = np.array([base.table[m & 0b1111] for m in range(32)])
    for budget in (6, 13, 20):
        assert mc_permutation_sv(ValueTableGame(table), budget, seed=budget).estimate.values[16] == 0.0
    with pytest.raises(ValueError):
        mc_permutation_sv(g2, 2)


def test_uniform_size_examples(g2):
    res = mc_ii_uniform_size(g2, "Shapley", [2], 4, seed=5)
    assert res.estimate.values == {3: 1.0}
    game = unanimity_table(5, [1, 2])
    est = mc_ii_uniform_size(game, "Shapley", 2, 20, seed=0).estimate.values
    assert est[to_mask([3, 4])] == 0.0 and est[to_mask([4, 5])] == 0.0
    with pytest.raises(ValueError):
        mc_ii_uniform_size(g2, "Shapley", [2], 3)


def test_stratified_shared_examples():
    game = random_game(np.random.default_rng(4), 6)
    a = mc_ii_stratified_shared(game, "Shapley", 2, 2, seed=9)
    assert a == mc_ii_stratified_shared(game, "Shapley", 2, 2, seed=9)
    assert a.budget_used == 2
    assert all(np.isfinite(v) for v in a.estimate.values.values())


def _mse(est, gt):
    return np.mean([(est.values[S] - v) ** 2 for S, v in gt.values.items()])


def test_stratified_shared_beats_uniform_size_on_soum():
    n = 10
    game = precompute_table(SoumGame(soum_generate(n, 30, 1, 5, seed=1)))
    gt = exact_index(game, "SII", 2)
    budget = 1 << (n - 2)
    strat = [_mse(mc_ii_stratified_shared(game, "Shapley", 2, budget, s).estimate, gt) for s in range(50)]
    unif = [_mse(mc_ii_uniform_size(game, "Shapley", 2, budget, s).estimate, gt) for s in range(50)]
    assert np.median(strat) < np.median(unif)


def test_regress_faithful_examples(g2):
    assert regress_faithful(g2, 1, "shapley", 1e6, 4).estimate.values == pytest.approx({1: 1.5, 2: 2.5}, abs=1e-6)
    game = random_game(np.random.default_rng(5), 4)
    full = regress_faithful(game, 4, "shapley", 1e6, 16).estimate
    assert full.values == pytest.approx(moebius(game).sparse(), abs=1e-8)
    assert faithfulness_loss(game, full).loss <= 1e-10
    pinned = regress_faithful(game, 1, "shapley", 1e6, 16, efficient=True).estimate
    assert pinned.index is IndexKind.SV
    assert pinned.values == pytest.approx(exact_index(game, "SV").values, abs=1e-12)


def test_regress_efficiency_at_minimal_budget():
    for seed in range(10):
        spec = soum_generate(5, 20, 1, 5, seed)
        game = SoumGame(spec)
        for k in (1, 2, 3):
            cols = sum(math.comb(5, o) for o in range(1, k + 1))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UnderdeterminedWarning)
                est = regress_faithful(game, k, "shapley", 1e6, cols + 2, seed).estimate
            assert all(np.isfinite(v) for v in est.values.values())
            assert sum(est.values.values()) == pytest.approx(game(31), abs=1e-6)


def test_regress_flags_rank_deficiency():
    game = random_game(np.random.default_rng(6), 6)
    with pytest.warns(UnderdeterminedWarning):
        res = regress_faithful(game, 1, "shapley", 1e6, 8, seed=0)
    assert res.estimate.extra["underdetermined"] is True
    with pytest.raises(ValueError):
        regress_faithful(game, 2, "shapley", 1e6, 22)


def test_regress_moebius_recovers_low_order_soum():
    spec = soum_generate(6, 25, 1, 2, seed=7)
    game = SoumGame(spec)
    for index in ("SV", "SII", "kSII", "STII", "MI"):
        est = regress_moebius_bounded(game, 2, 64, index=index, order=2).estimate
        gt = exact_index(precompute_table(game), index, 2)
        assert max(abs(est.values[S] - gt.values[S]) for S in gt.values) <= 1e-8


def test_regress_moebius_saturated_model():
    game = random_game(np.random.default_rng(8), 4)
    est = regress_moebius_bounded(game, 4, 16, index="MI").estimate
    assert est.values == pytest.approx(moebius(game).sparse(), abs=1e-10)


@pytest.mark.filterwarnings("ignore::coopiq.approximators.UnderdeterminedWarning")
def test_regress_moebius_converges_as_budget_doubles():
    for seed in range(3):
        game = precompute_table(SoumGame(soum_generate(8, 20, 1, 4, seed)))
        gt = exact_index(game, "SII", 2)
        medians = []
        for budget in (64, 128, 256):
            errs = [_mse(regress_moebius_bounded(game, 2, budget, s).estimate, gt) for s in range(20)]
            medians.append(np.median(errs))
        assert medians == sorted(medians, reverse=True)
    with pytest.raises(ValueError):
        regress_moebius_bounded(game, 2, 32)


def test_owen_examples():
    c = np.array([0.3, -1.2, 0.7, 2.0, 0.05])
    additive = FunctionGame(5, lambda m: float(sum(c[i] for i in range(5) if m >> i & 1)))
    for budget in (22, 40, 31):
        est = owen_sv(additive, budget, seed=budget).estimate.values
        assert [est[1 << i] for i in range(5)] == pytest.approx(c, abs=1e-12)
    base = random_game(np.random.default_rng(9), 4)
    dummy = ValueTableGame([base.table[m & 0b1111] for m in range(32)])
    assert owen_sv(dummy, 25, seed=1).estimate.values[16] == 0.0
    with pytest.raises(ValueError):
        owen_sv(dummy, 21)


def test_quadrature_rules():
    for rule in ("gauss", "trapezoid"):
        q, w = quadrature(11, rule)
        assert w.sum() == pytest.approx(1.0) and q.min() >= 0 and q.max() <= 1
    q, w = quadrature(11)
    assert (q**21) @ w == pytest.approx(1 / 22, abs=1e-14)


def test_owen_trapezoid_full_budget_bias_is_small():
    game = random_game(np.random.default_rng(10), 5)
    est = owen_sv(game, 32, grid=11, rule="trapezoid").estimate.values
    gt = exact_index(game, "SV").values
    assert max(abs(est[S] - gt[S]) for S in gt) < 0.05


def test_stratified_sv_examples(g2):
    assert stratified_sv(g2, 4).estimate.values == pytest.approx({1: 1.5, 2: 2.5}, abs=1e-15)
    rng = np.random.default_rng(11)
    for seed in range(10):
        f = np.concatenate(([0.0], rng.uniform(-1, 1, size=8)))
        game = ValueTableGame([f[bin(m).count("1")] for m in range(256)])
        est = stratified_sv(game, int(rng.integers(16, 200)), seed).estimate.values
        assert max(est.values()) - min(est.values()) <= 1e-15
    with pytest.raises(ValueError):
        stratified_sv(g2, 3)


def test_stii_examples(g2):
    game = unanimity_table(3, [1, 2])
    assert stii_approx(game, 2, 8).estimate.values[0b011] == pytest.approx(1.0, abs=1e-15)
    res = stii_approx(g2, 1, 4)
    assert res.estimate.values == pytest.approx({1: 1.5, 2: 2.5}, abs=1e-15)
    big = random_game(np.random.default_rng(12), 6)
    res = stii_approx(big, 2, 40, seed=1)
    gt = exact_index(big, "STII", 2)
    for i in range(6):
        assert res.estimate.values[1 << i] == pytest.approx(gt.values[1 << i], abs=1e-12)
    with pytest.raises(ValueError):
        stii_approx(big, 2, 21)


@pytest.mark.parametrize("base", KSII_BASES)
def test_ksii_examples(g2, base):
    assert ksii_approx(g2, 2, 4, base=base).estimate.values == pytest.approx({1: 1.0, 2: 2.0, 3: 1.0}, abs=1e-15)
    game = random_game(np.random.default_rng(13), 6)
    full = ksii_approx(game, 3, 64, base=base).estimate
    assert sum(full.values.values()) == pytest.approx(game.table[-1], abs=1e-10)
    first = ksii_approx(game, 1, 30, seed=4, base=base).estimate.values
    direct = (mc_ii_uniform_size if base == "uniform_size" else mc_ii_stratified_shared)(
        game, "Shapley", 1, 30, seed=4
    ).estimate.values
    assert first == direct
    with pytest.raises(ValueError):
        ksii_approx(game, 2, 64, base="nope")


def test_registry():
    game = random_game(np.random.default_rng(14), 4)
    with pytest.raises(IncompatibleMethodError):
        run_method("owen_sv", game, "SII", 2, 16)
    with pytest.raises(IncompatibleMethodError):
        run_method("magic", game, "SV", None, 16)
    res = run_method("mc_ii_uniform_size", game, "SV", None, 16)
    assert res.estimate.index is IndexKind.SV
    assert run_method("stii_approx", game, "SV", None, 16).estimate.index is IndexKind.SV
    assert effective_order("MI", None, 7) == 7 and effective_order("BV", 3, 7) == 1
    assert all(METHOD_INDICES[m] for m in METHOD_INDICES)
    assert res.to_dict()["estimate"]["index"] == "SV"


def test_dummy_zero_for_sv_methods():
    rng = np.random.default_rng(15)
    base = rng.uniform(-1, 1, size=32)
    base[0] = 0
    game = ValueTableGame([base[m & 31] for m in range(64)])
    for name in ("mc_permutation_sv", "owen_sv", "stratified_sv"):
        assert run_method(name, game, "SV", None, 40, seed=2).estimate.values[32] == 0.0


def test_soum_game_with_large_n_runs():
    game = SoumGame(soum_generate(30, 50, 1, 4, seed=0))
    for name, index, order in (("mc_permutation_sv", "SV", None), ("mc_ii_stratified_shared", "SII", 2),
                               ("regress_faithful", "SV", None), ("stratified_sv", "SV", None)):
        res = run_method(name, game, index, order, 600, seed=1)
        assert res.budget_used <= 600
        assert all(np.isfinite(v) for v in res.estimate.values.values())


def test_unnormalized_game_uses_offset():
    spec = SoumSpec(3, (2.0,), (0b011,))
    shifted = FunctionGame(3, lambda m: 5.0 + SoumGame(spec)(m))
    est = mc_permutation_sv(shifted, 8).estimate
    assert est.values == pytest.approx({1: 1.0, 2: 1.0, 4: 0.0})
    assert est.baseline == 5.0
