"""Benchmarking estimators against exact values.

A sweep runs every (game, method, budget, seed) cell, compares the estimate
with ground truth computed once per game, and collects one
:class:`MetricRecord` per cell.  Failures are collected as
:class:`ErrorRecord` entries instead of aborting the sweep.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .approximators import METHOD_INDICES, effective_order, run_method
from .core import IndexKind, InteractionValues, top_k_by_magnitude
from .exact import DEFAULT_MU_INF, FaithfulnessReport, exact_index, faithfulness_loss, soum_ground_truth
from .games import (
    MAX_TABLE_PLAYERS,
    CapacityError,
    Game,
    SoumGame,
    SoumSpec,
    load_game,
    precompute_table,
    soum_generate,
)

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "game",
    "method",
    "budget",
    "seed",
    "index",
    "order",
    "mse",
    "mae",
    "precision_at_5",
    "wall_time_s",
)
PRECISION_K = 5
FAITHFULNESS_INDICES = (IndexKind.kSII, IndexKind.STII, IndexKind.FSII, IndexKind.FBII)
# indices with a closed form on SOUM games
_SOUM_CLOSED_FORM = (
    IndexKind.SV,
    IndexKind.BV,
    IndexKind.MI,
    IndexKind.SII,
    IndexKind.BII,
    IndexKind.CHII,
    IndexKind.kSII,
    IndexKind.STII,
)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _check_comparable(est: InteractionValues, gt: InteractionValues) -> None:
    if (est.index, est.n, est.min_order, est.max_order) != (gt.index, gt.n, gt.min_order, gt.max_order):
        raise ValueError(
            f"cannot compare {est.index.value} (n={est.n}, orders {est.min_order}..{est.max_order}) "
            f"with {gt.index.value} (n={gt.n}, orders {gt.min_order}..{gt.max_order})"
        )


def _differences(est: InteractionValues, gt: InteractionValues) -> np.ndarray:
    _check_comparable(est, gt)
    keys = gt.keys_sorted()
    return est.as_array(keys) - gt.as_array(keys)


def metric_mse(est: InteractionValues, gt: InteractionValues) -> float:
    """Mean squared error over the ground-truth keys (missing estimates are 0)."""
    diff = _differences(est, gt)
    return float(np.mean(diff**2)) if diff.size else 0.0


def metric_mae(est: InteractionValues, gt: InteractionValues) -> float:
    diff = _differences(est, gt)
    return float(np.mean(np.abs(diff))) if diff.size else 0.0


def metric_precision_at_k(est: InteractionValues, gt: InteractionValues, k: int = PRECISION_K) -> float:
    """Overlap of the ``k`` largest-magnitude keys, as a fraction of ``k``.

    When the ground truth has fewer than ``k`` keys all of them are compared.
    """
    if len(gt) < 1:
        raise ValueError("ground truth has no keys")
    k_eff = min(k, len(gt))
    restricted = InteractionValues(
        est.index, est.n, est.min_order, est.max_order, {m: est[m] for m in gt.values}, est.baseline
    )
    hits = set(top_k_by_magnitude(restricted, k_eff)) & set(top_k_by_magnitude(gt, k_eff))
    return len(hits) / k_eff


# ---------------------------------------------------------------------------
# records and export
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricRecord:
    game: str
    method: str
    budget: int
    seed: int
    index: str
    order: int
    mse: float
    mae: float
    precision_at_5: float
    wall_time_s: float

    def sort_key(self) -> tuple:
        return (self.game, self.method, self.budget, self.seed)


@dataclass(frozen=True)
class ErrorRecord:
    game: str
    message: str
    method: str | None = None
    budget: int | None = None
    seed: int | None = None


@dataclass
class SweepResult:
    records: list[MetricRecord]
    errors: list[ErrorRecord] = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


def _sorted(records: Iterable[MetricRecord]) -> list[MetricRecord]:
    return sorted(records, key=MetricRecord.sort_key)


def export_results(records: Iterable[MetricRecord], path, format: str = "csv") -> None:
    """Write records as CSV or as a JSON array, ordered by (game, method, budget, seed)."""
    rows = [asdict(r) for r in _sorted(records)]
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            if format == "csv":
                writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
                writer.writeheader()
                for row in rows:
                    writer.writerow({key: (repr(v) if isinstance(v, float) else v) for key, v in row.items()})
            elif format == "json":
                json.dump(rows, fh, indent=2)
                fh.write("\n")
            else:
                raise ValueError(f"unknown export format {format!r}; expected 'csv' or 'json'")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc.strerror or exc}") from exc


def load_results(path) -> list[MetricRecord]:
    """Read records written by :func:`export_results` (either format)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("["):
        return [MetricRecord(**row) for row in json.loads(text)]
    out = []
    for row in csv.DictReader(text.splitlines()):
        out.append(
            MetricRecord(
                game=row["game"],
                method=row["method"],
                budget=int(row["budget"]),
                seed=int(row["seed"]),
                index=row["index"],
                order=int(row["order"]),
                mse=float(row["mse"]),
                mae=float(row["mae"]),
                precision_at_5=float(row["precision_at_5"]),
                wall_time_s=float(row["wall_time_s"]),
            )
        )
    return out


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodConfig:
    name: str
    params: Mapping = field(default_factory=dict)
    label: str | None = None

    @property
    def display(self) -> str:
        return self.label or self.name


@dataclass(frozen=True)
class GameEntry:
    """A named game given as a loaded handle, a SoumSpec or a file path."""

    name: str
    source: Game | SoumSpec | str | Path


@dataclass
class BenchmarkSuite:
    games: Sequence[GameEntry]
    index: IndexKind
    order: int | None
    budgets: Sequence[int]
    seeds: Sequence[int]
    methods: Sequence[MethodConfig]

    def __post_init__(self):
        self.index = IndexKind(self.index)
        self.games = [g if isinstance(g, GameEntry) else GameEntry(*g) for g in self.games]
        self.methods = [m if isinstance(m, MethodConfig) else MethodConfig(m) for m in self.methods]
        self.budgets = [int(b) for b in self.budgets]
        self.seeds = [int(s) for s in self.seeds]
        if not self.budgets or any(b <= a for a, b in zip(self.budgets, self.budgets[1:])):
            raise ValueError("budgets must be a non-empty ascending sequence")
        names = [g.name for g in self.games]
        if len(set(names)) != len(names):
            raise ValueError("game names must be unique")
        labels = [m.display for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ValueError("method labels must be unique; set 'label' to tell configs apart")
        for m in self.methods:
            if m.name not in METHOD_INDICES:
                raise ValueError(f"unknown method {m.name!r}; available: {', '.join(sorted(METHOD_INDICES))}")
            if self.index not in METHOD_INDICES[m.name]:
                raise ValueError(f"method {m.name} cannot estimate {self.index.value}")


def _game_entry(item, base: Path) -> GameEntry:
    if isinstance(item, str):
        path = (base / item) if not Path(item).is_absolute() else Path(item)
        return GameEntry(Path(item).stem, path)
    if "soum" in item:
        p = item["soum"]
        spec = soum_generate(int(p["n"]), int(p["basis"]), int(p["min_size"]), int(p["max_size"]), int(p["seed"]))
        name = item.get("name", f"soum-n{p['n']}-m{p['basis']}-s{p['seed']}")
        return GameEntry(name, spec)
    path = Path(item["path"])
    path = path if path.is_absolute() else base / path
    return GameEntry(item.get("name", path.stem), path)


def load_suite(path) -> BenchmarkSuite:
    """Parse a suite configuration file.

    The JSON object has ``games`` (file paths, ``{"name", "path"}`` or
    ``{"name", "soum": {n, basis, min_size, max_size, seed}}``), ``index``,
    ``order``, ``budgets``, ``seeds`` and ``methods`` (names or
    ``{"name", "params", "label"}``).  Relative paths resolve against the
    configuration file's directory.
    """
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    missing = [key for key in ("games", "index", "budgets", "seeds", "methods") if key not in data]
    if missing:
        raise ValueError(f"{path}: suite is missing keys {', '.join(missing)}")
    methods = []
    for m in data["methods"]:
        if isinstance(m, str):
            methods.append(MethodConfig(m))
        else:
            methods.append(MethodConfig(m["name"], dict(m.get("params", {})), m.get("label")))
    return BenchmarkSuite(
        games=[_game_entry(item, path.parent) for item in data["games"]],
        index=data["index"],
        order=data.get("order"),
        budgets=data["budgets"],
        seeds=data["seeds"],
        methods=methods,
    )


# ---------------------------------------------------------------------------
# ground truth and sweeps
# ---------------------------------------------------------------------------


class GroundTruthCache:
    """Exact values keyed by (game, index, order), each computed once."""

    def __init__(self, mu_inf: float = DEFAULT_MU_INF):
        self.mu_inf = mu_inf
        self._values: dict[tuple, InteractionValues] = {}
        self.computed = 0

    def get(self, name: str, source: Game | SoumSpec, index: IndexKind, order: int) -> InteractionValues:
        key = (name, index, order)
        if key not in self._values:
            self._values[key] = self._compute(source, index, order)
            self.computed += 1
        return self._values[key]

    def _compute(self, source, index, order) -> InteractionValues:
        if isinstance(source, SoumSpec) and index in _SOUM_CLOSED_FORM:
            return soum_ground_truth(source, index, order)
        game = SoumGame(source) if isinstance(source, SoumSpec) else source
        if game.n > MAX_TABLE_PLAYERS:
            raise CapacityError(
                f"no exact values for {index.value} with n={game.n} (limit {MAX_TABLE_PLAYERS})"
            )
        return exact_index(game, index, order, self.mu_inf)


def _resolve(source) -> Game | SoumSpec:
    if isinstance(source, (str, Path)):
        return load_game(source)
    return source


def _playable(source: Game | SoumSpec) -> Game:
    """Handle used by the estimators; small SOUMs are tabulated for speed."""
    if isinstance(source, SoumSpec):
        game = SoumGame(source)
        return precompute_table(game) if game.n <= MAX_TABLE_PLAYERS else game
    return source


@dataclass(frozen=True)
class _Cell:
    game_name: str
    game: Game
    truth: InteractionValues
    method: MethodConfig
    index: IndexKind
    order: int
    budget: int
    seed: int


def _run_cell(cell: _Cell) -> MetricRecord | ErrorRecord:
    start = time.perf_counter()
    try:
        result = run_method(
            cell.method.name, cell.game, cell.index, cell.order, cell.budget, cell.seed, **dict(cell.method.params)
        )
    except Exception as exc:  # a failing cell must not stop the sweep
        return ErrorRecord(cell.game_name, f"{type(exc).__name__}: {exc}", cell.method.display, cell.budget, cell.seed)
    elapsed = time.perf_counter() - start
    est = result.estimate
    values = (metric_mse(est, cell.truth), metric_mae(est, cell.truth), metric_precision_at_k(est, cell.truth))
    if not all(math.isfinite(v) for v in values):
        return ErrorRecord(cell.game_name, "non-finite metric", cell.method.display, cell.budget, cell.seed)
    return MetricRecord(
        game=cell.game_name,
        method=cell.method.display,
        budget=cell.budget,
        seed=cell.seed,
        index=cell.index.value,
        order=cell.order,
        mse=values[0],
        mae=values[1],
        precision_at_5=values[2],
        wall_time_s=elapsed,
    )


def run_budget_sweep(suite: BenchmarkSuite, jobs: int = 1, cache: GroundTruthCache | None = None) -> SweepResult:
    """Run every (game, method, budget, seed) cell of ``suite``.

    Games whose ground truth cannot be computed yield one error record and
    are skipped.  Records come back sorted by (game, method, budget, seed),
    so the result does not depend on execution order or ``jobs``.
    """
    cache = cache or GroundTruthCache()
    cells: list[_Cell] = []
    errors: list[ErrorRecord] = []
    for entry in suite.games:
        try:
            source = _resolve(entry.source)
            n = source.n
            order = effective_order(suite.index, suite.order, n)
            truth = cache.get(entry.name, source, suite.index, order)
            game = _playable(source)
        except Exception as exc:
            logger.info("skipping game %s: %s", entry.name, exc)
            errors.append(ErrorRecord(entry.name, f"{type(exc).__name__}: {exc}"))
            continue
        for method in suite.methods:
            for budget in suite.budgets:
                for seed in suite.seeds:
                    cells.append(_Cell(entry.name, game, truth, method, suite.index, order, budget, seed))
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell, cells, chunksize=max(1, len(cells) // (4 * jobs))))
    else:
        outcomes = [_run_cell(c) for c in cells]
    records = [o for o in outcomes if isinstance(o, MetricRecord)]
    for o in outcomes:
        if isinstance(o, ErrorRecord):
            logger.info("cell %s/%s/%s/%s failed: %s", o.game, o.method, o.budget, o.seed, o.message)
            errors.append(o)
    return SweepResult(_sorted(records), errors)


# ---------------------------------------------------------------------------
# faithfulness
# ---------------------------------------------------------------------------


def faithfulness_sweep(
    game: Game, indices: Iterable[IndexKind | str] = FAITHFULNESS_INDICES, mu_inf: float = 1.0
) -> dict[tuple[IndexKind, int], FaithfulnessReport]:
    """Faithfulness of each index at every explanation order k = 1..n.

    All losses use the same Shapley-kernel weights with ``mu_inf`` on the
    empty and grand coalitions; FSII is fitted with that same ``mu_inf``.
    """
    if game.n > MAX_TABLE_PLAYERS:
        raise CapacityError(f"faithfulness sweeps need n <= {MAX_TABLE_PLAYERS}, got n={game.n}")
    indices = [IndexKind(i) for i in indices]
    for index in indices:
        if index not in FAITHFULNESS_INDICES:
            raise ValueError(f"faithfulness sweeps support {', '.join(i.value for i in FAITHFULNESS_INDICES)}")
    game = precompute_table(game)
    out = {}
    for index in sorted(indices, key=lambda i: FAITHFULNESS_INDICES.index(i)):
        for k in range(1, game.n + 1):
            phi = exact_index(game, index, k, mu_inf)
            out[(index, k)] = faithfulness_loss(game, phi, mu_inf)
    return out


def export_faithfulness(reports: Mapping[tuple[IndexKind, int], FaithfulnessReport], path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "k", "loss", "r2"])
            for (index, k), report in reports.items():
                writer.writerow([index.value, k, repr(float(report.loss)), repr(float(report.r2))])
    except OSError as exc:
        raise OSError(f"cannot write faithfulness table to {path}: {exc.strerror or exc}") from exc


__all__ = [
    "BenchmarkSuite",
    "CSV_COLUMNS",
    "ErrorRecord",
    "FAITHFULNESS_INDICES",
    "GameEntry",
    "GroundTruthCache",
    "MethodConfig",
    "MetricRecord",
    "SweepResult",
    "export_faithfulness",
    "export_results",
    "faithfulness_sweep",
    "load_results",
    "load_suite",
    "metric_mae",
    "metric_mse",
    "metric_precision_at_k",
    "run_budget_sweep",
]
