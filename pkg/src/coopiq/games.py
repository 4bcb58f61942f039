"""Cooperative games: handles, SOUM generation, value tables and file formats."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import MAX_PLAYERS, full_mask, mask_of, players_of

TABLE_HEADER = "#coopgame v1"
SOUM_HEADER = "#coopsoum v1"
MAX_TABLE_PLAYERS = 16


class GameFormatError(ValueError):
    """A game file does not follow the expected layout."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class CapacityError(ValueError):
    """The requested operation needs more players than supported."""


class Game:
    """A value function over coalitions of ``n`` players.

    Subclasses implement :meth:`_values`; :meth:`evaluate` takes an integer
    array of masks and returns a float array of the same shape.
    """

    def __init__(self, n: int, baseline: float = 0.0, normalized: bool = False):
        if not 1 <= n <= MAX_PLAYERS:
            raise ValueError(f"player count must be in [1, {MAX_PLAYERS}], got {n}")
        self.n = int(n)
        self.baseline = float(baseline)
        self.normalized = bool(normalized)

    @property
    def grand_coalition(self) -> int:
        return full_mask(self.n)

    def _values(self, masks: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, masks) -> np.ndarray:
        arr = np.asarray(masks, dtype=np.int64)
        flat = arr.reshape(-1)
        if flat.size and (flat.min() < 0 or (flat >> self.n).any()):
            raise ValueError("coalition masks outside the player set")
        return np.asarray(self._values(flat), dtype=float).reshape(arr.shape)

    def __call__(self, mask: int) -> float:
        return float(self.evaluate(np.array([mask]))[0])


class FunctionGame(Game):
    """Wraps a scalar ``mask -> value`` callable."""

    def __init__(self, n: int, fn: Callable[[int], float], normalized: bool | None = None):
        empty = float(fn(0))
        super().__init__(n, baseline=empty, normalized=empty == 0.0 if normalized is None else normalized)
        self._fn = fn

    def _values(self, masks):
        return np.array([self._fn(int(m)) for m in masks], dtype=float)


class ValueTableGame(Game):
    """A game stored as a dense table of ``2**n`` values indexed by mask."""

    def __init__(self, table, baseline: float | None = None, normalized: bool | None = None):
        table = np.array(table, dtype=float)
        size = table.shape[0]
        n = size.bit_length() - 1
        if table.ndim != 1 or size != 1 << n or n < 1:
            raise ValueError(f"table length {size} is not 2**n for n >= 1")
        if normalized is None:
            normalized = table[0] == 0.0
        if baseline is None:
            baseline = float(table[0])
        super().__init__(n, baseline=baseline, normalized=normalized)
        table.setflags(write=False)
        self.table = table

    def _values(self, masks):
        return self.table[masks]

    def __eq__(self, other):
        return (
            isinstance(other, ValueTableGame)
            and self.n == other.n
            and self.baseline == other.baseline
            and self.normalized == other.normalized
            and np.array_equal(self.table, other.table)
        )

    __hash__ = None


class _ShiftedGame(Game):
    def __init__(self, inner: Game, offset: float):
        super().__init__(inner.n, baseline=inner.baseline, normalized=True)
        self.inner = inner
        self.offset = offset

    def _values(self, masks):
        return self.inner.evaluate(masks) - self.offset


class _ConjugateGame(Game):
    def __init__(self, inner: Game):
        self.inner = inner
        self.offset = float(inner(full_mask(inner.n)))
        super().__init__(inner.n, baseline=self.offset, normalized=True)

    def _values(self, masks):
        return self.inner.evaluate(full_mask(self.n) ^ masks) - self.offset


def normalize(game: Game) -> Game:
    """Shift ``game`` so that the empty coalition is worth zero.

    The returned handle keeps the original ``baseline``; normalizing an
    already normalized game returns it unchanged.
    """
    if game.normalized:
        return game
    empty = game(0)
    if isinstance(game, ValueTableGame):
        return ValueTableGame(game.table - empty, baseline=empty, normalized=True)
    return _ShiftedGame(game, empty)


def conjugate(game: Game) -> Game:
    """Normalized conjugate: ``T -> v(N \\ T) - v(N)``.

    The subtracted offset ``v(N)`` is recorded as the handle's ``baseline``.
    """
    if not game.normalized:
        raise ValueError("conjugate requires a normalized game")
    return _ConjugateGame(game)


# ---------------------------------------------------------------------------
# sum of unanimity models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SoumSpec:
    n: int
    coefficients: tuple[float, ...]
    subsets: tuple[int, ...]
    seed: int | None = None

    def __post_init__(self):
        if len(self.coefficients) != len(self.subsets):
            raise ValueError("one coefficient per basis subset is required")
        for mask in self.subsets:
            if mask == 0 or mask >> self.n:
                raise ValueError(f"invalid basis subset {mask:#x} for n={self.n}")

    @property
    def m(self) -> int:
        return len(self.subsets)


def soum_generate(n: int, m: int, min_size: int, max_size: int, seed: int) -> SoumSpec:
    """Draw a random sum of unanimity models.

    Each basis term gets a coefficient uniform on [-1, 1] and a subset whose
    size is uniform on ``min_size .. max_size`` and whose members are uniform
    given the size.  Terms are drawn independently, so duplicates can occur.
    """
    if not 1 <= n <= MAX_PLAYERS:
        raise ValueError(f"player count must be in [1, {MAX_PLAYERS}], got {n}")
    if not 1 <= min_size <= max_size <= n:
        raise ValueError(f"need 1 <= min_size <= max_size <= n, got {min_size}, {max_size}, {n}")
    if m < 1:
        raise ValueError("at least one basis term is required")
    rng = np.random.default_rng(seed)
    coefficients = rng.uniform(-1.0, 1.0, size=m)
    sizes = rng.integers(min_size, max_size + 1, size=m)
    subsets = []
    for size in sizes:
        members = rng.choice(n, size=int(size), replace=False)
        subsets.append(int(sum(1 << int(i) for i in members)))
    return SoumSpec(n, tuple(float(a) for a in coefficients), tuple(subsets), seed)


def soum_evaluate(spec: SoumSpec, mask: int) -> float:
    return float(sum(a for a, u in zip(spec.coefficients, spec.subsets) if mask & u == u))


class SoumGame(Game):
    """Vectorised evaluation of a :class:`SoumSpec`."""

    _CHUNK = 4096

    def __init__(self, spec: SoumSpec):
        super().__init__(spec.n, baseline=0.0, normalized=True)
        self.spec = spec
        self._coef = np.array(spec.coefficients, dtype=float)
        self._subsets = np.array(spec.subsets, dtype=np.int64)

    def _values(self, masks):
        out = np.empty(masks.shape[0])
        if self._coef.size == 0:
            out[:] = 0.0
            return out
        for start in range(0, masks.shape[0], self._CHUNK):
            chunk = masks[start : start + self._CHUNK, None]
            hit = (chunk & self._subsets[None, :]) == self._subsets[None, :]
            out[start : start + self._CHUNK] = hit @ self._coef
        return out


# ---------------------------------------------------------------------------
# value tables
# ---------------------------------------------------------------------------


def precompute_table(game: Game) -> ValueTableGame:
    """Evaluate every coalition of ``game`` into a dense table."""
    if game.n > MAX_TABLE_PLAYERS:
        raise CapacityError(f"value tables support n <= {MAX_TABLE_PLAYERS}, got n={game.n}")
    values = game.evaluate(np.arange(1 << game.n, dtype=np.int64))
    return ValueTableGame(values, baseline=game.baseline, normalized=game.normalized)


def store_table(game: ValueTableGame, path) -> None:
    lines = [
        TABLE_HEADER,
        f"n={game.n}",
        f"baseline={game.baseline!r}",
        f"normalized={'true' if game.normalized else 'false'}",
    ]
    lines.extend(f"{mask},{float(value)!r}" for mask, value in enumerate(game.table))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_lines(path) -> list[str]:
    with open(path, encoding="ascii") as fh:
        return fh.read().splitlines()


def _parse_key(path, lineno: int, line: str, key: str) -> str:
    prefix = key + "="
    if not line.startswith(prefix):
        raise GameFormatError(path, lineno, f"expected '{prefix}<value>', got {line!r}")
    return line[len(prefix) :]


def load_table(path) -> ValueTableGame:
    lines = _read_lines(path)
    if not lines or lines[0] != TABLE_HEADER:
        raise GameFormatError(path, 1, f"missing header {TABLE_HEADER!r}")
    if len(lines) < 4:
        raise GameFormatError(path, len(lines) + 1, "truncated header")
    try:
        n = int(_parse_key(path, 2, lines[1], "n"))
    except ValueError as exc:
        if isinstance(exc, GameFormatError):
            raise
        raise GameFormatError(path, 2, "player count is not an integer") from None
    if not 1 <= n <= MAX_TABLE_PLAYERS:
        raise GameFormatError(path, 2, f"player count {n} outside [1, {MAX_TABLE_PLAYERS}]")
    try:
        baseline = float(_parse_key(path, 3, lines[2], "baseline"))
    except ValueError as exc:
        if isinstance(exc, GameFormatError):
            raise
        raise GameFormatError(path, 3, "baseline is not a number") from None
    flag = _parse_key(path, 4, lines[3], "normalized")
    if flag not in ("true", "false"):
        raise GameFormatError(path, 4, f"normalized must be true or false, got {flag!r}")

    rows = lines[4:]
    while rows and rows[-1] == "":
        rows.pop()
    size = 1 << n
    table = np.empty(size)
    seen = set()
    for offset, row in enumerate(rows):
        lineno = offset + 5
        parts = row.split(",")
        if len(parts) != 2:
            raise GameFormatError(path, lineno, f"expected 'mask,value', got {row!r}")
        try:
            mask = int(parts[0])
            value = float(parts[1])
        except ValueError:
            raise GameFormatError(path, lineno, f"unparseable row {row!r}") from None
        if mask in seen:
            raise GameFormatError(path, lineno, f"duplicate mask {mask}")
        if mask != offset:
            raise GameFormatError(path, lineno, f"expected mask {offset}, got {mask}")
        if mask >= size:
            raise GameFormatError(path, lineno, f"mask {mask} out of range for n={n}")
        seen.add(mask)
        table[mask] = value
    if len(rows) != size:
        raise GameFormatError(path, len(rows) + 5, f"expected {size} rows for n={n}, found {len(rows)}")
    return ValueTableGame(table, baseline=baseline, normalized=flag == "true")


def store_soum(spec: SoumSpec, path) -> None:
    lines = [SOUM_HEADER, f"n={spec.n}"]
    for a, u in zip(spec.coefficients, spec.subsets):
        lines.append(",".join([repr(float(a))] + [str(p) for p in players_of(u)]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_soum(path) -> SoumSpec:
    lines = _read_lines(path)
    if not lines or lines[0] != SOUM_HEADER:
        raise GameFormatError(path, 1, f"missing header {SOUM_HEADER!r}")
    if len(lines) < 2:
        raise GameFormatError(path, 2, "missing player count")
    try:
        n = int(_parse_key(path, 2, lines[1], "n"))
    except ValueError as exc:
        if isinstance(exc, GameFormatError):
            raise
        raise GameFormatError(path, 2, "player count is not an integer") from None
    if not 1 <= n <= MAX_PLAYERS:
        raise GameFormatError(path, 2, f"player count {n} outside [1, {MAX_PLAYERS}]")
    coefficients, subsets = [], []
    for offset, row in enumerate(lines[2:]):
        lineno = offset + 3
        if row == "":
            continue
        parts = row.split(",")
        try:
            a = float(parts[0])
            players = [int(p) for p in parts[1:]]
        except ValueError:
            raise GameFormatError(path, lineno, f"unparseable row {row!r}") from None
        if not players or players != sorted(set(players)) or players[0] < 1 or players[-1] > n:
            raise GameFormatError(path, lineno, "players must be ascending, distinct ids in [1, n]")
        coefficients.append(a)
        subsets.append(mask_of(players))
    return SoumSpec(n, tuple(coefficients), tuple(subsets))


def load_game(path) -> Game:
    """Load either a value-table file or a SOUM file, by header."""
    with open(path, encoding="ascii") as fh:
        header = fh.readline().rstrip("\n")
    if header == TABLE_HEADER:
        return load_table(path)
    if header == SOUM_HEADER:
        return SoumGame(load_soum(path))
    raise GameFormatError(path, 1, f"unknown header {header!r}")


def table_of(game: Game) -> np.ndarray:
    """Dense value array for ``game`` (precomputing if necessary)."""
    if isinstance(game, ValueTableGame):
        return game.table
    if game.n > 20:
        raise CapacityError(f"dense tables need n <= 20, got n={game.n}")
    return game.evaluate(np.arange(1 << game.n, dtype=np.int64))


def sizes_table(n: int) -> np.ndarray:
    """Coalition sizes for every mask of ``n`` players."""
    sizes = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        sizes[1 << i : 1 << (i + 1)] = sizes[: 1 << i] + 1
    return sizes


def random_table_game(n: int, rng: np.random.Generator, normalized: bool = True) -> ValueTableGame:
    """Uniform[-1, 1] table, handy for property tests and demos."""
    table = rng.uniform(-1.0, 1.0, size=1 << n)
    if normalized:
        table[0] = 0.0
    return ValueTableGame(table)


__all__ = [
    "CapacityError",
    "FunctionGame",
    "Game",
    "GameFormatError",
    "SoumGame",
    "SoumSpec",
    "ValueTableGame",
    "conjugate",
    "load_game",
    "load_soum",
    "load_table",
    "normalize",
    "precompute_table",
    "random_table_game",
    "sizes_table",
    "soum_evaluate",
    "soum_generate",
    "store_soum",
    "store_table",
    "table_of",
]
