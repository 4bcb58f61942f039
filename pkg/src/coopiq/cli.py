"""Command-line interface: ``coopiq <subcommand> [flags]``.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .approximators import KSII_BASES, METHOD_INDICES, IncompatibleMethodError, run_method
from .bench import export_faithfulness, export_results, faithfulness_sweep, load_suite, run_budget_sweep
from .core import IndexKind
from .exact import DEFAULT_MU_INF, exact_index
from .games import MAX_TABLE_PLAYERS, CapacityError, load_game, normalize, precompute_table, soum_generate, store_soum, store_table

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
INDEX_TAGS = [kind.value for kind in IndexKind]
ORDERLESS = (IndexKind.SV, IndexKind.BV, IndexKind.MI, IndexKind.CoMI)


class UsageError(Exception):
    """Raised instead of exiting when arguments are invalid."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _index(text: str) -> IndexKind:
    for kind in IndexKind:
        if kind.value.lower() == text.lower():
            return kind
    raise argparse.ArgumentTypeError(f"unsupported index {text!r}; supported: {', '.join(INDEX_TAGS)}")


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _write(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coopiq", description="Exact and approximate Shapley values and interactions.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("soum", help="generate a random sum-of-unanimity game")
    p.add_argument("--n", type=_positive, required=True, help="number of players")
    p.add_argument("--basis", type=int, required=True, help="number of unanimity terms")
    p.add_argument("--min-size", type=_positive, required=True, help="smallest unanimity subset size")
    p.add_argument("--max-size", type=_positive, required=True, help="largest unanimity subset size")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", type=Path, required=True, help="output SOUM file")

    p = sub.add_parser("precompute", help="tabulate every coalition value of a game")
    p.add_argument("--game", type=Path, required=True, help="input game file (SOUM or value table)")
    p.add_argument("--out", type=Path, required=True, help="output value-table file")

    p = sub.add_parser("exact", help="compute an index exactly")
    p.add_argument("--game", type=Path, required=True, help="input game file")
    p.add_argument("--index", type=_index, required=True, help=f"index tag: {', '.join(INDEX_TAGS)}")
    p.add_argument("--order", type=_positive, help="explanation order (ignored for SV, BV, MI, CoMI)")
    p.add_argument("--mu-inf", type=float, default=DEFAULT_MU_INF, help="weight of empty and grand coalition for FSII")
    p.add_argument("--out", type=Path, help="output JSON file (default stdout)")

    p = sub.add_parser("approx", help="estimate an index within an evaluation budget")
    p.add_argument("--game", type=Path, required=True, help="input game file")
    p.add_argument("--method", choices=sorted(METHOD_INDICES), required=True, help="estimator name")
    p.add_argument("--index", type=_index, required=True, help=f"index tag: {', '.join(INDEX_TAGS)}")
    p.add_argument("--order", type=_positive, help="explanation order (ignored for SV, BV, MI)")
    p.add_argument("--budget", type=_positive, required=True, help="maximum number of distinct evaluations")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--grid", type=_positive, help="quadrature points for owen_sv (default 11)")
    p.add_argument("--base", choices=KSII_BASES, help="base estimator for ksii_approx")
    p.add_argument("--fit-order", type=_positive, help="model order for regress_moebius_bounded")
    p.add_argument("--mu-inf", type=float, help="weight of empty and grand coalition for regressions")
    p.add_argument("--out", type=Path, help="output JSON file (default stdout)")

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--suite", type=Path, required=True, help="suite configuration (JSON)")
    p.add_argument("--out-csv", type=Path, help="CSV output path")
    p.add_argument("--out-json", type=Path, help="JSON output path")
    p.add_argument("--jobs", type=_positive, default=1, help="worker processes (default 1)")

    p = sub.add_parser("faithfulness", help="faithfulness of kSII, STII, FSII, FBII for every order")
    p.add_argument("--game", type=Path, required=True, help="input game file")
    p.add_argument("--mu-inf", type=float, default=1.0, help="weight of empty and grand coalition (default 1)")
    p.add_argument("--out-csv", type=Path, help="output CSV (default stdout)")
    return parser


def _cmd_soum(args, parser) -> int:
    if args.basis < 0:
        parser.error("--basis must be non-negative")
    if not args.min_size <= args.max_size <= args.n:
        parser.error("need 1 <= --min-size <= --max-size <= --n")
    store_soum(soum_generate(args.n, args.basis, args.min_size, args.max_size, args.seed), args.out)
    return EXIT_OK


def _cmd_precompute(args, parser) -> int:
    game = load_game(args.game)
    if game.n > MAX_TABLE_PLAYERS:
        raise CapacityError(f"value tables support n <= {MAX_TABLE_PLAYERS}, got n={game.n}")
    store_table(precompute_table(game), args.out)
    return EXIT_OK


def _cmd_exact(args, parser) -> int:
    if args.order is None and args.index not in ORDERLESS:
        parser.error(f"--order is required for {args.index.value}")
    game = normalize(load_game(args.game))
    values = exact_index(game, args.index, args.order, args.mu_inf)
    _write(values.to_json(indent=2) + "\n", args.out)
    return EXIT_OK


def _cmd_approx(args, parser) -> int:
    if args.index not in METHOD_INDICES[args.method]:
        parser.error(
            f"method {args.method} cannot estimate {args.index.value}; supported: "
            + ", ".join(k.value for k in METHOD_INDICES[args.method])
        )
    if args.order is None and args.index not in ORDERLESS:
        parser.error(f"--order is required for {args.index.value}")
    params = {}
    for flag, key, methods in (
        ("grid", "grid", ("owen_sv",)),
        ("base", "base", ("ksii_approx",)),
        ("fit_order", "fit_order", ("regress_moebius_bounded",)),
        ("mu_inf", "mu_inf", ("regress_faithful", "regress_moebius_bounded")),
    ):
        value = getattr(args, flag)
        if value is None:
            continue
        if args.method not in methods:
            parser.error(f"--{flag.replace('_', '-')} does not apply to {args.method}")
        params[key] = value
    game = load_game(args.game)
    try:
        result = run_method(args.method, game, args.index, args.order, args.budget, args.seed, **params)
    except IncompatibleMethodError as exc:
        parser.error(str(exc))
    _write(json.dumps(result.to_dict(), indent=2) + "\n", args.out)
    return EXIT_OK


def _cmd_bench(args, parser) -> int:
    if args.out_csv is None and args.out_json is None:
        parser.error("give --out-csv and/or --out-json")
    suite = load_suite(args.suite)
    result = run_budget_sweep(suite, jobs=args.jobs)
    for err in result.errors:
        where = "/".join(str(x) for x in (err.game, err.method, err.budget, err.seed) if x is not None)
        print(f"error: {where}: {err.message}", file=sys.stderr)
    if args.out_csv:
        export_results(result.records, args.out_csv, "csv")
    if args.out_json:
        export_results(result.records, args.out_json, "json")
    if not result.records and result.errors:
        print("error: every benchmark cell failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_faithfulness(args, parser) -> int:
    game = normalize(load_game(args.game))
    reports = faithfulness_sweep(game, mu_inf=args.mu_inf)
    if args.out_csv is None:
        lines = ["index,k,loss,r2"] + [
            f"{index.value},{k},{rep.loss!r},{rep.r2!r}" for (index, k), rep in reports.items()
        ]
        sys.stdout.write("\n".join(lines) + "\n")
    else:
        export_faithfulness(reports, args.out_csv)
    return EXIT_OK


_COMMANDS = {
    "soum": _cmd_soum,
    "precompute": _cmd_precompute,
    "exact": _cmd_exact,
    "approx": _cmd_approx,
    "bench": _cmd_bench,
    "faithfulness": _cmd_faithfulness,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return _COMMANDS[args.command](args, parser)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"coopiq {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
