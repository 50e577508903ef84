"""Command-line interface.

Every subcommand reads one config file, runs deterministically from its seed,
writes CSV (optionally SVG) into the output directory, and prints a short
summary.  Exit codes: 0 success, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, load_config
from .dynamics import PaymentLedger
from .errors import ConfigError, FedMarketError
from .experiments import (
    run_ablate,
    run_compare,
    run_deviation,
    run_match,
    run_simulate,
    run_solve,
    run_sweep_eta,
    run_sweep_owner,
)
from .report import SweepResult, write_csv, write_line_chart_svg

COMMANDS = (
    "solve",
    "match",
    "simulate",
    "sweep-eta",
    "sweep-owner",
    "deviate",
    "compare",
    "ablate",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedmarket",
        description="Three-sided data market simulator: solve, match, train, compare.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to a key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default="out", help="output directory (default: ./out)")
    parser.add_argument("--format", choices=("csv", "svg"), default="csv",
                        help="svg additionally emits line charts for sweeps")
    return parser


def _emit(result: SweepResult, out_dir: Path, name: str) -> Path:
    path = out_dir / f"{name}.csv"
    write_csv(path, result)
    return path


def _emit_chart(result: SweepResult, out_dir: Path, name: str, x_col: str, y_cols, title: str):
    xi = result.columns.index(x_col)
    series = []
    for y_col in y_cols:
        yi = result.columns.index(y_col)
        xs = [row[xi] for row in result.rows]
        ys = [row[yi] for row in result.rows]
        series.append((y_col, xs, ys))
    write_line_chart_svg(out_dir / f"{name}.svg", title, x_col, "utility", series)


def _cmd_solve(config: ExperimentConfig, out_dir: Path, fmt: str) -> None:
    output = run_solve(config)
    path = _emit(output.table, out_dir, "solution")
    profile = output.solution.profile
    print(f"payment: {profile.eta:.6g}")
    print(f"participants: {list(output.solution.intermediates.participants)}")
    for dropped in output.solution.dropped_owners:
        print(f"dropped owner {dropped.owner_id}: {dropped.reason}")
    report = output.verification
    print(
        "verification max gains: "
        f"payment {report.payment_gain:.3g}, "
        f"owners {max(report.owner_gains.values()):.3g}, "
        f"centers {max(report.center_gains.values()):.3g}"
    )
    print(f"wrote {path}")


def _cmd_match(config: ExperimentConfig, out_dir: Path, fmt: str) -> None:
    output = run_match(config)
    path = _emit(output.table, out_dir, "matching")
    for owner_id, center_id in sorted(output.matching.pairs.items()):
        print(f"owner {owner_id} -> center {center_id}")
    if output.matching.unmatched_centers:
        print(f"idle centers: {list(output.matching.unmatched_centers)}")
    print(f"blocking pairs: {len(output.blocking_pairs)}")
    print(f"wrote {path}")


def _cmd_simulate(config: ExperimentConfig, out_dir: Path, fmt: str) -> None:
    output = run_simulate(config)
    path = _emit(output.table, out_dir, "rounds")
    ledger: PaymentLedger = output.history.ledger
    ledger.to_csv(str(out_dir / "ledger.csv"))
    for event in output.history.events:
        print(event)
    final = output.history.rounds[-1].global_loss
    print(f"final global loss: {final:.6g}")
    print(f"wrote {path} and {out_dir / 'ledger.csv'}")


def _cmd_sweep_eta(config: ExperimentConfig, out_dir: Path, fmt: str) -> None:
    result = run_sweep_eta(config)
    path = _emit(result, out_dir, "sweep_eta")
    best = max(result.rows, key=lambda row: row[1])
    print(f"best sampled payment: {best[0]:.6g} (server utility {best[1]:.6g})")
    print(f"closed-form payment: {result.metadata['optimal_payment']}")
    if fmt == "svg":
        _emit_chart(result, out_dir, "sweep_eta", "payment",
                    ["server_utility"], "server utility vs payment")
    print(f"wrote {path}")


def _cmd_sweep_owner(config: ExperimentConfig, out_dir: Path, fmt: str) -> None:
    result = run_sweep_owner(config)
    path = _emit(result, out_dir, "sweep_owner")
    best = max(result.rows, key=lambda row: row[1])
    print(f"best sampled quantity: {best[0]:.6g} (owner utility {best[1]:.6g})")
    print(f"closed-form quantity: {result.metadata['optimal_quantity']}")
    if fmt == "svg":
        _emit_chart(result, out_dir, "sweep_owner", "quantity",
                    ["owner_utility"], f"owner {result.metadata['owner']} utility vs quantity")
    print(f"wrote {path}")


def _cmd_deviate(config: ExperimentConfig, out_dir: Path, fmt: str) -> None:
    result = run_deviation(config)
    path = _emit(result, out_dir, "deviation")
    first, last = result.rows[0], result.rows[-1]
    print(f"ratio {first[0]:+.0%}: server {first[1]:.6g}; ratio {last[0]:+.0%}: server {last[1]:.6g}")
    if fmt == "svg":
        _emit_chart(result, out_dir, "deviation", "ratio",
                    [c for c in result.columns if c.endswith("utility")],
                    "utilities vs report deviation")
    print(f"wrote {path}")


def _cmd_compare(config: ExperimentConfig, out_dir: Path, fmt: str) -> None:
    result = run_compare(config)
    path = _emit(result, out_dir, "compare")
    by_strategy: dict[tuple[int, str], list[float]] = {}
    for n, _, strategy, u_s, _ in result.rows:
        by_strategy.setdefault((n, strategy), []).append(u_s)
    for (n, strategy), values in sorted(by_strategy.items()):
        print(f"N={n:3d} {strategy:8s} mean server utility {sum(values) / len(values):.4f}")
    if fmt == "svg":
        ns = sorted({row[0] for row in result.rows})
        series = []
        for strategy in ("optimal", "fixed", "random"):
            ys = []
            for n in ns:
                vals = by_strategy[(n, strategy)]
                ys.append(sum(vals) / len(vals))
            series.append((strategy, ns, ys))
        write_line_chart_svg(out_dir / "compare.svg", "server utility vs market size",
                             "n_owners", "server utility", series)
    print(f"wrote {path}")


def _cmd_ablate(config: ExperimentConfig, out_dir: Path, fmt: str) -> None:
    result = run_ablate(config)
    path = _emit(result, out_dir, "ablate")
    print(f"adjusted run wins: {result.metadata['adjusted_wins']}")
    print(f"wrote {path}")


_DISPATCH = {
    "solve": _cmd_solve,
    "match": _cmd_match,
    "simulate": _cmd_simulate,
    "sweep-eta": _cmd_sweep_eta,
    "sweep-owner": _cmd_sweep_owner,
    "deviate": _cmd_deviate,
    "compare": _cmd_compare,
    "ablate": _cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
    except FileNotFoundError:
        print(f"config file not found: {args.config}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        _DISPATCH[args.command](config, out_dir, args.format)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FedMarketError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
