"""
main.py — Batch command line for parameter solving, runs and sweeps

Subcommands:
    params   solve (alpha, t) for an adversarial fraction and churn rate
    run      one simulation; writes manifest.json, summary.txt, series.csv
    sweep    one run per (axis value, seed); per-cell series plus aggregate.csv

Run directly:
    python -m cli.main params --f 0.16 --q 0.209 --epsilon 0.0009765625
    python -m cli.main run --config scenarios/base.conf --seed 7 --out output/base
    python -m cli.main sweep --axis t --values 1,2,3,4 --seeds 1,2,3

Exit codes: 0 success, 1 usage or config error, 2 infeasible parameters,
3 I/O failure.
"""

import argparse
import csv
import logging
import os
import sys
from collections.abc import Sequence
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from dotenv import load_dotenv
from pydantic import BaseModel, Field

from analysis.secparams import DEFAULT_ALPHA_CAP, DEFAULT_EPSILON, solve
from core.errors import ConfigError, InvalidParameterError
from sim.config import DEFAULT_SEED, SWEEPABLE, SimConfig, build_config, load_config_file
from sim.harness import SweepCell, run, run_sweep
from sim.metrics import write_series, write_summary

load_dotenv()

logger = logging.getLogger(__name__)

VERSION = "0.1.0"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_IO = 3

OUT_DIR = Path(os.getenv("LIGHTCHAIN_OUT_DIR", "output"))
LOG_LEVEL = os.getenv("LIGHTCHAIN_LOG_LEVEL", "INFO")

AGGREGATE_COLUMNS = (
    "axis_value",
    "seed",
    "integrity_violations",
    "service_denial_rate",
    "mean_replicas",
    "mean_hops",
    "involvement_stddev",
)

# flag dest → SimConfig field
FLAG_FIELDS = {
    "seed": "seed",
    "peers": "n",
    "f": "f",
    "alpha": "alpha",
    "t": "t",
    "min_tx": "min_tx",
    "hours": "sim_hours",
    "slot_minutes": "slot_minutes",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; 2 means infeasible here."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


class RunManifest(BaseModel):
    command: str
    config: dict[str, Any]
    seeds: list[int] = Field(default_factory=list)
    axis: str | None = None
    values: list[Any] = Field(default_factory=list)
    outputs: list[str] = Field(default_factory=list)
    version: str = VERSION
    started_at: str


# ── Parsing ───────────────────────────────────────────────────────────────────


def _csv_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _build_parser() -> _Parser:
    parser = _Parser(prog="lightchain", description="LightChain security parameters and simulation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    params = sub.add_parser("params", help="Solve (alpha, t) for f, q and epsilon")
    params.add_argument("--f", type=float, default=0.0, help="Adversarial fraction")
    params.add_argument("--q", type=float, default=0.0, help="Offline probability")
    params.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    params.add_argument("--alpha-cap", type=int, default=DEFAULT_ALPHA_CAP)

    for name, help_text in (("run", "Run one simulation"), ("sweep", "Sweep one config field")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--peers", type=int)
        p.add_argument("--f", type=float)
        p.add_argument("--q", type=float, help="Offline probability; sets mean_offline_hours")
        p.add_argument("--alpha", type=int)
        p.add_argument("--t", type=int)
        p.add_argument("--min-tx", type=int)
        p.add_argument("--hours", type=float)
        p.add_argument("--slot-minutes", type=int)
        p.add_argument("--out", type=Path, default=None, help=f"Output directory (default {OUT_DIR})")
        if name == "sweep":
            p.add_argument("--axis", required=True, help="SimConfig field to sweep")
            p.add_argument("--values", required=True, help="Comma-separated axis values")
            p.add_argument("--seeds", help="Comma-separated seeds (default: the config seed)")
    return parser


def _config_from_args(args: argparse.Namespace) -> SimConfig:
    values: dict[str, Any] = {"seed": DEFAULT_SEED}
    if args.config is not None:
        try:
            values.update(load_config_file(args.config))
        except OSError as e:
            raise ConfigError(f"Cannot read config file {args.config}: {e}") from e
    for flag, field in FLAG_FIELDS.items():
        value = getattr(args, flag)
        if value is not None:
            values[field] = value
    if args.q is not None:
        if not 0.0 <= args.q < 1.0:
            raise ConfigError(f"--q must be in [0, 1), got {args.q}")
        online = float(values.get("mean_online_hours", SimConfig.model_fields["mean_online_hours"].default))
        values["mean_offline_hours"] = online * args.q / (1.0 - args.q)
    return build_config(values)


def _axis_values(axis: str, raw: str) -> list[Any]:
    if axis not in SWEEPABLE:
        raise ConfigError(f"Unknown sweep axis {axis!r}; sweepable: {', '.join(SWEEPABLE)}")
    cast = SimConfig.model_fields[axis].annotation
    try:
        return [cast(v) for v in _csv_list(raw)]
    except ValueError as e:
        raise ConfigError(f"Bad value for {axis}: {e}") from e


def _seeds(raw: str | None, config: SimConfig) -> list[int]:
    if raw is None:
        return [config.seed]
    try:
        return [int(s) for s in _csv_list(raw)]
    except ValueError as e:
        raise ConfigError(f"Bad --seeds list: {e}") from e


# ── Commands ──────────────────────────────────────────────────────────────────


def cmd_params(args: argparse.Namespace) -> int:
    report = solve(args.f, args.q, args.epsilon, args.alpha_cap)
    if report.feasible:
        alpha, t = report.chosen
        print(f"Feasible: alpha={alpha} t={t} (f={args.f}, q={args.q}, epsilon={args.epsilon})")
    else:
        print(
            f"Infeasible: no (alpha, t) with alpha ≤ {args.alpha_cap} "
            f"(f={args.f}, q={args.q}, epsilon={args.epsilon})"
        )
    print(f"  integrity needs t ≥ {report.t_min_integrity}")
    print(f"  service allows t ≤ {report.t_max_service}")
    print(f"  replicas need t ≥ {report.t_min_replica}")
    print()
    print("\n".join(report.to_lines()))
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def _write_manifest(out: Path, manifest: RunManifest) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    out: Path = args.out or OUT_DIR
    series_path, summary_path = out / "series.csv", out / "summary.txt"
    _write_manifest(
        out,
        RunManifest(
            command="run",
            config=config.snapshot(),
            seeds=[config.seed],
            outputs=[series_path.name, summary_path.name],
            started_at=_now(),
        ),
    )
    metrics = run(config)
    write_summary(metrics, summary_path)
    write_series(metrics, series_path)
    print("\n".join(metrics.summary_lines()))
    logger.info(f"Wrote {summary_path} and {series_path}")
    return EXIT_OK


def _cell_name(axis: str, cell: SweepCell) -> str:
    return f"series_{axis}={cell.axis_value}_seed={cell.seed}.csv"


def write_aggregate(cells: Sequence[SweepCell], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        for cell in cells:
            m = cell.metrics
            writer.writerow(
                [
                    str(cell.axis_value),
                    str(cell.seed),
                    str(m.integrity_violations),
                    f"{m.service_denial_rate:.6f}",
                    f"{m.mean_replicas:.6f}",
                    f"{m.mean_hops:.6f}",
                    f"{m.involvement_stddev:.6f}",
                ]
            )


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _config_from_args(args)
    values = _axis_values(args.axis, args.values)
    seeds = _seeds(args.seeds, base)
    out: Path = args.out or OUT_DIR
    planned = [f"series_{args.axis}={v}_seed={s}.csv" for v in values for s in seeds]
    _write_manifest(
        out,
        RunManifest(
            command="sweep",
            config=base.snapshot(),
            seeds=seeds,
            axis=args.axis,
            values=values,
            outputs=[*planned, "aggregate.csv"],
            started_at=_now(),
        ),
    )
    cells = run_sweep(base, args.axis, values, seeds, progress=True)
    for cell in cells:
        write_series(cell.metrics, out / _cell_name(args.axis, cell))
    write_aggregate(cells, out / "aggregate.csv")
    logger.info(f"Sweep of {args.axis} over {len(values)} values × {len(seeds)} seeds written to {out}")
    return EXIT_OK


COMMANDS = {"params": cmd_params, "run": cmd_run, "sweep": cmd_sweep}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=LOG_LEVEL.upper(),
        format="%(asctime)s [%(levelname)s] %(message)s",
    )
    try:
        args = _build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, InvalidParameterError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
