"""Command-line interface: ``vscout detect|simulate|benchmark|chart``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .chart import write_chart
from .exceptions import ConfigError, VscoutError
from .metrics import METRIC_FIELDS, evaluate, summarize
from .pipeline import PipelineConfig, VscoutResult, run_vscout
from .simgen import ScenarioSpec, generate, write_data_csv, write_labels_csv

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PIPELINE = 3

BENCHMARK_COLUMNS = (
    "scenario_id", "replication", *METRIC_FIELDS, "runtime_seconds", "error",
)


class InputError(Exception):
    """Bad user input: unreadable CSV, malformed config, invalid enum value."""


def read_data_csv(path: str | Path) -> np.ndarray:
    """Read a numeric CSV with one header row into an n x p float matrix."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        p = len(header)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != p:
                raise InputError(
                    f"{path}: row {line_no} has {len(row)} fields, expected {p}"
                )
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise InputError(
                        f"{path}: non-numeric value {cell!r} at row {line_no}, column {col}"
                    ) from None
                if not math.isfinite(v):
                    raise InputError(
                        f"{path}: non-finite value {cell!r} at row {line_no}, column {col}"
                    )
                values.append(v)
            rows.append(values)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def read_labels_csv(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["label"]:
            raise InputError(f"{path}: expected a single 'label' header")
        labels = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 1 or row[0].strip() not in ("0", "1"):
                raise InputError(f"{path}: row {line_no} must hold 0 or 1")
            labels.append(row[0].strip() == "1")
    return np.array(labels, dtype=bool)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError(f"config {path} must be a JSON object")
    try:
        return PipelineConfig.from_dict(data)
    except (ConfigError, TypeError) as exc:
        raise InputError(f"invalid config {path}: {exc}") from exc


def _clean(value: Any) -> Any:
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def build_record(
    result: VscoutResult, cfg: PipelineConfig, seed: int, truth: np.ndarray | None = None
) -> dict[str, Any]:
    """Assemble the versioned, self-contained detection record."""
    f = result.flags
    observations = [
        {
            "index": i + 1,
            "y_hat": int(f.y_hat[i]),
            "c": int(f.c[i]),
            "e": int(f.e[i]),
            "u": int(f.u[i]),
            "q": int(f.q[i]),
            "anomaly_score": float(f.anomaly_score[i]),
            "t2": float(result.t2[i]),
            "recon_error": float(result.recon_error[i]),
        }
        for i in range(f.y_hat.size)
    ]
    diag = result.diagnostics
    record: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "seed": seed,
        "config": cfg.to_dict(),
        "observations": observations,
        "summary": {
            "n": int(f.y_hat.size),
            "flagged": int(f.y_hat.sum()),
            "d_eff": result.latent.d_eff,
            "d_eff_initial": diag["d_eff_initial"],
            "relevant": diag["relevant_final"],
            "tau_star": diag["tau_star"],
            "changepoints": diag["changepoints"],
            "n_in": result.baseline.n_in,
            "h": result.baseline.t2_threshold,
            "q_alpha": result.baseline.recon_cutoff,
            "ridge": result.baseline.ridge,
            "indicator_counts": diag["indicator_counts"],
            "refined_weights_kept": diag["refined_weights_kept"],
            "epochs": len(diag["loss_history"]),
        },
    }
    if "calibration" in diag:
        record["summary"]["calibration"] = diag["calibration"]
    if truth is not None:
        report = evaluate(truth, f.y_hat, f.anomaly_score)
        record["metrics"] = {k: getattr(report, k) for k in METRIC_FIELDS}
        record["metrics"].update(tp=report.tp, fp=report.fp, tn=report.tn, fn=report.fn)
    return _clean(record)


def cmd_detect(args: argparse.Namespace) -> int:
    try:
        X = read_data_csv(args.input)
        truth = read_labels_csv(args.truth) if args.truth else None
        if truth is not None and truth.size != X.shape[0]:
            raise InputError(
                f"truth has {truth.size} labels but the data has {X.shape[0]} rows"
            )
        cfg = load_config(args.config)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    seed = cfg.seed if args.seed is None else args.seed
    cfg.seed = seed
    try:
        result = run_vscout(X, cfg, seed=seed)
    except VscoutError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    record = build_record(result, cfg, seed, truth)
    text = json.dumps(record, indent=1, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if args.chart:
        write_chart(args.chart, record)
    s = record["summary"]
    print(
        f"n={s['n']} flagged={s['flagged']} d_eff={s['d_eff']} tau*={s['tau_star']}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = ScenarioSpec(
        dist=args.dist, n=args.n, p=args.p, delta=args.delta,
        gamma=args.gamma, shift_type=args.shift, seed=args.seed,
    )
    try:
        sample = generate(spec)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for w in sample.warnings:
        print(f"warning: {w}", file=sys.stderr)
    write_data_csv(args.output, sample.X)
    write_labels_csv(args.labels, sample.truth)
    return EXIT_OK


def _run_replication(task: tuple[str, dict, int, dict | None]) -> dict[str, Any]:
    scenario_id, spec_fields, rep, config = task
    row: dict[str, Any] = {"scenario_id": scenario_id, "replication": rep}
    start = time.perf_counter()
    try:
        spec = ScenarioSpec(**{**spec_fields, "seed": spec_fields.get("seed", 0) + rep})
        sample = generate(spec)
        cfg = PipelineConfig.from_dict(config) if config else PipelineConfig()
        result = run_vscout(sample.X, cfg, seed=spec.seed)
        report = evaluate(sample.truth, result.flags.y_hat, result.flags.anomaly_score)
        row.update({k: getattr(report, k) for k in METRIC_FIELDS})
        row["error"] = ""
    except Exception as exc:  # recorded in-row, the batch keeps going
        row.update({k: None for k in METRIC_FIELDS})
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["runtime_seconds"] = time.perf_counter() - start
    return row


def parse_scenarios(data: Any) -> tuple[list[tuple[str, dict, int, dict | None]], list[str]]:
    """Expand a scenario document into replication tasks.

    Accepted shape::

        {"replications": 3, "config": {...},
         "scenarios": [{"id": "a", "dist": "normal", ..., "replications": 5}]}

    A bare list of scenarios is also accepted.
    """
    if isinstance(data, list):
        data = {"scenarios": data}
    if not isinstance(data, dict) or not isinstance(data.get("scenarios"), list):
        raise InputError("scenario file must hold a 'scenarios' list")
    default_reps = data.get("replications", 1)
    config = data.get("config")
    if config is not None:
        PipelineConfig.from_dict(config)
    spec_fields = {f for f in ScenarioSpec.__dataclass_fields__}
    tasks = []
    order = []
    for k, raw in enumerate(data["scenarios"]):
        if not isinstance(raw, dict):
            raise InputError(f"scenario {k} must be an object")
        raw = dict(raw)
        sid = str(raw.pop("id", f"scenario{k}"))
        reps = int(raw.pop("replications", default_reps))
        unknown = set(raw) - spec_fields
        if unknown:
            raise InputError(f"scenario {sid}: unknown keys {sorted(unknown)}")
        ScenarioSpec(**raw).validate()
        order.append(sid)
        tasks.extend((sid, raw, rep, config) for rep in range(reps))
    return tasks, order


def _fmt_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def cmd_benchmark(args: argparse.Namespace) -> int:
    try:
        data = json.loads(Path(args.scenarios).read_text())
        tasks, order = parse_scenarios(data)
    except (OSError, json.JSONDecodeError, InputError, ConfigError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    workers = max(1, args.workers)
    if workers == 1:
        rows = [_run_replication(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_replication, tasks))

    with open(args.output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCHMARK_COLUMNS)
        for row in rows:
            writer.writerow([_fmt_cell(row.get(c)) for c in BENCHMARK_COLUMNS])
        writer.writerow([])
        agg_header = ["scenario_id", "n_ok"]
        for m in METRIC_FIELDS:
            agg_header += [f"{m}_mean", f"{m}_std"]
        writer.writerow(agg_header)
        for sid in order:
            mine = [r for r in rows if r["scenario_id"] == sid and not r["error"]]
            cells = [sid, str(len(mine))]
            for m in METRIC_FIELDS:
                mean, std = summarize([r[m] for r in mine])
                cells += [_fmt_cell(mean), _fmt_cell(std)]
            writer.writerow(cells)
    ok = sum(1 for r in rows if not r["error"])
    print(f"{ok}/{len(rows)} replications succeeded", file=sys.stderr)
    return EXIT_OK if ok >= 1 else EXIT_PIPELINE


def read_benchmark_csv(path: str | Path) -> tuple[list[dict[str, str]], list[dict[str, str]]]:
    """Split a benchmark report into its detail and aggregate sections."""
    with open(path, newline="") as fh:
        lines = list(csv.reader(fh))
    blank = lines.index([])
    detail = [dict(zip(lines[0], r)) for r in lines[1:blank]]
    agg = [dict(zip(lines[blank + 1], r)) for r in lines[blank + 2:]]
    return detail, agg


def cmd_chart(args: argparse.Namespace) -> int:
    try:
        record = json.loads(Path(args.record).read_text())
        if record.get("schema_version") != SCHEMA_VERSION:
            raise InputError("unsupported or missing schema_version")
        write_chart(args.output, record)
    except (OSError, json.JSONDecodeError, InputError, KeyError, TypeError, ValueError, AttributeError) as exc:
        print(f"error: malformed record: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vscout", description=__doc__)
    parser.add_argument("--version", action="version", version=f"vscout {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="label out-of-control rows of a CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--truth")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    p.add_argument("--chart")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simulate", help="write a simulated scenario to CSV")
    p.add_argument("--dist", default="normal")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--p", type=int, default=150)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--shift", default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="run seeded Monte Carlo replications")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("chart", help="draw an SVG control chart from a detect record")
    p.add_argument("--record", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_chart)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
