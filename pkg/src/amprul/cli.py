"""Command-line entry point chaining the pipeline stages.

Subcommands: simulate, ingest, label, train, eval, predict. Every stage reads
and writes plain files, so a run can be resumed or re-run from any point.
Exit codes: 0 success, 2 invalid configuration or input data, 3 I/O failure,
4 checkpoint version mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

from .errors import AmprulError, EmptyInput, InvalidConfig, VersionMismatch
from .ingest import Manifest, ManifestEntry, load_manifest, parse_cell_csv, save_manifest, write_cell_csv
from .labeling import DEFAULT_EOL_THRESHOLD_PCT, label_cell, read_labels_jsonl, write_labels_jsonl
from .pipeline import (
    TrainConfig,
    evaluate,
    fit_pipeline,
    group_records,
    load_bundle,
    load_train_config,
    predict_online,
    report_json,
    report_table,
    save_bundle,
    save_history_csv,
    windows_for_cells,
)
from .simulate import SimConfig, derive_cell_config, load_sim_config, simulate_fleet

log = logging.getLogger("amprul")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_VERSION = 4


def _log_resolved(subcommand: str, resolved: dict) -> None:
    """Reproducibility record: one line with the full effective configuration."""
    log.info("%s config: %s", subcommand, json.dumps(resolved, sort_keys=True, default=str))


def _float_csv(value: float) -> str:
    return repr(float(value))


# ---- simulate -----------------------------------------------------------------


def cmd_simulate(args) -> int:
    base = load_sim_config(args.config) if args.config else SimConfig()
    if args.seed is not None:
        base = load_sim_config({**asdict(base), "seed": args.seed})
    out_dir = Path(args.out)
    _log_resolved("simulate", {"base": asdict(base), "cells": args.cells,
                               "seed": base.seed, "jobs": args.jobs,
                               "out": str(out_dir)})
    out_dir.mkdir(parents=True, exist_ok=True)
    results = simulate_fleet(base, args.cells, seed=base.seed, jobs=args.jobs)

    entries, truth = [], {}
    for index, res in enumerate(results):
        series = res.series
        path = out_dir / f"{series.cell_id}.csv"
        write_cell_csv(series, path)
        entries.append(ManifestEntry(series.cell_id, path, series.nominal_capacity_ah))
        derived = derive_cell_config(base, index, base.seed)
        truth[series.cell_id] = {
            "config": asdict(derived),
            # Closed-form crossing of the linear fade law, per threshold.
            "eol_throughput_ah": {
                str(pct): (1.0 - pct / 100.0) / derived.fade_per_ah
                for pct in (70.0, 80.0)
            },
            "capacity_trace": [[float(q), float(c)] for q, c in res.true_capacity_trace],
            "soc_range": [res.soc_min, res.soc_max],
        }
        log.info("wrote %s (%d rows)", path, series.timestamp_s.size)

    save_manifest(Manifest(entries), out_dir / "manifest.json")
    (out_dir / "truth.json").write_text(
        json.dumps(truth, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    log.info("fleet of %d cell(s) in %s", len(entries), out_dir)
    return EXIT_OK


# ---- ingest -------------------------------------------------------------------


def cmd_ingest(args) -> int:
    _log_resolved("ingest", {"out": args.out, "csv": [str(p) for p in args.csv],
                             "nominal_capacity_ah": args.nominal_capacity_ah})
    entries = []
    for path in args.csv:
        path = Path(path)
        series = parse_cell_csv(path, args.nominal_capacity_ah, cell_id=path.stem)
        entries.append(ManifestEntry(series.cell_id, path, args.nominal_capacity_ah))
        log.info("validated %s: %d rows spanning %.0f s", path,
                 series.timestamp_s.size,
                 series.timestamp_s[-1] - series.timestamp_s[0])
    save_manifest(Manifest(entries), args.out)
    log.info("manifest with %d cell(s) -> %s", len(entries), args.out)
    return EXIT_OK


# ---- label --------------------------------------------------------------------


def cmd_label(args) -> int:
    manifest = load_manifest(args.manifest)
    if not manifest.entries:
        raise EmptyInput(f"manifest {args.manifest} lists no cells")
    _log_resolved("label", {"manifest": args.manifest, "out": args.out,
                            "threshold_pct": args.threshold,
                            "report": args.report})
    labeled = [label_cell(manifest.load_series(cell_id), threshold_pct=args.threshold)
               for cell_id in manifest.cell_ids()]
    write_labels_jsonl(labeled, args.out)

    censored = [c.cell_id for c in labeled if c.censored]
    report = {
        "threshold_pct": args.threshold,
        "cells": {
            c.cell_id: {
                "eol_throughput_ah": c.eol_throughput_ah,
                "records": len(c.records),
                "censored": c.censored,
                "last_soh_pct": c.soh_points[-1].soh_pct,
            }
            for c in labeled
        },
        "censored_cells": censored,
    }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    log.info("labeled %d cell(s), %d censored -> %s",
             len(labeled), len(censored), args.out)
    return EXIT_OK


# ---- train --------------------------------------------------------------------


def _cells_subset(manifest: Manifest, arg: Optional[str]) -> Manifest:
    if arg is None:
        return manifest
    wanted = [c.strip() for c in arg.split(",") if c.strip()]
    known = {e.cell_id: e for e in manifest.entries}
    missing = [c for c in wanted if c not in known]
    if missing:
        raise InvalidConfig(f"cells not in manifest: {missing}")
    return Manifest([known[c] for c in wanted])


def cmd_train(args) -> int:
    config = load_train_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = load_train_config({**asdict(config), "seed": args.seed})
    manifest = _cells_subset(load_manifest(args.manifest), args.cells)
    records = read_labels_jsonl(args.labels)
    _log_resolved("train", {"manifest": args.manifest, "labels": args.labels,
                            "cells": manifest.cell_ids(), "out": args.out,
                            "history": args.history, "config": asdict(config)})
    result = fit_pipeline(manifest, records, config)
    save_bundle(result.bundle, args.out)
    if args.history:
        save_history_csv(result.history, args.history)
    best = min(h[2] for h in result.history)
    log.info("model -> %s (best val rmse %.4f Ah over %d epoch(s))",
             args.out, best, len(result.history))
    return EXIT_OK


# ---- eval ---------------------------------------------------------------------


def cmd_eval(args) -> int:
    bundle = load_bundle(args.model)
    manifest = _cells_subset(load_manifest(args.manifest), args.cells)
    records = read_labels_jsonl(args.labels)
    _log_resolved("eval", {"model": args.model, "manifest": args.manifest,
                           "labels": args.labels, "cells": manifest.cell_ids(),
                           "json": args.json})
    by_cell = group_records(records)
    cells = [c for c in manifest.cell_ids() if c in by_cell]
    if not cells:
        raise EmptyInput("no labeled cells to evaluate")
    ws, _ = windows_for_cells(manifest, by_cell, cells, bundle.config)
    report = evaluate(bundle, ws)
    sys.stdout.write(report_table(report) + "\n")
    if args.json:
        Path(args.json).write_text(report_json(report), encoding="utf-8")
        log.info("report -> %s", args.json)
    return EXIT_OK


# ---- predict ------------------------------------------------------------------


def cmd_predict(args) -> int:
    bundle = load_bundle(args.model)
    _log_resolved("predict", {"model": args.model, "input": str(args.input)})
    source = sys.stdin if args.input == "-" else args.input
    # The rated capacity is irrelevant to prediction; any positive value parses.
    series = parse_cell_csv(source, 1.0, cell_id="stream")
    stream = zip(series.timestamp_s, series.voltage_v,
                 series.current_a, series.temperature_c)
    count = 0
    for grid_time, estimate in predict_online(bundle, stream):
        sys.stdout.write(f"{_float_csv(grid_time)},{_float_csv(estimate)}\n")
        count += 1
    log.info("%d estimate(s) from %d sample(s)", count, series.timestamp_s.size)
    return EXIT_OK


# ---- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amprul",
        description="Battery remaining-useful-life estimation from measurable signals.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug-level logging")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="synthesize a fleet of cycling logs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cells", type=int, default=10, help="fleet size (default 10)")
    p.add_argument("--seed", type=int, default=None,
                   help="fleet seed (overrides the config file)")
    p.add_argument("--config", default=None, help="simulator config JSON")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="validate CSVs and build a manifest")
    p.add_argument("csv", nargs="+", help="cell CSV paths")
    p.add_argument("--out", required=True, help="manifest JSON path")
    p.add_argument("--nominal-capacity-ah", type=float, default=2.0,
                   help="rated capacity applied to every cell (default 2.0)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("label", help="capacity, SOH, and remaining-Ah labels")
    p.add_argument("--manifest", required=True, help="manifest JSON path")
    p.add_argument("--out", required=True, help="labels JSONL path")
    p.add_argument("--threshold", type=float, default=DEFAULT_EOL_THRESHOLD_PCT,
                   help="end-of-life SOH percent (default %(default)s)")
    p.add_argument("--report", default=None,
                   help="censoring report JSON path (default: stdout)")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="fit the two-stage estimator")
    p.add_argument("--manifest", required=True, help="manifest JSON path")
    p.add_argument("--labels", required=True, help="labels JSONL path")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--config", default=None, help="training config JSON")
    p.add_argument("--seed", type=int, default=None,
                   help="training seed (overrides the config file)")
    p.add_argument("--cells", default=None,
                   help="comma-separated training cells (default: all in manifest)")
    p.add_argument("--history", default=None, help="training history CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on labeled cells")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--manifest", required=True, help="manifest JSON path")
    p.add_argument("--labels", required=True, help="labels JSONL path")
    p.add_argument("--cells", default=None,
                   help="comma-separated cells to score (default: all labeled)")
    p.add_argument("--json", default=None, help="write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="stream estimates for one cell CSV")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--input", required=True, help="cell CSV path, or - for stdin")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VersionMismatch as exc:
        log.error("%s", exc)
        return EXIT_VERSION
    except (AmprulError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
