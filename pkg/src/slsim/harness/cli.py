"""Command line entry point: ``slsim run | sweep | report``.

Exit codes: 0 on success, 2 for an invalid configuration, 3 when a dataset
file cannot be read.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from slsim.errors import ConfigError, IngestionError
from slsim.harness.config import load_config, with_override
from slsim.harness.data import load_dataset
from slsim.harness.experiment import (
    SUMMARY_HEADER,
    RoundRecord,
    result_from_dict,
    run_experiment,
    write_outputs,
    write_summary,
)

log = logging.getLogger("slsim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGESTION = 3


def _progress(every: int):
    def report(rec: RoundRecord) -> None:
        if rec.round % every == 0:
            log.info("round %d loss %.4f retained %d poison removed %d/%d", rec.round, rec.loss,
                     rec.retained, rec.poison_removed, rec.poison_total)
    return report


def _parse_value(text: str):
    """Sweep values are JSON literals where possible, bare strings otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_override(cfg, "seed", args.seed)
    out = Path(args.out) if args.out else Path("runs") / cfg.name
    result = run_experiment(cfg, progress=_progress(args.log_every))
    write_outputs(result, out)
    print(f"acc={result.acc:.4f} asr={result.asr:.4f} wrote {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = load_config(args.config)
    values = [_parse_value(v.strip()) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values: empty list")
    # validate every point before spending time on training
    configs = [with_override(base, args.param, v) for v in values]
    out = Path(args.out) if args.out else Path("runs") / f"{base.name}-sweep"
    data = load_dataset(base.dataset, base.seed) if args.param.split(".")[0] != "dataset" else None
    results = []
    for value, cfg in zip(values, configs):
        log.info("%s = %s", args.param, value)
        res = run_experiment(cfg, data=data, progress=_progress(args.log_every))
        write_outputs(res, out / f"{args.param}={value}")
        results.append(res)
        print(f"{args.param}={value} acc={res.acc:.4f} asr={res.asr:.4f}")
    write_summary(results, out / "summary.csv")
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.inp)
    paths = sorted(root.rglob("result.json"))
    if not paths:
        raise IngestionError("no result.json found", path=root)
    results = []
    for p in paths:
        try:
            results.append(result_from_dict(json.loads(p.read_text())))
        except (OSError, ValueError, KeyError) as exc:
            raise IngestionError(f"unreadable result ({exc})", path=p) from exc
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for r in results:
        w.writerow(r.summary_row())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slsim", description="Split-learning backdoor simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-round progress")
    parser.add_argument("--log-every", type=int, default=10, help="progress interval in rounds")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (default runs/<name>)")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run one experiment per value of a config field")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", required=True, help="dotted field name, e.g. attack.magnitude")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--out", help="output directory (default runs/<name>-sweep)")
    sweep.set_defaults(func=cmd_sweep)

    report = sub.add_parser("report", help="print the ACC/ASR table of every result under a directory")
    report.add_argument("--in", dest="inp", required=True)
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGESTION


if __name__ == "__main__":
    sys.exit(main())
