"""``dg-bench`` command line entry point.

Exit codes: 0 success, 2 invalid config, 3 a theorem check failed, 4 I/O error.
"""
from __future__ import annotations

import argparse
import sys
import time

from dg_bench.errors import ConfigError, CsvFormatError, DGBenchError, TheoremViolation
from dg_bench.experiments.config import KINDS, validate_config
from dg_bench.experiments.report import ExperimentReport, write_outputs
from dg_bench.experiments.runners import RUNNERS

EXIT_OK, EXIT_CONFIG, EXIT_THEOREM, EXIT_IO = 0, 2, 3, 4


def run_experiment(raw_config: dict, out_dir, workers: int = 1, seed: int | None = None,
                   kind: str | None = None) -> ExperimentReport:
    """Validate, run and write one experiment.

    ``seed`` only applies when the config has none; it is then recorded under
    ``overrides``. ``kind`` must match the config's kind if both are given.
    """
    raw = dict(raw_config)
    overrides = {}
    if "seed" not in raw and seed is not None:
        raw["seed"] = seed
        overrides["seed"] = seed
    if kind is not None:
        if "kind" not in raw:
            raw["kind"] = kind
        elif raw["kind"] != kind:
            raise ConfigError("config.kind", f"config is for {raw['kind']!r}, not {kind!r}")
    cfg = validate_config(raw)
    start = time.perf_counter()
    section = RUNNERS[cfg.kind](cfg, workers)
    report = ExperimentReport(cfg.kind, cfg.data, cfg.hash(), section.results, section.aggregates,
                              section.trials, {}, overrides)
    meta = {"wall_clock_seconds": time.perf_counter() - start, "workers": workers}
    write_outputs(report, section.figures, out_dir, meta)
    return report


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dg-bench",
                                 description="Distributional generalization experiments.")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True, help="experiment config (JSON)")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    ap.add_argument("--seed", type=int, default=None, help="seed used when the config has none")
    return ap


def main(argv=None) -> int:
    import json

    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: config.workers: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        print(f"error: config: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        run_experiment(raw, args.out, args.workers, args.seed, args.kind)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TheoremViolation as exc:
        print(f"theorem violation: {exc}", file=sys.stderr)
        return EXIT_THEOREM
    except (OSError, CsvFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DGBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
