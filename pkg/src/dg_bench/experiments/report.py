"""Report assembly and on-disk layout.

An output directory holds ``report.json`` (canonical JSON, byte-identical for
a given config and seed), ``tables/trials.csv``, ``tables/aggregate.csv``,
``figures/*.svg`` and ``run_meta.json`` (wall-clock and worker count, which
are kept out of the report so that it stays reproducible).
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from dg_bench import __version__
from dg_bench.errors import ValidationError
from dg_bench.experiments.heatmap import heatmap_svg

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "dg-bench report",
    "type": "object",
    "required": ["toolkit_version", "kind", "config", "config_hash", "overrides", "results",
                 "aggregates", "trials", "figures"],
    "properties": {
        "toolkit_version": {"type": "string"},
        "kind": {"type": "string"},
        "config": {"type": "object"},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "overrides": {"type": "object"},
        "results": {"type": "object"},
        "aggregates": {"type": "array", "items": {"type": "object"}},
        "figures": {"type": "object", "additionalProperties": {"type": "string"}},
        "trials": {"type": "array", "items": {"type": "object"}},
    },
    "additionalProperties": False,
}


def plain(obj):
    """Convert numpy scalars/arrays and tuples into JSON-ready Python values."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValidationError(f"non-finite value {v!r} cannot be written to a report")
        return v
    return obj


def dumps(obj) -> str:
    return json.dumps(plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    config_hash: str
    results: dict
    aggregates: list = field(default_factory=list)
    trials: list = field(default_factory=list)
    figures: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    toolkit_version: str = __version__

    def to_dict(self) -> dict:
        return plain({
            "toolkit_version": self.toolkit_version,
            "kind": self.kind,
            "config": self.config,
            "config_hash": self.config_hash,
            "overrides": self.overrides,
            "results": self.results,
            "aggregates": self.aggregates,
            "figures": self.figures,
            "trials": self.trials,
        })

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        d = json.loads(text)
        return cls(d["kind"], d["config"], d["config_hash"], d["results"], d["aggregates"],
                   d["trials"], d["figures"], d["overrides"], d["toolkit_version"])


def table_csv(rows: list) -> str:
    """CSV text for a list of dicts; columns are the sorted union of keys."""
    cols = sorted({k for r in rows for k in r})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(r.get(k, "")) for k in cols})
    return buf.getvalue()


def _cell(v):
    v = plain(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True)
    return v


def _write(path, text: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_outputs(report: ExperimentReport, figures, out_dir, meta: dict) -> dict:
    """Write every artifact under ``out_dir``; returns relative paths written."""
    paths = {}
    for fig in figures:
        rel = f"figures/{fig.name}.svg"
        _write(os.path.join(out_dir, rel), heatmap_svg(fig.values, fig.rows, fig.cols, fig.title))
        report.figures[fig.name] = rel
    _write(os.path.join(out_dir, "tables", "trials.csv"), table_csv(report.trials))
    _write(os.path.join(out_dir, "tables", "aggregate.csv"), table_csv(report.aggregates))
    _write(os.path.join(out_dir, "report.json"), report.to_json())
    _write(os.path.join(out_dir, "run_meta.json"), dumps(meta))
    paths.update(report="report.json", trials="tables/trials.csv", aggregate="tables/aggregate.csv",
                 meta="run_meta.json")
    return paths


def report_schema_json() -> str:
    return json.dumps(REPORT_SCHEMA, indent=2, sort_keys=True) + "\n"
