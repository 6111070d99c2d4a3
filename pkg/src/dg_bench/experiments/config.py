"""Experiment configuration: JSON schema, validation and object builders."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import jsonschema
import numpy as np

from dg_bench import distributions as dist
from dg_bench import metrics
from dg_bench.bimodal import BimodalSource
from dg_bench.classifiers import ClassifierFamilySpec
from dg_bench.errors import ConfigError, DGBenchError

KINDS = (
    "calibrate",
    "constant_partition",
    "coarse_partition",
    "multi_feature",
    "agree",
    "lambda_sweep",
    "verify_nn",
    "student_teacher",
    "pointwise",
)

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_prob = {"type": "number", "minimum": 0, "maximum": 1}
_count = {"type": "integer", "minimum": 1}
_index = {"type": "integer", "minimum": 0}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SOURCE_SCHEMA = {
    "oneOf": [
        _obj({"type": {"const": "toy_four_cluster"}, "separation": _pos, "noise_p": _prob,
              "spread": _pos}, ["type"]),
        _obj({"type": {"const": "two_cluster"}, "separation": _pos, "noise_p": _prob,
              "d": _count, "spread": _pos}, ["type"]),
        _obj({"type": {"const": "gaussian_clusters"}, "n_clusters": _count, "K": _count, "d": _count,
              "separation": _pos, "spread": _pos, "label_noise": _prob, "center_seed": _index},
             ["type", "n_clusters", "K", "d"]),
        _obj({"type": {"const": "tabular_task"}, "task_seed": _index}, ["type", "task_seed"]),
        _obj({"type": {"const": "finite"},
              "probs": {"type": "array", "items": _prob, "minItems": 1},
              "label_pmfs": {"type": "array", "items": {"type": "array", "items": _prob}},
              "features": {"type": "array", "items": {"type": "array", "items": _num}}},
             ["type", "probs", "label_pmfs", "features"]),
        _obj({"type": {"const": "random_finite"}, "n_atoms": {"type": "integer", "minimum": 1, "maximum": 12},
              "K": _count, "instance_seed": _index, "n_cells": _count}, ["type"]),
        _obj({"type": {"const": "bimodal"}, "hard_fraction": _prob, "K": {"type": "integer", "minimum": 2},
              "n_atoms": _count}, ["type"]),
        _obj({"type": {"const": "csv"}, "path": {"type": "string"}}, ["type", "path"]),
    ]
}

FAMILY_SCHEMA = {
    "oneOf": [
        _obj({"kind": {"enum": ["one_nn", "decision_tree"]}}, ["kind"]),
        _obj({"kind": {"enum": ["k_nn", "randomized_k_nn"]}, "k": _count}, ["kind", "k"]),
        _obj({"kind": {"const": "kernel"}, "kernel_kind": {"enum": ["rbf", "laplace"]}, "sigma": _pos,
              "lambda": {"type": "number", "minimum": 0}}, ["kind", "sigma"]),
        _obj({"kind": {"const": "bimodal"}}, ["kind"]),
    ]
}

PARTITION_SCHEMA = {
    "oneOf": [
        _obj({"type": {"enum": ["constant", "cluster", "clean_label"]}, "name": {"type": "string"}}, ["type"]),
        _obj({"type": {"enum": ["cell_map", "label_coarsen"]}, "map": {"type": "array", "items": _index,
                                                                       "minItems": 1},
              "name": {"type": "string"}}, ["type", "map"]),
        _obj({"type": {"const": "coin_split"}, "cell": _index, "name": {"type": "string"}}, ["type", "cell"]),
    ]
}

NOISE_SCHEMA = {
    "oneOf": [
        _obj({"type": {"enum": ["none", "source", "random_sparse"]}}, ["type"]),
        _obj({"type": {"const": "targeted_flip"}, "from": _index, "to": _index}, ["type", "from", "to"]),
    ]
}

_grid = {"type": "array", "items": _num, "minItems": 1}
_count_grid = {"type": "array", "items": _count, "minItems": 1}

PARAMS_SCHEMA = {
    "calibrate": _obj({"p_grid": {"type": "array", "items": _prob, "minItems": 1}}),
    "constant_partition": _obj({"target": {"oneOf": [{"const": "linear"},
                                                     {"type": "array", "items": _prob}]},
                                "pool_factor": _count}),
    "coarse_partition": _obj({"predictions_csv": {"type": "string"},
                              "coarse_members": {"type": "array", "items": {"type": "string"}},
                              "subclass": {"type": "array", "items": {"type": "string"}}}),
    "agree": _obj({"tasks": {"type": "array", "items": SOURCE_SCHEMA}, "alpha": _prob}),
    "lambda_sweep": _obj({"lambda_grid": _grid, "scale_by_n": {"type": "boolean"}}),
    "verify_nn": _obj({"n_values": _count_grid, "instances": _count,
                       "max_states": _count}),
    "student_teacher": _obj({"n_grid": _count_grid, "k_grid": _count_grid}),
    "pointwise": _obj({"ensemble_size": _count, "plurality_size": _count, "pairs": _index}),
}
PARAMS_SCHEMA["multi_feature"] = PARAMS_SCHEMA["coarse_partition"]

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "dg-bench experiment config",
    "type": "object",
    "properties": {
        "kind": {"enum": list(KINDS)},
        "seed": {"type": "integer", "minimum": 0},
        "source": SOURCE_SCHEMA,
        "families": {"type": "array", "items": FAMILY_SCHEMA, "minItems": 1},
        "noise": NOISE_SCHEMA,
        "partitions": {"type": "array", "items": PARTITION_SCHEMA, "minItems": 1},
        "n": _count,
        "trials": _count,
        "test_points": _count,
        "params": {"type": "object"},
        "output_dir": {"type": "string"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

# Required top-level fields and defaults per kind.
REQUIRED = {
    "calibrate": ("source", "families", "noise"),
    "constant_partition": ("source", "families"),
    "coarse_partition": ("source", "families", "partitions"),
    "multi_feature": ("source", "families", "partitions"),
    "agree": ("families",),
    "lambda_sweep": ("source", "families"),
    "verify_nn": ("source",),
    "student_teacher": ("source", "families"),
    "pointwise": ("source", "families"),
}

DEFAULTS = {
    "calibrate": {"n": 1000, "trials": 50, "test_points": 400,
                  "params": {"p_grid": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]}},
    "constant_partition": {"n": 1000, "trials": 50, "test_points": 1000,
                           "params": {"target": "linear", "pool_factor": 4}},
    "coarse_partition": {"n": 500, "trials": 200, "test_points": 100, "params": {}},
    "multi_feature": {"n": 500, "trials": 200, "test_points": 100, "params": {}},
    "agree": {"n": 400, "trials": 100, "test_points": 200, "params": {"alpha": 0.05}},
    "lambda_sweep": {"n": 500, "trials": 20, "test_points": 1000,
                     "params": {"lambda_grid": [0.0, 1e-3, 1e-2, 1e-1, 1.0], "scale_by_n": True}},
    "verify_nn": {"n": 1, "trials": 1, "test_points": 1,
                  "params": {"n_values": [1, 2, 3, 4, 5, 6], "instances": 1, "max_states": 10**7}},
    "student_teacher": {"n": 1, "trials": 10, "test_points": 2000,
                        "params": {"n_grid": [100, 200, 500, 1000, 2000],
                                   "k_grid": [100, 200, 500, 1000, 2000]}},
    "pointwise": {"n": 1000, "trials": 1, "test_points": 2000,
                  "params": {"ensemble_size": 100, "plurality_size": 25, "pairs": 0}},
}


def _path(error) -> str:
    parts = ["config"]
    for p in error.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else f".{p}")
    return "".join(parts)


def _discriminator_miss(error) -> bool:
    """True for a oneOf branch rejected only because its ``kind``/``type`` tag differs."""
    path = list(error.relative_path)
    return bool(path) and path[-1] in ("kind", "type") and error.validator in ("enum", "const")


def _validate(instance, schema, prefix=""):
    validator = jsonschema.Draft7Validator(schema)
    errors = sorted(validator.iter_errors(instance), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        # For oneOf failures report the most specific sub-error.
        while err.context:
            wrong = {e.relative_schema_path[0] for e in err.context if _discriminator_miss(e)}
            ctx = [e for e in err.context if e.relative_schema_path[0] not in wrong]
            if not ctx:
                tags = [e for e in err.context if _discriminator_miss(e)]
                allowed = sorted({v for e in tags for v in (e.validator_value if e.validator == "enum"
                                                            else [e.validator_value])})
                err = tags[0]
                err.message = f"{err.instance!r} is not one of {allowed}"
                break
            err = min(ctx, key=lambda e: (-len(e.absolute_path), e.message))
        path = _path(err)
        if prefix:
            path = prefix + path[len("config"):]
        raise ConfigError(path, err.message)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated config with per-kind defaults filled in (``data`` is the JSON form)."""

    data: dict

    @property
    def kind(self) -> str:
        return self.data["kind"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    @property
    def params(self) -> dict:
        return self.data["params"]

    def canonical_json(self) -> str:
        return canonical_json(self.data)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def validate_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config", "must be a JSON object")
    if "seed" not in raw:
        raise ConfigError("config.seed", "seed required")
    _validate(raw, CONFIG_SCHEMA)
    kind = raw["kind"]
    for key in REQUIRED[kind]:
        if key not in raw:
            raise ConfigError(f"config.{key}", f"required for kind {kind!r}")
    data = copy.deepcopy(raw)
    defaults = DEFAULTS[kind]
    for key in ("n", "trials", "test_points"):
        data.setdefault(key, defaults[key])
    params = dict(defaults["params"])
    params.update(data.get("params", {}))
    _validate(params, PARAMS_SCHEMA[kind], prefix="config.params")
    data["params"] = params
    data.pop("output_dir", None)
    _check_semantics(data)
    return ExperimentConfig(data)


def _check_semantics(data):
    kind = data["kind"]
    fams = data.get("families", [])
    if kind in ("lambda_sweep",):
        for i, f in enumerate(fams):
            if f["kind"] != "kernel":
                raise ConfigError(f"config.families[{i}].kind", "lambda_sweep needs a kernel family")
    if kind == "verify_nn" and data["source"]["type"] not in ("finite", "random_finite"):
        raise ConfigError("config.source.type", "verify_nn needs a finite or random_finite source")
    if data.get("source", {}).get("type") == "csv" and kind != "agree":
        raise ConfigError("config.source.type", "a csv source is a fixed dataset; only agree accepts it")
    noise = data.get("noise")
    if noise and noise["type"] == "targeted_flip" and noise["from"] == noise["to"]:
        raise ConfigError("config.noise.to", "flip target must differ from source class")
    try:
        if "source" in data:
            build_source(data["source"])
        for i, f in enumerate(fams):
            try:
                build_family(f, data.get("source"))
            except DGBenchError as exc:
                raise ConfigError(f"config.families[{i}]", str(exc)) from exc
    except ConfigError:
        raise
    except (DGBenchError, OSError) as exc:
        raise ConfigError("config.source", str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from exc
    return validate_config(raw)


# ------------------------------------------------------------------ builders


def tabular_task(task_seed: int) -> dist.ClusterMixture:
    """A random small tabular classification task (label noise dominates the overlap)."""
    r = np.random.default_rng(1000 + task_seed)
    K = int(r.integers(2, 6))
    d = int(r.integers(2, 7))
    per_class = int(r.integers(1, 3))
    return dist.gaussian_clusters(K * per_class, K, d, separation=float(r.uniform(3, 5)),
                                  label_noise=float(r.uniform(0.1, 0.4)), center_seed=task_seed)


def build_source(spec: dict):
    t = spec["type"]
    if t == "toy_four_cluster":
        return dist.toy_four_cluster(spec.get("separation", 10.0), spec.get("noise_p", 0.0),
                                     spec.get("spread", 1.0))
    if t == "two_cluster":
        return dist.two_cluster(spec.get("separation", 6.0), spec.get("noise_p", 0.0),
                                spec.get("d", 10), spec.get("spread", 1.0))
    if t == "gaussian_clusters":
        return dist.gaussian_clusters(spec["n_clusters"], spec["K"], spec["d"],
                                      spec.get("separation", 3.0), spec.get("spread", 1.0),
                                      spec.get("label_noise", 0.0), spec.get("center_seed", 0))
    if t == "tabular_task":
        return tabular_task(spec["task_seed"])
    if t == "finite":
        return dist.FiniteDomainDistribution(spec["probs"], spec["label_pmfs"],
                                             atom_features=spec["features"])
    if t == "random_finite":
        from dg_bench.nn_oracle import random_instance

        src, _ = random_instance(spec.get("instance_seed", 0), spec.get("n_atoms", 4), spec.get("K", 2),
                                 n_cells=spec.get("n_cells"))
        return src
    if t == "bimodal":
        return BimodalSource(spec.get("hard_fraction", 0.5), spec.get("K", 10), spec.get("n_atoms", 200))
    if t == "csv":
        return dist.load_csv(spec["path"])
    raise ConfigError("config.source.type", f"unknown source type {t!r}")


def with_noise(source_spec: dict, p: float):
    """The source with its built-in noise parameter replaced by ``p``."""
    if source_spec["type"] not in ("toy_four_cluster", "two_cluster"):
        raise ConfigError("config.noise.type", "source noise needs toy_four_cluster or two_cluster")
    return build_source(dict(source_spec, noise_p=p))


def source_flip_cell(source_spec: dict):
    """(cell, label) whose mass the source's noise parameter moves."""
    return (dist.TOY_CAT, 0) if source_spec["type"] == "toy_four_cluster" else (0, 1)


def build_family(spec: dict, source_spec: dict | None = None):
    if spec["kind"] == "bimodal":
        from dg_bench.bimodal import BimodalFamily

        if not source_spec or source_spec["type"] != "bimodal":
            raise ConfigError("config.families", "bimodal family needs a bimodal source")
        return BimodalFamily(build_source(source_spec))
    return ClassifierFamilySpec.from_dict(spec)


def build_partition(spec: dict, source) -> metrics.Partition:
    t = spec["type"]
    name = spec.get("name", "")
    if t == "constant":
        return metrics.Partition("constant", 1, name=name or "constant")
    if t == "cluster":
        return metrics.Partition("cluster", source.M, name=name or "cluster")
    if t == "clean_label":
        return metrics.Partition("clean_label", source.K, name=name or "clean_label")
    if t == "cell_map":
        return metrics.Partition("cell_map", max(spec["map"]) + 1, tuple(spec["map"]), name=name or "cell_map")
    if t == "label_coarsen":
        return metrics.Partition("label_coarsen", max(spec["map"]) + 1, tuple(spec["map"]),
                                 name=name or "label_coarsen")
    if t == "coin_split":
        return metrics.coin_split_partition(source.M, spec["cell"])
    raise ConfigError("config.partitions", f"unknown partition type {t!r}")


def schema_json() -> str:
    return json.dumps(CONFIG_SCHEMA, indent=2, sort_keys=True) + "\n"


def params_schema_json() -> str:
    return json.dumps(PARAMS_SCHEMA, indent=2, sort_keys=True) + "\n"
