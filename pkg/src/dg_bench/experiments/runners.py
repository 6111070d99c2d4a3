"""Per-kind experiment runners.

Each runner takes a validated config and returns a :class:`Section`: report
entries, one record per trial, aggregate rows and figures to draw. Trials are
seeded from ``(master seed, purpose tag, trial index)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from dg_bench import distributions as dist
from dg_bench.classifiers import (
    ClassifierFamilySpec,
    argmax_smallest,
    ensemble_predict_pmf,
    plurality_ensemble,
)
from dg_bench.errors import ConfigError
from dg_bench.experiments import config as cfgmod
from dg_bench.metrics import (
    DiscreteJoint,
    agreement_rate,
    bootstrap_tv_ci,
    clopper_pearson,
    joint_counts,
    pointwise_agreement_M,
    pointwise_density_H,
    tv_distance,
    tv_pmf,
)
from dg_bench.noise import apply_channel, random_sparse_channel, targeted_flip
from dg_bench.seeding import run_trials, trial_rng


@dataclass
class Figure:
    name: str
    values: np.ndarray
    rows: list
    cols: list
    title: str = ""


@dataclass
class Section:
    results: dict = field(default_factory=dict)
    trials: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    figures: list = field(default_factory=list)


def _family_name(spec: dict) -> str:
    if spec["kind"] == "bimodal":
        return "bimodal"
    return ClassifierFamilySpec.from_dict(spec).name


def _names(prefix, n):
    return [f"{prefix}{i}" for i in range(n)]


def _cell_names(source, M):
    names = getattr(source, "cluster_names", ())
    return list(names) if len(names) == M else _names("c", M)


def _label_names(source, K):
    names = getattr(source, "label_names", ())
    return list(names) if len(names) == K else _names("y", K)


def _joint(counts) -> DiscreteJoint:
    return DiscreteJoint.from_counts(counts)


def _bayes_flip(p: float, cell_label: int, flip_label: int) -> float:
    """Bayes decision on the flipped cell: does argmax p(y|cell) pick the flip label?"""
    pmf = np.zeros(max(cell_label, flip_label) + 1)
    pmf[cell_label] = 1.0 - p
    pmf[flip_label] = p
    return float(argmax_smallest(pmf[None, :])[0] == flip_label)


# ----------------------------------------------------------------- calibrate


def _calibrate_trial(family, source, channel, n, t, cell_of, index, rng):
    S = source.sample(n, rng)
    if channel is not None:
        S = apply_channel(S, channel, rng)
    model = family.train(S, rng)
    T = source.sample(t, rng)
    K = source.K
    M = K if cell_of == "clean" else source.M
    cells_S = S.clean_labels if cell_of == "clean" else S.partition_cells
    cells_T = T.clean_labels if cell_of == "clean" else T.partition_cells
    return (joint_counts(cells_S, S.labels, M, K),
            joint_counts(cells_T, model.predict(T.features, rng), M, K))


def calibrate_runner(cfg, workers=1) -> Section:
    """Test-time flip rate versus train-time noise level, per family."""
    sec = Section()
    noise = cfg["noise"]
    src_spec = cfg["source"]
    seed, n, trials, t = cfg.seed, cfg["n"], cfg["trials"], cfg["test_points"]
    if noise["type"] == "random_sparse":
        return _calibrate_random_sparse(cfg, workers)
    if noise["type"] == "source":
        cell, flip = cfgmod.source_flip_cell(src_spec)
        cell_of = "cluster"
    elif noise["type"] == "targeted_flip":
        cell, flip = noise["from"], noise["to"]
        cell_of = "clean"
    else:
        raise ConfigError("config.noise.type", "calibrate needs source, targeted_flip or random_sparse noise")
    curves = {}
    for fi, fspec in enumerate(cfg["families"]):
        family = cfgmod.build_family(fspec, src_spec)
        fname = _family_name(fspec)
        curve = []
        for pi, p in enumerate(cfg.params["p_grid"]):
            if noise["type"] == "source":
                source, channel = cfgmod.with_noise(src_spec, p), None
            else:
                source = cfgmod.build_source(src_spec)
                channel = targeted_flip(source.K, cell, flip, p)
            recs = run_trials(partial(_calibrate_trial, family, source, channel, n, t, cell_of),
                              trials, seed, f"calibrate/{fi}/{pi}", workers)
            train_c = np.sum([r[0] for r in recs], axis=0)
            test_c = np.sum([r[1] for r in recs], axis=0)
            for i, r in enumerate(recs):
                row = r[1][cell]
                sec.trials.append({"family": fname, "p": p, "trial": i,
                                   "cell_total": int(row.sum()), "flipped": int(row[flip])})
            ci = clopper_pearson(int(test_c[cell, flip]), int(test_c[cell].sum()))
            train_rate = float(train_c[cell, flip] / train_c[cell].sum())
            jt, jm = _joint(train_c), _joint(test_c)
            clean = _clean_labels(src_spec, source, jm.M, cell_of)
            off = float(jm.mass.sum() - jm.mass[np.arange(jm.M), clean].sum())
            point = {"p": p, "flip_rate": ci.point, "ci_lower": ci.lower, "ci_upper": ci.upper,
                     "train_flip_rate": train_rate, "bayes": _bayes_flip(p, int(clean[cell]), flip),
                     "diagonal": p, "train_test_tv": tv_distance(jt, jm), "test_off_diagonal": off}
            curve.append(point)
            sec.aggregates.append({"section": "calibrate", "family": fname, **point})
            cn = _cell_names(source, jt.M) if cell_of == "cluster" else _label_names(source, jt.M)
            ln = _label_names(source, jt.K)
            sec.figures.append(Figure(f"calibrate_{fi}_p{pi}_train", jt.mass, cn, ln, f"{fname} train p={p:g}"))
            sec.figures.append(Figure(f"calibrate_{fi}_p{pi}_test", jm.mass, cn, ln, f"{fname} test p={p:g}"))
        curves[fname] = curve
    sec.results = {"flip_cell": cell, "flip_label": flip, "curves": curves}
    return sec


def _clean_labels(src_spec, source, M, cell_of) -> np.ndarray:
    """Noise-free label of each cell: the cell itself for clean-label cells, else the
    cluster's majority label at zero source noise."""
    if cell_of == "clean":
        return np.arange(M)
    clean = cfgmod.with_noise(src_spec, 0.0)
    out = np.zeros(M, dtype=np.int64)
    for comp, cid in enumerate(clean.cluster_ids):
        out[cid] = int(np.argmax(clean.label_pmfs[comp]))
    return out


def _calibrate_random_sparse(cfg, workers) -> Section:
    sec = Section()
    source = cfgmod.build_source(cfg["source"])
    channel = random_sparse_channel(source.K, trial_rng(cfg.seed, "channel", 0))
    n, trials, t = cfg["n"], cfg["trials"], cfg["test_points"]
    out = {"channel": channel.cond.tolist()}
    for fi, fspec in enumerate(cfg["families"]):
        family = cfgmod.build_family(fspec, cfg["source"])
        fname = _family_name(fspec)
        recs = run_trials(partial(_calibrate_trial, family, source, channel, n, t, "clean"),
                          trials, cfg.seed, f"calibrate-sparse/{fi}", workers)
        jt = _joint(np.sum([r[0] for r in recs], axis=0))
        jm = _joint(np.sum([r[1] for r in recs], axis=0))
        tv = tv_distance(jt, jm)
        out[fname] = {"train_joint": jt.to_list(), "test_joint": jm.to_list(), "train_test_tv": tv}
        for i, r in enumerate(recs):
            sec.trials.append({"family": fname, "trial": i, "test_correct": int(np.trace(r[1])),
                               "test_total": int(r[1].sum())})
        sec.aggregates.append({"section": "calibrate_random_sparse", "family": fname, "train_test_tv": tv})
        names = _label_names(source, source.K)
        sec.figures.append(Figure(f"calibrate_sparse_{fi}_train", jt.mass, names, names, f"{fname} train"))
        sec.figures.append(Figure(f"calibrate_sparse_{fi}_test", jm.mass, names, names, f"{fname} test"))
    sec.results = out
    return sec


# ----------------------------------------------------------------- constant partition


def _constant_trial(family, source, target, n, t, pool_factor, index, rng):
    S = dist.rebalance(source.sample(pool_factor * n, rng), target, rng, total=n)
    T = dist.rebalance(source.sample(pool_factor * t, rng), target, rng, total=t)
    model = family.train(S, rng)
    K = source.K
    return (np.bincount(S.labels, minlength=K), np.bincount(model.predict(T.features, rng), minlength=K),
            np.bincount(T.labels, minlength=K))


def constant_partition_runner(cfg, workers=1) -> Section:
    """Output label marginal versus train marginal under class imbalance."""
    sec = Section()
    source = cfgmod.build_source(cfg["source"])
    target = cfg.params["target"]
    target = dist.linear_marginal(source.K) if target == "linear" else np.asarray(target, float)
    out = {"target": list(map(float, target)), "families": {}}
    for fi, fspec in enumerate(cfg["families"]):
        family = cfgmod.build_family(fspec, cfg["source"])
        fname = _family_name(fspec)
        recs = run_trials(partial(_constant_trial, family, source, target, cfg["n"], cfg["test_points"],
                                  cfg.params["pool_factor"]), cfg["trials"], cfg.seed, f"constant/{fi}", workers)
        tr = np.sum([r[0] for r in recs], axis=0)
        pr = np.sum([r[1] for r in recs], axis=0)
        te = np.sum([r[2] for r in recs], axis=0)
        res = {"train_marginal": (tr / tr.sum()).tolist(), "output_marginal": (pr / pr.sum()).tolist(),
               "test_marginal": (te / te.sum()).tolist(),
               "output_vs_train_tv": tv_pmf(pr / pr.sum(), tr / tr.sum())}
        out["families"][fname] = res
        for i, r in enumerate(recs):
            sec.trials.append({"family": fname, "trial": i,
                               "output_vs_train_tv": tv_pmf(r[1] / r[1].sum(), r[0] / r[0].sum())})
        sec.aggregates.append({"section": "constant_partition", "family": fname,
                               "output_vs_train_tv": res["output_vs_train_tv"]})
        names = _label_names(source, source.K)
        sec.figures.append(Figure(f"constant_{fi}_marginals",
                                  np.vstack([tr / tr.sum(), pr / pr.sum()]), ["train", "output"], names,
                                  f"{fname} label marginals"))
    sec.results = out
    return sec


# ----------------------------------------------------------------- coarse / multi


def _multi_trial(family, source, partitions, n, t, index, rng):
    S = source.sample(n, rng)
    model = family.train(S, rng)
    T = source.sample(t, rng)
    pred = model.predict(T.features, rng)
    out = []
    for L in partitions:
        cells = L.cells(T)
        out.append((joint_counts(cells, T.labels, L.M, T.K), joint_counts(cells, pred, L.M, T.K)))
    return out, int(np.sum(pred != T.labels))


def subclass_fractions(true_labels, pred_labels, coarse_members, subclass) -> dict:
    """Among points whose true label is in the coarse cell: fraction truly in
    ``subclass`` and fraction predicted in ``subclass``."""
    members, sub = set(coarse_members), set(subclass)
    in_cell = [i for i, y in enumerate(true_labels) if y in members]
    if not in_cell:
        raise ConfigError("config.params.coarse_members", "no rows fall in the coarse cell")
    real = sum(true_labels[i] in sub for i in in_cell) / len(in_cell)
    pred = sum(pred_labels[i] in sub for i in in_cell) / len(in_cell)
    return {"rows_in_cell": len(in_cell), "real_fraction": real, "predicted_fraction": pred}


def read_predictions_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "true_label" not in rows[0] or "pred_label" not in rows[0]:
        raise ConfigError("config.params.predictions_csv", "needs true_label and pred_label columns")
    return [r["true_label"] for r in rows], [r["pred_label"] for r in rows]


def coarse_and_multi_runner(cfg, workers=1) -> Section:
    """Calibration gaps for several partitions from one trained model per trial."""
    sec = Section()
    source = cfgmod.build_source(cfg["source"])
    parts = [cfgmod.build_partition(p, source) for p in cfg["partitions"]]
    out = {"families": {}}
    for fi, fspec in enumerate(cfg["families"]):
        family = cfgmod.build_family(fspec, cfg["source"])
        fname = _family_name(fspec)
        recs = run_trials(partial(_multi_trial, family, source, parts, cfg["n"], cfg["test_points"]),
                          cfg["trials"], cfg.seed, f"multi/{fi}", workers)
        err = sum(r[1] for r in recs) / (cfg["trials"] * cfg["test_points"])
        fam = {"test_error": err, "partitions": {}}
        for li, L in enumerate(parts):
            ct = np.stack([r[0][li][0] for r in recs])
            cm = np.stack([r[0][li][1] for r in recs])
            jt, jm = _joint(ct.sum(axis=0)), _joint(cm.sum(axis=0))
            gap = tv_distance(jt, jm)
            lo, hi = bootstrap_tv_ci(ct, cm, trial_rng(cfg.seed, f"multi-boot/{fi}/{li}", 0))
            fam["partitions"][L.label] = {"gap": gap, "gap_ci": [lo, hi], "joint_true": jt.to_list(),
                                          "joint_model": jm.to_list()}
            sec.aggregates.append({"section": "multi", "family": fname, "partition": L.label, "gap": gap,
                                   "ci_lower": lo, "ci_upper": hi, "test_error": err})
            names = _label_names(source, source.K)
            sec.figures.append(Figure(f"multi_{fi}_{li}_true", jt.mass, _names("L", L.M), names,
                                      f"{L.label}: (L(x), y)"))
            sec.figures.append(Figure(f"multi_{fi}_{li}_model", jm.mass, _names("L", L.M), names,
                                      f"{fname} {L.label}: (L(x), f(x))"))
        for i, r in enumerate(recs):
            sec.trials.append({"family": fname, "trial": i, "test_errors": r[1]})
        out["families"][fname] = fam
    if "predictions_csv" in cfg.params:
        y, yhat = read_predictions_csv(cfg.params["predictions_csv"])
        out["subclass_table"] = subclass_fractions(y, yhat, cfg.params.get("coarse_members", []),
                                                   cfg.params.get("subclass", []))
    sec.results = out
    return sec


# ----------------------------------------------------------------- agreement


def agree_runner(cfg, workers=1) -> Section:
    """Accuracy versus two-model agreement over a list of tasks."""
    sec = Section()
    tasks = list(cfg.params.get("tasks", []))
    if "source" in cfg.data:
        tasks = [cfg["source"]] + tasks
    if not tasks:
        raise ConfigError("config.params.tasks", "agree needs a source or a task list")
    alpha = cfg.params["alpha"]
    out = {"tasks": []}
    for ti, tspec in enumerate(tasks):
        source = cfgmod.build_source(tspec)
        for fi, fspec in enumerate(cfg["families"]):
            family = cfgmod.build_family(fspec, tspec)
            fname = _family_name(fspec)
            res = agreement_rate(family, source, cfg["n"], cfg["trials"], cfg["test_points"],
                                 trial_rng(cfg.seed, f"agree/{ti}/{fi}", 0).integers(2**63),
                                 workers=workers, alpha=alpha)
            per_trial = res.accuracy.n // cfg["trials"]
            # Per-task intervals sized by one trial's test set.
            acc_t = clopper_pearson(int(round(res.accuracy.point * per_trial)), per_trial, alpha)
            agr_t = clopper_pearson(int(round(res.agreement.point * per_trial)), per_trial, alpha)
            row = {"task": ti, "source": tspec["type"], "family": fname,
                   "accuracy": res.accuracy.point, "agreement": res.agreement.point, "gap": res.gap,
                   "accuracy_ci": [acc_t.lower, acc_t.upper], "agreement_ci": [agr_t.lower, agr_t.upper],
                   "intervals_overlap": acc_t.overlaps(agr_t),
                   "pooled_accuracy_ci": [res.accuracy.lower, res.accuracy.upper],
                   "pooled_agreement_ci": [res.agreement.lower, res.agreement.upper],
                   "test_points_per_trial": per_trial}
            out["tasks"].append(row)
            sec.aggregates.append({"section": "agree", **{k: v for k, v in row.items() if not isinstance(v, list)},
                                   "accuracy_ci_lower": acc_t.lower, "accuracy_ci_upper": acc_t.upper,
                                   "agreement_ci_lower": agr_t.lower, "agreement_ci_upper": agr_t.upper})
            sec.trials.append({"task": ti, "family": fname, "correct": res.accuracy.successes,
                               "agree": res.agreement.successes, "total": res.accuracy.n})
    good = [r for r in out["tasks"] if r["gap"] <= 0.05 and r["intervals_overlap"]]
    out["tasks_within_0.05_and_overlapping"] = len(good)
    sec.results = out
    return sec


# ----------------------------------------------------------------- lambda sweep


def _sweep_trial(family_specs, source, n, t, index, rng):
    S = source.sample(n, rng)
    T = source.sample(t, rng)
    K = source.K
    cells_S = S.partition_cells if S.partition_cells is not None else S.clean_labels
    cells_T = T.partition_cells if T.partition_cells is not None else T.clean_labels
    M = max(int(cells_S.max()), int(cells_T.max()), K - 1) + 1
    out = []
    for spec in family_specs:
        model = spec.train(S, rng)
        pS = model.predict(S.features, rng)
        out.append((joint_counts(cells_S, pS, M, K), joint_counts(cells_T, model.predict(T.features, rng), M, K),
                    int(np.sum(pS != S.labels))))
    return out


def lambda_sweep_runner(cfg, workers=1) -> Section:
    """Train/test joints of kernel regression over a ridge grid, same data per trial."""
    sec = Section()
    source = cfgmod.build_source(cfg["source"])
    n = cfg["n"]
    scale = n if cfg.params["scale_by_n"] else 1.0
    out = {"families": {}}
    for fi, fspec in enumerate(cfg["families"]):
        base = ClassifierFamilySpec.from_dict(fspec)
        grid = [float(g) for g in cfg.params["lambda_grid"]]
        specs = [ClassifierFamilySpec("kernel", kernel_kind=base.kernel_kind, sigma=base.sigma, lam=g * scale)
                 for g in grid]
        recs = run_trials(partial(_sweep_trial, specs, source, n, cfg["test_points"]),
                          cfg["trials"], cfg.seed, f"sweep/{fi}", workers)
        rows = []
        for li, g in enumerate(grid):
            jt = _joint(np.sum([r[li][0] for r in recs], axis=0))
            jm = _joint(np.sum([r[li][1] for r in recs], axis=0))
            train_err = sum(r[li][2] for r in recs) / (n * cfg["trials"])
            off = float(jm.mass.sum() - np.trace(jm.mass[:, :jm.K]))
            off_train = float(jt.mass.sum() - np.trace(jt.mass[:, :jt.K]))
            row = {"lambda_relative": g, "lambda": g * scale, "train_error": train_err,
                   "train_test_tv": tv_distance(jt, jm), "test_off_diagonal": off,
                   "train_off_diagonal": off_train, "train_joint": jt.to_list(), "test_joint": jm.to_list()}
            rows.append(row)
            sec.aggregates.append({"section": "lambda_sweep", "family": base.name,
                                   **{k: v for k, v in row.items() if not isinstance(v, list)}})
            names = _label_names(source, jt.K)
            sec.figures.append(Figure(f"sweep_{fi}_l{li}_train", jt.mass, _cell_names(source, jt.M), names,
                                      f"train, lambda={g * scale:g}"))
            sec.figures.append(Figure(f"sweep_{fi}_l{li}_test", jm.mass, _cell_names(source, jm.M), names,
                                      f"test, lambda={g * scale:g}"))
        for i, r in enumerate(recs):
            for li, g in enumerate(grid):
                sec.trials.append({"family": base.name, "trial": i, "lambda_relative": g,
                                   "train_errors": r[li][2]})
        offs = [r["test_off_diagonal"] for r in rows]
        out["families"][base.name] = {"grid": rows,
                                      "off_diagonal_inversions": int(sum(b > a for a, b in zip(offs, offs[1:])))}
    sec.results = out
    return sec


# ----------------------------------------------------------------- verify_nn


def verify_nn_runner(cfg, workers=1) -> Section:
    """Exact bound checks for 1-NN on finite sources (raises on violation)."""
    from dg_bench import nn_oracle
    from dg_bench.metrics import atom_map_partition

    sec = Section()
    spec = cfg["source"]
    budget = nn_oracle.EnumerationBudget(max_states=cfg.params["max_states"])
    instances = cfg.params["instances"] if spec["type"] == "random_finite" else 1
    rows = []
    for inst in range(instances):
        if spec["type"] == "random_finite":
            inst_rng = spec.get("instance_seed", 0) if instances == 1 else trial_rng(cfg.seed, "verify-instance", inst)
            source, L = nn_oracle.random_instance(inst_rng, spec.get("n_atoms", 4), spec.get("K", 2),
                                                  n_cells=spec.get("n_cells"))
        else:
            source = cfgmod.build_source(spec)
            L = atom_map_partition(range(source.n_atoms))
        if "partitions" in cfg.data:
            L = cfgmod.build_partition(cfg["partitions"][0], source)
        for n in cfg.params["n_values"]:
            fc = nn_oracle.exact_feature_calibration_tv(source, n, L, budget)
            ag = nn_oracle.exact_agreement_vs_accuracy(source, n, budget)
            row = {"instance": inst, "n": n, "tv": fc.tv, "eps": fc.eps, "delta": fc.delta,
                   "bound_holds": fc.tv <= fc.eps + fc.delta + nn_oracle.THEOREM_TOL,
                   "accuracy": ag.accuracy, "agreement": ag.agreement, "agreement_gap": ag.gap,
                   "coupling_delta": ag.delta,
                   "agreement_bound_holds": ag.gap <= ag.delta + nn_oracle.THEOREM_TOL}
            rows.append(row)
            sec.trials.append(row)
    sec.aggregates.append({"section": "verify_nn", "checks": len(rows),
                           "feature_calibration_holds": all(r["bound_holds"] for r in rows),
                           "agreement_holds": all(r["agreement_bound_holds"] for r in rows)})
    sec.results = {"checks": rows}
    return sec


# ----------------------------------------------------------------- student / teacher


def _student_trial(family, source, n_grid, k_grid, t, index, rng):
    T = source.sample(t, rng)
    pools = {k: source.sample(k, rng) for k in k_grid}
    control = {k: float(np.mean(family.train(pools[k], rng).predict(T.features, rng) != T.labels))
               for k in k_grid}
    E, teacher_err = {}, {}
    for n in n_grid:
        teacher = family.train(source.sample(n, rng), rng)
        teacher_err[n] = float(np.mean(teacher.predict(T.features, rng) != T.labels))
        for k in k_grid:
            pseudo = pools[k].relabel(teacher.predict(pools[k].features, rng))
            E[(n, k)] = float(np.mean(family.train(pseudo, rng).predict(T.features, rng) != T.labels))
    return control, E, teacher_err


def student_teacher_runner(cfg, workers=1) -> Section:
    """Error grid of students trained on teacher pseudo-labels, with a real-label control.

    The control for each ``k`` trains on the same ``k`` points with their real labels.
    """
    sec = Section()
    source = cfgmod.build_source(cfg["source"])
    fspec = cfg["families"][0]
    family = cfgmod.build_family(fspec, cfg["source"])
    n_grid, k_grid = cfg.params["n_grid"], cfg.params["k_grid"]
    recs = run_trials(partial(_student_trial, family, source, n_grid, k_grid, cfg["test_points"]),
                      cfg["trials"], cfg.seed, "student", workers)
    T = len(recs)
    control = {k: sum(r[0][k] for r in recs) / T for k in k_grid}
    E = {(n, k): sum(r[1][(n, k)] for r in recs) / T for n in n_grid for k in k_grid}
    teacher = {n: sum(r[2][n] for r in recs) / T for n in n_grid}
    cells = []
    for n in n_grid:
        for k in k_grid:
            diffs = np.array([r[1][(n, k)] - r[0][k] for r in recs])
            se = float(diffs.std(ddof=1) / np.sqrt(T)) if T > 1 else 0.0
            cell = {"n": n, "k": k, "error": E[(n, k)], "control_error": control[k],
                    "abs_diff": abs(E[(n, k)] - control[k]), "diff_se": se, "k_le_half_n": k <= n / 2}
            cells.append(cell)
            sec.aggregates.append({"section": "student_teacher", **cell})
    for i, r in enumerate(recs):
        for k in k_grid:
            sec.trials.append({"trial": i, "n": "inf", "k": k, "error": r[0][k]})
        for (n, k), e in sorted(r[1].items()):
            sec.trials.append({"trial": i, "n": n, "k": k, "error": e})
    grid = np.array([[E[(n, k)] for k in k_grid] for n in n_grid] + [[control[k] for k in k_grid]])
    sec.figures.append(Figure("student_teacher_grid", grid, [str(n) for n in n_grid] + ["inf"],
                              [str(k) for k in k_grid], f"{_family_name(fspec)} student error E(n, k)"))
    sec.results = {"family": _family_name(fspec), "cells": cells, "teacher_error": {str(n): e for n, e in teacher.items()},
                   "control_error": {str(k): e for k, e in control.items()},
                   "max_abs_diff_k_le_half_n": max((c["abs_diff"] for c in cells if c["k_le_half_n"]), default=0.0)}
    return sec


# ----------------------------------------------------------------- pointwise


def _member_trial(family, source, n, index, rng):
    return family.train(source.sample(n, rng), rng)


def true_conditional(source, T) -> np.ndarray:
    if hasattr(source, "conditional_pmf"):
        return source.conditional_pmf(T.features)
    if hasattr(source, "label_pmfs") and T.partition_cells is not None:
        return source.label_pmfs[T.partition_cells]
    raise ConfigError("config.source", "pointwise needs a source with a known p(y|x)")


def pointwise_runner(cfg, workers=1) -> Section:
    """Ensemble vote distributions versus p(y|x), and plurality-vote Bayes reversion."""
    sec = Section()
    src_spec = cfg["source"]
    source = cfgmod.build_source(src_spec)
    fspec = cfg["families"][0]
    family = cfgmod.build_family(fspec, src_spec)
    size = cfg.params["ensemble_size"]
    pairs = cfg.params["pairs"]
    members = run_trials(partial(_member_trial, family, source, cfg["n"]), size + 2 * pairs,
                         cfg.seed, "ensemble", workers)
    ensemble, pair_models = members[:size], members[size:]
    T = source.sample(cfg["test_points"], trial_rng(cfg.seed, "pointwise-test", 0))
    vote_rng = trial_rng(cfg.seed, "pointwise-votes", 0)
    pmfs = true_conditional(source, T)
    H, meanH = pointwise_density_H(ensemble, T.features, pmfs, vote_rng)
    hist, edges = np.histogram(H, bins=20, range=(0.0, 1.0))
    out = {"mean_H": meanH, "H_histogram": hist.tolist(), "H_bin_edges": edges.tolist()}
    if src_spec["type"] in ("toy_four_cluster", "two_cluster"):
        cell, flip = cfgmod.source_flip_cell(src_spec)
        in_cell = T.partition_cells == cell
        single = [float(np.mean(m.predict(T.features[in_cell], vote_rng) == flip)) for m in ensemble]
        k = min(cfg.params["plurality_size"], size)
        plural = float(np.mean(plurality_ensemble(ensemble[:k], T.features[in_cell], vote_rng) == flip))
        single_mean = float(np.mean(single))
        out["plurality"] = {"cell": cell, "flip_label": flip, "members": k,
                            "single_model_flip_mass": single_mean, "plurality_flip_mass": plural,
                            "removed_fraction": 1.0 - plural / single_mean if single_mean > 0 else None}
        for i, s in enumerate(single):
            sec.trials.append({"member": i, "flip_mass": s})
        sec.aggregates.append({"section": "plurality", "single_model_flip_mass": single_mean,
                               "plurality_flip_mass": plural, "members": k})
    if pairs:
        pm = pointwise_agreement_M(list(zip(pair_models[0::2], pair_models[1::2])), T, vote_rng)
        out["pointwise_agreement"] = {"mean_M": pm.mean, "mean_abs_M": pm.mean_abs, "pairs": pairs}
        sec.aggregates.append({"section": "pointwise_agreement", "mean_M": pm.mean, "mean_abs_M": pm.mean_abs})
    sec.aggregates.append({"section": "pointwise_density", "mean_H": meanH, "ensemble_size": size})
    votes = ensemble_predict_pmf(ensemble, T.features, vote_rng)
    if T.partition_cells is not None:
        M = int(T.partition_cells.max()) + 1
        ens_joint = np.zeros((M, T.K))
        np.add.at(ens_joint, T.partition_cells, votes)
        sec.figures.append(Figure("pointwise_ensemble_joint", ens_joint / ens_joint.sum(),
                                  _cell_names(source, M), _label_names(source, T.K), "ensemble votes by cell"))
    sec.figures.append(Figure("pointwise_H_histogram", (hist / hist.sum())[None, :], ["H"],
                              [f"{e:.2f}" for e in edges[:-1]], "H(x) histogram"))
    sec.results = out
    return sec


RUNNERS = {
    "calibrate": calibrate_runner,
    "constant_partition": constant_partition_runner,
    "coarse_partition": coarse_and_multi_runner,
    "multi_feature": coarse_and_multi_runner,
    "agree": agree_runner,
    "lambda_sweep": lambda_sweep_runner,
    "verify_nn": verify_nn_runner,
    "student_teacher": student_teacher_runner,
    "pointwise": pointwise_runner,
}
