import hashlib
import json
import os
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from dg_bench.errors import ConfigError, TheoremViolation
from dg_bench.experiments import cli, config, heatmap, report, runners
from dg_bench.metrics import DiscreteJoint

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = Path(__file__).parent / "fixtures"
DOGS = ["terrier_norfolk", "terrier_scottish", "retriever", "hound"]


def _run(cfg, tmp_path, name="out", workers=1):
    rep = cli.run_experiment(cfg, tmp_path / name, workers=workers)
    return rep, json.loads((tmp_path / name / "report.json").read_text())


class TestConfig:
    def test_seed_required(self):
        with pytest.raises(ConfigError, match="seed required") as exc:
            config.validate_config({"kind": "verify_nn", "source": {"type": "random_finite"}})
        assert exc.value.path == "config.seed"

    def test_unknown_kind_and_field(self):
        with pytest.raises(ConfigError) as exc:
            config.validate_config({"kind": "nope", "seed": 1})
        assert exc.value.path == "config.kind"
        with pytest.raises(ConfigError) as exc:
            config.validate_config({"kind": "verify_nn", "seed": 1, "source": {"type": "random_finite"},
                                    "colour": "blue"})
        assert "colour" in str(exc.value)

    def test_nested_field_path(self):
        raw = {"kind": "calibrate", "seed": 1, "source": {"type": "toy_four_cluster"},
               "families": [{"kind": "one_nn"}, {"kind": "kernel", "sigma": -1}], "noise": {"type": "source"}}
        with pytest.raises(ConfigError) as exc:
            config.validate_config(raw)
        assert exc.value.path == "config.families[1].sigma"

    def test_unknown_family_kind_lists_choices(self):
        raw = {"kind": "calibrate", "seed": 1, "source": {"type": "toy_four_cluster"},
               "families": [{"kind": "svm"}], "noise": {"type": "source"}}
        with pytest.raises(ConfigError, match="one_nn") as exc:
            config.validate_config(raw)
        assert exc.value.path == "config.families[0].kind"

    def test_kind_specific_required(self):
        with pytest.raises(ConfigError) as exc:
            config.validate_config({"kind": "calibrate", "seed": 1, "source": {"type": "toy_four_cluster"},
                                    "families": [{"kind": "one_nn"}]})
        assert exc.value.path == "config.noise"

    def test_params_validated(self):
        with pytest.raises(ConfigError) as exc:
            config.validate_config({"kind": "verify_nn", "seed": 1, "source": {"type": "random_finite"},
                                    "params": {"n_values": [0]}})
        assert exc.value.path.startswith("config.params.n_values")

    def test_hash_is_canonical(self):
        a = config.validate_config({"kind": "verify_nn", "seed": 3, "source": {"type": "random_finite", "K": 2}})
        b = config.validate_config({"source": {"K": 2, "type": "random_finite"}, "seed": 3, "kind": "verify_nn"})
        assert a.hash() == b.hash() == hashlib.sha256(a.canonical_json().encode()).hexdigest()

    def test_shipped_schema_is_current(self):
        assert (ROOT / "docs" / "config.schema.json").read_text() == config.schema_json()
        assert (ROOT / "docs" / "report.schema.json").read_text() == report.report_schema_json()


class TestHeatmap:
    def test_single_cell(self, tmp_path):
        h = heatmap.render_heatmap(DiscreteJoint(np.array([[1.0]])), ["c"], ["y"], tmp_path / "a.svg")
        text = (tmp_path / "a.svg").read_text()
        assert ">1.000<" in text and text.count("<rect") == 1
        assert h == hashlib.sha256((tmp_path / "a.svg").read_bytes()).hexdigest()

    def test_transposed_rejected(self, tmp_path):
        J = DiscreteJoint(np.array([[0.1, 0.2, 0.3], [0.2, 0.1, 0.1]]))
        with pytest.raises(Exception):
            heatmap.render_heatmap(DiscreteJoint(J.mass.T.copy()), ["a", "b"], ["x", "y", "z"], tmp_path / "t.svg")

    def test_deterministic(self, tmp_path):
        J = DiscreteJoint(np.array([[0.25, 0.25], [0.4, 0.1]]))
        h1 = heatmap.render_heatmap(J, ["a", "b"], ["x", "y"], tmp_path / "1.svg", "t")
        h2 = heatmap.render_heatmap(J, ["a", "b"], ["x", "y"], tmp_path / "2.svg", "t")
        assert h1 == h2


class TestReport:
    def test_round_trip_and_schema(self, tmp_path):
        cfg = {"kind": "verify_nn", "seed": 2, "source": {"type": "random_finite", "n_atoms": 4, "K": 2},
               "params": {"n_values": [1, 2, 3]}}
        rep, data = _run(cfg, tmp_path)
        jsonschema.validate(data, json.loads(report.report_schema_json()))
        back = report.ExperimentReport.from_json((tmp_path / "out" / "report.json").read_text())
        assert back.to_json() == rep.to_json()
        assert data["config_hash"] == config.validate_config(data["config"]).hash()
        for row in data["results"]["checks"]:
            assert row["tv"] <= row["eps"] + row["delta"] + 1e-9
        for f in ("tables/trials.csv", "tables/aggregate.csv", "run_meta.json"):
            assert (tmp_path / "out" / f).exists()

    def test_non_finite_rejected(self):
        with pytest.raises(Exception):
            report.dumps({"x": float("nan")})


class TestCli:
    def _write(self, tmp_path, obj):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(obj))
        return str(p)

    def test_success_and_seed_override(self, tmp_path):
        path = self._write(tmp_path, {"kind": "verify_nn", "source": {"type": "random_finite"},
                                      "params": {"n_values": [1, 2]}})
        assert cli.main(["verify_nn", "--config", path, "--out", str(tmp_path / "o"), "--seed", "9"]) == 0
        data = json.loads((tmp_path / "o" / "report.json").read_text())
        assert data["overrides"] == {"seed": 9} and data["config"]["seed"] == 9

    def test_config_seed_wins(self, tmp_path):
        path = self._write(tmp_path, {"kind": "verify_nn", "seed": 4, "source": {"type": "random_finite"},
                                      "params": {"n_values": [1]}})
        assert cli.main(["verify_nn", "--config", path, "--out", str(tmp_path / "o"), "--seed", "9"]) == 0
        data = json.loads((tmp_path / "o" / "report.json").read_text())
        assert data["overrides"] == {} and data["config"]["seed"] == 4

    def test_exit_codes(self, tmp_path, monkeypatch, capsys):
        bad = self._write(tmp_path, {"kind": "verify_nn", "source": {"type": "random_finite"}})
        assert cli.main(["verify_nn", "--config", bad, "--out", str(tmp_path / "o")]) == 2
        assert "seed required" in capsys.readouterr().err
        assert cli.main(["verify_nn", "--config", str(tmp_path / "missing.json"), "--out", "x"]) == 4
        good = self._write(tmp_path, {"kind": "verify_nn", "seed": 1, "source": {"type": "random_finite"},
                                      "params": {"n_values": [1]}})

        def boom(*a, **k):
            raise TheoremViolation("forced")

        monkeypatch.setitem(runners.RUNNERS, "verify_nn", boom)
        assert cli.main(["verify_nn", "--config", good, "--out", str(tmp_path / "o")]) == 3

    def test_kind_mismatch(self, tmp_path):
        path = self._write(tmp_path, {"kind": "verify_nn", "seed": 1, "source": {"type": "random_finite"}})
        assert cli.main(["agree", "--config", path, "--out", str(tmp_path / "o")]) == 2

    def test_unwritable_output(self, tmp_path):
        path = self._write(tmp_path, {"kind": "verify_nn", "seed": 1, "source": {"type": "random_finite"},
                                      "params": {"n_values": [1]}})
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert cli.main(["verify_nn", "--config", path, "--out", str(blocker / "sub")]) == 4


class TestRunners:
    def test_same_seed_byte_identical(self, tmp_path):
        cfg = {"kind": "pointwise", "seed": 5, "source": {"type": "toy_four_cluster", "noise_p": 0.3},
               "families": [{"kind": "one_nn"}], "n": 100, "test_points": 100,
               "params": {"ensemble_size": 5, "plurality_size": 5, "pairs": 2}}
        _run(cfg, tmp_path, "a")
        _run(cfg, tmp_path, "b")
        for f in ("report.json", "tables/trials.csv", "tables/aggregate.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_calibrate_no_noise(self, tmp_path):
        cfg = {"kind": "calibrate", "seed": 1, "source": {"type": "toy_four_cluster"},
               "families": [{"kind": "one_nn"}], "noise": {"type": "source"}, "n": 300, "trials": 5,
               "test_points": 200, "params": {"p_grid": [0.0, 0.8]}}
        _, data = _run(cfg, tmp_path)
        curve = data["results"]["curves"]["one_nn"]
        assert curve[0]["test_off_diagonal"] <= 0.03
        assert abs(curve[1]["flip_rate"] - 0.8) <= 0.08 and curve[1]["bayes"] == 1.0

    def test_targeted_flip_channel(self, tmp_path):
        cfg = {"kind": "calibrate", "seed": 2,
               "source": {"type": "gaussian_clusters", "n_clusters": 3, "K": 3, "d": 2, "separation": 12},
               "families": [{"kind": "one_nn"}], "noise": {"type": "targeted_flip", "from": 0, "to": 2},
               "n": 300, "trials": 10, "test_points": 300, "params": {"p_grid": [0.3]}}
        _, data = _run(cfg, tmp_path)
        assert abs(data["results"]["curves"]["one_nn"][0]["flip_rate"] - 0.3) <= 0.05

    def test_dog_subclass_fixture(self, tmp_path):
        cfg = {"kind": "coarse_partition", "seed": 1,
               "source": {"type": "gaussian_clusters", "n_clusters": 2, "K": 2, "d": 2},
               "families": [{"kind": "one_nn"}], "partitions": [{"type": "constant"}], "n": 20, "trials": 2,
               "test_points": 10,
               "params": {"predictions_csv": str(FIXTURES / "dog_subclass_predictions.csv"), "coarse_members": DOGS,
                          "subclass": DOGS[:2]}}
        _, data = _run(cfg, tmp_path)
        t = data["results"]["subclass_table"]
        assert t["rows_in_cell"] == 1000
        assert t["real_fraction"] == pytest.approx(0.224) and t["predicted_fraction"] == pytest.approx(0.209)

    def test_coarse_gap_small_for_weak_family(self, tmp_path):
        # Overlapping fine clusters: many fine-task errors, yet the label marginal (coarsest feature) holds.
        cfg = {"kind": "multi_feature", "seed": 3,
               "source": {"type": "gaussian_clusters", "n_clusters": 4, "K": 4, "d": 2, "separation": 2.0,
                          "center_seed": 1},
               "families": [{"kind": "k_nn", "k": 50}],
               "partitions": [{"type": "cluster"}, {"type": "constant"}], "n": 400, "trials": 20,
               "test_points": 100}
        _, data = _run(cfg, tmp_path)
        fam = data["results"]["families"]["k_nn(k=50)"]
        assert fam["test_error"] > 0.2
        assert fam["partitions"]["constant"]["gap"] < 0.1

    def test_single_cell_coarsening_is_marginal_check(self, tmp_path):
        cfg = {"kind": "coarse_partition", "seed": 4,
               "source": {"type": "gaussian_clusters", "n_clusters": 3, "K": 3, "d": 2, "separation": 3},
               "families": [{"kind": "one_nn"}],
               "partitions": [{"type": "cell_map", "map": [0, 0, 0]}, {"type": "constant"}],
               "n": 200, "trials": 5, "test_points": 100}
        _, data = _run(cfg, tmp_path)
        parts = data["results"]["families"]["one_nn"]["partitions"]
        assert parts["cell_map"]["gap"] == parts["constant"]["gap"]
        model = np.array(parts["constant"]["joint_model"])[0]
        true = np.array(parts["constant"]["joint_true"])[0]
        assert parts["constant"]["gap"] == pytest.approx(0.5 * np.abs(model - true).sum())

    def test_lambda_zero_interpolates(self, tmp_path):
        cfg = {"kind": "lambda_sweep", "seed": 6,
               "source": {"type": "two_cluster", "separation": 6, "noise_p": 0.3, "d": 10},
               "families": [{"kind": "kernel", "sigma": 0.5}], "n": 200, "trials": 3, "test_points": 200,
               "params": {"lambda_grid": [0.0, 0.1]}}
        _, data = _run(cfg, tmp_path)
        row = data["results"]["families"]["rbf(sigma=0.5,lambda=0)"]["grid"][0]
        assert row["train_error"] == 0.0
        train = np.array(row["train_joint"])
        # interpolation: the train joint is the empirical noisy joint, so cluster 0 carries ~0.3 of its mass on label 1
        assert abs(train[0, 1] / train[0].sum() - 0.3) < 0.06

    def test_student_with_perfect_teacher_matches_control(self, tmp_path):
        cfg = {"kind": "student_teacher", "seed": 7,
               "source": {"type": "two_cluster", "separation": 40, "noise_p": 0.0, "d": 2},
               "families": [{"kind": "one_nn"}], "trials": 2, "test_points": 200,
               "params": {"n_grid": [50, 100], "k_grid": [20, 40]}}
        _, data = _run(cfg, tmp_path)
        assert all(c["abs_diff"] == 0.0 for c in data["results"]["cells"])

    def test_constant_partition_uniform_target_is_noop(self):
        from dg_bench.distributions import rebalance, toy_four_cluster

        data = toy_four_cluster(3.0, 0.0).sample(400, 1)
        counts = np.bincount(data.labels)
        out = rebalance(data, counts / counts.sum(), 2)
        assert out.n == data.n

    def test_pointwise_rejects_empty_ensemble(self, tmp_path):
        cfg = {"kind": "pointwise", "seed": 1, "source": {"type": "toy_four_cluster"},
               "families": [{"kind": "one_nn"}], "params": {"ensemble_size": 0}}
        with pytest.raises(ConfigError):
            config.validate_config(cfg)

    def test_verify_nn_finite_source(self, tmp_path):
        cfg = {"kind": "verify_nn", "seed": 1,
               "source": {"type": "finite", "probs": [0.1, 0.2, 0.3, 0.4],
                          "label_pmfs": [[1, 0], [0.5, 0.5], [0.3, 0.7], [0, 1]],
                          "features": [[0], [1], [3], [7]]},
               "params": {"n_values": [1, 2, 3, 4]}}
        _, data = _run(cfg, tmp_path)
        assert data["aggregates"][0]["feature_calibration_holds"]
        assert data["aggregates"][0]["agreement_holds"]


def test_console_script_declared():
    text = (ROOT / "pyproject.toml").read_text()
    assert 'dg-bench = "dg_bench.experiments.cli:main"' in text
    assert os.path.exists(ROOT / "docs" / "config.schema.json")
