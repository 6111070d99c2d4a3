"""Experiment runners, configs, reports and the ``dg-bench`` CLI."""
from dg_bench.experiments.cli import main, run_experiment
from dg_bench.experiments.config import ExperimentConfig, load_config, validate_config
from dg_bench.experiments.heatmap import heatmap_svg, render_heatmap
from dg_bench.experiments.report import ExperimentReport

__all__ = ["ExperimentConfig", "ExperimentReport", "heatmap_svg", "load_config", "main",
           "render_heatmap", "run_experiment", "validate_config"]
