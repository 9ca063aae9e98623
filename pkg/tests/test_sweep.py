"""Sweep harness: system mapping, cell markers, resume, failure recording."""

import dataclasses
import json
import os

import numpy as np
import pytest

from speechret import sweep as SW
from speechret import training as TR
from speechret.config import ExperimentConfig, apply_overrides
from speechret.errors import ConfigError
from speechret.losses import LossWeights


def sweep_experiment(**sets):
    base = {
        "train.batch_size": "8",
        "train.max_steps": "40",
        "train.eval_interval": "20",
        "train.patience": "5",
        "train.n_bow": "16",
        "train.contrastive.n_neg": "3",
        "sweep.fractions": "0.5,1.0",
        "sweep.seeds": "0,1",
    }
    base.update({k: str(v) for k, v in sets.items()})
    return apply_overrides(ExperimentConfig(), base)


class TestSystemMapping:
    def test_visual_baseline(self):
        cfg = SW.system_train_config(TR.TrainConfig(), "visual-baseline", 0.7, 3)
        assert cfg.weights == LossWeights(vis=1.0, bow=0.0)
        assert cfg.set_c_fraction == 0.0
        assert cfg.visual_pool_enabled
        assert cfg.stopping_head == "vis"
        assert cfg.seed == 3

    def test_textual_baseline(self):
        cfg = SW.system_train_config(TR.TrainConfig(), "textual-baseline", 0.25, 1)
        assert cfg.weights == LossWeights(vis=0.0, bow=1.0)
        assert cfg.set_c_fraction == 0.25
        assert not cfg.visual_pool_enabled
        assert cfg.stopping_head == "bow"

    def test_mtl_keeps_base_weights(self):
        base = TR.TrainConfig(weights=LossWeights(vis=0.4, bow=0.3))
        cfg = SW.system_train_config(base, "mtl", 0.25, 2)
        assert cfg.weights == LossWeights(vis=0.4, bow=0.3)
        assert cfg.set_c_fraction == 0.25
        assert cfg.stopping_head == "ensemble"

    def test_unknown_system(self):
        with pytest.raises(ConfigError):
            SW.system_train_config(TR.TrainConfig(), "nope", 0.5, 0)


@pytest.fixture(scope="module")
def sweep_out(mini_corpus, mini_tagger, tmp_path_factory):
    corpus, judgments = mini_corpus
    out = str(tmp_path_factory.mktemp("sweep"))
    config = sweep_experiment()
    report = SW.run_sweep(corpus, mini_tagger, judgments, config, out)
    SW.write_report(report, out)
    return out, report, config


class TestRunSweep:
    def test_report_rows_complete(self, sweep_out):
        _, report, config = sweep_out
        fractions = sorted(config.sweep.fractions)
        seeds = list(config.sweep.seeds)
        expect = len(fractions) * len(seeds) * len(SW.REPORT_SYSTEMS)
        assert len(report.cells) == expect
        assert not report.failures

    def test_visual_baseline_constant_across_fractions(self, sweep_out):
        _, report, _ = sweep_out
        rows = [c for c in report.cells if c["system"] == "visual-baseline"]
        by_seed = {}
        for row in rows:
            by_seed.setdefault(row["seed"], []).append(row)
        for seed_rows in by_seed.values():
            first = seed_rows[0]
            for row in seed_rows[1:]:
                for metric in SW.CELL_METRICS:
                    assert row[metric] == first[metric]

    def test_done_markers_exist(self, sweep_out):
        out, _, config = sweep_out
        cells = os.listdir(os.path.join(out, "cells"))
        assert "visual-baseline__s0" in cells
        assert "mtl__f0.5__s1" in cells
        for cell in cells:
            assert os.path.exists(os.path.join(out, "cells", cell, "done.json"))

    def test_resume_identical_report(self, sweep_out, mini_corpus, mini_tagger):
        out, report, config = sweep_out
        corpus, judgments = mini_corpus
        again = SW.run_sweep(corpus, mini_tagger, judgments, config, out)
        assert json.dumps(again.to_dict(), sort_keys=True) == \
            json.dumps(report.to_dict(), sort_keys=True)

    def test_output_tables(self, sweep_out):
        out, _, _ = sweep_out
        cells_csv = open(os.path.join(out, "sweep_cells.csv")).read()
        assert cells_csv.startswith("system,fraction,seed,")
        curves = open(os.path.join(out, "sweep_curves_ap.csv")).read()
        assert curves.startswith("system,fraction,mean,std,n")
        assert "visual-baseline" in curves
        report_json = json.load(open(os.path.join(out, "sweep_report.json")))
        assert set(report_json) >= {"cells", "curves", "failures"}

    def test_curve_stats_match_cells(self, sweep_out):
        _, report, _ = sweep_out
        for cell_system in ("mtl-ensemble", "textual-baseline"):
            for fraction, stats in report.curves["average_precision"][
                    cell_system].items():
                values = [c["average_precision"] for c in report.cells
                          if c["system"] == cell_system
                          and c["fraction"] == fraction]
                assert stats["n"] == len(values)
                assert abs(stats["mean"] - np.mean(values)) < 1e-12
                assert abs(stats["std"] - np.std(values)) < 1e-12


class TestFailureHandling:
    def test_cell_failure_recorded_and_continues(self, mini_corpus, mini_tagger,
                                                 tmp_path):
        corpus, judgments = mini_corpus
        # batch 16 exceeds the fraction-0.1 transcript pool (14 items)
        config = sweep_experiment(**{"train.batch_size": "16",
                                     "sweep.fractions": "0.1,1.0",
                                     "sweep.seeds": "0"})
        report = SW.run_sweep(corpus, mini_tagger, judgments, config,
                              str(tmp_path))
        assert report.failures
        failed = {(f["system"], f["fraction"]) for f in report.failures}
        assert ("textual-baseline", 0.1) in failed
        # the other cells still produced rows
        ok_fractions = {c["fraction"] for c in report.cells
                        if c["system"] == "textual-baseline"}
        assert 1.0 in ok_fractions


class TestFigures:
    def test_sweep_figures_render(self, sweep_out, tmp_path):
        _, report, _ = sweep_out
        from speechret.figures import render_sweep_figures
        paths = render_sweep_figures(report, tmp_path)
        for path in paths:
            assert os.path.getsize(path) > 1000
