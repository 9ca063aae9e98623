"""Supervision sweep: train and evaluate every (system, fraction, seed) cell,
aggregate per-fraction curves, and emit delimited tables plus figures.

Completed cells leave a ``done.json`` marker with their metrics; a resumed
sweep skips them and reassembles an identical report.
"""

from __future__ import annotations

import dataclasses
import json
import os
import traceback
from dataclasses import dataclass, field

import numpy as np

from . import evaluation as E
from . import training as TR
from .config import ExperimentConfig
from .corpus import Corpus, Judgments, load_corpus, load_judgments
from .errors import ConfigError
from .losses import LossWeights
from .tagger import TaggerParams, load_tagger

REPORT_SYSTEMS = ("textual-baseline", "visual-baseline", "mtl-textSup",
                  "mtl-visSup", "mtl-ensemble")

CELL_METRICS = ("average_precision", "spearman_rho", "p_at_10", "p_at_n")


def system_train_config(base: TR.TrainConfig, system: str, fraction: float,
                        seed: int) -> TR.TrainConfig:
    """Map a system name onto trainer settings.

    The visual baseline never sees transcripts (fraction forced to 0); the
    textual baseline never sees the image-speech pool, so every batch comes
    from the transcribed set.
    """
    if system == "visual-baseline":
        return dataclasses.replace(
            base, weights=LossWeights(vis=1.0, bow=0.0), set_c_fraction=0.0,
            visual_pool_enabled=True, stopping_head="vis", seed=seed)
    if system == "textual-baseline":
        return dataclasses.replace(
            base, weights=LossWeights(vis=0.0, bow=1.0),
            set_c_fraction=fraction, visual_pool_enabled=False,
            stopping_head="bow", seed=seed)
    if system == "mtl":
        return dataclasses.replace(base, set_c_fraction=fraction,
                                   visual_pool_enabled=True,
                                   stopping_head="ensemble", seed=seed)
    raise ConfigError(f"unknown system {system!r}")


def evaluation_rows(system: str, params, meta: dict, test_items,
                    judgments: Judgments) -> dict[str, dict]:
    """Aggregate metrics per report row; mtl expands to three rows."""
    heads = {"textual-baseline": [("textual-baseline", E.HEAD_BOW)],
             "visual-baseline": [("visual-baseline", E.HEAD_VIS)],
             "mtl": [("mtl-textSup", E.HEAD_BOW), ("mtl-visSup", E.HEAD_VIS),
                     ("mtl-ensemble", E.HEAD_ENSEMBLE)]}[system]
    rows = {}
    for row_name, head in heads:
        matrix = E.score_utterances(params, test_items, judgments.queries,
                                    head, meta["tag_vocabulary"],
                                    meta["bow_vocabulary"])
        report = E.evaluate(matrix, judgments)
        rows[row_name] = {k: report.aggregates[k] for k in CELL_METRICS}
    return rows


@dataclass
class SweepReport:
    fractions: list[float]
    seeds: list[int]
    cells: list[dict] = field(default_factory=list)
    curves: dict = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"fractions": self.fractions, "seeds": self.seeds,
                "cells": self.cells, "curves": self.curves,
                "failures": self.failures}


def _cell_dir(out_dir: str, system: str, fraction: float | None, seed: int) -> str:
    if system == "visual-baseline":
        name = f"visual-baseline__s{seed}"
    else:
        name = f"{system}__f{fraction:g}__s{seed}"
    return os.path.join(out_dir, "cells", name)


def run_cell(corpus: Corpus, tagger: TaggerParams, judgments: Judgments,
             config: ExperimentConfig, system: str, fraction: float | None,
             seed: int, out_dir: str) -> dict:
    """Train + evaluate one cell, or return its existing done-marker."""
    cell_dir = _cell_dir(out_dir, system, fraction, seed)
    marker = os.path.join(cell_dir, "done.json")
    if os.path.exists(marker):
        with open(marker) as fh:
            return json.load(fh)

    train_cfg = system_train_config(config.train, system,
                                    fraction if fraction is not None else 0.0,
                                    seed)
    run_dir = os.path.join(cell_dir, "run")
    result = TR.train(corpus, tagger, train_cfg, judgments.queries, run_dir,
                      arch=config.model)
    params, _, _, meta = TR.load_checkpoint(result.best_path)
    test_items = corpus.split_items("test")
    rows = evaluation_rows(system, params, meta, test_items, judgments)
    done = {"system": system, "fraction": fraction, "seed": seed,
            "rows": rows,
            "train": {"steps": result.steps_completed,
                      "best_f1": result.best_f1,
                      "best_step": result.best_step,
                      "stopped_early": result.stopped_early}}
    with open(marker, "w") as fh:
        json.dump(done, fh, indent=2, sort_keys=True)
    return done


def run_sweep(corpus: Corpus, tagger: TaggerParams, judgments: Judgments,
              config: ExperimentConfig, out_dir: str,
              progress=None) -> SweepReport:
    config.sweep.validate()
    fractions = sorted(config.sweep.fractions)
    seeds = list(config.sweep.seeds)
    report = SweepReport(fractions=list(fractions), seeds=seeds)

    visual_cache: dict[int, dict] = {}
    jobs = []
    for seed in seeds:
        if "visual-baseline" in config.sweep.systems:
            jobs.append(("visual-baseline", None, seed))
        for fraction in fractions:
            for system in config.sweep.systems:
                if system != "visual-baseline":
                    jobs.append((system, fraction, seed))

    for system, fraction, seed in jobs:
        label = (f"{system} seed={seed}" if fraction is None
                 else f"{system} fraction={fraction:g} seed={seed}")
        if progress:
            progress(label)
        try:
            done = run_cell(corpus, tagger, judgments, config, system,
                            fraction, seed, out_dir)
        except Exception as exc:
            report.failures.append({"system": system, "fraction": fraction,
                                    "seed": seed, "error": repr(exc),
                                    "traceback": traceback.format_exc()})
            continue
        if system == "visual-baseline":
            visual_cache[seed] = done
        else:
            for row_name, metrics in done["rows"].items():
                report.cells.append({"system": row_name, "fraction": fraction,
                                     "seed": seed, **metrics,
                                     "dev_f1": done["train"]["best_f1"]})

    # The visual baseline uses no transcripts; its row repeats across
    # fractions by construction.
    for seed, done in visual_cache.items():
        for fraction in fractions:
            for row_name, metrics in done["rows"].items():
                report.cells.append({"system": row_name, "fraction": fraction,
                                     "seed": seed, **metrics,
                                     "dev_f1": done["train"]["best_f1"]})

    report.cells.sort(key=lambda c: (c["system"], c["fraction"], c["seed"]))
    report.curves = assemble_curves(report.cells)
    return report


def assemble_curves(cells: list[dict]) -> dict:
    curves: dict = {}
    for metric in CELL_METRICS:
        curves[metric] = {}
        for cell in cells:
            system = cell["system"]
            by_fraction = curves[metric].setdefault(system, {})
            by_fraction.setdefault(cell["fraction"], []).append(cell[metric])
        for system, by_fraction in curves[metric].items():
            curves[metric][system] = {
                f: {"mean": float(np.mean(vals)), "std": float(np.std(vals)),
                    "n": len(vals)}
                for f, vals in sorted(by_fraction.items())}
    return curves


def write_cells_csv(report: SweepReport, path) -> None:
    with open(path, "w") as fh:
        fh.write("system,fraction,seed," + ",".join(CELL_METRICS) + ",dev_f1\n")
        for cell in report.cells:
            values = ",".join(f"{cell[m]:.6f}" for m in CELL_METRICS)
            dev = "" if cell["dev_f1"] is None else f"{cell['dev_f1']:.6f}"
            fh.write(f"{cell['system']},{cell['fraction']:g},{cell['seed']},"
                     f"{values},{dev}\n")


def write_curve_csv(report: SweepReport, metric: str, path) -> None:
    with open(path, "w") as fh:
        fh.write("system,fraction,mean,std,n\n")
        for system in REPORT_SYSTEMS:
            for fraction, stats in report.curves.get(metric, {}).get(system,
                                                                     {}).items():
                fh.write(f"{system},{fraction:g},{stats['mean']:.6f},"
                         f"{stats['std']:.6f},{stats['n']}\n")


def write_report(report: SweepReport, out_dir: str) -> None:
    write_cells_csv(report, os.path.join(out_dir, "sweep_cells.csv"))
    write_curve_csv(report, "average_precision",
                    os.path.join(out_dir, "sweep_curves_ap.csv"))
    write_curve_csv(report, "spearman_rho",
                    os.path.join(out_dir, "sweep_curves_rho.csv"))
    with open(os.path.join(out_dir, "sweep_report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    if report.failures:
        with open(os.path.join(out_dir, "failures.json"), "w") as fh:
            json.dump(report.failures, fh, indent=2)


def load_sweep_inputs(corpus_dir) -> tuple[Corpus, Judgments]:
    corpus = load_corpus(corpus_dir)
    judgments = load_judgments(os.path.join(corpus_dir, "judgments.csv"))
    return corpus, judgments


def load_sweep_tagger(path) -> TaggerParams:
    return load_tagger(path)
