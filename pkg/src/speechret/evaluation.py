"""Retrieval scoring and metrics: P@10, P@N, average precision, tie-corrected
Spearman rank correlation, and micro-averaged F1 for exact keyword spotting.

Rankings break score ties by ascending utterance id, so every metric is a
deterministic, rank-based function of its inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import binio, model as M
from .corpus import Judgments
from .errors import AlignmentError, EvaluationError, VocabularyError

HEAD_VIS = "vis"
HEAD_BOW = "bow"
HEAD_ENSEMBLE = "ensemble"


@dataclass
class ScoreMatrix:
    queries: list[str]
    utterance_ids: list[str]
    scores: np.ndarray          # (Q, M), values in [0, 1]
    head: str

    def validate(self) -> None:
        q, m = len(self.queries), len(self.utterance_ids)
        if self.scores.shape != (q, m):
            raise AlignmentError(f"score matrix shape {self.scores.shape} "
                                 f"does not match {q} queries x {m} utterances")
        if len(set(self.queries)) != q or len(set(self.utterance_ids)) != m:
            raise AlignmentError("score matrix ids must be unique")
        if np.any(self.scores < 0.0) or np.any(self.scores > 1.0):
            raise EvaluationError("scores must lie in [0, 1]")


@dataclass
class QueryMetrics:
    query: str
    positives: int
    p_at_10: float | None = None
    p_at_n: float | None = None
    average_precision: float | None = None
    spearman_rho: float | None = None


@dataclass
class MetricReport:
    head: str
    per_query: list[QueryMetrics]
    aggregates: dict[str, float]
    skipped: dict[str, list[str]]
    query_count: int = 0
    score_tie_count: int = 0
    vote_tie_count: int = 0

    def to_dict(self) -> dict:
        return {
            "head": self.head,
            "query_count": self.query_count,
            "score_tie_count": self.score_tie_count,
            "vote_tie_count": self.vote_tie_count,
            "aggregates": self.aggregates,
            "skipped": self.skipped,
            "per_query": [vars(q).copy() for q in self.per_query],
        }


METRIC_KEYS = ("p_at_10", "p_at_n", "average_precision", "spearman_rho")


# ---------------------------------------------------------------------------
# Ranking primitives


def ranking_order(scores: np.ndarray, id_rank: np.ndarray) -> np.ndarray:
    """Indices ordered by descending score, ties by ascending utterance id."""
    return np.lexsort((id_rank, -scores))


def _id_ranks(utterance_ids: list[str]) -> np.ndarray:
    order = sorted(range(len(utterance_ids)), key=lambda i: utterance_ids[i])
    rank = np.empty(len(utterance_ids), dtype=np.int64)
    for pos, idx in enumerate(order):
        rank[idx] = pos
    return rank


def precision_at_k(scores: np.ndarray, labels: np.ndarray, id_rank: np.ndarray,
                   k: int = 10) -> float:
    if len(scores) < k:
        raise EvaluationError(f"precision_at_k: {len(scores)} utterances < k={k}")
    order = ranking_order(scores, id_rank)
    return float(np.asarray(labels, dtype=float)[order][:k].mean())


def precision_at_n(scores: np.ndarray, labels: np.ndarray,
                   id_rank: np.ndarray) -> float:
    n = int(np.asarray(labels, dtype=bool).sum())
    if n < 1:
        raise EvaluationError("precision_at_n: query has no positives")
    return precision_at_k(scores, labels, id_rank, k=n)


def average_precision(scores: np.ndarray, labels: np.ndarray,
                      id_rank: np.ndarray) -> float:
    labels = np.asarray(labels, dtype=bool)
    if not labels.any():
        raise EvaluationError("average_precision: query has no positives")
    ranked = labels[ranking_order(scores, id_rank)]
    hits = np.cumsum(ranked)
    ranks = np.flatnonzero(ranked) + 1
    return float(np.mean(hits[ranks - 1] / ranks))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(scores: np.ndarray, votes: np.ndarray) -> float:
    """Tie-corrected Spearman: average ranks on both sides, then Pearson."""
    votes = np.asarray(votes, dtype=np.float64)
    if len(scores) < 2:
        raise EvaluationError("spearman_rho: need at least two utterances")
    if np.all(votes == votes[0]):
        raise EvaluationError("spearman_rho: all votes identical")
    if np.all(scores == scores[0]):
        raise EvaluationError("spearman_rho: all scores identical")
    ra = _average_ranks(np.asarray(scores, dtype=np.float64))
    rb = _average_ranks(votes)
    da = ra - ra.mean()
    db = rb - rb.mean()
    return float((da @ db) / np.sqrt((da @ da) * (db @ db)))


def micro_f1(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Micro-averaged F1 over all (keyword, utterance) cells.

    Defined as 0 when there are positives but no predicted positives, and 1
    when both sides are entirely negative (nothing to retrieve, nothing
    retrieved).
    """
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape:
        raise AlignmentError(
            f"micro_f1: prediction shape {predicted.shape} != truth {truth.shape}")
    tp = int(np.sum(predicted & truth))
    fp = int(np.sum(predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    if tp + fp + fn == 0:
        return 1.0
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def macro_f1(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Per-keyword F1 averaged over keywords; rows index keywords."""
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.ndim != 2 or predicted.shape != truth.shape:
        raise AlignmentError(
            f"macro_f1: need matching 2-D tables, got {predicted.shape} "
            f"and {truth.shape}")
    return float(np.mean([micro_f1(predicted[i], truth[i])
                          for i in range(predicted.shape[0])]))


# ---------------------------------------------------------------------------
# Scoring


def score_utterances(params: M.SpeechModelParams, items, queries: list[str],
                     head: str, tag_vocabulary: list[str],
                     bow_vocabulary: list[str], batch_size: int = 64
                     ) -> ScoreMatrix:
    """Keyword probabilities from one head (or the ensemble) per utterance."""
    if head == HEAD_ENSEMBLE:
        vis = score_utterances(params, items, queries, HEAD_VIS,
                               tag_vocabulary, bow_vocabulary, batch_size)
        bow = score_utterances(params, items, queries, HEAD_BOW,
                               tag_vocabulary, bow_vocabulary, batch_size)
        return ensemble(vis, bow)
    if head not in (HEAD_VIS, HEAD_BOW):
        raise EvaluationError(f"unknown head {head!r}")
    vocab = tag_vocabulary if head == HEAD_VIS else bow_vocabulary
    index = {w: i for i, w in enumerate(vocab)}
    missing = [q for q in queries if q not in index]
    if missing:
        raise VocabularyError(
            f"queries not in the {head} head vocabulary: {missing}")
    cols = np.array([index[q] for q in queries], dtype=np.int64)

    rows = []
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        frames = np.stack([it.utterance.frames for it in chunk])
        lengths = np.array([it.utterance.true_length for it in chunk])
        y_vis, y_bow, _ = M.predict(frames, params, lengths=lengths)
        rows.append((y_vis if head == HEAD_VIS else y_bow)[:, cols])
    scores = np.concatenate(rows, axis=0).T.astype(np.float64)
    matrix = ScoreMatrix(queries=list(queries),
                         utterance_ids=[it.item_id for it in items],
                         scores=scores, head=head)
    matrix.validate()
    return matrix


def ensemble(scores_vis: ScoreMatrix, scores_bow: ScoreMatrix) -> ScoreMatrix:
    """Elementwise mean over the query intersection of the two heads."""
    if scores_vis.utterance_ids != scores_bow.utterance_ids:
        raise AlignmentError("ensemble: utterance sets differ")
    shared = [q for q in scores_vis.queries if q in set(scores_bow.queries)]
    if not shared:
        raise AlignmentError("ensemble: no shared queries between heads")
    vi = {q: i for i, q in enumerate(scores_vis.queries)}
    bi = {q: i for i, q in enumerate(scores_bow.queries)}
    rows = [(scores_vis.scores[vi[q]] + scores_bow.scores[bi[q]]) / 2.0
            for q in shared]
    return ScoreMatrix(queries=shared, utterance_ids=list(scores_vis.utterance_ids),
                       scores=np.stack(rows), head=HEAD_ENSEMBLE)


# ---------------------------------------------------------------------------
# Full evaluation


def _aligned_judgments(matrix: ScoreMatrix, judgments: Judgments) -> np.ndarray:
    jq = {q: i for i, q in enumerate(judgments.queries)}
    ju = {u: i for i, u in enumerate(judgments.utterance_ids)}
    missing_q = [q for q in matrix.queries if q not in jq]
    missing_u = [u for u in matrix.utterance_ids if u not in ju]
    if missing_q or missing_u:
        raise AlignmentError(
            f"judgments missing queries {missing_q} / utterances {missing_u}")
    rows = np.array([jq[q] for q in matrix.queries])
    cols = np.array([ju[u] for u in matrix.utterance_ids])
    return judgments.votes[np.ix_(rows, cols)]


def _tie_count(values: np.ndarray) -> int:
    _, counts = np.unique(values, return_counts=True)
    return int(np.sum(counts[counts > 1] - 1))


def evaluate(matrix: ScoreMatrix, judgments: Judgments) -> MetricReport:
    """All four metrics per query plus macro aggregates and skip accounting."""
    matrix.validate()
    votes = _aligned_judgments(matrix, judgments)
    hard = votes * 2 > judgments.num_annotators
    id_rank = _id_ranks(matrix.utterance_ids)

    per_query: list[QueryMetrics] = []
    skipped: dict[str, list[str]] = {k: [] for k in METRIC_KEYS}
    score_ties = 0
    vote_ties = 0
    for qi, q in enumerate(matrix.queries):
        row = matrix.scores[qi]
        labels = hard[qi]
        qm = QueryMetrics(query=q, positives=int(labels.sum()))
        score_ties += _tie_count(row)
        vote_ties += _tie_count(votes[qi])
        qm.p_at_10 = precision_at_k(row, labels, id_rank, k=10)
        if qm.positives >= 1:
            qm.p_at_n = precision_at_n(row, labels, id_rank)
            qm.average_precision = average_precision(row, labels, id_rank)
        else:
            skipped["p_at_n"].append(q)
            skipped["average_precision"].append(q)
        try:
            qm.spearman_rho = spearman_rho(row, votes[qi])
        except EvaluationError:
            skipped["spearman_rho"].append(q)
        per_query.append(qm)

    aggregates: dict[str, float] = {}
    for key in METRIC_KEYS:
        values = [getattr(qm, key) for qm in per_query if getattr(qm, key) is not None]
        aggregates[key] = float(np.mean(values)) if values else float("nan")

    return MetricReport(head=matrix.head, per_query=per_query,
                        aggregates=aggregates, skipped=skipped,
                        query_count=len(matrix.queries),
                        score_tie_count=score_ties, vote_tie_count=vote_ties)


def pooled_average_precision(matrix: ScoreMatrix, judgments: Judgments) -> float:
    """AP over all (query, utterance) cells pooled into one ranked list."""
    matrix.validate()
    votes = _aligned_judgments(matrix, judgments)
    hard = (votes * 2 > judgments.num_annotators).reshape(-1)
    scores = matrix.scores.reshape(-1)
    id_rank = np.arange(len(scores))
    return average_precision(scores, hard, id_rank)


# ---------------------------------------------------------------------------
# Report output


def write_report_json(report: MetricReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)


def write_report_csv(report: MetricReport, path) -> None:
    def cell(value):
        return "" if value is None else f"{value:.6f}"

    with open(path, "w") as fh:
        fh.write("query,positives,p_at_10,p_at_n,average_precision,spearman_rho\n")
        for qm in report.per_query:
            fh.write(f"{qm.query},{qm.positives},{cell(qm.p_at_10)},"
                     f"{cell(qm.p_at_n)},{cell(qm.average_precision)},"
                     f"{cell(qm.spearman_rho)}\n")
        agg = report.aggregates
        fh.write(f"__aggregate__,,{agg['p_at_10']:.6f},{agg['p_at_n']:.6f},"
                 f"{agg['average_precision']:.6f},{agg['spearman_rho']:.6f}\n")


def save_score_matrix(matrix: ScoreMatrix, path) -> None:
    binio.write_container(path, {"kind": "score-matrix", "head": matrix.head,
                                 "queries": matrix.queries,
                                 "utterance_ids": matrix.utterance_ids},
                          {"scores": matrix.scores})


def load_score_matrix(path) -> ScoreMatrix:
    meta, arrays = binio.read_container(path)
    if meta.get("kind") != "score-matrix":
        raise EvaluationError(f"{path}: not a score matrix file")
    matrix = ScoreMatrix(queries=meta["queries"],
                         utterance_ids=meta["utterance_ids"],
                         scores=arrays["scores"], head=meta["head"])
    matrix.validate()
    return matrix
