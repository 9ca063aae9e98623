"""Metric oracles: brute-force enumeration references for every metric."""

import math

import numpy as np
import pytest

from speechret import evaluation as E
from speechret.corpus import Judgments
from speechret.errors import AlignmentError, EvaluationError

# ---------------------------------------------------------------------------
# Independent oracles (pure-python, enumeration-based)


def oracle_ranking(scores, ids):
    return sorted(range(len(scores)), key=lambda i: (-scores[i], ids[i]))


def oracle_p_at_k(scores, labels, ids, k):
    order = oracle_ranking(scores, ids)
    return sum(1 for i in order[:k] if labels[i]) / k


def oracle_ap_threshold_sweep(scores, labels, ids):
    """Uninterpolated PR-step area via exhaustive prefix enumeration."""
    order = oracle_ranking(scores, ids)
    total_pos = sum(1 for x in labels if x)
    area = 0.0
    prev_recall = 0.0
    hits = 0
    for r, idx in enumerate(order, start=1):
        if labels[idx]:
            hits += 1
        recall = hits / total_pos
        precision = hits / r
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def oracle_average_ranks(values):
    ranks = {}
    ordered = sorted(range(len(values)), key=lambda i: values[i])
    positions = {}
    for pos, idx in enumerate(ordered, start=1):
        positions.setdefault(values[idx], []).append(pos)
    for idx in range(len(values)):
        group = positions[values[idx]]
        ranks[idx] = sum(group) / len(group)
    return [ranks[i] for i in range(len(values))]


def oracle_spearman(scores, votes):
    ra = oracle_average_ranks(list(scores))
    rb = oracle_average_ranks(list(votes))
    n = len(ra)
    ma = sum(ra) / n
    mb = sum(rb) / n
    num = sum((a - ma) * (b - mb) for a, b in zip(ra, rb))
    da = math.sqrt(sum((a - ma) ** 2 for a in ra))
    db = math.sqrt(sum((b - mb) ** 2 for b in rb))
    return num / (da * db)


def oracle_micro_f1(pred, truth):
    tp = fp = fn = 0
    for p, t in zip(pred.reshape(-1), truth.reshape(-1)):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif not p and t:
            fn += 1
    if tp + fp + fn == 0:
        return 1.0
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def random_instance(rng, m=None):
    """Scores with deliberate ties, vote counts 0..5, string ids."""
    m = m or int(rng.integers(10, 13))
    scores = np.round(rng.uniform(0, 1, size=m), 1)  # coarse grid forces ties
    votes = rng.integers(0, 6, size=m)
    ids = [f"u{idx:03d}" for idx in rng.permutation(m)]
    return scores, votes, ids


def id_rank_of(ids):
    return E._id_ranks(ids)


# ---------------------------------------------------------------------------


class TestPrecisionAtK:
    def test_perfect_top_ten(self):
        scores = np.linspace(1, 0, 12)
        labels = np.array([True] * 10 + [False] * 2)
        ids = [f"u{i}" for i in range(12)]
        assert E.precision_at_k(scores, labels, id_rank_of(ids), 10) == 1.0

    def test_no_relevant(self):
        scores = np.linspace(1, 0, 12)
        labels = np.zeros(12, dtype=bool)
        ids = [f"u{i}" for i in range(12)]
        assert E.precision_at_k(scores, labels, id_rank_of(ids), 10) == 0.0

    def test_hand_enumeration(self):
        scores = np.array([0.9, 0.8, 0.7, 0.6])
        labels = np.array([1, 0, 1, 0], dtype=bool)
        ids = ["a", "b", "c", "d"]
        assert E.precision_at_k(scores, labels, id_rank_of(ids), 2) == 0.5

    def test_too_few_utterances(self):
        with pytest.raises(EvaluationError):
            E.precision_at_k(np.array([0.5]), np.array([True]),
                             np.array([0]), 10)

    def test_oracle_1000_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            scores, votes, ids = random_instance(rng)
            labels = votes >= 3
            k = int(rng.integers(1, len(scores) + 1))
            ours = E.precision_at_k(scores, labels, id_rank_of(ids), k)
            assert abs(ours - oracle_p_at_k(scores, labels, ids, k)) < 1e-12


class TestPrecisionAtN:
    def test_all_positives_ranked_first(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        labels = np.array([1, 1, 0, 0], dtype=bool)
        ids = ["a", "b", "c", "d"]
        assert E.precision_at_n(scores, labels, id_rank_of(ids)) == 1.0

    def test_equals_recall_at_n_identity(self):
        rng = np.random.default_rng(43)
        for _ in range(300):
            scores, votes, ids = random_instance(rng)
            labels = votes >= 3
            n = int(labels.sum())
            if n == 0:
                continue
            p_at_n = E.precision_at_n(scores, labels, id_rank_of(ids))
            order = oracle_ranking(scores, ids)
            recall = sum(1 for i in order[:n] if labels[i]) / n
            assert abs(p_at_n - recall) < 1e-15

    def test_oracle_random_20(self):
        rng = np.random.default_rng(44)
        scores, votes, ids = random_instance(rng, m=20)
        labels = votes >= 3
        n = int(labels.sum())
        ours = E.precision_at_n(scores, labels, id_rank_of(ids))
        assert abs(ours - oracle_p_at_k(scores, labels, ids, n)) < 1e-12


class TestAveragePrecision:
    def test_perfect_ranking(self):
        scores = np.array([0.9, 0.8, 0.1, 0.05])
        labels = np.array([1, 1, 0, 0], dtype=bool)
        ids = ["a", "b", "c", "d"]
        assert E.average_precision(scores, labels, id_rank_of(ids)) == 1.0

    def test_hand_enumeration(self):
        # ranked (relevant, irrelevant, relevant): (1/1 + 2/3) / 2
        scores = np.array([0.9, 0.5, 0.2])
        labels = np.array([1, 0, 1], dtype=bool)
        ids = ["a", "b", "c"]
        ap = E.average_precision(scores, labels, id_rank_of(ids))
        assert abs(ap - (1.0 + 2.0 / 3.0) / 2.0) < 1e-12

    def test_threshold_sweep_oracle_1000(self):
        rng = np.random.default_rng(45)
        for _ in range(1000):
            scores, votes, ids = random_instance(rng)
            labels = votes >= 3
            if not labels.any():
                continue
            ours = E.average_precision(scores, labels, id_rank_of(ids))
            ref = oracle_ap_threshold_sweep(scores, labels, ids)
            assert abs(ours - ref) < 1e-12

    def test_ap_one_iff_positives_outrank_negatives(self):
        rng = np.random.default_rng(46)
        for _ in range(300):
            scores, votes, ids = random_instance(rng)
            labels = votes >= 3
            if not labels.any():
                continue
            ap = E.average_precision(scores, labels, id_rank_of(ids))
            order = oracle_ranking(scores, ids)
            ranked = [labels[i] for i in order]
            first_neg = ranked.index(False) if False in ranked else len(ranked)
            clean = not any(ranked[first_neg:])
            assert (abs(ap - 1.0) < 1e-15) == clean


class TestSpearman:
    def test_monotone_scores(self):
        votes = np.array([5, 4, 2, 0])
        scores = np.array([0.9, 0.7, 0.4, 0.1])
        assert abs(E.spearman_rho(scores, votes) - 1.0) < 1e-12

    def test_reverse_monotone(self):
        votes = np.array([5, 4, 2, 0])
        scores = np.array([0.1, 0.2, 0.7, 0.9])
        assert abs(E.spearman_rho(scores, votes) + 1.0) < 1e-12

    def test_hand_case_with_ties(self):
        votes = np.array([5, 5, 0, 2])
        scores = np.array([0.9, 0.8, 0.1, 0.4])
        ours = E.spearman_rho(scores, votes)
        ref = oracle_spearman(scores.tolist(), votes.tolist())
        assert abs(ours - ref) < 1e-12

    def test_degenerate_votes_skipped(self):
        with pytest.raises(EvaluationError):
            E.spearman_rho(np.array([0.1, 0.9]), np.array([3, 3]))

    def test_oracle_1000_instances(self):
        rng = np.random.default_rng(47)
        done = 0
        while done < 1000:
            scores, votes, ids = random_instance(rng)
            if np.all(votes == votes[0]) or np.all(scores == scores[0]):
                continue
            ours = E.spearman_rho(scores, votes)
            assert abs(ours - oracle_spearman(scores.tolist(), votes.tolist())) < 1e-12
            done += 1


class TestMicroF1:
    def test_perfect(self):
        truth = np.array([[True, False], [False, True]])
        assert E.micro_f1(truth, truth) == 1.0

    def test_no_predictions_with_positives(self):
        truth = np.array([True, False, True])
        pred = np.zeros(3, dtype=bool)
        assert E.micro_f1(pred, truth) == 0.0

    def test_all_negative_both_sides(self):
        z = np.zeros((2, 2), dtype=bool)
        assert E.micro_f1(z, z) == 1.0

    def test_counting_oracle_1000(self):
        rng = np.random.default_rng(48)
        for _ in range(1000):
            shape = (int(rng.integers(1, 6)), int(rng.integers(1, 5)))
            pred = rng.random(shape) < 0.4
            truth = rng.random(shape) < 0.4
            assert abs(E.micro_f1(pred, truth) - oracle_micro_f1(pred, truth)) < 1e-12

    def test_macro_averages_per_keyword(self):
        rng = np.random.default_rng(148)
        pred = rng.random((4, 6)) < 0.4
        truth = rng.random((4, 6)) < 0.4
        expect = np.mean([oracle_micro_f1(pred[i], truth[i]) for i in range(4)])
        assert abs(E.macro_f1(pred, truth) - expect) < 1e-12


class TestEnsemble:
    def _matrix(self, queries, ids, scores, head="vis"):
        return E.ScoreMatrix(queries=queries, utterance_ids=ids,
                             scores=np.asarray(scores, dtype=float), head=head)

    def test_idempotent_mean(self):
        m = self._matrix(["q1"], ["a", "b"], [[0.2, 0.8]])
        out = E.ensemble(m, self._matrix(["q1"], ["a", "b"], [[0.2, 0.8]], "bow"))
        assert np.array_equal(out.scores, m.scores)

    def test_arithmetic(self):
        a = self._matrix(["q"], ["u"], [[0.2]])
        b = self._matrix(["q"], ["u"], [[0.8]], "bow")
        assert E.ensemble(a, b).scores[0, 0] == 0.5

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(49)
        a = rng.uniform(size=(3, 4))
        b = rng.uniform(size=(3, 4))
        ids = ["u0", "u1", "u2", "u3"]
        qs = ["q0", "q1", "q2"]
        out = E.ensemble(self._matrix(qs, ids, a), self._matrix(qs, ids, b, "bow"))
        for i in range(3):
            for j in range(4):
                assert out.scores[i, j] == (a[i, j] + b[i, j]) / 2.0

    def test_vocabulary_intersection(self):
        a = self._matrix(["q1", "q2"], ["u"], [[0.1], [0.2]])
        b = self._matrix(["q2", "q3"], ["u"], [[0.4], [0.6]], "bow")
        out = E.ensemble(a, b)
        assert out.queries == ["q2"]
        assert out.scores[0, 0] == pytest.approx(0.3)

    def test_empty_intersection(self):
        a = self._matrix(["q1"], ["u"], [[0.1]])
        b = self._matrix(["q2"], ["u"], [[0.4]], "bow")
        with pytest.raises(AlignmentError):
            E.ensemble(a, b)

    def test_mismatched_utterances(self):
        a = self._matrix(["q"], ["u1"], [[0.1]])
        b = self._matrix(["q"], ["u2"], [[0.4]], "bow")
        with pytest.raises(AlignmentError):
            E.ensemble(a, b)


class TestEvaluate:
    def _random_case(self, rng, q=3, m=12):
        scores = np.round(rng.uniform(0, 1, size=(q, m)), 1)
        votes = rng.integers(0, 6, size=(q, m))
        queries = [f"q{i}" for i in range(q)]
        ids = [f"u{i:03d}" for i in range(m)]
        matrix = E.ScoreMatrix(queries=list(queries), utterance_ids=list(ids),
                               scores=scores, head="vis")
        judgments = Judgments(queries=list(queries), utterance_ids=list(ids),
                              votes=votes)
        return matrix, judgments

    def test_oracle_scores_give_perfect_p_at_n(self):
        rng = np.random.default_rng(50)
        votes = rng.integers(0, 6, size=(2, 12))
        hard = votes >= 3
        # Scores equal to the labels, with a unique tiny id-ordered offset so
        # the ranking is strict.
        offsets = np.linspace(0, 1e-6, 12)
        scores = hard.astype(float) * 0.5 + 0.25 - offsets
        queries = ["q0", "q1"]
        ids = [f"u{i:03d}" for i in range(12)]
        matrix = E.ScoreMatrix(queries=queries, utterance_ids=ids,
                               scores=scores, head="vis")
        judgments = Judgments(queries=queries, utterance_ids=ids, votes=votes)
        report = E.evaluate(matrix, judgments)
        for qm in report.per_query:
            if qm.positives:
                assert qm.p_at_n == 1.0

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(51)
        matrix, judgments = self._random_case(rng)
        perm = rng.permutation(12)
        matrix2 = E.ScoreMatrix(
            queries=matrix.queries,
            utterance_ids=[matrix.utterance_ids[i] for i in perm],
            scores=matrix.scores[:, perm], head="vis")
        report1 = E.evaluate(matrix, judgments)
        report2 = E.evaluate(matrix2, judgments)
        for qm1, qm2 in zip(report1.per_query, report2.per_query):
            assert qm1 == qm2

    def test_composition_200_random_instances(self):
        rng = np.random.default_rng(52)
        for _ in range(200):
            matrix, judgments = self._random_case(rng, q=int(rng.integers(1, 5)))
            report = E.evaluate(matrix, judgments)
            hard = judgments.votes >= 3
            for key in E.METRIC_KEYS:
                singles = []
                for qi in range(len(matrix.queries)):
                    row, labels = matrix.scores[qi], hard[qi]
                    votes = judgments.votes[qi]
                    ids = matrix.utterance_ids
                    if key == "p_at_10":
                        singles.append(oracle_p_at_k(row, labels, ids, 10))
                    elif key == "p_at_n" and labels.any():
                        singles.append(oracle_p_at_k(row, labels, ids,
                                                     int(labels.sum())))
                    elif key == "average_precision" and labels.any():
                        singles.append(oracle_ap_threshold_sweep(row, labels, ids))
                    elif key == "spearman_rho":
                        if not (np.all(votes == votes[0])
                                or np.all(row == row[0])):
                            singles.append(oracle_spearman(row.tolist(),
                                                           votes.tolist()))
                if singles:
                    assert abs(report.aggregates[key] - np.mean(singles)) < 1e-12
                else:
                    assert math.isnan(report.aggregates[key])

    def test_purity_bit_identical(self):
        rng = np.random.default_rng(53)
        matrix, judgments = self._random_case(rng)
        a = E.evaluate(matrix, judgments)
        b = E.evaluate(matrix, judgments)
        assert a == b

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(54)
        matrix, judgments = self._random_case(rng)
        report1 = E.evaluate(matrix, judgments)
        squashed = E.ScoreMatrix(queries=matrix.queries,
                                 utterance_ids=matrix.utterance_ids,
                                 scores=matrix.scores ** 3, head="vis")
        report2 = E.evaluate(squashed, judgments)
        for qm1, qm2 in zip(report1.per_query, report2.per_query):
            assert qm1.p_at_10 == qm2.p_at_10
            assert qm1.p_at_n == qm2.p_at_n
            assert qm1.average_precision == qm2.average_precision
            if qm1.spearman_rho is not None:
                assert abs(qm1.spearman_rho - qm2.spearman_rho) < 1e-12

    def test_id_misalignment(self):
        rng = np.random.default_rng(55)
        matrix, judgments = self._random_case(rng)
        judgments.utterance_ids[0] = "nope"
        with pytest.raises(AlignmentError):
            E.evaluate(matrix, judgments)

    def test_report_files(self, tmp_path):
        rng = np.random.default_rng(56)
        matrix, judgments = self._random_case(rng)
        report = E.evaluate(matrix, judgments)
        E.write_report_json(report, tmp_path / "r.json")
        E.write_report_csv(report, tmp_path / "r.csv")
        assert (tmp_path / "r.json").exists()
        header = (tmp_path / "r.csv").read_text().splitlines()[0]
        assert header.startswith("query,positives")

    def test_score_matrix_round_trip(self, tmp_path):
        rng = np.random.default_rng(57)
        matrix, _ = self._random_case(rng)
        E.save_score_matrix(matrix, tmp_path / "m.bin")
        loaded = E.load_score_matrix(tmp_path / "m.bin")
        assert loaded.queries == matrix.queries
        assert loaded.utterance_ids == matrix.utterance_ids
        assert np.array_equal(loaded.scores, matrix.scores)

    def test_pooled_ap_matches_flattened_oracle(self):
        rng = np.random.default_rng(58)
        matrix, judgments = self._random_case(rng)
        hard = (judgments.votes >= 3).reshape(-1)
        if not hard.any():
            pytest.skip("no positives drawn")
        flat = matrix.scores.reshape(-1)
        ids = list(range(len(flat)))
        ours = E.pooled_average_precision(matrix, judgments)
        assert abs(ours - oracle_ap_threshold_sweep(flat, hard, ids)) < 1e-12
