import json
import math

import numpy as np
import pytest

from ladder_lambda.align import AlignmentFrontier
from ladder_lambda.scoring import blastp_scheme, match_mismatch_scheme, solve_lambda_star
from ladder_lambda.trial import (
    CENSORED, D, I, S, ConfigurationError, ReplicateRunner, TrialModel, default_trial_model,
    dump_trace, replicate_stream, run_replicate,
)
from test_scoring import bisect_lambda


class TestDefaultModel:
    def test_normalized(self, blosum62):
        m = default_trial_model(blosum62)
        assert abs(m.q.sum() - 1) < 1e-12
        assert np.allclose(m.t.sum(axis=1), 1, atol=1e-15)
        assert m.t[I, D] == 0 and m.t[D, I] == 0

    def test_uniform_pm1(self):
        m = default_trial_model(match_mismatch_scheme("ACGT", 1, -1, 2, 1))
        assert np.allclose(np.diag(m.q), 3 / 16, atol=1e-12)
        off = m.q[~np.eye(4, dtype=bool)]
        assert np.allclose(off, 1 / 48, atol=1e-12)

    def test_blosum62_extension(self, blosum62):
        s = blosum62.with_gaps(10, 1)
        m = default_trial_model(s)
        lam = bisect_lambda(s)
        assert m.t[I, I] == pytest.approx(math.exp(-lam), abs=1e-10)
        assert m.t[S, I] == pytest.approx(math.exp(-11 * lam), abs=1e-10)

    def test_negative_fill_rejected(self):
        s = match_mismatch_scheme("ACGT", 5, -4, 0.0, 0.1)
        with pytest.raises(ConfigurationError, match="smaller c"):
            default_trial_model(s)

    def test_overrides(self, blosum62):
        m = default_trial_model(blosum62, overrides={"c": 0.5, "t_II": 0.5})
        base = default_trial_model(blosum62)
        assert m.t[S, I] == pytest.approx(base.t[S, I] / 2)
        assert m.t[I, I] == 0.5 and m.t[I, S] == 0.5
        with pytest.raises(ConfigurationError):
            default_trial_model(blosum62, overrides={"bogus": 1})
        with pytest.raises(ConfigurationError):
            default_trial_model(blosum62, overrides={"t": [[1, 0, 0], [0, 1, 0], [0, 0, 0.5]]})

    def test_model_validation(self):
        with pytest.raises(ConfigurationError):
            TrialModel(np.eye(3), np.full((2, 2), 0.3), [0.5, 0.5], [0.5, 0.5])
        with pytest.raises(ConfigurationError):
            TrialModel(np.full((3, 3), 1 / 3), np.full((2, 2), 0.25), [0.5, 0.5], [0.5, 0.6])


def test_positive_scores_stop_at_one():
    s = match_mismatch_scheme("AB", 2, 1, 1, 1)
    q = np.full((2, 2), 0.25)
    m = TrialModel(np.array([[1.0, 0, 0], [1, 0, 0], [1, 0, 0]]), q, s.freq_a, s.freq_b)
    p = run_replicate(m, s, 1, 100, replicate_stream(0, 0))
    assert p.stopped_at == 1 and p.ladder.epochs == [1]
    assert p.ladder.scores[0] == s.matrix[p.seq_a[0], p.seq_b[0]] > 0


def check_path(p, scheme, k_max):
    steps = list(p.steps)
    i, j = p.position
    assert i == steps.count(S) + steps.count(D) == len(p.seq_a)
    assert j == steps.count(S) + steps.count(I) == len(p.seq_b)
    N = p.stopped_at
    assert min(i, j) == N
    # endpoint lies on one of the two rays leaving (N, N)
    assert (i == N and j >= N) or (j == N and i >= N)
    # the last step raised min(i, j) to N
    last = steps[-1]
    prev = (i - (last != I), j - (last != D))
    assert min(prev) == N - 1
    fr = AlignmentFrontier(scheme).extend_many(p.seq_a[:N], p.seq_b[:N])
    assert fr.ladder.epochs == p.ladder.epochs and len(p.ladder) == k_max
    assert fr.ladder.scores == p.ladder.scores


def test_paths_replay(blosum62):
    m = default_trial_model(blosum62)
    runner = ReplicateRunner(m, blosum62, 4)
    for rep in range(200):
        check_path(runner.sample(replicate_stream(3, rep)), blosum62, 4)


def test_stopped_square_geometry(dna_example):
    # a replicate whose ladder epochs fall at squares 3, 6 and 10
    runner = ReplicateRunner(default_trial_model(dna_example), dna_example, 3, 1000)
    p = runner.sample(replicate_stream(5, 2623))
    assert p.ladder.epochs == [3, 6, 10]
    assert p.stopped_at == 10
    check_path(p, dna_example, 3)


def test_transition_frequencies(blosum62):
    m = default_trial_model(blosum62)
    runner = ReplicateRunner(m, blosum62, 4)
    counts = np.zeros((3, 3))
    rep = 0
    while counts.sum() < 1e5:
        p = runner.sample(replicate_stream(11, rep))
        atoms = [S] + list(p.steps)
        np.add.at(counts, (atoms[:-1], atoms[1:]), 1)
        rep += 1
    for x in range(3):
        n = counts[x].sum()
        for y in range(3):
            p_xy = m.t[x, y]
            se = math.sqrt(max(p_xy * (1 - p_xy), 1e-12) / n)
            assert abs(counts[x, y] / n - p_xy) < 3 * se + 1e-12


def test_bit_reproducible(blosum62):
    m = default_trial_model(blosum62)
    a = run_replicate(m, blosum62, 4, 10_000, replicate_stream(9, 17))
    b = run_replicate(m, blosum62, 4, 10_000, replicate_stream(9, 17))
    assert np.array_equal(a.seq_a, b.seq_a) and np.array_equal(a.steps, b.steps)
    assert np.array_equal(a.log_inv_weights, b.log_inv_weights)


def test_no_censoring_blosum62(blosum62):
    m = default_trial_model(blosum62)
    runner = ReplicateRunner(m, blosum62, 4, 10_000)
    status = [runner.run(replicate_stream(0, r))[0] for r in range(10_000)]
    assert CENSORED not in status


def test_small_horizon_censors(blosum62):
    m = default_trial_model(blosum62)
    runner = ReplicateRunner(m, blosum62, 4, horizon=2)
    samples = [runner.sample(replicate_stream(1, r)) for r in range(50)]
    assert any(p.censored for p in samples)
    assert all(p.censored or p.stopped_at <= 2 for p in samples)


def test_dump_trace(blosum62):
    p = run_replicate(default_trial_model(blosum62), blosum62, 4, 10_000, replicate_stream(2, 0))
    recs = list(dump_trace(p, blosum62))
    assert len(recs) == len(p.steps)
    assert recs[-1]["i"] == p.position[0] and recs[-1]["j"] == p.position[1]
    json.dumps(recs)
    assert all((r["a"] == "-") + (r["b"] == "-") <= 1 for r in recs)


def test_streams_validate():
    with pytest.raises(ValueError):
        replicate_stream(-1, 0)
    assert replicate_stream(1, 2).random() != replicate_stream(1, 3).random()


def test_runner_requires_matching_gap_emissions(blosum62):
    m = default_trial_model(blosum62)
    other = TrialModel(m.t, m.q, np.full(20, 0.05), m.p_b)
    with pytest.raises(ValueError):
        ReplicateRunner(other, blosum62, 4)
