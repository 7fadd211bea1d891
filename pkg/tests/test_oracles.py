import math

import numpy as np
import pytest

from ladder_lambda import oracles as O
from ladder_lambda.align import AlignmentFrontier
from ladder_lambda.scoring import match_mismatch_scheme
from ladder_lambda.trial import TrialModel, replicate_stream
from ladder_lambda.weights import WeightFrontier

TWO_STATE = O.FiniteMap(
    [[0.6, 0.4], [0.3, 0.7]],
    [[([1, -1], [0.3, 0.7]), ([2, -1], [0.2, 0.8])],
     [([1, -2], [0.4, 0.6]), ([-1, 1], [0.8, 0.2])]],
)


@pytest.fixture
def inst():
    scheme = match_mismatch_scheme("AB", 1, -2, 1, 1, freqs=[0.4, 0.6])
    t = np.array([[0.9, 0.05, 0.05], [0.6, 0.35, 0.05], [0.7, 0.02, 0.28]])
    model = TrialModel(t, np.array([[0.3, 0.1], [0.15, 0.45]]), scheme.freq_a, scheme.freq_b)
    return scheme, model


# -- enumeration -------------------------------------------------------------

def test_first_step(inst):
    scheme, model = inst
    r = O.enumerate_q_mass(model, scheme, O.FirstStepEvent(0, 1, 0))
    assert r.mass == pytest.approx(model.t[0, 0] * model.q[1, 0])
    r = O.enumerate_q_mass(model, scheme, O.FirstStepEvent(2, a=1))
    assert r.mass == pytest.approx(model.t[0, 2] * model.p_a[1])


def test_cell_event_matches_dp(inst):
    scheme, model = inst
    A, B = (0, 1, 1, 0), (1, 1, 0, 1)
    wf = WeightFrontier(model, scheme).extend_many(A, B)
    # descaled weights times the target probability of the letters give Q-masses
    i, j = 4, 2
    m = O.enumerate_q_mass(model, scheme, O.CellEvent(0, i, j, A, B)).mass
    w = wf.edge("row_S")[j]
    pa = np.prod(scheme.freq_a[list(A[:i])]) * np.prod(scheme.freq_b[list(B[:j])])
    assert m == pytest.approx(w * pa, rel=1e-12)


def test_preimage_sums_to_one_over_pairs(inst):
    scheme, model = inst
    # every path stops somewhere, so preimage masses over all pairs of size N sum to 1
    total = sum(O.enumerate_q_mass(model, scheme, O.PreimageEvent(a, b)).mass
                for a, b in O.all_pairs(2, 2))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_enumeration_refuses_large(inst, blosum62):
    scheme, model = inst
    with pytest.raises(O.EnumerationTooLarge):
        O.enumerate_q_mass(model, scheme, O.PreimageEvent((0,) * 6, (0,) * 6))
    with pytest.raises(O.EnumerationTooLarge):
        O.enumerate_q_mass(model, blosum62, O.PreimageEvent((0,), (0,)))
    with pytest.raises(ValueError):
        O.enumerate_q_mass(model, scheme, O.PreimageEvent((0, 1), (0,)))


# -- crude simulation --------------------------------------------------------

def test_crude_all_positive_scores():
    scheme = match_mismatch_scheme("AB", 2, 1, 5, 1)
    res = O.crude_mc_ladder(scheme, 3, 10, 200, seed=1)
    assert np.all(res.reach_fraction == 1.0)
    # with positive scores every square is a new maximum
    assert np.array_equal(res.records.stop_length, np.full(200, 3))


def test_crude_matches_dp(dna_example):
    res = O.crude_mc_ladder(dna_example, 3, 60, 50, seed=4)
    gen_scores = res.records.scores
    for r in range(5):
        gen = replicate_stream(4, r)
        a = np.empty(60, dtype=np.int64)
        b = np.empty(60, dtype=np.int64)
        O._fill_letters(gen, O._cdf(dna_example.freq_a), a)
        O._fill_letters(gen, O._cdf(dna_example.freq_b), b)
        fr = AlignmentFrontier(dna_example)
        for x, y in zip(a, b):
            fr.extend(x, y)
            if len(fr.ladder.scores) >= 3:
                break
        k = len(fr.ladder.scores)
        assert np.array_equal(gen_scores[r, :k], fr.ladder.scores[:k])


def test_crude_reach_monotone_in_horizon(blosum62):
    short = O.crude_mc_ladder(blosum62, 3, 20, 400, seed=2)
    long = O.crude_mc_ladder(blosum62, 3, 80, 400, seed=2)
    assert np.all(long.reach_fraction >= short.reach_fraction)
    assert np.all(np.diff(long.reach_fraction) <= 0)


# -- finite MAPs -------------------------------------------------------------

def test_map_validation():
    with pytest.raises(O.MapError, match="stochastic"):
        O.FiniteMap([[0.5]], [[([1], [1.0])]])
    with pytest.raises(O.MapError, match="negative"):
        O.scalar_walk_map(0.6)
    with pytest.raises(O.MapError, match="lattice"):
        O.FiniteMap([[1.0]], [[([0.5, -1], [0.5, 0.5])]])
    with pytest.raises(O.MapError, match="distribution"):
        O.FiniteMap([[1.0]], [[([1, -1], [0.5, 0.6])]])
    with pytest.raises(O.MapError, match="positive"):
        O.FiniteMap([[1.0]], [[([0, -1], [0.5, 0.5])]])


def test_map_json_round_trip():
    again = O.FiniteMap.from_json(TWO_STATE.to_json())
    assert np.array_equal(again.P, TWO_STATE.P)
    assert again.to_json() == TWO_STATE.to_json()


def test_scalar_walk_closed_form():
    fmap = O.scalar_walk_map(0.25)
    for th in (0.0, 0.3, 1.0):
        L = O.map_ladder_transform(fmap, th).L
        assert L[0, 0] == pytest.approx(math.exp(th) / 3, rel=1e-12)
    assert O.map_lambda(fmap) == pytest.approx(math.log(3), abs=1e-10)
    for k in (1, 2, 3):
        assert O.ladder_moment(fmap, 0.5, k) == pytest.approx((math.exp(0.5) / 3) ** k, rel=1e-12)


def test_rho_shape():
    lam = O.map_lambda(TWO_STATE)
    assert O.map_ladder_transform(TWO_STATE, 0.0).rho < 1
    assert O.map_ladder_transform(TWO_STATE, lam).rho == pytest.approx(1.0, abs=1e-10)
    xs = [0.2 * lam, 0.5 * lam, 0.8 * lam]
    r = [O.map_ladder_transform(TWO_STATE, x).rho for x in xs]
    # log rho is convex in theta
    lr = np.log(r)
    assert lr[1] <= (lr[0] + lr[2]) / 2 + 1e-12


def test_perron_root():
    assert O.perron_root(np.array([[0.0, 2.0], [0.5, 0.0]])) == pytest.approx(1.0)
    M = np.array([[0.2, 0.3], [0.1, 0.4]])
    assert O.perron_root(M) == pytest.approx(max(abs(np.linalg.eigvals(M))), rel=1e-10)


def test_scaling_halves_lambda():
    lam = O.map_lambda(TWO_STATE)
    assert O.map_lambda(TWO_STATE.scaled(2)) == pytest.approx(lam / 2, rel=1e-9)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_ladder_moment_mc(k):
    th = O.map_lambda(TWO_STATE) / 2
    exact = O.ladder_moment(TWO_STATE, th, k)
    mc, se = O.ladder_moment_mc(TWO_STATE, th, k, 20_000, seed=k)
    assert abs(mc - exact) < 3 * se


def test_estimator_on_scalar_walk():
    lam, se = O.map_estimator_check(O.scalar_walk_map(), 1, 2, 10_000, seed=1)
    assert abs(lam - math.log(3)) < 3 * se
    with pytest.raises(ValueError):
        O.map_estimator_check(O.scalar_walk_map(), 2, 2, 10, seed=1)


@pytest.mark.slow
def test_estimator_z_scores_calibrated():
    # standardized errors over independent seeds should look standard normal
    fmap = O.scalar_walk_map()
    z = []
    for s in range(40):
        lam, se = O.map_estimator_check(fmap, 3, 4, 4000, seed=500 + s, horizon=400)
        z.append((lam - math.log(3)) / se)
    z = np.array(z)
    assert abs(z.mean()) < 3 / math.sqrt(z.size)
    assert 0.6 < z.std(ddof=1) < 1.5
