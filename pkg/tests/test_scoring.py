import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ladder_lambda.scoring import (
    AMINO_ACIDS, BLASTP_SCHEMES, BUNDLED_MATRICES, Alphabet, MatrixParseError,
    NotLogarithmicPhase, ScoringError, ScoringScheme, UngappedAnalytics, _data_file,
    blastp_scheme, example_scheme, load_scheme, match_mismatch_scheme, parse_frequencies,
    parse_matrix, read_matrix, robinson_frequencies, solve_lambda_star, storey_siegmund_lambda,
)

EX_TEXT = """# +5/-4 nucleotide scores
   A  C  G  T
A  5 -4 -4 -4
C -4  5 -4 -4
G -4 -4  5 -4
T -4 -4 -4  5
"""


def bisect_lambda(scheme, iters=200):
    """Plain bisection on the scalar transform equation."""
    w = np.outer(scheme.freq_a, scheme.freq_b)
    f = lambda x: float((w * np.exp(x * scheme.matrix)).sum()) - 1.0
    lo, hi = 1e-9, 1.0
    while f(hi) < 0:
        hi *= 2
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) < 0 else (lo, mid)
    return 0.5 * (lo + hi)


class TestAlphabet:
    def test_rejects_duplicates_and_gaps(self):
        with pytest.raises(ScoringError):
            Alphabet(("A", "A"))
        with pytest.raises(ScoringError):
            Alphabet(("A", "-"))
        with pytest.raises(ScoringError):
            Alphabet(tuple(chr(65 + i) for i in range(33)))

    def test_encode_roundtrip(self):
        assert AMINO_ACIDS.decode(AMINO_ACIDS.encode("WYV")) == "WYV"
        with pytest.raises(ScoringError):
            AMINO_ACIDS.encode("B")


class TestParseMatrix:
    def test_worked_example_text(self):
        nt = Alphabet(tuple("ACGT"))
        s = parse_matrix(EX_TEXT, nt)
        assert s[0, 0] == 5 and s[0, 1] == -4

    def test_one_by_one(self):
        s = parse_matrix("  A\nA -1\n", Alphabet(("A",)))
        assert s.shape == (1, 1) and s[0, 0] == -1

    def test_star_and_extra_letters_ignored(self):
        text = "  A B *\nA 1 2 -9\nB 2 3 -9\n* -9 -9 1\n"
        s = parse_matrix(text, Alphabet(("B", "A")))
        assert s.tolist() == [[3, 2], [2, 1]]

    def test_asymmetric_storage_respected(self):
        s = parse_matrix("  A B\nA 1 7\nB -2 3\n", Alphabet(("A", "B")))
        assert s[0, 1] == 7 and s[1, 0] == -2

    @pytest.mark.parametrize("text, fragment", [
        ("  A B\nA 1\nB 1 2\n", "line 2"),
        ("  A B\nA 1 x\nB 1 2\n", "line 2, column 3"),
        ("  A\nA 1\n", "'B' missing"),
        ("# only comments\n", "no header"),
    ])
    def test_errors_name_location(self, text, fragment):
        with pytest.raises(MatrixParseError, match=fragment):
            parse_matrix(text, Alphabet(("A", "B")))

    def test_bundled_blosum62_matches_independent_parse(self):
        # second parser: pandas-free, split on whitespace and index by header
        text = _data_file("matrices", "BLOSUM62").read_text()
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        header = rows[0]
        table = {r[0]: dict(zip(header, map(int, r[1:]))) for r in rows[1:]}
        s = read_matrix("BLOSUM62")
        for a, i in AMINO_ACIDS.index.items():
            for b, j in AMINO_ACIDS.index.items():
                assert s[i, j] == table[a][b]
        assert s[AMINO_ACIDS.index["W"], AMINO_ACIDS.index["W"]] == 11

    @pytest.mark.parametrize("name", BUNDLED_MATRICES)
    def test_bundled_symmetric(self, name):
        s = read_matrix(name)
        assert np.array_equal(s, s.T)


class TestFrequencies:
    def test_robinson_table(self):
        f = robinson_frequencies()
        assert f.shape == (20,)
        assert abs(f.sum() - 1) < 1e-15
        # per-thousand values from the NCBI table: L is the most common letter
        assert f[AMINO_ACIDS.index["L"]] == pytest.approx(0.09019, abs=1e-12)

    def test_renormalizes_small_drift(self):
        _, f = parse_frequencies("A 0.5000004\nB 0.5\n")
        assert abs(f.sum() - 1) < 1e-15

    def test_rejects_large_drift(self):
        with pytest.raises(ScoringError):
            parse_frequencies("A 0.6\nB 0.5\n")

    def test_rejects_nonpositive_and_missing(self):
        with pytest.raises(ScoringError):
            parse_frequencies("A 1.0\nB 0.0\n")
        with pytest.raises(ScoringError):
            parse_frequencies("A 1.0\n", Alphabet(("A", "B")))


class TestScheme:
    def test_invariants(self):
        with pytest.raises(ScoringError):
            match_mismatch_scheme("AB", 1, -1, 0.0, 0.0)
        with pytest.raises(ScoringError):
            match_mismatch_scheme("AB", 1, -1, -1.0, 1.0)
        with pytest.raises(ScoringError):
            ScoringScheme(Alphabet(("A", "B")), np.eye(2), 1, 1, [0.3, 0.6], [0.5, 0.5])

    def test_gap_penalty_and_descriptor(self, blosum62):
        assert blosum62.gap_penalty(1) == 12.0
        assert blosum62.descriptor() == "BLOSUM62 11+1g"

    def test_immutable_arrays(self, blosum62):
        with pytest.raises(ValueError):
            blosum62.matrix[0, 0] = 99

    def test_digest_changes_with_gaps(self, blosum62):
        assert blosum62.digest() != blosum62.with_gaps(10, 1).digest()
        assert blosum62.digest() == blastp_scheme("BLOSUM62").digest()

    def test_load_scheme_with_two_frequency_files(self, tmp_path):
        lines = "\n".join(f"{a} 0.05" for a in AMINO_ACIDS)
        fa = tmp_path / "a.freq"
        fa.write_text(lines)
        s = load_scheme("BLOSUM62", 11, 1, fa, fa)
        assert np.allclose(s.freq_a, 0.05) and np.allclose(s.freq_b, 0.05)


class TestLambdaStar:
    def test_uniform_pm1_closed_form(self):
        # x/4 + 3/(4x) = 1 with x = e^lambda -> x = 3
        s = match_mismatch_scheme("ACGT", 1, -1, 1, 1)
        a = solve_lambda_star(s)
        assert a.lambda_star == pytest.approx(math.log(3), abs=1e-12)
        # mu* = 1/4 * 3 * 1 + 3/4 * (1/3) * (-1) = 1/2
        assert a.mu_star == pytest.approx(0.5, abs=1e-12)

    def test_zero_mean_rejected(self):
        with pytest.raises(NotLogarithmicPhase, match="not in logarithmic phase"):
            solve_lambda_star(match_mismatch_scheme("AB", 1, -1, 1, 1))

    def test_no_positive_score_rejected(self):
        with pytest.raises(NotLogarithmicPhase):
            solve_lambda_star(match_mismatch_scheme("AB", -1, -2, 1, 1))

    def test_worked_example_against_bisection(self, dna_example):
        assert solve_lambda_star(dna_example).lambda_star == pytest.approx(bisect_lambda(dna_example), abs=1e-10)

    @pytest.mark.parametrize("name", BUNDLED_MATRICES)
    def test_residual_bundled(self, name):
        s = blastp_scheme(name)
        lam = solve_lambda_star(s).lambda_star
        w = np.outer(s.freq_a, s.freq_b)
        # extended-precision residual, independent of the float solver path
        mpmath.mp.dps = 40
        tot = mpmath.fsum(mpmath.mpf(float(w[i, j])) * mpmath.exp(mpmath.mpf(lam) * int(s.matrix[i, j]))
                          for i in range(20) for j in range(20))
        assert abs(float(tot) - 1) < 1e-10

    def test_blosum62_known_value(self, blosum62):
        # ungapped lambda for BLOSUM62 with Robinson-Robinson frequencies
        assert solve_lambda_star(blosum62).lambda_star == pytest.approx(0.3176, abs=5e-4)

    @given(st.permutations(list(range(20))))
    def test_permutation_invariance(self, perm):
        s = blastp_scheme("PAM70")
        p = np.array(perm)
        alpha = Alphabet(tuple(AMINO_ACIDS.letters[i] for i in p))
        permuted = ScoringScheme(alpha, s.matrix[np.ix_(p, p)], s.gap_open, s.gap_extend,
                                 s.freq_a[p] / s.freq_a[p].sum(), s.freq_b[p] / s.freq_b[p].sum())
        assert solve_lambda_star(permuted).lambda_star == pytest.approx(
            solve_lambda_star(s).lambda_star, abs=1e-12)

    @given(st.floats(0.1, 10.0))
    def test_scaling(self, c):
        s = example_scheme()
        base = solve_lambda_star(s).lambda_star
        assert solve_lambda_star(s.scaled(c)).lambda_star == pytest.approx(base / c, abs=1e-10)


class TestStoreySiegmund:
    def test_zero_correction(self):
        a = UngappedAnalytics(0.3, 1.2)
        assert storey_siegmund_lambda(a, 11, 1, 0.0) == 0.3

    def test_arithmetic(self):
        a = UngappedAnalytics(math.log(3), 0.5)
        # e^{-2 ln 3} = 1/9, e^{ln 3} - 1 = 2 -> ln 3 - 2/0.5 * (1/9) / 2
        expected = math.log(3) - float(Fraction(2, 9))
        assert storey_siegmund_lambda(a, 2, 1, 1.0) == pytest.approx(expected, abs=1e-14)

    def test_zero_extend_undefined(self):
        with pytest.raises(ZeroDivisionError):
            storey_siegmund_lambda(UngappedAnalytics(0.3, 1.0), 11, 0, 1.0)


def test_blastp_table_covers_bundled():
    assert set(BLASTP_SCHEMES) == set(BUNDLED_MATRICES)
