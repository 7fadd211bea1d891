"""Alphabets, scoring schemes and the ungapped scale parameter.

Matrix files use the NCBI/EMBOSS whitespace layout: ``#`` comment lines, a
header row of column letters, then one row per letter. Columns or rows for
letters outside the requested alphabet (``B``, ``Z``, ``X``, ``*``) are
skipped. Frequency files hold one ``letter probability`` pair per line.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

GAP_SYMBOLS = frozenset({"-", "−", "Δ"})
MAX_ALPHABET = 32

#: Matrices shipped with the package, keyed by name.
BUNDLED_MATRICES = ("BLOSUM45", "BLOSUM62", "BLOSUM80", "PAM30", "PAM70")

#: Schemes offered by BLASTP, as (matrix, gap_open, gap_extend) with
#: w_g = gap_open + gap_extend * g.
BLASTP_SCHEMES = {
    "BLOSUM80": (10.0, 1.0),
    "BLOSUM62": (11.0, 1.0),
    "BLOSUM45": (14.0, 2.0),
    "PAM30": (9.0, 1.0),
    "PAM70": (10.0, 1.0),
}


class ScoringError(ValueError):
    """Raised for malformed matrices, frequencies or schemes."""


class MatrixParseError(ScoringError):
    pass


class NotLogarithmicPhase(ScoringError):
    pass


@dataclass(frozen=True)
class Alphabet:
    letters: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        letters = tuple(self.letters)
        if not 1 <= len(letters) <= MAX_ALPHABET:
            raise ScoringError(f"alphabet size must be 1..{MAX_ALPHABET}, got {len(letters)}")
        if len(set(letters)) != len(letters):
            raise ScoringError("alphabet contains duplicate symbols")
        bad = [a for a in letters if a in GAP_SYMBOLS]
        if bad:
            raise ScoringError(f"gap symbol {bad[0]!r} cannot be an alphabet letter")
        object.__setattr__(self, "letters", letters)
        object.__setattr__(self, "index", {a: i for i, a in enumerate(letters)})

    def __len__(self):
        return len(self.letters)

    def __iter__(self):
        return iter(self.letters)

    def encode(self, text) -> np.ndarray:
        """Map a string (or iterable of symbols) to an int array of ordinals."""
        try:
            return np.array([self.index[c] for c in text], dtype=np.int64)
        except KeyError as exc:
            raise ScoringError(f"letter {exc.args[0]!r} not in alphabet") from None

    def decode(self, codes) -> str:
        return "".join(self.letters[int(c)] for c in codes)


AMINO_ACIDS = Alphabet(tuple("ARNDCQEGHILKMFPSTWYV"))
NUCLEOTIDES = Alphabet(tuple("ACGT"))


@dataclass(frozen=True)
class ScoringScheme:
    """Substitution scores, affine gap penalty and letter frequencies.

    The gap penalty is ``w_g = gap_open + gap_extend * g``, so BLAST's
    "open 11, extend 1" is ``gap_open=11, gap_extend=1`` (w_1 = 12).
    """

    alphabet: Alphabet
    matrix: np.ndarray
    gap_open: float
    gap_extend: float
    freq_a: np.ndarray
    freq_b: np.ndarray
    name: str = ""

    def __post_init__(self):
        k = len(self.alphabet)
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.shape != (k, k):
            raise ScoringError(f"matrix shape {matrix.shape} does not match alphabet size {k}")
        if not np.all(np.isfinite(matrix)):
            raise ScoringError("matrix entries must be finite")
        freq_a = _checked_freqs(self.freq_a, k, "freq_a")
        freq_b = _checked_freqs(self.freq_b, k, "freq_b")
        go, ge = float(self.gap_open), float(self.gap_extend)
        if go < 0 or ge < 0 or not go + ge > 0:
            raise ScoringError("need gap_open >= 0, gap_extend >= 0 and gap_open + gap_extend > 0")
        for name, arr in (("matrix", matrix), ("freq_a", freq_a), ("freq_b", freq_b)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gap_open", go)
        object.__setattr__(self, "gap_extend", ge)

    def gap_penalty(self, g: int) -> float:
        return self.gap_open + self.gap_extend * g

    def mean_score(self) -> float:
        return float(self.freq_a @ self.matrix @ self.freq_b)

    def digest(self) -> str:
        """Short content hash identifying the scheme in reports."""
        h = hashlib.sha256()
        h.update("".join(self.alphabet.letters).encode())
        for arr in (self.matrix, self.freq_a, self.freq_b):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(np.array([self.gap_open, self.gap_extend]).tobytes())
        return h.hexdigest()[:16]

    def descriptor(self) -> str:
        name = self.name or "custom"
        return f"{name} {self.gap_open:g}+{self.gap_extend:g}g"

    def scaled(self, c: float) -> "ScoringScheme":
        """Multiply all scores and both gap parameters by ``c``."""
        return ScoringScheme(self.alphabet, self.matrix * c, self.gap_open * c,
                             self.gap_extend * c, self.freq_a, self.freq_b, self.name)

    def with_gaps(self, gap_open: float, gap_extend: float) -> "ScoringScheme":
        return ScoringScheme(self.alphabet, self.matrix, gap_open, gap_extend,
                             self.freq_a, self.freq_b, self.name)


@dataclass(frozen=True)
class UngappedAnalytics:
    lambda_star: float
    mu_star: float


def _checked_freqs(freqs, k, label):
    arr = np.array(freqs, dtype=np.float64)
    if arr.shape != (k,):
        raise ScoringError(f"{label} must have length {k}")
    if np.any(arr <= 0):
        raise ScoringError(f"{label} must be strictly positive")
    if abs(arr.sum() - 1.0) > 1e-12:
        raise ScoringError(f"{label} sums to {arr.sum():.15g}, not 1")
    return arr


def _numeric(token, line_no, col_no):
    try:
        return float(token)
    except ValueError:
        raise MatrixParseError(
            f"line {line_no}, column {col_no}: non-numeric cell {token!r}") from None


def parse_matrix(text, alphabet: Alphabet) -> np.ndarray:
    """Parse an NCBI-style score table into a dense matrix over ``alphabet``.

    Parameters
    ----------
    text : str or iterable of str
        Whole file contents, or an iterable of lines.
    alphabet : Alphabet
        Letters to extract, in the order of the returned matrix.

    Returns
    -------
    numpy.ndarray
        ``(len(alphabet), len(alphabet))`` float array with ``s(a, b)`` at
        ``[alphabet.index[a], alphabet.index[b]]``.
    """
    lines = text.splitlines() if isinstance(text, str) else list(text)
    header = None
    rows = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if header is None:
            header = tokens
            if len(set(header)) != len(header):
                raise MatrixParseError(f"line {line_no}: duplicate letters in header")
            continue
        letter, cells = tokens[0], tokens[1:]
        if len(cells) != len(header):
            raise MatrixParseError(
                f"line {line_no}: row {letter!r} has {len(cells)} cells, header has {len(header)}")
        if letter in rows:
            raise MatrixParseError(f"line {line_no}: duplicate row {letter!r}")
        if letter in alphabet.index:
            rows[letter] = [_numeric(c, line_no, col + 2) for col, c in enumerate(cells)]
        else:
            # validate skipped rows too, so a corrupt file is never half-read
            for col, c in enumerate(cells):
                _numeric(c, line_no, col + 2)
    if header is None:
        raise MatrixParseError("no header row found")
    col_of = {a: i for i, a in enumerate(header)}
    for a in alphabet:
        if a not in col_of:
            raise MatrixParseError(f"letter {a!r} missing from header")
        if a not in rows:
            raise MatrixParseError(f"letter {a!r} has no row")
    k = len(alphabet)
    out = np.empty((k, k))
    for a, i in alphabet.index.items():
        row = rows[a]
        for b, j in alphabet.index.items():
            out[i, j] = row[col_of[b]]
    return out


def parse_frequencies(text, alphabet: Alphabet | None = None):
    """Parse ``letter probability`` lines.

    Returns ``(alphabet, freqs)``. When ``alphabet`` is given the vector is
    ordered to match it and every letter must be present. Totals within
    1e-6 of one are renormalized; anything further off is rejected.
    """
    lines = text.splitlines() if isinstance(text, str) else list(text)
    pairs = {}
    order = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) != 2:
            raise ScoringError(f"line {line_no}: expected 'letter probability'")
        letter, value = tokens
        if letter in pairs:
            raise ScoringError(f"line {line_no}: duplicate letter {letter!r}")
        pairs[letter] = _numeric(value, line_no, 2)
        order.append(letter)
    if alphabet is None:
        alphabet = Alphabet(tuple(order))
    missing = [a for a in alphabet if a not in pairs]
    if missing:
        raise ScoringError(f"no frequency for letter {missing[0]!r}")
    freqs = np.array([pairs[a] for a in alphabet])
    if np.any(freqs <= 0):
        raise ScoringError("frequencies must be strictly positive")
    total = freqs.sum()
    if abs(total - 1.0) > 1e-6:
        raise ScoringError(f"frequencies sum to {total:.9g}; more than 1e-6 away from 1")
    return alphabet, freqs / total


def _data_file(*parts):
    return resources.files("ladder_lambda").joinpath("data", *parts)


def read_matrix(source, alphabet: Alphabet = AMINO_ACIDS) -> np.ndarray:
    """Load a bundled matrix by name (``"BLOSUM62"``) or a matrix file path."""
    name = str(source)
    if name.upper() in BUNDLED_MATRICES and not Path(name).exists():
        text = _data_file("matrices", name.upper()).read_text()
    else:
        text = Path(name).read_text()
    return parse_matrix(text, alphabet)


def robinson_frequencies() -> np.ndarray:
    """Robinson-Robinson amino-acid frequencies in ``AMINO_ACIDS`` order."""
    _, freqs = parse_frequencies(_data_file("robinson_robinson.freq").read_text(), AMINO_ACIDS)
    return freqs


def load_scheme(matrix, gap_open, gap_extend, freq_path=None, freq_path_b=None):
    """Build a protein scheme from a matrix name/path and optional frequency files.

    Without frequency files the bundled Robinson-Robinson table is used for
    both sequences.
    """
    alphabet = AMINO_ACIDS
    if freq_path is not None:
        alphabet, freq_a = parse_frequencies(Path(freq_path).read_text())
    else:
        freq_a = robinson_frequencies()
    if freq_path_b is not None:
        _, freq_b = parse_frequencies(Path(freq_path_b).read_text(), alphabet)
    else:
        freq_b = freq_a
    s = read_matrix(matrix, alphabet)
    name = Path(str(matrix)).name.upper() if str(matrix).upper() in BUNDLED_MATRICES else str(matrix)
    return ScoringScheme(alphabet, s, gap_open, gap_extend, freq_a, freq_b, name=name)


def blastp_scheme(name: str) -> ScoringScheme:
    go, ge = BLASTP_SCHEMES[name]
    return load_scheme(name, go, ge)


def match_mismatch_scheme(letters, match, mismatch, gap_open, gap_extend, freqs=None):
    """Scheme with ``match`` on the diagonal and ``mismatch`` elsewhere."""
    alphabet = Alphabet(tuple(letters))
    k = len(alphabet)
    s = np.full((k, k), float(mismatch))
    np.fill_diagonal(s, float(match))
    f = np.full(k, 1.0 / k) if freqs is None else np.asarray(freqs, dtype=float)
    return ScoringScheme(alphabet, s, gap_open, gap_extend, f, f, name=f"{match:+g}/{mismatch:+g}")


def example_scheme() -> ScoringScheme:
    """Nucleotide +5/-4 scheme with w_g = 3 + 2g and uniform letters."""
    return match_mismatch_scheme("ACGT", 5, -4, 3.0, 2.0)


def _transform(scheme: ScoringScheme):
    w = np.outer(scheme.freq_a, scheme.freq_b).ravel()
    s = scheme.matrix.ravel()
    return w, s


def solve_lambda_star(scheme: ScoringScheme) -> UngappedAnalytics:
    """Positive root of sum_ab p_a p'_b exp(lambda s(a,b)) = 1, plus mu*.

    Raises
    ------
    NotLogarithmicPhase
        If the expected score is not negative or no score is positive.
    """
    w, s = _transform(scheme)
    mean = float(w @ s)
    smax = float(s.max())
    if not mean < 0 or not smax > 0:
        raise NotLogarithmicPhase(
            f"not in logarithmic phase (mean score {mean:.6g}, max score {smax:.6g})")

    def f(lam):
        return float(w @ np.exp(lam * s)) - 1.0

    hi = 1.0 / smax
    for _ in range(200):
        if f(hi) > 0:
            break
        hi *= 2.0
    else:
        raise ScoringError("no sign change found while bracketing lambda*")
    lo = hi / 2.0
    for _ in range(2000):
        if f(lo) < 0:
            break
        lo /= 2.0
    else:
        raise ScoringError("no sign change found while bracketing lambda*")
    lam = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    # Newton polish; f is convex so steps from the right of the root stay safe
    for _ in range(3):
        e = w * np.exp(lam * s)
        deriv = float(e @ s)
        step = (float(e.sum()) - 1.0) / deriv
        if not lo <= lam - step <= hi:
            break
        lam -= step
        if abs(step) < 1e-16:
            break
    mu = float((w * np.exp(lam * s)) @ s)
    return UngappedAnalytics(lambda_star=float(lam), mu_star=mu)


def storey_siegmund_lambda(analytics: UngappedAnalytics, gap_open, gap_extend, big_lambda):
    """Storey-Siegmund correction of lambda* for affine gaps.

    ``big_lambda`` is the caller-supplied gap-length constant; there is no
    recipe for computing it here.
    """
    if gap_extend == 0:
        raise ZeroDivisionError("gap_extend must be positive for the Storey-Siegmund formula")
    if big_lambda < 0:
        raise ValueError("big_lambda must be nonnegative")
    ls, mu = analytics.lambda_star, analytics.mu_star
    return ls - 2.0 / mu * big_lambda * math.exp(-ls * gap_open) / math.expm1(ls * gap_extend)
