"""Incremental affine-gap global alignment on growing squares.

Only the L-shaped edge of the current square is stored: column ``n``
(cells ``(i, n)``, ``i = 0..n``) and row ``n`` (cells ``(n, j)``). Both share
the corner cell. Each of the S, I and D arrays gets one column and one row,
packed into a ``(6, capacity)`` array with rows ``COL_S, COL_I, COL_D,
ROW_S, ROW_I, ROW_D``.

The global score at a vertex is ``max(S, I, D)``, and the edge maximum
``M_n`` is the largest global score on the edge of the ``n x n`` square.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .scoring import ScoringError, ScoringScheme

COL_S, COL_I, COL_D, ROW_S, ROW_I, ROW_D = range(6)


def neg_sentinel(scheme: ScoringScheme, n_max: int) -> float:
    """Finite stand-in for minus infinity, safe for squares up to ``n_max``.

    Sentinel cells only occur on the boundary and never propagate into the
    interior, so this margin is generous.
    """
    smax = float(np.abs(scheme.matrix).max())
    return -4.0 * (scheme.gap_open + scheme.gap_extend * n_max + n_max * smax) - 1.0


@numba.njit(cache=True, nogil=True)
def align_init(lay, neg):
    lay[COL_S, 0] = 0.0
    lay[COL_I, 0] = neg
    lay[COL_D, 0] = neg
    lay[ROW_S, 0] = 0.0
    lay[ROW_I, 0] = neg
    lay[ROW_D, 0] = neg


@numba.njit(cache=True, nogil=True)
def align_extend(lay, n, seq_a, seq_b, score, go, ge, neg):
    """Extend the edge layers from square ``n`` to ``n + 1``; return ``M_{n+1}``.

    ``seq_a[i - 1]`` holds the ordinal of ``A_i``.
    """
    m = n + 1
    oe = go + ge
    a_m = seq_a[m - 1]
    b_m = seq_b[m - 1]
    cS = lay[COL_S, n]
    cI = lay[COL_I, n]
    cD = lay[COL_D, n]

    # column m: cells (i, m)
    pS = lay[COL_S, 0]
    pI = lay[COL_I, 0]
    pD = lay[COL_D, 0]
    lay[COL_S, 0] = neg
    lay[COL_I, 0] = -go - ge * m
    lay[COL_D, 0] = neg
    best = lay[COL_I, 0]
    for i in range(1, n + 1):
        oS = lay[COL_S, i]
        oI = lay[COL_I, i]
        oD = lay[COL_D, i]
        v = max(pS, pI, pD) + score[seq_a[i - 1], b_m]
        w = max(oS - oe, oI - ge, oD - oe)
        x = max(lay[COL_S, i - 1] - oe, lay[COL_D, i - 1] - ge)
        lay[COL_S, i] = v
        lay[COL_I, i] = w
        lay[COL_D, i] = x
        best = max(best, v, w, x)
        pS = oS
        pI = oI
        pD = oD

    # row m: cells (m, j)
    pS = lay[ROW_S, 0]
    pI = lay[ROW_I, 0]
    pD = lay[ROW_D, 0]
    lay[ROW_S, 0] = neg
    lay[ROW_I, 0] = neg
    lay[ROW_D, 0] = -go - ge * m
    best = max(best, lay[ROW_D, 0])
    for j in range(1, n + 1):
        oS = lay[ROW_S, j]
        oI = lay[ROW_I, j]
        oD = lay[ROW_D, j]
        v = max(pS, pI, pD) + score[a_m, seq_b[j - 1]]
        w = max(lay[ROW_S, j - 1] - oe, lay[ROW_I, j - 1] - ge, lay[ROW_D, j - 1] - oe)
        x = max(oS - oe, oD - ge)
        lay[ROW_S, j] = v
        lay[ROW_I, j] = w
        lay[ROW_D, j] = x
        best = max(best, v, w, x)
        pS = oS
        pI = oI
        pD = oD

    # corner (m, m)
    v = max(cS, cI, cD) + score[a_m, b_m]
    w = max(lay[ROW_S, n] - oe, lay[ROW_I, n] - ge, lay[ROW_D, n] - oe)
    x = max(lay[COL_S, n] - oe, lay[COL_D, n] - ge)
    lay[COL_S, m] = v
    lay[COL_I, m] = w
    lay[COL_D, m] = x
    lay[ROW_S, m] = v
    lay[ROW_I, m] = w
    lay[ROW_D, m] = x
    return max(best, v, w, x)


@dataclass
class LadderTrace:
    """Strict ascending ladder epochs of the edge-maximum sequence."""

    epochs: list = field(default_factory=list)
    scores: list = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    @property
    def last_score(self) -> float:
        return self.scores[-1] if self.scores else 0.0

    def update(self, n: int, m_n: float) -> bool:
        """Record ``(n, M_n)`` if it is a new strict ladder point."""
        if self.epochs and n <= self.epochs[-1]:
            raise ValueError("ladder updates must have increasing n")
        if m_n > self.last_score:
            self.epochs.append(n)
            self.scores.append(m_n)
            return True
        return False


def update_ladder(trace: LadderTrace, n: int, m_n: float):
    """Functional form of :meth:`LadderTrace.update`; returns ``(trace, is_new)``."""
    return trace, trace.update(n, m_n)


def ladder_from_maxima(maxima) -> LadderTrace:
    """Ladder trace of ``M_1, M_2, ...`` (``maxima[0]`` is ``M_0``)."""
    trace = LadderTrace()
    for n in range(1, len(maxima)):
        trace.update(n, float(maxima[n]))
    return trace


class AlignmentFrontier:
    """Edge layers of the global alignment DP on a growing square.

    Letters are pushed one pair at a time with :meth:`extend`; the frontier
    keeps the edge-maximum trace ``M_0..M_n`` and the ladder trace.
    """

    def __init__(self, scheme: ScoringScheme, n_max: int = 10_000):
        self.scheme = scheme
        self.n_max = int(n_max)
        self.neg = neg_sentinel(scheme, self.n_max)
        self._score = np.ascontiguousarray(scheme.matrix, dtype=np.float64)
        cap = 16
        self._lay = np.empty((6, cap + 1))
        self._a = np.empty(cap, dtype=np.int64)
        self._b = np.empty(cap, dtype=np.int64)
        align_init(self._lay, self.neg)
        self.n = 0
        self.maxima = [0.0]
        self.ladder = LadderTrace()

    def _grow(self):
        cap = 2 * len(self._a)
        lay = np.empty((6, cap + 1))
        lay[:, : self.n + 1] = self._lay[:, : self.n + 1]
        self._lay = lay
        self._a = np.resize(self._a, cap)
        self._b = np.resize(self._b, cap)

    def extend(self, a, b) -> float:
        """Append ``A_{n+1} = a`` and ``B_{n+1} = b`` (symbols or ordinals); return ``M_{n+1}``."""
        k = len(self.scheme.alphabet)
        a = self._ordinal(a, k)
        b = self._ordinal(b, k)
        if self.n >= self.n_max:
            raise ValueError(f"frontier is capped at n_max={self.n_max}")
        if self.n == len(self._a):
            self._grow()
        self._a[self.n] = a
        self._b[self.n] = b
        g = self.scheme
        m_n = align_extend(self._lay, self.n, self._a, self._b, self._score,
                           g.gap_open, g.gap_extend, self.neg)
        self.n += 1
        self.maxima.append(float(m_n))
        self.ladder.update(self.n, float(m_n))
        return float(m_n)

    def _ordinal(self, x, k):
        if isinstance(x, str):
            try:
                return self.scheme.alphabet.index[x]
            except KeyError:
                raise ScoringError(f"letter {x!r} not in alphabet") from None
        x = int(x)
        if not 0 <= x < k:
            raise ScoringError(f"letter ordinal {x} outside alphabet of size {k}")
        return x

    def extend_many(self, seq_a, seq_b):
        for a, b in zip(seq_a, seq_b):
            self.extend(a, b)
        return self

    @property
    def seq_a(self):
        return self._a[: self.n].copy()

    @property
    def seq_b(self):
        return self._b[: self.n].copy()

    def edge(self, which: str) -> np.ndarray:
        """Column or row ``n`` of S, I or D, e.g. ``edge("col_S")``."""
        idx = {"col_S": COL_S, "col_I": COL_I, "col_D": COL_D,
               "row_S": ROW_S, "row_I": ROW_I, "row_D": ROW_D}[which]
        return self._lay[idx, : self.n + 1].copy()

    def global_edge(self):
        """Global scores ``max(S, I, D)`` on column ``n`` and row ``n``."""
        lay = self._lay[:, : self.n + 1]
        col = np.maximum(np.maximum(lay[COL_S], lay[COL_I]), lay[COL_D])
        row = np.maximum(np.maximum(lay[ROW_S], lay[ROW_I]), lay[ROW_D])
        return col, row

    def copy(self) -> "AlignmentFrontier":
        other = object.__new__(AlignmentFrontier)
        other.__dict__.update(self.__dict__)
        other._lay = self._lay.copy()
        other._a = self._a.copy()
        other._b = self._b.copy()
        other.maxima = list(self.maxima)
        other.ladder = LadderTrace(list(self.ladder.epochs), list(self.ladder.scores))
        return other


def extend_square(frontier: AlignmentFrontier, a, b, scheme: ScoringScheme | None = None):
    """Extend ``frontier`` by one letter pair; returns ``(frontier, M_n)``."""
    if scheme is not None and scheme is not frontier.scheme:
        raise ValueError("scheme does not match the frontier's scheme")
    return frontier, frontier.extend(a, b)


def edge_maxima(frontier: AlignmentFrontier) -> list:
    return list(frontier.maxima)


def full_dp(seq_a, seq_b, scheme: ScoringScheme):
    """Plain full-rectangle DP with true ``-inf`` boundaries.

    Returns ``(S, I, D)`` arrays of shape ``(len(seq_a) + 1, len(seq_b) + 1)``.
    Used for debug dumps and as a reference for the incremental frontier.
    """
    a = scheme.alphabet.encode(seq_a) if isinstance(seq_a, str) else np.asarray(seq_a)
    b = scheme.alphabet.encode(seq_b) if isinstance(seq_b, str) else np.asarray(seq_b)
    go, ge = scheme.gap_open, scheme.gap_extend
    m, n = len(a), len(b)
    S = np.full((m + 1, n + 1), -np.inf)
    I = S.copy()
    D = S.copy()
    S[0, 0] = 0.0
    for g in range(1, m + 1):
        D[g, 0] = -go - ge * g
    for g in range(1, n + 1):
        I[0, g] = -go - ge * g
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            S[i, j] = max(S[i - 1, j - 1], I[i - 1, j - 1], D[i - 1, j - 1]) + scheme.matrix[a[i - 1], b[j - 1]]
            I[i, j] = max(S[i, j - 1] - go - ge, I[i, j - 1] - ge, D[i, j - 1] - go - ge)
            D[i, j] = max(S[i - 1, j] - go - ge, D[i - 1, j] - ge)
    return S, I, D


def global_scores(seq_a, seq_b, scheme: ScoringScheme) -> np.ndarray:
    S, I, D = full_dp(seq_a, seq_b, scheme)
    return np.maximum(np.maximum(S, I), D)


def dump_dp_tsv(seq_a, seq_b, scheme: ScoringScheme) -> str:
    """Global-score table as TSV, laid out like the usual alignment-graph figure.

    The top row is the last letter of ``B``; columns run over ``A``. The
    first column holds the ``B`` letter of each row.
    """
    if not isinstance(seq_a, str):
        seq_a = scheme.alphabet.decode(seq_a)
    if not isinstance(seq_b, str):
        seq_b = scheme.alphabet.decode(seq_b)
    G = global_scores(seq_a, seq_b, scheme)
    m, n = G.shape[0] - 1, G.shape[1] - 1

    def cell(v):
        if v == -np.inf:
            return "-inf"
        return f"{v:g}"

    lines = []
    for j in range(n, -1, -1):
        label = seq_b[j - 1] if j > 0 else ""
        lines.append("\t".join([label] + [cell(G[i, j]) for i in range(m + 1)]))
    lines.append("\t".join([""] + [""] + list(seq_a)))
    return "\n".join(lines) + "\n"
