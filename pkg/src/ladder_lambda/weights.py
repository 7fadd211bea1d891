"""Importance weights for sequence pairs stopped at a ladder epoch.

The trial chain generates alignment paths; the target model generates only
the sequences. For a stopped pair ``(A[1..N], B[1..N])`` the reciprocal
weight is the trial mass of every path that produces that pair, divided by
its target probability. It is assembled from three quantities:

* the scaled path sums ``W^S, W^I, W^D`` on the square ``[0, N]^2``,
  extended one L-shaped edge at a time like the alignment DP;
* closed-form tail sums over the strip ``0 <= i <= N < j`` (``U``) and its
  mirror image ``0 <= j <= N < i`` (``V``), where letters beyond ``N`` are
  summed out and the per-row factor no longer depends on ``j``;
* ``1/W = -W^S_{N,N} + U^S_N + U^D_N + V^S_N + V^I_N``.

Atoms are indexed ``S=0, I=1, D=2`` and ``t[x, y]`` is the transition
probability from atom ``x`` to atom ``y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .align import COL_D, COL_I, COL_S, ROW_D, ROW_I, ROW_S
from .scoring import ScoringError, ScoringScheme

SCALE_HI = 1e150
SCALE_LO = 1e-150


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class EpochWeight:
    k: int
    N: int
    inv_w: float
    w: float
    log_inv_w: float


def ratio_tables(model, scheme: ScoringScheme):
    """Return ``(R, rA, rB)``.

    ``R[a, b] = q[a, b] / (p_a p'_b)`` is the substitution factor inside the
    square; ``rA[a] = sum_b q[a, b] / p_a`` and ``rB[b] = sum_a q[a, b] / p'_b``
    are the factors in the two strips where one letter is summed out.
    """
    p, pp = scheme.freq_a, scheme.freq_b
    if np.any(p <= 0) or np.any(pp <= 0):
        raise WeightError("weight undefined: a target letter frequency is zero")
    if not (np.allclose(model.p_a, p, rtol=0, atol=1e-12)
            and np.allclose(model.p_b, pp, rtol=0, atol=1e-12)):
        raise WeightError("trial gap emissions must equal the target letter frequencies")
    q = model.q
    R = q / np.outer(p, pp)
    rA = q.sum(axis=1) / p
    rB = q.sum(axis=0) / pp
    return R, rA, rB


@numba.njit(cache=True, nogil=True)
def weight_init(wl):
    for r in (COL_S, ROW_S):
        wl[r, 0] = 1.0
    for r in (COL_I, COL_D, ROW_I, ROW_D):
        wl[r, 0] = 0.0


@numba.njit(cache=True, nogil=True)
def weight_extend(wl, n, seq_a, seq_b, R, t):
    """Extend the scaled W layers from square ``n`` to ``n + 1``."""
    m = n + 1
    a_m = seq_a[m - 1]
    b_m = seq_b[m - 1]
    tSS, tSI, tSD = t[0, 0], t[0, 1], t[0, 2]
    tIS, tII, tID = t[1, 0], t[1, 1], t[1, 2]
    tDS, tDI, tDD = t[2, 0], t[2, 1], t[2, 2]
    cS = wl[COL_S, n]
    cI = wl[COL_I, n]
    cD = wl[COL_D, n]

    # column m: cells (i, m)
    pS = wl[COL_S, 0]
    pI = wl[COL_I, 0]
    pD = wl[COL_D, 0]
    wl[COL_I, 0] = tSI * pS + tII * pI + tDI * pD
    wl[COL_S, 0] = 0.0
    wl[COL_D, 0] = 0.0
    for i in range(1, n + 1):
        oS = wl[COL_S, i]
        oI = wl[COL_I, i]
        oD = wl[COL_D, i]
        wl[COL_S, i] = R[seq_a[i - 1], b_m] * (tSS * pS + tIS * pI + tDS * pD)
        wl[COL_I, i] = tSI * oS + tII * oI + tDI * oD
        wl[COL_D, i] = tSD * wl[COL_S, i - 1] + tID * wl[COL_I, i - 1] + tDD * wl[COL_D, i - 1]
        pS = oS
        pI = oI
        pD = oD

    # row m: cells (m, j)
    pS = wl[ROW_S, 0]
    pI = wl[ROW_I, 0]
    pD = wl[ROW_D, 0]
    wl[ROW_D, 0] = tSD * pS + tID * pI + tDD * pD
    wl[ROW_S, 0] = 0.0
    wl[ROW_I, 0] = 0.0
    for j in range(1, n + 1):
        oS = wl[ROW_S, j]
        oI = wl[ROW_I, j]
        oD = wl[ROW_D, j]
        wl[ROW_S, j] = R[a_m, seq_b[j - 1]] * (tSS * pS + tIS * pI + tDS * pD)
        wl[ROW_I, j] = tSI * wl[ROW_S, j - 1] + tII * wl[ROW_I, j - 1] + tDI * wl[ROW_D, j - 1]
        wl[ROW_D, j] = tSD * oS + tID * oI + tDD * oD
        pS = oS
        pI = oI
        pD = oD

    s = R[a_m, b_m] * (tSS * cS + tIS * cI + tDS * cD)
    ins = tSI * wl[ROW_S, n] + tII * wl[ROW_I, n] + tDI * wl[ROW_D, n]
    dele = tSD * wl[COL_S, n] + tID * wl[COL_I, n] + tDD * wl[COL_D, n]
    wl[COL_S, m] = s
    wl[COL_I, m] = ins
    wl[COL_D, m] = dele
    wl[ROW_S, m] = s
    wl[ROW_I, m] = ins
    wl[ROW_D, m] = dele


@numba.njit(cache=True, nogil=True)
def weight_rescale(wl, m):
    """Renormalize layers of square ``m`` if they leave [1e-150, 1e150].

    Returns the natural log of the factor divided out (0.0 if untouched).
    """
    big = 0.0
    for r in range(6):
        for i in range(m + 1):
            if wl[r, i] > big:
                big = wl[r, i]
    if big == 0.0 or (big <= SCALE_HI and big >= SCALE_LO):
        return 0.0
    inv = 1.0 / big
    for r in range(6):
        for i in range(m + 1):
            wl[r, i] *= inv
    return math.log(big)


@numba.njit(cache=True, nogil=True)
def tail_u(wl, N, seq_a, rA, t, out):
    """Fill ``out[T, i]`` with the scaled row tail sums U^T_{i,N}, i = 0..N."""
    tSS, tSI, tSD = t[0, 0], t[0, 1], t[0, 2]
    tIS, tII, tID = t[1, 0], t[1, 1], t[1, 2]
    tDS, tDI, tDD = t[2, 0], t[2, 1], t[2, 2]
    c = 1.0 / (1.0 - tII)
    uS = 0.0
    uD = 0.0
    uI = c * wl[COL_I, 0]
    out[0, 0] = uS
    out[1, 0] = uI
    out[2, 0] = uD
    for i in range(1, N + 1):
        nS = rA[seq_a[i - 1]] * (tSS * uS + tIS * uI + tDS * uD) + wl[COL_S, i]
        nD = tSD * uS + tID * uI + tDD * uD
        nI = c * (tSI * nS + tDI * nD + wl[COL_I, i])
        uS = nS
        uI = nI
        uD = nD
        out[0, i] = uS
        out[1, i] = uI
        out[2, i] = uD


@numba.njit(cache=True, nogil=True)
def tail_v(wl, N, seq_b, rB, t, out):
    """Fill ``out[T, j]`` with the scaled column tail sums V^T_{N,j}, j = 0..N."""
    tSS, tSI, tSD = t[0, 0], t[0, 1], t[0, 2]
    tIS, tII, tID = t[1, 0], t[1, 1], t[1, 2]
    tDS, tDI, tDD = t[2, 0], t[2, 1], t[2, 2]
    c = 1.0 / (1.0 - tDD)
    vS = 0.0
    vI = 0.0
    vD = c * wl[ROW_D, 0]
    out[0, 0] = vS
    out[1, 0] = vI
    out[2, 0] = vD
    for j in range(1, N + 1):
        nS = rB[seq_b[j - 1]] * (tSS * vS + tDS * vD + tIS * vI) + wl[ROW_S, j]
        nI = tSI * vS + tDI * vD + tII * vI
        nD = c * (tSD * nS + tID * nI + wl[ROW_D, j])
        vS = nS
        vI = nI
        vD = nD
        out[0, j] = vS
        out[1, j] = vI
        out[2, j] = vD


@numba.njit(cache=True, nogil=True)
def epoch_inv_weight(wl, N, seq_a, seq_b, rA, rB, t):
    """Scaled ``1/W`` for the pair stopped at square ``N`` (allocation free)."""
    tSS, tSI, tSD = t[0, 0], t[0, 1], t[0, 2]
    tIS, tII, tID = t[1, 0], t[1, 1], t[1, 2]
    tDS, tDI, tDD = t[2, 0], t[2, 1], t[2, 2]
    cu = 1.0 / (1.0 - tII)
    cv = 1.0 / (1.0 - tDD)
    uS = 0.0
    uD = 0.0
    uI = cu * wl[COL_I, 0]
    vS = 0.0
    vI = 0.0
    vD = cv * wl[ROW_D, 0]
    for i in range(1, N + 1):
        nS = rA[seq_a[i - 1]] * (tSS * uS + tIS * uI + tDS * uD) + wl[COL_S, i]
        nD = tSD * uS + tID * uI + tDD * uD
        uI = cu * (tSI * nS + tDI * nD + wl[COL_I, i])
        uS = nS
        uD = nD
        mS = rB[seq_b[i - 1]] * (tSS * vS + tDS * vD + tIS * vI) + wl[ROW_S, i]
        mI = tSI * vS + tDI * vD + tII * vI
        vD = cv * (tSD * mS + tID * mI + wl[ROW_D, i])
        vS = mS
        vI = mI
    return -wl[COL_S, N] + uS + uD + vS + vI


def _check_tails(t):
    if not t[1, 1] < 1.0:
        raise WeightError("divergent tail: t_II must be < 1")
    if not t[2, 2] < 1.0:
        raise WeightError("divergent tail: t_DD must be < 1")


class WeightFrontier:
    """Scaled W layers on a growing square, in lockstep with the alignment.

    Values are stored divided by ``exp(log_scale)``. With ``rescale=False``
    the layers are plain doubles and may overflow.
    """

    def __init__(self, model, scheme: ScoringScheme, rescale: bool = True):
        self.model = model
        self.scheme = scheme
        self.rescale = rescale
        self.R, self.rA, self.rB = ratio_tables(model, scheme)
        self.t = np.ascontiguousarray(model.t, dtype=np.float64)
        _check_tails(self.t)
        cap = 16
        self._wl = np.empty((6, cap + 1))
        self._a = np.empty(cap, dtype=np.int64)
        self._b = np.empty(cap, dtype=np.int64)
        weight_init(self._wl)
        self.n = 0
        self.log_scale = 0.0

    def _grow(self):
        cap = 2 * len(self._a)
        wl = np.empty((6, cap + 1))
        wl[:, : self.n + 1] = self._wl[:, : self.n + 1]
        self._wl = wl
        self._a = np.resize(self._a, cap)
        self._b = np.resize(self._b, cap)

    def extend(self, a, b):
        alphabet = self.scheme.alphabet
        a = alphabet.index[a] if isinstance(a, str) else int(a)
        b = alphabet.index[b] if isinstance(b, str) else int(b)
        k = len(alphabet)
        if not (0 <= a < k and 0 <= b < k):
            raise ScoringError("letter outside alphabet")
        if self.n == len(self._a):
            self._grow()
        self._a[self.n] = a
        self._b[self.n] = b
        weight_extend(self._wl, self.n, self._a, self._b, self.R, self.t)
        self.n += 1
        if self.rescale:
            self.log_scale += weight_rescale(self._wl, self.n)
        return self

    def extend_many(self, seq_a, seq_b):
        for a, b in zip(seq_a, seq_b):
            self.extend(a, b)
        return self

    def edge(self, which: str, descaled: bool = True) -> np.ndarray:
        """Column or row ``n`` of W^S, W^I or W^D, e.g. ``edge("row_D")``."""
        idx = {"col_S": COL_S, "col_I": COL_I, "col_D": COL_D,
               "row_S": ROW_S, "row_I": ROW_I, "row_D": ROW_D}[which]
        vals = self._wl[idx, : self.n + 1].copy()
        return vals * math.exp(self.log_scale) if descaled else vals

    def tail_sums_u(self, descaled: bool = True) -> np.ndarray:
        """Array ``(3, N + 1)`` of U^T_{i,N} for T in (S, I, D), i = 0..N."""
        out = np.empty((3, self.n + 1))
        tail_u(self._wl, self.n, self._a, self.rA, self.t, out)
        return out * math.exp(self.log_scale) if descaled else out

    def tail_sums_v(self, descaled: bool = True) -> np.ndarray:
        """Array ``(3, N + 1)`` of V^T_{N,j} for T in (S, I, D), j = 0..N."""
        out = np.empty((3, self.n + 1))
        tail_v(self._wl, self.n, self._b, self.rB, self.t, out)
        return out * math.exp(self.log_scale) if descaled else out

    def log_inv_weight(self) -> float:
        if self.n == 0:
            raise WeightError("no stopped pair at square 0")
        inv = epoch_inv_weight(self._wl, self.n, self._a, self._b, self.rA, self.rB, self.t)
        if not inv > 0 or not math.isfinite(inv):
            raise WeightError(f"nonpositive or non-finite 1/W ({inv!r}); scaling failure")
        return math.log(inv) + self.log_scale


def extend_weight_square(frontier: WeightFrontier, a, b, model=None, scheme=None):
    return frontier.extend(a, b)


def tail_sums_U(frontier: WeightFrontier, model=None, N=None):
    """Return ``(U^S_N, U^D_N, full_table)`` for the frontier's current square."""
    if N is not None and N != frontier.n:
        raise ValueError("frontier must be complete to square N")
    table = frontier.tail_sums_u()
    return table[0, -1], table[2, -1], table


def tail_sums_V(frontier: WeightFrontier, model=None, N=None):
    """Return ``(V^S_N, V^I_N, full_table)`` for the frontier's current square."""
    if N is not None and N != frontier.n:
        raise ValueError("frontier must be complete to square N")
    table = frontier.tail_sums_v()
    return table[0, -1], table[1, -1], table


def epoch_weight(frontier: WeightFrontier, model=None, trace=None, k: int | None = None) -> EpochWeight:
    """Weight for the pair stopped at the frontier's current square.

    When ``trace`` and ``k`` are given, the frontier must sit exactly at the
    ``k``-th ladder epoch.
    """
    if trace is not None and k is not None:
        if len(trace.epochs) < k:
            raise ValueError(f"trace has only {len(trace.epochs)} epochs")
        if trace.epochs[k - 1] != frontier.n:
            raise ValueError("frontier is not at the requested epoch")
    log_inv = frontier.log_inv_weight()
    return EpochWeight(k=k or 0, N=frontier.n, inv_w=math.exp(log_inv),
                       w=math.exp(-log_inv), log_inv_w=log_inv)
