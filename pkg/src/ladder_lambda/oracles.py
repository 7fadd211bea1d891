"""Ground truth for the importance-sampling pipeline.

* crude Monte Carlo under the independent-letters model (unit weights);
* exhaustive enumeration of trial-chain paths for small instances;
* finite Markov additive processes on an integer lattice, whose ladder
  transform and scale parameter are computed by exact linear algebra.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .align import align_extend, align_init, neg_sentinel
from .estimator import RecordSet, solve_lambda, standard_error
from .scoring import ScoringScheme
from .trial import _cdf, _draw, replicate_stream

# ---------------------------------------------------------------------------
# crude Monte Carlo


@numba.njit(cache=True, nogil=True)
def crude_kernel(seq_a, seq_b, score, go, ge, neg, k_max, horizon, lay, out_scores):
    """Align i.i.d. letters until ``k_max`` ladder epochs or ``horizon``.

    Returns ``(epochs_reached, n)``.
    """
    align_init(lay, neg)
    k = 0
    last = 0.0
    for n in range(horizon):
        m_n = align_extend(lay, n, seq_a, seq_b, score, go, ge, neg)
        if m_n > last:
            last = m_n
            out_scores[k] = m_n
            k += 1
            if k == k_max:
                return k, n + 1
    return k, horizon


@numba.njit(cache=True, nogil=True)
def _fill_letters(gen, cum, out):
    for i in range(out.shape[0]):
        out[i] = _draw(cum, gen.random())


@dataclass
class CrudeResult:
    records: RecordSet
    reach_fraction: np.ndarray
    reach_stderr: np.ndarray
    horizon: int


def crude_mc_ladder(scheme: ScoringScheme, k_max: int, horizon: int, replicates: int,
                    seed: int = 0) -> CrudeResult:
    """Ladder scores of i.i.d. sequence pairs, run to epoch ``k_max`` or ``horizon``.

    ``reach_fraction[k-1]`` is the fraction of pairs reaching epoch ``k``
    within the horizon, a lower bound on the probability of ever reaching it.
    """
    if horizon < 1:
        raise ValueError("horizon must be positive")
    score = np.ascontiguousarray(scheme.matrix)
    neg = neg_sentinel(scheme, horizon)
    lay = np.empty((6, horizon + 2))
    cum_a, cum_b = _cdf(scheme.freq_a), _cdf(scheme.freq_b)
    seq_a = np.empty(horizon, dtype=np.int64)
    seq_b = np.empty(horizon, dtype=np.int64)
    out = np.empty(k_max)
    scores = np.zeros((replicates, k_max))
    log_w = np.full((replicates, k_max), -np.inf)
    stop = np.zeros(replicates, dtype=np.int64)
    for r in range(replicates):
        gen = replicate_stream(seed, r)
        _fill_letters(gen, cum_a, seq_a)
        _fill_letters(gen, cum_b, seq_b)
        k, n = crude_kernel(seq_a, seq_b, score, scheme.gap_open, scheme.gap_extend, neg,
                            k_max, horizon, lay, out)
        scores[r, :k] = out[:k]
        log_w[r, :k] = 0.0
        stop[r] = n
    rs = RecordSet(scores, log_w, np.zeros(replicates, dtype=bool), stop)
    reached = np.isfinite(log_w).mean(axis=0)
    se = np.sqrt(reached * (1 - reached) / max(replicates, 1))
    return CrudeResult(rs, reached, se, horizon)


# ---------------------------------------------------------------------------
# trial-path enumeration

ENUM_MAX_ALPHABET = 2
ENUM_MAX_N = 5


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class CellEvent:
    """Paths from the origin whose last step is atom ``T`` into ``(i, j)``,
    emitting ``A[1..i]`` and ``B[1..j]``."""

    T: int
    i: int
    j: int
    seq_a: tuple
    seq_b: tuple


@dataclass(frozen=True)
class PreimageEvent:
    """Paths that produce the stopped pair ``(A[1..N], B[1..N])``: every
    path reaching ``min(i, j) = N`` with those letters."""

    seq_a: tuple
    seq_b: tuple


@dataclass(frozen=True)
class FirstStepEvent:
    """The first step is ``atom`` emitting ``a`` and/or ``b`` (None for a gap)."""

    atom: int
    a: int | None = None
    b: int | None = None


@dataclass
class EnumerationResult:
    mass: float
    pruned: float
    paths: int


def enumerate_q_mass(model, scheme: ScoringScheme, event, cutoff: float | None = None,
                     rel_cutoff: float = 1e-18,
                     max_paths: int = 50_000_000) -> EnumerationResult:
    """Exact trial probability of ``event`` by walking every path.

    The walk is a plain depth-first search over steps; there is no
    memoization. Letters at positions beyond ``N`` in a preimage event are
    unconstrained, so their emission probabilities are summed in place.
    Preimage branches whose running mass drops below ``cutoff`` (default
    ``rel_cutoff`` times the target probability of the pair) are dropped and
    their mass is added to ``pruned``, an upper bound on the neglected
    probability.
    """
    K = len(scheme.alphabet)
    if K > ENUM_MAX_ALPHABET:
        raise EnumerationTooLarge(f"alphabet size {K} > {ENUM_MAX_ALPHABET}")
    t, q, pa, pb = model.t, model.q, model.p_a, model.p_b

    if isinstance(event, FirstStepEvent):
        T = event.atom
        if T == 0:
            e = q[event.a, event.b]
        elif T == 1:
            e = pb[event.b]
        else:
            e = pa[event.a]
        return EnumerationResult(float(t[0, T] * e), 0.0, 1)

    if isinstance(event, CellEvent):
        A, B = event.seq_a, event.seq_b
        if max(event.i, event.j) > ENUM_MAX_N:
            raise EnumerationTooLarge("cell beyond enumeration bound")
        ti, tj = event.i, event.j
        if len(A) < ti or len(B) < tj:
            raise ValueError("event letters shorter than the target cell")
        bound_a, bound_b = ti, tj
    elif isinstance(event, PreimageEvent):
        A, B = event.seq_a, event.seq_b
        if len(A) != len(B):
            raise ValueError("stopped pair must have equal lengths")
        N = len(A)
        if N > ENUM_MAX_N:
            raise EnumerationTooLarge(f"N = {N} > {ENUM_MAX_N}")
        bound_a = bound_b = N
    else:
        raise TypeError(f"unsupported event {event!r}")

    def emission(atom, i, j):
        # i, j: coordinates after the step
        if atom == 0:
            ka, kb = i <= bound_a, j <= bound_b
            if ka and kb:
                return q[A[i - 1], B[j - 1]]
            if ka:
                return q[A[i - 1], :].sum()
            if kb:
                return q[:, B[j - 1]].sum()
            return 1.0
        if atom == 1:
            return pb[B[j - 1]] if j <= bound_b else 1.0
        return pa[A[i - 1]] if i <= bound_a else 1.0

    if isinstance(event, CellEvent):
        if ti == 0 and tj == 0:
            return EnumerationResult(1.0 if event.T == 0 else 0.0, 0.0, 1)
        masses, count = _cell_masses(t, emission, ti, tj)
        return EnumerationResult(masses[event.T], 0.0, count)

    if cutoff is None:
        cutoff = rel_cutoff * target_probability(scheme, A, B)
    total, pruned, count = _walk_preimage(
        np.ascontiguousarray(t), np.ascontiguousarray(q), np.ascontiguousarray(pa),
        np.ascontiguousarray(pb), np.asarray(A, dtype=np.int64), np.asarray(B, dtype=np.int64),
        float(cutoff), int(max_paths))
    if count < 0:
        raise EnumerationTooLarge("path budget exceeded")
    return EnumerationResult(total, pruned, count)


def _cell_masses(t, emission, ti, tj):
    """Path masses into ``(ti, tj)`` split by the final atom."""
    masses = [0.0, 0.0, 0.0]
    count = 0
    moves = ((0, 1, 1), (1, 0, 1), (2, 1, 0))

    def walk(i, j, atom, mass):
        nonlocal count
        if i == ti and j == tj:
            masses[atom] += mass
            count += 1
            return
        for nxt, di, dj in moves:
            ni, nj = i + di, j + dj
            if ni > ti or nj > tj or t[atom, nxt] == 0.0:
                continue
            walk(ni, nj, nxt, mass * t[atom, nxt] * emission(nxt, ni, nj))

    walk(0, 0, 0, 1.0)
    return masses, count


@numba.njit(cache=True)
def _walk_preimage(t, q, pa, pb, A, B, cutoff, max_paths):
    N = A.shape[0]
    qa = q.sum(axis=1)
    qb = q.sum(axis=0)
    cap = 4 * N + 256
    si = np.empty(cap, dtype=np.int64)
    sj = np.empty(cap, dtype=np.int64)
    sx = np.empty(cap, dtype=np.int64)
    sm = np.empty(cap)
    top = 0
    si[0] = 0
    sj[0] = 0
    sx[0] = 0
    sm[0] = 1.0
    top = 1
    total = 0.0
    pruned = 0.0
    count = 0
    while top > 0:
        top -= 1
        i, j, atom, mass = si[top], sj[top], sx[top], sm[top]
        if min(i, j) == N:
            total += mass
            count += 1
            if count > max_paths:
                return total, pruned, -1
            continue
        if mass < cutoff:
            pruned += mass
            continue
        if top + 3 >= cap:
            cap *= 2
            si = np.resize(si, cap)
            sj = np.resize(sj, cap)
            sx = np.resize(sx, cap)
            sm = np.resize(sm, cap)
        for nxt in range(3):
            tp = t[atom, nxt]
            if tp == 0.0:
                continue
            if nxt == 0:
                ni, nj = i + 1, j + 1
                if ni <= N and nj <= N:
                    e = q[A[ni - 1], B[nj - 1]]
                elif ni <= N:
                    e = qa[A[ni - 1]]
                elif nj <= N:
                    e = qb[B[nj - 1]]
                else:
                    e = 1.0
            elif nxt == 1:
                ni, nj = i, j + 1
                e = pb[B[nj - 1]] if nj <= N else 1.0
            else:
                ni, nj = i + 1, j
                e = pa[A[ni - 1]] if ni <= N else 1.0
            si[top] = ni
            sj[top] = nj
            sx[top] = nxt
            sm[top] = mass * tp * e
            top += 1
    return total, pruned, count


def target_probability(scheme: ScoringScheme, seq_a, seq_b) -> float:
    return float(np.prod(scheme.freq_a[list(seq_a)]) * np.prod(scheme.freq_b[list(seq_b)]))


def all_pairs(K: int, N: int):
    """Every ``(A[1..N], B[1..N])`` over an alphabet of size ``K``."""
    words = list(itertools.product(range(K), repeat=N))
    return itertools.product(words, words)


def strip_sums(model, scheme: ScoringScheme, seq_a, seq_b, terms: int = 500):
    """Tail sums by brute-force extension of the W recursion into the strips.

    Runs the plain recursion on the full ``(N+1) x (N+terms+1)`` rectangle,
    with letters of ``B`` past ``N`` summed out, and returns
    ``U[T, i] = sum_{j=N}^{N+terms} W^T_{i,j}``; ``V`` is the mirror image.
    """
    A, B = list(seq_a), list(seq_b)
    N = len(A)
    p, pp, q, t = scheme.freq_a, scheme.freq_b, model.q, model.t

    def rect(rows, cols, ratio, t):
        W = np.zeros((3, rows + 1, cols + 1))
        W[0, 0, 0] = 1.0
        for i in range(rows + 1):
            for j in range(cols + 1):
                if i == 0 and j == 0:
                    continue
                if i > 0 and j > 0:
                    W[0, i, j] = ratio(i, j) * (t[:, 0] @ W[:, i - 1, j - 1])
                if j > 0:
                    W[1, i, j] = t[:, 1] @ W[:, i, j - 1]
                if i > 0:
                    W[2, i, j] = t[:, 2] @ W[:, i - 1, j]
        return W

    def ratio_u(i, j):
        a = A[i - 1]
        if j <= N:
            return q[a, B[j - 1]] / (p[a] * pp[B[j - 1]])
        return q[a, :].sum() / p[a]

    def ratio_v(j, i):
        # mirror: rows index B, columns index A
        b = B[j - 1]
        if i <= N:
            return q[A[i - 1], b] / (p[A[i - 1]] * pp[b])
        return q[:, b].sum() / pp[b]

    Wu = rect(N, N + terms, ratio_u, t)
    U = Wu[:, :, N:].sum(axis=2)
    # mirrored rectangle: swap the roles of I and D
    Wv = rect(N, N + terms, ratio_v, t[[0, 2, 1]][:, [0, 2, 1]])
    Vm = Wv[:, :, N:].sum(axis=2)
    V = Vm[[0, 2, 1]]
    return U, V


def random_small_instance(rng: np.random.Generator, n_max: int = ENUM_MAX_N):
    """Random two-letter scheme, trial model and stopped pair for the enumeration oracles.

    Gap probabilities are kept small so that exhaustive enumeration stays cheap.
    """
    from .scoring import match_mismatch_scheme
    from .trial import TrialModel

    f = rng.uniform(0.2, 0.8)
    scheme = match_mismatch_scheme("AB", int(rng.integers(1, 4)), -int(rng.integers(1, 4)),
                                   1.0, 1.0, freqs=[f, 1 - f])
    q = rng.uniform(0.05, 1.0, (2, 2))
    q /= q.sum()
    g = rng.uniform(0.01, 0.08, 6)
    t = np.array([[0.0, g[0], g[1]], [0.0, g[2], g[3] / 4], [0.0, g[4] / 4, g[5]]])
    t[:, 0] = 1.0 - t[:, 1:].sum(axis=1)
    model = TrialModel(t, q, scheme.freq_a, scheme.freq_b)
    N = int(rng.integers(1, n_max + 1))
    A = tuple(int(x) for x in rng.integers(0, 2, N))
    B = tuple(int(x) for x in rng.integers(0, 2, N))
    return scheme, model, A, B


def _rel(x, ref):
    x, ref = np.asarray(x, float), np.asarray(ref, float)
    scale = np.maximum(np.abs(ref), 1e-300)
    err = np.where(ref == 0, np.abs(x), np.abs(x - ref) / scale)
    return float(err.max()) if err.size else 0.0


def weight_oracle_report(instances: int = 100, seed: int = 0, n_max: int = ENUM_MAX_N,
                         strip_terms: int = 500, cell_instances: int | None = None) -> dict:
    """Compare the incremental weight DP with path enumeration and strip sums.

    Returns the largest relative errors seen for the layer cells, the tail
    sums and ``1/W``, plus the largest pruned-mass fraction of the enumeration.
    """
    from .weights import WeightFrontier

    rng = np.random.default_rng(seed)
    worst = {"cells": 0.0, "tails": 0.0, "inv_weight": 0.0, "pruned_fraction": 0.0}
    if cell_instances is None:
        cell_instances = instances
    for it in range(instances):
        scheme, model, A, B = random_small_instance(rng, n_max)
        N = len(A)
        wf = WeightFrontier(model, scheme)
        for n in range(1, N + 1):
            wf.extend(A[n - 1], B[n - 1])
            if it >= cell_instances:
                continue
            for which, cells in (("col", [(i, n) for i in range(n + 1)]),
                                 ("row", [(n, j) for j in range(n + 1)])):
                got = np.array([wf.edge(f"{which}_{x}") for x in "SID"])
                ref = np.zeros_like(got)
                for idx, (i, j) in enumerate(cells):
                    emis = _emission_fn(model, A, B, i, j)
                    masses, _ = _cell_masses(model.t, emis, i, j)
                    PiPj = np.prod(scheme.freq_a[list(A[:i])]) * np.prod(scheme.freq_b[list(B[:j])])
                    ref[:, idx] = np.array(masses) / PiPj
                worst["cells"] = max(worst["cells"], _rel(got, ref))
        U, V = strip_sums(model, scheme, A, B, strip_terms)
        worst["tails"] = max(worst["tails"], _rel(wf.tail_sums_u(), U), _rel(wf.tail_sums_v(), V))
        res = enumerate_q_mass(model, scheme, PreimageEvent(A, B))
        inv_ref = res.mass / target_probability(scheme, A, B)
        worst["inv_weight"] = max(worst["inv_weight"], _rel(math.exp(wf.log_inv_weight()), inv_ref))
        worst["pruned_fraction"] = max(worst["pruned_fraction"], res.pruned / res.mass)
    worst["instances"] = instances
    return worst


def _emission_fn(model, A, B, i, j):
    q, pa, pb = model.q, model.p_a, model.p_b

    def emission(atom, i, j):
        if atom == 0:
            return q[A[i - 1], B[j - 1]]
        if atom == 1:
            return pb[B[j - 1]]
        return pa[A[i - 1]]

    return emission


# ---------------------------------------------------------------------------
# finite Markov additive processes


class MapError(ValueError):
    pass


@dataclass
class FiniteMap:
    """Markov chain with integer increments attached to its transitions.

    ``increments[i][j]`` is a ``(values, probs)`` pair giving the law of the
    increment on the transition ``i -> j``.
    """

    P: np.ndarray
    increments: list

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        J = self.P.shape[0]
        if self.P.shape != (J, J):
            raise MapError("transition matrix must be square")
        if np.any(self.P < 0) or np.any(np.abs(self.P.sum(axis=1) - 1) > 1e-12):
            raise MapError("transition matrix must be stochastic")
        incs = []
        for i in range(J):
            row = []
            for j in range(J):
                vals, probs = self.increments[i][j]
                vals = np.asarray(vals)
                probs = np.asarray(probs, dtype=float)
                if not np.all(vals == np.round(vals)):
                    raise MapError("non-lattice increments are unsupported")
                if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
                    raise MapError(f"increment law for {i}->{j} is not a distribution")
                row.append((vals.astype(np.int64), probs))
            incs.append(row)
        self.increments = incs
        self.pi = self._stationary()
        if np.any(self.pi <= 0):
            raise MapError("stationary distribution must be strictly positive")
        if not self.mean_increment() < 0:
            raise MapError("stationary mean increment must be negative")
        if not self._has_positive_cycle():
            raise MapError("no positive first-return cycle; ladder law is trivial")

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def support(self):
        lo = min(int(v.min()) for row in self.increments for v, _ in row)
        hi = max(int(v.max()) for row in self.increments for v, _ in row)
        return lo, hi

    def _stationary(self):
        J = self.n_states
        A = np.vstack([self.P.T - np.eye(J), np.ones(J)])
        b = np.zeros(J + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
        return pi

    def mean_increment(self):
        m = 0.0
        for i in range(self.n_states):
            for j in range(self.n_states):
                v, p = self.increments[i][j]
                m += self.pi[i] * self.P[i, j] * float(v @ p)
        return m

    def _has_positive_cycle(self):
        # a path from i back to i (first return) whose partial sums, using the
        # largest increments, stay positive
        J = self.n_states
        best = [[int(self.increments[i][j][0][self.increments[i][j][1] > 0].max())
                 if self.P[i, j] > 0 else None for j in range(J)] for i in range(J)]
        for start in range(J):
            frontier = {(start, 0)}
            for _ in range(2 * J + 2):
                nxt = set()
                for s, total in frontier:
                    for j in range(J):
                        if best[s][j] is None:
                            continue
                        tot = total + best[s][j]
                        if tot <= 0:
                            continue
                        if j == start:
                            return True
                        nxt.add((j, min(tot, 10 * J * self.support[1])))
                frontier = nxt
        return False

    @classmethod
    def from_json(cls, text):
        """Parse ``{"transition": [[...]], "increments": [[{"values": [...], "probs": [...]}]]}``."""
        d = json.loads(text) if isinstance(text, str) else text
        incs = [[(c["values"], c["probs"]) for c in row] for row in d["increments"]]
        return cls(np.array(d["transition"], dtype=float), incs)

    def to_json(self):
        return json.dumps({
            "states": self.n_states,
            "transition": self.P.tolist(),
            "increments": [[{"values": v.tolist(), "probs": p.tolist()} for v, p in row]
                           for row in self.increments],
        })

    def scaled(self, c: int) -> "FiniteMap":
        """Same chain with every increment multiplied by the integer ``c``."""
        incs = [[(v * c, p) for v, p in row] for row in self.increments]
        return FiniteMap(self.P, incs)


def scalar_walk_map(p_up=0.25) -> FiniteMap:
    """One-state MAP: +1 with probability ``p_up``, -1 otherwise."""
    return FiniteMap(np.array([[1.0]]), [[([1, -1], [p_up, 1 - p_up])]])


@dataclass
class LadderTransform:
    theta: float
    L: np.ndarray
    rho: float


def _first_passage(fmap: FiniteMap, theta: float, depth: int):
    J = fmap.n_states
    lo, hi = fmap.support
    levels = depth + 1  # levels 0, -1, ..., -depth
    n = J * levels
    rows, cols, vals = [], [], []
    rhs = np.zeros((n, J))
    for s in range(J):
        for d in range(levels):  # current level is -d
            x = s * levels + d
            for s2 in range(J):
                ps = fmap.P[s, s2]
                if ps == 0.0:
                    continue
                v, p = fmap.increments[s][s2]
                for z, pz in zip(v, p):
                    if pz == 0.0:
                        continue
                    new = -d + int(z)
                    if new > 0:
                        rhs[x, s2] += ps * pz * math.exp(theta * new)
                    elif -new <= depth:
                        rows.append(x)
                        cols.append(s2 * levels + (-new))
                        vals.append(ps * pz)
    A = sp.identity(n, format="csr") - sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    F = spla.splu(A.tocsc()).solve(rhs)
    return np.array([F[s * levels + 0] for s in range(J)])


def map_ladder_transform(fmap: FiniteMap, theta: float, tol: float = 1e-14,
                         max_depth: int = 1 << 14) -> LadderTransform:
    """Ladder matrix ``L[i, j] = E_i[exp(theta T_beta); J_beta = j, beta < inf]``.

    The first-passage system over (state, level <= 0) is truncated below at
    a depth that is doubled until the matrix stops changing.
    """
    lo, hi = fmap.support
    depth = max(32, 4 * (hi - lo))
    L = _first_passage(fmap, theta, depth)
    while True:
        depth *= 2
        if depth > max_depth:
            raise MapError("ladder transform did not converge; theta out of range?")
        L2 = _first_passage(fmap, theta, depth)
        if not np.all(np.isfinite(L2)):
            raise MapError("divergent ladder-transform entries")
        if np.max(np.abs(L2 - L)) <= tol * max(np.max(np.abs(L2)), 1e-300):
            L = L2
            break
        L = L2
    return LadderTransform(theta, L, perron_root(L))


def perron_root(L: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Dominant eigenvalue of a nonnegative matrix by power iteration.

    Iterates on ``L + I`` so that periodic matrices still converge.
    """
    M = L + np.eye(L.shape[0])
    v = np.ones(L.shape[0]) / L.shape[0]
    rho = 0.0
    for _ in range(max_iter):
        w = M @ v
        s = w.sum()
        if s == 0:
            return 0.0
        w /= s
        new = float((M @ w).sum())
        if abs(new - rho) <= tol * max(1.0, abs(new)) and np.max(np.abs(w - v)) <= tol:
            rho = new
            break
        v, rho = w, new
    return rho - 1.0


def map_lambda(fmap: FiniteMap, xtol: float = 1e-13) -> float:
    """Unique positive root of ``rho(theta) = 1``."""

    def f(th):
        return map_ladder_transform(fmap, th).rho - 1.0

    if not f(0.0) < 0:
        raise MapError("rho(0) must be below 1")
    hi = 0.25
    for _ in range(60):
        if f(hi) > 0:
            break
        hi *= 2
    else:
        raise MapError("no positive root of rho(theta) = 1 in bracket")
    return brentq(f, hi / 2 if f(hi / 2) < 0 else 0.0, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)


def ladder_moment(fmap: FiniteMap, theta: float, k: int, gamma=None) -> float:
    """``gamma L^k 1`` for start law ``gamma`` (default: state 0)."""
    L = map_ladder_transform(fmap, theta).L
    g = np.zeros(fmap.n_states)
    if gamma is None:
        g[0] = 1.0
    else:
        g[:] = gamma
    return float(g @ np.linalg.matrix_power(L, k) @ np.ones(fmap.n_states))


@numba.njit(cache=True, nogil=True)
def _map_kernel(gen, start, p_cum, inc_vals, inc_cum, k_max, horizon, out):
    state = start
    total = 0
    last = 0
    k = 0
    for _ in range(horizon):
        nxt = _draw(p_cum[state], gen.random())
        z = inc_vals[state, nxt, _draw(inc_cum[state, nxt], gen.random())]
        state = nxt
        total += z
        if total > last:
            last = total
            out[k] = total
            k += 1
            if k == k_max:
                return k
    return k


def simulate_map_ladders(fmap: FiniteMap, k_max: int, replicates: int, seed: int = 0,
                         horizon: int = 2000, start: int = 0) -> RecordSet:
    """Crude ladder records (unit weights) of MAP trajectories from ``start``."""
    J = fmap.n_states
    width = max(len(v) for row in fmap.increments for v, _ in row)
    inc_vals = np.zeros((J, J, width), dtype=np.int64)
    inc_cum = np.ones((J, J, width))
    for i in range(J):
        for j in range(J):
            v, p = fmap.increments[i][j]
            inc_vals[i, j, : len(v)] = v
            if p.sum() > 0:
                inc_cum[i, j, : len(p)] = _cdf(p)
    p_cum = np.stack([_cdf(row) for row in fmap.P])
    scores = np.zeros((replicates, k_max))
    log_w = np.full((replicates, k_max), -np.inf)
    out = np.empty(k_max, dtype=np.int64)
    for r in range(replicates):
        k = _map_kernel(replicate_stream(seed, r), start, p_cum, inc_vals, inc_cum,
                        k_max, horizon, out)
        scores[r, :k] = out[:k]
        log_w[r, :k] = 0.0
    return RecordSet(scores, log_w, np.zeros(replicates, dtype=bool),
                     np.full(replicates, horizon, dtype=np.int64))


def map_estimator_check(fmap: FiniteMap, k: int, k_prime: int, replicates: int, seed: int = 0,
                        horizon: int = 2000):
    """Run the ladder estimator on simulated MAP ladders; returns ``(lambda_hat, stderr)``."""
    if not k < k_prime:
        raise ValueError("k must be less than k_prime")
    rs = simulate_map_ladders(fmap, k_prime, replicates, seed, horizon)
    lam = solve_lambda(rs, k, k_prime, anchor=1.0)
    return lam, standard_error(rs, k, k_prime, lam)


def ladder_moment_mc(fmap: FiniteMap, theta: float, k: int, replicates: int, seed: int = 0,
                     horizon: int = 2000, start: int = 0):
    """Simulated ``E[exp(theta T_k); k-th ladder epoch reached]`` and its standard error."""
    rs = simulate_map_ladders(fmap, k, replicates, seed, horizon, start)
    reached = np.isfinite(rs.log_w[:, k - 1])
    x = np.where(reached, np.exp(theta * rs.scores[:, k - 1]), 0.0)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(replicates))
