"""Pair-HMM trial chain that emits alignment paths and the two sequences.

The chain has three atoms, S (letter pair), I (gap in A, letter of B) and
D (letter of A, gap in B). Each replicate starts in S at the origin and
runs until the ``k_max``-th ladder epoch of the edge maxima, extending the
alignment and weight layers every time ``min(i, j)`` grows.

Random streams are Philox generators keyed by ``(seed, replicate)``, so a
replicate's draws do not depend on which worker runs it or in what order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .align import align_extend, align_init, neg_sentinel, LadderTrace
from .scoring import ScoringScheme, UngappedAnalytics, solve_lambda_star
from .weights import (_check_tails, epoch_inv_weight, ratio_tables, weight_extend,
                      weight_init, weight_rescale)

ATOMS = ("S", "I", "D")
S, I, D = 0, 1, 2

STOPPED = 0
CENSORED = 1


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class TrialModel:
    """Transition matrix over atoms plus the emission distributions.

    ``t[x, y]`` is the probability of moving from atom ``x`` to ``y`` (order
    S, I, D). ``q`` is the joint letter-pair emission of S, ``p_b`` the
    letter emission of I (a letter of B) and ``p_a`` that of D.
    """

    t: np.ndarray
    q: np.ndarray
    p_a: np.ndarray
    p_b: np.ndarray

    def __post_init__(self):
        t = np.array(self.t, dtype=np.float64)
        q = np.array(self.q, dtype=np.float64)
        p_a = np.array(self.p_a, dtype=np.float64)
        p_b = np.array(self.p_b, dtype=np.float64)
        k = len(p_a)
        if t.shape != (3, 3):
            raise ConfigurationError("t must be 3x3")
        if q.shape != (k, k) or p_b.shape != (k,):
            raise ConfigurationError("emission shapes disagree")
        for name, arr in (("t", t), ("q", q), ("p_a", p_a), ("p_b", p_b)):
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"{name} has negative or non-finite entries")
        if np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-12):
            raise ConfigurationError(f"rows of t must sum to 1, got {t.sum(axis=1)}")
        for name, arr in (("q", q), ("p_a", p_a), ("p_b", p_b)):
            if abs(arr.sum() - 1.0) > 1e-12:
                raise ConfigurationError(f"{name} must sum to 1, got {arr.sum():.15g}")
        for name, arr in (("t", t), ("q", q), ("p_a", p_a), ("p_b", p_b)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def as_dict(self):
        return {"t": self.t.tolist(), "q_sum": float(self.q.sum())}


def default_trial_model(scheme: ScoringScheme, analytics: UngappedAnalytics | None = None,
                        overrides: dict | None = None) -> TrialModel:
    """Trial chain tilted by the ungapped lambda.

    ``q[a, b] = p_a p'_b exp(lambda* s(a, b))``, ``t_II = t_DD =
    exp(-lambda* gap_extend)``, ``t_SI = t_SD = c exp(-lambda* (gap_open +
    gap_extend))`` and no direct I<->D moves. Rows are completed through
    the S column.

    ``overrides`` may set ``c``, any of ``t_SS .. t_DD`` (keys like
    ``"t_SI"``), or a full ``"t"`` matrix; the result is re-validated.
    """
    if analytics is None:
        analytics = solve_lambda_star(scheme)
    overrides = dict(overrides or {})
    lam = analytics.lambda_star
    if not lam > 0:
        raise ConfigurationError("lambda* must be positive")
    c = float(overrides.pop("c", 1.0))
    q = np.outer(scheme.freq_a, scheme.freq_b) * np.exp(lam * scheme.matrix)
    q = q / q.sum()
    ext = math.exp(-lam * scheme.gap_extend)
    opn = c * math.exp(-lam * (scheme.gap_open + scheme.gap_extend))
    t = np.zeros((3, 3))
    t[S, I] = t[S, D] = opn
    t[I, I] = t[D, D] = ext
    t[I, D] = t[D, I] = 0.0
    if "t" in overrides:
        t = np.array(overrides.pop("t"), dtype=float)
    else:
        for key in list(overrides):
            if key.startswith("t_") and len(key) == 4:
                x, y = ATOMS.index(key[2]), ATOMS.index(key[3])
                t[x, y] = float(overrides.pop(key))
        t[S, S] = 1.0 - t[S, I] - t[S, D]
        t[I, S] = 1.0 - t[I, I] - t[I, D]
        t[D, S] = 1.0 - t[D, D] - t[D, I]
    if overrides:
        raise ConfigurationError(f"unknown trial-model overrides: {sorted(overrides)}")
    if np.any(t < 0):
        raise ConfigurationError(
            f"trial transition probabilities went negative (c={c:g}); try a smaller c")
    return TrialModel(t=t, q=q, p_a=scheme.freq_a.copy(), p_b=scheme.freq_b.copy())


def _cdf(probs):
    """Cumulative table whose last positive slot ends exactly at 1."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    cum = np.cumsum(p)
    cum /= cum[-1]
    last = int(np.flatnonzero(p > 0)[-1])
    cum[last:] = 1.0
    return cum


@numba.njit(cache=True, nogil=True)
def _draw(cum, u):
    k = np.searchsorted(cum, u, side="right")
    if k >= cum.shape[0]:
        k = cum.shape[0] - 1
    return k


@numba.njit(cache=True, nogil=True)
def _grow(buf):
    out = np.empty(2 * buf.shape[0], dtype=buf.dtype)
    out[: buf.shape[0]] = buf
    return out


@numba.njit(cache=True, nogil=True)
def replicate_kernel(gen, t_cum, q_cum, pa_cum, pb_cum, K, score, go, ge, neg,
                     R, rA, rB, t, k_max, horizon, lay, wl,
                     out_epochs, out_scores, out_loginv, record):
    """Run one trial replicate to the ``k_max``-th ladder epoch.

    Returns ``(status, n_epochs, N, i, j, seq_a, seq_b, steps, n_steps)``.
    """
    seq_a = np.empty(64, dtype=np.int64)
    seq_b = np.empty(64, dtype=np.int64)
    steps = np.empty(64 if record else 1, dtype=np.int64)
    n_steps = 0
    align_init(lay, neg)
    weight_init(wl)
    log_scale = 0.0
    atom = 0
    i = 0
    j = 0
    n = 0
    k = 0
    last = 0.0
    while True:
        atom = _draw(t_cum[atom], gen.random())
        if atom == 0:
            pair = _draw(q_cum, gen.random())
            if i >= seq_a.shape[0]:
                seq_a = _grow(seq_a)
            if j >= seq_b.shape[0]:
                seq_b = _grow(seq_b)
            seq_a[i] = pair // K
            seq_b[j] = pair % K
            i += 1
            j += 1
        elif atom == 1:
            if j >= seq_b.shape[0]:
                seq_b = _grow(seq_b)
            seq_b[j] = _draw(pb_cum, gen.random())
            j += 1
        else:
            if i >= seq_a.shape[0]:
                seq_a = _grow(seq_a)
            seq_a[i] = _draw(pa_cum, gen.random())
            i += 1
        if record:
            if n_steps >= steps.shape[0]:
                steps = _grow(steps)
            steps[n_steps] = atom
            n_steps += 1
        if min(i, j) > n:
            if n >= horizon:
                return CENSORED, k, n, i, j, seq_a[:i], seq_b[:j], steps[:n_steps], n_steps
            m_n = align_extend(lay, n, seq_a, seq_b, score, go, ge, neg)
            weight_extend(wl, n, seq_a, seq_b, R, t)
            n += 1
            log_scale += weight_rescale(wl, n)
            if m_n > last:
                last = m_n
                inv = epoch_inv_weight(wl, n, seq_a, seq_b, rA, rB, t)
                out_epochs[k] = n
                out_scores[k] = m_n
                out_loginv[k] = math.log(inv) + log_scale
                k += 1
                if k == k_max:
                    return STOPPED, k, n, i, j, seq_a[:i], seq_b[:j], steps[:n_steps], n_steps


@dataclass
class PathSample:
    """One trial replicate.

    ``steps`` holds atom codes (0=S, 1=I, 2=D) when recorded. ``stopped_at``
    is ``N`` for a stopped replicate and ``None`` when censored.
    """

    seq_a: np.ndarray
    seq_b: np.ndarray
    position: tuple
    ladder: LadderTrace
    log_inv_weights: np.ndarray
    stopped_at: int | None
    steps: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def censored(self) -> bool:
        return self.stopped_at is None

    @property
    def weights(self) -> np.ndarray:
        return np.exp(-self.log_inv_weights)


class ReplicateRunner:
    """Compiled tables and reusable work buffers for one scheme/model pair.

    Not thread safe; give each worker its own runner.
    """

    def __init__(self, model: TrialModel, scheme: ScoringScheme, k_max: int, horizon: int = 10_000):
        if k_max < 1 or horizon < 1:
            raise ValueError("k_max and horizon must be positive")
        self.model = model
        self.scheme = scheme
        self.k_max = int(k_max)
        self.horizon = int(horizon)
        self.R, self.rA, self.rB = ratio_tables(model, scheme)
        self.t = np.ascontiguousarray(model.t)
        _check_tails(self.t)
        self.t_cum = np.stack([_cdf(row) for row in self.t])
        self.q_cum = _cdf(model.q)
        self.pa_cum = _cdf(model.p_a)
        self.pb_cum = _cdf(model.p_b)
        self.K = len(scheme.alphabet)
        self.score = np.ascontiguousarray(scheme.matrix)
        self.neg = neg_sentinel(scheme, self.horizon)
        self.lay = np.empty((6, self.horizon + 2))
        self.wl = np.empty((6, self.horizon + 2))
        self.epochs = np.empty(self.k_max, dtype=np.int64)
        self.scores = np.empty(self.k_max)
        self.loginv = np.empty(self.k_max)

    def run(self, gen: np.random.Generator, record: bool = False):
        g = self.scheme
        res = replicate_kernel(gen, self.t_cum, self.q_cum, self.pa_cum, self.pb_cum, self.K,
                               self.score, g.gap_open, g.gap_extend, self.neg,
                               self.R, self.rA, self.rB, self.t, self.k_max, self.horizon,
                               self.lay, self.wl, self.epochs, self.scores, self.loginv, record)
        status, k, n, i, j, seq_a, seq_b, steps, _ = res
        return status, k, n, i, j, seq_a, seq_b, steps

    def sample(self, gen: np.random.Generator, record: bool = True) -> PathSample:
        status, k, n, i, j, seq_a, seq_b, steps = self.run(gen, record)
        ladder = LadderTrace([int(e) for e in self.epochs[:k]], [float(s) for s in self.scores[:k]])
        return PathSample(seq_a=seq_a.copy(), seq_b=seq_b.copy(), position=(int(i), int(j)),
                          ladder=ladder, log_inv_weights=self.loginv[:k].copy(),
                          stopped_at=int(n) if status == STOPPED else None, steps=steps.copy())


def replicate_stream(seed: int, replicate: int) -> np.random.Generator:
    """Independent counter-based stream for one replicate of one campaign."""
    if seed < 0 or replicate < 0:
        raise ValueError("seed and replicate index must be nonnegative")
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(replicate)]))


def run_replicate(model: TrialModel, scheme: ScoringScheme, k_max: int, horizon: int,
                  rng_stream: np.random.Generator, record: bool = True) -> PathSample:
    """Sample one path to the ``k_max``-th ladder epoch (or censor at ``horizon``)."""
    return ReplicateRunner(model, scheme, k_max, horizon).sample(rng_stream, record)


def dump_trace(sample: PathSample, scheme: ScoringScheme):
    """Line-delimited records (dicts) describing a recorded replicate path."""
    letters = scheme.alphabet.letters
    ia = ib = 0
    for step, atom in enumerate(sample.steps):
        a = b = "-"
        if atom in (S, D):
            a = letters[sample.seq_a[ia]]
            ia += 1
        if atom in (S, I):
            b = letters[sample.seq_b[ib]]
            ib += 1
        yield {"step": step + 1, "atom": ATOMS[atom], "a": a, "b": b, "i": ia, "j": ib}
