"""Weighted ladder-score estimating equation, its variance, and campaigns.

For ladder indices ``k < k'`` the estimate is the root in ``theta`` of

    sum_i [ w_{k',i} exp(theta M_{k',i}) - w_{k,i} exp(theta M_{k,i}) ] = 0,

where ``M_{k,i}`` is the ``k``-th ladder score of replicate ``i`` and
``w_{k,i}`` the importance weight for stopping at that epoch (zero when the
epoch was never reached). Each term carries the weight of its own stopping
time.
"""

from __future__ import annotations

import json
import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .scoring import ScoringScheme, solve_lambda_star
from .trial import CENSORED, ReplicateRunner, TrialModel, default_trial_model, replicate_stream

log = logging.getLogger(__name__)

REPORT_SCHEMA = "ladder-lambda/estimate-report/1"


class EstimationError(RuntimeError):
    pass


class NoRootError(EstimationError):
    pass


class CampaignError(EstimationError):
    pass


@dataclass
class SampleRecord:
    """Ladder scores and log weights of one replicate.

    Arrays cover the epochs actually reached; a crude replicate truncated by
    its horizon simply has fewer entries. Censored trial replicates carry
    empty arrays.
    """

    replicate: int
    scores: np.ndarray
    log_weights: np.ndarray
    censored: bool = False
    stop_length: int = 0

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if self.scores.shape != self.log_weights.shape:
            raise ValueError("scores and log_weights must align")
        if self.censored and self.scores.size:
            raise ValueError("censored records carry no scores")
        if np.any(np.diff(self.scores) <= 0):
            raise ValueError("ladder scores must strictly increase")

    @property
    def weights(self):
        return np.exp(self.log_weights)


@dataclass
class RecordSet:
    """Column-oriented replicate records.

    ``scores[i, k-1]`` and ``log_w[i, k-1]`` hold epoch ``k`` of replicate
    ``i``; unreached epochs have score 0 and log weight ``-inf``.
    """

    scores: np.ndarray
    log_w: np.ndarray
    censored: np.ndarray
    stop_length: np.ndarray

    @classmethod
    def from_records(cls, records, k_max=None):
        records = list(records)
        if k_max is None:
            k_max = max((r.scores.size for r in records), default=0)
        n = len(records)
        scores = np.zeros((n, k_max))
        log_w = np.full((n, k_max), -np.inf)
        censored = np.zeros(n, dtype=bool)
        stop = np.zeros(n, dtype=np.int64)
        for i, r in enumerate(records):
            m = min(r.scores.size, k_max)
            scores[i, :m] = r.scores[:m]
            log_w[i, :m] = r.log_weights[:m]
            censored[i] = r.censored
            stop[i] = r.stop_length
        return cls(scores, log_w, censored, stop)

    def __len__(self):
        return len(self.censored)

    @property
    def k_max(self):
        return self.scores.shape[1]

    def usable(self) -> "RecordSet":
        keep = ~self.censored
        return RecordSet(self.scores[keep], self.log_w[keep], self.censored[keep], self.stop_length[keep])

    def records(self):
        for i in range(len(self)):
            m = int(np.sum(np.isfinite(self.log_w[i])))
            yield SampleRecord(i, self.scores[i, :m], self.log_w[i, :m],
                               bool(self.censored[i]), int(self.stop_length[i]))

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        return cls(np.concatenate([p.scores for p in parts]), np.concatenate([p.log_w for p in parts]),
                   np.concatenate([p.censored for p in parts]), np.concatenate([p.stop_length for p in parts]))


def shared_weight(records, k_prime) -> RecordSet:
    """Reweight every epoch up to ``k_prime`` with the epoch-``k_prime`` weight.

    This is the single-weight reading of the estimating equation, kept for
    comparison. Replicates that never reach ``k_prime`` drop out entirely, so
    the equation is typically positive for every theta > 0 and has no root.
    """
    rs = as_record_set(records)
    log_w = np.full_like(rs.log_w, -np.inf)
    log_w[:, :k_prime] = rs.log_w[:, [k_prime - 1]]
    return RecordSet(rs.scores, log_w, rs.censored, rs.stop_length)


def as_record_set(records) -> RecordSet:
    if isinstance(records, RecordSet):
        return records
    return RecordSet.from_records(records)


@dataclass
class GumbelParams:
    lam: float
    K: float

    def __post_init__(self):
        if not (self.lam > 0 and self.K > 0):
            raise ValueError("Gumbel lambda and K must be positive")


def gumbel_pvalue(params: GumbelParams, m: int, n: int, y: float) -> float:
    """``P(local max > y) ~= 1 - exp(-K m n exp(-lambda y))``."""
    if m < 1 or n < 1:
        raise ValueError("sequence lengths must be positive")
    x = params.K * m * n * math.exp(-params.lam * y) if -params.lam * y < 700 else math.inf
    return -math.expm1(-x)


def h_eval(record: SampleRecord, k: int, k_prime: int, theta: float, derivative: bool = False):
    """Weighted exponential terms ``(term_k', term_k)`` of one record.

    With ``derivative=True`` the theta-derivatives are returned instead.
    An unreached epoch contributes 0.
    """
    _check_pair(k, k_prime)

    def term(idx):
        if record.censored or record.scores.size < idx:
            return 0.0
        m = record.scores[idx - 1]
        e = math.exp(record.log_weights[idx - 1] + theta * m)
        return m * e if derivative else e

    return term(k_prime), term(k)


def _check_pair(k, k_prime):
    if not (1 <= k < k_prime):
        raise ValueError("k must be less than k_prime")


def _log_terms(rs: RecordSet, k, k_prime, theta):
    la = rs.log_w[:, k_prime - 1] + theta * rs.scores[:, k_prime - 1]
    lb = rs.log_w[:, k - 1] + theta * rs.scores[:, k - 1]
    return la, lb


def _shift(la, lb):
    both = np.concatenate([la, lb])
    finite = both[np.isfinite(both)]
    return float(finite.max()) if finite.size else 0.0


def estimating_function(records, k, k_prime, theta, normalized=True):
    """Sum of ``term_k' - term_k`` over records.

    With ``normalized=True`` the value is divided by the sum of absolute
    terms, which keeps it in [-1, 1] whatever the magnitude of theta.
    """
    rs = as_record_set(records).usable()
    la, lb = _log_terms(rs, k, k_prime, theta)
    c = _shift(la, lb)
    a = np.exp(la - c)
    b = np.exp(lb - c)
    g = a.sum() - b.sum()
    if normalized:
        return float(g / (a.sum() + b.sum()))
    return float(g * math.exp(c))


def solve_lambda(records, k, k_prime, anchor=1.0, grid_points=64, xtol=1e-12):
    """Root of the weighted ladder equation.

    Scans a geometric grid ``[anchor/64, 4 anchor]`` for the first sign
    change (doubling the top once if needed), then refines with Brent's
    method. ``anchor`` is normally the ungapped lambda*.
    """
    _check_pair(k, k_prime)
    rs = as_record_set(records).usable()
    if len(rs) < 2:
        raise EstimationError("need at least 2 non-censored records")
    if rs.k_max < k_prime:
        raise EstimationError(f"records hold only {rs.k_max} epochs, need {k_prime}")

    def g(th):
        return estimating_function(rs, k, k_prime, th)

    lo_end = anchor / 64.0
    for hi_end in (4.0 * anchor, 8.0 * anchor):
        grid = np.geomspace(lo_end, hi_end, grid_points)
        vals = [g(th) for th in grid]
        for a, b, ga, gb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
            if ga == 0.0:
                return float(a)
            if ga < 0 < gb:
                return float(brentq(g, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200))
        if vals[0] > 0:
            break
    raise NoRootError(f"no root in bracket: g({grid[0]:.4g}) = {vals[0]:.4g}, "
                      f"g({grid[-1]:.4g}) = {vals[-1]:.4g}")


def variance(records, k, k_prime, lam_hat):
    """Sandwich variance of ``sqrt(r) (lambda_hat - lambda)``.

    Returns ``mean((hW)^2) / mean(h'W)^2`` evaluated at ``lam_hat``.
    """
    rs = as_record_set(records).usable()
    r = len(rs)
    la, lb = _log_terms(rs, k, k_prime, lam_hat)
    c = _shift(la, lb)
    a = np.exp(la - c)
    b = np.exp(lb - c)
    hw = a - b
    mk = np.where(np.isfinite(lb), rs.scores[:, k - 1], 0.0)
    mkp = np.where(np.isfinite(la), rs.scores[:, k_prime - 1], 0.0)
    dhw = mkp * a - mk * b
    num = float(np.sum(hw * hw)) / r
    den = (float(np.sum(dhw)) / r) ** 2
    if num == 0.0:
        return 0.0
    if den < 1e-300:
        raise EstimationError("degenerate derivative in variance denominator")
    return num / den


def standard_error(records, k, k_prime, lam_hat):
    rs = as_record_set(records).usable()
    return math.sqrt(variance(rs, k, k_prime, lam_hat) / len(rs))


@dataclass
class EstimateReport:
    lambda_hat: float
    stderr: float
    k: int
    k_prime: int
    replicates: int
    censored: int
    mean_stop_length: float
    elapsed_seconds: float | None
    scheme: str
    scheme_digest: str = ""
    seed: int | None = None
    stderr_method: str = "sandwich"
    config: dict = field(default_factory=dict)
    schema: str = REPORT_SCHEMA

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), sort_keys=True, **kw)

    CSV_COLUMNS = ("scheme", "gap", "lambda_hat", "stderr", "pairs", "mean_length")

    def csv_row(self) -> list:
        name, _, gap = self.scheme.partition(" ")
        return [name, gap, f"{self.lambda_hat:.6f}", f"{self.stderr:.6f}",
                str(self.replicates), f"{self.mean_stop_length:.2f}"]


class _Workers:
    """Per-thread replicate runners (runners keep mutable work buffers)."""

    def __init__(self, model, scheme, k_max, horizon):
        self.args = (model, scheme, k_max, horizon)
        self.local = threading.local()

    def runner(self) -> ReplicateRunner:
        r = getattr(self.local, "runner", None)
        if r is None:
            r = self.local.runner = ReplicateRunner(*self.args)
        return r


def _run_chunk(workers: _Workers, seed, start, stop):
    runner = workers.runner()
    n = stop - start
    k_max = runner.k_max
    scores = np.zeros((n, k_max))
    log_w = np.full((n, k_max), -np.inf)
    censored = np.zeros(n, dtype=bool)
    stop_len = np.zeros(n, dtype=np.int64)
    for row, rep in enumerate(range(start, stop)):
        status, k, N, *_ = runner.run(replicate_stream(seed, rep))
        if status == CENSORED:
            censored[row] = True
            continue
        scores[row, :k] = runner.scores[:k]
        log_w[row, :k] = -runner.loginv[:k]
        stop_len[row] = N
    return RecordSet(scores, log_w, censored, stop_len)


def collect_records(scheme, model, k_max, replicates=None, seconds=None, seed=0,
                    horizon=10_000, threads=1, chunk=256):
    """Generate trial replicates under a replicate-count or wall-clock budget.

    Replicate ``i`` always uses stream ``(seed, i)`` and records are returned
    in replicate order, so a replicate budget gives identical output for any
    thread count. Returns ``(RecordSet, elapsed_seconds)``.
    """
    if (replicates is None) == (seconds is None):
        raise ValueError("give exactly one of replicates or seconds")
    workers = _Workers(model, scheme, k_max, horizon)
    t0 = time.perf_counter()
    parts = {}
    if replicates is not None:
        if replicates <= 0:
            raise EstimationError("no records: replicate budget is zero")
        bounds = [(s, min(s + chunk, replicates)) for s in range(0, replicates, chunk)]
        if threads <= 1:
            for s, e in bounds:
                parts[s] = _run_chunk(workers, seed, s, e)
        else:
            with ThreadPoolExecutor(threads) as pool:
                futs = {s: pool.submit(_run_chunk, workers, seed, s, e) for s, e in bounds}
                parts = {s: f.result() for s, f in futs.items()}
    else:
        if not seconds > 0:
            raise EstimationError("no records: time budget must be positive")
        workers.runner()  # warm up compilation outside the timed budget
        t0 = time.perf_counter()
        nxt = 0
        if threads <= 1:
            while time.perf_counter() - t0 < seconds:
                parts[nxt] = _run_chunk(workers, seed, nxt, nxt + chunk)
                nxt += chunk
        else:
            with ThreadPoolExecutor(threads) as pool:
                inflight = {}
                while time.perf_counter() - t0 < seconds:
                    while len(inflight) < threads:
                        inflight[nxt] = pool.submit(_run_chunk, workers, seed, nxt, nxt + chunk)
                        nxt += chunk
                    first = min(inflight)
                    parts[first] = inflight.pop(first).result()
                for s, f in inflight.items():
                    parts[s] = f.result()
    elapsed = time.perf_counter() - t0
    if not parts:
        raise EstimationError("no records")
    return RecordSet.concat(parts[s] for s in sorted(parts)), elapsed


WEIGHTINGS = ("per-epoch", "shared")


def estimate_from_records(rs: RecordSet, k, k_prime, anchor, max_censored=0.01,
                          weighting="per-epoch"):
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}")
    if weighting == "shared":
        rs = shared_weight(rs, k_prime)
    n = len(rs)
    if n == 0:
        raise EstimationError("no records")
    n_cens = int(rs.censored.sum())
    if n_cens > max_censored * n:
        raise CampaignError(f"{n_cens} of {n} replicates censored (> {max_censored:.0%}); "
                            "increase the horizon or revise the trial model")
    lam = solve_lambda(rs, k, k_prime, anchor=anchor)
    se = standard_error(rs, k, k_prime, lam)
    usable = rs.usable()
    return lam, se, n_cens, float(usable.stop_length.mean())


def campaign(scheme: ScoringScheme, model: TrialModel | None = None, k=3, k_prime=4,
             replicates=None, seconds=None, seed=0, horizon=10_000, threads=1,
             chunk=256, weighting="per-epoch"):
    """Like :func:`run_campaign` but also returns the raw :class:`RecordSet`."""
    _check_pair(k, k_prime)
    analytics = solve_lambda_star(scheme)
    if model is None:
        model = default_trial_model(scheme, analytics)
    if replicates is not None and replicates <= 0:
        raise EstimationError("no records: replicate budget is zero")
    rs, elapsed = collect_records(scheme, model, k_prime, replicates=replicates, seconds=seconds,
                                  seed=seed, horizon=horizon, threads=threads, chunk=chunk)
    lam, se, n_cens, mean_len = estimate_from_records(rs, k, k_prime, analytics.lambda_star,
                                                      weighting=weighting)
    log.info("%s: %d replicates in %.3fs", scheme.descriptor(), len(rs), elapsed)
    budget = {"replicates": replicates} if replicates is not None else {"seconds": seconds}
    report = EstimateReport(
        lambda_hat=lam, stderr=se, k=k, k_prime=k_prime, replicates=len(rs), censored=n_cens,
        mean_stop_length=mean_len,
        elapsed_seconds=None if replicates is not None else round(elapsed, 6),
        scheme=scheme.descriptor(), scheme_digest=scheme.digest(), seed=seed,
        config={"budget": budget, "horizon": horizon, "lambda_star": analytics.lambda_star,
                "trial_t": model.t.tolist(), "weighting": weighting},
    )
    return report, rs


def run_campaign(scheme: ScoringScheme, model: TrialModel | None = None, k=3, k_prime=4,
                 replicates=None, seconds=None, seed=0, horizon=10_000, threads=1,
                 chunk=256, weighting="per-epoch") -> EstimateReport:
    """Simulate to epoch ``k_prime`` and estimate lambda from epochs ``k, k'``.

    A replicate budget is deterministic for a given seed whatever ``threads``
    is; a seconds budget stops dispatching chunks once time runs out.
    """
    return campaign(scheme, model, k, k_prime, replicates, seconds, seed, horizon, threads,
                    chunk, weighting)[0]


def batch_seed(seed: int, batch: int) -> int:
    """Campaign seed for batch ``batch`` of a batched run."""
    return int(np.random.SeedSequence([seed, batch]).generate_state(1, np.uint64)[0])


@dataclass
class BatchSummary:
    reports: list
    mean: float
    batch_stderr: float
    estimate_sd: float

    def to_dict(self):
        return {"mean_lambda": self.mean, "batch_stderr": self.batch_stderr,
                "estimate_sd": self.estimate_sd, "batches": len(self.reports),
                "reports": [asdict(r) for r in self.reports]}


def run_batches(scheme, model=None, k=3, k_prime=4, batches=200, replicates=None, seconds=None,
                seed=0, horizon=10_000, threads=1, weighting="per-epoch") -> BatchSummary:
    """Independent estimates whose spread gives the standard error of their mean."""
    if batches < 2:
        raise ValueError("need at least 2 batches")
    reports = [run_campaign(scheme, model, k, k_prime, replicates=replicates, seconds=seconds,
                            seed=batch_seed(seed, b), horizon=horizon, threads=threads,
                            weighting=weighting)
               for b in range(batches)]
    lams = np.array([r.lambda_hat for r in reports])
    sd = float(lams.std(ddof=1))
    return BatchSummary(reports, float(lams.mean()), sd / math.sqrt(len(lams)), sd)
