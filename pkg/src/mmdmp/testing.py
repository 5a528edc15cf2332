"""Permutation two-sample tests and single-instance detection scores.

The two-sample test computes the statistic on the observed split, then
shuffles the pooled 2n instances uniformly, splits into halves, and
recomputes the statistic per permutation; the p-value is the exact fraction
of permuted values at or above the observed one. Permutations reuse the
pooled kernel matrix through index gathers, evaluated in chunks to bound
memory. Per-trial Philox streams make results independent of worker count;
MMDMP_THREADS caps the thread pool.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .estimators import KernelMatrices, SampleSet, mmd_u, mpp_u
from .kernel import KernelParams, featurize, kernel_block, kernel_gram, self_kernel

STATISTICS = ("mmd", "mpp")

# Upper bound on gathered kernel entries per permutation chunk.
_CHUNK_BUDGET = 2_000_000


@dataclass(frozen=True)
class TestConfig:
    __test__ = False  # keep pytest from collecting this

    alpha: float = 0.05
    n_perm: int = 200
    statistic: str = "mmd"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.n_perm < 1:
            raise ValueError(f"n_perm must be >= 1, got {self.n_perm}")
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}, expected one of {STATISTICS}")


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False  # keep pytest from collecting this

    est: float
    perm_values: np.ndarray
    p_value: float
    reject: bool

    def to_dict(self) -> dict:
        return {
            "est": self.est,
            "p_value": self.p_value,
            "reject": self.reject,
            "n_perm": int(self.perm_values.shape[0]),
        }


def max_workers() -> int:
    """Thread budget: cpu count, capped by the MMDMP_THREADS env var."""
    n = os.cpu_count() or 1
    cap = os.environ.get("MMDMP_THREADS")
    if cap is not None:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"MMDMP_THREADS must be an integer, got {cap!r}")
    return n


def _stat_batch(kxx, kxy, kyy, statistic: str) -> np.ndarray:
    """Statistic over stacked blocks of shape (..., n, n)."""
    if statistic == "mmd":
        h = kxx - kxy - np.swapaxes(kxy, -1, -2) + kyy
    else:
        h = kxx - kxy - np.swapaxes(kxy, -1, -2)
    n = h.shape[-1]
    s = h.sum(axis=(-1, -2)) - np.trace(h, axis1=-1, axis2=-2)
    return s / (n * (n - 1))


def _observed_stat(k: KernelMatrices, statistic: str) -> float:
    return mmd_u(k) if statistic == "mmd" else mpp_u(k)


def p_value_from(perm_values: np.ndarray, est: float) -> float:
    """Exact tie-inclusive permutation p-value."""
    perm_values = np.asarray(perm_values, dtype=np.float64)
    return float(np.count_nonzero(perm_values >= est)) / perm_values.shape[0]


def two_sample_test(
    sp_te: SampleSet,
    sq_te: SampleSet,
    params: KernelParams,
    cfg: TestConfig,
    trial: int = 0,
) -> TestOutcome:
    """Permutation test of P = Q on equally sized test sets (n >= 2 each)."""
    n = sp_te.n
    if n != sq_te.n:
        raise ValueError(f"test sets must match in size, got {n} and {sq_te.n}")
    if n < 2:
        raise ValueError(f"two_sample_test needs n >= 2 per side, got {n}")
    if sp_te.dim != sq_te.dim:
        raise ValueError(f"test sets disagree on dimension: {sp_te.dim} vs {sq_te.dim}")

    pooled = np.concatenate([sp_te.data, sq_te.data], axis=0)
    gram = kernel_gram(params, pooled)
    observed = KernelMatrices(kxx=gram[:n, :n], kxy=gram[:n, n:], kyy=gram[n:, n:])
    est = _observed_stat(observed, cfg.statistic)

    gen = rngmod.stream(cfg.seed, rngmod.PERMUTATION, trial)
    total = 2 * n
    idx = np.tile(np.arange(total), (cfg.n_perm, 1))
    gen.permuted(idx, axis=1, out=idx)

    perm_values = np.empty(cfg.n_perm, dtype=np.float64)
    chunk = max(1, _CHUNK_BUDGET // (total * total))
    for start in range(0, cfg.n_perm, chunk):
        part = idx[start : start + chunk]
        gathered = gram[part[:, :, None], part[:, None, :]]
        perm_values[start : start + part.shape[0]] = _stat_batch(
            gathered[:, :n, :n], gathered[:, :n, n:], gathered[:, n:, n:], cfg.statistic
        )

    p = p_value_from(perm_values, est)
    return TestOutcome(est=est, perm_values=perm_values, p_value=p, reject=p <= cfg.alpha)


def test_power(test_pairs: list, params: KernelParams, cfg: TestConfig) -> float:
    """Fraction of (Sp, Sq) pairs rejected; trial i uses stream index i."""
    if not test_pairs:
        raise ValueError("test_power needs at least one test pair")

    def run(i: int) -> bool:
        sp, sq = test_pairs[i]
        return two_sample_test(sp, sq, params, cfg, trial=i).reject

    workers = min(max_workers(), len(test_pairs))
    if workers <= 1:
        rejects = [run(i) for i in range(len(test_pairs))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rejects = list(pool.map(run, range(len(test_pairs))))
    return float(np.count_nonzero(rejects)) / len(test_pairs)


test_power.__test__ = False  # keep pytest from collecting this


def sid_scores(sp_ref: SampleSet, instances: SampleSet, params: KernelParams) -> np.ndarray:
    """Biased one-instance discrepancy of each instance against the reference.

    Higher means farther from the reference population. Matches mmd_b on
    every instance exactly; the batch path only shares the featurized
    reference across instances.
    """
    if sp_ref.dim != instances.dim:
        raise ValueError(f"dimension mismatch: ref {sp_ref.dim}, instances {instances.dim}")
    f_ref = featurize(params, sp_ref.data)
    f_inst = featurize(params, instances.data)
    ref_kxx = kernel_block(params, sp_ref.data, sp_ref.data, f_ref, f_ref)
    cross = kernel_block(params, sp_ref.data, instances.data, f_ref, f_inst)
    self_k = self_kernel(params, instances.data)
    n = sp_ref.n
    return ref_kxx.sum() / (n * n) - 2.0 * cross.sum(axis=0) / n + self_k


def sid_auroc(sp_ref: SampleSet, sp_eval: SampleSet, sq_eval: SampleSet,
              params: KernelParams) -> float:
    """AUROC of single-instance scores, treating Q instances as positives."""
    scores_p = sid_scores(sp_ref, sp_eval, params)
    scores_q = sid_scores(sp_ref, sq_eval, params)
    return auroc(scores_p, scores_q)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    n = x.shape[0]
    first = np.empty(n, dtype=bool)
    first[0] = True
    first[1:] = sx[1:] != sx[:-1]
    starts = np.flatnonzero(first)
    ends = np.append(starts[1:], n)
    group_ranks = (starts + ends - 1) / 2.0 + 1.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = group_ranks[np.cumsum(first) - 1]
    return ranks


def auroc(scores_negative, scores_positive) -> float:
    """Probability a positive outranks a negative, ties counting half.

    Rank-based evaluation; agrees with the all-pairs count to float
    precision, and auroc(a, b) + auroc(b, a) = 1 exactly.
    """
    neg = np.asarray(scores_negative, dtype=np.float64).reshape(-1)
    pos = np.asarray(scores_positive, dtype=np.float64).reshape(-1)
    if neg.size == 0 or pos.size == 0:
        raise ValueError("auroc needs at least one score on each side")
    if not (np.all(np.isfinite(neg)) and np.all(np.isfinite(pos))):
        raise ValueError("auroc scores must be finite")
    ranks = _average_ranks(np.concatenate([neg, pos]))
    pos_rank_sum = ranks[neg.size :].sum()
    m = pos.size
    return float((pos_rank_sum - m * (m + 1) / 2.0) / (neg.size * m))
