"""Per-batch kernel statistics and the variance decomposition.

For a batch pair, the records keep the off-diagonal means of kxx and kyy,
the full mean of kxy, and the unbiased discrepancy value. Across a set of
batches the variance of the discrepancy's batch mean splits exactly into
proxy-term and within-Q contributions:

    Var(A - 2C + Y) = Var(A - 2C) + Var(Y) + 2 Cov(A - 2C, Y)

with A the kxx mean, C the kxy mean, Y the kyy mean, all per batch. The
proxy part further splits into Var(A) - 2 Cov(A, 2C) + Var(2C). Every
variance and covariance uses the 1/(B-1) normalization. The identities are
algebraic, so the components must sum to the directly computed variances up
to float round-off; that closure is asserted by the test suite at 1e-10
relative.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .estimators import SampleSet
from .kernel import KernelParams, kernel_matrix


@dataclass(frozen=True)
class KernelStatsRecord:
    step: int
    e_kxx: float
    e_kyy: float
    e_kxy: float
    mmd_value: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "e_kxx": self.e_kxx,
            "e_kyy": self.e_kyy,
            "e_kxy": self.e_kxy,
            "mmd_value": self.mmd_value,
        }


def stats_from_blocks(kxx, kxy, kyy, step: int = 0) -> KernelStatsRecord:
    """Statistics straight from kernel blocks (no kernel evaluation)."""
    kxx = np.asarray(kxx, dtype=np.float64)
    kxy = np.asarray(kxy, dtype=np.float64)
    kyy = np.asarray(kyy, dtype=np.float64)
    n, m = kxy.shape
    if n != m or n < 2:
        raise ValueError(f"batch statistics need equal sides >= 2, got {n} x {m}")
    e_kxx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    e_kyy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    e_kxy = kxy.mean()
    h = kxx - kxy - kxy.T + kyy
    mmd = (h.sum() - np.trace(h)) / (n * (n - 1))
    return KernelStatsRecord(
        step=step,
        e_kxx=float(e_kxx),
        e_kyy=float(e_kyy),
        e_kxy=float(e_kxy),
        mmd_value=float(mmd),
    )


def batch_kernel_stats(params: KernelParams, sp_batch: SampleSet, sq_batch: SampleSet,
                       step: int = 0) -> KernelStatsRecord:
    """Kernel statistics of one batch pair under params."""
    k = kernel_matrix(params, sp_batch.data, sq_batch.data)
    return stats_from_blocks(k.kxx, k.kxy, k.kyy, step=step)


@dataclass(frozen=True)
class DecompositionReport:
    """Variance components of the batch-mean discrepancy across batches."""

    var_e_kxx: float
    var_2e_kxy: float
    cov_e_kxx_2e_kxy: float
    var_proxy: float           # Var(A - 2C), from its own three components
    var_e_kyy: float
    cov_proxy_e_kyy: float
    components_total: float    # var_proxy + var_e_kyy + 2 cov_proxy_e_kyy
    var_full_direct: float    # Var(A - 2C + Y) computed directly
    var_mmd_direct: float      # Var of the discrepancy value itself
    n_batches: int

    def to_dict(self) -> dict:
        return {
            "var_e_kxx": self.var_e_kxx,
            "var_2e_kxy": self.var_2e_kxy,
            "cov_e_kxx_2e_kxy": self.cov_e_kxx_2e_kxy,
            "var_proxy": self.var_proxy,
            "var_e_kyy": self.var_e_kyy,
            "cov_proxy_e_kyy": self.cov_proxy_e_kyy,
            "components_total": self.components_total,
            "var_full_direct": self.var_full_direct,
            "var_mmd_direct": self.var_mmd_direct,
            "n_batches": self.n_batches,
        }


def variance_decomposition(records: list) -> DecompositionReport:
    """Decompose the across-batch variance of the batch-mean discrepancy.

    Needs at least two records. All moments are computed from centered
    residuals with a single consistent formula so the closure identity
    holds to float round-off.
    """
    if len(records) < 2:
        raise ValueError(f"variance decomposition needs >= 2 batches, got {len(records)}")
    a = np.array([r.e_kxx for r in records], dtype=np.float64)
    c2 = 2.0 * np.array([r.e_kxy for r in records], dtype=np.float64)
    y = np.array([r.e_kyy for r in records], dtype=np.float64)
    mmd = np.array([r.mmd_value for r in records], dtype=np.float64)
    b = a.shape[0]

    da = a - a.mean()
    dc2 = c2 - c2.mean()
    dy = y - y.mean()
    dprox = da - dc2
    dfull = dprox + dy
    denom = b - 1

    var_a = float(da @ da) / denom
    var_c2 = float(dc2 @ dc2) / denom
    cov_ac2 = float(da @ dc2) / denom
    var_proxy = var_a - 2.0 * cov_ac2 + var_c2
    var_y = float(dy @ dy) / denom
    cov_py = float(dprox @ dy) / denom
    return DecompositionReport(
        var_e_kxx=var_a,
        var_2e_kxy=var_c2,
        cov_e_kxx_2e_kxy=cov_ac2,
        var_proxy=var_proxy,
        var_e_kyy=var_y,
        cov_proxy_e_kyy=cov_py,
        components_total=var_proxy + var_y + 2.0 * cov_py,
        var_full_direct=float(dfull @ dfull) / denom,
        var_mmd_direct=float(np.var(mmd, ddof=1)),
        n_batches=b,
    )


def resampled_records(
    params: KernelParams,
    sp_pool: SampleSet,
    sq_pool: SampleSet,
    batch_size: int,
    n_batches: int = 100,
    seed: int = 0,
) -> list:
    """Kernel statistics over independently resampled batch pairs.

    Each batch subsamples both pools uniformly without replacement under a
    frozen kernel; record i carries step=i.
    """
    if n_batches < 2:
        raise ValueError(f"need n_batches >= 2, got {n_batches}")
    if batch_size < 2:
        raise ValueError(f"need batch_size >= 2, got {batch_size}")
    if batch_size > sp_pool.n or batch_size > sq_pool.n:
        raise ValueError(
            f"batch_size {batch_size} exceeds a pool (|P|={sp_pool.n}, |Q|={sq_pool.n})"
        )
    out = []
    for i in range(n_batches):
        gen = rngmod.stream(seed, rngmod.SUBSAMPLE, i)
        bx = sp_pool.data[gen.choice(sp_pool.n, size=batch_size, replace=False)]
        by = sq_pool.data[gen.choice(sq_pool.n, size=batch_size, replace=False)]
        k = kernel_matrix(params, bx, by)
        out.append(stats_from_blocks(k.kxx, k.kxy, k.kyy, step=i))
    return out
