"""Discrepancy estimators over precomputed kernel blocks.

All estimators take kernel evaluations, not raw data, so any kernel (fixed
Gaussian, deep blend, or a constant used in tests) plugs in. Arithmetic is
float64 end to end.

Conventions:
  - the unbiased squared-discrepancy statistic averages the pair term
    h(i, j) = kxx_ij - kxy_ij - kxy_ji + kyy_ij over i != j;
  - the multi-population proxy drops the kyy term from h, which removes the
    within-Q contribution and leaves the same maximizer up to a constant
    shift (the off-diagonal mean of kyy);
  - the variance estimators keep the j = i terms inside the row sums. They
    are plug-in estimates and may come out as tiny negatives; clamping is
    the optimizer's job, not theirs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SYM_TOL = 1e-12


def _as_matrix(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class SampleSet:
    """A population sample: rows are instances, columns are features."""

    data: np.ndarray
    label: str = ""

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"sample data must be (n >= 1, d >= 1), got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("sample data contains non-finite values")
        object.__setattr__(self, "data", a)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class KernelMatrices:
    """Kernel blocks for two samples: kxx (n,n), kxy (n,m), kyy (m,m)."""

    kxx: np.ndarray
    kxy: np.ndarray
    kyy: np.ndarray

    def __post_init__(self):
        kxx = _as_matrix(self.kxx, "kxx")
        kxy = _as_matrix(self.kxy, "kxy")
        kyy = _as_matrix(self.kyy, "kyy")
        n, m = kxy.shape
        if kxx.shape != (n, n):
            raise ValueError(f"kxx shape {kxx.shape} inconsistent with kxy {kxy.shape}")
        if kyy.shape != (m, m):
            raise ValueError(f"kyy shape {kyy.shape} inconsistent with kxy {kxy.shape}")
        for name, k in (("kxx", kxx), ("kyy", kyy)):
            if np.max(np.abs(k - k.T), initial=0.0) > _SYM_TOL:
                raise ValueError(f"{name} is not symmetric within {_SYM_TOL}")
        if np.min(kxx) <= 0.0 or np.min(kyy) <= 0.0 or np.min(kxy) <= 0.0:
            raise ValueError("kernel entries must be strictly positive")
        object.__setattr__(self, "kxx", kxx)
        object.__setattr__(self, "kxy", kxy)
        object.__setattr__(self, "kyy", kyy)

    @property
    def n(self) -> int:
        return self.kxy.shape[0]

    @property
    def m(self) -> int:
        return self.kxy.shape[1]


def _require_equal_sides(k: KernelMatrices, what: str) -> int:
    n, m = k.n, k.m
    if n != m:
        raise ValueError(f"{what} needs equal sample sizes, got n={n}, m={m}")
    if n < 2:
        raise ValueError(f"{what} needs at least 2 instances per side, got n={n}")
    return n


def _offdiag_mean(m: np.ndarray) -> float:
    n = m.shape[0]
    return float((m.sum() - np.trace(m)) / (n * (n - 1)))


def _pair_term(k: KernelMatrices) -> np.ndarray:
    return k.kxx - k.kxy - k.kxy.T + k.kyy


def _proxy_pair_term(k: KernelMatrices) -> np.ndarray:
    return k.kxx - k.kxy - k.kxy.T


def mmd_u(k: KernelMatrices) -> float:
    """Unbiased squared-discrepancy U-statistic. Needs n = m >= 2."""
    _require_equal_sides(k, "mmd_u")
    return _offdiag_mean(_pair_term(k))


def mpp_u(k: KernelMatrices) -> float:
    """Proxy U-statistic: pair term without the within-Q block. n = m >= 2."""
    _require_equal_sides(k, "mpp_u")
    return _offdiag_mean(_proxy_pair_term(k))


def r_term(k: KernelMatrices) -> float:
    """Off-diagonal mean of kyy; the constant gap between mmd_u and mpp_u."""
    if k.m < 2:
        raise ValueError(f"r_term needs at least 2 instances in the second sample, got m={k.m}")
    return _offdiag_mean(k.kyy)


def _rowsum_variance(h: np.ndarray) -> float:
    # Row sums keep the j = i terms; plug-in value, possibly a tiny negative.
    n = h.shape[0]
    rows = h.sum(axis=1)
    total = rows.sum()
    return float(4.0 * (rows @ rows) / n**3 - 4.0 * total * total / n**4)


def var_h1(k: KernelMatrices) -> float:
    """Plug-in variance of the pair-term statistic under the alternative."""
    _require_equal_sides(k, "var_h1")
    return _rowsum_variance(_pair_term(k))


def var_h1_star(k: KernelMatrices) -> float:
    """Plug-in variance of the proxy pair-term statistic."""
    _require_equal_sides(k, "var_h1_star")
    return _rowsum_variance(_proxy_pair_term(k))


def mmd_b(ref_kxx, kx_tilde, k_tilde_tilde: float) -> float:
    """Biased squared-discrepancy of one instance against a reference set.

    ref_kxx is the full (n, n) reference kernel block including diagonal,
    kx_tilde the n kernel values against the instance, and k_tilde_tilde the
    instance's self-similarity. Invariant under adding a constant to every
    kernel value, since the coefficients 1 - 2 + 1 cancel.
    """
    ref = _as_matrix(ref_kxx, "ref_kxx")
    n = ref.shape[0]
    if ref.shape != (n, n):
        raise ValueError(f"ref_kxx must be square, got {ref.shape}")
    if n < 1:
        raise ValueError("mmd_b needs at least 1 reference instance")
    kx = np.asarray(kx_tilde, dtype=np.float64).reshape(-1)
    if kx.shape[0] != n:
        raise ValueError(f"kx_tilde has {kx.shape[0]} entries, expected {n}")
    if not np.all(np.isfinite(kx)) or not np.isfinite(k_tilde_tilde):
        raise ValueError("mmd_b inputs contain non-finite values")
    return float(ref.sum() / (n * n) - 2.0 * kx.sum() / n + float(k_tilde_tilde))


@dataclass(frozen=True)
class EstimateReport:
    """Bundle of the five estimators on one pair of samples."""

    mmd_u: float
    mpp_u: float
    r_term: float
    var_h1: float
    var_h1_star: float
    n: int = field(default=0)

    def to_dict(self) -> dict:
        return {
            "mmd_u": self.mmd_u,
            "mpp_u": self.mpp_u,
            "r_term": self.r_term,
            "var_h1": self.var_h1,
            "var_h1_star": self.var_h1_star,
            "n": self.n,
        }


def estimate_report(k: KernelMatrices) -> EstimateReport:
    """All estimators at once; mmd_u always equals mpp_u + r_term."""
    return EstimateReport(
        mmd_u=mmd_u(k),
        mpp_u=mpp_u(k),
        r_term=r_term(k),
        var_h1=var_h1(k),
        var_h1_star=var_h1_star(k),
        n=k.n,
    )
