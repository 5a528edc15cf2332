"""Estimator contracts against naive loop oracles and hand-evaluated cases."""
from __future__ import annotations

import math

import numpy as np
import pytest

from mmdmp.estimators import (
    EstimateReport,
    KernelMatrices,
    SampleSet,
    estimate_report,
    mmd_b,
    mmd_u,
    mpp_u,
    r_term,
    var_h1,
    var_h1_star,
)

from helpers import gaussian_matrices


# -- naive oracles (independent loop implementations, frozen here) ------------


def oracle_mmd_u(kxx, kxy, kyy):
    n = kxx.shape[0]
    acc = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                acc += kxx[i, j] - kxy[i, j] - kxy[j, i] + kyy[i, j]
    return acc / (n * (n - 1))


def oracle_mpp_u(kxx, kxy):
    n = kxx.shape[0]
    acc = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                acc += kxx[i, j] - kxy[i, j] - kxy[j, i]
    return acc / (n * (n - 1))


def oracle_r_term(kyy):
    m = kyy.shape[0]
    acc = 0.0
    for i in range(m):
        for j in range(m):
            if i != j:
                acc += kyy[i, j]
    return acc / (m * (m - 1))


def oracle_variance(h):
    # Inner sums deliberately include j = i.
    n = h.shape[0]
    acc = 0.0
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += h[i, j]
        acc += s * s
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += h[i, j]
    return 4.0 * acc / n**3 - 4.0 * total * total / n**4


def oracle_mmd_b(ref_kxx, kx, ktt):
    n = ref_kxx.shape[0]
    acc = 0.0
    for i in range(n):
        for j in range(n):
            acc += ref_kxx[i, j]
    cross = 0.0
    for i in range(n):
        cross += kx[i]
    return acc / (n * n) - 2.0 * cross / n + ktt


def random_matrices(gen, n, m=None, d=3, shift=0.5, sigma=1.0):
    m = n if m is None else m
    x = gen.normal(size=(n, d))
    y = gen.normal(size=(m, d)) + shift
    return gaussian_matrices(x, y, sigma)


# -- hand-evaluated two-point case ---------------------------------------------


def test_hand_case_two_points():
    # x = {0, 1}, y = {2, 3}, unit-bandwidth Gaussian kernel.
    k = gaussian_matrices(np.array([[0.0], [1.0]]), np.array([[2.0], [3.0]]), 1.0)
    # Both off-diagonal pair terms equal e^-1/2 - e^-9/2, evaluated by hand.
    expected = math.exp(-0.5) - math.exp(-4.5)
    assert mmd_u(k) == pytest.approx(expected, rel=1e-12)
    # Proxy and gap: mpp = mmd - offdiag mean of kyy = expected - e^-1/2.
    assert r_term(k) == pytest.approx(math.exp(-0.5), rel=1e-12)
    assert mpp_u(k) == pytest.approx(expected - math.exp(-0.5), rel=1e-12)
    # Symmetric geometry: both proxy row sums agree, so the plug-in variance
    # degenerates to zero.
    assert var_h1_star(k) == pytest.approx(0.0, abs=1e-15)
    assert var_h1(k) == pytest.approx(0.0, abs=1e-15)


def test_variance_positive_for_unequal_rows(rng):
    k = random_matrices(rng, 6)
    assert var_h1(k) > 0.0
    assert var_h1_star(k) > 0.0


# -- trivial values ------------------------------------------------------------


def test_identical_samples_give_zero():
    x = np.random.default_rng(1).normal(size=(7, 4))
    k = gaussian_matrices(x, x.copy(), 1.0)
    assert mmd_u(k) == 0.0


def test_constant_kernel_values():
    c = 0.7
    n = 5
    block = np.full((n, n), c)
    k = KernelMatrices(kxx=block, kxy=block, kyy=block)
    assert mmd_u(k) == pytest.approx(0.0, abs=1e-15)
    assert mpp_u(k) == pytest.approx(-c, rel=1e-12)
    assert r_term(k) == pytest.approx(c, rel=1e-12)
    assert var_h1(k) == pytest.approx(0.0, abs=1e-15)
    assert var_h1_star(k) == pytest.approx(0.0, abs=1e-15)
    assert mmd_b(block, np.full(n, c), c) == pytest.approx(0.0, abs=1e-15)


def test_mmd_b_translation_invariance(rng):
    k = random_matrices(rng, 8)
    kx = k.kxy[:, 0]
    base = mmd_b(k.kxx, kx, 1.0)
    shifted = mmd_b(k.kxx + 0.37, kx + 0.37, 1.37)
    assert shifted == pytest.approx(base, abs=1e-12)


def test_mmd_b_single_reference():
    assert mmd_b(np.array([[1.0]]), np.array([1.0]), 1.0) == 0.0
    assert mmd_b(np.array([[1.0]]), np.array([0.5]), 1.0) == pytest.approx(1.0, rel=1e-12)


# -- identity and oracle equivalence -------------------------------------------


@pytest.mark.parametrize("n", [2, 3, 5, 11, 26])
def test_identity_mmd_equals_mpp_plus_r(n, rng):
    k = random_matrices(rng, n)
    lhs = mmd_u(k)
    rhs = mpp_u(k) + r_term(k)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@pytest.mark.parametrize("n", [2, 3, 4, 7, 13, 20])
def test_naive_oracle_equivalence(n, rng):
    k = random_matrices(rng, n)
    h = k.kxx - k.kxy - k.kxy.T + k.kyy
    h_star = k.kxx - k.kxy - k.kxy.T
    assert mmd_u(k) == pytest.approx(oracle_mmd_u(k.kxx, k.kxy, k.kyy), rel=1e-10, abs=1e-13)
    assert mpp_u(k) == pytest.approx(oracle_mpp_u(k.kxx, k.kxy), rel=1e-10, abs=1e-13)
    assert r_term(k) == pytest.approx(oracle_r_term(k.kyy), rel=1e-10)
    assert var_h1(k) == pytest.approx(oracle_variance(h), rel=1e-10, abs=1e-14)
    assert var_h1_star(k) == pytest.approx(oracle_variance(h_star), rel=1e-10, abs=1e-14)
    kx = k.kxy[:, 0]
    assert mmd_b(k.kxx, kx, 1.0) == pytest.approx(oracle_mmd_b(k.kxx, kx, 1.0), rel=1e-10)


def test_swap_symmetry(rng):
    k = random_matrices(rng, 9)
    swapped = KernelMatrices(kxx=k.kyy, kxy=np.ascontiguousarray(k.kxy.T), kyy=k.kxx)
    assert mmd_u(swapped) == pytest.approx(mmd_u(k), rel=1e-12)
    # The proxy is deliberately asymmetric in the two samples.
    assert abs(mpp_u(swapped) - mpp_u(k)) > 1e-3


def test_unbiasedness_under_null():
    # E[mmd_u] = 0 when P = Q; check the Monte Carlo mean sits within 3 SE.
    gen = np.random.default_rng(42)
    draws = 2000
    vals = np.empty(draws)
    for i in range(draws):
        x = gen.normal(size=(12, 3))
        y = gen.normal(size=(12, 3))
        vals[i] = mmd_u(gaussian_matrices(x, y, 1.0))
    se = vals.std(ddof=1) / math.sqrt(draws)
    assert abs(vals.mean()) < 3.0 * se


def test_estimate_report_bundle(rng):
    k = random_matrices(rng, 10)
    rep = estimate_report(k)
    assert isinstance(rep, EstimateReport)
    assert rep.mmd_u == pytest.approx(rep.mpp_u + rep.r_term, rel=1e-10, abs=1e-12)
    assert rep.n == 10
    assert set(rep.to_dict()) == {"mmd_u", "mpp_u", "r_term", "var_h1", "var_h1_star", "n"}


# -- input validation ----------------------------------------------------------


def test_sample_set_validation():
    with pytest.raises(ValueError):
        SampleSet(data=np.zeros((0, 3)))
    with pytest.raises(ValueError):
        SampleSet(data=np.zeros(4))
    with pytest.raises(ValueError):
        SampleSet(data=np.array([[1.0, np.nan]]))
    s = SampleSet(data=[[1, 2], [3, 4]], label="P")
    assert s.data.dtype == np.float64 and s.n == 2 and s.dim == 2


def test_kernel_matrices_validation(rng):
    k = random_matrices(rng, 4)
    with pytest.raises(ValueError, match="symmetric"):
        KernelMatrices(kxx=k.kxx + np.triu(np.full((4, 4), 1e-6), 1), kxy=k.kxy, kyy=k.kyy)
    with pytest.raises(ValueError, match="positive"):
        KernelMatrices(kxx=np.zeros((4, 4)), kxy=k.kxy, kyy=k.kyy)
    with pytest.raises(ValueError, match="inconsistent"):
        KernelMatrices(kxx=k.kxx, kxy=k.kxy[:3], kyy=k.kyy)


def test_equal_size_preconditions(rng):
    uneven = random_matrices(rng, 4, m=6)
    for fn in (mmd_u, mpp_u, var_h1, var_h1_star):
        with pytest.raises(ValueError, match="equal"):
            fn(uneven)
    assert r_term(uneven) == pytest.approx(oracle_r_term(uneven.kyy), rel=1e-10)
    tiny = random_matrices(rng, 1, m=1)
    with pytest.raises(ValueError, match="at least 2"):
        mmd_u(tiny)
    with pytest.raises(ValueError, match="at least 2"):
        r_term(tiny)


def test_mmd_b_validation(rng):
    k = random_matrices(rng, 3)
    with pytest.raises(ValueError, match="entries"):
        mmd_b(k.kxx, np.ones(5), 1.0)
    with pytest.raises(ValueError, match="non-finite"):
        mmd_b(k.kxx, np.array([1.0, np.inf, 1.0]), 1.0)
