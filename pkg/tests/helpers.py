"""Shared helpers for the test suite."""
from __future__ import annotations

import numpy as np

from mmdmp.estimators import KernelMatrices
from mmdmp.kernel import gaussian_gram


def gaussian_matrices(x, y, sigma: float = 1.0) -> KernelMatrices:
    return KernelMatrices(
        kxx=gaussian_gram(x, x, sigma),
        kxy=gaussian_gram(x, y, sigma),
        kyy=gaussian_gram(y, y, sigma),
    )


def random_matrices(gen: np.random.Generator, n: int, m: int | None = None, d: int = 3,
                    shift: float = 0.5, sigma: float = 1.0) -> KernelMatrices:
    m = n if m is None else m
    x = gen.normal(size=(n, d))
    y = gen.normal(size=(m, d)) + shift
    return gaussian_matrices(x, y, sigma)
