"""Deep blend kernel: k(x, y) = [(1 - eps) * kappa(f(x), f(y)) + eps] * q(x, y).

kappa and q are Gaussian kernels with bandwidths sigma_phi (on featurized
inputs) and sigma_q (on raw inputs). The blend keeps k strictly positive and
bounded by 1, with k(x, x) = 1. Constrained parameters are stored
unconstrained: eps = sigmoid(epsilon_raw), sigma_* = exp(log_sigma_*).

The kernel forward is written once, as tape graph builders; the plain numpy
API evaluates the same graph on constant tensors. That keeps the training
objective and the inference-path estimators numerically identical.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from .estimators import KernelMatrices

MAGIC = b"MMDK"
FORMAT_VERSION = 1

DEFAULT_EPSILON = 1e-10
DEFAULT_SIGMA_Q = 30.0
DEFAULT_SIGMA_PHI = 45.0
# Bandwidth tuned for the larger-sample text regime (about 3k reference
# instances per side); pass sigma_phi=SIGMA_PHI_LARGE for that setting.
SIGMA_PHI_LARGE = 55.0


@dataclass(frozen=True)
class TrainableMask:
    """Which parameter groups the optimizer may touch."""

    epsilon: bool = False
    sigma_phi: bool = False
    sigma_q: bool = False
    featurizer: bool = True

    def as_floats(self) -> np.ndarray:
        return np.array(
            [self.epsilon, self.sigma_phi, self.sigma_q, self.featurizer],
            dtype=np.float64,
        )

    @staticmethod
    def from_floats(v) -> "TrainableMask":
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape[0] != 4 or not np.all(np.isin(v, (0.0, 1.0))):
            raise ValueError(f"trainable_mask must be 4 flags of 0/1, got {v}")
        return TrainableMask(bool(v[0]), bool(v[1]), bool(v[2]), bool(v[3]))


@dataclass(frozen=True)
class FeaturizerParams:
    """Fully connected net: x @ W + b per layer, softplus between layers.

    layers is a list of (weight (d_in, d_out), bias (d_out,)) pairs; the last
    layer has no activation. A single layer with identity weight and zero
    bias makes the featurizer a pass-through.
    """

    layers: tuple

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ValueError("featurizer needs at least one layer")
        norm = []
        prev_out = None
        for i, (w, b) in enumerate(self.layers):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[1]:
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if prev_out is not None and w.shape[0] != prev_out:
                raise ValueError(
                    f"layer {i}: input dim {w.shape[0]} != previous output {prev_out}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")
            prev_out = w.shape[1]
            norm.append((w, b))
        object.__setattr__(self, "layers", tuple(norm))

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    @property
    def dims(self) -> tuple:
        """Shape header: (input_dim, out_0, out_1, ...)."""
        return (self.input_dim,) + tuple(w.shape[1] for w, _ in self.layers)

    @staticmethod
    def identity(d: int) -> "FeaturizerParams":
        return FeaturizerParams(layers=((np.eye(d), np.zeros(d)),))

    @staticmethod
    def default(d: int, seed: int = 0, widths: tuple | None = None) -> "FeaturizerParams":
        """He-style init: weights N(0, 2 / fan_in), zero biases, seeded."""
        if widths is None:
            widths = (2 * d, 2 * d, d)
        gen = rngmod.stream(seed, rngmod.FEATURIZER_INIT)
        layers = []
        fan_in = d
        for width in widths:
            w = gen.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, width))
            layers.append((w, np.zeros(width)))
            fan_in = width
        return FeaturizerParams(layers=tuple(layers))


@dataclass(frozen=True)
class KernelParams:
    """All kernel state: blend weight, bandwidths, featurizer, and mask."""

    epsilon_raw: float
    log_sigma_phi: float
    log_sigma_q: float
    featurizer: FeaturizerParams
    trainable_mask: TrainableMask = field(default_factory=TrainableMask)

    def __post_init__(self):
        for name in ("epsilon_raw", "log_sigma_phi", "log_sigma_q"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} is not finite: {v}")

    @property
    def epsilon(self) -> float:
        return float(ad.stable_sigmoid(np.float64(self.epsilon_raw)))

    @property
    def sigma_phi(self) -> float:
        return math.exp(self.log_sigma_phi)

    @property
    def sigma_q(self) -> float:
        return math.exp(self.log_sigma_q)

    @staticmethod
    def default(
        d: int,
        seed: int = 0,
        epsilon: float = DEFAULT_EPSILON,
        sigma_phi: float = DEFAULT_SIGMA_PHI,
        sigma_q: float = DEFAULT_SIGMA_Q,
        widths: tuple | None = None,
        mask: TrainableMask | None = None,
    ) -> "KernelParams":
        if not 0.0 < epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
        if sigma_phi <= 0.0 or sigma_q <= 0.0:
            raise ValueError("bandwidths must be positive")
        return KernelParams(
            epsilon_raw=math.log(epsilon / (1.0 - epsilon)),
            log_sigma_phi=math.log(sigma_phi),
            log_sigma_q=math.log(sigma_q),
            featurizer=FeaturizerParams.default(d, seed=seed, widths=widths),
            trainable_mask=mask if mask is not None else TrainableMask(),
        )

    def with_mask(self, mask: TrainableMask) -> "KernelParams":
        return replace(self, trainable_mask=mask)


# -- graph builders ---------------------------------------------------------


def featurize_graph(layer_tensors, x: ad.Tensor) -> ad.Tensor:
    h = x
    last = len(layer_tensors) - 1
    for i, (w, b) in enumerate(layer_tensors):
        h = h @ w + b
        if i < last:
            h = ad.softplus(h)
    return h


def sqdist_graph(a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """Pairwise squared distances, clamped at 0 against float noise."""
    a2 = ad.tsum(a * a, axis=1, keepdims=True)
    b2 = ad.tsum(b * b, axis=1, keepdims=True)
    return ad.relu(a2 - 2.0 * (a @ ad.transpose(b)) + ad.transpose(b2))


def kernel_block_graph(
    scalars: dict,
    xa: ad.Tensor,
    xb: ad.Tensor,
    fa: ad.Tensor,
    fb: ad.Tensor,
    same: bool = False,
) -> ad.Tensor:
    """One kernel block from raw inputs and their featurized versions.

    scalars holds tensors for epsilon_raw, log_sigma_phi, log_sigma_q. Pass
    same=True when xa and xb are the same rows: the distance diagonal is
    then pinned to its true value 0 (matmul noise otherwise leaves it at
    +-1e-16), which keeps the block diagonal exactly at the kernel's
    self-similarity, 1.
    """
    eps = ad.sigmoid(scalars["epsilon_raw"])
    half_inv_var_phi = 0.5 * ad.exp(-2.0 * scalars["log_sigma_phi"])
    half_inv_var_q = 0.5 * ad.exp(-2.0 * scalars["log_sigma_q"])
    d2_phi = sqdist_graph(fa, fb)
    d2_q = sqdist_graph(xa, xb)
    if same:
        hollow = ad.constant(1.0 - np.eye(xa.shape[0]))
        d2_phi = d2_phi * hollow
        d2_q = d2_q * hollow
    kappa = ad.exp(ad.neg(d2_phi * half_inv_var_phi))
    q = ad.exp(ad.neg(d2_q * half_inv_var_q))
    return ((1.0 - eps) * kappa + eps) * q


def scalar_tensors(params: KernelParams, trainable: bool = False) -> dict:
    mask = params.trainable_mask
    return {
        "epsilon_raw": ad.Tensor(params.epsilon_raw, requires_grad=trainable and mask.epsilon),
        "log_sigma_phi": ad.Tensor(
            params.log_sigma_phi, requires_grad=trainable and mask.sigma_phi
        ),
        "log_sigma_q": ad.Tensor(params.log_sigma_q, requires_grad=trainable and mask.sigma_q),
    }


def layer_tensors(params: KernelParams, trainable: bool = False) -> list:
    req = trainable and params.trainable_mask.featurizer
    return [
        (ad.Tensor(w, requires_grad=req), ad.Tensor(b, requires_grad=req))
        for w, b in params.featurizer.layers
    ]


# -- numpy API ---------------------------------------------------------------


def gaussian_kernel(a, b, sigma: float) -> float:
    """Plain Gaussian kernel between two vectors."""
    if sigma <= 0.0 or not np.isfinite(sigma):
        raise ValueError(f"sigma must be positive, got {sigma}")
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"vector shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.exp(-(d @ d) / (2.0 * sigma * sigma)))


def gaussian_gram(a, b, sigma: float) -> np.ndarray:
    """Gaussian kernel matrix between row sets; used for fixed-kernel tests."""
    if sigma <= 0.0 or not np.isfinite(sigma):
        raise ValueError(f"sigma must be positive, got {sigma}")
    at = ad.constant(np.asarray(a, dtype=np.float64))
    bt = ad.constant(np.asarray(b, dtype=np.float64))
    d2 = sqdist_graph(at, bt).value
    return np.exp(-d2 / (2.0 * sigma * sigma))


def featurize(params: FeaturizerParams | KernelParams, x) -> np.ndarray:
    """Run the featurizer on rows of x."""
    fp = params.featurizer if isinstance(params, KernelParams) else params
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != fp.input_dim:
        raise ValueError(f"featurize expects (n, {fp.input_dim}) input, got {x.shape}")
    tensors = [(ad.constant(w), ad.constant(b)) for w, b in fp.layers]
    return featurize_graph(tensors, ad.constant(x)).value


def kernel_block(params: KernelParams, x, y, fx=None, fy=None, same: bool = False) -> np.ndarray:
    """One (len(x), len(y)) block of kernel values under params."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    fx = featurize(params, x) if fx is None else fx
    fy = featurize(params, y) if fy is None else fy
    scalars = scalar_tensors(params)
    return kernel_block_graph(
        scalars, ad.constant(x), ad.constant(y), ad.constant(fx), ad.constant(fy), same=same
    ).value


def kernel_matrix(params: KernelParams, x, y) -> KernelMatrices:
    """All three kernel blocks for two row sets."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    fx = featurize(params, x)
    fy = featurize(params, y)
    return KernelMatrices(
        kxx=kernel_block(params, x, x, fx, fx, same=True),
        kxy=kernel_block(params, x, y, fx, fy),
        kyy=kernel_block(params, y, y, fy, fy, same=True),
    )


def kernel_gram(params: KernelParams, z) -> np.ndarray:
    """Full kernel matrix of one pooled row set against itself."""
    z = np.asarray(z, dtype=np.float64)
    fz = featurize(params, z)
    return kernel_block(params, z, z, fz, fz, same=True)


def self_kernel(params: KernelParams, x) -> np.ndarray:
    """k(x_i, x_i) for every row; evaluates the blend at zero distance."""
    x = np.asarray(x, dtype=np.float64)
    fx = featurize(params, x)
    # Row-wise a2 - 2*a.a + a2 cancels exactly, so this really is the kernel
    # at distance zero rather than an assumed constant.
    a2_phi = (fx * fx).sum(axis=1)
    a2_q = (x * x).sum(axis=1)
    d2_phi = np.maximum(a2_phi - 2.0 * a2_phi + a2_phi, 0.0)
    d2_q = np.maximum(a2_q - 2.0 * a2_q + a2_q, 0.0)
    eps = params.epsilon
    kappa = np.exp(-d2_phi / (2.0 * params.sigma_phi**2))
    q = np.exp(-d2_q / (2.0 * params.sigma_q**2))
    return ((1.0 - eps) * kappa + eps) * q


# -- serialization -----------------------------------------------------------


class ModelFormatError(ValueError):
    pass


def _param_groups(params: KernelParams) -> list:
    groups = [
        ("epsilon_raw", np.float64(params.epsilon_raw).reshape(())),
        ("log_sigma_phi", np.float64(params.log_sigma_phi).reshape(())),
        ("log_sigma_q", np.float64(params.log_sigma_q).reshape(())),
        ("trainable_mask", params.trainable_mask.as_floats()),
    ]
    for i, (w, b) in enumerate(params.featurizer.layers):
        groups.append((f"layer{i}.weight", w))
        groups.append((f"layer{i}.bias", b))
    return groups


def save_params(path, params: KernelParams) -> None:
    """Write params in the binary model format (bit-exact round trip)."""
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name, arr in _param_groups(params):
        arr = np.asarray(arr, dtype=np.float64)
        name_b = name.encode("utf-8")
        out.append(struct.pack("<I", len(name_b)))
        out.append(name_b)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f8").tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def _read_exact(buf: bytes, offset: int, count: int, what: str) -> tuple[bytes, int]:
    if offset + count > len(buf):
        raise ModelFormatError(
            f"truncated model file: needed {count} bytes for {what} at offset {offset}, "
            f"have {len(buf) - offset}"
        )
    return buf[offset : offset + count], offset + count


def load_params(path) -> KernelParams:
    """Read a model file written by save_params. Parses groups until EOF."""
    with open(path, "rb") as fh:
        buf = fh.read()
    raw, off = _read_exact(buf, 0, 4, "magic")
    if raw != MAGIC:
        raise ModelFormatError(f"bad magic: expected {MAGIC!r}, got {raw!r}")
    raw, off = _read_exact(buf, off, 4, "version")
    version = struct.unpack("<I", raw)[0]
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {version}, expected {FORMAT_VERSION}")

    groups: dict[str, np.ndarray] = {}
    while off < len(buf):
        raw, off = _read_exact(buf, off, 4, "group name length")
        name_len = struct.unpack("<I", raw)[0]
        raw, off = _read_exact(buf, off, name_len, "group name")
        name = raw.decode("utf-8")
        raw, off = _read_exact(buf, off, 4, f"rank of {name}")
        rank = struct.unpack("<I", raw)[0]
        raw, off = _read_exact(buf, off, 4 * rank, f"dims of {name}")
        dims = struct.unpack(f"<{rank}I", raw) if rank else ()
        count = int(np.prod(dims)) if rank else 1
        raw, off = _read_exact(buf, off, 8 * count, f"values of {name}")
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
        if name in groups:
            raise ModelFormatError(f"duplicate parameter group {name!r}")
        groups[name] = arr

    for required in ("epsilon_raw", "log_sigma_phi", "log_sigma_q", "trainable_mask"):
        if required not in groups:
            raise ModelFormatError(f"model file missing parameter group {required!r}")
    layers = []
    i = 0
    while f"layer{i}.weight" in groups:
        if f"layer{i}.bias" not in groups:
            raise ModelFormatError(f"model file has layer{i}.weight but no layer{i}.bias")
        layers.append((groups.pop(f"layer{i}.weight"), groups.pop(f"layer{i}.bias")))
        i += 1
    known = {"epsilon_raw", "log_sigma_phi", "log_sigma_q", "trainable_mask"}
    extra = set(groups) - known
    if extra:
        raise ModelFormatError(f"model file has unrecognized parameter groups {sorted(extra)}")
    if not layers:
        raise ModelFormatError("model file has no featurizer layers")
    return KernelParams(
        epsilon_raw=float(groups["epsilon_raw"]),
        log_sigma_phi=float(groups["log_sigma_phi"]),
        log_sigma_q=float(groups["log_sigma_q"]),
        featurizer=FeaturizerParams(layers=tuple(layers)),
        trainable_mask=TrainableMask.from_floats(groups["trainable_mask"]),
    )
