"""Kernel training by stochastic ascent on a variance-normalized objective.

Objectives (all maximized):
  mmd_d        full pair-term mean over sqrt(clamped variance + lambda)
  mmd_mp       proxy pair-term mean (no within-Q block) over its own
               sqrt(clamped variance + lambda)
  mpp_only     proxy pair-term mean alone, no normalization
  mmd_mp_star  proxy with the roles of the two samples swapped in the pair
               term (kyy - kxy - kyx), normalized like mmd_mp

The plug-in variance can dip below zero by float noise; it is clamped to 0
here, in the objective, before lambda is added. Ascent runs as Adam on the
negated objective. Multi-population Q sides are concatenated and batched
jointly; each step subsamples both pools uniformly without replacement
through per-population epoch cursors, so unbalanced pools just cycle at
different rates.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from .estimators import SampleSet
from .kernel import (
    FeaturizerParams,
    KernelParams,
    featurize_graph,
    kernel_block_graph,
    layer_tensors,
    scalar_tensors,
)

OBJECTIVES = ("mmd_d", "mmd_mp", "mpp_only", "mmd_mp_star")


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "mmd_mp"
    lam: float = 1e-8
    learning_rate: float = 5e-5
    max_steps: int = 1000
    batch_size: int = 200
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    subsample_policy: str = "uniform"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}, expected one of {OBJECTIVES}")
        if self.lam <= 0.0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0:
            raise ValueError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0.0:
            raise ValueError(f"adam_eps must be > 0, got {self.adam_eps}")
        if self.subsample_policy != "uniform":
            raise ValueError(f"unknown subsample_policy {self.subsample_policy!r}")


@dataclass(frozen=True)
class StepRecord:
    step: int
    objective: float
    estimator: float
    variance: float
    wall_time: float
    # Optional per-batch kernel statistics, filled when collection is on.
    e_kxx: float | None = None
    e_kyy: float | None = None
    e_kxy: float | None = None
    mmd_value: float | None = None

    def to_dict(self) -> dict:
        d = {
            "step": self.step,
            "objective": self.objective,
            "estimator": self.estimator,
            "variance": self.variance,
            "wall_time": self.wall_time,
        }
        if self.e_kxx is not None:
            d.update(
                e_kxx=self.e_kxx, e_kyy=self.e_kyy, e_kxy=self.e_kxy, mmd_value=self.mmd_value
            )
        return d


@dataclass
class TrainTrace:
    records: list
    final_params: KernelParams
    config: TrainConfig

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict()) + "\n")


def _param_dict(params: KernelParams) -> dict:
    d = {
        "epsilon_raw": np.float64(params.epsilon_raw).reshape(()),
        "log_sigma_phi": np.float64(params.log_sigma_phi).reshape(()),
        "log_sigma_q": np.float64(params.log_sigma_q).reshape(()),
    }
    for i, (w, b) in enumerate(params.featurizer.layers):
        d[f"layer{i}.weight"] = w.copy()
        d[f"layer{i}.bias"] = b.copy()
    return d


def _params_from_dict(d: dict, template: KernelParams) -> KernelParams:
    layers = []
    i = 0
    while f"layer{i}.weight" in d:
        layers.append((d[f"layer{i}.weight"], d[f"layer{i}.bias"]))
        i += 1
    return KernelParams(
        epsilon_raw=float(d["epsilon_raw"]),
        log_sigma_phi=float(d["log_sigma_phi"]),
        log_sigma_q=float(d["log_sigma_q"]),
        featurizer=FeaturizerParams(layers=tuple(layers)),
        trainable_mask=template.trainable_mask,
    )


def _trainable_names(params: KernelParams) -> list:
    mask = params.trainable_mask
    names = []
    if mask.epsilon:
        names.append("epsilon_raw")
    if mask.sigma_phi:
        names.append("log_sigma_phi")
    if mask.sigma_q:
        names.append("log_sigma_q")
    if mask.featurizer:
        for i in range(len(params.featurizer.layers)):
            names.append(f"layer{i}.weight")
            names.append(f"layer{i}.bias")
    return names


def _offdiag_mean_graph(h: ad.Tensor, n: int) -> ad.Tensor:
    mask = ad.constant(1.0 - np.eye(n))
    return ad.tsum(h * mask) / float(n * (n - 1))


def _rowsum_variance_graph(h: ad.Tensor, n: int) -> ad.Tensor:
    rows = ad.tsum(h, axis=1)
    total = ad.tsum(rows)
    return (4.0 / n**3) * ad.tsum(rows * rows) - (4.0 / n**4) * (total * total)


def _objective_graph(params: KernelParams, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                     trainable: bool):
    """Build the objective; returns (J, estimator value, variance value, blocks)."""
    n = x.shape[0]
    scalars = scalar_tensors(params, trainable=trainable)
    layers = layer_tensors(params, trainable=trainable)
    xt, yt = ad.constant(x), ad.constant(y)
    fx = featurize_graph(layers, xt)
    fy = featurize_graph(layers, yt)
    kxx = kernel_block_graph(scalars, xt, xt, fx, fx, same=True)
    kxy = kernel_block_graph(scalars, xt, yt, fx, fy)
    kyy = kernel_block_graph(scalars, yt, yt, fy, fy, same=True)

    if cfg.objective == "mmd_d":
        h = kxx - kxy - ad.transpose(kxy) + kyy
    elif cfg.objective in ("mmd_mp", "mpp_only"):
        h = kxx - kxy - ad.transpose(kxy)
    else:  # mmd_mp_star
        h = kyy - kxy - ad.transpose(kxy)

    est = _offdiag_mean_graph(h, n)
    var = _rowsum_variance_graph(h, n)
    if cfg.objective == "mpp_only":
        j = est
    else:
        j = est / ad.sqrt(ad.relu(var) + cfg.lam)
    blocks = (kxx.value, kxy.value, kyy.value)
    return j, float(est.value), float(var.value), blocks, scalars, layers


def objective(params: KernelParams, sp_batch: SampleSet, sq_batch: SampleSet,
              cfg: TrainConfig) -> float:
    """Objective value on one batch pair. Batches must be the same size."""
    x, y = sp_batch.data, sq_batch.data
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"batch sizes differ: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ValueError("objective needs batches of at least 2")
    j, _, _, _, _, _ = _objective_graph(params, x, y, cfg, trainable=False)
    val = float(j.value)
    if not np.isfinite(val):
        raise FloatingPointError(f"objective is not finite: {val}")
    return val


def gradient(params: KernelParams, sp_batch: SampleSet, sq_batch: SampleSet,
             cfg: TrainConfig) -> dict:
    """Gradient of the objective for every trainable group, by name.

    Frozen groups are absent; with everything frozen the result is empty.
    """
    x, y = sp_batch.data, sq_batch.data
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"batch sizes differ: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ValueError("gradient needs batches of at least 2")
    grads, _, _, _, _ = _gradient_inner(params, x, y, cfg)
    return grads


def _gradient_inner(params: KernelParams, x, y, cfg: TrainConfig):
    j, est, var, blocks, scalars, layers = _objective_graph(params, x, y, cfg, trainable=True)
    j.backward()
    grads: dict[str, np.ndarray] = {}
    mask = params.trainable_mask
    if mask.epsilon:
        grads["epsilon_raw"] = scalars["epsilon_raw"].grad
    if mask.sigma_phi:
        grads["log_sigma_phi"] = scalars["log_sigma_phi"].grad
    if mask.sigma_q:
        grads["log_sigma_q"] = scalars["log_sigma_q"].grad
    if mask.featurizer:
        for i, (w, b) in enumerate(layers):
            grads[f"layer{i}.weight"] = w.grad
            grads[f"layer{i}.bias"] = b.grad
    for name, g in grads.items():
        if g is None:
            # A trainable group the graph never touched would be a bug.
            raise RuntimeError(f"no gradient reached parameter group {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter group {name!r}")
    return grads, float(j.value), est, var, blocks


class Adam:
    """Plain Adam over a dict of named arrays."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, values: dict, grads: dict) -> None:
        """One minimization step in place on `values`."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            m_hat = self.m[name] / (1.0 - b1**self.t)
            v_hat = self.v[name] / (1.0 - b2**self.t)
            values[name] = values[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _EpochCursor:
    """Uniform without-replacement batches; reshuffles when a batch no
    longer fits, dropping the epoch remainder."""

    def __init__(self, n: int, gen: np.random.Generator):
        self.n = n
        self.gen = gen
        self.order = gen.permutation(n)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        if self.pos + k > self.n:
            self.order = self.gen.permutation(self.n)
            self.pos = 0
        out = self.order[self.pos : self.pos + k]
        self.pos += k
        return out


def _batch_stats(blocks) -> dict:
    kxx, kxy, kyy = blocks
    n = kxx.shape[0]
    e_kxx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    e_kyy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    e_kxy = kxy.mean()
    h = kxx - kxy - kxy.T + kyy
    mmd = (h.sum() - np.trace(h)) / (n * (n - 1))
    return {
        "e_kxx": float(e_kxx),
        "e_kyy": float(e_kyy),
        "e_kxy": float(e_kxy),
        "mmd_value": float(mmd),
    }


def train(
    sp_train: SampleSet,
    sq_train: SampleSet | list,
    cfg: TrainConfig,
    omega0: KernelParams | None = None,
    collect_kernel_stats: bool = False,
) -> TrainTrace:
    """Run cfg.max_steps ascent steps and return the trace plus final params.

    sq_train may be one SampleSet or a list of them (multiple source
    populations); the Q pools are concatenated before batching. max_steps=0
    returns the initial parameters untouched.
    """
    sq_list = sq_train if isinstance(sq_train, (list, tuple)) else [sq_train]
    if not sq_list:
        raise ValueError("need at least one Q population")
    dims = {s.dim for s in sq_list} | {sp_train.dim}
    if len(dims) != 1:
        raise ValueError(f"populations disagree on dimension: {sorted(dims)}")
    xp = sp_train.data
    xq = np.concatenate([s.data for s in sq_list], axis=0)
    if cfg.batch_size > xp.shape[0] or cfg.batch_size > xq.shape[0]:
        raise ValueError(
            f"batch_size {cfg.batch_size} exceeds a population "
            f"(|P|={xp.shape[0]}, |Q|={xq.shape[0]})"
        )

    params = omega0 if omega0 is not None else KernelParams.default(sp_train.dim, seed=cfg.seed)
    if params.featurizer.input_dim != sp_train.dim:
        raise ValueError(
            f"featurizer expects dim {params.featurizer.input_dim}, data has {sp_train.dim}"
        )
    values = _param_dict(params)
    trainable = set(_trainable_names(params))

    cursor_p = _EpochCursor(xp.shape[0], rngmod.stream(cfg.seed, rngmod.BATCH_P))
    cursor_q = _EpochCursor(xq.shape[0], rngmod.stream(cfg.seed, rngmod.BATCH_Q))
    opt = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    records: list[StepRecord] = []
    current = params
    for step in range(cfg.max_steps):
        t0 = time.perf_counter()
        bx = xp[cursor_p.take(cfg.batch_size)]
        by = xq[cursor_q.take(cfg.batch_size)]
        if trainable:
            grads, j, est, var, blocks = _gradient_inner(current, bx, by, cfg)
        else:
            jt, est, var, blocks, _, _ = _objective_graph(current, bx, by, cfg, trainable=False)
            grads, j = {}, float(jt.value)
        if not np.isfinite(j):
            raise FloatingPointError(f"objective diverged at step {step}: {j}")
        if grads:
            # Ascent: minimize the negated objective.
            opt.step(values, {k: -np.asarray(g) for k, g in grads.items()})
            current = _params_from_dict(values, params)
        extra = _batch_stats(blocks) if collect_kernel_stats else {}
        records.append(
            StepRecord(
                step=step,
                objective=j,
                estimator=est,
                variance=var,
                wall_time=time.perf_counter() - t0,
                **extra,
            )
        )
    return TrainTrace(records=records, final_params=current, config=cfg)
