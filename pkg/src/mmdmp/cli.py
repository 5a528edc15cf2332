"""Command line entry points.

Subcommands: synth-power (train + power curve on the synthetic mixture),
train (fit a kernel on embedding files), test2st (permutation two-sample
test), sid (single-instance detection scores + AUROC), diag (kernel
statistics and the variance decomposition). Results are JSON on stdout, or
written to --out; failures become a JSON error object on stderr with a
nonzero exit. A --config file supplies defaults; explicit flags win.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import rng as rngmod
from . import synthetic
from .data_io import load_embeddings, load_run_config
from .diagnostics import resampled_records, variance_decomposition
from .estimators import SampleSet
from .kernel import (
    DEFAULT_EPSILON,
    DEFAULT_SIGMA_PHI,
    DEFAULT_SIGMA_Q,
    KernelParams,
    TrainableMask,
    load_params,
    save_params,
)
from .synthetic import MixtureSpec, sample_p, sample_q, variance_norm
from .testing import TestConfig, sid_auroc, sid_scores, test_power, two_sample_test
from .training import TrainConfig, train

SWEEP_MU = tuple(round(0.22 + 0.02 * i, 2) for i in range(10))


def _norm_objective(name: str) -> str:
    return name.replace("-", "_")


def _eff(flag_value, cfg: dict, key: str, default):
    """Effective setting: explicit flag, then config file, then default."""
    if flag_value is not None:
        return flag_value
    if key in cfg:
        return cfg[key]
    return default


def _train_config(args, cfg: dict, batch_cap: int | None = None) -> TrainConfig:
    batch = int(_eff(getattr(args, "batch_size", None), cfg, "batch_size", 200))
    if batch_cap is not None:
        batch = min(batch, batch_cap)
    return TrainConfig(
        objective=_norm_objective(_eff(getattr(args, "objective", None), cfg, "objective", "mmd_mp")),
        lam=float(_eff(None, cfg, "lambda", 1e-8)),
        learning_rate=float(_eff(getattr(args, "learning_rate", None), cfg, "learning_rate", 5e-5)),
        max_steps=int(_eff(getattr(args, "max_steps", None), cfg, "max_steps", 1000)),
        batch_size=batch,
        seed=int(_eff(getattr(args, "seed", None), cfg, "seed", 0)),
        adam_beta1=float(_eff(None, cfg, "adam_beta1", 0.9)),
        adam_beta2=float(_eff(None, cfg, "adam_beta2", 0.999)),
        adam_eps=float(_eff(None, cfg, "adam_eps", 1e-8)),
        subsample_policy=str(_eff(None, cfg, "subsample_policy", "uniform")),
    )


def _kernel_params(d: int, cfg: dict, seed: int) -> KernelParams:
    mask = TrainableMask(
        epsilon=bool(cfg.get("train_epsilon", False)),
        sigma_phi=bool(cfg.get("train_sigma_phi", False)),
        sigma_q=bool(cfg.get("train_sigma_q", False)),
        featurizer=bool(cfg.get("train_featurizer", True)),
    )
    return KernelParams.default(
        d,
        seed=seed,
        epsilon=float(cfg.get("epsilon", DEFAULT_EPSILON)),
        sigma_phi=float(cfg.get("sigma_phi", DEFAULT_SIGMA_PHI)),
        sigma_q=float(cfg.get("sigma_q", DEFAULT_SIGMA_Q)),
        mask=mask,
    )


def _test_config(args, cfg: dict) -> TestConfig:
    return TestConfig(
        alpha=float(_eff(getattr(args, "alpha", None), cfg, "alpha", 0.05)),
        n_perm=int(_eff(getattr(args, "n_perm", None), cfg, "n_perm", 200)),
        statistic=str(_eff(getattr(args, "statistic", None), cfg, "statistic", "mmd")),
        seed=int(_eff(getattr(args, "seed", None), cfg, "seed", 0)),
    )


def _load_config(args) -> dict:
    path = getattr(args, "config", None)
    return load_run_config(path) if path else {}


def _emit(result: dict, out_path) -> None:
    text = json.dumps(result, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _load_q_sets(spec: str) -> list:
    return [load_embeddings(p) for p in spec.split(",") if p]


# -- subcommands ---------------------------------------------------------------


def cmd_synth_power(args) -> dict:
    cfg = _load_config(args)
    seed = int(_eff(args.seed, cfg, "seed", 0))
    dim = int(_eff(args.dim, cfg, "dim", 100))
    delta = float(_eff(args.delta, cfg, "delta", 1.3))
    q_centers = int(_eff(args.q_centers, cfg, "q_centers", 4))
    test_center = int(_eff(args.test_center, cfg, "test_center", 0))
    train_n = args.train_n
    if args.sweep:
        mus = list(SWEEP_MU)
    elif args.mu is not None:
        mus = [args.mu]
    elif "mu" in cfg:
        mus = [float(cfg["mu"])]
    else:
        raise ValueError("synth-power needs --mu or --sweep")

    tcfg = _train_config(args, cfg, batch_cap=train_n)
    test_cfg = _test_config(args, cfg)
    curve = []
    for mu in mus:
        spec = MixtureSpec(mu=mu, delta=delta, d=dim, q_centers=q_centers, seed=seed)
        sp_train = sample_p(train_n, dim, seed=seed)
        sq_train = sample_q(train_n, spec)
        trace = train(sp_train, sq_train, tcfg, omega0=_kernel_params(dim, cfg, seed))
        pairs = []
        for i in range(args.test_sets):
            gp = rngmod.stream(seed, rngmod.TEST_DRAW, 2 * i)
            gq = rngmod.stream(seed, rngmod.TEST_DRAW, 2 * i + 1)
            pairs.append(
                (
                    SampleSet(synthetic._draw_p(gp, args.set_size, dim), label="P"),
                    SampleSet(
                        synthetic._draw_center(gq, args.set_size, spec, test_center),
                        label="Q",
                    ),
                )
            )
        power = test_power(pairs, trace.final_params, test_cfg)
        last = trace.records[-1] if trace.records else None
        curve.append(
            {
                "mu": mu,
                "power": power,
                "final_objective": last.objective if last else None,
                "variance_norm_q": variance_norm(sq_train),
            }
        )
    return {
        "command": "synth-power",
        "seed": seed,
        "config": {
            "objective": tcfg.objective,
            "train_n": train_n,
            "test_sets": args.test_sets,
            "set_size": args.set_size,
            "dim": dim,
            "delta": delta,
            "q_centers": q_centers,
            "test_center": test_center,
            "max_steps": tcfg.max_steps,
            "learning_rate": tcfg.learning_rate,
            "batch_size": tcfg.batch_size,
            "n_perm": test_cfg.n_perm,
            "alpha": test_cfg.alpha,
            "statistic": test_cfg.statistic,
        },
        "metrics": {"curve": curve},
        "outputs": {"out": args.out},
    }


def cmd_train(args) -> dict:
    cfg = _load_config(args)
    sp = load_embeddings(args.p)
    sq_list = _load_q_sets(args.q)
    pool = min(sp.n, sum(s.n for s in sq_list))
    tcfg = _train_config(args, cfg, batch_cap=pool)
    omega0 = _kernel_params(sp.dim, cfg, tcfg.seed)
    trace = train(sp, sq_list, tcfg, omega0=omega0)
    save_params(args.out_model, trace.final_params)
    if args.out_trace:
        trace.write_jsonl(args.out_trace)
    last = trace.records[-1] if trace.records else None
    return {
        "command": "train",
        "seed": tcfg.seed,
        "config": {
            "objective": tcfg.objective,
            "lambda": tcfg.lam,
            "learning_rate": tcfg.learning_rate,
            "max_steps": tcfg.max_steps,
            "batch_size": tcfg.batch_size,
            "n_p": sp.n,
            "n_q": [s.n for s in sq_list],
            "dim": sp.dim,
        },
        "metrics": {
            "final_objective": last.objective if last else None,
            "final_estimator": last.estimator if last else None,
            "final_variance": last.variance if last else None,
            "steps": len(trace.records),
        },
        "outputs": {"model": args.out_model, "trace": args.out_trace, "out": args.out},
    }


def _subsample(s: SampleSet, k: int, seed: int, index: int) -> SampleSet:
    if k > s.n:
        raise ValueError(f"test size {k} exceeds sample of {s.n}")
    if k == s.n:
        return s
    gen = rngmod.stream(seed, rngmod.SUBSAMPLE, index)
    return SampleSet(data=s.data[gen.choice(s.n, size=k, replace=False)], label=s.label)


def cmd_test2st(args) -> dict:
    cfg = _load_config(args)
    params = load_params(args.model)
    sp = load_embeddings(args.p)
    sq = load_embeddings(args.q)
    test_cfg = _test_config(args, cfg)
    repeats = args.repeats
    if repeats < 1:
        raise ValueError(f"--repeats must be >= 1, got {repeats}")
    if repeats > 1 and args.test_size is None:
        raise ValueError("--repeats > 1 needs --test-size to subsample each repeat")
    test_size = args.test_size if args.test_size is not None else min(sp.n, sq.n)

    outcomes = []
    for r in range(repeats):
        sp_r = _subsample(sp, test_size, test_cfg.seed, 2 * r)
        sq_r = _subsample(sq, test_size, test_cfg.seed, 2 * r + 1)
        outcomes.append(two_sample_test(sp_r, sq_r, params, test_cfg, trial=r))
    rate = float(np.count_nonzero([o.reject for o in outcomes])) / repeats
    return {
        "command": "test2st",
        "seed": test_cfg.seed,
        "config": {
            "alpha": test_cfg.alpha,
            "n_perm": test_cfg.n_perm,
            "statistic": test_cfg.statistic,
            "repeats": repeats,
            "test_size": test_size,
        },
        "metrics": {
            "rejection_rate": rate,
            "outcomes": [o.to_dict() for o in outcomes],
        },
        "outputs": {"out": args.out},
    }


def cmd_sid(args) -> dict:
    cfg = _load_config(args)
    params = load_params(args.model)
    ref = load_embeddings(args.ref)
    sp = load_embeddings(args.p)
    sq = load_embeddings(args.q)
    scores_p = sid_scores(ref, sp, params)
    scores_q = sid_scores(ref, sq, params)
    return {
        "command": "sid",
        "seed": int(_eff(args.seed, cfg, "seed", 0)),
        "config": {"n_ref": ref.n, "n_p": sp.n, "n_q": sq.n},
        "metrics": {
            "auroc": sid_auroc(ref, sp, sq, params),
            "scores_p": scores_p.tolist(),
            "scores_q": scores_q.tolist(),
        },
        "outputs": {"out": args.out},
    }


def cmd_diag(args) -> dict:
    cfg = _load_config(args)
    sp = load_embeddings(args.p)
    sq_list = _load_q_sets(args.q)
    sq_pool = SampleSet(
        data=np.concatenate([s.data for s in sq_list], axis=0),
        label=sq_list[0].label if len(sq_list) == 1 else "mixed",
    )
    trained_metrics = {}
    if args.model:
        params = load_params(args.model)
        objective = None
    elif args.objective:
        pool = min(sp.n, sq_pool.n)
        tcfg = _train_config(args, cfg, batch_cap=pool)
        trace = train(sp, sq_list, tcfg, omega0=_kernel_params(sp.dim, cfg, tcfg.seed))
        params = trace.final_params
        objective = tcfg.objective
        if trace.records:
            trained_metrics["final_objective"] = trace.records[-1].objective
    else:
        raise ValueError("diag needs --model or --objective")

    seed = int(_eff(args.seed, cfg, "seed", 0))
    batch_size = args.batch_size or min(sp.n, sq_pool.n)
    records = resampled_records(
        params, sp, sq_pool, batch_size=batch_size, n_batches=args.batches, seed=seed
    )
    report = variance_decomposition(records)
    if args.out_csv:
        with open(args.out_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "e_kxx", "e_kyy", "e_kxy", "mmd"])
            for rec in records:
                writer.writerow([rec.step, rec.e_kxx, rec.e_kyy, rec.e_kxy, rec.mmd_value])
    return {
        "command": "diag",
        "seed": seed,
        "config": {
            "objective": objective,
            "model": args.model,
            "batches": args.batches,
            "batch_size": batch_size,
        },
        "metrics": {**trained_metrics, "decomposition": report.to_dict()},
        "outputs": {"csv": args.out_csv, "out": args.out},
    }


# -- parser --------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration file (key = value lines)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="write the JSON result here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmdmp",
        description="Kernel two-sample testing with multi-population-aware training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-power", help="power curve on the synthetic mixture")
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--sweep", action="store_true", help=f"sweep mu over {SWEEP_MU}")
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--q-centers", type=int, default=None)
    p.add_argument("--test-center", type=int, default=None)
    p.add_argument("--objective", default=None)
    p.add_argument("--train-n", type=int, default=200)
    p.add_argument("--test-sets", type=int, default=1000)
    p.add_argument("--set-size", type=int, default=10)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--n-perm", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--statistic", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_synth_power)

    p = sub.add_parser("train", help="train a kernel on embedding files")
    p.add_argument("--p", required=True, help="P-side embedding file")
    p.add_argument("--q", required=True, help="comma-separated Q-side embedding files")
    p.add_argument("--objective", default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-trace", default=None, help="JSON-lines per-step trace")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("test2st", help="permutation two-sample test")
    p.add_argument("--model", required=True)
    p.add_argument("--p", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--n-perm", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--statistic", default=None, choices=["mmd", "mpp"])
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--test-size", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_test2st)

    p = sub.add_parser("sid", help="single-instance detection scores and AUROC")
    p.add_argument("--model", required=True)
    p.add_argument("--ref", required=True, help="reference embedding file")
    p.add_argument("--p", required=True)
    p.add_argument("--q", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_sid)

    p = sub.add_parser("diag", help="kernel statistics and variance decomposition")
    p.add_argument("--model", default=None)
    p.add_argument("--objective", default=None)
    p.add_argument("--p", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--batches", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--out-csv", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_diag)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except Exception as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(err) + "\n")
        return 1
    _emit(result, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
