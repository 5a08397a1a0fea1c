"""Command-line entry points.

Each command reads an optional flat-JSON config file, applies flag
overrides, validates the merged settings against its known keys, and
echoes the fully-resolved config as ``provenance.json`` in the output
directory so any run can be re-executed from its artifacts alone.

Exit codes: 0 success, 1 validation error, 2 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .condense import CondenseConfig, DivergenceError, condense, finalize
from .data import GeneratorSpec, generate_graph, load_dataset, save_dataset
from .diagnostics import error_decomposition, trajectory_report
from .evaluation import evaluate, random_coreset_baseline
from .matching import MatchConfig
from .models import ModelSpec
from .spectral import (FreqGradConfig, fidelity_pearson, freq_grad_experiment,
                       spectral_metrics, write_freq_grad_csv)
from . import autodiff as ad


def _merge_config(args, keys, defaults=None):
    """File values, overridden by explicit flags, validated against keys."""
    merged = dict(defaults or {})
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = sorted(set(file_cfg) - set(keys))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        merged.update(file_cfg)
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _echo(out_dir, config):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "provenance.json"), "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)


def _require_seed(cfg):
    if cfg.get("seed") is None:
        raise ValueError("--seed is required for this command")


GEN_KEYS = ("model", "nodes", "dims", "classes", "p", "m_edges", "k_neighbors",
            "p_rewire", "block_sizes", "p_in", "p_out", "feature_bias",
            "feature_std", "seed", "out")


def cmd_gen(args):
    cfg = _merge_config(args, GEN_KEYS, defaults={
        "model": "er", "classes": 2, "p": 0.1, "m_edges": 2, "k_neighbors": 4,
        "p_rewire": 0.1, "block_sizes": "", "p_in": 0.3, "p_out": 0.05,
        "feature_bias": 0.0, "feature_std": 1.0})
    _require_seed(cfg)
    blocks = tuple(int(b) for b in str(cfg["block_sizes"]).split(",") if b)
    spec = GeneratorSpec(
        model=cfg["model"], num_nodes=int(cfg["nodes"]),
        num_features=int(cfg["dims"]), seed=int(cfg["seed"]),
        feature_bias=float(cfg["feature_bias"]), feature_std=float(cfg["feature_std"]),
        num_classes=int(cfg["classes"]), p=float(cfg["p"]),
        m_edges=int(cfg["m_edges"]), k_neighbors=int(cfg["k_neighbors"]),
        p_rewire=float(cfg["p_rewire"]), block_sizes=blocks,
        p_in=float(cfg["p_in"]), p_out=float(cfg["p_out"]))
    dataset = generate_graph(spec)
    save_dataset(dataset, cfg["out"])
    _echo(cfg["out"], cfg)
    return 0


CONDENSE_KEYS = ("data", "out", "ratio", "beta", "metric", "grad_threshold",
                 "epochs", "reinit_every", "match_steps", "inner_steps",
                 "lr_feat", "lr_adj", "lr_model", "feat_steps", "adj_steps",
                 "backbone", "backbone_hidden", "k_hops", "adjgen_hidden",
                 "init", "sparsify_threshold", "seed", "seeds", "jobs")


def _condense_config(cfg, seed):
    return CondenseConfig(
        ratio=float(cfg["ratio"]),
        outer_epochs=int(cfg["epochs"]),
        model_reinit_every=int(cfg["reinit_every"]),
        match_steps_per_epoch=int(cfg["match_steps"]),
        inner_model_steps=int(cfg["inner_steps"]),
        lr_model=float(cfg["lr_model"]),
        lr_feat=float(cfg["lr_feat"]),
        lr_adj=float(cfg["lr_adj"]),
        feat_steps=int(cfg["feat_steps"]),
        adj_steps=int(cfg["adj_steps"]),
        match=MatchConfig(
            beta=float(cfg["beta"]), metric=cfg["metric"],
            grad_threshold=(float(cfg["grad_threshold"])
                            if cfg.get("grad_threshold") not in (None, "") else None)),
        backbone_arch=cfg["backbone"],
        backbone_hidden=int(cfg["backbone_hidden"]),
        backbone_k_hops=int(cfg["k_hops"]),
        adjgen_hidden=int(cfg["adjgen_hidden"]),
        init_method=cfg["init"],
        seed=int(seed))


def _condense_one(payload):
    data_dir, out_dir, cfg, seed = payload
    dataset = load_dataset(data_dir)
    config = _condense_config(cfg, seed)
    synth, log = condense(dataset, config)
    final = finalize(synth, float(cfg["sparsify_threshold"]))
    save_dataset(final, out_dir)
    log.write_csv(os.path.join(out_dir, "trajectory.csv"))
    report = trajectory_report(log) if log.rows else {}
    with open(os.path.join(out_dir, "trajectory-summary.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    echo = dict(cfg)
    echo["seed"] = seed
    _echo(out_dir, echo)
    return out_dir


def cmd_condense(args):
    cfg = _merge_config(args, CONDENSE_KEYS, defaults={
        "beta": 0.3, "metric": "ctrl", "grad_threshold": None, "epochs": 600,
        "reinit_every": 20, "match_steps": 10, "inner_steps": 3,
        "lr_feat": 0.01, "lr_adj": 0.01, "lr_model": 0.01,
        "feat_steps": 10, "adj_steps": 10, "backbone": "sgc",
        "backbone_hidden": 64, "k_hops": 2, "adjgen_hidden": 128,
        "init": "kmeans", "sparsify_threshold": 0.5, "jobs": 1})
    if cfg.get("seed") is None and not cfg.get("seeds"):
        raise ValueError("--seed (or --seeds) is required for this command")

    if cfg.get("seeds"):
        seeds = [int(s) for s in str(cfg["seeds"]).split(",") if s]
        jobs = [(cfg["data"], os.path.join(cfg["out"], f"seed-{s}"), cfg, s)
                for s in seeds]
        workers = int(cfg.get("jobs") or 1)
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                list(pool.map(_condense_one, jobs))
        else:
            for job in jobs:
                _condense_one(job)
        _echo(cfg["out"], cfg)
    else:
        _condense_one((cfg["data"], cfg["out"], cfg, int(cfg["seed"])))
    return 0


EVAL_KEYS = ("data", "original", "out", "arch", "hidden", "n_seeds", "seed",
             "with_baseline", "ratio")


def cmd_evaluate(args):
    cfg = _merge_config(args, EVAL_KEYS, defaults={
        "arch": "gcn", "hidden": 128, "n_seeds": 5, "with_baseline": False,
        "ratio": None})
    _require_seed(cfg)
    condensed = load_dataset(cfg["data"])
    original = load_dataset(cfg["original"])
    specs = {}
    for name in str(cfg["arch"]).split(","):
        name = name.strip()
        specs[name] = ModelSpec(name, num_features=original.num_features,
                                num_classes=original.num_classes,
                                hidden_units=int(cfg["hidden"]),
                                weight_decay=5e-4)
    report = evaluate(condensed, original, specs, int(cfg["n_seeds"]),
                      base_seed=int(cfg["seed"]))
    result = report.to_dict()
    if cfg["with_baseline"]:
        if cfg.get("ratio") is None:
            raise ValueError("--ratio is required with --with-baseline")
        base = random_coreset_baseline(original, float(cfg["ratio"]),
                                       int(cfg["seed"]))
        base_report = evaluate(base, original, specs, int(cfg["n_seeds"]),
                               base_seed=int(cfg["seed"]))
        result["baseline"] = base_report.to_dict()
    os.makedirs(cfg["out"], exist_ok=True)
    with open(os.path.join(cfg["out"], "eval-report.json"), "w") as fh:
        json.dump(result, fh, indent=2)
    _echo(cfg["out"], cfg)
    return 0


SPECTRAL_KEYS = ("data", "out", "cutoff", "compare_with")


def cmd_spectral(args):
    cfg = _merge_config(args, SPECTRAL_KEYS, defaults={"cutoff": 1.0,
                                                       "compare_with": None})
    dataset = load_dataset(cfg["data"])
    report = spectral_metrics(dataset, cutoff=float(cfg["cutoff"]))
    result = report.to_dict()
    if cfg.get("compare_with"):
        other = spectral_metrics(load_dataset(cfg["compare_with"]),
                                 cutoff=float(cfg["cutoff"]))
        result["reference"] = other.to_dict()
        result["fidelity_pearson"] = fidelity_pearson(report, other)
    os.makedirs(cfg["out"], exist_ok=True)
    with open(os.path.join(cfg["out"], "spectral-report.json"), "w") as fh:
        json.dump(result, fh, indent=2)
    _echo(cfg["out"], cfg)
    return 0


DIAGNOSE_KEYS = ("data", "synth", "out", "stages", "step_size", "arch",
                 "hidden", "k_hops", "seed")


def cmd_diagnose(args):
    cfg = _merge_config(args, DIAGNOSE_KEYS, defaults={
        "stages": 15, "step_size": 0.1, "arch": "sgc", "hidden": 64, "k_hops": 2})
    _require_seed(cfg)
    dataset = load_dataset(cfg["data"])
    synth = load_dataset(cfg["synth"])
    spec = ModelSpec(cfg["arch"], num_features=dataset.num_features,
                     num_classes=dataset.num_classes,
                     hidden_units=int(cfg["hidden"]), k_hops=int(cfg["k_hops"]))
    dec = error_decomposition(dataset, synth, spec, int(cfg["stages"]),
                              float(cfg["step_size"]), int(cfg["seed"]))
    os.makedirs(cfg["out"], exist_ok=True)
    dec.write_csv(os.path.join(cfg["out"], "error-decomposition.csv"))
    worst = max(r.identity_residual for r in dec.stages)
    with open(os.path.join(cfg["out"], "decomposition-summary.json"), "w") as fh:
        json.dump({"stages": len(dec.stages), "max_identity_residual": worst},
                  fh, indent=2)
    _echo(cfg["out"], cfg)
    return 0


GRADCHECK_KEYS = ("out", "seed", "tolerance")


def cmd_gradcheck(args):
    cfg = _merge_config(args, GRADCHECK_KEYS, defaults={"tolerance": 1e-4})
    _require_seed(cfg)
    rng = np.random.default_rng(int(cfg["seed"]))
    tol = float(cfg["tolerance"])

    c1 = rng.standard_normal((4, 3))
    c2 = rng.standard_normal((3, 4))

    def first_order(x):
        z = ad.matmul(ad.sigmoid(x), x.arena.constant(c1))
        z = ad.relu(z)
        return ad.masked_softmax_cross_entropy(
            z, [0, 1, 2], [True, True, True])

    x0 = rng.standard_normal((3, 4))
    err1 = ad.finite_diff_check(first_order, x0, epsilon=1e-6)

    v = rng.standard_normal((3, 4))

    def second_order(x):
        (g,) = ad.grad(first_order(x), [x], create_graph=True)
        return ad.sum(ad.hadamard(g, x.arena.constant(v)))

    err2 = ad.finite_diff_check(second_order, x0, epsilon=1e-6)

    print(f"first-order max relative error:  {err1:.3e}")
    print(f"second-order max relative error: {err2:.3e}")
    if cfg.get("out"):
        os.makedirs(cfg["out"], exist_ok=True)
        with open(os.path.join(cfg["out"], "gradcheck.json"), "w") as fh:
            json.dump({"first_order": err1, "second_order": err2,
                       "tolerance": tol}, fh, indent=2)
        _echo(cfg["out"], cfg)
    if err1 > tol or err2 > tol:
        print(f"error: gradient check exceeded tolerance {tol}", file=sys.stderr)
        return 1
    return 0


FREQGRAD_KEYS = ("out", "trials", "nodes", "dims", "edge_p", "classes",
                 "feature_bias", "levels", "epochs", "lr", "k_hops",
                 "graph_seed", "seed")


def cmd_freqgrad(args):
    cfg = _merge_config(args, FREQGRAD_KEYS, defaults={
        "trials": 100, "nodes": 200, "dims": 64, "edge_p": 0.2, "classes": 2,
        "feature_bias": 0.25, "levels": "1,2,3,4,5", "epochs": 50, "lr": 0.3,
        "k_hops": 2, "graph_seed": 0})
    _require_seed(cfg)
    base = GeneratorSpec("er", int(cfg["nodes"]), int(cfg["dims"]),
                         seed=int(cfg["graph_seed"]), p=float(cfg["edge_p"]),
                         num_classes=int(cfg["classes"]),
                         feature_bias=float(cfg["feature_bias"]))
    levels = tuple(float(v) for v in str(cfg["levels"]).split(",") if v)
    exp = FreqGradConfig(base=base, trials=int(cfg["trials"]),
                         noise_levels=levels, epochs=int(cfg["epochs"]),
                         lr=float(cfg["lr"]), k_hops=int(cfg["k_hops"]),
                         trial_seed=int(cfg["seed"]))
    rows, rho = freq_grad_experiment(exp)
    os.makedirs(cfg["out"], exist_ok=True)
    write_freq_grad_csv(rows, os.path.join(cfg["out"], "freq_grad.csv"))
    with open(os.path.join(cfg["out"], "freq-grad-summary.json"), "w") as fh:
        json.dump({"spearman": rho, "trials": len(rows)}, fh, indent=2)
    print(f"spearman(grad magnitude, high-frequency area) = {rho:.4f}")
    _echo(cfg["out"], cfg)
    return 0


def _add_common(p, *names):
    flags = {
        "config": dict(type=str, help="flat JSON config file"),
        "data": dict(type=str, help="input dataset directory"),
        "out": dict(type=str, help="output directory"),
        "seed": dict(type=int, help="PRNG seed"),
    }
    for name in names:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, **flags[name])


def build_parser():
    parser = argparse.ArgumentParser(
        prog="graphcondense",
        description="Graph condensation by gradient matching, with spectral "
                    "and error-decomposition diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset directory")
    _add_common(p, "config", "out", "seed")
    p.add_argument("--model", type=str)
    for name in ("nodes", "dims", "classes", "m_edges", "k_neighbors"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    for name in ("p", "p_rewire", "p_in", "p_out", "feature_bias", "feature_std"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    p.add_argument("--block-sizes", dest="block_sizes", type=str)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("condense", help="condense a dataset into a synthetic graph")
    _add_common(p, "config", "data", "out", "seed")
    p.add_argument("--ratio", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--metric", type=str, choices=("cos", "norm", "cos_norm", "ctrl"))
    p.add_argument("--grad-threshold", dest="grad_threshold", type=float)
    for name in ("epochs", "reinit_every", "match_steps", "inner_steps",
                 "feat_steps", "adj_steps", "backbone_hidden", "k_hops",
                 "adjgen_hidden", "jobs"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    for name in ("lr_feat", "lr_adj", "lr_model", "sparsify_threshold"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    p.add_argument("--backbone", type=str)
    p.add_argument("--init", type=str, choices=("kmeans", "random"))
    p.add_argument("--seeds", type=str, help="comma-separated seed list")
    p.set_defaults(func=cmd_condense)

    p = sub.add_parser("evaluate", help="train evaluators on a condensed graph")
    _add_common(p, "config", "data", "out", "seed")
    p.add_argument("--original", type=str)
    p.add_argument("--arch", type=str, help="comma-separated: gcn,sgc,mlp")
    p.add_argument("--hidden", type=int)
    p.add_argument("--n-seeds", dest="n_seeds", type=int)
    p.add_argument("--with-baseline", dest="with_baseline", action="store_true",
                   default=None)
    p.add_argument("--ratio", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("spectral", help="frequency-distribution report")
    _add_common(p, "config", "data", "out")
    p.add_argument("--cutoff", type=float)
    p.add_argument("--compare-with", dest="compare_with", type=str)
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("diagnose", help="error-decomposition trajectories")
    _add_common(p, "config", "data", "out", "seed")
    p.add_argument("--synth", type=str)
    p.add_argument("--stages", type=int)
    p.add_argument("--step-size", dest="step_size", type=float)
    p.add_argument("--arch", type=str)
    p.add_argument("--hidden", type=int)
    p.add_argument("--k-hops", dest="k_hops", type=int)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _add_common(p, "config", "out", "seed")
    p.add_argument("--tolerance", type=float)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("freqgrad", help="frequency / gradient-magnitude experiment")
    _add_common(p, "config", "out", "seed")
    for name in ("trials", "nodes", "dims", "classes", "epochs", "k_hops",
                 "graph_seed"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    for name in ("edge_p", "feature_bias", "lr"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    p.add_argument("--levels", type=str)
    p.set_defaults(func=cmd_freqgrad)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
