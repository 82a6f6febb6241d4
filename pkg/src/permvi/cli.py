"""Command-line front end: ``python -m permvi --experiment matching --reps 5 --out runs/a``.

Every config field can be overridden with ``--<field> VALUE`` (dashes or
underscores); list values take JSON (``[0.1,0.5]``) or comma-separated
form. The output directory defaults to ``$PERMVI_OUT`` or ``results``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import FIELDS, ExperimentConfig, parse_config, parse_override
from .errors import ParseError, PermviError, ValidationError
from .experiments.categorical import categorical_limit_study, gumbel_max_study
from .experiments.diagnostics import transform_diagnostics
from .experiments.lds import (
    LdsConfig,
    load_adjacency,
    load_constraints,
    load_positions,
    run_lds_repetition,
)
from .experiments.matching import MatchingConfig, run_matching_experiment
from .experiments.results import (
    ExperimentResult,
    write_results_csv,
    write_summary_json,
    write_trace_csv,
)

OUT_ENV = "PERMVI_OUT"
EXIT_CONFIG = 2
EXIT_RUN = 1


def matching_config(cfg: ExperimentConfig) -> MatchingConfig:
    return MatchingConfig(
        n=cfg.n, sigmas=tuple(cfg.sigmas), repetitions=cfg.repetitions, seed=cfg.seed,
        transforms=tuple(cfg.transforms), center_scale=cfg.center_scale, dim=cfg.dim, eta=cfg.eta,
        steps=cfg.steps, samples=cfg.samples, eval_samples=cfg.eval_samples, lr=cfg.lr,
        tau0=cfg.tau0, decay=cfg.decay, tau_min_rounding=cfg.tau_min_rounding,
        tau_min_stick=cfg.tau_min_stick, v_init=cfg.v_init, v_bounds=(cfg.v_min, cfg.v_max),
        nu_init=cfg.nu_init, nu_bounds=(cfg.nu_min, cfg.nu_max),
        mallows_thetas=tuple(cfg.mallows_thetas), mallows_steps=cfg.mallows_steps)


def lds_config(cfg: ExperimentConfig) -> LdsConfig:
    return LdsConfig(outer_iters=cfg.outer_iters, inner_steps=cfg.inner_steps, samples=cfg.samples,
                     lr=cfg.lr, tau0=min(cfg.tau0, 1.0), decay=cfg.decay,
                     tau_min=min(cfg.lds_tau_min, cfg.tau0, 1.0), v_init=cfg.v_init,
                     v_bounds=(cfg.v_min, cfg.v_max), mcmc_sweeps=cfg.mcmc_sweeps)


def _mapper(parallel: int):
    if parallel and parallel > 1:
        pool = ThreadPoolExecutor(max_workers=parallel)
        return pool, pool.map
    return None, map


def run_matching(cfg: ExperimentConfig, map_fn):
    traces: dict = {}
    results = run_matching_experiment(matching_config(cfg), metrics=tuple(cfg.metrics),
                                      map_fn=map_fn, traces=traces)
    return results, traces


def run_lds(cfg: ExperimentConfig, map_fn):
    adjacency = load_adjacency(cfg.adjacency_path) if cfg.adjacency_path else None
    n = adjacency.shape[0] if adjacency is not None else cfg.lds_n
    positions = load_positions(cfg.positions_path, n) if cfg.positions_path else None
    constraints = load_constraints(cfg.constraints_path) if cfg.constraints_path else None
    # a constraint file fixes the mask, so the tolerance grid collapses to one entry
    tols = [1.0] if constraints is not None else cfg.tols
    lcfg = lds_config(cfg)

    def one(rep):
        return run_lds_repetition(rep, cfg.seed, n, cfg.T, tols, cfg.worms, cfg.lds_methods,
                                  lcfg, cfg.density, cfg.noise_std, cfg.num_known, adjacency,
                                  positions, constraints)

    reps = list(range(cfg.repetitions))
    results: dict = {}
    for rep, rows in zip(reps, map_fn(one, reps)):
        for method, tol, J, acc, ms in rows:
            tol_label = "file" if constraints is not None else tol
            key = (method, tol_label, J)
            res = results.setdefault(key, ExperimentResult("lds", method, "accuracy",
                                                           {"tol": tol_label, "J": J}))
            res.add(rep, cfg.seed, acc, ms)
    return list(results.values()), {}


def run_categorical(cfg: ExperimentConfig, map_fn):
    def one(rep):
        rng = np.random.default_rng([cfg.seed, rep])
        pi = rng.dirichlet(np.ones(cfg.categories))
        tv = categorical_limit_study(pi, cfg.limit_taus, cfg.limit_samples, rng)
        return tv, gumbel_max_study(pi, cfg.limit_samples, rng)

    reps = list(range(cfg.repetitions))
    results: dict = {}
    for rep, (tv, gm) in zip(reps, map_fn(one, reps)):
        for tau, val in tv.items():
            results.setdefault(("sb", tau), ExperimentResult(
                "categorical-limit", "stick-breaking", "tv", {"tau": tau})).add(rep, cfg.seed, val, 0)
        results.setdefault("gm", ExperimentResult(
            "categorical-limit", "gumbel-max", "tv")).add(rep, cfg.seed, gm, 0)
    return list(results.values()), {}


def run_diagnostics(cfg: ExperimentConfig, map_fn):
    def one(rep):
        return transform_diagnostics(cfg.n, np.random.default_rng([cfg.seed, rep]),
                                     tau=cfg.tau_min_rounding)

    reps = list(range(cfg.repetitions))
    results: dict = {}
    for rep, diag in zip(reps, map_fn(one, reps)):
        for metric, val in diag.items():
            results.setdefault(metric, ExperimentResult(
                "transform-diagnostics", "transforms", metric, {"n": cfg.n})).add(rep, cfg.seed, val, 0)
    return list(results.values()), {}


RUNNERS = {
    "matching": run_matching,
    "lds": run_lds,
    "categorical-limit": run_categorical,
    "transform-diagnostics": run_diagnostics,
}


def resolve_out(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out or os.environ.get(OUT_ENV) or "results")


def run(cfg: ExperimentConfig, parallel: int = 0) -> Path:
    """Run the configured experiment and write its artifacts; returns the output dir."""
    out = resolve_out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "resolved_config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    pool, map_fn = _mapper(parallel)
    try:
        results, traces = RUNNERS[cfg.experiment](cfg, map_fn)
    finally:
        if pool is not None:
            pool.shutdown()
    write_results_csv(results, out / "results.csv")
    write_summary_json(results, out / "summary.json",
                       {"experiment": cfg.experiment, "seed": cfg.seed, "repetitions": cfg.repetitions})
    write_trace_csv(traces, out / "elbo_trace.csv")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="permvi", description=__doc__.splitlines()[0])
    p.add_argument("--experiment")
    p.add_argument("--config", help="JSON file with config fields")
    p.add_argument("--seed")
    p.add_argument("--reps", dest="repetitions")
    p.add_argument("--transform", dest="transforms",
                   help="comma-separated: stick-breaking, rounding, gumbel-softmax")
    p.add_argument("--out")
    p.add_argument("--parallel", type=int, default=0, help="worker threads across repetitions")
    taken = {"experiment", "seed", "repetitions", "transforms", "out"}
    for name in FIELDS:
        if name not in taken:
            p.add_argument("--" + name.replace("_", "-"), dest=name, metavar="VALUE")
    return p


def _error(kind: str, exc: Exception, cfg=None, seed=None) -> dict:
    payload = {"error": type(exc).__name__, "stage": kind, "message": str(exc)}
    if cfg is not None:
        payload["experiment"] = cfg.experiment
        payload["seed"] = cfg.seed
    elif seed is not None:
        payload["seed"] = seed
    return payload


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    raw = {k: v for k, v in vars(args).items() if k not in ("config", "parallel") and v is not None}
    cfg = None
    try:
        overrides = {k: parse_override(k, v) for k, v in raw.items()}
        cfg = parse_config(args.config, overrides)
    except (ParseError, ValidationError) as exc:
        print(json.dumps(_error("config", exc, seed=raw.get("seed"))), file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = run(cfg, args.parallel)
    except (PermviError, ValueError, OSError) as exc:
        print(json.dumps(_error("run", exc, cfg)), file=sys.stderr)
        return EXIT_RUN
    print(f"wrote {out}/results.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
