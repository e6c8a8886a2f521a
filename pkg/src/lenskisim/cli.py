"""Command-line entry point: ``lenskisim <experiment> [options]`` and ``lenskisim compare``.

Every run writes three files to its output directory:

* ``results.csv``: experiment-specific rows (RFC 4180, 17 significant digits).
* ``summary.json``: estimates next to their theoretical targets.
* ``manifest.json``: the resolved configuration, seed and code version.

Precedence for settings is command-line flag, then ``LENSKISIM_THREADS``
(thread count only), then the config file, then built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import platform
import struct
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .cannings import PopulationState, expected_next_mutants, run_day, two_type_step
from .config import (EXPERIMENTS, ConfigError, RunConfig, build_run_config, load_config,
                     tolerance_for)
from .curves import LimitCurveParams, c_of_gamma, epistatic_field, epistatic_limit, ode_solve, stage2_logistic
from .evolution import Outcome, detect_interference, run_experiment
from .genealogy import (estimate_pair_coalescence, estimate_triple_coalescence,
                        pair_coalescence_times)
from .gw import simulate_gw_batch, survival_probability_asymptotic, survival_probability_exact, upper_law
from .params import ParameterError
from .sweeps import absorption_tail, run_sweeps, stage2_paths, summarize_fixation
from .yule import StoppingRule, sigma_k

logger = logging.getLogger("lenskisim")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
THREADS_ENV = "LENSKISIM_THREADS"


def derive_seed(master_seed: int, index: int, stream: str = "replicate") -> int:
    """64-bit seed for one replicate, hashed from the master seed, stream name and index."""
    h = hashlib.blake2b(digest_size=8, person=b"lenskisim")
    h.update(struct.pack("<QQ", master_seed & (2**64 - 1), index))
    h.update(stream.encode())
    return int.from_bytes(h.digest(), "little")


def replicate_rng(master_seed: int, index: int, stream: str = "replicate") -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(derive_seed(master_seed, index, stream)))


def _fmt(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, Path):
        return str(x)
    return x


def write_json(path: Path, obj: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def metric(name: str, estimate: float, target: float, rule: str, tolerance: float,
           ci_halfwidth: Optional[float] = None) -> dict:
    """One estimate-vs-target line of a summary.

    ``rule`` is ``relative`` (|est - target| <= tol |target|), ``absolute``
    (|est - target| <= tol), ``upper`` (est <= target) or ``lower`` (est >= target).
    """
    return {"name": name, "estimate": estimate, "target": target, "rule": rule,
            "tolerance": tolerance, "ci_halfwidth": ci_halfwidth,
            "passed": metric_passes(estimate, target, rule, tolerance)}


def metric_passes(estimate, target, rule: str, tolerance: float) -> bool:
    if estimate is None or target is None:
        return False
    if rule == "relative":
        return abs(estimate - target) <= tolerance * abs(target)
    if rule == "absolute":
        return abs(estimate - target) <= tolerance
    if rule == "upper":
        return estimate <= target
    if rule == "lower":
        return estimate >= target
    raise ValueError(f"unknown rule {rule!r}")


def _blocks(total: int, size: int) -> list[tuple[int, int]]:
    return [(start, min(size, total - start)) for start in range(0, total, size)]


def _fan_out(fn: Callable[[int], Any], n_tasks: int, threads: int) -> list:
    """Run ``fn`` over task indices; results come back in index order."""
    if threads <= 1 or n_tasks <= 1:
        return [fn(i) for i in range(n_tasks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_tasks)))


def _rule(cfg: RunConfig) -> StoppingRule:
    return StoppingRule(cfg.options["rule"])


# experiments ------------------------------------------------------------------------------

def exp_neutral_day(cfg: RunConfig):
    p, o = cfg.params, cfg.options
    k0 = o["k0"]
    rule = _rule(cfg)
    block = o.get("block_size", 10_000)
    blocks = _blocks(cfg.replicates, block)

    def work(b: int):
        start, n = blocks[b]
        rng = replicate_rng(cfg.master_seed, b, "block")
        if rule is StoppingRule.EXPECTATION:
            k1 = two_type_step(np.full(n, k0, dtype=np.int64), p, rng)
            s = np.full(n, float(sigma_k(p.N, k0, p.r0, p.rho, p.gamma)))
        else:
            k1 = np.empty(n, dtype=np.int64)
            s = np.empty(n)
            state = PopulationState.two_type(p.N, k0, p.r0, p.rho)
            for i in range(n):
                out = run_day(state, p.gamma, rng, rule)
                k1[i] = out.post_sample.count_of(1)
                s[i] = out.day_length
        return k1, s

    parts = _fan_out(work, len(blocks), cfg.threads)
    k1 = np.concatenate([a for a, _ in parts])
    s = np.concatenate([b for _, b in parts])
    rows = ((i, k0, int(k1[i]), float(s[i])) for i in range(k1.size))
    header = ["replicate", "k0", "k1", "day_length"]

    tol = tolerance_for("neutral-day", o["tolerance_profile"])
    n = k1.size
    se = float(k1.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    mean_k1 = float(k1.mean())
    metrics = []
    if p.rho > 0.0:
        target = k0 * p.rho * math.log(p.gamma) * (1.0 - k0 / p.N) / p.r0
        metrics.append(metric("selective_advantage", mean_k1 - k0, target, "relative", tol,
                              1.96 * se))
    else:
        metrics.append(metric("mean_k1", mean_k1, float(k0), "absolute", 4.0 * se, 1.96 * se))
    sigma0 = math.log(p.gamma) / p.r0
    if rule is StoppingRule.HITTING:
        metrics.append(metric("mean_day_length", float(s.mean()), sigma0, "relative", 0.01))
    extra = {"finite_n_expected_k1": expected_next_mutants(k0, p), "mean_k1": mean_k1}
    return header, rows, metrics, extra, None


def exp_fixation(cfg: RunConfig):
    p, o = cfg.params, cfg.options
    block = o.get("block_size", 1000)
    blocks = _blocks(cfg.replicates, block)

    def work(b: int):
        start, n = blocks[b]
        return run_sweeps(p, n, replicate_rng(cfg.master_seed, b, "block"), o["epsilon"],
                          k0=o["k0"])

    records = [r for part in _fan_out(work, len(blocks), cfg.threads) for r in part]
    header = ["replicate", "outcome", "T1", "T2", "end_day"]
    rows = ((i, r.outcome.value, r.T1, r.T2, r.end_day) for i, r in enumerate(records))
    est = summarize_fixation(records, p)
    tol = tolerance_for("fixation", o["tolerance_profile"])
    metrics = [metric("p_hat", est.p_hat, est.theoretical, "relative", tol, est.ci_halfwidth)]
    if p.rho > 0.0:
        metrics.append(metric("tau_tail", absorption_tail(records, p.rho ** -1.5), 0.05, "upper", 0.0))
    metrics.append(metric("censored_fraction", est.n_censored / est.replicates, 0.01, "upper", 0.0))
    extra = {"p_hat": est.p_hat, "ci": est.ci_halfwidth, "theoretical": est.theoretical,
             "rho": p.rho, "replicates": est.replicates,
             "fixed": sum(r.outcome is Outcome.FIXED for r in records)}
    return header, rows, metrics, extra, None


def _grid(o: dict) -> np.ndarray:
    n = int(round(o["t_max"] / o["t_step"])) + 1
    return np.arange(n) * o["t_step"]


def exp_sweep_stages(cfg: RunConfig):
    p, o = cfg.params, cfg.options
    grid = _grid(o)
    block = o.get("block_size", 100)
    blocks = _blocks(cfg.replicates, block)

    def work(b: int):
        start, n = blocks[b]
        return stage2_paths(p, n, grid, replicate_rng(cfg.master_seed, b, "block"), o["epsilon"]).sum(axis=0)

    total = np.zeros(grid.size)
    for part in _fan_out(work, len(blocks), cfg.threads):
        total += part
    mean = total / cfg.replicates
    x0 = math.ceil(o["epsilon"] * p.N) / p.N
    g = stage2_logistic(grid, x0, p.r0, p.gamma)
    header = ["t", "mean_frequency", "logistic"]
    rows = zip(grid, mean, g)
    sup = float(np.max(np.abs(mean - g)))
    tol = tolerance_for("sweep-stages", o["tolerance_profile"])
    return header, rows, [metric("sup_distance", sup, tol, "upper", 0.0)], {"x0": x0}, None


def exp_genealogy(cfg: RunConfig):
    p, o = cfg.params, cfg.options
    N, gamma, r = p.N, p.gamma, p.r0

    def work(i: int):
        return int(pair_coalescence_times(N, gamma, r, 1, replicate_rng(cfg.master_seed, i))[0])

    times = np.array(_fan_out(work, cfg.replicates, cfg.threads), dtype=np.int64)
    crng = replicate_rng(cfg.master_seed, 0, "coalescence")
    c = estimate_pair_coalescence(N, gamma, r, o["coalescence_replicates"], crng)
    d = estimate_triple_coalescence(N, gamma, r, o["coalescence_replicates"], crng)
    ks = stats.kstest(times * c.estimate, "expon")
    tol = tolerance_for("genealogy", o["tolerance_profile"])
    metrics = [
        metric("N_c_hat", N * c.estimate, 2.0 * (1.0 - 1.0 / gamma), "relative", tol, N * c.ci_halfwidth),
        metric("d_over_c", d.estimate / c.estimate, 0.05, "upper", 0.0),
        metric("ks_pvalue", float(ks.pvalue), 0.01, "lower", 0.0),
    ]
    header = ["replicate", "coalescence_generation"]
    rows = enumerate(times.tolist())
    extra = {"c_hat": c.estimate, "d_hat": d.estimate, "mean_generations": float(times.mean())}
    return header, rows, metrics, extra, None


def exp_gw(cfg: RunConfig):
    p, o = cfg.params, cfg.options
    law = upper_law(p.N, p.gamma, p.r0, p.rho, o["alpha"])
    asym = law.asymptotics()
    exact = survival_probability_exact(law)
    if o.get("max_generations"):
        gens = o["max_generations"]
    else:
        gens = int(math.ceil(10.0 / asym.beta)) if asym.beta > 0 else 1000
    block = o.get("block_size", 10_000)
    blocks = _blocks(cfg.replicates, block)

    def work(b: int):
        start, n = blocks[b]
        ext, _, _ = simulate_gw_batch(law, n, gens, replicate_rng(cfg.master_seed, b, "block"))
        return ext

    ext = np.concatenate(_fan_out(work, len(blocks), cfg.threads))
    surv = ext < 0
    freq = float(surv.mean())
    se = math.sqrt(max(exact * (1 - exact), 1e-300) / ext.size)
    target = p.rho * c_of_gamma(p.gamma) / p.r0
    tol = tolerance_for("gw", o["tolerance_profile"])
    metrics = [
        metric("exact_survival", exact, target, "relative", tol),
        metric("mc_survival", freq, exact, "absolute", 3.0 * se, 1.96 * se),
    ]
    header = ["replicate", "extinct_at", "survived"]
    rows = ((i, int(ext[i]), bool(surv[i])) for i in range(ext.size))
    extra = {"mean": law.mean, "variance": law.variance, "beta": asym.beta,
             "asymptotic_survival": survival_probability_asymptotic(asym) if asym.beta > 0 else 0.0,
             "generations": gens, "geometric_param": law.geometric_param,
             "thinning_prob": law.thinning_prob}
    return header, rows, metrics, extra, None


def exp_evolve(cfg: RunConfig):
    p, o = cfg.params, cfg.options
    if o.get("horizon") is not None:
        horizon = o["horizon"]
    elif p.rho > 0.0 and p.mu > 0.0:
        horizon = int(math.ceil(o["horizon_t"] / (p.rho * p.rho * p.mu)))
    else:
        raise ConfigError("evolve needs horizon when rho or mu is zero")
    rule = _rule(cfg)

    def work(i: int):
        return run_experiment(p, horizon, cfg.record_every, replicate_rng(cfg.master_seed, i), rule)

    trajs = _fan_out(work, cfg.replicates, cfg.threads)
    header = ["replicate", "day", "F", "H", "n_classes", "interference_flag"]

    def rows():
        for i, t in enumerate(trajs):
            for j in range(t.days.size):
                yield (i, int(t.days[j]), float(t.F[j]), int(t.H[j]), int(t.n_classes[j]),
                       bool(t.interference_flag[j]))

    mean_F = np.mean([t.F for t in trajs], axis=0)
    scale = p.rho * p.rho * p.mu
    tol = tolerance_for("evolve", o["tolerance_profile"])
    metrics = []
    extra: dict[str, Any] = {"horizon": horizon, "mean_final_F": float(mean_F[-1]),
                             "max_classes": max(t.max_classes for t in trajs)}
    if scale > 0.0:
        tt = trajs[0].days * scale
        h = epistatic_limit(tt, LimitCurveParams(p.gamma, p.r0, p.q))
        metrics.append(metric("sup_distance", float(np.max(np.abs(mean_F - h))), tol, "upper", 0.0))
        freq = float(np.mean([detect_interference(t).frequency for t in trajs]))
        metrics.append(metric("interference_frequency", freq, p.mu * p.rho ** -1.1, "upper", 0.0))
    events = [{"replicate": i,
               "mutations": [vars(m) for m in t.mutations],
               "fixations": [{"day": d, "lineage_id": m} for d, m in t.fixations]}
              for i, t in enumerate(trajs)]
    return header, rows(), metrics, extra, {"events.json": events}


def exp_curves(cfg: RunConfig):
    p, o = cfg.params, cfg.options
    grid = _grid(o)
    lp = LimitCurveParams(p.gamma, p.r0, p.q)
    closed = epistatic_limit(grid, lp)
    numeric = ode_solve(epistatic_field(lp), 1.0, grid)
    err = float(np.max(np.abs(closed - numeric)))
    tol = tolerance_for("curves", o["tolerance_profile"])
    header = ["t", "value", "ode_value"]
    return header, zip(grid, closed, numeric), [metric("ode_max_error", err, tol, "upper", 0.0)], \
        {"C_gamma": lp.C, "poisson_rate": lp.poisson_rate}, None


RUNNERS = {
    "neutral-day": exp_neutral_day,
    "fixation": exp_fixation,
    "sweep-stages": exp_sweep_stages,
    "genealogy": exp_genealogy,
    "gw": exp_gw,
    "evolve": exp_evolve,
    "curves": exp_curves,
}


def execute(cfg: RunConfig) -> dict:
    """Run one configured experiment and write its artifacts; returns the summary."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    header, rows, metrics, extra, side = RUNNERS[cfg.experiment](cfg)
    write_csv(out / "results.csv", header, rows)
    summary = {"experiment": cfg.experiment, "metrics": metrics, "extra": extra,
               "all_passed": all(m["passed"] for m in metrics)}
    write_json(out / "summary.json", summary)
    manifest = {"experiment": cfg.experiment, "config": cfg.as_dict(), "master_seed": cfg.master_seed,
                "version": __version__, "numpy": np.__version__, "python": platform.python_version()}
    write_json(out / "manifest.json", manifest)
    for name, obj in (side or {}).items():
        write_json(out / name, obj)
    return summary


def compare(run_dirs: Sequence[str], profile: str = "default") -> dict:
    """Merge the summaries of completed runs of one experiment type into a pass/fail table."""
    if not run_dirs:
        raise ConfigError("compare needs at least one run directory")
    runs = []
    for d in run_dirs:
        try:
            summary = json.loads((Path(d) / "summary.json").read_text())
            manifest = json.loads((Path(d) / "manifest.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{d}: not a completed run ({exc})") from exc
        runs.append((str(d), summary, manifest))
    kinds = {s["experiment"] for _, s, _ in runs}
    if len(kinds) != 1:
        raise ConfigError(f"incompatible experiment types: {sorted(kinds)}")
    experiment = kinds.pop()
    scale = tolerance_for(experiment, profile) / tolerance_for(experiment, "default")
    table = []
    for d, s, _ in runs:
        for m in s["metrics"]:
            tol = m["tolerance"] * scale if m["rule"] in ("relative",) else m["tolerance"]
            est, tgt = m["estimate"], m["target"]
            rel = abs(est - tgt) / abs(tgt) if (est is not None and tgt) else None
            table.append({"run": d, "metric": m["name"], "estimate": est, "target": tgt,
                          "relative_error": rel, "rule": m["rule"], "tolerance": tol,
                          "passed": metric_passes(est, tgt, m["rule"], tol)})
    report: dict[str, Any] = {"experiment": experiment, "rows": table,
                              "all_passed": all(r["passed"] for r in table)}
    if experiment == "fixation" and len(runs) > 1:
        pairs = sorted((m["config"]["rho"], s["extra"]["p_hat"]) for _, s, m in runs)
        report["p_hat_by_rho"] = pairs
        report["monotone_in_rho"] = all(a[1] <= b[1] for a, b in zip(pairs, pairs[1:]))
    return report


def _print_report(report: dict) -> None:
    print(f"experiment: {report['experiment']}")
    print(f"{'run':<30} {'metric':<24} {'estimate':>14} {'target':>14} {'rule':>9}  result")
    for r in report["rows"]:
        est = "nan" if r["estimate"] is None else f"{r['estimate']:.6g}"
        tgt = "nan" if r["target"] is None else f"{r['target']:.6g}"
        print(f"{r['run'][-30:]:<30} {r['metric']:<24} {est:>14} {tgt:>14} {r['rule']:>9}  "
              f"{'PASS' if r['passed'] else 'FAIL'}")
    if "monotone_in_rho" in report:
        print(f"p_hat monotone in rho: {report['monotone_in_rho']}")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lenskisim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, help="64-bit master seed")
        sp.add_argument("--replicates", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help=f"worker threads (env {THREADS_ENV})")
        sp.add_argument("--tolerance-profile", choices=["strict", "default", "loose"])
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")
    cp = sub.add_parser("compare", help="compare completed run directories")
    cp.add_argument("run_dirs", nargs="+")
    cp.add_argument("--out", help="write comparison.json here")
    cp.add_argument("--tolerance-profile", choices=["strict", "default", "loose"], default="default")
    return ap


def resolve_values(args: argparse.Namespace) -> dict:
    values = load_config(args.config)
    env_threads = os.environ.get(THREADS_ENV)
    if env_threads:
        values["threads"] = env_threads
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    for key, attr in (("seed", "seed"), ("replicates", "replicates"), ("out", "out"),
                      ("threads", "threads"), ("tolerance_profile", "tolerance_profile")):
        val = getattr(args, attr)
        if val is not None:
            values[key] = val
    return values


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        if args.command == "compare":
            report = compare(args.run_dirs, args.tolerance_profile)
            _print_report(report)
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                write_json(Path(args.out) / "comparison.json", report)
            return EXIT_OK
        cfg = build_run_config(args.command, resolve_values(args))
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary = execute(cfg)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any fault inside a run maps to exit 1
        logger.exception("run failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for m in summary["metrics"]:
        print(f"{m['name']}: estimate={m['estimate']} target={m['target']} "
              f"{'PASS' if m['passed'] else 'FAIL'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
