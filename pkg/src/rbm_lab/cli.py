"""Command-line front end: ``rbm-lab <experiment> [flags]``.

Outputs go to ``--out``: ``summary.json`` (deterministic given config and
seed), CSV data files, and ``manifest.json`` (resolved config, code version,
wall time).  Exit status: 0 success, 2 invalid input, 3 budget exhausted,
4 unknown experiment, 5 output directory not writable.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import EXPERIMENTS, UnknownExperiment, resolve, rho_value
from .errors import BudgetExceededError, RbmLabError, ValidationError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_BUDGET = 3
EXIT_UNKNOWN = 4
EXIT_UNWRITABLE = 5

_SALT_COUPLE = 0xC0C0
_SALT_FLOW = 0xF10


def exact(x) -> dict:
    return {"value": float(x), "exact": True}


def estimate(x, se) -> dict:
    return {"value": float(x), "stderr": float(se)}


# ---------------------------------------------------------------------------
# experiments; each returns (summary, extra manifest entries)


def run_quad(cfg, out: Path):
    from .exponent import closed_forms, integral_I1, integral_I1_cos, integral_I2, integral_I2_cos

    tol = cfg["tol"]
    cf = closed_forms()
    summary = {}
    for key, fn, alt in (("I1", integral_I1, integral_I1_cos), ("I2", integral_I2, integral_I2_cos)):
        r = fn(tol)
        a = alt(tol)
        summary[key] = {"value": r.value, "stderr": r.error_estimate, "evaluations": exact(r.evaluations),
                        "cos_path": estimate(a.value, a.error_estimate),
                        "closed_form": exact(cf[f"{key}_exact"])}
    summary["lambda_limit"] = exact(cf["lambda_limit"])
    summary["lambda_star_limit"] = exact(1.0 + cf["lambda_limit"])
    return summary, {}


def run_lambda(cfg, out: Path):
    from .exponent import estimate_lambda

    est = estimate_lambda(rho_value(cfg), delta=cfg["delta"], dt=cfg["dt"], N=cfg["N"], seed=cfg["seed"],
                          far_radius=cfg["lambda"]["far_radius"], threads=cfg["threads"])
    p = est.params
    summary = {"lambda": estimate(est.lam, est.stderr), "lambda_star": estimate(est.lambda_star, est.stderr),
               "n_hit": exact(p["n_hit"]), "n_escape": exact(p["n_escape"]), "dt": exact(p["dt"])}
    return summary, {}


def _replica_start(seed: int, i: int, sep: float):
    from .coupling import aligned_pair

    rng = np.random.default_rng([seed, i])
    u = rng.standard_normal(3)
    x = u / np.linalg.norm(u)
    return x, aligned_pair(x, sep, rng), rng


def run_couple(cfg, out: Path):
    from concurrent.futures import ThreadPoolExecutor

    from .coupling import check_flow_derivative, log_separation_ladder, tail_not_decreasing, write_ladder_csv
    from .geometry import DomainGeometry, tangent_project
    from .noise import replica_stream

    rho = rho_value(cfg)
    if math.isinf(rho):
        raise ValidationError("couple needs a finite rho")
    geom = DomainGeometry.torus(rho)
    sub = cfg["couple"]
    n = cfg["N"]
    files = []
    if sub["mode"] == "derivative":
        def work(i):
            x, _, rng = _replica_start(cfg["seed"], i, cfg["eps"])
            v = tangent_project(x, rng.standard_normal(3))
            v /= np.linalg.norm(v)
            stream = replica_stream(cfg["seed"], i, cfg["dt"], _SALT_COUPLE)
            return [check_flow_derivative(x, v, e, cfg["b"], stream, geom, c4=sub["c4"]).rel_err
                    for e in (cfg["eps"], cfg["eps"] / 2)]

        with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
            errs = np.array(list(pool.map(work, range(n))))
        wins = int(np.sum(errs[:, 1] < errs[:, 0]))
        with open(out / "derivative.csv", "w") as fh:
            fh.write("replica,rel_err_eps,rel_err_half_eps\n")
            for i, (a, b) in enumerate(errs):
                fh.write(f"{i},{a!r},{b!r}\n")
        files.append("derivative.csv")
        summary = {"replicas": exact(n), "halving_improves": exact(wins),
                   "mean_rel_err_eps": estimate(errs[:, 0].mean(), errs[:, 0].std(ddof=1) / math.sqrt(n) if n > 1 else 0.0),
                   "mean_rel_err_half_eps": estimate(errs[:, 1].mean(), errs[:, 1].std(ddof=1) / math.sqrt(n) if n > 1 else 0.0)}
        return summary, {"files": files}

    def work(i):
        x, y, _ = _replica_start(cfg["seed"], i, cfg["eps"])
        stream = replica_stream(cfg["seed"], i, cfg["dt"], _SALT_COUPLE)
        return log_separation_ladder(x, y, cfg["b"], sub["K"], stream, geom, monitor_every=sub["monitor_every"])

    with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
        ladders = list(pool.map(work, range(n)))
    ldir = out / "ladders"
    ldir.mkdir(exist_ok=True)
    for i, lad in enumerate(ladders):
        write_ladder_csv(ldir / f"replica_{i:05d}.csv", lad)
        files.append(f"ladders/replica_{i:05d}.csv")
    d = np.array([lad.V[1] - lad.V[0] for lad in ladders if len(lad.V) > 1])
    with open(out / "ladder_summary.csv", "w") as fh:
        fh.write("replica,K_reached,V_0,V_last,min_M,complete\n")
        for i, lad in enumerate(ladders):
            fh.write(f"{i},{lad.K},{lad.V[0]!r},{lad.V[-1]!r},{lad.min_M!r},{int(lad.complete)}\n")
    files.append("ladder_summary.csv")
    summary = {"replicas": exact(n), "complete": exact(sum(lad.complete for lad in ladders))}
    if d.size:
        se = d.std(ddof=1) / math.sqrt(d.size) if d.size > 1 else 0.0
        summary["mean_V1_minus_V0"] = estimate(d.mean(), se)
    summary["finite_min_M"] = exact(sum(math.isfinite(lad.min_M) for lad in ladders))
    summary["tail_not_decreasing"] = exact(sum(tail_not_decreasing(lad.tail_M) for lad in ladders))
    return summary, {"files": files}


def run_flow(cfg, out: Path):
    from .flow import (empirical_measure, evolve_ensemble, init_lattice, pair_distance_histogram,
                       trend_diagnostic, uniformity_metric, write_measure_csv, write_snapshot_csv)
    from .geometry import DomainGeometry
    from .noise import NoiseStream, replica_stream

    rho = rho_value(cfg)
    if math.isinf(rho):
        raise ValidationError("flow needs a finite rho")
    geom = DomainGeometry.torus(rho)
    sub = cfg["flow"]
    ens = init_lattice(sub["n_per_axis"], geom)
    noise = NoiseStream(cfg["seed"], 0, cfg["dt"])
    snaps = evolve_ensemble(ens, noise, sub["snapshot_times"], geom)
    files = []
    tv, chi = [], []
    for j, s in enumerate(snaps):
        m = empirical_measure(s.positions, sub["n_bins"], geom)
        u = uniformity_metric(m)
        tv.append(u["tv_distance"])
        chi.append(u["chi_square"])
        write_snapshot_csv(out / f"snapshot_{j:03d}.csv", s)
        write_measure_csv(out / f"measure_{j:03d}.csv", m)
        files += [f"snapshot_{j:03d}.csv", f"measure_{j:03d}.csv"]
    times = [s.t for s in snaps]
    x0 = np.array([min(3.0, rho - 0.5), 0.0, 0.0])
    y0 = x0 + np.array([0.0, sub["pair_separation"], 0.0])
    h = pair_distance_histogram(x0, y0, sub["pair_T"], replica_stream(cfg["seed"], 1, cfg["dt"], _SALT_FLOW),
                                geom, burn_in=sub["burn_in"])
    with open(out / "pair_histogram.csv", "w") as fh:
        fh.write("lo,hi,mass\n")
        for lo, hi, w in zip(h.edges[:-1], h.edges[1:], h.mass):
            fh.write(f"{lo!r},{hi!r},{w!r}\n")
    files.append("pair_histogram.csv")
    summary = {"particles": exact(len(ens)), "lattice_spacing": exact(ens.spacing),
               "snapshot_t": [exact(t) for t in times],
               "tv_distance": [exact(v) for v in tv], "chi_square": [exact(v) for v in chi],
               "pair_mass_below_threshold": exact(h.mass_below), "pair_threshold": exact(h.threshold)}
    diag = {}
    if len(times) >= 3:
        td = trend_diagnostic(times, tv)
        summary["tv_trend_spearman"] = exact(td["spearman"])
        diag = {"trend_note": td["note"]}
    return summary, {"files": files, **diag}


def run_validate_harmonic(cfg, out: Path):
    from .excursion import validate_harmonic

    sub = cfg["validate-harmonic"]
    res = validate_harmonic(cfg["N"], cfg["delta"], cfg["dt"], eps_cut=sub["eps_cut"], level=sub["level"],
                            far_radius=sub["far_radius"], seed=cfg["seed"], threads=cfg["threads"])
    summary = {"ks_statistic": exact(res.ks_statistic), "p_value": exact(res.p_value),
               "samples": exact(res.n_samples), "hits": exact(res.n_hit), "level": exact(res.level),
               "passed": res.passed}
    return summary, {}


RUNNERS = {"quad": run_quad, "lambda": run_lambda, "couple": run_couple, "flow": run_flow,
           "validate-harmonic": run_validate_harmonic}


# ---------------------------------------------------------------------------


def _rho_arg(s: str):
    if s.lower() in ("inf", "infinity"):
        return "inf"
    try:
        return float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"rho must be a number or 'inf', got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbm-lab", description="Coupled reflected Brownian motion experiments")
    p.add_argument("experiment_pos", nargs="?", metavar="EXPERIMENT", help=" | ".join(EXPERIMENTS))
    p.add_argument("--experiment", help="same as the positional argument")
    p.add_argument("--config", type=Path, help="JSON configuration file")
    p.add_argument("--rho", type=_rho_arg)
    p.add_argument("--dt", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--tol", type=float)
    return p


def _threads_from_env():
    v = os.environ.get("RBM_LAB_THREADS")
    if v is None:
        return None
    try:
        return int(v)
    except ValueError:
        raise ValidationError(f"RBM_LAB_THREADS must be an integer, got {v!r}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t_start = time.time()
    try:
        file_cfg = None
        if args.config is not None:
            try:
                file_cfg = json.loads(args.config.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ValidationError(f"cannot read config {args.config}: {exc}") from None
        over = {k: v for k, v in vars(args).items() if k not in ("experiment_pos", "config")}
        over["experiment"] = args.experiment or args.experiment_pos
        if over["threads"] is None and not (file_cfg and "threads" in file_cfg):
            over["threads"] = _threads_from_env()
        cfg = resolve(file_cfg, over)
    except UnknownExperiment as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    out = Path(cfg["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: output directory {out} not writable: {exc}", file=sys.stderr)
        return EXIT_UNWRITABLE

    try:
        summary, extra = RUNNERS[cfg["experiment"]](cfg, out)
    except BudgetExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RbmLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    summary = {"experiment": cfg["experiment"], "results": summary}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    manifest = {"config": cfg, "seed": cfg["seed"], "version": __version__,
                "wall_time_s": round(time.time() - t_start, 3), "files": ["summary.json"]}
    for k, v in extra.items():
        if k == "files":
            manifest["files"] += v
        else:
            manifest[k] = v
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
