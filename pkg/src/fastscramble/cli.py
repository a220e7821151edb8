"""Command-line experiment runner.

    fastscramble run <config.yaml>
    fastscramble validate [--profile quick|full] [--checks 1 2 9a ...]
    fastscramble list-experiments

Exit status: 0 on success, 1 if any sweep point (or validation check)
failed, 2 for configuration errors.  Results go to
``<root>/<experiment>/``, where ``root`` is ``$FASTSCRAMBLE_OUTPUT_ROOT``, else
the config's ``output_dir``, else ``./results``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__, checks
from . import circuit, fokker_planck as fp, oscillators as osc, spin_chain as sc, weights as wm
from .config import SCHEMA_VERSION, ConfigError, ExperimentConfig, load_config

OUTPUT_ENV = "FASTSCRAMBLE_OUTPUT_ROOT"
EXIT_OK, EXIT_POINT_FAILURE, EXIT_CONFIG = 0, 1, 2

RECORD_COLUMNS = ("experiment", "point", "observable", "value", "stderr", "note")


@dataclass
class PointOutput:
    """Tabular output plus scalar records of one sweep point."""

    columns: dict[str, np.ndarray | list]
    records: list[tuple[str, float, float | None, str]] = field(default_factory=list)
    failed_checks: int = 0


def point_seed(seed: int, index: int) -> int:
    """Independent 63-bit seed for sweep point ``index``."""
    state = np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) & 0x7FFFFFFF) << 32


# ---------------------------------------------------------------------------
# per-kind runners
# ---------------------------------------------------------------------------

def _run_markov(p, seed, every):
    params = wm.CircuitParams(p.n_sites, p.coupling, p.coupling_exponent)
    obs = wm.evolve(wm.initial_distribution(p.n_sites), wm.build_transition_matrix(params), p.steps)
    keep = [o for o in obs if o.time_step % every == 0 or o.time_step == p.steps]
    cols = {
        "t": [o.time_step for o in keep],
        "g2t": [o.time_step * p.coupling ** 2 for o in keep],
        "mean_weight": [o.mean_weight for o in keep],
        "normalized_weight": [o.normalized_weight for o in keep],
        "commutator": [o.mean_commutator for o in keep],
        "commutator_large_n": [o.commutator_large_n for o in keep],
    }
    recs = [("final_mean_weight", obs[-1].mean_weight, None, f"t={p.steps}")]
    if obs[-1].mean_commutator >= 0.5:
        c = np.array([o.mean_commutator for o in obs])
        k = int(np.argmax(c >= 0.5))
        t_s = k - 1 + (0.5 - c[k - 1]) / (c[k] - c[k - 1])
        recs.append(("scrambling_time", float(t_s), None, "first <C> = 0.5, interpolated"))
    return PointOutput(cols, recs)


def _run_fp(p, seed, every):
    grid = fp.FPGrid(p.n_sites, p.n_points, p.coordinate)
    init = fp.gaussian_initial(grid, center_w=p.initial_weight)
    dt = p.dt if p.dt is not None else 0.9 * fp.stability_bound(grid, p.full_coefficients, p.scheme)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fp.FPStabilityWarning)  # the step actually used is recorded below
        tr = fp.integrate_fp(init, p.tau_final, dt, full=p.full_coefficients, scheme=p.scheme,
                             record_every=every * dt)
    cols = {
        "tau": tr.taus,
        "mean_weight": tr.mean_weights,
        "normalized_weight": tr.mean_weights / p.n_sites,
        "mass": [d.mass for d in tr.densities],
    }
    st = fp.stationary_density(p.n_sites, grid).asymptotic
    recs = [
        ("dt", tr.dt, None, "tau units"),
        ("final_mass", tr.final.mass, None, ""),
        ("l1_to_stationary", tr.final.l1_distance(st), None, "asymptotic stationary density"),
    ]
    return PointOutput(cols, recs)


def _run_circuit(p, seed, every):
    params = wm.CircuitParams(p.n_sites, p.coupling, p.coupling_exponent)
    mc = circuit.monte_carlo_weight_distribution(params, p.steps, p.n_realizations, seed, p.convention)
    w, w1 = wm.weight_grid(p.n_sites)
    ts = [t for t in range(p.steps + 1) if t % every == 0 or t == p.steps]
    cols = {"t": [], "w": [], "w1": [], "h": [], "stderr": []}
    for t in ts:
        cols["t"] += [t] * w.size
        cols["w"] += w.tolist()
        cols["w1"] += w1.tolist()
        cols["h"] += mc.mean[t].tolist()
        cols["stderr"] += mc.stderr[t].tolist()
    recs = [(f"commutator_t{t}", mc.commutator(t), None, "exact finite-N relation on the sampled h") for t in ts]
    return PointOutput(cols, recs)


def _chain(p):
    return sc.ChainHamiltonianParams(p.n_sites, p.ising_j, p.field_x, p.field_z, p.global_g, p.boundary)


def _time_grid(t_max, dt):
    return np.round(np.arange(0.0, t_max + 0.5 * dt, dt), 12)


def _run_otoc(p, seed, every):
    times = _time_grid(p.t_max, p.dt)
    sites = p.sites or list(range(1, p.n_sites + 1))
    res = sc.otoc(_chain(p), sites, times, seed, n_states=p.n_states)
    cols = {
        "site": np.repeat(res.sites, times.size),
        "t": np.tile(times, res.sites.size),
        "F": res.values.ravel(),
        "imag": res.imag.ravel(),
    }
    recs = [(f"crossing_time_r{r}", sc.crossing_time(times, v), None, "F = 1/2")
            for r, v in zip(res.sites, res.values)]
    return PointOutput(cols, recs)


def _run_entropy(p, seed, every):
    times = _time_grid(p.t_max, p.dt)
    s = sc.entanglement_entropy_quench(_chain(p), times)
    recs = []
    if times[-1] >= 1.0:
        recs.append(("early_growth_rate", sc.early_growth_rate(times, s, (0.2, 1.0)), None, "fit on t in [0.2, 1]"))
    return PointOutput({"t": times, "entropy": s}, recs)


def _run_levels(p, seed, every):
    res = sc.level_statistics(_chain(p), min_dim=p.min_dim, n_boot=p.n_boot, seed=seed % 2 ** 32)
    keys = sorted(res.per_sector)
    cols = {"momentum": [k for k, _ in keys], "parity": [q for _, q in keys],
            "mean_r": [res.per_sector[k] for k in keys]}
    recs = [("mean_r", res.mean_r, res.stderr, f"{res.n_ratios} ratios, bootstrap error"),
            ("poisson_reference", 2 * math.log(2) - 1, None, "")]
    return PointOutput(cols, recs)


def _run_classical(p, seed, every):
    params = osc.OscillatorParams(p.n_osc, p.omega1, p.omega2, p.omega3, p.epsilon, p.boundary)
    hm = osc.perturbation_growth(params, p.t_final, p.n_ensemble, seed % 2 ** 63, dt=p.dt, record_dt=p.record_dt)
    idx = np.arange(0, hm.times.size, every)
    n = p.n_osc
    cols = {
        "t": np.repeat(hm.times[idx], n),
        "site": np.tile(np.arange(1, n + 1), idx.size),
        "mean_dq": hm.mean_dq[idx].ravel(),
    }
    est = osc.lyapunov_estimate(hm)
    recs = [("lyapunov_pooled", est.pooled, None, f"fit window {est.window}"),
            ("lyapunov_site_spread", est.spread, None, "(max - min) / mean"),
            ("time_far_site_0.1", osc.time_to_reach(hm, 0.1), None, "")]
    return PointOutput(cols, recs)


def _run_validate(p, seed, every):
    res = checks.validate(p.checks, p.profile)
    cols = {"check": [r.key for r in res], "title": [r.title for r in res],
            "passed": [r.passed for r in res], "summary": [r.summary for r in res]}
    recs = [(f"check_{r.key}", float(r.passed), None, r.summary) for r in res]
    return PointOutput(cols, recs, failed_checks=sum(not r.passed for r in res))


RUNNERS: dict[str, tuple[Callable, str]] = {
    "markov-evolve": (_run_markov, "exact weight chain: <w>, <w>/N and <C> vs t"),
    "fp-integrate": (_run_fp, "continuum drift-diffusion limit: <w> vs g^2 t"),
    "circuit-mc": (_run_circuit, "brute-force circuit sampling of h_t(w, w1)"),
    "otoc": (_run_otoc, "spin-chain OTOC F(r, t) from a typical state"),
    "entropy": (_run_entropy, "half-chain entanglement after a +y quench"),
    "level-stats": (_run_levels, "gap-ratio statistics in (k, prod X) sectors"),
    "classical-growth": (_run_classical, "perturbation growth in the oscillator chain"),
    "validate": (_run_validate, "cross-module oracle and acceptance checks"),
}


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _write(path: Path, text: str) -> str:
    data = text.encode()
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def _run_point(args):
    kind, index, params, seed, every = args
    try:
        out = RUNNERS[kind][0](params, seed, every)
        return index, out, None
    except Exception as exc:  # recorded in the manifest; the sweep goes on
        return index, None, "".join(traceback.format_exception_only(type(exc), exc)).strip()


def output_root(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir or "results")


def run_experiment(cfg: ExperimentConfig, experiment: str, out_dir: Path | None = None) -> int:
    """Execute every sweep point, write CSV files and a manifest, return the exit status."""
    out_dir = out_dir or output_root(cfg) / experiment
    out_dir.mkdir(parents=True, exist_ok=True)
    points = cfg.points()
    jobs = [(cfg.kind, i, p, point_seed(cfg.seed, i), cfg.checkpoint_every) for i, p in enumerate(points)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]

    records, entries = [], []
    status = EXIT_OK
    for (index, out, error), job in zip(results, jobs):
        entry = {"index": index, "params": job[2].model_dump(mode="json"), "seed": job[3]}
        if error is not None:
            entry.update(status="failed", error=error, files={})
            status = EXIT_POINT_FAILURE
        else:
            name = f"point-{index:03d}.csv"
            header = list(out.columns)
            table = _csv_text(header, zip(*(list(v) for v in out.columns.values())))
            entry.update(status="ok", files={name: _write(out_dir / name, table)})
            if out.failed_checks:
                entry.update(status="checks-failed", failed_checks=out.failed_checks)
                status = EXIT_POINT_FAILURE
            records += [(experiment, index, obs, val, err, note) for obs, val, err, note in out.records]
        entries.append(entry)

    rec_hash = _write(out_dir / "records.csv", _csv_text(RECORD_COLUMNS, records))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "artifact": {"package": "fastscramble", "version": __version__},
        "experiment": experiment,
        "config": cfg.model_dump(mode="json"),
        "records": {"file": "records.csv", "sha256": rec_hash, "columns": list(RECORD_COLUMNS)},
        "points": entries,
    }
    _write(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return status


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error in {args.config}:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    experiment = cfg.name or Path(args.config).stem
    out_dir = output_root(cfg) / experiment
    status = run_experiment(cfg, experiment, out_dir)
    print(f"{experiment}: {len(cfg.points())} point(s) -> {out_dir}"
          + ("" if status == EXIT_OK else " (some points failed; see manifest.json)"))
    return status


def _cmd_validate(args) -> int:
    keys = args.checks or None
    if keys:
        try:
            for k in keys:
                checks.get_check(k)
        except KeyError as exc:
            print(exc.args[0], file=sys.stderr)
            return EXIT_CONFIG
    results = checks.validate(keys, args.profile)
    for r in results:
        print(r.line())
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed ({args.profile} profile)")
    return EXIT_OK if n_fail == 0 else EXIT_POINT_FAILURE


def _cmd_list(args) -> int:
    width = max(map(len, RUNNERS))
    for kind, (_, text) in RUNNERS.items():
        print(f"{kind:<{width}}  {text}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fastscramble", description="Run scrambling experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a YAML config")
    run.add_argument("config")
    run.set_defaults(func=_cmd_run)
    val = sub.add_parser("validate", help="run the cross-module check suite")
    val.add_argument("--profile", choices=checks.PROFILES, default="quick")
    val.add_argument("--checks", nargs="+", metavar="KEY", help="subset of check keys, e.g. 1 2 9a")
    val.set_defaults(func=_cmd_validate)
    ls = sub.add_parser("list-experiments", help="list experiment kinds")
    ls.set_defaults(func=_cmd_list)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
