"""Cross-module validation suite.

Each check reproduces one quantitative claim end to end and returns a
:class:`CheckResult`.  Defaults are the full acceptance settings;
``profile="quick"`` shrinks ensembles and system sizes for a fast smoke run
(thresholds are unchanged, so a quick run may fail where the full one
passes).
"""
from __future__ import annotations

import itertools
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from . import circuit, fokker_planck as fp, oscillators as osc, spin_chain as sc, weights as wm

PROFILES = ("full", "quick")


@dataclass(frozen=True)
class CheckResult:
    key: str
    title: str
    passed: bool
    summary: str
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.key:>3}  {self.title}: {self.summary}"


def collapse_check(curves: Mapping[float, tuple[Sequence[float], Sequence[float]]],
                   n_grid: int = 2001) -> float:
    """Largest pairwise sup-norm gap between ``<w>/N`` curves plotted against ``g**2 t``.

    ``curves`` maps each coupling to ``(g**2 t, <w>/N)``.  The curves are
    interpolated onto a common grid spanning the range all of them cover.
    """
    if len(curves) < 2:
        raise ValueError("collapse_check needs curves for at least two couplings")
    xs = {g: np.asarray(c[0], dtype=float) for g, c in curves.items()}
    lo = max(x.min() for x in xs.values())
    hi = min(x.max() for x in xs.values())
    if not hi > lo:
        raise ValueError("curves share no common g**2 t range")
    grid = np.linspace(lo, hi, n_grid)
    ys = [np.interp(grid, xs[g], np.asarray(c[1], dtype=float)) for g, c in curves.items()]
    return float(max(np.abs(a - b).max() for a, b in itertools.combinations(ys, 2)))


def collapse_curves(couplings: Sequence[float], n_sites: int, tau_max: float) -> dict:
    out = {}
    for g in couplings:
        steps = int(math.ceil(tau_max / g ** 2))
        obs = wm.evolve(wm.initial_distribution(n_sites), wm.build_transition_matrix(wm.CircuitParams(n_sites, g)),
                        steps)
        out[g] = (np.arange(steps + 1) * g ** 2, np.array([o.normalized_weight for o in obs]))
    return out


# ---------------------------------------------------------------------------
# weight chain
# ---------------------------------------------------------------------------

def check_stochasticity(sizes=(10, 50, 100, 400), couplings=(0.1, 0.5, 1.0)) -> tuple[bool, str, dict]:
    col = max(wm.build_transition_matrix(wm.CircuitParams(n, g), check=False).max_column_error
              for n in sizes for g in couplings)
    ident = max(np.abs(wm.build_transition_matrix(wm.CircuitParams(n, 0.0)).entries - np.eye(2 * n)).max()
                for n in sizes)
    ok = col <= 1e-9 and ident <= 1e-12
    return ok, f"max |colsum-1| = {col:.1e}, |R(g=0)-1| = {ident:.1e}", {"column_error": col, "identity_error": ident}


def check_exact_oracle(n_sites=3, coupling=0.4) -> tuple[bool, str, dict]:
    p = wm.CircuitParams(n_sites, coupling)
    diff = float(np.abs(circuit.grouped_transition_matrix(p) - wm.build_transition_matrix(p).entries).max())
    return diff <= 1e-10, f"N={n_sites}: max |R_strings - R| = {diff:.1e}", {"max_diff": diff}


def mc_comparison(mc: circuit.MonteCarloWeights, coupling: float, floor: float = 1e-12) -> dict:
    """z-scores of every ``h_t(w, w1)`` bin against the exact chain.

    Bins where both the chain and the sample mean are below ``floor`` are
    structural zeros (round-off only) and are excluded from the statistics.
    """
    n = mc.n_sites
    mat = wm.build_transition_matrix(wm.CircuitParams(n, coupling))
    h = wm.initial_distribution(n)
    zs = []
    for t in range(1, mc.mean.shape[0]):
        h = wm.step(h, mat)
        live = (h.values > floor) | (np.abs(mc.mean[t]) > floor)
        err = mc.stderr[t][live]
        z = np.abs(mc.mean[t][live] - h.values[live]) / np.where(err > 0, err, np.inf)
        zs.append(z)
    z = np.concatenate(zs)
    return {"max_z": float(z.max()), "frac_within_2": float(np.mean(z <= 2.0)), "n_bins": int(z.size)}


def check_mc_oracle(n_realizations=20_000, n_sites=6, coupling=0.4, steps=5, seed=12345,
                    mc: circuit.MonteCarloWeights | None = None) -> tuple[bool, str, dict]:
    if mc is None:
        mc = circuit.monte_carlo_weight_distribution(wm.CircuitParams(n_sites, coupling), steps, n_realizations, seed)
    m = mc_comparison(mc, coupling)
    ok = m["max_z"] <= 3.0 and m["frac_within_2"] >= 0.95
    return ok, (f"{mc.n_realizations} circuits, {m['n_bins']} bins: max z = {m['max_z']:.2f}, "
                f"{100 * m['frac_within_2']:.1f}% within 2 sigma"), m


def check_one_step(n_sites=50, angles=(0.05, 0.3, math.pi / 4)) -> tuple[bool, str, dict]:
    dist_err = mean_err = 0.0
    for a in angles:
        p = wm.CircuitParams(n_sites, a, coupling_exponent=0.0)
        h1 = wm.step(wm.initial_distribution(n_sites), wm.build_transition_matrix(p))
        dist_err = max(dist_err, float(np.abs(h1.values - wm.one_step_distribution_analytic(p).values).max()))
        mean_err = max(mean_err, abs(h1.mean_weight - wm.one_step_mean_weight(p)))
    p = wm.CircuitParams(n_sites, math.pi / 4, coupling_exponent=0.0)
    w1 = wm.step(wm.initial_distribution(n_sites), wm.build_transition_matrix(p)).mean_weight
    ok = dist_err <= 1e-10 and mean_err <= 1e-12 and w1 >= n_sites / 3
    return ok, (f"|h1 - closed form| = {dist_err:.1e}, |<w>_1 - closed form| = {mean_err:.1e}, "
                f"<w>_1(g'=pi/4)/N = {w1 / n_sites:.3f}"), {"dist_err": dist_err, "mean_err": mean_err,
                                                            "w1_over_n": w1 / n_sites}


def check_growth_rate(n_sites=100, coupling=0.1, window=(2.0, 10.0)) -> tuple[bool, str, dict]:
    p = wm.CircuitParams(n_sites, coupling)
    steps = int(math.ceil(20 / coupling ** 2))
    obs = wm.evolve(wm.initial_distribution(n_sites), wm.build_transition_matrix(p), steps)
    rate, _ = wm.fit_growth_rate(np.arange(steps + 1), [o.mean_weight for o in obs], window)
    target = 2 * coupling ** 2 / 3
    rel = rate / target - 1
    return abs(rel) <= 0.10, f"rate = {rate:.5f} vs 2g^2/3 = {target:.5f} ({100 * rel:+.1f}%)", \
        {"rate": rate, "relative_error": rel}


def check_scrambling_scaling(sizes=(50, 100, 200, 400), coupling=0.1) -> tuple[bool, str, dict]:
    ts = [wm.scrambling_time(wm.CircuitParams(n, coupling)) for n in sizes]
    slope = float(np.polyfit(np.log(sizes), ts, 1)[0])
    target = 3 / (2 * coupling ** 2)
    rel = slope / target - 1
    return abs(rel) <= 0.15, f"dt_s/dlnN = {slope:.1f} vs {target:.1f} ({100 * rel:+.1f}%)", \
        {"slope": slope, "relative_error": rel, "t_s": ts}


def check_collapse(couplings=(0.05, 0.1, 0.2), n_sites=100, tau_max=30.0) -> tuple[bool, str, dict]:
    dev = collapse_check(collapse_curves(couplings, n_sites, tau_max))
    return dev < 0.02, f"max sup-norm gap = {dev:.4f}", {"deviation": dev}


def check_steady_state(n_sites=100, coupling=0.1, tau=30.0) -> tuple[bool, str, dict]:
    p = wm.CircuitParams(n_sites, coupling)
    steps = int(round(tau / coupling ** 2))
    d = wm.evolve(wm.initial_distribution(n_sites), wm.build_transition_matrix(p), steps,
                  checkpoints=(steps,))[-1].distribution
    hm = d.marginal()
    st = fp.stationary_density(n_sites, fp.FPGrid(n_sites, n_sites + 1, "w")).asymptotic.values
    st = st / st.sum()
    l1 = float(np.abs(hm - st).sum())
    peak = int(np.argmax(hm)) / n_sites
    ratio = float(d.sector(1).max() / d.sector(0).max())
    ok = l1 < 0.05 and abs(peak - 0.75) <= 0.01 and abs(ratio / 3 - 1) <= 0.10
    return ok, f"L1 = {l1:.4f}, peak w/N = {peak:.3f}, sector peak ratio = {ratio:.3f}", \
        {"l1": l1, "peak": peak, "ratio": ratio}


# ---------------------------------------------------------------------------
# continuum limit
# ---------------------------------------------------------------------------

def check_fp_trajectory(n_sites=100, coupling=0.05, n_points=1001, tau_range=(1.0, 20.0)) -> tuple[bool, str, dict]:
    p = wm.CircuitParams(n_sites, coupling)
    steps = int(math.ceil(tau_range[1] / coupling ** 2))
    obs = wm.evolve(wm.initial_distribution(n_sites), wm.build_transition_matrix(p), steps)
    tc = np.arange(steps + 1) * coupling ** 2
    wc = np.array([o.mean_weight for o in obs])
    grid = fp.FPGrid(n_sites, n_points)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fp.FPStabilityWarning)
        tr = fp.integrate_fp(fp.gaussian_initial(grid), tau_range[1], 1.0, record_every=0.25)
    taus = tr.taus
    sel = (taus >= tau_range[0] - 1e-9) & (taus <= tau_range[1] + 1e-9)
    rel = tr.mean_weights[sel] / np.interp(taus[sel], tc, wc) - 1
    k = int(np.abs(rel).argmax())
    worst = float(rel[k])
    return abs(worst) <= 0.02, f"max |<w>_FP/<w>_chain - 1| = {abs(worst):.3f} at g^2t = {taus[sel][k]:.2f}", \
        {"max_relative_error": abs(worst), "at_tau": float(taus[sel][k])}


def check_fp_stationary(n_sites=100, n_points=1001) -> tuple[bool, str, dict]:
    grid = fp.FPGrid(n_sites, n_points)
    l1 = fp.steady_state(grid).l1_distance(fp.stationary_density(n_sites, grid).asymptotic)
    return l1 <= 1e-3, f"L1(long-time FP, stationary) = {l1:.1e}", {"l1": l1}


def check_commutator_identity(n_realizations=10_000, n_sites=6, coupling=0.4, steps=5, r=3,
                              seed=2024) -> tuple[bool, str, dict]:
    p = wm.CircuitParams(n_sites, coupling)
    s = circuit.commutator_samples(p, r, steps, n_realizations, seed)[:, 1:]
    diff = s[..., 0] - s[..., 1]
    z = np.abs(diff.mean(axis=0)) / (diff.std(axis=0, ddof=1) / math.sqrt(n_realizations))
    mean = s.mean(axis=0)
    gap = float(np.abs(mean[:, 2] - mean[:, 1]).max())
    bound = 4 / (3 * (n_sites - 1))
    ok = bool(z.max() <= 3.0) and gap <= bound
    return ok, (f"max z(direct - formula) = {z.max():.2f} over t=1..{steps}; "
                f"large-N gap {gap:.3f} <= 4/(3(N-1)) = {bound:.3f}"), \
        {"max_z": float(z.max()), "direct": mean[:, 0].tolist(), "formula": mean[:, 1].tolist(),
         "large_n_gap": gap}


# ---------------------------------------------------------------------------
# spin chain
# ---------------------------------------------------------------------------

def otoc_light_cone(n_sites=14, t_max=8.5, dt=0.5, seed=1):
    p = sc.ChainHamiltonianParams(n_sites, 1.0, 1.05, 0.5, 0.0, "open")
    times = np.arange(0.0, t_max + 1e-9, dt)
    sites = np.arange(2, n_sites + 1)
    res = sc.otoc(p, sites, times, seed)
    return sites, np.array([sc.crossing_time(times, v) for v in res.values])


def otoc_far_site(sizes=range(8, 15), t_max=3.0, dt=0.25, seed=7):
    times = np.arange(0.0, t_max + 1e-9, dt)
    rows = {n: 1 - sc.otoc(sc.ChainHamiltonianParams(n, 1.0, 1.05, 0.0, -1.0, "open"), [n], times, seed).values[0]
            for n in sizes}
    return times, rows


def pick_t_star(times, rows, ceiling=0.1) -> float:
    """Latest grid time (after 0) at which ``1 - F`` stays below ``ceiling`` for every N."""
    worst = np.max(np.stack(list(rows.values())), axis=0)
    ok = np.nonzero((worst <= ceiling) & (times > 0))[0]
    if ok.size == 0:
        raise ValueError("no grid time keeps 1 - F below the ceiling")
    return float(times[ok[-1]])


def check_otoc(n_sites=14, sizes=range(8, 15)) -> tuple[bool, str, dict]:
    sites, tc = otoc_light_cone(n_sites)
    rho = float(stats.spearmanr(sites, tc).statistic) if np.all(np.isfinite(tc)) else math.nan
    times, rows = otoc_far_site(sizes)
    t_star = pick_t_star(times, rows)
    k = int(np.argmin(np.abs(times - t_star)))
    ns = np.array(list(rows))
    y = np.array([rows[n][k] for n in ns])
    r2 = float(stats.linregress(1.0 / ns, y).rvalue ** 2)
    ok = rho > 0.95 and r2 > 0.98
    return ok, f"light cone Spearman rho = {rho:.3f}; 1-F(N, t*={t_star:g}) vs 1/N R^2 = {r2:.4f}", \
        {"spearman": rho, "crossing_times": tc.tolist(), "t_star": t_star, "r2": r2}


def check_level_statistics(n_sites=14, n_poisson=200_000) -> tuple[bool, str, dict]:
    chaotic = sc.level_statistics(sc.ChainHamiltonianParams(n_sites, 1.0, 1.05, 0.0, -1.0, "periodic"))
    near = sc.level_statistics(sc.ChainHamiltonianParams(n_sites, 1.0, 1.05, 0.0, -0.01, "periodic"))
    pois = float(sc.gap_ratios(sc.poisson_spectrum(n_poisson, np.random.default_rng(3))).mean())
    ok = (abs(chaotic.mean_r - 0.53) <= 0.02 and near.mean_r < 0.42
          and abs(pois - (2 * math.log(2) - 1)) <= 0.005)
    return ok, (f"<r>(g=-1) = {chaotic.mean_r:.4f} +- {chaotic.stderr:.4f}, <r>(g=-0.01) = {near.mean_r:.4f}, "
                f"Poisson self-test = {pois:.4f}"), \
        {"chaotic": chaotic.mean_r, "near_integrable": near.mean_r, "poisson": pois}


def entropy_rates(sizes, field_z, global_g, window=(0.2, 1.0), dt=0.05):
    times = np.arange(0.0, window[1] + 1e-9, dt)
    out = []
    for n in sizes:
        s = sc.entanglement_entropy_quench(sc.ChainHamiltonianParams(n, 1.0, 1.05, field_z, global_g, "open"), times)
        out.append(sc.early_growth_rate(times, s, window))
    return np.array(out)


def check_entanglement(sizes=(10, 12, 14)) -> tuple[bool, str, dict]:
    local = entropy_rates(sizes, 0.5, 0.0)
    nonlocal_ = entropy_rates(sizes, 0.0, -1.0)
    spread = float((local.max() - local.min()) / local.mean())
    ok = bool(np.all(np.diff(nonlocal_) > 0)) and spread < 0.10
    return ok, (f"non-local rates {np.round(nonlocal_, 3).tolist()}, "
                f"local rates {np.round(local, 3).tolist()} (spread {100 * spread:.1f}%)"), \
        {"local": local.tolist(), "nonlocal": nonlocal_.tolist(), "local_spread": spread}


# ---------------------------------------------------------------------------
# classical oscillators
# ---------------------------------------------------------------------------

def linear_regime_error(n_osc=20, seed=1) -> float:
    """Far-site deviation from the uniform-mode formula, relative to its envelope ``2 eps / N``.

    Compared up to ``(N - 1) / (2 W1)``, before the locally propagating
    part of the kick reaches the far end.
    """
    p = osc.OscillatorParams(n_osc, 1.0, 1.0, 0.0)
    t_end = (n_osc - 1) / (2 * p.omega1)
    hm = osc.perturbation_growth(p, t_end, 4, seed, record_dt=0.01)
    pred = osc.far_site_prediction(p, hm.times)
    return float(np.abs(hm.mean_dq[:, -1] - pred).max() / (2 * p.epsilon / n_osc))


def check_classical(n_ensemble=1000, sizes=(10, 20, 40), t_final=120.0, seed=0) -> tuple[bool, str, dict]:
    lin = linear_regime_error()
    spreads, ratios, lams = [], [], []
    for n in sizes:
        p = osc.OscillatorParams(n)
        hm = osc.perturbation_growth(p, t_final, n_ensemble, seed, record_dt=0.1)
        est = osc.lyapunov_estimate(hm)
        t01 = osc.time_to_reach(hm, 0.1)
        spreads.append(est.spread)
        lams.append(est.pooled)
        ratios.append(t01 * est.pooled / math.log(n / p.epsilon))
    ratios = np.array(ratios)
    ratio_spread = float((ratios.max() - ratios.min()) / ratios.mean())
    ok = lin <= 1e-3 and max(spreads) < 0.20 and ratio_spread <= 0.20
    return ok, (f"linear error/envelope = {lin:.1e}; lambda = {np.round(lams, 3).tolist()}, "
                f"site spread max {100 * max(spreads):.1f}%; t_0.1 lambda / ln(N/eps) = "
                f"{np.round(ratios, 3).tolist()} (spread {100 * ratio_spread:.1f}%)"), \
        {"linear_error": lin, "lambda": lams, "site_spread": spreads, "scaling_ratio": ratios.tolist(),
         "scaling_spread": ratio_spread}


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    key: str
    title: str
    func: Callable[..., tuple[bool, str, dict]]
    quick: dict = field(default_factory=dict)


CHECKS: tuple[Check, ...] = (
    Check("1", "column stochasticity", check_stochasticity, {"sizes": (10, 50, 100)}),
    Check("2", "string-level oracle", check_exact_oracle),
    Check("3", "Monte Carlo oracle", check_mc_oracle, {"n_realizations": 2000}),
    Check("4", "one-step closed form", check_one_step),
    Check("5", "early growth rate", check_growth_rate),
    Check("6", "scrambling time vs ln N", check_scrambling_scaling, {"sizes": (50, 100, 200)}),
    Check("7", "g^2 t collapse", check_collapse),
    Check("8", "stationary weight distribution", check_steady_state),
    Check("9a", "FP mean weight vs chain", check_fp_trajectory, {"n_points": 501}),
    Check("9b", "FP long-time limit", check_fp_stationary),
    Check("10", "commutator-weight identity", check_commutator_identity, {"n_realizations": 1000}),
    Check("11", "OTOC light cone and 1/N", check_otoc, {"n_sites": 10, "sizes": range(6, 11)}),
    Check("12", "level statistics", check_level_statistics, {"n_sites": 12, "n_poisson": 50_000}),
    Check("13", "entanglement growth", check_entanglement, {"sizes": (8, 10, 12)}),
    Check("14", "classical growth", check_classical, {"n_ensemble": 200, "sizes": (10, 20)}),
)


def get_check(key: str) -> Check:
    for c in CHECKS:
        if c.key == key:
            return c
    raise KeyError(f"unknown check {key!r}; available: {', '.join(c.key for c in CHECKS)}")


def run_check(key: str, profile: str = "full", **overrides) -> CheckResult:
    if profile not in PROFILES:
        raise ValueError(f"profile must be one of {PROFILES}")
    c = get_check(key)
    kwargs = dict(c.quick) if profile == "quick" else {}
    kwargs.update(overrides)
    t0 = time.perf_counter()
    ok, summary, metrics = c.func(**kwargs)
    return CheckResult(c.key, c.title, bool(ok), summary, metrics, time.perf_counter() - t0)


def validate(keys: Sequence[str] | None = None, profile: str = "quick") -> list[CheckResult]:
    """Run the selected checks (all by default); a check that raises counts as failed."""
    out = []
    for key in keys or [c.key for c in CHECKS]:
        try:
            out.append(run_check(key, profile))
        except Exception as exc:  # reported, not raised: the table must complete
            c = get_check(key)
            out.append(CheckResult(c.key, c.title, False, f"error: {type(exc).__name__}: {exc}"))
    return out
