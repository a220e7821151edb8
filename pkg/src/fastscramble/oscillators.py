"""Classical chain of anharmonic oscillators with a global quadratic coupling.

    H_c = sum p_r**2 / 2 + (W1**2 / 2) sum_{r<N} (q_{r+1} - q_r)**2
          + (W2**2 / (2 sqrt N)) (sum q_r)**2 + (W3**2 / 4) sum q_r**4

Sites are indexed ``0 .. N-1`` in arrays; the perturbed oscillator is index 0.
Arrays may carry leading ensemble axes, so whole ensembles integrate in one
vectorized pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BLOWUP = 1e6


class BlowUpError(RuntimeError):
    pass


@dataclass(frozen=True)
class OscillatorParams:
    n_osc: int
    omega1: float = 1.0
    omega2: float = 1.0
    omega3: float = 2.0
    epsilon: float = 1e-5
    boundary: str = "open"

    def __post_init__(self):
        if self.n_osc < 1:
            raise ValueError("n_osc must be positive")
        if min(self.omega1, self.omega2, self.omega3) < 0:
            raise ValueError("frequencies must be nonnegative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.boundary not in ("open", "periodic"):
            raise ValueError("boundary must be 'open' or 'periodic'")

    @property
    def uniform_frequency(self) -> float:
        return self.n_osc ** 0.25 * self.omega2

    def reference_dt(self) -> float:
        """``0.01`` over the fastest linear frequency scale."""
        return 0.01 / max(self.omega1, self.omega2, self.omega3, self.uniform_frequency)


@dataclass(frozen=True)
class OscillatorConfiguration:
    q: np.ndarray
    p: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if q.shape != p.shape:
            raise ValueError("q and p must have the same shape")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("configuration has non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)


def stiffness_matrix(params: OscillatorParams, n: int | None = None) -> np.ndarray:
    """Symmetric ``K`` with ``V_2 = q K q / 2``."""
    n = params.n_osc if n is None else n
    k = np.zeros((n, n))
    if params.omega1 and n > 1:
        i = np.arange(n - 1)
        bonds = [(i, i + 1)]
        if params.boundary == "periodic" and n > 2:
            bonds.append((np.array([n - 1]), np.array([0])))
        for a, b in bonds:
            np.add.at(k, (a, a), params.omega1 ** 2)
            np.add.at(k, (b, b), params.omega1 ** 2)
            np.add.at(k, (a, b), -params.omega1 ** 2)
            np.add.at(k, (b, a), -params.omega1 ** 2)
    k += params.omega2 ** 2 / math.sqrt(n)
    return k


def force(q: np.ndarray, params: OscillatorParams, stiffness: np.ndarray | None = None) -> np.ndarray:
    """``-dV/dq`` along the last axis."""
    q = np.asarray(q, dtype=float)
    k = stiffness_matrix(params, q.shape[-1]) if stiffness is None else stiffness
    f = -(q @ k)
    if params.omega3:
        f -= params.omega3 ** 2 * (q * q * q)
    return f


def equations_of_motion(config: OscillatorConfiguration, params: OscillatorParams):
    """Hamilton's equations: returns ``(dq/dt, dp/dt)``."""
    return config.p.copy(), force(config.q, params)


def energy(q: np.ndarray, p: np.ndarray, params: OscillatorParams) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    k = stiffness_matrix(params, q.shape[-1])
    e = 0.5 * (p ** 2).sum(axis=-1) + 0.5 * ((q @ k) * q).sum(axis=-1)
    return e + 0.25 * params.omega3 ** 2 * (q ** 4).sum(axis=-1)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    dt: float

    def energies(self, params: OscillatorParams) -> np.ndarray:
        return energy(self.q, self.p, params)


def integrate(config: OscillatorConfiguration, params: OscillatorParams, t_final: float, dt: float,
              record_every: int = 1) -> Trajectory:
    """Velocity-Verlet integration, recording every ``record_every`` steps.

    The last sample is always at ``t_final``; ``dt`` is shrunk slightly so an
    integer number of steps fits.
    """
    if dt <= 0 or t_final < 0:
        raise ValueError("need dt > 0 and t_final >= 0")
    n_steps = int(math.ceil(t_final / dt - 1e-12)) if t_final > 0 else 0
    h = t_final / n_steps if n_steps else dt
    q = config.q.copy()
    p = config.p.copy()
    k_mat = stiffness_matrix(params, q.shape[-1])
    f = force(q, params, k_mat)
    times, qs, ps = [config.time], [q.copy()], [p.copy()]
    for k in range(1, n_steps + 1):
        p += 0.5 * h * f
        q += h * p
        f = force(q, params, k_mat)
        p += 0.5 * h * f
        if k % record_every == 0 or k == n_steps:
            if np.abs(q).max() > BLOWUP:
                raise BlowUpError(f"|q| exceeded {BLOWUP:g} at t={config.time + k * h:.4g}")
            times.append(config.time + k * h)
            qs.append(q.copy())
            ps.append(p.copy())
    return Trajectory(np.array(times), np.stack(qs), np.stack(ps), h)


def modified_energy(q: np.ndarray, p: np.ndarray, params: OscillatorParams, dt: float) -> np.ndarray:
    """Velocity-Verlet shadow Hamiltonian through ``O(dt**2)``.

    ``H + dt**2 (p V'' p / 12 - |grad V|**2 / 24)`` is conserved by the
    integrator up to ``O(dt**4)``, so its change isolates secular drift from
    the bounded ``O(dt**2)`` oscillation of ``H`` itself.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    k = stiffness_matrix(params, q.shape[-1])
    curv = ((p @ k) * p).sum(axis=-1) + 3.0 * params.omega3 ** 2 * (q * q * p * p).sum(axis=-1)
    grad = force(q, params, k)
    return energy(q, p, params) + dt ** 2 * (curv / 12.0 - (grad * grad).sum(axis=-1) / 24.0)


def energy_error(traj: Trajectory, params: OscillatorParams) -> float:
    """Largest relative excursion ``|H(t) - H(0)| / |H(0)|``; bounded and ``O(dt**2)``."""
    e = traj.energies(params)
    return float(np.max(np.abs(e - e[0]) / np.abs(e[0])))


def energy_drift(traj: Trajectory, params: OscillatorParams) -> float:
    """Largest relative change of the shadow Hamiltonian along the trajectory."""
    e = modified_energy(traj.q, traj.p, params, traj.dt)
    return float(np.max(np.abs(e - e[0]) / np.abs(e[0])))


def normal_mode_solution(config: OscillatorConfiguration, params: OscillatorParams, times) -> np.ndarray:
    """Exact positions for the quadratic (``omega3 = 0``) chain from the normal modes."""
    if params.omega3 != 0:
        raise ValueError("closed form needs omega3 = 0")
    w2, modes = np.linalg.eigh(stiffness_matrix(params))
    w = np.sqrt(np.maximum(w2, 0.0))
    a = modes.T @ config.q
    b = modes.T @ config.p
    t = np.asarray(times, dtype=float)[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        sin_term = np.where(w > 1e-12, np.sin(w * t) / np.where(w > 1e-12, w, 1.0), t)
    return (a * np.cos(w * t) + b * sin_term) @ modes.T


def far_site_prediction(params: OscillatorParams, times) -> np.ndarray:
    """``(eps/N) |cos(N**0.25 W2 t) - 1|``: the uniform-mode share of the kick seen far away."""
    t = np.asarray(times, dtype=float)
    return params.epsilon / params.n_osc * np.abs(np.cos(params.uniform_frequency * t) - 1.0)


@dataclass(frozen=True)
class GrowthHeatmap:
    """Ensemble mean of ``|q2_r(t) - q1_r(t)|``; ``mean_dq[k, r]`` at ``times[k]``."""

    times: np.ndarray
    mean_dq: np.ndarray
    params: OscillatorParams
    dt: float
    n_ensemble: int
    seed: int


def initial_ensemble(params: OscillatorParams, n_ensemble: int, seed: int) -> np.ndarray:
    """Positions iid uniform on [-1, 1]; member ``i`` uses its own spawned stream."""
    root = np.random.SeedSequence(seed)
    return np.stack([np.random.default_rng(s).uniform(-1.0, 1.0, params.n_osc)
                     for s in root.spawn(n_ensemble)])


def perturbation_growth(params: OscillatorParams, t_final: float, n_ensemble: int, seed: int,
                        dt: float | None = None, record_dt: float = 0.05) -> GrowthHeatmap:
    """Run both configurations for every ensemble member and average ``|dq_r(t)|``.

    Both start at rest; configuration 2 has ``q_0`` shifted by ``epsilon``.
    """
    dt = params.reference_dt() if dt is None else dt
    q1 = initial_ensemble(params, n_ensemble, seed)
    q2 = q1.copy()
    q2[:, 0] += params.epsilon
    q = np.stack([q1, q2])
    every = max(1, int(round(record_dt / dt)))
    traj = integrate(OscillatorConfiguration(q, np.zeros_like(q)), params, t_final, dt, every)
    dq = np.abs(traj.q[:, 1] - traj.q[:, 0]).mean(axis=1)
    return GrowthHeatmap(traj.times, dq, params, traj.dt, n_ensemble, seed)


@dataclass(frozen=True)
class LyapunovEstimate:
    per_site: np.ndarray
    pooled: float
    spread: float
    window: tuple[float, float]


def lyapunov_estimate(heatmap: GrowthHeatmap, window: tuple[float, float] | None = None) -> LyapunovEstimate:
    """Fit ``ln <dq_r> = c_r + lambda_r t`` where ``lo <= <dq_r> <= hi``.

    The default window is ``[10 eps, 0.1]``.  Only the stretch up to the first
    exit through ``hi`` is used.  Sites with fewer than three points get
    ``nan``; ``spread`` is ``(max - min) / mean`` over the remaining sites.
    """
    lo, hi = window or (10.0 * heatmap.params.epsilon, 0.1)
    t = heatmap.times
    rates = np.full(heatmap.mean_dq.shape[1], np.nan)
    for r in range(rates.size):
        y = heatmap.mean_dq[:, r]
        above = np.nonzero(y > hi)[0]
        stop = above[0] if above.size else y.size
        sel = np.zeros(y.size, dtype=bool)
        sel[:stop] = (y[:stop] >= lo) & (y[:stop] <= hi)
        if sel.sum() >= 3:
            rates[r] = np.polyfit(t[sel], np.log(y[sel]), 1)[0]
    ok = np.isfinite(rates)
    if not ok.any():
        return LyapunovEstimate(rates, math.nan, math.nan, (lo, hi))
    good = rates[ok]
    pooled = float(good.mean())
    spread = float((good.max() - good.min()) / abs(pooled)) if pooled else math.inf
    return LyapunovEstimate(rates, pooled, spread, (lo, hi))


def time_to_reach(heatmap: GrowthHeatmap, level: float = 0.1, site: int = -1) -> float:
    """First time the mean ``|dq|`` at ``site`` reaches ``level`` (linear interpolation)."""
    y = heatmap.mean_dq[:, site]
    idx = np.nonzero(y >= level)[0]
    if idx.size == 0:
        return math.nan
    k = idx[0]
    if k == 0:
        return float(heatmap.times[0])
    t0, t1 = heatmap.times[k - 1], heatmap.times[k]
    return float(t0 + (level - y[k - 1]) * (t1 - t0) / (y[k] - y[k - 1]))
