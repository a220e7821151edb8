"""Continuum (Fokker-Planck) limit of the weight chain in rescaled time ``tau = g**2 t``.

    d_tau h = -d_w (D1 h) + d_w^2 (D2 h)

is discretized in flux form on a uniform node grid.  End nodes own half
cells and both ends are zero-flux, so the trapezoidal mass is conserved to
round-off.  Time stepping is forward Euler under a bound that keeps the
update matrix nonnegative.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


class FPStabilityWarning(UserWarning):
    """Requested step exceeded the positivity bound and was halved."""


class NegativeDensityError(RuntimeError):
    pass


NEGATIVITY_TOL = 1e-8


def drift_coefficient(w, n_sites: int, full: bool = False):
    """``D1(w)``; ``full`` keeps the O(1/N) terms dropped by the truncated form."""
    w = np.asarray(w, dtype=float)
    n = float(n_sites)
    if full:
        return 2.0 * (4.0 + w + 3.0 * n * w - 4.0 * w ** 2) / (9.0 * n)
    return (2.0 / 3.0) * (w - 4.0 * w ** 2 / (3.0 * n))


def diffusion_coefficient(w, n_sites: int, full: bool = False):
    """``D2(w)``; the full form is negative below ``w ~ 1`` and is clipped there when integrating."""
    w = np.asarray(w, dtype=float)
    n = float(n_sites)
    if full:
        return (-3.0 + 3.0 * n * (w - 1.0) + 7.0 * w - 2.0 * w ** 2) / (9.0 * n)
    return w / 3.0 - 2.0 * w ** 2 / (9.0 * n)


@dataclass(frozen=True)
class FPGrid:
    """Uniform grid over the whole domain, in weight ``w`` or in ``phi = w/N``."""

    n_sites: int
    n_points: int = 1025
    coordinate: str = "w"
    lower_weight: float = 0.0

    def __post_init__(self):
        if self.n_points < 64:
            raise ValueError("n_points must be at least 64")
        if self.coordinate not in ("w", "phi"):
            raise ValueError("coordinate must be 'w' or 'phi'")
        if self.n_sites < 2:
            raise ValueError("n_sites must be at least 2")
        if not 0.0 <= self.lower_weight < self.n_sites:
            raise ValueError("lower_weight must lie in [0, N)")

    @property
    def scale(self) -> float:
        """Weight units per coordinate unit."""
        return float(self.n_sites) if self.coordinate == "phi" else 1.0

    @property
    def upper(self) -> float:
        return 1.0 if self.coordinate == "phi" else float(self.n_sites)

    @property
    def lower(self) -> float:
        return self.lower_weight / self.scale

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / (self.n_points - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.n_points)

    @property
    def weights(self) -> np.ndarray:
        return self.points * self.scale

    @property
    def quadrature(self) -> np.ndarray:
        q = np.full(self.n_points, self.spacing)
        q[[0, -1]] *= 0.5
        return q


@dataclass(frozen=True)
class FPDensity:
    grid: FPGrid
    values: np.ndarray
    tau: float = 0.0

    @property
    def mass(self) -> float:
        return float(self.grid.quadrature @ self.values)

    @property
    def mean_weight(self) -> float:
        return float(self.grid.quadrature @ (self.values * self.grid.weights)) / self.mass

    def l1_distance(self, other: "FPDensity") -> float:
        if other.grid != self.grid:
            raise ValueError("densities live on different grids")
        return float(self.grid.quadrature @ np.abs(self.values - other.values))


def gaussian_initial(grid: FPGrid, center_w: float = 1.0, width: float | None = None) -> FPDensity:
    """Narrow normalized bump standing in for a point mass at ``center_w``.

    ``width`` is in coordinate units and defaults to one grid spacing.
    """
    x = grid.points
    s = grid.spacing if width is None else width
    vals = np.exp(-0.5 * ((x - center_w / grid.scale) / s) ** 2)
    vals /= grid.quadrature @ vals
    return FPDensity(grid, vals, 0.0)


def _bernoulli(x: np.ndarray) -> np.ndarray:
    """``x / (exp(x) - 1)`` with the removable singularity at 0."""
    out = np.ones_like(x)
    nz = np.abs(x) > 1e-10
    out[nz] = x[nz] / np.expm1(x[nz])
    return out


@dataclass
class _Operator:
    """Flux coefficients: ``J_{i+1/2} = a_i h_i - b_i h_{i+1}`` with ``a, b >= 0``."""

    a: np.ndarray
    b: np.ndarray
    cell: np.ndarray
    rate_bound: float = field(init=False)

    def __post_init__(self):
        out_rate = np.zeros(self.cell.size)
        out_rate[:-1] += self.a
        out_rate[1:] += self.b
        self.rate_bound = float(np.max(out_rate / self.cell))

    def rhs(self, h: np.ndarray) -> np.ndarray:
        flux = self.a * h[:-1] - self.b * h[1:]
        div = np.zeros_like(h)
        div[:-1] -= flux
        div[1:] += flux
        return div / self.cell


def _build_operator(grid: FPGrid, drift, diffusion, scheme: str) -> _Operator:
    dx = grid.spacing
    x = grid.points
    xm = 0.5 * (x[1:] + x[:-1])
    c1 = lambda y: np.asarray(drift(y * grid.scale), dtype=float) / grid.scale  # noqa: E731
    c2 = lambda y: np.maximum(np.asarray(diffusion(y * grid.scale), dtype=float), 0.0) / grid.scale ** 2  # noqa: E731
    d2 = c2(x)
    cell = np.full(x.size, dx)
    cell[[0, -1]] *= 0.5
    if scheme == "upwind":
        v = c1(xm)
        a = np.maximum(v, 0.0) + d2[:-1] / dx
        b = np.maximum(-v, 0.0) + d2[1:] / dx
    elif scheme == "exponential":
        # flux (D1 - D2') h - D2 h' with the drift-to-diffusion ratio frozen
        # on each cell; exact for the zero-flux steady state of such cells
        dm = c2(xm)
        v = c1(xm) - (d2[1:] - d2[:-1]) / dx
        with np.errstate(divide="ignore", invalid="ignore"):
            pe = np.where(dm > 0, v * dx / dm, 0.0)
        a = np.where(dm > 0, dm / dx * _bernoulli(-pe), np.maximum(v, 0.0))
        b = np.where(dm > 0, dm / dx * _bernoulli(pe), np.maximum(-v, 0.0))
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return _Operator(a, b, cell)


@dataclass(frozen=True)
class FPTrajectory:
    densities: list[FPDensity]
    dt: float
    scheme: str
    full_coefficients: bool

    @property
    def taus(self) -> np.ndarray:
        return np.array([d.tau for d in self.densities])

    @property
    def mean_weights(self) -> np.ndarray:
        return np.array([d.mean_weight for d in self.densities])

    @property
    def final(self) -> FPDensity:
        return self.densities[-1]


def stability_bound(grid: FPGrid, full: bool = False, scheme: str = "exponential") -> float:
    """Largest Euler step keeping every update coefficient nonnegative."""
    op = _build_operator(grid, lambda w: drift_coefficient(w, grid.n_sites, full),
                         lambda w: diffusion_coefficient(w, grid.n_sites, full), scheme)
    return 1.0 / op.rate_bound if op.rate_bound > 0 else math.inf


def integrate_fp(
    initial: FPDensity,
    t_final: float,
    dt: float,
    *,
    full: bool = False,
    scheme: str = "exponential",
    record_every: float | None = None,
    drift=None,
    diffusion=None,
) -> FPTrajectory:
    """Integrate from ``initial.tau`` to ``t_final`` (both in ``tau``).

    ``dt`` is halved until it satisfies the positivity bound, which contains
    the usual explicit limit ``dx**2 / (2 max D2)``; a warning reports the
    change.  Densities are stored every ``record_every`` (default: start and
    end only).  ``drift`` and ``diffusion`` override the coefficient functions
    of ``w``.
    """
    grid = initial.grid
    n = grid.n_sites
    drift = drift or (lambda w: drift_coefficient(w, n, full))
    diffusion = diffusion or (lambda w: diffusion_coefficient(w, n, full))
    op = _build_operator(grid, drift, diffusion, scheme)

    span = t_final - initial.tau
    if span < 0:
        raise ValueError("t_final precedes the initial time")
    if dt <= 0:
        raise ValueError("dt must be positive")
    limit = 1.0 / op.rate_bound if op.rate_bound > 0 else math.inf
    if dt > limit:
        requested = dt
        while dt > limit:
            dt *= 0.5
        warnings.warn(f"dt={requested:g} violates the stability bound {limit:.3g}; using {dt:g}",
                      FPStabilityWarning, stacklevel=2)

    n_steps = int(math.ceil(span / dt - 1e-9)) if span > 0 else 0
    h_step = span / n_steps if n_steps else 0.0
    every = None
    if record_every is not None:
        every = max(1, int(round(record_every / h_step))) if n_steps else 1

    h = np.array(initial.values, dtype=float)
    out = [FPDensity(grid, h.copy(), initial.tau)]
    for k in range(1, n_steps + 1):
        h += h_step * op.rhs(h)
        if (every is not None and k % every == 0) or k == n_steps:
            lo = h.min()
            if lo < -NEGATIVITY_TOL:
                raise NegativeDensityError(
                    f"density reached {lo:.3e} at tau={initial.tau + k * h_step:.4g} (node {int(h.argmin())})")
            out.append(FPDensity(grid, h.copy(), initial.tau + k * h_step))
    return FPTrajectory(out, h_step, scheme, full)


def entropy_function(phi):
    """``S(phi) = 4 phi + 3 log(3 - 2 phi)``."""
    phi = np.asarray(phi, dtype=float)
    return 4.0 * phi + 3.0 * np.log(3.0 - 2.0 * phi)


@dataclass(frozen=True)
class StationaryDensity:
    """Asymptotic steady state and its Gaussian simplification, both normalized on ``grid``."""

    asymptotic: FPDensity
    gaussian: FPDensity


def _normalized_from_log(grid: FPGrid, log_vals: np.ndarray) -> np.ndarray:
    q = grid.quadrature
    ok = np.isfinite(log_vals)
    log_norm = logsumexp(log_vals[ok] + np.log(q[ok]))
    out = np.zeros_like(log_vals)
    out[ok] = np.exp(log_vals[ok] - log_norm)
    return out


def stationary_density(n_sites: int, grid: FPGrid | None = None) -> StationaryDensity:
    """Steady state ``exp(N S(phi)) / ((3 - 2 phi) phi) * (1 - exp(-2 N phi))`` up to normalization.

    Evaluated in log space; at ``phi = 0`` the bracket cancels the pole and
    the limit ``2N / 3 * exp(N S(0))`` is used.  Values are densities in the
    coordinate of ``grid``.
    """
    grid = grid or FPGrid(n_sites, coordinate="phi")
    if grid.n_sites != n_sites:
        raise ValueError("grid was built for a different N")
    n = float(n_sites)
    phi = grid.points / grid.upper
    with np.errstate(divide="ignore"):
        log_pref = np.where(phi > 0, np.log1p(-np.exp(-2.0 * n * phi)) - np.log(np.where(phi > 0, phi, 1.0)),
                            np.log(2.0 * n))
        log_full = n * entropy_function(phi) - np.log(3.0 - 2.0 * phi) + log_pref
        log_gauss = -(8.0 * n / 3.0) * (phi - 0.75) ** 2 - np.log(3.0 - 2.0 * phi) + log_pref
    return StationaryDensity(
        FPDensity(grid, _normalized_from_log(grid, log_full), math.inf),
        FPDensity(grid, _normalized_from_log(grid, log_gauss), math.inf),
    )


def to_weight_density(density: FPDensity) -> np.ndarray:
    """Density per unit weight at the grid nodes."""
    return density.values / density.grid.scale


def steady_state(grid: FPGrid, *, full: bool = False, scheme: str = "exponential") -> FPDensity:
    """Long-time limit of ``integrate_fp`` on ``grid``.

    With zero-flux ends the discrete steady state has every interface flux
    equal to zero, so ``h_{i+1} = (a_i / b_i) h_i``; the recursion is run in
    log space to survive the enormous dynamic range.
    """
    n = grid.n_sites
    op = _build_operator(grid, lambda w: drift_coefficient(w, n, full),
                         lambda w: diffusion_coefficient(w, n, full), scheme)
    if np.any(op.b <= 0) or np.any(op.a <= 0):
        raise ValueError("generator is not irreducible on this grid; steady state is not unique")
    log_h = np.concatenate([[0.0], np.cumsum(np.log(op.a) - np.log(op.b))])
    return FPDensity(grid, _normalized_from_log(grid, log_h), math.inf)
