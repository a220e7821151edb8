"""Exact numerics for the Ising chain with transverse, longitudinal and all-to-all ZZ terms.

    H = -J sum_i Z_i Z_{i+1} - h_x sum_i X_i - h_z sum_i Z_i - (g / sqrt N) sum_{i<j} Z_i Z_j

States are length ``2**N`` complex vectors in the Z basis with site ``i``
stored in bit ``i`` (site 0 is the least significant bit, bit value 0 is
``Z = +1``).  The Hamiltonian is applied matrix-free and evolution uses a
Lanczos approximation to the exponential with step sizes chosen from the
standard a-posteriori error estimate.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

KRYLOV_DIM = 30
STEP_TOL = 1e-10


@dataclass(frozen=True)
class ChainHamiltonianParams:
    n_sites: int
    ising_j: float = 1.0
    field_x: float = 1.05
    field_z: float = 0.0
    global_g: float = 0.0
    boundary: str = "open"

    def __post_init__(self):
        if self.n_sites < 2:
            raise ValueError("n_sites must be at least 2")
        if self.boundary not in ("open", "periodic"):
            raise ValueError("boundary must be 'open' or 'periodic'")
        vals = (self.ising_j, self.field_x, self.field_z, self.global_g)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("Hamiltonian parameters must be finite")

    @property
    def dim(self) -> int:
        return 2 ** self.n_sites


@lru_cache(maxsize=32)
def z_values(n_sites: int) -> np.ndarray:
    """``z[i, b]`` = eigenvalue of ``Z_i`` on basis state ``b``."""
    b = np.arange(2 ** n_sites)
    return 1 - 2 * ((b[None, :] >> np.arange(n_sites)[:, None]) & 1)


@lru_cache(maxsize=32)
def _diagonal_cached(params: ChainHamiltonianParams) -> np.ndarray:
    n = params.n_sites
    z = z_values(n).astype(float)
    bonds = sum(z[i] * z[i + 1] for i in range(n - 1))
    if params.boundary == "periodic" and n > 2:
        bonds = bonds + z[n - 1] * z[0]
    m = z.sum(axis=0)
    diag = -params.ising_j * bonds - params.field_z * m
    diag -= params.global_g / math.sqrt(n) * 0.5 * (m ** 2 - n)
    diag.setflags(write=False)
    return diag


def diagonal_energies(params: ChainHamiltonianParams) -> np.ndarray:
    """Diagonal part of ``H``; the all-to-all term uses ``sum_{i<j} z_i z_j = (m**2 - N)/2``."""
    return _diagonal_cached(params)


def apply_hamiltonian(state: np.ndarray, params: ChainHamiltonianParams) -> np.ndarray:
    """``H @ state`` for a vector or a ``(2**N, k)`` block, in ``O(N 2**N)`` per column."""
    x = np.asarray(state)
    vec = x.ndim == 1
    if vec:
        x = x[:, None]
    n = params.n_sites
    if x.shape[0] != 2 ** n:
        raise ValueError("state dimension does not match the chain")
    k = x.shape[1]
    y = diagonal_energies(params)[:, None] * x
    if params.field_x != 0.0:
        xs = params.field_x * x
        for i in range(n):
            shape = (2 ** (n - 1 - i), 2, 2 ** i, k)
            y.reshape(shape)[...] -= xs.reshape(shape)[:, ::-1]
    return y[:, 0] if vec else y


def dense_hamiltonian(params: ChainHamiltonianParams) -> np.ndarray:
    """Explicit matrix, for small-N cross-checks."""
    if params.n_sites > 12:
        raise ValueError("dense Hamiltonian is limited to N <= 12")
    return apply_hamiltonian(np.eye(params.dim, dtype=complex), params)


@dataclass(frozen=True)
class SpinChainState:
    n_sites: int
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex)
        if a.shape != (2 ** self.n_sites,):
            raise ValueError("amplitude vector has the wrong length")
        if abs(np.linalg.norm(a) - 1.0) > 1e-12:
            raise ValueError("state is not normalized")
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def haar_random(cls, n_sites: int, rng: np.random.Generator) -> "SpinChainState":
        v = rng.standard_normal(2 ** n_sites) + 1j * rng.standard_normal(2 ** n_sites)
        return cls(n_sites, v / np.linalg.norm(v))

    @classmethod
    def product_y(cls, n_sites: int) -> "SpinChainState":
        """Every spin along +y: ``(|0> + i|1>)/sqrt 2`` on each site."""
        ones = ((np.arange(2 ** n_sites)[:, None] >> np.arange(n_sites)) & 1).sum(axis=1)
        return cls(n_sites, (1j ** ones) / 2 ** (n_sites / 2))

    def energy(self, params: ChainHamiltonianParams) -> float:
        return float(np.vdot(self.amplitudes, apply_hamiltonian(self.amplitudes, params)).real)


class KrylovBreakdownError(RuntimeError):
    pass


@dataclass
class KrylovPropagator:
    """Adaptive Lanczos evaluation of ``exp(-i H t) v`` for blocks of vectors.

    Each block column gets its own Krylov space; the step is the largest one
    for which every column's error estimate stays below ``tol``.
    """

    apply_h: Callable[[np.ndarray], np.ndarray]
    krylov_dim: int = KRYLOV_DIM
    tol: float = STEP_TOL
    min_step: float = 1e-8
    n_matvec: int = field(default=0, init=False)
    n_steps: int = field(default=0, init=False)

    def _basis(self, v: np.ndarray):
        m = self.krylov_dim
        dim, k = v.shape
        beta0 = np.linalg.norm(v, axis=0)
        basis = np.empty((m, dim, k), dtype=complex)
        alpha = np.zeros((m, k))
        beta = np.zeros((m, k))
        safe = np.where(beta0 > 0, beta0, 1.0)
        basis[0] = v / safe
        for j in range(m):
            w = self.apply_h(basis[j])
            self.n_matvec += k
            alpha[j] = np.einsum("ij,ij->j", basis[j].conj(), w).real
            w -= alpha[j] * basis[j]
            if j > 0:
                w -= beta[j - 1] * basis[j - 1]
            # one pass of local reorthogonalization keeps short recurrences clean
            w -= basis[j] * np.einsum("ij,ij->j", basis[j].conj(), w)
            if j > 0:
                w -= basis[j - 1] * np.einsum("ij,ij->j", basis[j - 1].conj(), w)
            beta[j] = np.linalg.norm(w, axis=0)
            if j + 1 < m:
                scale = np.where(beta[j] > 1e-13 * np.maximum(1.0, np.abs(alpha[j])), beta[j], np.inf)
                basis[j + 1] = w / scale
                beta[j] = np.where(np.isinf(scale), 0.0, beta[j])
        return basis, alpha, beta, beta0

    def _step_coefficients(self, alpha, beta, dt):
        """Krylov coefficients of ``exp(-i T dt) e1`` and the error estimates."""
        m, k = alpha.shape
        coeffs = np.empty((m, k), dtype=complex)
        err = np.empty(k)
        for c in range(k):
            off = beta[: m - 1, c]
            evals, evecs = eigh_tridiagonal(alpha[:, c], off)
            coeffs[:, c] = evecs @ (np.exp(-1j * evals * dt) * evecs[0])
            err[c] = abs(beta[m - 1, c] * coeffs[m - 1, c])
        return coeffs, err

    def evolve(self, v: np.ndarray, t: float) -> np.ndarray:
        """Return ``exp(-i H t) v``; ``t`` may be negative."""
        x = np.array(v, dtype=complex)
        vec = x.ndim == 1
        if vec:
            x = x[:, None]
        remaining = float(t)
        direction = 1.0 if remaining >= 0 else -1.0
        remaining = abs(remaining)
        while remaining > 0:
            basis, alpha, beta, beta0 = self._basis(x)
            dt = remaining
            while True:
                coeffs, err = self._step_coefficients(alpha, beta, direction * dt)
                if np.all(err * beta0 <= self.tol):
                    break
                dt *= 0.5
                if dt < self.min_step:
                    raise KrylovBreakdownError(f"no acceptable step above {self.min_step:g}")
            x = np.einsum("mdk,mk->dk", basis, coeffs) * beta0
            remaining -= dt
            if remaining < 1e-14 * max(1.0, abs(t)):
                remaining = 0.0
            self.n_steps += 1
        return x[:, 0] if vec else x


def evolve_state(state: SpinChainState | np.ndarray, params: ChainHamiltonianParams, t: float,
                 tol: float = STEP_TOL, krylov_dim: int = KRYLOV_DIM):
    """``exp(-i H t)`` applied to a state (or a raw vector/block)."""
    prop = KrylovPropagator(lambda x: apply_hamiltonian(x, params), krylov_dim, tol)
    if not isinstance(state, SpinChainState):
        return prop.evolve(state, t)
    out = prop.evolve(state.amplitudes, t)
    norm = np.linalg.norm(out)
    if abs(norm - 1.0) > 1e-9:
        raise KrylovBreakdownError(f"norm drifted to {norm:.12f}")
    # the drift is below 1e-9; rescale so the result satisfies the state invariant
    return SpinChainState(state.n_sites, out / norm)


# ---------------------------------------------------------------------------
# OTOC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OTOCResult:
    """``values[i, k] = F(sites[i], times[k])``; ``imag`` holds the discarded imaginary parts."""

    times: np.ndarray
    sites: np.ndarray
    values: np.ndarray
    imag: np.ndarray
    n_states: int


def otoc(
    params: ChainHamiltonianParams,
    r: int | Sequence[int],
    times: Sequence[float],
    seed: int,
    n_states: int = 1,
    exact: bool = False,
    tol: float = STEP_TOL,
) -> OTOCResult:
    """``F(r, t) = Re <Z_1(t) Z_r Z_1(t) Z_r>`` at infinite temperature.

    Sites are numbered ``1 .. N``.  The trace is replaced by an average over
    ``n_states`` Haar-random states; ``exact=True`` uses the full trace via
    dense diagonalization (small N only).
    """
    n = params.n_sites
    sites = np.atleast_1d(np.asarray(r, dtype=int))
    if np.any(sites < 1) or np.any(sites > n):
        raise ValueError(f"sites must lie in [1, {n}]")
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    z = z_values(n).astype(float)
    z1 = z[0]
    zr = z[sites - 1].T  # (dim, R)

    if exact:
        evals, evecs = np.linalg.eigh(dense_hamiltonian(params))
        vals = np.empty((sites.size, times.size), dtype=complex)
        z1e = evecs.conj().T @ (z1[:, None] * evecs)
        for k, t in enumerate(times):
            ph = np.exp(1j * evals * t)
            z1t = evecs @ ((ph[:, None] * z1e * ph.conj()[None, :]) @ evecs.conj().T)
            for i in range(sites.size):
                a = z1t * zr[None, :, i]  # Z1(t) Z_r
                vals[i, k] = np.einsum("ij,ji->", a, a) / params.dim
        return OTOCResult(times, sites, vals.real, vals.imag, 0)

    rng = np.random.default_rng(seed)
    prop = KrylovPropagator(lambda x: apply_hamiltonian(x, params), tol=tol)
    order = np.argsort(times)
    acc = np.zeros((sites.size, times.size), dtype=complex)
    for _ in range(n_states):
        psi = SpinChainState.haar_random(n, rng).amplitudes
        block = np.concatenate([psi[:, None], zr * psi[:, None]], axis=1)
        t_prev = 0.0
        for k in order:
            block = prop.evolve(block, times[k] - t_prev)
            t_prev = times[k]
            back = prop.evolve(z1[:, None] * block, -times[k])  # Z1(t) applied to psi and Z_r psi
            chi = back[:, 0]
            acc[:, k] += np.einsum("di,di->i", (zr * chi[:, None]).conj(), back[:, 1:])
    acc /= n_states
    return OTOCResult(times, sites, acc.real, acc.imag, n_states)


def crossing_time(times: np.ndarray, values: np.ndarray, level: float = 0.5) -> float:
    """First time ``values`` drops below ``level`` (linear interpolation); ``nan`` if never."""
    below = np.nonzero(values < level)[0]
    if below.size == 0:
        return math.nan
    k = below[0]
    if k == 0:
        return float(times[0])
    t0, t1, f0, f1 = times[k - 1], times[k], values[k - 1], values[k]
    return float(t0 + (f0 - level) * (t1 - t0) / (f0 - f1))


# ---------------------------------------------------------------------------
# entanglement
# ---------------------------------------------------------------------------

def half_chain_entropy(amplitudes: np.ndarray, n_sites: int) -> float:
    """Von Neumann entropy (natural log) of sites ``0 .. N/2 - 1``."""
    half = n_sites // 2
    mat = np.asarray(amplitudes).reshape(2 ** (n_sites - half), 2 ** half)
    p = np.linalg.svd(mat, compute_uv=False) ** 2
    p = p[p > 0] / p.sum()
    return float(-(p * np.log(p)).sum())


def entanglement_entropy_quench(params: ChainHamiltonianParams, times: Sequence[float],
                                tol: float = STEP_TOL) -> np.ndarray:
    """Half-cut entropy after a quench from the +y product state."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ValueError("times must be nonnegative and sorted")
    prop = KrylovPropagator(lambda x: apply_hamiltonian(x, params), tol=tol)
    psi = SpinChainState.product_y(params.n_sites).amplitudes
    out = np.empty(times.size)
    t_prev = 0.0
    for k, t in enumerate(times):
        psi = prop.evolve(psi, t - t_prev)
        t_prev = t
        out[k] = half_chain_entropy(psi, params.n_sites)
    return out


def early_growth_rate(times: np.ndarray, entropy: np.ndarray, window: tuple[float, float]) -> float:
    """Slope of a straight-line fit of ``S(t)`` on ``window``."""
    sel = (times >= window[0]) & (times <= window[1])
    if sel.sum() < 3:
        raise ValueError("fewer than three points inside the fit window")
    return float(np.polyfit(times[sel], entropy[sel], 1)[0])


# ---------------------------------------------------------------------------
# symmetry sectors and level statistics
# ---------------------------------------------------------------------------

class SectorMixingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SymmetrySector:
    """Basis of fixed momentum ``k`` and global spin-flip parity.

    ``reps`` are orbit representatives under translations and the flip,
    ``norms`` are the squared norms of the unnormalized symmetric sums.
    """

    n_sites: int
    momentum: int
    parity: int
    reps: np.ndarray
    norms: np.ndarray

    @property
    def dim(self) -> int:
        return self.reps.size

    def character(self, shift: np.ndarray, flip: np.ndarray) -> np.ndarray:
        return np.exp(-2j * np.pi * self.momentum * shift / self.n_sites) * np.where(flip, self.parity, 1)

    def basis_vectors(self) -> np.ndarray:
        """Columns are the normalized sector states in the full space."""
        n = self.n_sites
        out = np.zeros((2 ** n, self.dim), dtype=complex)
        for j in range(n):
            for f in (0, 1):
                img = _translate(self.reps, j, n) ^ ((2 ** n - 1) if f else 0)
                chi = self.character(np.full(self.dim, j), np.full(self.dim, bool(f)))
                np.add.at(out, (img, np.arange(self.dim)), chi)
        return out / np.sqrt(self.norms)[None, :]


def _translate(states: np.ndarray, shift: int, n: int) -> np.ndarray:
    """Move the spin on site ``i`` to site ``i + shift`` (mod N)."""
    shift %= n
    mask = 2 ** n - 1
    return ((states << shift) | (states >> (n - shift))) & mask


@lru_cache(maxsize=8)
def _orbit_tables(n: int):
    """Representative of each basis state and the group element that maps to it."""
    states = np.arange(2 ** n, dtype=np.int64)
    rep = states.copy()
    shift = np.zeros_like(states)
    flip = np.zeros(states.size, dtype=bool)
    stab = np.zeros(states.size, dtype=np.int64)
    for j in range(n):
        for f in (0, 1):
            img = _translate(states, j, n) ^ ((2 ** n - 1) if f else 0)
            better = img < rep
            rep = np.where(better, img, rep)
            shift = np.where(better, j, shift)
            flip = np.where(better, bool(f), flip)
            stab += img == states
    return rep, shift, flip, stab


def symmetry_sectors(n_sites: int) -> list[SymmetrySector]:
    """All ``(k, parity)`` sectors of a periodic chain; dimensions add up to ``2**N``."""
    n = n_sites
    rep, _, _, _ = _orbit_tables(n)
    reps = np.unique(rep)
    group = 2 * n
    sectors = []
    for k in range(n):
        for p in (1, -1):
            # norm = |G| * sum over the stabilizer of the character
            total = np.zeros(reps.size, dtype=complex)
            for j in range(n):
                for f in (0, 1):
                    img = _translate(reps, j, n) ^ ((2 ** n - 1) if f else 0)
                    chi = np.exp(-2j * np.pi * k * j / n) * (p if f else 1)
                    total += np.where(img == reps, chi, 0)
            norms = group * total.real
            keep = norms > 1e-9
            sectors.append(SymmetrySector(n, k, p, reps[keep], norms[keep]))
    return sectors


def sector_hamiltonian(sector: SymmetrySector, params: ChainHamiltonianParams) -> np.ndarray:
    """Dense Hamiltonian block; requires a periodic chain with no longitudinal field."""
    if params.boundary != "periodic" or params.field_z != 0.0:
        raise ValueError("(k, parity) sectors need a periodic chain with field_z = 0")
    n = params.n_sites
    if sector.n_sites != n:
        raise ValueError("sector and chain sizes differ")
    rep, shift, flip, _ = _orbit_tables(n)
    pos = np.full(2 ** n, -1)
    pos[sector.reps] = np.arange(sector.dim)
    h = np.diag(diagonal_energies(params)[sector.reps].astype(complex))
    for i in range(n):
        b = sector.reps ^ (1 << i)
        rb = rep[b]
        cols = np.arange(sector.dim)
        rows = pos[rb]
        ok = rows >= 0
        chi = sector.character(shift[b], flip[b])
        amp = -params.field_x * chi * np.sqrt(np.where(ok, sector.norms[np.maximum(rows, 0)], 0) / sector.norms)
        np.add.at(h, (rows[ok], cols[ok]), amp[ok])
    return h


def sector_leakage(sector: SymmetrySector, params: ChainHamiltonianParams, block: np.ndarray | None = None) -> float:
    """``max |H V - V H_sector|`` over the sector basis ``V``; zero if the sector is closed."""
    v = sector.basis_vectors()
    if block is None:
        block = sector_hamiltonian(sector, params)
    return float(np.abs(apply_hamiltonian(v, params) - v @ block).max())


def gap_ratios(energies: np.ndarray) -> np.ndarray:
    """``min(d_n, d_{n-1}) / max(d_n, d_{n-1})`` for consecutive spacings of sorted levels.

    Pairs of zero spacings (exact degeneracies) are assigned ``r = 0``.
    """
    e = np.sort(np.asarray(energies, dtype=float))
    d = np.diff(e)
    lo = np.minimum(d[1:], d[:-1])
    hi = np.maximum(d[1:], d[:-1])
    return np.divide(lo, hi, out=np.zeros_like(lo), where=hi > 0)


def poisson_spectrum(n_levels: int, rng: np.random.Generator) -> np.ndarray:
    """Levels with independent exponential spacings."""
    return np.cumsum(rng.exponential(size=n_levels))


def bootstrap_mean(values: np.ndarray, n_boot: int, rng: np.random.Generator) -> tuple[float, float]:
    values = np.asarray(values)
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    means = values[idx].mean(axis=1)
    return float(values.mean()), float(means.std(ddof=1))


@dataclass(frozen=True)
class LevelStatistics:
    mean_r: float
    stderr: float
    per_sector: dict
    n_ratios: int
    momenta: tuple


def level_statistics(
    params: ChainHamiltonianParams,
    min_dim: int = 50,
    momenta: Sequence[int] | None = None,
    n_boot: int = 1000,
    seed: int = 0,
    check_leakage: bool = False,
) -> LevelStatistics:
    """Mean gap ratio pooled over ``(k, parity)`` sectors of dimension at least ``min_dim``.

    By default only ``0 < k < N/2`` enter: ``k`` and ``-k`` carry identical
    spectra, and ``k = 0, N/2`` still contain the unresolved site-reversal
    symmetry, which would mix independent spectra.
    """
    n = params.n_sites
    if momenta is None:
        momenta = tuple(k for k in range(1, n) if 2 * k < n)
    per_sector = {}
    pooled = []
    for sec in symmetry_sectors(n):
        if sec.momentum not in momenta or sec.dim < min_dim:
            continue
        block = sector_hamiltonian(sec, params)
        herm = np.abs(block - block.conj().T).max()
        if herm > 1e-12:
            warnings.warn(f"sector (k={sec.momentum}, p={sec.parity}) is not Hermitian: {herm:.2e}",
                          SectorMixingWarning)
        if check_leakage:
            leak = sector_leakage(sec, params, block)
            if leak > 1e-10:
                warnings.warn(f"sector (k={sec.momentum}, p={sec.parity}) leaks: {leak:.2e}",
                              SectorMixingWarning)
        r = gap_ratios(np.linalg.eigvalsh(block))
        per_sector[(sec.momentum, sec.parity)] = float(r.mean())
        pooled.append(r)
    if not pooled:
        raise ValueError("no sector passed the dimension cutoff")
    allr = np.concatenate(pooled)
    mean, err = bootstrap_mean(allr, n_boot, np.random.default_rng(seed))
    return LevelStatistics(mean, err, per_sector, allr.size, tuple(momenta))
