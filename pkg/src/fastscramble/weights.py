"""Exact weight-space Markov chain for the Haar + global-ZZ random circuit.

Each time step applies independent single-site Haar unitaries followed by
``exp(-i g'/2 sum_{i<j} Z_i Z_j)`` with ``g' = g / N**a``.  The Haar-averaged
squared Pauli coefficients of a Heisenberg operator evolve linearly, and for
an operator that starts on site 1 they only depend on the total string weight
``w`` and on the weight ``w1`` carried by site 1.  This module builds the
resulting ``2N x 2N`` column-stochastic matrix and evolves the weight
distribution ``h_t(w, w1)``.

Layout of every length-``2N`` vector: index ``w1 * N + (w - w1)``, so block
``w1 = 0`` holds ``w = 0 .. N-1`` and block ``w1 = 1`` holds ``w = 1 .. N``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp, xlogy

LOG3 = math.log(3.0)
STOCHASTICITY_TOL = 1e-9


class StochasticityError(RuntimeError):
    """Raised when a built transition matrix is not column-stochastic."""

    def __init__(self, max_error: float, n_sites: int):
        super().__init__(
            f"transition matrix for N={n_sites} violates stochasticity: "
            f"max |column sum - 1| = {max_error:.3e} > {STOCHASTICITY_TOL:.0e}"
        )
        self.max_error = max_error


@dataclass(frozen=True)
class CircuitParams:
    """Size and coupling of the random circuit.

    The per-pair rotation angle is ``coupling / n_sites**coupling_exponent``.
    """

    n_sites: int
    coupling: float
    coupling_exponent: float = 0.5

    def __post_init__(self):
        if int(self.n_sites) != self.n_sites or self.n_sites < 2:
            raise ValueError(f"n_sites must be an integer >= 2, got {self.n_sites!r}")
        if self.coupling_exponent < 0:
            raise ValueError("coupling_exponent must be >= 0")
        if not math.isfinite(self.coupling):
            raise ValueError("coupling must be finite")

    @property
    def angle(self) -> float:
        """Per-pair angle g' entering the ZZ layer."""
        return self.coupling / self.n_sites ** self.coupling_exponent


def flat_index(n_sites: int, w: int, w1: int) -> int:
    return w1 * n_sites + (w - w1)


def weight_grid(n_sites: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(w, w1)`` arrays matching the flat layout."""
    w1 = np.repeat([0, 1], n_sites)
    w = np.concatenate([np.arange(n_sites), np.arange(1, n_sites + 1)])
    return w, w1


@dataclass(frozen=True)
class WeightDistribution:
    """Probability ``h_t(w, w1)`` of the evolved operator, flat layout."""

    n_sites: int
    values: np.ndarray
    time_step: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (2 * self.n_sites,):
            raise ValueError(
                f"expected {2 * self.n_sites} entries for N={self.n_sites}, got {values.shape}"
            )
        if np.any(values < 0):
            raise ValueError("weight distribution has negative entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def h(self, w: int, w1: int) -> float:
        if not (w1 in (0, 1) and w1 <= w <= self.n_sites - 1 + w1):
            return 0.0
        return float(self.values[flat_index(self.n_sites, w, w1)])

    def sector(self, w1: int) -> np.ndarray:
        """``h(w, w1)`` on ``w = 0 .. N`` (zero outside the sector's domain)."""
        n = self.n_sites
        out = np.zeros(n + 1)
        block = self.values[w1 * n:(w1 + 1) * n]
        out[w1:w1 + n] = block
        return out

    def marginal(self) -> np.ndarray:
        """Total-weight distribution ``h(w) = h(w,0) + h(w,1)`` for ``w = 0 .. N``."""
        return self.sector(0) + self.sector(1)

    @property
    def total(self) -> float:
        return float(self.values.sum())

    @property
    def mean_weight(self) -> float:
        w, _ = weight_grid(self.n_sites)
        return float(w @ self.values)


@dataclass(frozen=True)
class TransitionMatrix:
    params: CircuitParams
    entries: np.ndarray
    max_column_error: float = 0.0

    @property
    def n_sites(self) -> int:
        return self.params.n_sites

    def block(self, w1: int, w1_prime: int) -> np.ndarray:
        n = self.n_sites
        return self.entries[w1 * n:(w1 + 1) * n, w1_prime * n:(w1_prime + 1) * n]

    def element(self, w: int, w1: int, w_prime: int, w1_prime: int) -> float:
        n = self.n_sites
        return float(self.entries[flat_index(n, w, w1), flat_index(n, w_prime, w1_prime)])


@dataclass(frozen=True)
class WeightObservables:
    time_step: int
    mean_weight: float
    mean_commutator: float
    marginal: np.ndarray = field(repr=False)
    distribution: WeightDistribution | None = field(default=None, repr=False)

    @property
    def n_sites(self) -> int:
        return len(self.marginal) - 1

    @property
    def normalized_weight(self) -> float:
        return self.mean_weight / self.n_sites

    @property
    def commutator_large_n(self) -> float:
        return 4.0 * self.mean_weight / (3.0 * self.n_sites)


# ---------------------------------------------------------------------------
# binomials and the W kernel
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def log_binomial_table(n_max: int) -> np.ndarray:
    """``table[n, k] = log C(n, k)`` from exact integers; ``-inf`` where ``k > n``."""
    table = np.full((n_max + 1, n_max + 1), -np.inf)
    row = [1]
    for n in range(n_max + 1):
        table[n, : n + 1] = [math.log(c) for c in row]
        row = [1] + [row[i] + row[i + 1] for i in range(len(row) - 1)] + [1]
    table.setflags(write=False)
    return table


def _check_wvv(w: int, w_prime: int, v: int, n_sites: int):
    for name, x in (("w", w), ("w_prime", w_prime), ("v", v)):
        if int(x) != x or x < 0:
            raise ValueError(f"{name} must be a nonnegative integer, got {x!r}")
    if v > min(w, w_prime):
        raise ValueError(f"overlap v={v} exceeds min(w, w')={min(w, w_prime)}")
    if max(w, w_prime) > n_sites:
        raise ValueError(f"weights must not exceed N={n_sites}")
    if w + w_prime - v > n_sites:
        raise ValueError(f"union of supports w+w'-v={w + w_prime - v} exceeds N={n_sites}")


def log_w_matrix_element(w: int, w_prime: int, v: int, params: CircuitParams) -> float:
    """Natural log of :func:`w_matrix_element`, summed term by term."""
    n = params.n_sites
    _check_wvv(w, w_prime, v, n)
    g = params.angle
    d = w + w_prime - 2 * v
    lb = log_binomial_table(n)
    terms = []
    for k in range(v + 1):
        for l in range(k + 1):
            j = 2 * l - k
            if j == 0:
                # explicit diagonal term: C(k, k/2) when the supports coincide
                if d == 0:
                    terms.append(lb[v, k] + lb[k, k // 2])
                continue
            c2 = math.cos(j * g) ** 2
            s2 = math.sin(j * g) ** 2
            terms.append(lb[v, k] + lb[k, l] + xlogy(n - k - d, c2) + xlogy(d, s2))
    if not terms:
        return -math.inf
    return float(logsumexp(terms)) - (w + w_prime) * LOG3


def w_matrix_element(w: int, w_prime: int, v: int, params: CircuitParams) -> float:
    """Haar-averaged transition probability between two Pauli strings.

    Parameters
    ----------
    w, w_prime : int
        Weights of the target and source strings.
    v : int
        Number of sites where both strings are non-identity.
    params : CircuitParams

    Returns
    -------
    float
        ``W(w, w', v)``, accumulated in log space so that the binomial and
        ``3**-(w+w')`` factors cannot under- or overflow.
    """
    return math.exp(log_w_matrix_element(w, w_prime, v, params))


def w_matrix_element_small_g(w: int, w_prime: int, v: int, params: CircuitParams) -> float:
    """Leading-order (``g**2``) expansion of :func:`w_matrix_element`.

    Only channels with ``w + w' - 2v`` equal to 0 or 1 survive at this order.
    """
    n = params.n_sites
    _check_wvv(w, w_prime, v, n)
    # the expansion is written in terms of g with g' = g/sqrt(N)
    g2 = params.angle ** 2 * n
    d = w + w_prime - 2 * v
    base = 3.0 ** -(w + w_prime - v)
    if d == 0:
        return base * (1.0 + g2 * 2 * v / (9 * n) * (1 - 3 * n + 2 * v))
    if d == 1:
        return base * g2 * 2 * v / (3 * n)
    return 0.0


def _log_overlap_sums(params: CircuitParams) -> np.ndarray:
    """Table ``L[v, d] = log sum_k C(v,k) T(k,d)`` so that ``log W = L[v,d] - (w+w') log 3``.

    ``T(k, d)`` is the inner sum over ``l``; entries with ``v + d > N`` are ``-inf``.
    """
    n = params.n_sites
    g = params.angle
    lb = log_binomial_table(n)
    k = np.arange(n + 1)[:, None]
    j = np.arange(1, n + 1)[None, :]
    c2 = np.cos(j * g) ** 2
    s2 = np.sin(j * g) ** 2
    # +j and -j contribute equally; l = (k + j)/2 must be an integer
    valid = (j <= k) & ((k - j) % 2 == 0)
    lbin = np.where(valid, lb[k, np.clip((k + j) // 2, 0, n)], -np.inf) + math.log(2.0)

    log_t = np.full((n + 1, n + 1), -np.inf)  # [k, d]
    even = (np.arange(n + 1) % 2 == 0)
    kk = np.arange(n + 1)
    for d in range(n + 1):
        kmax = n - d
        rows = slice(0, kmax + 1)
        expo = (n - k[rows] - d).astype(float)
        with np.errstate(divide="ignore"):
            terms = lbin[rows] + xlogy(expo, c2) + xlogy(float(d), s2)
        terms = np.where(valid[rows], terms, -np.inf)
        col = logsumexp(terms, axis=1)
        if d == 0:
            diag = np.where(even[rows], lb[kk[rows], kk[rows] // 2], -np.inf)
            col = np.logaddexp(col, diag)
        log_t[rows, d] = col

    out = np.full((n + 1, n + 1), -np.inf)  # [v, d]
    for d in range(n + 1):
        vmax = n - d
        block = lb[: vmax + 1, : vmax + 1] + log_t[None, : vmax + 1, d]
        out[: vmax + 1, d] = logsumexp(block, axis=1)
    return out


def _sum_exp_rows(log_terms: np.ndarray, shift: float) -> np.ndarray:
    """``exp(shift) * sum(exp(log_terms), axis=1)`` evaluated stably."""
    top = log_terms.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    total = np.exp(log_terms - safe[:, None]).sum(axis=1)
    return total * np.exp(safe + shift)


def build_transition_matrix(params: CircuitParams, *, check: bool = True) -> TransitionMatrix:
    """Assemble the ``2N x 2N`` weight-space transition matrix.

    Every entry is a sum of nonnegative terms evaluated in log space.  With
    ``check`` (default) a :class:`StochasticityError` is raised if any column
    sum deviates from one by more than ``1e-9``.
    """
    n = params.n_sites
    lb = log_binomial_table(n)
    log_g = _log_overlap_sums(params)
    r = np.zeros((2 * n, 2 * n))
    for w1 in (0, 1):
        w = np.arange(w1, n + w1)[:, None]
        for w1p in (0, 1):
            for wp in range(w1p, n + w1p):
                m = np.arange(wp - w1p + 1)[None, :]
                v = m + w1 * w1p
                d = w + wp - 2 * v
                ok = (m <= w - w1) & (m >= w + wp - n + 1 - w1 - w1p) & (d >= 0)
                a = w - w1 - m
                terms = (
                    lb[wp - w1p, m]
                    + lb[n - 1 - wp + w1p, np.where(ok, a, 0)]
                    + log_g[v, np.where(ok, d, 0)]
                )
                terms[~ok] = -np.inf
                r[w1 * n:(w1 + 1) * n, flat_index(n, wp, w1p)] = _sum_exp_rows(terms, -wp * LOG3)
    err = float(np.max(np.abs(r.sum(axis=0) - 1.0)))
    if check and err > STOCHASTICITY_TOL:
        raise StochasticityError(err, n)
    r.setflags(write=False)
    return TransitionMatrix(params=params, entries=r, max_column_error=err)


# ---------------------------------------------------------------------------
# evolution and observables
# ---------------------------------------------------------------------------

def initial_distribution(n_sites: int) -> WeightDistribution:
    """Point mass at ``(w, w1) = (1, 1)``: a single-site operator on site 1."""
    if n_sites < 2:
        raise ValueError("n_sites must be >= 2")
    values = np.zeros(2 * n_sites)
    values[flat_index(n_sites, 1, 1)] = 1.0
    return WeightDistribution(n_sites, values, 0)


def step(dist: WeightDistribution, matrix: TransitionMatrix) -> WeightDistribution:
    if dist.n_sites != matrix.n_sites:
        raise ValueError(f"distribution has N={dist.n_sites}, matrix has N={matrix.n_sites}")
    values = matrix.entries @ dist.values
    # roundoff can leave -0.0 or ~-1e-300; entries are sums of nonnegative terms
    np.maximum(values, 0.0, out=values)
    return WeightDistribution(dist.n_sites, values, dist.time_step + 1)


def mean_commutator(dist: WeightDistribution, *, exact: bool = True) -> float:
    """Circuit-averaged squared commutator between site 1 and any other site.

    ``exact`` uses the finite-N relation through ``h(w)`` and ``h(w,0)``;
    otherwise the large-N form ``4<w>/(3N)`` is returned.
    """
    n = dist.n_sites
    if not exact:
        return 4.0 * dist.mean_weight / (3.0 * n)
    hw = dist.marginal()
    h0 = dist.sector(0)
    w = np.arange(n + 1)
    return float(4.0 / (3.0 * (n - 1)) * np.sum(((w - 1) * hw + h0)[1:]))


def observe(dist: WeightDistribution, keep_distribution: bool = False) -> WeightObservables:
    return WeightObservables(
        time_step=dist.time_step,
        mean_weight=dist.mean_weight,
        mean_commutator=mean_commutator(dist),
        marginal=dist.marginal(),
        distribution=dist if keep_distribution else None,
    )


def evolve(
    dist: WeightDistribution,
    matrix: TransitionMatrix,
    steps: int,
    checkpoints: Iterable[int] = (),
) -> list[WeightObservables]:
    """Apply ``steps`` transitions and record observables after each one.

    The returned list has ``steps + 1`` entries starting with ``dist`` itself.
    Time steps listed in ``checkpoints`` also keep the full distribution.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    keep = set(int(c) for c in checkpoints)
    out = [observe(dist, dist.time_step in keep)]
    for _ in range(steps):
        dist = step(dist, matrix)
        out.append(observe(dist, dist.time_step in keep))
    return out


def scrambling_time(
    params: CircuitParams,
    threshold: float = 0.5,
    max_steps: int = 1_000_000,
    matrix: TransitionMatrix | None = None,
) -> float:
    """Steps until the averaged squared commutator first reaches ``threshold``.

    The crossing is linearly interpolated between consecutive integer steps.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if matrix is None:
        matrix = build_transition_matrix(params)
    dist = initial_distribution(params.n_sites)
    prev = mean_commutator(dist)
    for t in range(1, max_steps + 1):
        dist = step(dist, matrix)
        cur = mean_commutator(dist)
        if cur >= threshold:
            return t - 1 + (threshold - prev) / (cur - prev)
        prev = cur
    raise RuntimeError(f"commutator did not reach {threshold} within {max_steps} steps")


def one_step_distribution_analytic(params: CircuitParams) -> WeightDistribution:
    """Closed-form ``h_1(w, w1)`` after a single step from the initial point mass.

    Valid for any per-pair angle.  ``h_1(w, 0) = 0`` and
    ``h_1(w, 1) = C(N-1, w-1)/3 * (delta_{w,1} + 2 cos(g')**(2(N-w)) sin(g')**(2(w-1)))``.
    """
    n = params.n_sites
    g = params.angle
    c2, s2 = math.cos(g) ** 2, math.sin(g) ** 2
    values = np.zeros(2 * n)
    for w in range(1, n + 1):
        spread = 2.0 * math.comb(n - 1, w - 1) * c2 ** (n - w) * s2 ** (w - 1)
        values[flat_index(n, w, 1)] = ((w == 1) + spread) / 3.0
    return WeightDistribution(n, values, 1)


def one_step_mean_weight(params: CircuitParams) -> float:
    g = params.angle
    return 1.0 / 3.0 + 2.0 / 3.0 * math.cos(g) ** 2 + 2.0 / 3.0 * params.n_sites * math.sin(g) ** 2


def uniform_string_distribution(n_sites: int) -> WeightDistribution:
    """Every non-identity Pauli string equally likely (the long-time limit)."""
    w, w1 = weight_grid(n_sites)
    lb = log_binomial_table(n_sites)
    log_count = w * LOG3 + lb[n_sites - 1, w - w1]
    # log(4**N - 1) without overflow
    log_total = n_sites * math.log(4.0) + math.log1p(-(4.0 ** -n_sites))
    values = np.exp(log_count - log_total)
    values[flat_index(n_sites, 0, 0)] = 0.0
    return WeightDistribution(n_sites, values, 0)


def fit_growth_rate(times: Sequence[float], mean_weights: Sequence[float],
                    window: tuple[float, float]) -> tuple[float, float]:
    """Least-squares fit of ``log <w> = log A + rate * t`` restricted to ``window``.

    Returns ``(rate, A)``.
    """
    t = np.asarray(times, dtype=float)
    mw = np.asarray(mean_weights, dtype=float)
    sel = (mw >= window[0]) & (mw <= window[1])
    if sel.sum() < 3:
        raise ValueError("fewer than three points inside the fit window")
    rate, log_a = np.polyfit(t[sel], np.log(mw[sel]), 1)
    return float(rate), float(math.exp(log_a))
