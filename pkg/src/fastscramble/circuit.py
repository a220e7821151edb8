"""Brute-force simulation of the random circuit on small systems.

Operators are dense ``2**N x 2**N`` matrices.  Site ``i`` is bit ``i`` of the
computational index (site 0 is the least significant bit) and the initial
operator sits on site 0.  Pauli strings are indexed by ``s = sum_i p_i 4**i``
with ``p = 0, 1, 2, 3`` for ``I, X, Y, Z``.

One circuit step conjugates the operator first by a layer of independent
single-site Haar unitaries and then by the global ZZ layer.  Because a single
site unitary never changes which sites carry a non-identity Pauli, the binned
weight distribution produced this way is the same as for a Haar-ZZ-Haar step.
Quantities that resolve which Pauli sits on a site, such as a commutator with
a fixed probe, do need the trailing Haar layer and default to that convention.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .weights import CircuitParams, WeightDistribution, mean_commutator, weight_grid

MAX_SITES = 10

PAULI = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)

# forward map (r, c) -> p with coefficient tr(P_p^T ...)/2, inverse map p -> (r, c)
_TO_PAULI = np.einsum("pcr->prc", PAULI).reshape(4, 4) / 2.0
_FROM_PAULI = PAULI.reshape(4, 4).T


def _check_size(n_sites: int):
    if n_sites > MAX_SITES:
        raise ValueError(f"dense operator simulation is limited to N <= {MAX_SITES}")


def _to_site_pairs(ops: np.ndarray, n: int) -> np.ndarray:
    """(..., 2**n, 2**n) -> (..., 4, ..., 4) with axes ordered site n-1 .. 0."""
    lead = ops.shape[:-2]
    t = ops.reshape(lead + (2,) * (2 * n))
    k = len(lead)
    order = list(range(k))
    for i in range(n):
        order += [k + i, k + n + i]
    return t.transpose(order).reshape(lead + (4,) * n)


def _from_site_pairs(t: np.ndarray, n: int) -> np.ndarray:
    lead = t.shape[:-n]
    k = len(lead)
    t = t.reshape(lead + (2,) * (2 * n))
    order = list(range(k)) + [k + 2 * i for i in range(n)] + [k + 2 * i + 1 for i in range(n)]
    return t.transpose(order).reshape(lead + (2 ** n, 2 ** n))


def _apply_each_site(t: np.ndarray, mat: np.ndarray, n: int) -> np.ndarray:
    # Apply mat to the leading axis, then rotate it to the back; after n
    # rounds the batch axis has cycled from last to first.
    shape = t.shape
    x = t.reshape(-1, 4 ** n).T
    for _ in range(n):
        x = (mat @ x.reshape(4, -1)).T
    return x.reshape(shape)


def pauli_coefficients(ops: np.ndarray, n_sites: int) -> np.ndarray:
    """Coefficients ``a_S = tr(O S) / 2**N`` for every Pauli string.

    Works on a stack of operators (leading axes are kept) in ``O(N 4**N)``
    per operator by transforming one site at a time.
    """
    t = _apply_each_site(_to_site_pairs(np.asarray(ops, dtype=complex), n_sites), _TO_PAULI, n_sites)
    return t.reshape(t.shape[: t.ndim - n_sites] + (4 ** n_sites,))


def operator_from_coefficients(coeffs: np.ndarray, n_sites: int) -> np.ndarray:
    c = np.asarray(coeffs, dtype=complex)
    t = c.reshape(c.shape[:-1] + (4,) * n_sites)
    return _from_site_pairs(_apply_each_site(t, _FROM_PAULI, n_sites), n_sites)


def pauli_string(labels: str | dict[int, str], n_sites: int) -> np.ndarray:
    """Dense matrix of a Pauli string.

    ``labels`` is either a dict ``{site: 'X'}`` or a string whose character
    ``i`` is the Pauli on site ``i``.
    """
    if isinstance(labels, str):
        labels = dict(enumerate(labels))
    mats = [PAULI["IXYZ".index(labels.get(i, "I").upper())] for i in range(n_sites)]
    out = np.ones((1, 1), dtype=complex)
    for m in mats:  # site n-1 ends up most significant
        out = np.kron(m, out)
    return out


@lru_cache(maxsize=None)
def string_classes(n_sites: int) -> tuple[np.ndarray, np.ndarray]:
    """``(w, w1)`` of every Pauli string in index order; site 0 plays site 1."""
    p = (np.arange(4 ** n_sites)[:, None] // 4 ** np.arange(n_sites)[None, :]) % 4
    nonid = p != 0
    return nonid.sum(axis=1), nonid[:, 0].astype(int)


@lru_cache(maxsize=None)
def _binning_matrix(n_sites: int) -> np.ndarray:
    w, w1 = string_classes(n_sites)
    idx = w1 * n_sites + (w - w1)
    g = np.zeros((4 ** n_sites, 2 * n_sites))
    g[np.arange(4 ** n_sites), idx] = 1.0
    return g


def bin_weights(probabilities: np.ndarray, n_sites: int) -> np.ndarray:
    """Sum string probabilities into the flat ``(w, w1)`` layout."""
    return np.asarray(probabilities) @ _binning_matrix(n_sites)


@dataclass(frozen=True)
class PauliOperatorState:
    n_sites: int
    matrix: np.ndarray

    def __post_init__(self):
        _check_size(self.n_sites)
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (2 ** self.n_sites,) * 2:
            raise ValueError("operator matrix has the wrong shape")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def single_site(cls, n_sites: int, pauli: str = "X", site: int = 0) -> "PauliOperatorState":
        return cls(n_sites, pauli_string({site: pauli}, n_sites))

    @property
    def coeffs(self) -> np.ndarray:
        return pauli_coefficients(self.matrix, self.n_sites).real

    @property
    def norm(self) -> float:
        """``sum_S a_S**2``, equal to ``tr(O^2)/2**N``."""
        return float(np.sum(self.coeffs ** 2))


@dataclass(frozen=True)
class HaarSample:
    """Single-site unitaries for ``n_layers`` Haar layers, shape ``(layers, N, 2, 2)``."""

    unitaries: np.ndarray
    seed: int | None = None

    @property
    def n_layers(self) -> int:
        return self.unitaries.shape[0]


def haar_unitary(rng: np.random.Generator, shape: tuple[int, ...] = (), dim: int = 2) -> np.ndarray:
    """Haar-distributed unitaries from the QR decomposition of complex Ginibre matrices."""
    z = (rng.standard_normal(shape + (dim, dim)) + 1j * rng.standard_normal(shape + (dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    return q * (d / np.abs(d))[..., None, :]


def realization_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for realization ``index``; does not depend on batching."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def sample_haar(n_sites: int, n_layers: int, seed: int) -> HaarSample:
    rng = np.random.default_rng(seed)
    return HaarSample(haar_unitary(rng, (n_layers, n_sites)), seed)


def zz_phases(n_sites: int, angle: float) -> np.ndarray:
    """Diagonal of ``exp(-i angle/2 sum_{i<j} Z_i Z_j)``.

    Uses ``sum_{i<j} z_i z_j = (m**2 - N)/2`` with ``m`` the magnetization.
    """
    b = np.arange(2 ** n_sites)
    ones = np.array([bin(x).count("1") for x in b])
    m = n_sites - 2 * ones
    return np.exp(-0.5j * angle * (m ** 2 - n_sites) / 2.0)


def _layer_unitary(us: np.ndarray) -> np.ndarray:
    """Kronecker product over the site axis (second to last pair of axes)."""
    n = us.shape[-3]
    out = us[..., 0, :, :]
    for i in range(1, n):
        u = us[..., i, :, :]
        out = np.einsum("...ab,...cd->...acbd", u, out).reshape(
            u.shape[:-2] + (2 * out.shape[-2], 2 * out.shape[-1])
        )
    return out


def _conjugate(ops: np.ndarray, layers: np.ndarray, phases: np.ndarray,
               convention: str) -> np.ndarray:
    """One circuit step on a stack of operators; ``layers`` is (..., L, N, 2, 2)."""
    u = _layer_unitary(layers[..., 0, :, :, :])
    ops = np.swapaxes(u.conj(), -1, -2) @ ops @ u
    ops = phases.conj()[:, None] * ops * phases[None, :]
    if convention == "haar-zz-haar":
        u = _layer_unitary(layers[..., 1, :, :, :])
        ops = np.swapaxes(u.conj(), -1, -2) @ ops @ u
    return ops


def _layers_per_step(convention: str) -> int:
    if convention == "haar-zz":
        return 1
    if convention == "haar-zz-haar":
        return 2
    raise ValueError(f"unknown circuit convention {convention!r}")


def apply_circuit_step(op: PauliOperatorState, sample: HaarSample, params: CircuitParams,
                       convention: str = "haar-zz") -> PauliOperatorState:
    """Heisenberg update ``O -> U^dag O U`` for one circuit step.

    The Haar layer(s) come from ``sample``; the ZZ layer is applied as a
    diagonal phase and never built as a dense matrix.
    """
    if op.n_sites != params.n_sites:
        raise ValueError("operator and circuit sizes differ")
    need = _layers_per_step(convention)
    if sample.n_layers < need:
        raise ValueError(f"convention {convention!r} needs {need} Haar layers per step")
    phases = zz_phases(params.n_sites, params.angle)
    return PauliOperatorState(op.n_sites, _conjugate(op.matrix, sample.unitaries, phases, convention))


def pauli_spectrum(op: PauliOperatorState) -> WeightDistribution:
    """Bin ``a_S**2`` by total weight and weight on site 0.

    The result is normalized only if ``tr(O^2) = 2**N``.
    """
    probs = op.coeffs ** 2
    return WeightDistribution(op.n_sites, bin_weights(probs, op.n_sites))


@dataclass(frozen=True)
class MonteCarloWeights:
    """Ensemble-averaged ``h_t(w, w1)`` for ``t = 0 .. steps`` with standard errors."""

    n_sites: int
    mean: np.ndarray
    stderr: np.ndarray
    n_realizations: int
    seed: int

    def distribution(self, t: int) -> WeightDistribution:
        return WeightDistribution(self.n_sites, np.maximum(self.mean[t], 0.0), t)

    def commutator(self, t: int) -> float:
        return mean_commutator(self.distribution(t))


def _run_realizations(params, steps, n_realizations, seed, convention, batch, observe):
    n = params.n_sites
    _check_size(n)
    layers = _layers_per_step(convention)
    phases = zz_phases(n, params.angle)
    x1 = pauli_string({0: "X"}, n)
    results = []
    for start in range(0, n_realizations, batch):
        idx = range(start, min(start + batch, n_realizations))
        us = np.stack([haar_unitary(realization_rng(seed, i), (steps, layers, n)) for i in idx])
        ops = np.broadcast_to(x1, (len(idx),) + x1.shape).copy()
        rows = [observe(ops)]
        for t in range(steps):
            ops = _conjugate(ops, us[:, t], phases, convention)
            rows.append(observe(ops))
        results.append(np.stack(rows, axis=1))
    return np.concatenate(results, axis=0)


def monte_carlo_weight_distribution(
    params: CircuitParams,
    steps: int,
    n_realizations: int,
    seed: int,
    convention: str = "haar-zz",
    batch: int = 512,
) -> MonteCarloWeights:
    """Average the binned Pauli spectrum of ``X`` on site 0 over circuit realizations.

    Realization ``i`` draws its unitaries from ``realization_rng(seed, i)``, so
    the output is fixed by ``seed`` irrespective of ``batch``.
    """
    n = params.n_sites

    def observe(ops):
        return bin_weights(np.abs(pauli_coefficients(ops, n)) ** 2, n)

    samples = _run_realizations(params, steps, n_realizations, seed, convention, batch, observe)
    mean = samples.mean(axis=0)
    stderr = samples.std(axis=0, ddof=1) / np.sqrt(n_realizations) if n_realizations > 1 \
        else np.full_like(mean, np.inf)
    return MonteCarloWeights(n, mean, stderr, n_realizations, seed)


def squared_commutator(op: np.ndarray, probe: np.ndarray) -> np.ndarray:
    """``-tr([O, V]^2) / (2 * 2**N)`` for a stack of operators ``O``."""
    k = op @ probe - probe @ op
    dim = op.shape[-1]
    return -np.einsum("...ij,...ji->...", k, k).real / (2.0 * dim)


def commutator_samples(
    params: CircuitParams,
    r: int,
    steps: int,
    n_realizations: int,
    seed: int,
    convention: str = "haar-zz-haar",
    batch: int = 512,
) -> np.ndarray:
    """Per-realization squared commutators, shape ``(n_realizations, steps + 1, 3)``.

    ``[..., 0]`` is the direct trace ``C(r, t)`` for ``W = X`` on site 1 and
    ``V = Y`` on site ``r`` (sites numbered ``1 .. N``).  ``[..., 1]`` is the
    weight-spectrum formula ``4 <w - w1> / (3 (N - 1))`` evaluated on the same
    operator.  The two agree only after averaging over circuits, and only
    when each step ends with a Haar layer, which makes ``X, Y, Z`` equally
    likely on every occupied site.  ``[..., 2]`` is the large-N form
    ``4 <w> / (3 N)`` on the same operator.
    """
    n = params.n_sites
    if not 1 <= r <= n:
        raise ValueError(f"r must lie in [1, {n}]")
    probe = pauli_string({r - 1: "Y"}, n)
    w, w1 = weight_grid(n)
    kernel = 4.0 * (w - w1) / (3.0 * (n - 1))
    large = 4.0 * w / (3.0 * n)

    def observe(ops):
        spec = bin_weights(np.abs(pauli_coefficients(ops, n)) ** 2, n)
        return np.stack([squared_commutator(ops, probe), spec @ kernel, spec @ large], axis=-1)

    return _run_realizations(params, steps, n_realizations, seed, convention, batch, observe)


def direct_squared_commutator(
    params: CircuitParams,
    r: int,
    t: int,
    n_realizations: int,
    seed: int,
    convention: str = "haar-zz-haar",
    batch: int = 512,
) -> tuple[float, float]:
    """Circuit average of the direct-trace ``C(r, t)``; returns ``(mean, standard error)``."""
    samples = commutator_samples(params, r, t, n_realizations, seed, convention, batch)[:, -1, 0]
    err = samples.std(ddof=1) / np.sqrt(n_realizations) if n_realizations > 1 else np.inf
    return float(samples.mean()), float(err)


# ---------------------------------------------------------------------------
# exact string-level transition matrix (no sampling)
# ---------------------------------------------------------------------------

# E over a single-site Haar unitary of T[S,A] T[S,A'] = delta_{AA'} * _HAAR_PAIR[S,A]
_HAAR_PAIR = np.array([[1, 0, 0, 0]] + [[0, 1 / 3, 1 / 3, 1 / 3]] * 3, dtype=float)


def _apply_site_map(mat: np.ndarray, site_map: np.ndarray, n: int, side: str) -> np.ndarray:
    """Multiply a 4**N x 4**N matrix by the N-fold tensor power of a 4x4 map."""
    dim = 4 ** n
    if side == "right":
        return _apply_site_map(mat.T, site_map.T, n, "left").T
    # act on the string index of the rows by moving it to the trailing axis
    return _apply_each_site(np.ascontiguousarray(mat.T), site_map, n).T.reshape(dim, dim)


def zz_transfer_matrix(params: CircuitParams) -> np.ndarray:
    """``T[A, B] = tr(A U^dag B U) / 2**N`` for the ZZ layer ``U``."""
    n = params.n_sites
    _check_size(n)
    phases = zz_phases(n, params.angle)
    dim = 4 ** n
    out = np.empty((dim, dim))
    chunk = max(1, 4096 // 2 ** n)
    eye = np.eye(dim)
    for start in range(0, dim, chunk):
        strings = operator_from_coefficients(eye[start:start + chunk], n)
        rotated = phases.conj()[:, None] * strings * phases[None, :]
        out[:, start:start + chunk] = pauli_coefficients(rotated, n).real.T
    return out


def string_transition_matrix(params: CircuitParams, convention: str = "haar-zz-haar") -> np.ndarray:
    """Exact Haar-averaged ``4**N x 4**N`` matrix acting on ``<a_S**2>``.

    Built from the ZZ transfer matrix and the second moment of a Haar
    rotation of the three non-identity Paulis; no Monte Carlo is involved.
    """
    n = params.n_sites
    t = zz_transfer_matrix(params)
    w = _apply_site_map(t * t, _HAAR_PAIR, n, "right")
    if convention == "haar-zz-haar":
        w = _apply_site_map(w, _HAAR_PAIR, n, "left")
    elif convention != "haar-zz":
        raise ValueError(f"unknown circuit convention {convention!r}")
    return w


def grouped_transition_matrix(params: CircuitParams, convention: str = "haar-zz-haar") -> np.ndarray:
    """Collapse the string-level matrix onto the flat ``(w, w1)`` layout.

    ``R[i, j] = sum_{S in i, S' in j} W[S, S'] / |j|``, which is exact when the
    source probabilities are uniform within each class.
    """
    n = params.n_sites
    w = string_transition_matrix(params, convention)
    g = _binning_matrix(n)
    return (g.T @ w @ g) / g.sum(axis=0)[None, :]
