import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from fastscramble.circuit import pauli_string
from fastscramble.spin_chain import (
    ChainHamiltonianParams,
    KrylovPropagator,
    SpinChainState,
    apply_hamiltonian,
    crossing_time,
    dense_hamiltonian,
    early_growth_rate,
    entanglement_entropy_quench,
    gap_ratios,
    half_chain_entropy,
    level_statistics,
    otoc,
    poisson_spectrum,
    sector_hamiltonian,
    sector_leakage,
    symmetry_sectors,
    evolve_state,
)


def kron_hamiltonian(p: ChainHamiltonianParams) -> np.ndarray:
    """Term-by-term construction from Pauli strings."""
    n = p.n_sites
    bonds = [(i, i + 1) for i in range(n - 1)]
    if p.boundary == "periodic" and n > 2:
        bonds.append((n - 1, 0))
    h = sum(-p.ising_j * pauli_string({i: "Z", j: "Z"}, n) for i, j in bonds)
    for i in range(n):
        h = h - p.field_x * pauli_string({i: "X"}, n) - p.field_z * pauli_string({i: "Z"}, n)
    for i in range(n):
        for j in range(i + 1, n):
            h = h - p.global_g / math.sqrt(n) * pauli_string({i: "Z", j: "Z"}, n)
    return h


# --- Hamiltonian ----------------------------------------------------------------

@given(n=st.integers(2, 6), j=st.floats(-2, 2), hx=st.floats(-2, 2), hz=st.floats(-1, 1),
       g=st.floats(-1, 1), bc=st.sampled_from(["open", "periodic"]))
def test_hamiltonian_matches_pauli_construction(n, j, hx, hz, g, bc):
    p = ChainHamiltonianParams(n, j, hx, hz, g, bc)
    h = dense_hamiltonian(p)
    assert np.abs(h - kron_hamiltonian(p)).max() < 1e-12
    assert np.abs(h - h.conj().T).max() < 1e-12


def test_block_application_matches_columns():
    p = ChainHamiltonianParams(5, global_g=0.4)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((32, 3)) + 1j * rng.standard_normal((32, 3))
    y = apply_hamiltonian(x, p)
    for k in range(3):
        assert np.allclose(y[:, k], apply_hamiltonian(x[:, k], p))
    with pytest.raises(ValueError):
        apply_hamiltonian(np.ones(16), p)


@pytest.mark.parametrize("kw", [{"n_sites": 1}, {"n_sites": 4, "boundary": "twisted"},
                                {"n_sites": 4, "field_x": math.inf}])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        ChainHamiltonianParams(**kw)


def test_dense_size_limit():
    with pytest.raises(ValueError):
        dense_hamiltonian(ChainHamiltonianParams(13))


# --- states and time evolution -------------------------------------------------------

def test_product_y_state():
    s = SpinChainState.product_y(3)
    y = pauli_string({1: "Y"}, 3)
    assert np.vdot(s.amplitudes, y @ s.amplitudes).real == pytest.approx(1.0)
    with pytest.raises(ValueError):
        SpinChainState(2, np.ones(4))


@pytest.mark.parametrize("t", [0.3, 2.0, -1.5])
def test_krylov_matches_dense_exponential(t):
    p = ChainHamiltonianParams(7, global_g=0.5, field_z=0.2)
    psi = SpinChainState.haar_random(7, np.random.default_rng(1))
    exact = expm(-1j * t * dense_hamiltonian(p)) @ psi.amplitudes
    got = evolve_state(psi, p, t).amplitudes
    assert np.abs(got - exact).max() < 1e-9


def test_evolution_round_trip_and_energy():
    p = ChainHamiltonianParams(9, global_g=0.3)
    psi = SpinChainState.haar_random(9, np.random.default_rng(2))
    out = evolve_state(psi, p, 3.0)
    assert out.energy(p) == pytest.approx(psi.energy(p), abs=1e-9)
    back = evolve_state(out, p, -3.0)
    assert np.abs(back.amplitudes - psi.amplitudes).max() < 1e-9


def test_krylov_block_evolution():
    p = ChainHamiltonianParams(6)
    h = dense_hamiltonian(p)
    prop = KrylovPropagator(lambda x: apply_hamiltonian(x, p))
    x = np.random.default_rng(3).standard_normal((64, 2)).astype(complex)
    assert np.abs(prop.evolve(x, 1.2) - expm(-1.2j * h) @ x).max() < 1e-9
    assert prop.n_matvec > 0


# --- OTOC ----------------------------------------------------------------------------

def test_otoc_time_zero_and_self_site():
    p = ChainHamiltonianParams(6)
    res = otoc(p, [1, 3, 6], [0.0], seed=0, exact=True)
    assert np.allclose(res.values[:, 0], 1.0)


def test_typical_state_matches_exact_trace():
    p = ChainHamiltonianParams(9, global_g=0.5)
    times = [0.0, 0.5, 1.5, 3.0]
    exact = otoc(p, [2, 5, 9], times, seed=0, exact=True)
    typ = otoc(p, [2, 5, 9], times, seed=4, n_states=2)
    # typicality error scales as 2**(-N/2) ~ 0.04
    assert np.abs(typ.values - exact.values).max() < 0.15
    assert np.abs(exact.imag).max() < 1e-10


def test_otoc_exact_against_direct_operator_product():
    p = ChainHamiltonianParams(4, global_g=0.7)
    h = dense_hamiltonian(p)
    u = expm(-1j * 0.8 * h)
    z1 = pauli_string({0: "Z"}, 4)
    z3 = pauli_string({2: "Z"}, 4)
    z1t = u.conj().T @ z1 @ u
    direct = np.trace(z1t @ z3 @ z1t @ z3).real / 16
    assert otoc(p, 3, [0.8], seed=0, exact=True).values[0, 0] == pytest.approx(direct, abs=1e-12)


def test_otoc_argument_checks():
    p = ChainHamiltonianParams(4)
    with pytest.raises(ValueError):
        otoc(p, 5, [1.0], seed=0)
    with pytest.raises(ValueError):
        otoc(p, 2, [-1.0], seed=0)


def test_crossing_time_interpolates():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    assert crossing_time(t, np.array([1.0, 0.8, 0.2, 0.0])) == pytest.approx(1.5)
    assert math.isnan(crossing_time(t, np.ones(4)))
    assert crossing_time(t, np.array([0.1, 0.0, 0.0, 0.0])) == 0.0


def test_light_cone_ordering_small_chain():
    p = ChainHamiltonianParams(8)
    times = np.arange(0, 6.01, 0.25)
    res = otoc(p, [2, 4, 6], times, seed=0, exact=True)
    tc = [crossing_time(times, v) for v in res.values]
    assert tc[0] < tc[1] < tc[2]


# --- entanglement ----------------------------------------------------------------------

def test_half_chain_entropy_limits():
    n = 6
    prod = np.zeros(2 ** n)
    prod[5] = 1.0
    assert half_chain_entropy(prod, n) == pytest.approx(0.0, abs=1e-12)
    # three Bell pairs across the cut: sites (0,3), (1,4), (2,5)
    bell = np.zeros(2 ** n)
    for b in range(8):
        bell[b | (b << 3)] = 1.0
    bell /= np.linalg.norm(bell)
    assert half_chain_entropy(bell, n) == pytest.approx(3 * math.log(2), abs=1e-12)


def test_random_state_near_page_value():
    n = 10
    psi = SpinChainState.haar_random(n, np.random.default_rng(5)).amplitudes
    page = n / 2 * math.log(2) - 0.5
    assert half_chain_entropy(psi, n) == pytest.approx(page, abs=0.05)


def test_quench_entropy_bounds():
    p = ChainHamiltonianParams(8, global_g=1.0)
    times = np.linspace(0, 4, 17)
    s = entanglement_entropy_quench(p, times)
    assert s[0] == pytest.approx(0.0, abs=1e-12)
    assert np.all(s <= 4 * math.log(2) + 1e-12)
    assert early_growth_rate(times, s, (0.25, 1.0)) > 0
    with pytest.raises(ValueError):
        entanglement_entropy_quench(p, [1.0, 0.5])
    with pytest.raises(ValueError):
        early_growth_rate(times, s, (0.0, 0.2))


# --- symmetry sectors ------------------------------------------------------------------

@pytest.mark.parametrize("n", [4, 6, 7])
def test_sector_dimensions_sum_to_hilbert_space(n):
    assert sum(s.dim for s in symmetry_sectors(n)) == 2 ** n


@pytest.mark.parametrize("n", [6, 7])
def test_sector_spectra_union_is_full_spectrum(n):
    p = ChainHamiltonianParams(n, global_g=0.6, boundary="periodic")
    full = np.linalg.eigvalsh(dense_hamiltonian(p))
    parts = []
    for sec in symmetry_sectors(n):
        block = sector_hamiltonian(sec, p)
        assert np.abs(block - block.conj().T).max() < 1e-12
        assert sector_leakage(sec, p, block) < 1e-10
        parts.append(np.linalg.eigvalsh(block))
    assert np.allclose(np.sort(np.concatenate(parts)), full, atol=1e-10)


def test_sector_hamiltonian_requires_symmetry():
    sec = symmetry_sectors(4)[0]
    with pytest.raises(ValueError):
        sector_hamiltonian(sec, ChainHamiltonianParams(4, boundary="open"))
    with pytest.raises(ValueError):
        sector_hamiltonian(sec, ChainHamiltonianParams(4, field_z=0.1, boundary="periodic"))
    with pytest.raises(ValueError):
        sector_hamiltonian(sec, ChainHamiltonianParams(5, boundary="periodic"))


# --- gap ratios --------------------------------------------------------------------------

def test_gap_ratio_values():
    assert np.allclose(gap_ratios([0.0, 1.0, 3.0, 4.0]), [0.5, 0.5])
    assert gap_ratios([0.0, 0.0, 0.0, 1.0]).tolist() == [0.0, 0.0]


def test_poisson_and_goe_reference_values():
    rng = np.random.default_rng(6)
    r = gap_ratios(poisson_spectrum(200000, rng)).mean()
    assert r == pytest.approx(2 * math.log(2) - 1, abs=0.005)
    a = rng.standard_normal((1500, 1500))
    e = np.linalg.eigvalsh(a + a.T)
    bulk = e[300:-300]
    assert gap_ratios(bulk).mean() == pytest.approx(0.5307, abs=0.02)


def test_level_statistics_chaotic_chain():
    p = ChainHamiltonianParams(12, global_g=0.5, boundary="periodic")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = level_statistics(p, n_boot=200, check_leakage=True)
    assert res.momenta == (1, 2, 3, 4, 5)
    assert res.mean_r == pytest.approx(0.53, abs=0.03)
    assert res.stderr < 0.01
    with pytest.raises(ValueError):
        level_statistics(p, min_dim=10 ** 6)
