import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from fastscramble.weights import (
    CircuitParams,
    StochasticityError,
    WeightDistribution,
    build_transition_matrix,
    evolve,
    flat_index,
    initial_distribution,
    log_w_matrix_element,
    mean_commutator,
    one_step_distribution_analytic,
    one_step_mean_weight,
    scrambling_time,
    step,
    uniform_string_distribution,
    w_matrix_element,
    w_matrix_element_small_g,
    weight_grid,
)


def w_oracle(w, wp, v, n, g, a=0.5, dps=50):
    """Plain double sum in extended precision with the 0**0 = 1 convention."""
    with mpmath.workdps(dps):
        gp = mpmath.mpf(g) / mpmath.mpf(n) ** mpmath.mpf(a)
        d = w + wp - 2 * v
        total = mpmath.mpf(0)
        for k in range(v + 1):
            for l in range(k + 1):
                c2 = mpmath.cos((2 * l - k) * gp) ** 2
                s2 = mpmath.sin((2 * l - k) * gp) ** 2
                total += mpmath.binomial(v, k) * mpmath.binomial(k, l) * c2 ** (n - k - d) * s2 ** d
        return total / mpmath.mpf(3) ** (w + wp)


# --- W kernel ---------------------------------------------------------------

def test_w_matches_extended_precision_oracle():
    p = CircuitParams(4, 0.3, 0.5)
    assert w_matrix_element(2, 1, 1, p) == pytest.approx(float(w_oracle(2, 1, 1, 4, 0.3)), rel=1e-13)


@given(n=st.integers(2, 12), g=st.floats(0.0, 2.0), data=st.data())
def test_w_oracle_random_arguments(n, g, data):
    w = data.draw(st.integers(0, n))
    wp = data.draw(st.integers(0, n))
    v = data.draw(st.integers(max(0, w + wp - n), min(w, wp)))
    exact = float(w_oracle(w, wp, v, n, g))
    got = w_matrix_element(w, wp, v, CircuitParams(n, g))
    assert got == pytest.approx(exact, rel=1e-11, abs=1e-300)


@given(n=st.integers(2, 15), g=st.floats(-1.5, 1.5), data=st.data())
def test_w_symmetric_and_bounded(n, g, data):
    w = data.draw(st.integers(0, n))
    wp = data.draw(st.integers(0, n))
    v = data.draw(st.integers(max(0, w + wp - n), min(w, wp)))
    p = CircuitParams(n, g)
    a, b = w_matrix_element(w, wp, v, p), w_matrix_element(wp, w, v, p)
    assert a == pytest.approx(b, rel=1e-12, abs=0)
    assert 0.0 <= a <= 1.0


def test_w_identity_source():
    p = CircuitParams(10, 0.7)
    assert w_matrix_element(0, 0, 0, p) == 1.0
    for wp in range(1, 5):
        assert w_matrix_element(0, wp, 0, p) == 0.0


@pytest.mark.parametrize("w", [1, 2, 5])
def test_w_zero_coupling_diagonal(w):
    assert w_matrix_element(w, w, w, CircuitParams(8, 0.0)) == pytest.approx(3.0 ** -w, rel=1e-14)


def test_w_large_n_no_overflow():
    p = CircuitParams(400, 0.5)
    val = log_w_matrix_element(200, 199, 150, p)
    assert math.isfinite(val)


@pytest.mark.parametrize("args", [(1, 2, 2), (-1, 0, 0), (3, 3, 1.5)])
def test_w_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        w_matrix_element(*args, CircuitParams(5, 0.1))


def test_small_g_expansion():
    p = CircuitParams(100, 0.1)
    for w, wp, v in [(2, 1, 1), (1, 1, 1), (3, 3, 3), (3, 2, 2)]:
        exact = w_matrix_element(w, wp, v, p)
        approx = w_matrix_element_small_g(w, wp, v, p)
        # the w + w' - 2v = 1 channel is itself O(g^2), so compare absolutely
        assert abs(approx - exact) <= p.coupling ** 4
    assert w_matrix_element_small_g(3, 1, 1, p) == 0.0
    assert w_matrix_element_small_g(2, 2, 2, CircuitParams(10, 0.0)) == pytest.approx(1 / 9)


def test_small_g_error_scales_as_g4():
    errs = []
    gs = [0.05, 0.1, 0.2]
    for g in gs:
        p = CircuitParams(100, g)
        errs.append(abs(w_matrix_element_small_g(2, 1, 1, p) - w_matrix_element(2, 1, 1, p)))
    slope = np.polyfit(np.log(gs), np.log(errs), 1)[0]
    assert 3.5 < slope < 4.5


# --- transition matrix --------------------------------------------------------

@given(n=st.integers(2, 60), g=st.floats(-1.0, 1.0), a=st.sampled_from([0.0, 0.5, 1.0]))
def test_transition_matrix_stochastic_and_nonnegative(n, g, a):
    r = build_transition_matrix(CircuitParams(n, g, a))
    assert r.max_column_error <= 1e-9
    assert np.all(r.entries >= 0)


def test_zero_coupling_is_identity():
    for n in (2, 20, 101):
        r = build_transition_matrix(CircuitParams(n, 0.0))
        assert np.abs(r.entries - np.eye(2 * n)).max() <= 1e-12


def test_matrix_element_indexing():
    n = 7
    r = build_transition_matrix(CircuitParams(n, 0.4))
    assert r.element(3, 1, 2, 1) == r.entries[flat_index(n, 3, 1), flat_index(n, 2, 1)]
    assert r.block(1, 0).shape == (n, n)
    # a site-1 operator can't become the identity
    assert r.element(0, 0, 1, 1) == 0.0


def test_stochasticity_error_reports_column_error():
    err = StochasticityError(3e-8, 10)
    assert "3.000e-08" in str(err) and err.max_error == 3e-8


# --- distributions and evolution -----------------------------------------------

def test_initial_distribution():
    d = initial_distribution(5)
    assert d.h(1, 1) == 1.0 and d.total == 1.0 and d.mean_weight == 1.0
    assert d.values.sum() == d.h(1, 1)
    assert mean_commutator(d) == 0.0


def test_distribution_rejects_bad_shape_and_negative():
    with pytest.raises(ValueError):
        WeightDistribution(4, np.zeros(7))
    with pytest.raises(ValueError):
        WeightDistribution(2, np.array([0.5, 0.5, -0.1, 0.1]))


def test_step_dimension_mismatch():
    with pytest.raises(ValueError):
        step(initial_distribution(4), build_transition_matrix(CircuitParams(5, 0.1)))


@given(n=st.integers(2, 40), g=st.floats(-1, 1), steps=st.integers(1, 30))
def test_evolution_preserves_normalization(n, g, steps):
    r = build_transition_matrix(CircuitParams(n, g))
    d = initial_distribution(n)
    for _ in range(steps):
        d = step(d, r)
    assert abs(d.total - 1.0) <= 1e-10 * steps
    assert d.time_step == steps


def test_evolve_records_checkpoints():
    r = build_transition_matrix(CircuitParams(10, 0.3))
    obs = evolve(initial_distribution(10), r, 5, checkpoints=(0, 3))
    assert len(obs) == 6
    assert obs[3].distribution is not None and obs[2].distribution is None
    assert obs[0].distribution.mean_weight == 1.0
    assert evolve(initial_distribution(10), r, 0)[0].mean_weight == 1.0


@pytest.mark.parametrize("angle", [0.0, 0.2, 0.9])
def test_one_step_closed_form(angle):
    p = CircuitParams(8, angle, 0.0)
    h1 = step(initial_distribution(8), build_transition_matrix(p))
    an = one_step_distribution_analytic(p)
    assert np.abs(h1.values - an.values).max() <= 1e-10
    assert an.total == pytest.approx(1.0, abs=1e-12)
    assert an.mean_weight == pytest.approx(one_step_mean_weight(p), abs=1e-12)


def test_mean_commutator_uniform_limit():
    d = uniform_string_distribution(100)
    assert d.mean_weight == pytest.approx(75.0, rel=1e-10)
    assert abs(mean_commutator(d) - 1.0) < 0.02


@given(n=st.integers(3, 40), g=st.floats(0.05, 1.0), steps=st.integers(0, 50))
def test_large_n_commutator_within_one_over_n(n, g, steps):
    d = initial_distribution(n)
    r = build_transition_matrix(CircuitParams(n, g))
    for _ in range(steps):
        d = step(d, r)
    gap = abs(mean_commutator(d) - mean_commutator(d, exact=False))
    assert gap <= 4.0 / (3.0 * (n - 1)) + 1e-12


def test_sector_decoupling_at_early_times():
    n, g = 100, 0.1
    r = build_transition_matrix(CircuitParams(n, g))
    d = initial_distribution(n)
    while d.mean_weight < n / 10:
        assert d.sector(0).sum() < 0.05
        d = step(d, r)


def test_weight_grid_layout():
    w, w1 = weight_grid(3)
    assert w.tolist() == [0, 1, 2, 1, 2, 3]
    assert w1.tolist() == [0, 0, 0, 1, 1, 1]


def test_scrambling_time_threshold_limits():
    p = CircuitParams(50, 0.1)
    assert scrambling_time(p, threshold=1e-9) < 1.0
    with pytest.raises(ValueError):
        scrambling_time(p, threshold=1.5)
    assert scrambling_time(p, 0.3) < scrambling_time(p, 0.5)
