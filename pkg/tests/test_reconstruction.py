import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppcat.model import ContractError, cat_atoms
from ppcat.oracle import cat_state_density, coherent_density, coherent_mixture
from ppcat.reconstruction import (
    FockDensityMatrix,
    TruncationWarning,
    kernel_fock,
    reconstruct_density,
    trace_distance,
    wigner,
)
from ppcat.sde import Ensemble

complexes = st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False)


def fock(n, cutoff):
    rho = np.zeros((cutoff + 1, cutoff + 1))
    rho[n, n] = 1.0
    return FockDensityMatrix(rho)


# ------------------------------------------------------------ kernel
def test_kernel_at_origin_is_vacuum():
    k = kernel_fock(0, 0, 4)
    np.testing.assert_array_equal(k.elements, fock(0, 4).elements)


@settings(max_examples=40)
@given(complexes)
def test_kernel_on_diagonal_is_coherent_projector(z):
    k = kernel_fock(z, np.conj(z), 30)
    np.testing.assert_allclose(k.elements, coherent_density(z, 30).elements, atol=1e-12)


@settings(max_examples=40)
@given(complexes, complexes)
def test_kernel_eigen_relations(a, b):
    # a L = alpha L and L a^dag = beta L hold on all rows/columns below the cutoff
    cutoff = 25
    k = kernel_fock(a, b, cutoff).elements
    lower = np.diag(np.sqrt(np.arange(1, cutoff + 1)), 1)
    np.testing.assert_allclose((lower @ k)[:-1], a * k[:-1], atol=1e-10)
    np.testing.assert_allclose((k @ lower.T)[:, :-1], b * k[:, :-1], atol=1e-10)


@settings(max_examples=40)
@given(complexes, complexes)
def test_kernel_trace_is_truncated_exponential(a, b):
    cutoff = 6
    x = a * b
    want = np.exp(-x) * sum(x ** m / math.factorial(m) for m in range(cutoff + 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        k = kernel_fock(a, b, cutoff, tail_tolerance=np.inf)
    assert abs(k.trace - want) < 1e-12 * max(1, abs(want))


def test_kernel_tail_warning():
    with pytest.warns(TruncationWarning):
        k = kernel_fock(3.0, 3.0, 4)
    assert k.warnings
    with warnings.catch_warnings():
        warnings.simplefilter("error", TruncationWarning)
        assert not kernel_fock(0.5, 0.5, 30).warnings


def test_kernel_clamps_huge_values():
    with pytest.warns(TruncationWarning):
        k = kernel_fock(-40.0, 40.0, 3)
    assert np.all(np.isfinite(k.elements))


def test_kernel_rejects_bad_cutoff():
    with pytest.raises(ContractError):
        kernel_fock(0, 0, -1)
    with pytest.raises(ContractError):
        kernel_fock(0, 0, 2.5)


# ------------------------------------------------------------ reconstruction
def exact_cat_ensemble(zeta, sign):
    """Four trajectories carrying the cat atoms with weights equal to their probabilities."""
    alphas, betas, probs, w = cat_atoms(zeta, sign)
    return Ensemble.from_arrays(alphas, betas, 1, weight=4 * probs * w)


@pytest.mark.parametrize("zeta,sign", [(1.2, 1), (1.2, -1), (0.8j, 1), (0.3 + 0.4j, -1)])
def test_cat_atoms_reconstruct_exact_cat(zeta, sign):
    cutoff = 30
    rho = reconstruct_density(exact_cat_ensemble(zeta, sign), cutoff)
    want = cat_state_density(zeta, sign, cutoff)
    np.testing.assert_allclose(rho.elements, want.elements, atol=1e-12)
    assert rho.hermiticity_deviation < 1e-12
    assert trace_distance(rho, want) < 1e-12


def test_sampled_cat_reconstruction_converges():
    zeta, sign = 1.5, 1
    alphas, betas, probs, w = cat_atoms(zeta, sign)
    rng = np.random.default_rng(5)
    idx = rng.choice(4, size=40000, p=probs)
    e = Ensemble.from_arrays(alphas[idx], betas[idx], 10)
    rho = reconstruct_density(e, 20)
    assert trace_distance(rho, cat_state_density(zeta, sign, 20)) < 0.05
    assert rho.parity() == pytest.approx(1.0, abs=0.05)
    # the parity of the mixture is ~exp(-2|zeta|^2); the cat keeps its fringes
    assert coherent_mixture(zeta, 20).parity() == pytest.approx(math.exp(-2 * zeta ** 2), abs=1e-9)


def test_weighted_flag_selects_weights():
    e = exact_cat_ensemble(1.0, -1)
    unw = reconstruct_density(e, 20, weighted=False)
    assert trace_distance(unw, cat_state_density(1.0, -1, 20)) > 0.1


def test_diverged_trajectories_excluded():
    e = Ensemble.from_arrays([0.5, 0.5, 9.0], [0.5, 0.5, 9.0], 1)
    e.diverged_step[2] = 10
    rho = reconstruct_density(e, 15)
    np.testing.assert_allclose(rho.elements, coherent_density(0.5, 15).elements, atol=1e-12)
    e.diverged_step[:] = 1
    with pytest.raises(ContractError):
        reconstruct_density(e, 5)


def test_single_site_momentum_equals_site():
    rng = np.random.default_rng(1)
    a = rng.normal(size=50) + 1j * rng.normal(size=50)
    b = rng.normal(size=50) + 1j * rng.normal(size=50)
    e = Ensemble.from_arrays(a, b, 5)
    np.testing.assert_allclose(reconstruct_density(e, 8, k=0.0).elements,
                               reconstruct_density(e, 8, site=0).elements, atol=1e-12)


def test_multimode_site_and_momentum_selection():
    n = 3
    c = 0.6
    e = Ensemble.from_arrays(np.full((6, n), c), np.full((6, n), c), 2)
    # a uniform coherent field puts sqrt(N) c into the dark mode and vacuum elsewhere
    dark = reconstruct_density(e, 12, k=0.0)
    np.testing.assert_allclose(dark.elements, coherent_density(math.sqrt(n) * c, 12).elements, atol=1e-12)
    other = reconstruct_density(e, 12, k=2 * np.pi / 3)
    np.testing.assert_allclose(other.elements, fock(0, 12).elements, atol=1e-12)
    with pytest.raises(ContractError):
        reconstruct_density(e, 12)
    with pytest.raises(ContractError):
        reconstruct_density(e, 12, site=0, k=0.0)
    with pytest.raises(ContractError):
        reconstruct_density(e, 12, site=n)


# ------------------------------------------------------------ trace distance and density matrices
def test_trace_distance_examples():
    assert trace_distance(fock(0, 3), fock(1, 3)) == pytest.approx(1.0)
    assert trace_distance(fock(2, 3), fock(2, 3)) == 0.0
    # zero padding across cutoffs
    assert trace_distance(fock(0, 2), fock(0, 5)) == pytest.approx(0.0, abs=1e-15)
    # pure states: sqrt(1 - |<a|b>|^2)
    a, b = coherent_density(0.7, 40), coherent_density(-0.7, 40)
    assert trace_distance(a, b) == pytest.approx(math.sqrt(1 - math.exp(-4 * 0.49)), rel=1e-10)


@settings(max_examples=30)
@given(complexes, complexes)
def test_trace_distance_is_a_metric_on_coherent_states(z1, z2):
    a, b = coherent_density(z1, 40), coherent_density(z2, 40)
    d = trace_distance(a, b)
    assert 0 <= d <= 1 + 1e-12
    assert d == pytest.approx(trace_distance(b, a), abs=1e-12)


def test_density_matrix_contract():
    with pytest.raises(ContractError):
        FockDensityMatrix(np.zeros((2, 3)))
    with pytest.raises(ContractError):
        FockDensityMatrix(np.eye(4), dims=(3,))
    with pytest.raises(ContractError):
        FockDensityMatrix(np.eye(4) / 4, dims=(2, 2)).parity()
    r = FockDensityMatrix(np.array([[0.5, 0.2j], [0.0, 0.5]]))
    h = r.hermitized()
    assert h.hermiticity_deviation == pytest.approx(0.2)
    np.testing.assert_allclose(h.elements, h.elements.conj().T)
    assert fock(3, 5).photon_number() == 3.0
    assert fock(3, 5).parity() == -1.0


# ------------------------------------------------------------ Wigner function
def test_vacuum_wigner():
    x = np.linspace(-4, 4, 161)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        w = wigner(fock(0, 40), x)
    assert w.at_origin() == pytest.approx(2 / np.pi, rel=1e-12)
    assert w.integral() == pytest.approx(1.0, abs=1e-6)
    xx, pp = np.meshgrid(x, x)
    np.testing.assert_allclose(w.values, 2 / np.pi * np.exp(-2 * (xx ** 2 + pp ** 2)), atol=1e-12)


def test_single_photon_wigner_negative():
    x = np.linspace(-2, 2, 5)
    w = wigner(fock(1, 6), x)
    assert w.at_origin() == pytest.approx(-2 / np.pi, rel=1e-12)


@pytest.mark.parametrize("sign", [1, -1])
def test_cat_wigner_fringes(sign):
    zeta = 1.5
    rho = cat_state_density(zeta, sign, 30)
    x = np.linspace(-4, 4, 121)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        w = wigner(rho, x)
    assert w.at_origin() == pytest.approx(sign * 2 / np.pi, rel=1e-9)
    assert w.integral() == pytest.approx(1.0, abs=1e-5)
    # interference fringes along p through the origin
    col = w.values[:, np.argmin(np.abs(x))]
    assert col.min() < -0.3 * 2 / np.pi
    # the mixture has none
    wm = wigner(coherent_mixture(zeta, 30), x)
    assert wm.values.min() > -1e-9


@settings(max_examples=30)
@given(complexes, st.sampled_from([1, -1]))
def test_wigner_origin_is_parity(z, sign):
    if sign == -1 and abs(z) < 0.2:
        z = 0.5
    rho = cat_state_density(z, sign, 40)
    w = wigner(rho, np.array([0.0]))
    assert w.at_origin() * np.pi / 2 == pytest.approx(rho.parity(), abs=1e-10)


def test_wigner_extent_warning():
    with pytest.warns(TruncationWarning):
        wigner(fock(0, 3), np.linspace(-5, 5, 11))
