import math
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppcat.model import ContractError, ModelParams
from ppcat.oracle import (
    LindbladSystem,
    TruncationError,
    cat_state_density,
    coherent_density,
    coherent_mixture,
    evolve_rho,
    initial_density,
    liouvillian_apply,
    observables_from_rho,
    oracle_series,
    steady_state,
)
from ppcat.reconstruction import FockDensityMatrix
from ppcat.sde import InitialState


def params(n=1, eps=1.0, k1=0.1, k2=0.5, gamma=0.0, phi=0.0, boundary="periodic"):
    return ModelParams(n_sites=n, epsilon=eps, kappa1=k1, kappa2=k2, gamma=gamma, phi=phi,
                       boundary=boundary)


def dense_lindbladian(p, cutoff):
    """Site-basis Lindbladian built directly from the operator definitions."""
    d = cutoff + 1
    a1 = np.diag(np.sqrt(np.arange(1, d)), 1).astype(complex)
    eye = np.eye(d)
    n = p.n_sites
    a = [reduce(np.kron, [a1 if i == j else eye for i in range(n)]) for j in range(n)]
    theta = 2 * p.phi
    h = sum(p.epsilon * np.exp(-1j * theta * (j + 1)) * a[j].conj().T @ a[j].conj().T
            + np.conj(p.epsilon * np.exp(-1j * theta * (j + 1))) * a[j] @ a[j] for j in range(n))
    jumps = [math.sqrt(p.kappa1) * x for x in a] + [math.sqrt(p.kappa2) * x @ x for x in a]
    if p.gamma > 0 and n > 1:
        pairs = [(j, (j + 1) % n) for j in range(n)] if p.boundary.value == "periodic" \
            else [(j, j + 1) for j in range(n - 1)]
        jumps += [math.sqrt(p.gamma) * (a[j] - np.exp(1j * p.phi) * a[k]) for j, k in pairs]

    def apply(rho):
        out = -1j * (h @ rho - rho @ h)
        for o in jumps:
            od = o.conj().T
            out += o @ rho @ od - 0.5 * (od @ o @ rho + rho @ od @ o)
        return out
    return apply


def random_density(dim, rng):
    x = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = x @ x.conj().T
    return rho / np.trace(rho)


# ------------------------------------------------------------ Liouvillian
@pytest.mark.parametrize("p,cutoff", [
    (params(1, eps=0.7 + 0.2j, k1=0.3, k2=0.4), 6),
    (params(2, eps=0.5, k1=0.1, k2=0.2, gamma=0.7, phi=0.4, boundary="open"), 3),
    (params(3, eps=0.5, k1=0.2, k2=0.3, gamma=1.1, phi=np.pi / 3), 2),
    (params(3, eps=0.4, k1=0.0, k2=0.3, gamma=0.8, phi=0.0, boundary="open"), 2),
])
def test_liouvillian_matches_direct_construction(p, cutoff):
    rng = np.random.default_rng(0)
    system = LindbladSystem(p, cutoff)
    rho = random_density(system.dim, rng)
    np.testing.assert_allclose(liouvillian_apply(system, rho), dense_lindbladian(p, cutoff)(rho),
                               atol=1e-12)
    # the column-stacked superoperator is the same map
    vec = system.superoperator() @ rho.ravel(order="F")
    np.testing.assert_allclose(vec.reshape(system.dim, system.dim, order="F"),
                               liouvillian_apply(system, rho), atol=1e-12)


@settings(max_examples=20)
@given(st.floats(0, 2), st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_liouvillian_is_traceless_and_hermitian(eps, k1, k2, seed):
    system = LindbladSystem(params(1, eps=eps, k1=k1, k2=k2), 7)
    rho = random_density(system.dim, np.random.default_rng(seed))
    out = liouvillian_apply(system, rho)
    assert abs(np.trace(out)) < 1e-11
    np.testing.assert_allclose(out, out.conj().T, atol=1e-11)


def test_vacuum_first_derivative():
    # d rho/dt at vacuum: only the drive acts, creating |2><0| coherences
    eps = 0.8
    system = LindbladSystem(params(1, eps=eps, k1=0.3, k2=0.5), 4)
    out = liouvillian_apply(system, system.vacuum())
    assert out[2, 0] == pytest.approx(-1j * eps * math.sqrt(2))
    assert out[0, 2] == pytest.approx(1j * eps * math.sqrt(2))
    out[2, 0] = out[0, 2] = 0
    assert np.max(np.abs(out)) < 1e-15


def test_system_contract():
    with pytest.raises(ContractError):
        LindbladSystem(params(1), 5, basis="position")
    with pytest.raises(ContractError):
        LindbladSystem(params(3), [4, 4])
    with pytest.raises(ContractError):
        LindbladSystem(params(3), 20, max_dim=1000)
    system = LindbladSystem(params(1), 4)
    with pytest.raises(ContractError):
        liouvillian_apply(system, np.eye(3))


# ------------------------------------------------------------ evolution
def test_damped_coherent_state_closed_form():
    z0, k1 = 1.3 - 0.4j, 0.8
    system = LindbladSystem(params(1, eps=0.0, k1=k1, k2=0.0), 25)
    t = np.array([0.0, 0.5, 1.0, 2.0])
    run = evolve_rho(system, coherent_density(z0, 25), t, dt=1e-3, method="dense")
    for ti, rho in zip(t, run.states):
        want = coherent_density(z0 * math.exp(-k1 * ti / 2), 25).elements
        assert np.max(np.abs(rho - want)) < 1e-6
    assert np.max(np.abs(run.trace_drift)) < 1e-10


def test_methods_agree():
    p = params(2, eps=0.6, k1=0.2, k2=0.4, gamma=0.5, boundary="open")
    system = LindbladSystem(p, 5)
    t = [0.0, 0.7, 1.5]
    dense = evolve_rho(system, system.vacuum(), t, dt=2e-3, method="dense", top_level_limit=1)
    sup = evolve_rho(system, system.vacuum(), t, dt=2e-3, method="superop", top_level_limit=1)
    for a, b in zip(dense.states, sup.states):
        np.testing.assert_allclose(a, b, atol=1e-11)


def test_momentum_basis_matches_site_basis():
    # the two truncations differ, so compare where both are negligible
    p = params(3, eps=0.05, k1=0.3, k2=0.3, gamma=0.6, phi=0.0)
    t = [0.0, 0.5, 1.0]
    site = oracle_series(p, t, cutoff=6, basis="site", max_dim=400)
    mom = oracle_series(p, t, cutoff=6, basis="momentum", max_dim=400)
    for a, b in zip(site.observations[1:], mom.observations[1:]):
        np.testing.assert_allclose(a["n"], b["n"], rtol=1e-6)
        np.testing.assert_allclose(a["g1"], b["g1"], atol=1e-6)
        assert a["parity_global"] == pytest.approx(b["parity_global"], abs=1e-6)
    # the Fourier transform preserves the total photon number
    last = mom.observations[-1]
    assert last["n_k"].sum() == pytest.approx(last["n"].sum(), rel=1e-10)


def test_sector_reduction_active_in_momentum_basis():
    system = LindbladSystem(params(3, eps=0.5, k1=0.1, k2=0.3, gamma=0.6), 3, basis="momentum")
    assert len(np.unique(system.labels)) > 2
    assert system.respects_sectors(system.vacuum())


def test_truncation_error_raised_and_grown():
    p = params(1, eps=2.0, k1=0.0, k2=0.2)
    with pytest.raises(TruncationError) as info:
        oracle_series(p, [0.0, 3.0], cutoff=4)
    assert info.value.populations[0] > 1e-6
    run = oracle_series(p, [0.0, 0.3], cutoff=4, grow=8)
    assert run.system.cutoffs[0] > 4


def test_evolve_rejects_bad_grid():
    system = LindbladSystem(params(1), 3)
    with pytest.raises(ContractError):
        evolve_rho(system, system.vacuum(), [1.0, 0.5])
    with pytest.raises(ContractError):
        evolve_rho(system, system.vacuum(), [0.0], method="magic")


# ------------------------------------------------------------ steady states
def test_two_photon_steady_state_is_even_cat():
    # without single-photon loss the vacuum relaxes to the even cat with zeta^2 = -2i eps / kappa2
    eps, k2 = 1.0, 1.0
    system = LindbladSystem(params(1, eps=eps, k1=0.0, k2=k2), 20)
    ss = steady_state(system, t_long=60.0, residual_tol=1e-9)
    assert ss.degenerate
    zeta = np.sqrt(-2j * eps / k2)
    want = cat_state_density(zeta, 1, 20).elements
    assert np.max(np.abs(ss.rho - want)) < 1e-6
    obs = observables_from_rho(FockDensityMatrix(ss.rho))
    x = abs(zeta) ** 2
    assert obs["n"] == pytest.approx(x * math.tanh(x), rel=1e-6)
    assert obs["parity"] == pytest.approx(1.0, abs=1e-8)


def test_lossy_steady_state_unique():
    system = LindbladSystem(params(1, eps=0.5, k1=0.5, k2=0.5), 6)
    ss = steady_state(system)
    assert not ss.degenerate
    assert ss.method == "null-space"
    assert ss.residual < 1e-10
    assert np.trace(ss.rho).real == pytest.approx(1.0)
    assert np.min(np.linalg.eigvalsh(ss.rho)) > -1e-10
    # long-time evolution reaches the same state
    late = evolve_rho(system, system.vacuum(), [80.0], top_level_limit=1).states[-1]
    assert np.max(np.abs(late - ss.rho)) < 1e-8


# ------------------------------------------------------------ reference states
@pytest.mark.parametrize("zeta", [0.6, 1.4j, 1.1 - 0.9j])
def test_cat_observables_closed_forms(zeta):
    x = abs(zeta) ** 2
    even = observables_from_rho(cat_state_density(zeta, 1, 50))
    odd = observables_from_rho(cat_state_density(zeta, -1, 50))
    assert even["n"] == pytest.approx(x * math.tanh(x), rel=1e-10)
    assert odd["n"] == pytest.approx(x / math.tanh(x), rel=1e-10)
    assert even["g2"] == pytest.approx(1 / math.tanh(x) ** 2, rel=1e-9)
    assert odd["g2"] == pytest.approx(math.tanh(x) ** 2, rel=1e-9)
    assert even["parity"] == pytest.approx(1.0)
    assert odd["parity"] == pytest.approx(-1.0)
    assert even["zeta"] ** 2 == pytest.approx(zeta ** 2, rel=1e-10)
    mix = observables_from_rho(coherent_mixture(zeta, 50))
    assert mix["parity"] == pytest.approx(math.exp(-2 * x), abs=1e-12)
    assert mix["n"] == pytest.approx(x, rel=1e-10)


def test_odd_cat_at_origin_rejected():
    with pytest.raises(ContractError):
        cat_state_density(0.0, -1, 5)
    with pytest.raises(ContractError):
        cat_state_density(1.0, 0, 5)


def test_initial_density_dispatch():
    system = LindbladSystem(params(1), 30)
    np.testing.assert_array_equal(initial_density(system), system.vacuum())
    cat = initial_density(system, InitialState("cat", 1.2, -1))
    np.testing.assert_allclose(cat, cat_state_density(1.2, -1, 30).elements)
    with pytest.raises(ContractError):
        initial_density(LindbladSystem(params(2), 3), InitialState("coherent", 1.0))


def test_multimode_observables_consistency():
    p = params(3, eps=0.05, k1=0.3, k2=0.3, gamma=0.6)
    run = oracle_series(p, [1.0], cutoff=6, max_dim=400)
    obs = run.observations[-1]
    np.testing.assert_allclose(np.diag(obs["g1"]), 1.0, atol=1e-12)
    np.testing.assert_allclose(obs["g1"], obs["g1"].conj().T, atol=1e-12)
    # translation invariance on the ring
    np.testing.assert_allclose(obs["n"], obs["n"][0], rtol=1e-8)
    assert obs["trace"] == pytest.approx(1.0, abs=1e-10)
