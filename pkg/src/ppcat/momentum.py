"""Quasimomentum transform and momentum-space correlations.

Plane waves on the ring: ``alpha_k = N**-0.5 * sum_j exp(i j k) alpha_j`` and
``beta_k = N**-0.5 * sum_j exp(-i j k) beta_j`` with sites ``j = 1..N``, so
``<beta_k alpha_k>`` estimates ``<b_k^dag b_k>`` just as in real space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimators import Estimate, SNR_MIN, _spread, subensemble_means
from .model import ContractError, PhasePoint


@dataclass(frozen=True)
class MomentumGrid:
    """Quasimomenta ``2 pi m / N`` (``m = 1..N``) re-centred into ``(-pi, pi]``."""

    n_sites: int
    phi: float = 0.0

    def __post_init__(self):
        if self.n_sites < 1:
            raise ContractError("n_sites must be >= 1")

    @property
    def k_values(self) -> np.ndarray:
        m = np.arange(1, self.n_sites + 1)
        k = 2.0 * np.pi * m / self.n_sites
        # integer test avoids rounding at k = pi
        return np.where(2 * m > self.n_sites, k - 2.0 * np.pi, k)

    @property
    def dark_index(self) -> int:
        """Index of the grid point nearest ``k = phi`` (on the circle)."""
        d = np.angle(np.exp(1j * (self.k_values - self.phi)))
        return int(np.argmin(np.abs(d)))

    def index(self, k: float) -> int:
        d = np.abs(np.angle(np.exp(1j * (self.k_values - k))))
        i = int(np.argmin(d))
        if d[i] > 1e-9:
            raise ContractError(f"k = {k!r} is not on the grid")
        return i

    def partner(self, i: int) -> int:
        """Index of ``-k`` for grid index ``i``."""
        return self.index(-self.k_values[i])

    def fourier_matrix(self) -> np.ndarray:
        """``F[k, j] = exp(i j k) / sqrt(N)`` with 1-based sites."""
        j = np.arange(1, self.n_sites + 1)
        return np.exp(1j * np.outer(self.k_values, j)) / math.sqrt(self.n_sites)


def _transform(alpha, beta, grid: MomentumGrid):
    f = grid.fourier_matrix()
    return alpha @ f.T, beta @ f.conj().T


def to_momentum(point: PhasePoint, grid: MomentumGrid | None = None) -> PhasePoint:
    """Momentum-space amplitudes of one phase point (grid order of ``k_values``)."""
    grid = grid or MomentumGrid(point.n_sites)
    if grid.n_sites != point.n_sites:
        raise ContractError("grid size does not match the phase point")
    a, b = _transform(point.alpha, point.beta, grid)
    return PhasePoint(a, b)


def ensemble_to_momentum(ensemble, grid: MomentumGrid | None = None):
    """Copy of an ensemble with every trajectory transformed to momentum space."""
    grid = grid or MomentumGrid(ensemble.n_sites)
    if grid.n_sites != ensemble.n_sites:
        raise ContractError("grid size does not match the ensemble")
    out = ensemble.copy()
    out.alpha, out.beta = _transform(ensemble.alpha, ensemble.beta, grid)
    return out


@dataclass(frozen=True)
class MomentumOccupations:
    k_values: np.ndarray
    n_k: Estimate
    ratio: Estimate
    dark_index: int
    low_snr: bool


def momentum_occupations(ensemble, grid: MomentumGrid | None = None,
                         weighted: bool | None = None) -> MomentumOccupations:
    """``n_k = Re<alpha_k beta_k>`` and the ratios ``n_k / n_phi`` with errors."""
    grid = grid or MomentumGrid(ensemble.n_sites)
    mom = ensemble_to_momentum(ensemble, grid)
    w = ensemble.weighted if weighted is None else weighted
    m = subensemble_means(mom, mom.alpha * mom.beta, w).real
    n_mean, n_err = _spread(m)
    d = grid.dark_index
    with np.errstate(divide="ignore", invalid="ignore"):
        r_mean, r_err = _spread(m / m[:, d:d + 1])
    low = not (n_mean[d] > n_err[d]) if np.isfinite(n_err[d]) else not n_mean[d] > 0
    return MomentumOccupations(grid.k_values, Estimate(n_mean, n_err), Estimate(r_mean, r_err, low),
                               d, low)


def _pair_moments(mom, i: int, p: int, weighted: bool):
    ak, bk = mom.alpha[:, i], mom.beta[:, i]
    ap, bp = mom.alpha[:, p], mom.beta[:, p]
    nk, np_ = ak * bk, ap * bp
    vals = np.stack([nk, np_, nk * np_, nk * nk, np_ * np_], axis=1)
    return subensemble_means(mom, vals, weighted).real


@dataclass(frozen=True)
class PairCorrelation:
    k: float
    g2: Estimate
    g2_unnormalized: Estimate


def g2_antipropagating(ensemble, k: float, grid: MomentumGrid | None = None,
                       weighted: bool | None = None) -> PairCorrelation:
    """``g2~(k,-k)`` and its unnormalized numerator ``Re<a_k a_-k b_k b_-k>``."""
    grid = grid or MomentumGrid(ensemble.n_sites)
    i = grid.index(k)
    p = grid.partner(i)
    mom = ensemble_to_momentum(ensemble, grid)
    w = ensemble.weighted if weighted is None else weighted
    m = _pair_moments(mom, i, p, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        g2_vals = m[:, 2] / (m[:, 0] * m[:, 1])
    u_mean, u_err = _spread(m[:, 2])
    g_mean, g_err = _spread(g2_vals)
    n_k, e_k = _spread(m[:, 0])
    n_p, e_p = _spread(m[:, 1])
    low = not (n_k > SNR_MIN * e_k and n_p > SNR_MIN * e_p)
    return PairCorrelation(float(grid.k_values[i]), Estimate(g_mean, g_err, low),
                           Estimate(u_mean, u_err))


def cauchy_schwarz_ratio(ensemble, k: float, grid: MomentumGrid | None = None,
                         ordering: str = "normal", weighted: bool | None = None) -> Estimate:
    """Cauchy-Schwarz ratio ``R_CS(k, -k)`` with its subensemble error.

    ``ordering="normal"`` uses the normally ordered moments that phase-space
    averages give directly, ``<a_k^dag a_-k^dag a_-k a_k>`` over
    ``sqrt(<a_k^dag2 a_k^2><a_-k^dag2 a_-k^2>)``; values above 1 then signal
    nonclassical pair correlations.  ``ordering="full"`` adds the
    commutator term ``<n_k>`` to each second moment (true number-operator
    moments); for ``k != -k`` that ratio is bounded by 1.
    """
    if ordering not in ("normal", "full"):
        raise ContractError("ordering must be 'normal' or 'full'")
    grid = grid or MomentumGrid(ensemble.n_sites)
    i = grid.index(k)
    p = grid.partner(i)
    mom = ensemble_to_momentum(ensemble, grid)
    w = ensemble.weighted if weighted is None else weighted
    m = _pair_moments(mom, i, p, w)
    cross, sk, sp = m[:, 2], m[:, 3], m[:, 4]
    if ordering == "full":
        sk = sk + m[:, 0]
        sp = sp + m[:, 1]
        if i == p:
            cross = cross + m[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(cross) / np.sqrt(sk * sp)
    mean, err = _spread(r)
    sk_mean, sk_err = _spread(sk)
    sp_mean, sp_err = _spread(sp)
    low = not (sk_mean > SNR_MIN * sk_err and sp_mean > SNR_MIN * sp_err)
    return Estimate(mean, err, low)
