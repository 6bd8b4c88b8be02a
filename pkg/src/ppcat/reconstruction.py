"""Density-matrix and Wigner-function reconstruction from trajectories.

The positive-P kernel of a sample ``(alpha, beta)`` in the number basis is
``<m|L|n> = exp(-alpha beta) alpha**m beta**n / sqrt(m! n!)``; the (weighted)
ensemble average of kernels is the reduced density matrix of the selected
mode.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_genlaguerre, gammaln

from .model import ContractError
from .momentum import MomentumGrid, ensemble_to_momentum

LOG_CLAMP = 300.0


class TruncationWarning(UserWarning):
    """The truncated Fock space misses a noticeable part of a state."""


@dataclass
class FockDensityMatrix:
    """Truncated number-basis density operator.

    ``cutoff`` is the highest Fock level kept (per mode); ``dims`` gives the
    per-mode dimensions when the matrix spans several modes.
    """

    elements: np.ndarray
    cutoff: int = None
    dims: tuple = None
    hermiticity_deviation: float = 0.0
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.elements = np.asarray(self.elements, dtype=complex)
        if self.elements.ndim != 2 or self.elements.shape[0] != self.elements.shape[1]:
            raise ContractError("a density matrix must be square")
        if self.dims is None:
            self.dims = (self.elements.shape[0],)
        self.dims = tuple(int(d) for d in self.dims)
        if int(np.prod(self.dims)) != self.elements.shape[0]:
            raise ContractError("dims do not match the matrix size")
        if self.cutoff is None:
            self.cutoff = max(self.dims) - 1

    @property
    def dim(self) -> int:
        return self.elements.shape[0]

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.elements))

    def hermitized(self) -> "FockDensityMatrix":
        dev = float(np.max(np.abs(self.elements - self.elements.conj().T))) if self.dim else 0.0
        return FockDensityMatrix((self.elements + self.elements.conj().T) / 2, self.cutoff,
                                 self.dims, dev, list(self.warnings))

    def parity(self) -> float:
        """``Tr[rho exp(i pi n)]`` for a single mode."""
        if len(self.dims) != 1:
            raise ContractError("parity() is defined for a single mode")
        signs = (-1.0) ** np.arange(self.dim)
        return float(np.real(np.sum(signs * np.diag(self.elements))))

    def photon_number(self) -> float:
        if len(self.dims) != 1:
            raise ContractError("photon_number() is defined for a single mode")
        return float(np.real(np.sum(np.arange(self.dim) * np.diag(self.elements))))


def trace_distance(rho: FockDensityMatrix, sigma: FockDensityMatrix) -> float:
    """``0.5 * ||rho - sigma||_1`` after Hermitizing both; sizes are zero-padded."""
    n = max(rho.dim, sigma.dim)
    a = np.zeros((n, n), dtype=complex)
    b = np.zeros((n, n), dtype=complex)
    a[:rho.dim, :rho.dim] = rho.hermitized().elements
    b[:sigma.dim, :sigma.dim] = sigma.hermitized().elements
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(a - b))))


def _log_kernel(alpha, beta, cutoff: int):
    """Log of the kernel factors: ``log(alpha^m / sqrt(m!))`` and the beta analogue."""
    m = np.arange(cutoff + 1)
    half_lfact = 0.5 * gammaln(m + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        la = m * np.log(np.asarray(alpha, dtype=complex)[..., None]) - half_lfact
        lb = m * np.log(np.asarray(beta, dtype=complex)[..., None]) - half_lfact
    # 0**0 = 1
    la[..., 0] = 0.0
    lb[..., 0] = 0.0
    return la, lb


def _clamped_exp(x):
    over = x.real > LOG_CLAMP
    if np.any(over):
        x = np.where(over, LOG_CLAMP + 1j * x.imag, x)
    return np.exp(x), bool(np.any(over))


def kernel_fock(alpha: complex, beta: complex, cutoff: int, tail_tolerance: float = 1e-6):
    """Kernel matrix ``<m|L(alpha, beta)|n>`` for ``0 <= m, n <= cutoff``.

    Returns a :class:`FockDensityMatrix`; a warning is attached (and emitted)
    if the truncated trace misses more than ``tail_tolerance`` or if an
    element had to be clamped at ``exp(300)``.
    """
    if int(cutoff) != cutoff or cutoff < 0:
        raise ContractError("cutoff must be a non-negative integer")
    cutoff = int(cutoff)
    alpha, beta = complex(alpha), complex(beta)
    la, lb = _log_kernel(alpha, beta, cutoff)
    logs = -alpha * beta + la[:, None] + lb[None, :]
    elements, clamped = _clamped_exp(logs)
    notes = []
    if clamped:
        notes.append("kernel magnitude clamped at exp(300)")
    tr = np.trace(elements)
    if not abs(tr - 1.0) <= tail_tolerance:
        notes.append(f"truncated kernel trace {tr:.6g} deviates from 1")
    for note in notes:
        warnings.warn(note, TruncationWarning, stacklevel=2)
    return FockDensityMatrix(elements, cutoff, warnings=notes)


def reconstruct_density(ensemble, cutoff: int, site: int | None = None, k: float | None = None,
                        weighted: bool | None = None, grid: MomentumGrid | None = None,
                        chunk: int = 20000) -> FockDensityMatrix:
    """Reduced density matrix of one mode from the ensemble average of kernels.

    Select a real-space ``site`` (0-based) or a momentum ``k`` on the grid;
    single-mode ensembles default to site 0.  ``hermiticity_deviation`` holds
    ``max|rho - rho^dag|`` of the raw average; the matrix is not symmetrized.
    """
    if (site is None) == (k is None):
        if site is None and k is None and ensemble.n_sites == 1:
            site = 0
        else:
            raise ContractError("select exactly one of site or k")
    if int(cutoff) != cutoff or cutoff < 0:
        raise ContractError("cutoff must be a non-negative integer")
    cutoff = int(cutoff)
    if k is not None:
        grid = grid or MomentumGrid(ensemble.n_sites)
        mode = grid.index(k)
        src = ensemble_to_momentum(ensemble, grid)
    else:
        if not 0 <= site < ensemble.n_sites:
            raise ContractError("site index out of range")
        mode, src = site, ensemble
    w = ensemble.weighted if weighted is None else weighted
    alive = np.flatnonzero(ensemble.alive)
    if alive.size == 0:
        raise ContractError("no live trajectories to reconstruct from")
    a = src.alpha[alive, mode]
    b = src.beta[alive, mode]
    om = ensemble.weight[alive] if w else np.ones(alive.size, dtype=complex)
    total = np.zeros((cutoff + 1, cutoff + 1), dtype=complex)
    clamped = False
    for start in range(0, alive.size, chunk):
        sl = slice(start, start + chunk)
        la, lb = _log_kernel(a[sl], b[sl], cutoff)
        with np.errstate(divide="ignore"):
            pref = -a[sl] * b[sl] + np.log(om[sl].astype(complex))
        ua, ca = _clamped_exp(la + pref[:, None])
        vb, cb = _clamped_exp(lb)
        clamped |= ca or cb
        total += ua.T @ vb
    rho = total / alive.size
    notes = []
    if clamped:
        notes.append("kernel magnitude clamped at exp(300)")
        warnings.warn(notes[-1], TruncationWarning, stacklevel=2)
    dev = float(np.max(np.abs(rho - rho.conj().T)))
    return FockDensityMatrix(rho, cutoff, hermiticity_deviation=dev, warnings=notes)


@dataclass
class WignerGrid:
    """Wigner function on a rectangular grid, ``alpha = x + i p``.

    Normalized so that ``integral W dx dp = Tr rho``; ``W(0) = (2/pi) Tr[rho P]``.
    """

    x_axis: np.ndarray
    p_axis: np.ndarray
    values: np.ndarray
    warnings: list = field(default_factory=list)

    def at_origin(self) -> float:
        i = int(np.argmin(np.abs(self.x_axis)))
        j = int(np.argmin(np.abs(self.p_axis)))
        return float(self.values[j, i])

    def integral(self) -> float:
        dx = self.x_axis[1] - self.x_axis[0] if self.x_axis.size > 1 else 1.0
        dp = self.p_axis[1] - self.p_axis[0] if self.p_axis.size > 1 else 1.0
        return float(self.values.sum() * dx * dp)


def wigner(rho: FockDensityMatrix, x_axis, p_axis=None) -> WignerGrid:
    """Wigner function ``W(a) = (2/pi) Tr[rho D(a) P D(a)^dag]`` on a grid.

    Evaluated with the closed form of displaced-parity matrix elements in
    terms of generalized Laguerre polynomials, exact on the truncated space.
    The input is Hermitized first.  Rows of ``values`` follow ``p_axis``.
    """
    if len(rho.dims) != 1:
        raise ContractError("wigner() needs a single-mode density matrix")
    herm = rho.hermitized()
    r = herm.elements
    x_axis = np.asarray(x_axis, dtype=float)
    p_axis = x_axis if p_axis is None else np.asarray(p_axis, dtype=float)
    a = x_axis[None, :] + 1j * p_axis[:, None]
    notes = list(herm.warnings)
    extent = float(np.max(np.abs(a))) if a.size else 0.0
    if extent ** 2 > herm.dim:
        notes.append(f"grid extent |alpha|={extent:.3g} exceeds what cutoff {herm.cutoff} resolves")
        warnings.warn(notes[-1], TruncationWarning, stacklevel=2)
    x = 4.0 * np.abs(a) ** 2
    w = np.zeros(a.shape)
    lf = gammaln(np.arange(herm.dim) + 1)
    for m in range(herm.dim):
        w += (-1) ** m * r[m, m].real * eval_genlaguerre(m, 0, x)
        for n in range(m + 1, herm.dim):
            if r[m, n] == 0:
                continue
            coef = (-1) ** m * math.exp(0.5 * (lf[m] - lf[n]))
            term = coef * (2.0 * a) ** (n - m) * eval_genlaguerre(m, n - m, x)
            w += 2.0 * np.real(r[m, n] * term)
    w *= (2.0 / np.pi) * np.exp(-0.5 * x)
    return WignerGrid(x_axis, p_axis, w, notes)
