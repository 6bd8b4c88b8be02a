"""Physical model: two-photon-driven resonator ring with local and nonlocal loss.

Phase-space drift, diffusion and noise matrices of the positive-P
representation, the two drift-gauge choices, and initial-state samplers.
Everything here is a pure function of its arguments and works on a single
phase-space point; the batched, compiled version lives in the SDE kernel.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class ContractError(ValueError):
    """An argument violates the documented contract of an operation."""


class Boundary(str, enum.Enum):
    PERIODIC = "periodic"
    OPEN = "open"


class Decomposition(str, enum.Enum):
    DIAG_SQRT = "diag_sqrt"
    SPLIT_FOUR_NOISE = "split_four_noise"


class Gauge(str, enum.Enum):
    NONE = "none"
    CHOICE1 = "choice1"
    CHOICE2 = "choice2"


@dataclass(frozen=True)
class ModelParams:
    """Rates of the Lindblad model, in units where the drive sets the scale.

    The drive on site ``j`` (1-based) is ``epsilon * exp(-2j * phi * j)``.
    """

    n_sites: int = 1
    epsilon: complex = 1.0
    kappa1: float = 0.0
    kappa2: float = 0.0
    gamma: float = 0.0
    phi: float = 0.0
    boundary: Boundary = Boundary.PERIODIC

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        object.__setattr__(self, "epsilon", complex(self.epsilon))
        if int(self.n_sites) != self.n_sites or self.n_sites < 1:
            raise ContractError(f"n_sites must be a positive integer, got {self.n_sites!r}")
        object.__setattr__(self, "n_sites", int(self.n_sites))
        for name in ("kappa1", "kappa2", "gamma"):
            value = float(getattr(self, name))
            if not value >= 0:
                raise ContractError(f"{name} must be >= 0, got {value!r}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "phi", float(self.phi))
        if self.n_sites == 1 and self.gamma != 0:
            raise ContractError("a single site cannot carry nonlocal dissipation (gamma must be 0)")

    @property
    def theta(self) -> float:
        return 2.0 * self.phi

    def site_drive(self) -> np.ndarray:
        """Drive amplitude of every site."""
        j = np.arange(1, self.n_sites + 1)
        return self.epsilon * np.exp(-1j * self.theta * j)

    def bonds(self) -> list[tuple[int, int]]:
        """Dissipative bonds ``(j, j+1)`` as 0-based index pairs."""
        n = self.n_sites
        if self.gamma == 0 or n == 1:
            return []
        if self.boundary is Boundary.PERIODIC:
            return [(j, (j + 1) % n) for j in range(n)]
        return [(j, j + 1) for j in range(n - 1)]

    def coupling(self):
        """Linear part of the drift: ``(onsite, right_idx, right_coef, left_idx, left_coef)``.

        For the alpha equation of site ``j`` the linear terms are
        ``-onsite[j]*alpha_j + right_coef[j]*alpha[right_idx[j]] + left_coef[j]*alpha[left_idx[j]]``;
        the beta equation uses the complex conjugate coefficients.  A missing
        neighbour has coefficient 0 (index points at the site itself).
        """
        n = self.n_sites
        onsite = np.full(n, self.kappa1 / 2.0)
        right_idx = np.arange(n, dtype=np.int64)
        left_idx = np.arange(n, dtype=np.int64)
        right_coef = np.zeros(n, dtype=complex)
        left_coef = np.zeros(n, dtype=complex)
        half = self.gamma / 2.0
        for j, k in self.bonds():
            # bond operator a_j - e^{i phi} a_k
            onsite[j] += half
            onsite[k] += half
            right_idx[j] = k
            right_coef[j] += half * np.exp(1j * self.phi)
            left_idx[k] = j
            left_coef[k] += half * np.exp(-1j * self.phi)
        return onsite, right_idx, right_coef, left_idx, left_coef


@dataclass
class PhasePoint:
    """One positive-P sample: ket amplitudes ``alpha`` and bra amplitudes ``beta``."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=complex))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=complex))
        if self.alpha.shape != self.beta.shape or self.alpha.ndim != 1:
            raise ContractError("alpha and beta must be equal-length vectors")

    @property
    def n_sites(self) -> int:
        return self.alpha.size


@dataclass(frozen=True)
class SchemeSpec:
    """Noise decomposition and drift gauge of a simulation."""

    decomposition: Decomposition = Decomposition.DIAG_SQRT
    gauge: Gauge = Gauge.NONE

    def __post_init__(self):
        object.__setattr__(self, "decomposition", Decomposition(self.decomposition))
        object.__setattr__(self, "gauge", Gauge(self.gauge))
        if self.gauge is Gauge.CHOICE1 and self.decomposition is not Decomposition.SPLIT_FOUR_NOISE:
            raise ContractError("gauge choice1 requires the split_four_noise decomposition")
        if self.gauge is Gauge.CHOICE2 and self.decomposition is not Decomposition.DIAG_SQRT:
            raise ContractError("gauge choice2 requires the diag_sqrt decomposition")

    @property
    def noises_per_site(self) -> int:
        return 4 if self.decomposition is Decomposition.SPLIT_FOUR_NOISE else 2

    @property
    def gauged(self) -> bool:
        return self.gauge is not Gauge.NONE

    @property
    def label(self) -> str:
        kind = "GP" if self.gauged else "PP"
        choice = 1 if self.decomposition is Decomposition.SPLIT_FOUR_NOISE else 2
        return f"{kind}{choice}"


# The four schemes of the drift/diffusion comparison table.
POSITIVE_P = SchemeSpec()
POSITIVE_P_CHOICE1 = SchemeSpec(Decomposition.SPLIT_FOUR_NOISE, Gauge.NONE)
GAUGE_P_CHOICE1 = SchemeSpec(Decomposition.SPLIT_FOUR_NOISE, Gauge.CHOICE1)
GAUGE_P_CHOICE2 = SchemeSpec(Decomposition.DIAG_SQRT, Gauge.CHOICE2)
SCHEMES = {
    "PP1": POSITIVE_P_CHOICE1,
    "GP1": GAUGE_P_CHOICE1,
    "PP2": POSITIVE_P,
    "GP2": GAUGE_P_CHOICE2,
}


def _check(params: ModelParams, point: PhasePoint):
    if point.n_sites != params.n_sites:
        raise ContractError(
            f"phase point has {point.n_sites} sites but the model has {params.n_sites}"
        )


def _linear(params: ModelParams, x: np.ndarray, conjugate: bool) -> np.ndarray:
    onsite, ri, rc, li, lc = params.coupling()
    if conjugate:
        rc, lc = rc.conj(), lc.conj()
    return -onsite * x + rc * x[ri] + lc * x[li]


def drift(params: ModelParams, point: PhasePoint) -> np.ndarray:
    """Ungauged drift vector, ordered ``[A_alpha_1..N, A_beta_1..N]``."""
    _check(params, point)
    a, b = point.alpha, point.beta
    eps = params.site_drive()
    k2 = params.kappa2
    da = (-k2 * a * a - 2j * eps) * b + _linear(params, a, False)
    db = (-k2 * b * b + 2j * eps.conj()) * a + _linear(params, b, True)
    return np.concatenate([da, db])


def diffusion_matrix(params: ModelParams, point: PhasePoint) -> np.ndarray:
    """Diagonal diffusion matrix ``D`` in the ``[alpha, beta]`` ordering."""
    _check(params, point)
    a, b = point.alpha, point.beta
    eps = params.site_drive()
    k2 = params.kappa2
    return np.diag(np.concatenate([-k2 * a * a - 2j * eps, -k2 * b * b + 2j * eps.conj()]))


def noise_blocks(scheme: SchemeSpec, params: ModelParams, point: PhasePoint) -> np.ndarray:
    """Per-site noise blocks, shape ``(N, 2, noises_per_site)``."""
    _check(params, point)
    a, b = point.alpha, point.beta
    eps = params.site_drive()
    k2 = params.kappa2
    n = params.n_sites
    if scheme.decomposition is Decomposition.DIAG_SQRT:
        out = np.zeros((n, 2, 2), dtype=complex)
        out[:, 0, 0] = np.sqrt(-k2 * a * a - 2j * eps)
        out[:, 1, 1] = np.sqrt(-k2 * b * b + 2j * eps.conj())
        return out
    out = np.zeros((n, 2, 4), dtype=complex)
    sk = math.sqrt(k2)
    out[:, 0, 0] = np.sqrt(-2j * eps)
    out[:, 1, 1] = np.sqrt(2j * eps.conj())
    out[:, 0, 2] = 1j * a * sk
    out[:, 1, 3] = 1j * b * sk
    return out


def noise_matrix(scheme: SchemeSpec, params: ModelParams, point: PhasePoint) -> np.ndarray:
    """Full noise matrix ``B`` with ``B @ B.T == D``.

    Rows follow the ``[alpha, beta]`` ordering of :func:`drift`; columns are
    the noise channels, site-major (``noises_per_site`` consecutive columns
    per site), which is also the channel order of the Wiener increments.
    """
    blocks = noise_blocks(scheme, params, point)
    n, _, m = blocks.shape
    out = np.zeros((2 * n, n * m), dtype=complex)
    for j in range(n):
        out[j, j * m:(j + 1) * m] = blocks[j, 0]
        out[n + j, j * m:(j + 1) * m] = blocks[j, 1]
    return out


def gauge_vector(scheme: SchemeSpec, params: ModelParams, point: PhasePoint) -> np.ndarray:
    """Drift-gauge functions, one per noise channel (site-major)."""
    _check(params, point)
    a, b = point.alpha, point.beta
    eps = params.site_drive()
    k2 = params.kappa2
    n = params.n_sites
    m = scheme.noises_per_site
    g = np.zeros((n, m), dtype=complex)
    if scheme.gauge is Gauge.CHOICE1:
        ab = a * b
        cubic = 1j * math.sqrt(k2) * (ab - np.abs(ab))
        g[:, 0] = b * np.sqrt(-2j * eps)
        g[:, 1] = a * np.sqrt(2j * eps.conj())
        g[:, 2] = cubic
        g[:, 3] = cubic
    elif scheme.gauge is Gauge.CHOICE2:
        sa = np.sqrt(-2j * eps - k2 * a * a)
        sb = np.sqrt(2j * eps.conj() - k2 * b * b)
        g[:, 0] = b * sa + a * sa.conj()
        g[:, 1] = a * sb + b * sb.conj()
    return g.reshape(-1)


def gauged_drift(scheme: SchemeSpec, params: ModelParams, point: PhasePoint) -> np.ndarray:
    """Closed-form drift after the gauge shift (equals ``A - B g``)."""
    _check(params, point)
    if scheme.gauge is Gauge.NONE:
        return drift(params, point)
    a, b = point.alpha, point.beta
    eps = params.site_drive()
    k2 = params.kappa2
    if scheme.gauge is Gauge.CHOICE1:
        r = np.abs(a * b)
        da = -k2 * a * r
        db = -k2 * b * r
    else:
        da = -np.abs(2j * eps + k2 * a * a) * a
        db = -np.abs(2j * eps.conj() - k2 * b * b) * b
    da = da + _linear(params, a, False)
    db = db + _linear(params, b, True)
    return np.concatenate([da, db])


def stability_rate(params: ModelParams, point: PhasePoint) -> float:
    """Drift-only time derivative of ``I = |alpha|^2 + |beta|^2`` (single mode)."""
    if params.n_sites != 1:
        raise ContractError("the stability diagnostic is defined for a single mode only")
    _check(params, point)
    a, b = point.alpha[0], point.beta[0]
    eps = params.site_drive()[0]
    intensity = abs(a) ** 2 + abs(b) ** 2
    # for real eps the first term is -8 eps Im(alpha conj(beta))
    return float(
        8.0 * (eps * a.conjugate() * b).imag
        - params.kappa1 * intensity
        - 2.0 * params.kappa2 * intensity * (a * b).real
    )


def sample_vacuum(n_sites: int) -> PhasePoint:
    if n_sites < 1:
        raise ContractError("n_sites must be >= 1")
    return PhasePoint(np.zeros(n_sites, dtype=complex), np.zeros(n_sites, dtype=complex))


def cat_atoms(zeta: complex, sign: int = 1):
    """Atoms of the four-delta cat distribution.

    Returns ``(alphas, betas, probabilities, weights)``.  Atoms are drawn with
    probability proportional to ``|w|``; the returned weight carries the sign
    and the ratio of normalizations so that the weighted kernel average is
    the normalized cat state.  For the even cat all weights are exactly 1.
    """
    if sign not in (1, -1):
        raise ContractError("sign must be +1 or -1")
    zeta = complex(zeta)
    if not np.isfinite(zeta):
        raise ContractError("zeta must be finite")
    overlap = math.exp(-2.0 * abs(zeta) ** 2)
    if sign == -1 and overlap == 1.0:
        raise ContractError("the odd cat state is undefined at zeta = 0")
    alphas = np.array([zeta, -zeta, zeta, -zeta])
    betas = np.array([zeta.conjugate(), -zeta.conjugate(), -zeta.conjugate(), zeta.conjugate()])
    raw = np.array([1.0, 1.0, sign * overlap, sign * overlap])
    total_abs = np.abs(raw).sum()
    probabilities = np.abs(raw) / total_abs
    norm = raw.sum()
    weights = np.sign(raw) * (total_abs / norm) if sign == -1 else np.ones(4)
    return alphas, betas, probabilities, weights


def sample_cat(zeta: complex, sign: int, rng: np.random.Generator):
    """Draw one single-mode sample ``(PhasePoint, weight)`` of a cat state."""
    alphas, betas, probabilities, weights = cat_atoms(zeta, sign)
    i = rng.choice(4, p=probabilities)
    return PhasePoint([alphas[i]], [betas[i]]), complex(weights[i])
