"""Exact truncated-Fock Lindblad integration (ground truth for small systems).

The master equation is written as ``drho/dt = -i (K rho - rho K^dag) +
sum_O O rho O^dag`` with ``K = H - (i/2) sum_O O^dag O``, applied with sparse
operators to a dense ``rho``.  Modes are either the lattice sites or the
quasimomentum modes of the ring; the momentum basis lets the dark mode carry
a large cutoff while the damped modes stay small.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigs
from scipy.special import gammaln

from .model import ContractError, ModelParams
from .momentum import MomentumGrid
from .reconstruction import FockDensityMatrix, TruncationWarning

DEFAULT_MAX_DIM = 4096
TOP_LEVEL_LIMIT = 1e-6
DENSE_STEADY_MAX_DIM = 60
SUPEROP_MAX_NNZ = 30_000_000


class TruncationError(RuntimeError):
    """The population of the highest kept Fock level exceeds its bound.

    ``populations`` holds the top-level population of every mode.
    """

    def __init__(self, message, populations=None, time=None):
        super().__init__(message)
        self.populations = None if populations is None else np.asarray(populations)
        self.time = time


def default_cutoff(params: ModelParams) -> int:
    """``ceil(x + 5 sqrt(x))`` with ``x = |2 eps / kappa2|``, the steady lobe size."""
    if params.kappa2 <= 0:
        raise ContractError("the default cutoff needs kappa2 > 0; pass a cutoff explicitly")
    x = abs(2.0 * params.epsilon / params.kappa2)
    return int(math.ceil(x + 5.0 * math.sqrt(x)))


def _drop_tiny(op, rel: float = 1e-14):
    op = op.tocsr()
    if op.nnz:
        op.data[np.abs(op.data) < rel * np.max(np.abs(op.data))] = 0
        op.eliminate_zeros()
    return op


def _uniform_shift(op, parts, mods, zero: bool = False):
    """Does ``op`` shift every charge component by one fixed amount (zero if asked)?"""
    coo = op.tocoo()
    if coo.nnz == 0:
        return [True]
    out = []
    for part, mod in zip(parts, mods):
        shift = (part[coo.row] - part[coo.col]) % mod
        out.append(bool(np.all(shift == (0 if zero else shift[0]))))
    return out


def _destroy(dim: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, dim, dtype=float)), 1, shape=(dim, dim), format="csr",
                    dtype=complex)


class LindbladSystem:
    """Truncated Lindblad model.

    Parameters
    ----------
    params
        Model rates.  For ``n_sites > 1`` the jump operators are ``a_j``
        (rate ``kappa1``), ``a_j**2`` (``kappa2``) and
        ``a_j - exp(i phi) a_{j+1}`` (``gamma``) on every bond.
    cutoffs
        Highest Fock level per mode, an int for all modes or a sequence.
    basis
        ``"site"`` or ``"momentum"`` (modes ordered as ``MomentumGrid.k_values``).
    """

    def __init__(self, params: ModelParams, cutoffs=None, basis: str = "site",
                 max_dim: int = DEFAULT_MAX_DIM):
        if basis not in ("site", "momentum"):
            raise ContractError("basis must be 'site' or 'momentum'")
        n = params.n_sites
        if cutoffs is None:
            cutoffs = default_cutoff(params)
        if np.ndim(cutoffs) == 0:
            cutoffs = [int(cutoffs)] * n
        cutoffs = tuple(int(c) for c in cutoffs)
        if len(cutoffs) != n or min(cutoffs) < 1:
            raise ContractError("need one cutoff >= 1 per mode")
        self.dims = tuple(c + 1 for c in cutoffs)
        self.dim = int(np.prod(self.dims))
        if self.dim > max_dim:
            raise ContractError(
                f"Hilbert dimension {self.dim} exceeds the limit {max_dim}; lower the cutoffs"
            )
        self.params = params
        self.cutoffs = cutoffs
        self.basis = basis
        self.grid = MomentumGrid(n, params.phi)
        self.mode_ops = [self._embed(_destroy(d), i) for i, d in enumerate(self.dims)]
        # site operator a_j = sum_m T[j, m] c_m over basis modes c_m
        self.transform = np.eye(n) if basis == "site" else self.grid.fourier_matrix().conj().T
        self.site_ops = [self._combine(self.transform[j]) for j in range(n)]
        self.hamiltonian = self._build_hamiltonian()
        self.jumps = self._build_jumps()
        decay = sum((o.conj().T @ o for o in self.jumps), sp.csr_matrix((self.dim, self.dim)))
        self.k_eff = _drop_tiny((self.hamiltonian - 0.5j * decay).tocsr())
        self.labels = self._sector_labels()
        self._vec = {}

    def _sector_labels(self) -> np.ndarray:
        """Integer charge per basis state, conserved in the sense used by the RK4 path.

        ``K`` must connect equal charges and every jump must shift the charge
        by a fixed amount.  Candidates are the photon-number parity and, in
        the momentum basis, a quasimomentum label; each is verified against
        the operators, falling back to a single sector.
        """
        n = len(self.dims)
        occ = np.indices(self.dims).reshape(n, -1)
        total = occ.sum(axis=0)
        candidates = []
        if self.basis == "momentum":
            m = np.rint(self.grid.k_values * n / (2 * np.pi)).astype(int) % n
            mom = (m @ occ) % n
            candidates += [((total % 2, (mom + c * total) % n), (2, n)) for c in range(n)]
        candidates.append(((total % 2,), (2,)))
        for parts, mods in candidates:
            if all(_uniform_shift(self.k_eff, parts, mods, zero=True)) and all(
                    _uniform_shift(o, parts, mods) for o in self.jumps):
                label = np.zeros(self.dim, dtype=np.int64)
                for part, mod in zip(parts, mods):
                    label = label * mod + part
                return label
        return np.zeros(self.dim, dtype=np.int64)

    def _embed(self, op, mode):
        out = sp.identity(1, format="csr", dtype=complex)
        for i, d in enumerate(self.dims):
            out = sp.kron(out, op if i == mode else sp.identity(d, dtype=complex), format="csr")
        return out

    def _combine(self, coefs):
        out = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for c, op in zip(coefs, self.mode_ops):
            if abs(c) > 1e-15:
                out = out + c * op
        return out.tocsr()

    def _build_hamiltonian(self):
        h = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for eps_j, a in zip(self.params.site_drive(), self.site_ops):
            a2 = a @ a
            h = h + eps_j * a2.conj().T + np.conj(eps_j) * a2
        return h.tocsr()

    def _build_jumps(self):
        p = self.params
        n = p.n_sites
        # linear jumps share one coefficient matrix; reduce sum_j O_j rho O_j^dag
        # to at most n operators through the eigenbasis of its Gram matrix
        rows = []
        if p.kappa1 > 0:
            rows.extend(math.sqrt(p.kappa1) * self.transform[j] for j in range(n))
        for j, k in p.bonds():
            rows.append(math.sqrt(p.gamma) * (self.transform[j]
                                              - np.exp(1j * p.phi) * self.transform[k]))
        jumps = []
        if rows:
            m = np.asarray(rows)
            gram = m.T @ m.conj()
            off = gram - np.diag(np.diag(gram))
            if np.max(np.abs(off)) <= 1e-12 * max(np.max(np.abs(gram)), 1.0):
                # already diagonal (momentum basis on a ring): keep the modes
                # unmixed so every jump has a definite momentum
                lam, vec = np.diag(gram).real, np.eye(n)
            else:
                lam, vec = np.linalg.eigh(gram)
            scale = max(lam.max(), 1.0)
            for value, v in zip(lam, vec.T):
                if value > 1e-13 * scale:
                    op = self._combine(math.sqrt(value) * v)
                    jumps.append(op)
        if p.kappa2 > 0:
            squares = [a @ a for a in self.site_ops]
            # any unitary mixing of the a_j^2 gives the same dissipator; the
            # Fourier mixing makes each jump change momentum by a fixed amount
            mix = np.eye(n) if self.basis == "site" else self.grid.fourier_matrix()
            for row in mix:
                op = sp.csr_matrix((self.dim, self.dim), dtype=complex)
                for c, sq in zip(row, squares):
                    if abs(c) > 1e-15:
                        op = op + c * sq
                op = op.tocsr()
                op.data[np.abs(op.data) < 1e-13 * np.max(np.abs(op.data))] = 0
                op.eliminate_zeros()
                jumps.append(math.sqrt(p.kappa2) * op)
        return jumps

    # ---------------------------------------------------------------- states
    def vacuum(self) -> np.ndarray:
        rho = np.zeros((self.dim, self.dim), dtype=complex)
        rho[0, 0] = 1.0
        return rho

    def top_level_populations(self, rho) -> np.ndarray:
        """Population of the highest kept level of every mode."""
        diag = np.real(np.diag(rho)).reshape(self.dims)
        out = []
        for i, d in enumerate(self.dims):
            axes = tuple(a for a in range(len(self.dims)) if a != i)
            out.append(diag.sum(axis=axes)[d - 1] if axes else diag[d - 1])
        return np.asarray(out)

    def norm_bound(self) -> float:
        """Upper bound on the Liouvillian norm used to pick the RK4 step."""
        k1 = abs(self.k_eff).sum(axis=0).max()
        jump = sum(abs(o).sum(axis=0).max() * abs(o).sum(axis=1).max() for o in self.jumps)
        return float(2.0 * k1 + jump)

    def local_parity_ops(self) -> list:
        """Dense ``exp(i pi n_j)`` for every site (cached)."""
        if getattr(self, "_local_parity", None) is None:
            ops = []
            for a in self.site_ops:
                num = (a.conj().T @ a).toarray()
                num = 0.5 * (num + num.conj().T)
                # parity from the spectrum of n_j (integer up to truncation)
                val, vec = np.linalg.eigh(num)
                ops.append((vec * np.cos(np.pi * val)) @ vec.conj().T)
            self._local_parity = ops
        return self._local_parity

    def respects_sectors(self, rho) -> bool:
        """``True`` when ``rho`` only couples basis states of equal charge."""
        rho = np.asarray(rho)
        mask = self.labels[:, None] != self.labels[None, :]
        scale = max(float(np.max(np.abs(rho))), 1e-300)
        return not np.any(np.abs(rho[mask]) > 1e-14 * scale)

    def vector_nnz(self, reduced: bool = True) -> int:
        """Stored entries of :meth:`vectorized` (exact for the Hamiltonian part)."""
        sectors = _sectors(self.labels if reduced else np.zeros(self.dim, dtype=np.int64))
        total = 0
        for idx in sectors:
            total += 2 * idx.size * self.k_eff[idx][:, idx].nnz
            for o in self.jumps:
                total += o[:, idx].nnz ** 2
        return int(total)

    def vectorized(self, reduced: bool = True) -> "VectorizedLiouvillian":
        """Cached Liouvillian on row-stacked ``rho`` restricted to equal-charge pairs."""
        if reduced not in self._vec:
            self._vec[reduced] = VectorizedLiouvillian(self, reduced)
        return self._vec[reduced]

    def superoperator(self) -> sp.csr_matrix:
        """Sparse Liouvillian acting on column-stacked ``vec(rho)``."""
        eye = sp.identity(self.dim, dtype=complex, format="csr")
        k = self.k_eff
        out = -1j * sp.kron(eye, k) + 1j * sp.kron(k.conj(), eye)
        for o in self.jumps:
            out = out + sp.kron(o.conj(), o)
        return out.tocsr()


def _sectors(labels) -> list:
    return [np.flatnonzero(labels == lab) for lab in np.unique(labels)]


class VectorizedLiouvillian:
    """Sparse Liouvillian acting on the equal-charge blocks of ``rho``.

    ``rho`` is stored as the concatenation of the row-stacked diagonal blocks
    ``rho[I_s, I_s]`` of every charge sector ``s``; the Lindblad terms map
    these blocks onto each other, so states that start block-diagonal stay
    so.  With ``reduced=False`` there is one sector and this is the plain
    row-stacked superoperator.
    """

    def __init__(self, system: LindbladSystem, reduced: bool = True):
        labels = system.labels if reduced else np.zeros(system.dim, dtype=np.int64)
        self.dim = system.dim
        self.sectors = _sectors(labels)
        sizes = [idx.size for idx in self.sectors]
        offsets = np.concatenate([[0], np.cumsum([n * n for n in sizes])])
        self.size = int(offsets[-1])
        where = np.empty(system.dim, dtype=np.int64)
        for s, idx in enumerate(self.sectors):
            where[idx] = s
        pair, tpos = [], []
        for s, idx in enumerate(self.sectors):
            n = idx.size
            pair.append((idx[:, None] * system.dim + idx[None, :]).ravel())
            loc = np.arange(n * n)
            tpos.append(offsets[s] + (loc % n) * n + loc // n)
        self.pair_index = np.concatenate(pair)
        self.transpose_index = np.concatenate(tpos)

        k = system.k_eff
        blocks = [[None] * len(sizes) for _ in sizes]
        for s, idx in enumerate(self.sectors):
            ks = k[idx][:, idx]
            eye = sp.identity(idx.size, dtype=complex, format="csr")
            blocks[s][s] = -1j * sp.kron(ks, eye) + 1j * sp.kron(eye, ks.conj())
        for o in system.jumps:
            oc = o.tocsc()
            for s, idx in enumerate(self.sectors):
                col = oc[:, idx]
                if col.nnz == 0:
                    continue
                t = int(where[col.tocoo().row[0]])
                ob = col.tocsr()[self.sectors[t]]
                term = sp.kron(ob, ob.conj())
                blocks[t][s] = term if blocks[t][s] is None else blocks[t][s] + term
        self.matrix = sp.bmat(blocks, format="csr")
        self.matrix.sum_duplicates()
        self._radius = None

    def gather(self, rho) -> np.ndarray:
        return np.asarray(rho).ravel()[self.pair_index]

    def scatter(self, vec) -> np.ndarray:
        rho = np.zeros(self.dim * self.dim, dtype=complex)
        rho[self.pair_index] = vec
        return rho.reshape(self.dim, self.dim)

    def hermitize(self, vec) -> np.ndarray:
        return 0.5 * (vec + vec[self.transpose_index].conj())

    def spectral_radius(self) -> float:
        """Largest eigenvalue modulus (Arnoldi, ~1% accurate; cached)."""
        if self._radius is None:
            m = self.matrix
            if m.shape[0] <= 64:
                self._radius = float(np.max(np.abs(np.linalg.eigvals(m.toarray()))))
            else:
                try:
                    w = eigs(m, k=1, which="LM", return_eigenvectors=False, tol=1e-2,
                             ncv=min(20, m.shape[0] - 1))
                    self._radius = float(np.max(np.abs(w)))
                except ArpackNoConvergence:
                    self._radius = float(np.max(np.abs(m).sum(axis=1)))
        return self._radius


def liouvillian_apply(system: LindbladSystem, rho) -> np.ndarray:
    """``drho/dt`` for a Hermitian ``rho`` (dense array or FockDensityMatrix)."""
    if isinstance(rho, FockDensityMatrix):
        rho = rho.elements
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (system.dim, system.dim):
        raise ContractError(f"rho must be {system.dim}x{system.dim}")
    x = system.k_eff @ rho
    out = -1j * x
    out += 1j * x.conj().T
    for o in system.jumps:
        y = o @ rho
        out += o @ y.conj().T
    return out


@dataclass
class OracleRun:
    times: np.ndarray
    states: list
    observations: list
    trace_drift: np.ndarray
    top_population: np.ndarray
    dt: float
    system: LindbladSystem = field(repr=False, default=None)


def _rk4(system, rho, h):
    k1 = liouvillian_apply(system, rho)
    k2 = liouvillian_apply(system, rho + 0.5 * h * k1)
    k3 = liouvillian_apply(system, rho + 0.5 * h * k2)
    k4 = liouvillian_apply(system, rho + h * k3)
    out = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    # liouvillian_apply assumes Hermitian input; drop the rounding-level
    # anti-Hermitian part before it can grow
    return 0.5 * (out + out.conj().T)


def _rk4_vec(op: VectorizedLiouvillian, v, h):
    m = op.matrix
    k1 = m @ v
    k2 = m @ (v + 0.5 * h * k1)
    k3 = m @ (v + 0.5 * h * k2)
    k4 = m @ (v + h * k3)
    return op.hermitize(v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def stable_step(system: LindbladSystem, courant: float = 1.0,
                operator: VectorizedLiouvillian | None = None) -> float:
    """RK4 step ``courant / r``.

    ``r`` is the cheap norm bound, or the Arnoldi estimate of the spectral
    radius of ``operator`` when one is given (RK4 is stable out to about 2.6
    in every left-half-plane direction, so ``courant=2`` keeps a margin).
    """
    r = operator.spectral_radius() if operator is not None else system.norm_bound()
    return courant / r if r > 0 else np.inf


def evolve_rho(system: LindbladSystem, rho0, t_grid, dt: float | None = None,
               observer=None, keep_states: bool = True,
               top_level_limit: float = TOP_LEVEL_LIMIT, method: str = "auto") -> OracleRun:
    """Fixed-step RK4 integration, sampled at ``t_grid``.

    Each interval between grid points is split into equal substeps no longer
    than ``dt``.  ``method="superop"`` multiplies by the cached sparse
    :class:`VectorizedLiouvillian`, restricted to the charge sectors when
    ``rho0`` respects them (fast; default step from the spectral radius
    with ``courant=2``).  ``"dense"`` applies the operators to the matrix
    (low memory; default step from the norm bound).  ``"auto"`` picks the
    superoperator when it has at most ``SUPEROP_MAX_NNZ`` entries.
    ``observer(rho)`` is called at every grid time.  Raises
    :class:`TruncationError` when a mode's highest kept level holds more
    than ``top_level_limit``.
    """
    if method not in ("auto", "superop", "dense"):
        raise ContractError("method must be 'auto', 'superop' or 'dense'")
    if isinstance(rho0, FockDensityMatrix):
        rho0 = rho0.elements
    reduced = system.respects_sectors(rho0)
    if method == "auto":
        method = "superop" if system.vector_nnz(reduced) <= SUPEROP_MAX_NNZ else "dense"
    if isinstance(rho0, FockDensityMatrix):
        rho0 = rho0.elements
    rho = np.array(rho0, dtype=complex)
    if rho.shape != (system.dim, system.dim):
        raise ContractError(f"rho0 must be {system.dim}x{system.dim}")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or np.any(np.diff(t_grid) < 0) or t_grid[0] < 0:
        raise ContractError("t_grid must be a non-decreasing list of times >= 0")
    op = system.vectorized(reduced) if method == "superop" else None
    if dt is None:
        dt = stable_step(system, 2.0, op) if op is not None else stable_step(system)
    h_max = dt
    vec = op.gather(rho) if op is not None else None
    t = 0.0
    states, obs, drift, tops = [], [], [], []
    tr0 = np.trace(rho).real
    for target in t_grid:
        span = target - t
        if span > 0:
            nsub = max(1, int(math.ceil(span / h_max - 1e-9)))
            h = span / nsub
            for _ in range(nsub):
                if op is None:
                    rho = _rk4(system, rho, h)
                else:
                    vec = _rk4_vec(op, vec, h)
            if op is not None:
                rho = op.scatter(vec)
            t = target
        top = system.top_level_populations(rho)
        if np.any(top > top_level_limit):
            mode = int(np.argmax(top))
            raise TruncationError(
                f"top Fock level of mode {mode} holds {top[mode]:.2e} at t={t:.4g} "
                f"(limit {top_level_limit:g}); increase the cutoff",
                top, t,
            )
        tops.append(top)
        drift.append(np.trace(rho).real - tr0)
        if keep_states:
            states.append(rho.copy())
        if observer is not None:
            obs.append(observer(rho))
    return OracleRun(t_grid, states, obs, np.asarray(drift), np.asarray(tops), h_max, system)


@dataclass
class SteadyState:
    rho: np.ndarray
    residual: float
    degenerate: bool
    method: str


def steady_state(system: LindbladSystem, degeneracy_tol: float = 1e-9, t_long: float = 200.0,
                 residual_tol: float = 1e-8) -> SteadyState:
    """Trace-normalized null vector of the Liouvillian.

    Small systems use a dense SVD; a second near-zero singular value marks a
    degenerate steady manifold, in which case (and for large systems) the
    state reached by long-time evolution from vacuum is returned.
    """
    if system.dim <= DENSE_STEADY_MAX_DIM:
        sup = system.superoperator().toarray()
        _, sv, vh = scipy.linalg.svd(sup)
        scale = max(sv[0], 1.0)
        degenerate = sv[-2] < degeneracy_tol * scale
        if not degenerate:
            rho = vh[-1].conj().reshape(system.dim, system.dim, order="F")
            rho = rho / np.trace(rho)
            rho = 0.5 * (rho + rho.conj().T)
            res = float(np.max(np.abs(liouvillian_apply(system, rho))))
            return SteadyState(rho, res, False, "null-space")
    else:
        degenerate = False
    rho = system.vacuum()
    h = stable_step(system)
    t = 0.0
    chunk = 10.0
    res = np.inf
    while t < t_long:
        rho = evolve_rho(system, rho, [chunk], dt=h, keep_states=True).states[-1]
        t += chunk
        res = float(np.max(np.abs(liouvillian_apply(system, rho))))
        if res < residual_tol:
            break
    return SteadyState(rho, res, bool(degenerate), "long-time evolution")


# ------------------------------------------------------------ observables
def _expect(op, rho) -> complex:
    return complex(np.sum(op.T.multiply(rho)) if sp.issparse(op) else np.trace(op @ rho))


def observables_from_rho(system_or_rho, rho=None) -> dict:
    """Exact observables.

    Single mode (a :class:`FockDensityMatrix` or ``(system, rho)`` with one
    site): ``n, zeta, g2, parity, trace``.  Several sites: per-site ``n``,
    ``zeta``, ``parity_local``, matrices ``g1`` (``g1[j, j'] =
    <a_j^dag a_j'>/sqrt(n_j n_j')``) and ``g2``, ``parity_global`` and the
    momentum occupations ``n_k``.
    """
    if isinstance(system_or_rho, FockDensityMatrix) or rho is None:
        dm = system_or_rho if isinstance(system_or_rho, FockDensityMatrix) else FockDensityMatrix(system_or_rho)
        if len(dm.dims) != 1:
            raise ContractError("pass the LindbladSystem for multimode matrices")
        a = _destroy(dm.dim)
        r = dm.elements
        return _single(a, r, parity_signs=(-1.0) ** np.arange(dm.dim))
    system = system_or_rho
    if isinstance(rho, FockDensityMatrix):
        rho = rho.elements
    n = system.params.n_sites
    if n == 1:
        return _single(system.site_ops[0], rho, parity_signs=(-1.0) ** np.arange(system.dim))
    ops = system.site_ops
    adag = [o.conj().T.tocsr() for o in ops]
    nj = np.array([_expect(adag[j] @ ops[j], rho).real for j in range(n)])
    zeta = np.sqrt(np.array([_expect(ops[j] @ ops[j], rho) for j in range(n)]))
    g1 = np.empty((n, n), dtype=complex)
    g2 = np.empty((n, n))
    for j in range(n):
        for k in range(n):
            g1[j, k] = _expect(adag[j] @ ops[k], rho)
            g2[j, k] = _expect(adag[j] @ adag[k] @ ops[k] @ ops[j], rho).real
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = np.outer(nj, nj)
        g1 = g1 / np.sqrt(norm)
        g2 = g2 / norm
    local = np.array([np.real(np.sum(par.T * rho)) for par in system.local_parity_ops()])
    total = np.zeros(system.dim)
    for i, d in enumerate(system.dims):
        shape = [1] * len(system.dims)
        shape[i] = d
        total = (total.reshape(system.dims) + np.arange(d).reshape(shape)).reshape(-1)
    diag = np.real(np.diag(rho))
    out = {
        "n": nj,
        "zeta": zeta,
        "parity_local": local,
        "g1": g1,
        "g2": g2,
        "parity_global": float(np.sum(diag * (-1.0) ** total)),
        "trace": float(np.trace(rho).real),
    }
    if system.basis == "momentum":
        out["n_k"] = np.array([_expect(m.conj().T @ m, rho).real for m in system.mode_ops])
    return out


def _single(a, rho, parity_signs) -> dict:
    ad = a.conj().T
    n = _expect(ad @ a, rho).real
    a2 = a @ a
    second = _expect(ad @ ad @ a2, rho).real
    with np.errstate(divide="ignore", invalid="ignore"):
        g2 = second / (n * n) if n != 0 else np.nan
    return {
        "n": n,
        "zeta": complex(np.sqrt(_expect(a2, rho))),
        "g2": g2,
        "parity": float(np.sum(parity_signs * np.real(np.diag(rho)))),
        "trace": float(np.trace(rho).real),
    }


def initial_density(system: LindbladSystem, initial=None) -> np.ndarray:
    """Oracle counterpart of an :class:`~ppcat.sde.InitialState` (``None`` is vacuum).

    Coherent and cat states are supported for a single mode.
    """
    kind = "vacuum" if initial is None else initial.kind
    if kind == "vacuum":
        return system.vacuum()
    if system.params.n_sites != 1:
        raise ContractError("the oracle prepares coherent and cat states for a single mode only")
    cutoff = system.cutoffs[0]
    if kind == "coherent":
        return coherent_density(initial.zeta, cutoff).elements
    return cat_state_density(initial.zeta, initial.sign, cutoff).elements


def oracle_series(params: ModelParams, t_grid, cutoff=None, basis: str = "site", dt=None,
                  grow: int = 0, max_dim: int = DEFAULT_MAX_DIM, initial=None,
                  keep_states: bool = False) -> OracleRun:
    """Observables of the oracle evolution at every time of ``t_grid``.

    The evolution starts from vacuum or from ``initial`` (see
    :func:`initial_density`).  With ``grow > 0`` a :class:`TruncationError`
    triggers a retry with the cutoff of every overflowing mode raised by
    ``grow`` (while the dimension stays within ``max_dim``).  ``keep_states``
    also returns the density matrices.
    """
    if cutoff is None:
        cutoff = default_cutoff(params)
        if initial is not None and initial.kind != "vacuum":
            x = abs(initial.zeta) ** 2
            cutoff = max(cutoff, int(math.ceil(x + 8.0 * math.sqrt(x) + 10)))
    while True:
        system = LindbladSystem(params, cutoff, basis, max_dim=max_dim)
        try:
            return evolve_rho(system, initial_density(system, initial), t_grid, dt=dt,
                              keep_states=keep_states,
                              observer=lambda r: observables_from_rho(system, r))
        except TruncationError as err:
            bigger = np.asarray(system.cutoffs) + grow * (err.populations > TOP_LEVEL_LIMIT)
            if grow <= 0 or np.prod(bigger + 1) > max_dim:
                raise
            cutoff = bigger.tolist()


# ------------------------------------------------------------ reference states
def coherent_vector(zeta: complex, cutoff: int) -> np.ndarray:
    """Number-basis amplitudes of ``|zeta>`` truncated at ``cutoff`` (not renormalized)."""
    zeta = complex(zeta)
    m = np.arange(cutoff + 1)
    if zeta == 0:
        v = np.zeros(cutoff + 1, dtype=complex)
        v[0] = 1.0
        return v
    logs = -0.5 * abs(zeta) ** 2 + m * np.log(zeta) - 0.5 * gammaln(m + 1)
    return np.exp(logs)


def _tail_check(rho: np.ndarray, tol: float = 1e-8):
    tail = 1.0 - float(np.trace(rho).real)
    if tail > tol:
        msg = f"Fock tail {tail:.2e} lost at this cutoff"
        warnings.warn(msg, TruncationWarning, stacklevel=3)
        return [msg]
    return []


def cat_state_density(zeta: complex, sign: int, cutoff: int) -> FockDensityMatrix:
    """``N (|zeta> + sign |-zeta>)`` with ``N = 1/sqrt(2 (1 + sign exp(-2|zeta|^2)))``."""
    if sign not in (1, -1):
        raise ContractError("sign must be +1 or -1")
    overlap = math.exp(-2.0 * abs(complex(zeta)) ** 2)
    if sign == -1 and overlap == 1.0:
        raise ContractError("the odd cat state is undefined at zeta = 0")
    v = coherent_vector(zeta, cutoff) + sign * coherent_vector(-complex(zeta), cutoff)
    v = v / math.sqrt(2.0 * (1.0 + sign * overlap))
    rho = np.outer(v, v.conj())
    return FockDensityMatrix(rho, cutoff, warnings=_tail_check(rho))


def coherent_density(zeta: complex, cutoff: int) -> FockDensityMatrix:
    v = coherent_vector(zeta, cutoff)
    rho = np.outer(v, v.conj())
    return FockDensityMatrix(rho, cutoff, warnings=_tail_check(rho))


def coherent_mixture(zeta: complex, cutoff: int) -> FockDensityMatrix:
    """Equal mixture ``(|zeta><zeta| + |-zeta><-zeta|) / 2``."""
    plus = coherent_vector(zeta, cutoff)
    minus = coherent_vector(-complex(zeta), cutoff)
    rho = 0.5 * (np.outer(plus, plus.conj()) + np.outer(minus, minus.conj()))
    return FockDensityMatrix(rho, cutoff, warnings=_tail_check(rho))
