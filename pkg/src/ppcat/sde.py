"""Ensemble integration of the phase-space SDEs.

Fixed-step Euler-Maruyama in the Ito sense.  Gauged schemes carry a complex
weight per trajectory.  Trajectories that leave the configured magnitude
bound, or turn non-finite, are frozen at their last finite state and
excluded from every estimator from then on.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import backend
from .model import (
    ContractError,
    Decomposition,
    Gauge,
    ModelParams,
    PhasePoint,
    SchemeSpec,
    cat_atoms,
)
from .rng import TAG_INITIAL, WienerStream, uniform_pairs

DEFAULT_THRESHOLD = 1e6


@dataclass(frozen=True)
class InitialState:
    """Initial phase-space distribution: ``vacuum``, ``coherent`` or ``cat``.

    ``zeta`` is the per-site amplitude for the coherent and cat states;
    ``sign`` selects the even (+1) or odd (-1) cat.
    """

    kind: str = "vacuum"
    zeta: complex = 0.0
    sign: int = 1

    def __post_init__(self):
        if self.kind not in ("vacuum", "coherent", "cat"):
            raise ContractError(f"unknown initial state {self.kind!r}")
        object.__setattr__(self, "zeta", complex(self.zeta))


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    scheme: SchemeSpec = SchemeSpec()
    dt: float = 1e-3
    t_final: float = 5.0
    n_trajectories: int = 10_000
    n_subensembles: int = 20
    seed: int = 0
    record_times: tuple = None
    divergence_threshold: float = DEFAULT_THRESHOLD
    initial: InitialState = InitialState()
    n_threads: int = 1
    backend: str | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ContractError(f"dt must be positive, got {self.dt!r}")
        if not self.t_final >= 0:
            raise ContractError(f"t_final must be >= 0, got {self.t_final!r}")
        if self.n_trajectories < 1 or self.n_subensembles < 1:
            raise ContractError("n_trajectories and n_subensembles must be positive")
        if self.n_trajectories % self.n_subensembles:
            raise ContractError(
                f"n_trajectories ({self.n_trajectories}) must be divisible by "
                f"n_subensembles ({self.n_subensembles})"
            )
        if not self.divergence_threshold > 0:
            raise ContractError("divergence_threshold must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ContractError("seed must be an unsigned 64-bit integer")
        times = self.record_times
        if times is None:
            times = np.linspace(0.0, self.t_final, 101) if self.t_final > 0 else [0.0]
        steps = sorted({int(round(t / self.dt)) for t in times})
        if steps and (steps[0] < 0 or steps[-1] > self.n_steps):
            raise ContractError("record_times must lie within [0, t_final]")
        object.__setattr__(self, "record_times", tuple(s * self.dt for s in steps))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def record_steps(self) -> list[int]:
        return [int(round(t / self.dt)) for t in self.record_times]

    def replace(self, **changes) -> "RunConfig":
        if "t_final" in changes and "record_times" not in changes:
            changes["record_times"] = None
        return dataclasses.replace(self, **changes)


@dataclass
class TrajectoryState:
    """A single trajectory: phase point, weight, noise stream and step counter."""

    point: PhasePoint
    weight: complex = 1.0
    stream: WienerStream = None
    step_index: int = 0
    diverged_at: float | None = None


@dataclass
class Ensemble:
    """Snapshot of all trajectories at one time.

    Rows of ``alpha``/``beta`` are trajectories in index order; subensemble
    ``j`` is the contiguous block ``j*M/s .. (j+1)*M/s``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    weight: np.ndarray
    diverged_step: np.ndarray
    n_subensembles: int
    time: float = 0.0
    weighted: bool = False

    @classmethod
    def from_arrays(cls, alpha, beta, n_subensembles=1, weight=None, time=0.0):
        alpha = np.asarray(alpha, dtype=complex)
        if alpha.ndim == 1:
            alpha = alpha[:, None]
        beta = np.asarray(beta, dtype=complex).reshape(alpha.shape)
        m = alpha.shape[0]
        if m % n_subensembles:
            raise ContractError("trajectory count must be divisible by the subensemble count")
        w = np.ones(m, dtype=complex) if weight is None else np.asarray(weight, dtype=complex)
        return cls(alpha, beta, w, np.full(m, -1, dtype=np.int64), n_subensembles, time,
                   weight is not None)

    @property
    def n_trajectories(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_sites(self) -> int:
        return self.alpha.shape[1]

    @property
    def alive(self) -> np.ndarray:
        return self.diverged_step < 0

    @property
    def divergence_fraction(self) -> float:
        return float(np.mean(~self.alive))

    def subensemble_ids(self) -> np.ndarray:
        per = self.n_trajectories // self.n_subensembles
        return np.arange(self.n_trajectories) // per

    def copy(self) -> "Ensemble":
        return dataclasses.replace(
            self,
            alpha=self.alpha.copy(),
            beta=self.beta.copy(),
            weight=self.weight.copy(),
            diverged_step=self.diverged_step.copy(),
        )


def _kernel_args(params: ModelParams, scheme: SchemeSpec):
    onsite, ridx, rcoef, lidx, lcoef = params.coupling()
    decomp = 0 if scheme.decomposition is Decomposition.DIAG_SQRT else 1
    gauge = {Gauge.NONE: 0, Gauge.CHOICE1: 1, Gauge.CHOICE2: 2}[scheme.gauge]
    return dict(
        eps=np.ascontiguousarray(params.site_drive(), dtype=complex),
        kappa2=params.kappa2,
        onsite=np.ascontiguousarray(onsite, dtype=float),
        ridx=np.ascontiguousarray(ridx, dtype=np.int64),
        rcoef=np.ascontiguousarray(rcoef, dtype=complex),
        lidx=np.ascontiguousarray(lidx, dtype=np.int64),
        lcoef=np.ascontiguousarray(lcoef, dtype=complex),
        decomp=decomp,
        gauge=gauge,
    )


def advance_arrays(alpha, beta, weight, diverged_step, params, scheme, dt, seed, step0, nsteps,
                   *, threshold=DEFAULT_THRESHOLD, traj_offset=0, noise_scale=1.0,
                   n_threads=1, backend_name=None):
    """Advance contiguous trajectory arrays in place (thin wrapper over the kernel)."""
    kernel = backend.get(backend_name)
    kernel.advance(alpha, beta, weight, diverged_step, **_kernel_args(params, scheme),
                   dt=float(dt), noise_scale=float(noise_scale), seed=int(seed),
                   traj_offset=int(traj_offset), step0=int(step0), nsteps=int(nsteps),
                   threshold=float(threshold), nthreads=int(n_threads))


def initial_ensemble(config: RunConfig) -> Ensemble:
    """Sample the configured initial state for every trajectory."""
    m, n = config.n_trajectories, config.params.n_sites
    alpha = np.zeros((m, n), dtype=complex)
    beta = np.zeros((m, n), dtype=complex)
    weight = np.ones(m, dtype=complex)
    init = config.initial
    if init.kind == "coherent":
        alpha[:] = init.zeta
        beta[:] = init.zeta.conjugate()
    elif init.kind == "cat":
        alphas, betas, probs, weights = cat_atoms(init.zeta, init.sign)
        u, _ = uniform_pairs(config.seed, np.arange(m, dtype=np.uint64)[:, None], 0,
                             np.arange(n, dtype=np.uint64)[None, :], tag=TAG_INITIAL)
        atom = np.searchsorted(np.cumsum(probs)[:-1], u, side="right")
        alpha[:] = alphas[atom]
        beta[:] = betas[atom]
        weight[:] = np.prod(weights[atom], axis=1)
    return Ensemble(alpha, beta, weight, np.full(m, -1, dtype=np.int64),
                    config.n_subensembles, 0.0, config.scheme.gauged or init.sign == -1)


def evolve_weight(omega: complex, g, dw) -> complex:
    """Ito update of a trajectory weight: ``omega * (1 + sum_k g_k dW_k)``."""
    g = np.asarray(g)
    dw = np.asarray(dw)
    if g.shape != dw.shape:
        raise ContractError("gauge vector and increments must have the same length")
    return omega * (1.0 + np.sum(g * dw))


def step(state: TrajectoryState, config: RunConfig, noise_scale: float = 1.0) -> TrajectoryState:
    """One Euler-Maruyama step of a single trajectory.

    ``noise_scale`` multiplies every Wiener increment; 0 gives the
    deterministic drift flow.
    """
    if state.diverged_at is not None:
        raise ContractError("cannot step a diverged trajectory")
    if state.point.n_sites != config.params.n_sites:
        raise ContractError("trajectory does not match the model size")
    stream = state.stream or WienerStream(config.seed, 0)
    a = state.point.alpha.copy()[None, :]
    b = state.point.beta.copy()[None, :]
    w = np.array([state.weight], dtype=complex)
    div = np.array([-1], dtype=np.int64)
    advance_arrays(a, b, w, div, config.params, config.scheme, config.dt, stream.seed,
                   state.step_index, 1, threshold=config.divergence_threshold,
                   traj_offset=stream.trajectory, noise_scale=noise_scale,
                   backend_name=config.backend)
    diverged_at = None if div[0] < 0 else (div[0] + 1) * config.dt
    return TrajectoryState(PhasePoint(a[0], b[0]), complex(w[0]), stream,
                           state.step_index + (1 if diverged_at is None else 0), diverged_at)


@dataclass
class RunRecord:
    """Raw output of :func:`run_ensemble`."""

    config: RunConfig
    times: list = field(default_factory=list)
    n_diverged: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    status: str = "ok"
    final: Ensemble | None = None

    @property
    def divergence_fraction(self) -> np.ndarray:
        return np.asarray(self.n_diverged, dtype=float) / self.config.n_trajectories

    def divergence_times(self) -> np.ndarray:
        """Divergence time of every trajectory (``nan`` if it never diverged)."""
        d = self.final.diverged_step
        return np.where(d >= 0, (d + 1) * self.config.dt, np.nan)


Observer = Callable[[Ensemble], object]


def run_ensemble(config: RunConfig, observers: Sequence[Observer] = (),
                 ensemble: Ensemble | None = None) -> RunRecord:
    """Evolve the ensemble and feed every observer at each record time.

    Each observer is called with the live :class:`Ensemble` (do not keep a
    reference; copy if needed) and its return values are collected per
    record time in ``record.outputs[i][k]``.  The run stops early, with
    ``status == "diverged"``, once every trajectory has diverged.
    """
    ens = ensemble if ensemble is not None else initial_ensemble(config)
    record = RunRecord(config)
    current = 0
    for target in config.record_steps:
        if target > current:
            advance_arrays(ens.alpha, ens.beta, ens.weight, ens.diverged_step, config.params,
                           config.scheme, config.dt, config.seed, current, target - current,
                           threshold=config.divergence_threshold, n_threads=config.n_threads,
                           backend_name=config.backend)
            current = target
        ens.time = current * config.dt
        record.times.append(ens.time)
        record.n_diverged.append(int(np.count_nonzero(~ens.alive)))
        record.outputs.append([obs(ens) for obs in observers])
        if not ens.alive.any():
            record.status = "diverged"
            break
    record.final = ens
    return record
