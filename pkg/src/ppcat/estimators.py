"""Observables, subensemble errors and stability diagnostics.

Every estimator works on an :class:`~ppcat.sde.Ensemble` snapshot.  The
trajectories are split into ``s`` contiguous subensembles; an observable is
evaluated on each subensemble's moment averages, and its mean and standard
error are taken over those ``s`` values.  Diverged trajectories are dropped
from every average.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .model import ContractError, ModelParams

SPIKE_FACTOR = 8.0
SPIKE_WINDOW = 16
AGREEMENT_FLOOR = 1e-2
SNR_MIN = 3.0


class RegimeLabel(str, enum.Enum):
    UNSTABLE_ORANGE = "unstable_orange"
    PARITY_DECAY_BLUE = "parity_decay_blue"
    STABLE_GREEN = "stable_green"
    LOW_SNR_YELLOWGREEN = "low_snr_yellowgreen"


@dataclass(frozen=True)
class Estimate:
    """Mean and subensemble standard error of one observable.

    ``mean`` may be real or complex, scalar or array.  For complex values the
    error is the modulus error ``sqrt(se_re**2 + se_im**2)``.  ``flag`` marks
    entries whose value is undefined (a vanishing denominator).
    """

    mean: object
    stderr: object
    flag: object = False

    @property
    def snr(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(self.mean) / np.asarray(self.stderr)


def _spread(values: np.ndarray):
    """Mean and standard error over the leading (subensemble) axis.

    Subensembles with no surviving trajectory (non-finite value) are
    skipped; fewer than two valid subensembles gives a ``nan`` error.
    """
    values = np.asarray(values)
    finite = np.isfinite(values)
    count = finite.sum(axis=0)
    # shift by the first finite entry: identical inputs then give exactly zero spread
    first = np.argmax(finite, axis=0)
    ref = np.take_along_axis(values, np.expand_dims(first, 0), axis=0)[0]
    ref = np.where(np.isfinite(ref), ref, 0)
    shifted = np.where(finite, values - ref, 0)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        offset = shifted.sum(axis=0) / count
        mean = ref + offset
        dev = np.where(finite, np.abs(shifted - offset) ** 2, 0.0)
        # population variance of the s means, then / (s - 1)
        err = np.sqrt(dev.sum(axis=0) / count / (count - 1))
    mean = np.where(count > 0, mean, np.nan)
    err = np.where(count > 1, err, np.nan)
    if mean.ndim == 0:
        mean = mean[()]
        err = float(err)
    return mean, err


def subensemble_error(values, s: int):
    """Mean and ``sigma_SE`` of per-trajectory ``values`` split into ``s`` blocks.

    ``sigma_SE = sqrt(var(O_j) / (s - 1))`` with ``var`` the spread of the
    ``s`` block means about their average (normalized by ``s``).
    """
    values = np.asarray(values)
    if s < 2:
        raise ContractError("at least two subensembles are required")
    if values.shape[0] % s:
        raise ContractError(f"{values.shape[0]} values cannot be split into {s} equal subensembles")
    blocks = values.reshape((s, -1) + values.shape[1:]).mean(axis=1)
    return _spread(blocks)


def subensemble_means(ensemble, values: np.ndarray, weighted: bool = False) -> np.ndarray:
    """Per-subensemble averages of ``values`` over live trajectories.

    ``values`` has the trajectory index first.  With ``weighted`` each
    trajectory contributes ``weight * value`` and the average is still
    normalized by the live trajectory count.
    """
    values = np.asarray(values)
    s = ensemble.n_subensembles
    alive = ensemble.alive
    extra = (1,) * (values.ndim - 1)
    factor = alive.astype(float)
    if weighted:
        factor = ensemble.weight * factor
    with np.errstate(invalid="ignore", over="ignore"):
        contrib = np.where(alive.reshape((-1,) + extra), values * factor.reshape((-1,) + extra), 0)
    sums = contrib.reshape((s, -1) + values.shape[1:]).sum(axis=1)
    counts = alive.reshape(s, -1).sum(axis=1).reshape((s,) + extra)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def _ratio(num, den):
    with np.errstate(invalid="ignore", divide="ignore"):
        return num / den


def _parity_factor(x):
    with np.errstate(over="ignore", invalid="ignore"):
        return np.exp(-2.0 * x)


def _resolve_weighted(ensemble, weighted):
    return ensemble.weighted if weighted is None else bool(weighted)


def single_mode_observables(ensemble, weighted: bool | None = None) -> dict:
    """``n``, ``zeta``, ``g2``, ``parity`` and ``trace`` with subensemble errors.

    ``weighted=None`` follows the ensemble (gauged runs and signed cat
    samples are weighted).  ``trace`` is the mean weight, 1 when unweighted.
    """
    if ensemble.n_sites != 1:
        raise ContractError("single_mode_observables needs a single-mode ensemble")
    if ensemble.n_subensembles < 2:
        raise ContractError("at least two subensembles are required")
    w = _resolve_weighted(ensemble, weighted)
    a = ensemble.alpha[:, 0]
    b = ensemble.beta[:, 0]
    ab = a * b
    moments = np.stack(
        [ab, a * a, ab * ab, _parity_factor(ab), np.ones_like(ab)], axis=1
    )
    m = subensemble_means(ensemble, moments, w)
    n = m[:, 0].real
    zeta = np.sqrt(m[:, 1])
    g2 = _ratio(m[:, 2].real, n * n)
    parity = m[:, 3].real
    trace = m[:, 4].real
    out = {}
    for name, vals in (("n", n), ("zeta", zeta), ("g2", g2), ("parity", parity), ("trace", trace)):
        mean, err = _spread(vals)
        out[name] = Estimate(mean, err)
    n_mean = out["n"].mean
    if not np.isfinite(out["g2"].mean) or n_mean == 0:
        out["g2"] = Estimate(np.nan, np.nan, True)
    return out


def multimode_observables(ensemble, weighted: bool | None = None) -> dict:
    """Per-site and pairwise observables of an ``N >= 2`` ensemble.

    Keys: ``n``, ``zeta``, ``parity_local`` (length ``N``), ``g1``, ``g2``
    (``N x N``, ``g1[j, j']`` built from ``<alpha_j' beta_j>``) and
    ``parity_global``.
    """
    if ensemble.n_sites < 2:
        raise ContractError("multimode_observables needs N >= 2")
    if ensemble.n_subensembles < 2:
        raise ContractError("at least two subensembles are required")
    w = _resolve_weighted(ensemble, weighted)
    a, b = ensemble.alpha, ensemble.beta
    nsite = a.shape[1]
    ab = a * b
    s = ensemble.n_subensembles
    alive = ensemble.alive
    factor = alive.astype(float) * (ensemble.weight if w else 1.0)
    factor = np.where(alive, factor, 0)
    counts = alive.reshape(s, -1).sum(axis=1).astype(float)

    def block_mean(x):
        with np.errstate(invalid="ignore", over="ignore"):
            x = np.where(alive.reshape((-1,) + (1,) * (x.ndim - 1)), x, 0)
        sums = x.reshape((s, -1) + x.shape[1:]).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = counts.reshape((s,) + (1,) * (x.ndim - 1))
            return np.where(c > 0, sums / np.maximum(c, 1), np.nan)

    fa = a * factor[:, None]
    fab = ab * factor[:, None]
    m_ab = block_mean(fab)
    m_aa = block_mean(a * fa)
    m_par = block_mean(_parity_factor(ab) * factor[:, None])
    m_glob = block_mean(_parity_factor(ab.sum(axis=1)) * factor)
    per = a.shape[0] // s
    # <alpha_j' beta_j> -> [s, j, j']
    m_g1 = np.einsum("smj,smk->sjk", b.reshape(s, per, nsite), fa.reshape(s, per, nsite))
    m_g2 = np.einsum("smj,smk->sjk", ab.reshape(s, per, nsite), fab.reshape(s, per, nsite))
    with np.errstate(invalid="ignore", divide="ignore"):
        m_g1 = m_g1 / counts[:, None, None]
        m_g2 = m_g2 / counts[:, None, None]

    n = m_ab.real
    # <a_j^dag a_j> is real: its imaginary sampling noise is dropped on the diagonal
    diag = np.arange(nsite)
    m_g1[:, diag, diag] = n
    norm = n[:, :, None] * n[:, None, :]
    g1 = _ratio(m_g1, np.sqrt(norm.astype(complex)))
    g2 = _ratio(m_g2.real, norm)
    out = {}
    for name, vals in (("n", n), ("zeta", np.sqrt(m_aa)), ("parity_local", m_par.real),
                       ("g1", g1), ("g2", g2), ("parity_global", m_glob.real)):
        mean, err = _spread(vals)
        out[name] = Estimate(mean, err)
    bad = ~(np.asarray(out["n"].mean) > 0)
    pair_bad = bad[:, None] | bad[None, :]
    out["g1"] = Estimate(out["g1"].mean, out["g1"].stderr, pair_bad)
    out["g2"] = Estimate(out["g2"].mean, out["g2"].stderr, pair_bad)
    return out


def stability_rates(params: ModelParams, ensemble) -> np.ndarray:
    """Drift-only ``dI/dt`` of every live single-mode trajectory."""
    if params.n_sites != 1 or ensemble.n_sites != 1:
        raise ContractError("the stability diagnostic is defined for a single mode only")
    a = ensemble.alpha[ensemble.alive, 0]
    b = ensemble.beta[ensemble.alive, 0]
    eps = params.site_drive()[0]
    intensity = np.abs(a) ** 2 + np.abs(b) ** 2
    return (8.0 * (eps * a.conj() * b).imag - params.kappa1 * intensity
            - 2.0 * params.kappa2 * intensity * (a * b).real)


@dataclass
class ObservableSeries:
    """Time series of one observable with subensemble errors and flags."""

    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    subensembles: int
    spike_flags: np.ndarray = None
    divergence_fraction: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.mean = np.asarray(self.mean)
        self.stderr = np.asarray(self.stderr, dtype=float)
        n = self.times.size
        if self.spike_flags is None:
            self.spike_flags = np.zeros(n, dtype=bool)
        if self.divergence_fraction is None:
            self.divergence_fraction = np.zeros(n)
        self.spike_flags = np.asarray(self.spike_flags, dtype=bool)
        self.divergence_fraction = np.asarray(self.divergence_fraction, dtype=float)
        lengths = {self.mean.shape[0], self.stderr.shape[0], self.spike_flags.shape[0],
                   self.divergence_fraction.shape[0]}
        if lengths != {n}:
            raise ContractError("all ObservableSeries fields must have one entry per time")
        if np.any(self.stderr < 0):
            raise ContractError("stderr must be non-negative")

    def __len__(self):
        return self.times.size


def collect_series(record, key: str, observer_index: int = 0, select=None, name=None,
                   detect_spikes: bool = True) -> ObservableSeries:
    """Build an :class:`ObservableSeries` from a run record.

    ``record.outputs[i][observer_index]`` must be a dict of :class:`Estimate`;
    ``select`` picks an element of array-valued estimates (e.g. a site index).
    """
    means, errs = [], []
    for out in record.outputs:
        est = out[observer_index][key]
        m, e = est.mean, est.stderr
        if select is not None:
            m, e = np.asarray(m)[select], np.asarray(e)[select]
        means.append(m)
        errs.append(e)
    errs = np.asarray(errs, dtype=float)
    series = ObservableSeries(record.times, np.asarray(means), np.where(np.isnan(errs), 0.0, errs),
                              record.config.n_subensembles,
                              divergence_fraction=record.divergence_fraction,
                              name=name or key)
    series.stderr_valid = ~np.isnan(errs)
    if detect_spikes and len(series) >= 3 and np.ndim(series.mean) == 1:
        series.spike_flags = spike_detect(series)
    return series


def spike_detect(series: ObservableSeries, factor: float = SPIKE_FACTOR,
                 window: int = SPIKE_WINDOW, min_history: int = 4) -> np.ndarray:
    """Flag abrupt excursions of a series and of its standard error.

    Point ``i`` is flagged when ``|x_i - median(W)| > factor * (MAD(W) + se_i)``
    for the trailing window ``W`` of up to ``window`` earlier points, when
    ``se_i`` differs from ``se_{i-1}`` by more than ``factor`` (either way), or
    when the value or its error is not finite.  Comparisons start once
    ``min_history`` earlier points exist.
    """
    if len(series) < 3:
        raise ContractError("spike detection needs at least three points")
    x = np.asarray(series.mean)
    x = x.real if np.iscomplexobj(x) else x.astype(float)
    se = np.asarray(series.stderr, dtype=float)
    flags = ~(np.isfinite(x) & np.isfinite(se))
    for i in range(min_history, x.size):
        if flags[i]:
            continue
        hist = x[max(0, i - window):i]
        hist = hist[np.isfinite(hist)]
        if hist.size >= min_history:
            med = np.median(hist)
            mad = np.median(np.abs(hist - med))
            if abs(x[i] - med) > factor * (mad + se[i]):
                flags[i] = True
                continue
        prev = se[i - 1]
        if np.isfinite(prev) and prev > 0 and se[i] > 0:
            ratio = se[i] / prev
            if ratio > factor or ratio < 1.0 / factor:
                flags[i] = True
    return flags


def agreement(sim: ObservableSeries, reference, floor: float = AGREEMENT_FLOOR,
              nsigma: float = 3.0) -> np.ndarray:
    """Per-time agreement of a simulated series with reference values.

    The band is ``max(nsigma * se, floor)``.  Complex values are compared by
    modulus of the difference.
    """
    ref = np.asarray(reference)
    diff = np.abs(np.asarray(sim.mean) - ref)
    band = np.maximum(nsigma * sim.stderr, floor)
    with np.errstate(invalid="ignore"):
        return diff <= band


@dataclass
class RegimeDiagnostics:
    label: RegimeLabel
    matches: dict = field(default_factory=dict)
    first_steady_match: float | None = None
    first_majority_divergence: float | None = None
    g2_snr: float = np.nan
    parity_spikes: int = 0
    reason: str = ""


def classify_regime(params: ModelParams, sim_series: dict, oracle_series: dict,
                    steady_values: dict | None = None, comparison_time: float | None = None,
                    floor: float = AGREEMENT_FLOOR) -> RegimeDiagnostics:
    """Assign a stability regime to a single-mode run.

    ``sim_series`` maps ``n, zeta, g2, parity`` to :class:`ObservableSeries`;
    ``oracle_series`` maps the same names to exact values on the same time
    grid.  ``steady_values`` (default: the last oracle values) are the
    steady-state targets used for the divergence test.

    Rules, in order: majority divergence before the observables first settle
    on the steady values (or ``n, zeta, g2`` never tracking the oracle) is
    ``unstable_orange``; a ``g2`` signal-to-noise below 3 at the comparison
    time is ``low_snr_yellowgreen``; a parity mismatch or spike with the
    other three matching is ``parity_decay_blue``; otherwise ``stable_green``.
    """
    if params.n_sites != 1:
        raise ContractError("regime classification is defined for a single mode")
    if oracle_series is None:
        raise ContractError("an oracle reference is required")
    names = ("n", "zeta", "g2", "parity")
    for name in names:
        if name not in sim_series or name not in oracle_series:
            raise ContractError(f"missing series {name!r}")
    times = sim_series["n"].times
    for name in names:
        if np.asarray(oracle_series[name]).shape[0] != times.size:
            raise ContractError("oracle series must share the simulation time grid")
    if steady_values is None:
        steady_values = {k: np.asarray(oracle_series[k])[-1] for k in names}
    idx = times.size - 1 if comparison_time is None else int(np.argmin(np.abs(times - comparison_time)))

    div = sim_series["n"].divergence_fraction
    majority = np.flatnonzero(div > 0.5)
    t_major = float(times[majority[0]]) if majority.size else None

    steady = np.ones(times.size, dtype=bool)
    for name in ("n", "zeta", "g2"):
        steady &= agreement(sim_series[name], np.full(times.size, steady_values[name]), floor)
    hits = np.flatnonzero(steady)
    t_steady = float(times[hits[0]]) if hits.size else None

    matches = {name: agreement(sim_series[name], oracle_series[name], floor) for name in names}
    g2_est = sim_series["g2"]
    with np.errstate(divide="ignore", invalid="ignore"):
        g2_snr = float(np.abs(g2_est.mean[idx]) / g2_est.stderr[idx]) if g2_est.stderr[idx] > 0 else (
            np.inf if np.isfinite(g2_est.mean[idx]) else 0.0)
    spikes = int(np.count_nonzero(sim_series["parity"].spike_flags))
    diag = RegimeDiagnostics(RegimeLabel.STABLE_GREEN, matches, t_steady, t_major, g2_snr, spikes)

    upto = slice(0, idx + 1)
    core_ok = all(np.all(matches[name][upto]) for name in ("n", "zeta"))
    g2_ok = bool(np.all(matches["g2"][upto] | ~np.isfinite(np.asarray(oracle_series["g2"])[upto])))
    if t_major is not None and (t_steady is None or t_major <= t_steady):
        diag.label = RegimeLabel.UNSTABLE_ORANGE
        diag.reason = "majority of trajectories diverged before reaching the steady state"
    elif not np.isfinite(g2_snr) or g2_snr < SNR_MIN:
        diag.label = RegimeLabel.LOW_SNR_YELLOWGREEN
        diag.reason = f"g2 signal-to-noise {g2_snr:.3g} below {SNR_MIN}"
    elif not (core_ok and g2_ok):
        diag.label = RegimeLabel.UNSTABLE_ORANGE
        diag.reason = "n, zeta or g2 left the oracle band"
    elif not np.all(matches["parity"][upto]) or spikes:
        diag.label = RegimeLabel.PARITY_DECAY_BLUE
        diag.reason = "parity departs from the oracle while n, zeta, g2 agree"
    else:
        diag.reason = "all observables agree with the oracle"
    return diag
