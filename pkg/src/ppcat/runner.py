"""Experiment drivers: run a manifest, write its output files.

Each driver returns a :class:`RunOutcome`; a run in which every trajectory
diverged still writes what it has, marked ``status: incomplete``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimators import (
    ObservableSeries,
    RegimeLabel,
    classify_regime,
    collect_series,
    multimode_observables,
    single_mode_observables,
    spike_detect,
)
from .io import MatrixFile, RunManifest, Table, standard_meta, write_matrix, write_table
from .model import SCHEMES, ContractError, ModelParams
from .momentum import MomentumGrid, cauchy_schwarz_ratio, g2_antipropagating, momentum_occupations
from .oracle import (
    DEFAULT_MAX_DIM,
    default_cutoff,
    oracle_series,
)
from .reconstruction import FockDensityMatrix, reconstruct_density, trace_distance, wigner
from .sde import run_ensemble


@dataclass
class RunOutcome:
    files: list = field(default_factory=list)
    status: str = "complete"
    summary: dict = field(default_factory=dict)


# ------------------------------------------------------------ helpers
def _flatten_sim(obs: dict, n_sites: int) -> list:
    """``(name, mean, stderr)`` scalars of an observables dict."""
    out = []
    if n_sites == 1:
        for key in ("n", "zeta", "g2", "parity", "trace"):
            est = obs[key]
            if key == "zeta":
                out.append(("zeta_re", np.real(est.mean), est.stderr))
                out.append(("zeta_im", np.imag(est.mean), est.stderr))
            else:
                out.append((key, float(np.real(est.mean)), est.stderr))
        return out
    for j in range(n_sites):
        out.append((f"n_{j}", obs["n"].mean[j], obs["n"].stderr[j]))
        out.append((f"zeta_re_{j}", np.real(obs["zeta"].mean[j]), obs["zeta"].stderr[j]))
        out.append((f"zeta_im_{j}", np.imag(obs["zeta"].mean[j]), obs["zeta"].stderr[j]))
        out.append((f"parity_local_{j}", obs["parity_local"].mean[j], obs["parity_local"].stderr[j]))
        out.append((f"g2_{j}", obs["g2"].mean[j, j], obs["g2"].stderr[j, j]))
    out.append(("parity_global", obs["parity_global"].mean, obs["parity_global"].stderr))
    return out


def _flatten_oracle(obs: dict, n_sites: int) -> dict:
    if n_sites == 1:
        z = complex(obs["zeta"])
        return {"n": obs["n"], "zeta_re": z.real, "zeta_im": z.imag, "g2": obs["g2"],
                "parity": obs["parity"], "trace": obs["trace"]}
    out = {}
    for j in range(n_sites):
        out[f"n_{j}"] = obs["n"][j]
        out[f"zeta_re_{j}"] = np.real(obs["zeta"][j])
        out[f"zeta_im_{j}"] = np.imag(obs["zeta"][j])
        out[f"parity_local_{j}"] = obs["parity_local"][j]
        out[f"g2_{j}"] = obs["g2"][j, j]
    out["parity_global"] = obs["parity_global"]
    return out


def oracle_basis(manifest: RunManifest, params: ModelParams) -> str:
    basis = manifest.oracle.basis
    if basis == "auto":
        basis = "site" if params.n_sites == 1 else "momentum"
    return basis


def oracle_cutoffs(manifest: RunManifest, params: ModelParams, basis: str, initial=None):
    """Configured cutoffs, or a default that fits the dimension budget.

    In the momentum basis only the mode at ``k = phi`` gets the full cutoff;
    the others start at 2 and grow on demand.
    """
    cut = manifest.oracle.cutoff
    if cut is not None:
        return cut[0] if len(cut) == 1 else list(cut)
    n = params.n_sites
    if n == 1:
        if initial is not None and initial.kind != "vacuum":
            return None  # oracle_series sizes it for the initial state
        return default_cutoff(params)
    if basis == "site":
        per = int(round(DEFAULT_MAX_DIM ** (1.0 / n))) - 1
        return [max(1, min(default_cutoff(params), per))] * n
    grid = MomentumGrid(n, params.phi)
    x = n * abs(2.0 * params.epsilon / params.kappa2) if params.kappa2 > 0 else 20.0
    dark = int(math.ceil(x + 5.0 * math.sqrt(x)))
    dark = min(dark, DEFAULT_MAX_DIM // 3 ** (n - 1) - 1)
    cuts = [2] * n
    cuts[grid.dark_index] = max(dark, 2)
    return cuts


def run_oracle_on(manifest: RunManifest, params: ModelParams, times, initial=None):
    """Oracle observables at the ``times`` within the oracle horizon."""
    times = np.asarray(times, dtype=float)
    horizon = manifest.oracle.t_final if manifest.oracle.t_final is not None else times.max()
    grid = times[times <= horizon + 1e-12]
    basis = oracle_basis(manifest, params)
    cutoff = oracle_cutoffs(manifest, params, basis, initial)
    run = oracle_series(params, grid, cutoff=cutoff, basis=basis, grow=manifest.oracle.grow,
                        initial=initial)
    return grid, run


def _series_columns(times, flat_per_time, subensembles):
    """Columns ``name, name_stderr, name_spike`` for every flattened scalar."""
    names = [item[0] for item in flat_per_time[0]]
    columns, data = [], []
    for k, name in enumerate(names):
        mean = np.array([float(row[k][1]) for row in flat_per_time])
        err = np.array([float(row[k][2]) for row in flat_per_time])
        clean = np.where(np.isnan(err), 0.0, err)
        if len(times) >= 3:
            flags = spike_detect(ObservableSeries(times, mean, clean, subensembles))
        else:
            flags = ~np.isfinite(mean)
        columns += [name, f"{name}_stderr", f"{name}_spike"]
        data += [mean, err, flags.astype(float)]
    return columns, data


def _observer(n_sites):
    return single_mode_observables if n_sites == 1 else multimode_observables


def _out(manifest: RunManifest, name: str) -> Path:
    return Path(manifest.output_dir) / name


# ------------------------------------------------------------ experiments
def run_transient(manifest: RunManifest) -> RunOutcome:
    """Observable time series with errors, spike flags and oracle columns."""
    cfg = manifest.config
    n = cfg.params.n_sites
    record = run_ensemble(cfg, [_observer(n)])
    times = np.asarray(record.times)
    flat = [_flatten_sim(out[0], n) for out in record.outputs]
    columns, data = _series_columns(times, flat, cfg.n_subensembles)
    columns = ["time", "divergence_fraction"] + columns
    data = [times, record.divergence_fraction] + data
    extra = {}
    if manifest.oracle_enabled:
        grid, run = run_oracle_on(manifest, cfg.params, times, cfg.initial)
        ref = [_flatten_oracle(o, n) for o in run.observations]
        for name in ref[0]:
            col = np.full(times.size, np.nan)
            col[:grid.size] = [r[name] for r in ref]
            columns.append(f"oracle_{name}")
            data.append(col)
        extra["oracle_cutoffs"] = " ".join(str(c) for c in run.system.cutoffs)
        extra["oracle_basis"] = run.system.basis
    status = "complete" if record.status == "ok" else "incomplete"
    table = Table(columns, np.column_stack(data).tolist(), standard_meta(manifest, status, **extra))
    path = write_table(_out(manifest, "transient.csv"), table)
    return RunOutcome([path], status, {"divergence_fraction": float(record.divergence_fraction[-1])})


def point_seed(seed: int, index: int) -> int:
    """Deterministic per-point seed derived from the master seed."""
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def _regime_point(manifest: RunManifest, index: int, k1: float, k2: float):
    cfg = manifest.config
    params = ModelParams(1, cfg.params.epsilon, k1, k2)
    run_cfg = cfg.replace(params=params, seed=point_seed(cfg.seed, index),
                          record_times=cfg.record_times)
    record = run_ensemble(run_cfg, [single_mode_observables])
    sim = {name: collect_series(record, name) for name in ("n", "zeta", "g2", "parity")}
    row = {"divergence_fraction": float(record.divergence_fraction[-1])}
    if not manifest.oracle_enabled:
        return "unclassified", "oracle disabled", row
    grid, run = run_oracle_on(manifest, params, record.times, cfg.initial)
    if grid.size != len(record.times):
        raise ContractError("classification needs the oracle over the whole run")
    ref = {
        "n": np.array([o["n"] for o in run.observations]),
        "zeta": np.array([o["zeta"] for o in run.observations]),
        "g2": np.array([o["g2"] for o in run.observations]),
        "parity": np.array([o["parity"] for o in run.observations]),
    }
    diag = classify_regime(params, sim, ref, comparison_time=manifest.sweep.comparison_time)
    row.update(
        first_steady_match=np.nan if diag.first_steady_match is None else diag.first_steady_match,
        first_majority_divergence=(np.nan if diag.first_majority_divergence is None
                                   else diag.first_majority_divergence),
        g2_snr=diag.g2_snr,
        parity_spikes=diag.parity_spikes,
    )
    return diag.label.value, diag.reason, row


def run_regime_sweep(manifest: RunManifest) -> RunOutcome:
    """One regime label per ``(kappa1, kappa2)`` point; failures are recorded per point."""
    if manifest.config.params.n_sites != 1:
        raise ContractError("the regime sweep is defined for a single mode")
    columns = ["index", "kappa1", "kappa2", "label", "divergence_fraction", "first_steady_match",
               "first_majority_divergence", "g2_snr", "parity_spikes", "reason"]
    rows = []
    labels = []
    for i, (k1, k2) in enumerate(manifest.sweep.points()):
        try:
            label, reason, info = _regime_point(manifest, i, k1, k2)
        except Exception as exc:  # recorded, sweep continues
            label, reason, info = "error", f"{type(exc).__name__}: {exc}", {}
        labels.append(label)
        rows.append([i, k1, k2, label, info.get("divergence_fraction", np.nan),
                     info.get("first_steady_match", np.nan),
                     info.get("first_majority_divergence", np.nan), info.get("g2_snr", np.nan),
                     info.get("parity_spikes", np.nan), reason.replace("\n", " ")])
    meta = standard_meta(manifest, "complete",
                         labels=" ".join(label.value for label in RegimeLabel))
    path = write_table(_out(manifest, "regime_map.csv"), Table(columns, rows, meta))
    return RunOutcome([path], "complete", {"labels": labels})


def first_flag_time(times, divergence_fraction, spike_flags) -> float:
    """Earliest record time with a diverged trajectory or a spike flag (``nan`` if none)."""
    bad = (np.asarray(divergence_fraction) > 0) | np.asarray(spike_flags, dtype=bool)
    hit = np.flatnonzero(bad)
    return float(np.asarray(times)[hit[0]]) if hit.size else float("nan")


def run_parity_decay(manifest: RunManifest) -> RunOutcome:
    """Parity against time for each scheme, with divergence and flag times."""
    cfg = manifest.config
    if cfg.params.n_sites != 1:
        raise ContractError("the parity-decay comparison is defined for a single mode")
    if cfg.initial.kind != "cat":
        raise ContractError("initial.kind: the parity-decay experiment starts from a cat state")
    columns = ["time"]
    data = []
    summary_rows = []
    times = None
    status = "complete"
    for name in manifest.schemes:
        record = run_ensemble(cfg.replace(scheme=SCHEMES[name], record_times=cfg.record_times),
                              [single_mode_observables])
        t = np.asarray(record.times)
        if times is None:
            times = np.asarray(cfg.record_times)
            data.append(times)
        series = {k: collect_series(record, k) for k in ("n", "g2", "parity")}
        spikes = np.zeros(t.size, dtype=bool)
        for s in series.values():
            spikes |= s.spike_flags
        pad = times.size - t.size
        if pad:
            status = "incomplete"

        def padded(x):
            return np.concatenate([np.asarray(x, dtype=float), np.full(pad, np.nan)])

        columns += [f"{name}_parity", f"{name}_parity_stderr", f"{name}_spike",
                    f"{name}_divergence_fraction"]
        data += [padded(series["parity"].mean), padded(series["parity"].stderr),
                 padded(spikes), padded(record.divergence_fraction)]
        div_times = record.divergence_times()
        finite = div_times[np.isfinite(div_times)]
        summary_rows.append([
            name,
            float(finite.min()) if finite.size else np.nan,
            float(np.median(finite)) if finite.size else np.nan,
            float(record.divergence_fraction[-1]),
            first_flag_time(t, record.divergence_fraction, spikes),
        ])
    if manifest.oracle_enabled:
        grid, run = run_oracle_on(manifest, cfg.params, times, cfg.initial)
        col = np.full(times.size, np.nan)
        col[:grid.size] = [o["parity"] for o in run.observations]
        columns.append("oracle_parity")
        data.append(col)
    meta = standard_meta(manifest, status)
    series_path = write_table(_out(manifest, "parity_decay.csv"),
                              Table(columns, np.column_stack(data).tolist(), meta))
    summary_path = write_table(
        _out(manifest, "divergence_times.csv"),
        Table(["scheme", "first_divergence", "median_divergence", "diverged_fraction",
               "first_flag"], summary_rows, meta),
    )
    return RunOutcome([series_path, summary_path], status,
                      {row[0]: {"first_divergence": row[1], "first_flag": row[4]}
                       for row in summary_rows})


def run_momentum_scan(manifest: RunManifest) -> RunOutcome:
    """Momentum-space occupations and pair correlations at the final time."""
    cfg = manifest.config
    if cfg.params.n_sites < 2:
        raise ContractError("the momentum scan needs n_sites >= 2")
    record = run_ensemble(cfg)
    ens = record.final
    status = "complete" if record.status == "ok" else "incomplete"
    grid = MomentumGrid(cfg.params.n_sites, cfg.params.phi)
    occ = momentum_occupations(ens, grid)
    columns = ["k", "n_k", "n_k_stderr", "ratio", "ratio_stderr", "ratio_low_snr",
               "g2", "g2_stderr", "g2_low_snr", "g2_unnormalized", "g2_unnormalized_stderr",
               "rcs", "rcs_stderr", "rcs_low_snr", "rcs_full", "rcs_full_stderr"]
    rows = []
    for i, k in enumerate(grid.k_values):
        pair = g2_antipropagating(ens, k, grid)
        rcs = cauchy_schwarz_ratio(ens, k, grid)
        full = cauchy_schwarz_ratio(ens, k, grid, ordering="full")
        rows.append([k, occ.n_k.mean[i], occ.n_k.stderr[i], occ.ratio.mean[i], occ.ratio.stderr[i],
                     occ.low_snr, pair.g2.mean, pair.g2.stderr, pair.g2.flag,
                     pair.g2_unnormalized.mean, pair.g2_unnormalized.stderr,
                     rcs.mean, rcs.stderr, rcs.flag, full.mean, full.stderr])
    meta = standard_meta(manifest, status, time=repr(float(ens.time)),
                         dark_index=grid.dark_index)
    path = write_table(_out(manifest, "momentum.csv"), Table(columns, rows, meta))
    return RunOutcome([path], status, {"dark_index": grid.dark_index})


def run_reconstruct(manifest: RunManifest) -> RunOutcome:
    """Reduced density matrix and Wigner function of one mode at the final time."""
    cfg = manifest.config
    opts = manifest.reconstruct
    record = run_ensemble(cfg)
    ens = record.final
    status = "complete" if record.status == "ok" else "incomplete"
    n = cfg.params.n_sites
    site, k = opts.site, opts.k
    if site is None and k is None:
        if n == 1:
            site = 0
        else:
            k = float(MomentumGrid(n, cfg.params.phi).k_values[
                MomentumGrid(n, cfg.params.phi).dark_index])
    rho = reconstruct_density(ens, opts.cutoff, site=site, k=k,
                              grid=MomentumGrid(n, cfg.params.phi))
    extra = {"time": repr(float(ens.time)), "trace": repr(rho.trace.real),
             "hermiticity_deviation": repr(rho.hermiticity_deviation),
             "mode": f"site {site}" if site is not None else f"k {k!r}"}
    files = []
    if manifest.oracle_enabled and n == 1:
        basis = oracle_basis(manifest, cfg.params)
        ref = oracle_series(cfg.params, [ens.time], oracle_cutoffs(manifest, cfg.params, basis,
                                                                   cfg.initial),
                            basis, grow=manifest.oracle.grow, initial=cfg.initial,
                            keep_states=True)
        ref_rho = FockDensityMatrix(ref.states[-1])
        extra["trace_distance_oracle"] = repr(trace_distance(
            FockDensityMatrix(rho.elements / rho.trace), ref_rho))
        files.append(write_matrix(_out(manifest, "rho_oracle.txt"),
                                  MatrixFile(ref_rho.elements, standard_meta(manifest, status))))
    meta = standard_meta(manifest, status, **extra)
    files.insert(0, write_matrix(_out(manifest, "rho.txt"), MatrixFile(rho.elements, meta)))
    axis = np.linspace(-opts.extent, opts.extent, opts.points)
    w = wigner(rho, axis)
    files.append(write_matrix(_out(manifest, "wigner.txt"),
                              MatrixFile(w.values, meta, {"x": axis, "p": axis})))
    return RunOutcome(files, status, {"trace": rho.trace.real})


def run_oracle_only(manifest: RunManifest) -> RunOutcome:
    """Oracle observables on the record-time grid (reference curves)."""
    cfg = manifest.config
    n = cfg.params.n_sites
    grid, run = run_oracle_on(manifest, cfg.params, cfg.record_times, cfg.initial)
    ref = [_flatten_oracle(o, n) for o in run.observations]
    columns = ["time"] + list(ref[0])
    rows = [[t] + [r[name] for name in ref[0]] for t, r in zip(grid, ref)]
    meta = standard_meta(manifest, "complete",
                         oracle_cutoffs=" ".join(str(c) for c in run.system.cutoffs),
                         oracle_basis=run.system.basis,
                         max_trace_drift=repr(float(np.max(np.abs(run.trace_drift)))))
    path = write_table(_out(manifest, "oracle.csv"), Table(columns, rows, meta))
    return RunOutcome([path], "complete", {"cutoffs": run.system.cutoffs})


EXPERIMENT_RUNNERS = {
    "transient": run_transient,
    "regime_sweep": run_regime_sweep,
    "parity_decay": run_parity_decay,
    "momentum_scan": run_momentum_scan,
    "reconstruct": run_reconstruct,
}
