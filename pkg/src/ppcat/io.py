"""Run manifests and output files.

Manifests are INI files (``configparser``) with the sections ``[run]``,
``[model]``, ``[scheme]``, ``[initial]``, ``[oracle]`` and one optional
section per experiment.  Values resolve as flags > file > defaults.

Outputs are plain text.  Tables are UTF-8 CSV preceded by ``#`` comment
lines that carry the format version, the resolved manifest (as one JSON
line) and the run status.  Matrices (density matrices, Wigner grids) use
one row per line, entries separated by spaces, complex entries written as
``re,im``.  Every float is written with ``repr`` so files round-trip
exactly.
"""

from __future__ import annotations

import configparser
import csv
import io as _io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import SCHEMES, Boundary, ContractError, ModelParams
from .sde import DEFAULT_THRESHOLD, InitialState, RunConfig

FORMAT_VERSION = 1
EXPERIMENTS = ("transient", "regime_sweep", "parity_decay", "momentum_scan", "reconstruct")
SCHEME_NAMES = ("PP1", "GP1", "PP2", "GP2")


class ConfigError(ContractError):
    """An invalid manifest value; ``path`` is the ``section.key`` at fault."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class OracleOptions:
    """Fock-oracle settings; ``cutoff=None`` picks the default cutoff."""

    cutoff: tuple | None = None
    basis: str = "auto"
    grow: int = 5
    t_final: float | None = None


@dataclass(frozen=True)
class SweepOptions:
    """Sweep points: the product ``kappa1 x kappa2``, or zipped pairs."""

    kappa1: tuple = (1e-3, 1e-3, 5.0)
    kappa2: tuple = (1.0, 0.2, 0.2)
    pairs: bool = True
    comparison_time: float | None = None

    def points(self) -> list[tuple[float, float]]:
        if self.pairs:
            if len(self.kappa1) != len(self.kappa2):
                raise ConfigError("sweep.kappa2", "paired sweeps need equally long lists")
            return list(zip(self.kappa1, self.kappa2))
        return [(a, b) for a in self.kappa1 for b in self.kappa2]


@dataclass(frozen=True)
class ReconstructOptions:
    cutoff: int = 30
    site: int | None = None
    k: float | None = None
    extent: float = 4.0
    points: int = 81


@dataclass(frozen=True)
class RunManifest:
    experiment: str
    config: RunConfig
    oracle_enabled: bool = True
    output_dir: str = "."
    format_version: int = FORMAT_VERSION
    oracle: OracleOptions = OracleOptions()
    sweep: SweepOptions = SweepOptions()
    schemes: tuple = SCHEME_NAMES
    reconstruct: ReconstructOptions = ReconstructOptions()

    def to_dict(self, runtime: bool = True) -> dict:
        """Fully resolved manifest as plain JSON-compatible values.

        ``runtime=False`` drops the thread count and output directory, which
        do not change results (outputs stay byte-identical across them).
        """
        cfg = self.config
        p = cfg.params
        out = {
            "format_version": self.format_version,
            "experiment": self.experiment,
            "run": {
                "seed": int(cfg.seed),
                "trajectories": cfg.n_trajectories,
                "subensembles": cfg.n_subensembles,
                "dt": cfg.dt,
                "t_final": cfg.t_final,
                "record_times": list(cfg.record_times),
                "divergence_threshold": cfg.divergence_threshold,
                "threads": cfg.n_threads,
                "oracle": self.oracle_enabled,
                "output_dir": str(self.output_dir),
            },
            "model": {
                "n_sites": p.n_sites,
                "epsilon": _cplx_out(p.epsilon),
                "kappa1": p.kappa1,
                "kappa2": p.kappa2,
                "gamma": p.gamma,
                "phi": p.phi,
                "boundary": p.boundary.value,
            },
            "scheme": {"name": cfg.scheme.label},
            "initial": {
                "kind": cfg.initial.kind,
                "zeta": _cplx_out(cfg.initial.zeta),
                "sign": cfg.initial.sign,
            },
            "oracle": {
                "cutoff": None if self.oracle.cutoff is None else list(self.oracle.cutoff),
                "basis": self.oracle.basis,
                "grow": self.oracle.grow,
                "t_final": self.oracle.t_final,
            },
            "sweep": {
                "kappa1": list(self.sweep.kappa1),
                "kappa2": list(self.sweep.kappa2),
                "pairs": self.sweep.pairs,
                "comparison_time": self.sweep.comparison_time,
            },
            "parity_decay": {"schemes": list(self.schemes)},
            "reconstruct": {
                "cutoff": self.reconstruct.cutoff,
                "site": self.reconstruct.site,
                "k": self.reconstruct.k,
                "extent": self.reconstruct.extent,
                "points": self.reconstruct.points,
            },
        }
        if not runtime:
            del out["run"]["threads"], out["run"]["output_dir"]
        return out

    def to_json(self) -> str:
        """One-line JSON of the result-determining settings (embedded in outputs)."""
        return json.dumps(self.to_dict(runtime=False), sort_keys=True, separators=(",", ":"))


def _cplx_out(z: complex):
    z = complex(z)
    return z.real if z.imag == 0 else [z.real, z.imag]


# ------------------------------------------------------------ manifest parsing
def _parse_bool(path, text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(path, f"expected a boolean, got {text!r}")


def _parse_float(path, text):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a number, got {text!r}") from None
    if math.isnan(value):
        raise ConfigError(path, "NaN is not allowed")
    return value


def _parse_int(path, text):
    text = str(text).strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(path, f"expected an integer, got {text!r}") from None
    if not value.is_integer():
        raise ConfigError(path, f"expected an integer, got {text!r}")
    return int(value)


def _parse_complex(path, text):
    try:
        return complex(str(text).replace(" ", ""))
    except ValueError:
        raise ConfigError(path, f"expected a complex number such as 1-1j, got {text!r}") from None


def _parse_list(path, text, item):
    parts = [t for t in str(text).replace(",", " ").split() if t]
    return tuple(item(path, t) for t in parts)


def _optional(parser):
    def parse(path, text):
        if str(text).strip().lower() in ("", "none", "auto"):
            return None
        return parser(path, text)
    return parse


def _parse_seed(path, text):
    seed = _parse_int(path, text)
    if not 0 <= seed < 2**64:
        raise ConfigError(path, "the seed must be an unsigned 64-bit integer")
    return seed


_FIELDS = {
    "experiment": lambda p, t: str(t).strip(),
    "run.seed": _parse_seed,
    "run.trajectories": _parse_int,
    "run.subensembles": _parse_int,
    "run.dt": _parse_float,
    "run.t_final": _parse_float,
    "run.record_points": _parse_int,
    "run.record_times": lambda p, t: _parse_list(p, t, _parse_float),
    "run.divergence_threshold": _parse_float,
    "run.threads": _parse_int,
    "run.oracle": _parse_bool,
    "run.output_dir": lambda p, t: str(t),
    "model.n_sites": _parse_int,
    "model.epsilon": _parse_complex,
    "model.kappa1": _parse_float,
    "model.kappa2": _parse_float,
    "model.gamma": _parse_float,
    "model.phi": _parse_float,
    "model.boundary": lambda p, t: str(t).strip(),
    "scheme.name": lambda p, t: str(t).strip().upper(),
    "initial.kind": lambda p, t: str(t).strip(),
    "initial.zeta": _parse_complex,
    "initial.sign": _parse_int,
    "oracle.cutoff": _optional(lambda p, t: _parse_list(p, t, _parse_int)),
    "oracle.basis": lambda p, t: str(t).strip(),
    "oracle.grow": _parse_int,
    "oracle.t_final": _optional(_parse_float),
    "sweep.kappa1": lambda p, t: _parse_list(p, t, _parse_float),
    "sweep.kappa2": lambda p, t: _parse_list(p, t, _parse_float),
    "sweep.pairs": _parse_bool,
    "sweep.comparison_time": _optional(_parse_float),
    "parity_decay.schemes": lambda p, t: tuple(s.upper() for s in str(t).replace(",", " ").split()),
    "reconstruct.cutoff": _parse_int,
    "reconstruct.site": _optional(_parse_int),
    "reconstruct.k": _optional(_parse_float),
    "reconstruct.extent": _parse_float,
    "reconstruct.points": _parse_int,
}

DEFAULTS = {
    "experiment": "transient",
    "run.seed": 0,
    "run.trajectories": 10_000,
    "run.subensembles": 20,
    "run.dt": 1e-3,
    "run.t_final": 5.0,
    "run.record_points": 101,
    "run.record_times": None,
    "run.divergence_threshold": DEFAULT_THRESHOLD,
    "run.threads": 1,
    "run.oracle": True,
    "run.output_dir": ".",
    "model.n_sites": 1,
    "model.epsilon": 1.0,
    "model.kappa1": 0.0,
    "model.kappa2": 0.0,
    "model.gamma": 0.0,
    "model.phi": 0.0,
    "model.boundary": "periodic",
    "scheme.name": "PP2",
    "initial.kind": "vacuum",
    "initial.zeta": 0.0,
    "initial.sign": 1,
    "oracle.cutoff": None,
    "oracle.basis": "auto",
    "oracle.grow": 5,
    "oracle.t_final": None,
    "sweep.kappa1": (1e-3, 1e-3, 5.0),
    "sweep.kappa2": (1.0, 0.2, 0.2),
    "sweep.pairs": True,
    "sweep.comparison_time": None,
    "parity_decay.schemes": SCHEME_NAMES,
    "reconstruct.cutoff": 30,
    "reconstruct.site": None,
    "reconstruct.k": None,
    "reconstruct.extent": 4.0,
    "reconstruct.points": 81,
}


def read_manifest_file(path) -> dict:
    """Raw ``{"section.key": value}`` pairs of an INI manifest.

    A top-level ``experiment`` key may sit in ``[run]``.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError("--config", f"malformed manifest: {exc}") from None
    raw = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            name = "experiment" if (section, key) == ("run", "experiment") else f"{section}.{key}"
            if name not in _FIELDS:
                raise ConfigError(name, "unknown setting")
            raw[name] = value
    return raw


def resolve_manifest(file_values: dict | None = None, overrides: dict | None = None) -> RunManifest:
    """Build a validated manifest; ``overrides`` (flags) beat ``file_values``."""
    values = dict(DEFAULTS)
    for source in (file_values or {}, overrides or {}):
        for name, raw in source.items():
            if raw is None:
                continue
            if name not in _FIELDS:
                raise ConfigError(name, "unknown setting")
            values[name] = _FIELDS[name](name, raw) if isinstance(raw, str) else raw
    return _build(values)


def load_manifest(path=None, overrides: dict | None = None) -> RunManifest:
    return resolve_manifest(read_manifest_file(path) if path else None, overrides)


def _check(cond, path, message):
    if not cond:
        raise ConfigError(path, message)


def _build(v: dict) -> RunManifest:
    exp = v["experiment"]
    _check(exp in EXPERIMENTS, "experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    _check(v["run.trajectories"] >= 1, "run.trajectories", "must be >= 1")
    _check(v["run.subensembles"] >= 2, "run.subensembles", "must be >= 2 for error bars")
    _check(v["run.trajectories"] % v["run.subensembles"] == 0, "run.trajectories",
           f"must be divisible by run.subensembles ({v['run.subensembles']})")
    _check(v["run.dt"] > 0, "run.dt", "must be positive")
    _check(v["run.t_final"] >= 0, "run.t_final", "must be >= 0")
    _check(v["run.record_points"] >= 1, "run.record_points", "must be >= 1")
    _check(v["run.threads"] >= 1, "run.threads", "must be >= 1")
    _check(v["run.divergence_threshold"] > 0, "run.divergence_threshold", "must be positive")
    _check(v["model.boundary"] in [b.value for b in Boundary], "model.boundary",
           "must be 'periodic' or 'open'")
    _check(v["scheme.name"] in SCHEMES, "scheme.name", f"must be one of {', '.join(SCHEME_NAMES)}")
    _check(v["initial.sign"] in (1, -1), "initial.sign", "must be +1 or -1")
    _check(v["oracle.basis"] in ("auto", "site", "momentum"), "oracle.basis",
           "must be auto, site or momentum")
    _check(v["oracle.grow"] >= 0, "oracle.grow", "must be >= 0")
    for s in v["parity_decay.schemes"]:
        _check(s in SCHEMES, "parity_decay.schemes", f"unknown scheme {s!r}")
    _check(v["reconstruct.cutoff"] >= 0, "reconstruct.cutoff", "must be >= 0")
    _check(v["reconstruct.points"] >= 2, "reconstruct.points", "must be >= 2")
    _check(v["reconstruct.extent"] > 0, "reconstruct.extent", "must be positive")
    for key in ("model.kappa1", "model.kappa2", "model.gamma"):
        _check(v[key] >= 0, key, "must be >= 0")
    for key in ("sweep.kappa1", "sweep.kappa2"):
        _check(all(x >= 0 for x in v[key]), key, "rates must be >= 0")
    try:
        params = ModelParams(v["model.n_sites"], v["model.epsilon"], v["model.kappa1"],
                             v["model.kappa2"], v["model.gamma"], v["model.phi"],
                             v["model.boundary"])
    except ContractError as exc:
        raise ConfigError("model", str(exc)) from None
    try:
        initial = InitialState(v["initial.kind"], v["initial.zeta"], v["initial.sign"])
    except ContractError as exc:
        raise ConfigError("initial.kind", str(exc)) from None
    times = v["run.record_times"]
    if times is None and v["run.t_final"] > 0:
        times = tuple(np.linspace(0.0, v["run.t_final"], v["run.record_points"]).tolist())
    try:
        config = RunConfig(params, SCHEMES[v["scheme.name"]], v["run.dt"], v["run.t_final"],
                           v["run.trajectories"], v["run.subensembles"], v["run.seed"], times,
                           v["run.divergence_threshold"], initial, v["run.threads"])
    except ContractError as exc:
        raise ConfigError("run", str(exc)) from None
    cutoff = v["oracle.cutoff"]
    if cutoff is not None:
        _check(len(cutoff) in (1, params.n_sites), "oracle.cutoff",
               "give one cutoff or one per mode")
        _check(min(cutoff) >= 1, "oracle.cutoff", "cutoffs must be >= 1")
    oracle = OracleOptions(None if cutoff is None else tuple(cutoff), v["oracle.basis"],
                           v["oracle.grow"], v["oracle.t_final"])
    sweep = SweepOptions(tuple(v["sweep.kappa1"]), tuple(v["sweep.kappa2"]), v["sweep.pairs"],
                         v["sweep.comparison_time"])
    sweep.points()
    recon = ReconstructOptions(v["reconstruct.cutoff"], v["reconstruct.site"], v["reconstruct.k"],
                               v["reconstruct.extent"], v["reconstruct.points"])
    if recon.site is not None:
        _check(0 <= recon.site < params.n_sites, "reconstruct.site", "site index out of range")
    return RunManifest(exp, config, v["run.oracle"], v["run.output_dir"], FORMAT_VERSION, oracle,
                       sweep, tuple(v["parity_decay.schemes"]), recon)


def manifest_to_ini(manifest: RunManifest) -> str:
    """Manifest text that resolves back to the same manifest."""
    d = manifest.to_dict()
    lines = ["[run]", f"experiment = {d['experiment']}"]

    def fmt(x):
        if isinstance(x, bool):
            return "true" if x else "false"
        if isinstance(x, list):
            return ", ".join(fmt(y) for y in x)
        if x is None:
            return "auto"
        if isinstance(x, float):
            return repr(x)
        return str(x)

    run = dict(d["run"])
    for key, value in run.items():
        lines.append(f"{key} = {fmt(value)}")
    for section in ("model", "scheme", "initial", "oracle", "sweep", "parity_decay", "reconstruct"):
        lines.append("")
        lines.append(f"[{section}]")
        for key, value in d[section].items():
            if section in ("model", "initial") and key in ("epsilon", "zeta"):
                value = repr(complex(*value)) if isinstance(value, list) else repr(float(value))
                value = value.strip("()")
            lines.append(f"{key} = {fmt(value)}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ tables
@dataclass
class Table:
    """Column-named table with ``#`` metadata lines.

    Cells are floats or (for labels and messages) strings.
    """

    columns: list
    rows: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = list(self.columns)
        self.rows = [[_cell(x) for x in row] for row in self.rows]
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ContractError("every row needs one cell per column")

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        values = [row[i] for row in self.rows]
        if all(isinstance(v, float) for v in values):
            return np.array(values, dtype=float)
        return np.array(values, dtype=object)

    def __len__(self):
        return len(self.rows)


def _cell(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return float(bool(x))
    return float(x)


def _fmt_float(x: float) -> str:
    return repr(float(x))


def _fmt_cell(x) -> str:
    return x if isinstance(x, str) else _fmt_float(x)


def _parse_cell(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def format_table(table: Table) -> str:
    out = _io.StringIO()
    for key in sorted(table.meta):
        out.write(f"# {key}: {table.meta[key]}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_fmt_cell(x) for x in row])
    return out.getvalue()


def parse_table(text: str) -> Table:
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("# ") and not body:
            key, _, value = line[2:].partition(": ")
            meta[key] = value
        elif line.strip():
            body.append(line)
    if not body:
        raise ContractError("table has no header row")
    reader = csv.reader(body)
    columns = next(reader)
    rows = [[_parse_cell(x) for x in r] for r in reader]
    return Table(columns, rows, meta)


def write_table(path, table: Table) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_table(table), encoding="utf-8")
    return path


def read_table(path) -> Table:
    return parse_table(Path(path).read_text(encoding="utf-8"))


# ------------------------------------------------------------ matrices
@dataclass
class MatrixFile:
    """A real or complex matrix with optional axes and metadata."""

    values: np.ndarray
    meta: dict = field(default_factory=dict)
    axes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values))


def format_matrix(m: MatrixFile) -> str:
    vals = m.values
    is_complex = np.iscomplexobj(vals)
    lines = [f"# shape: {vals.shape[0]} {vals.shape[1]}",
             f"# dtype: {'complex' if is_complex else 'real'}"]
    for key in sorted(m.meta):
        lines.append(f"# {key}: {m.meta[key]}")
    for name in sorted(m.axes):
        lines.append(f"# axis {name}: " + " ".join(_fmt_float(x) for x in m.axes[name]))
    for row in vals:
        if is_complex:
            lines.append(" ".join(f"{_fmt_float(z.real)},{_fmt_float(z.imag)}" for z in row))
        else:
            lines.append(" ".join(_fmt_float(x) for x in row))
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> MatrixFile:
    meta, axes, rows = {}, {}, []
    shape = dtype = None
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            if key == "shape":
                shape = tuple(int(x) for x in value.split())
            elif key == "dtype":
                dtype = value
            elif key.startswith("axis "):
                axes[key[5:]] = np.array([float(x) for x in value.split()])
            else:
                meta[key] = value
        elif line.strip():
            rows.append(line.split())
    if shape is None or dtype not in ("real", "complex"):
        raise ContractError("matrix file lacks its shape/dtype header")
    if dtype == "complex":
        data = [[complex(*(float(p) for p in e.split(","))) for e in r] for r in rows]
        vals = np.array(data, dtype=complex)
    else:
        vals = np.array([[float(e) for e in r] for r in rows], dtype=float)
    vals = vals.reshape(shape)
    return MatrixFile(vals, meta, axes)


def write_matrix(path, m: MatrixFile) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_matrix(m), encoding="utf-8")
    return path


def read_matrix(path) -> MatrixFile:
    return parse_matrix(Path(path).read_text(encoding="utf-8"))


def standard_meta(manifest: RunManifest, status: str = "complete", **extra) -> dict:
    """Header block every output file carries."""
    meta = {
        "format_version": str(manifest.format_version),
        "seed": str(int(manifest.config.seed)),
        "config": manifest.to_json(),
        "status": status,
    }
    meta.update({k: str(v) for k, v in extra.items()})
    return meta
