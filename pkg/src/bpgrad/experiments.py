"""Experiment configs, sweep execution, CSV/manifest output, and figure grids.

A run is described by a JSON config (schema ``bpgrad-config/1``) holding one
base circuit plus an optional list of sweep axes; the cartesian product of the
axis values defines the run points.  Every point gets its own seed derived
from the config's master seed and the point index, so each CSV row is
independently reproducible and whole re-runs are byte-identical.  Results
travel as ResultRow tuples in a fixed-column CSV, and every CSV is paired
with a manifest JSON carrying the config echo, its sha256, and any fit
metadata the grid produced.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import math
import re
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import (
    PREFACTOR_MODES,
    CalibrationReport,
    CalibrationSetting,
    derive_run_seed,
    fg_lookup,
    predict_deep_variance,
    predict_single_layer_variance,
)
from .circuit import CircuitSpec, n_eff, prune
from .estimator import fit_exponential, parse_k_mode, run_ensemble
from .pauli import PauliString

CONFIG_SCHEMA = "bpgrad-config/1"
FIGURE_SCHEMA = "bpgrad-figure/1"
MANIFEST_SCHEMA = "bpgrad-manifest/1"

CSV_COLUMNS = (
    "figure_tag",
    "n",
    "s",
    "l",
    "N_eff",
    "k_mode",
    "n_samples",
    "master_seed",
    "var_est",
    "ci_low",
    "ci_high",
    "predicted",
    "prefactor_mode",
    "setting_id",
)

SWEEP_AXES = ("n", "l", "s", "support", "prune_fraction")
FIGURE_TAGS = ("fig1", "fig2", "fig3", "fig4")

# Slot-mask draws use their own spawn namespace under the row seed; the
# estimator owns namespaces 1 (per-sample streams) and 2 (bootstrap).
_PRUNE_TAG = 3

_TAG_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9_\-]{0,63}")
_LITERAL_RE = re.compile(r"[IXYZ]+")

_DEEP_BASE = 9.0 / 32.0


class ConfigError(ValueError):
    """A config value failed validation; the message names the field."""


# ---------------------------------------------------------------------------
# config parsing

_MISSING = object()


def _field(data: dict, name: str, kind: type, default=_MISSING, where: str = ""):
    label = f"{where}{name}"
    if name not in data:
        if default is not _MISSING:
            return default
        raise ConfigError(f"config field '{label}': missing")
    value = data[name]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config field '{label}': expected a number")
        return float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"config field '{label}': expected an integer")
    if not isinstance(value, kind):
        kinds = {int: "an integer", str: "a string", list: "a list", dict: "an object"}
        raise ConfigError(f"config field '{label}': expected {kinds[kind]}")
    return value


@dataclass(frozen=True)
class SweepAxis:
    axis: str
    values: tuple


@dataclass(frozen=True)
class ExperimentConfig:
    """One parsed run description; `sweep` axes expand to a point grid."""

    figure_tag: str
    circuit: CircuitSpec
    observable: str
    k_mode: str
    n_samples: int
    master_seed: int
    workers: int = 1
    prune_fraction: float = 0.0
    c0: float | None = None
    sweep: tuple[SweepAxis, ...] = ()


def _parse_circuit(data: dict) -> CircuitSpec:
    where = "circuit."
    kwargs = {
        "n": _field(data, "n", int, where=where),
        "l": _field(data, "l", int, where=where),
        "s": _field(data, "s", int, default=1, where=where),
        "entangler": _field(data, "entangler", str, default="none", where=where),
        "generator_policy": _field(
            data, "generator_policy", str, default="full_minus_identity", where=where
        ),
        "init_kind": _field(data, "init_kind", str, default="zeros", where=where),
        "theta_dist": _field(
            data, "theta_dist", str, default="uniform_0_2pi", where=where
        ),
    }
    mask = _field(data, "active_mask", list, default=None, where=where)
    if mask is not None:
        if not all(isinstance(b, bool) for b in mask):
            raise ConfigError("config field 'circuit.active_mask': expected booleans")
        kwargs["active_mask"] = tuple(mask)
    extra = set(data) - set(kwargs) - {"active_mask"}
    if extra:
        raise ConfigError(f"config field 'circuit.{sorted(extra)[0]}': unknown field")
    try:
        return CircuitSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"config field 'circuit': {exc}") from exc


def _parse_sweep(items: list) -> tuple[SweepAxis, ...]:
    axes = []
    seen = set()
    for i, item in enumerate(items):
        where = f"sweep[{i}]."
        if not isinstance(item, dict):
            raise ConfigError(f"config field 'sweep[{i}]': expected an object")
        axis = _field(item, "axis", str, where=where)
        if axis not in SWEEP_AXES:
            raise ConfigError(
                f"config field 'sweep[{i}].axis': expected one of {SWEEP_AXES}"
            )
        if axis in seen:
            raise ConfigError(f"config field 'sweep[{i}].axis': duplicate '{axis}'")
        seen.add(axis)
        values = _field(item, "values", list, where=where)
        if not values:
            raise ConfigError(f"config field 'sweep[{i}].values': empty")
        number = float if axis == "prune_fraction" else int
        parsed = []
        for v in values:
            if isinstance(v, bool) or not isinstance(
                v, (int, float) if number is float else int
            ):
                raise ConfigError(
                    f"config field 'sweep[{i}].values': expected "
                    f"{'numbers' if number is float else 'integers'}"
                )
            parsed.append(number(v))
        axes.append(SweepAxis(axis, tuple(parsed)))
    return tuple(axes)


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a config dict; raises ConfigError naming the bad field."""
    if not isinstance(data, dict):
        raise ConfigError("config root: expected a JSON object")
    schema = _field(data, "schema", str)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"config field 'schema': expected '{CONFIG_SCHEMA}'")
    tag = _field(data, "figure_tag", str)
    if not _TAG_RE.fullmatch(tag):
        raise ConfigError(
            "config field 'figure_tag': use 1-64 letters, digits, '_' or '-'"
        )
    circuit = _parse_circuit(_field(data, "circuit", dict))
    observable = _field(data, "observable", str)
    if observable not in ("Z^n", "Z^m") and not _LITERAL_RE.fullmatch(observable):
        raise ConfigError(
            "config field 'observable': expected Pauli letters IXYZ, 'Z^n', or 'Z^m'"
        )
    k_mode = _field(data, "k_mode", str)
    try:
        k_mode = str(parse_k_mode(k_mode))
    except ValueError as exc:
        raise ConfigError(f"config field 'k_mode': {exc}") from exc
    n_samples = _field(data, "n_samples", int)
    if n_samples < 2:
        raise ConfigError("config field 'n_samples': need at least 2")
    master_seed = _field(data, "master_seed", int)
    if not 0 <= master_seed < 2**64:
        raise ConfigError("config field 'master_seed': outside [0, 2^64)")
    workers = _field(data, "workers", int, default=1)
    if workers < 1:
        raise ConfigError("config field 'workers': need at least 1")
    prune_fraction = _field(data, "prune_fraction", float, default=0.0)
    if not 0.0 <= prune_fraction <= 1.0:
        raise ConfigError("config field 'prune_fraction': outside [0, 1]")
    c0 = _field(data, "c0", float, default=None)
    if c0 is not None and not c0 > 0.0:
        raise ConfigError("config field 'c0': must be positive")
    sweep = _parse_sweep(_field(data, "sweep", list, default=[]))
    swept = {axis.axis for axis in sweep}
    if observable == "Z^m" and "support" not in swept:
        raise ConfigError(
            "config field 'observable': 'Z^m' needs a 'support' sweep axis"
        )
    if "support" in swept and observable != "Z^m":
        raise ConfigError(
            "config field 'sweep': a 'support' axis needs observable 'Z^m'"
        )
    known = {
        "schema",
        "figure_tag",
        "circuit",
        "observable",
        "k_mode",
        "n_samples",
        "master_seed",
        "workers",
        "prune_fraction",
        "c0",
        "sweep",
    }
    extra = set(data) - known
    if extra:
        raise ConfigError(f"config field '{sorted(extra)[0]}': unknown field")
    return ExperimentConfig(
        figure_tag=tag,
        circuit=circuit,
        observable=observable,
        k_mode=k_mode,
        n_samples=n_samples,
        master_seed=master_seed,
        workers=workers,
        prune_fraction=prune_fraction,
        c0=c0,
        sweep=sweep,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Load a config file; a manifest file re-loads its embedded config."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if isinstance(data, dict) and data.get("schema") == MANIFEST_SCHEMA:
        data = data.get("config")
        if not isinstance(data, dict) or data.get("schema") != CONFIG_SCHEMA:
            raise ConfigError(
                f"manifest {path} does not embed a '{CONFIG_SCHEMA}' config"
            )
    return parse_config(data)


def config_to_dict(config: ExperimentConfig) -> dict:
    """Canonical JSON-ready echo of a config (defaults included)."""
    spec = config.circuit
    circuit = {
        "n": spec.n,
        "l": spec.l,
        "s": spec.s,
        "entangler": spec.entangler,
        "generator_policy": spec.generator_policy,
        "init_kind": spec.init_kind,
        "theta_dist": spec.theta_dist,
    }
    if not all(spec.active_mask):
        circuit["active_mask"] = list(spec.active_mask)
    out = {
        "schema": CONFIG_SCHEMA,
        "figure_tag": config.figure_tag,
        "circuit": circuit,
        "observable": config.observable,
        "k_mode": config.k_mode,
        "n_samples": config.n_samples,
        "master_seed": config.master_seed,
        "workers": config.workers,
        "prune_fraction": config.prune_fraction,
    }
    if config.c0 is not None:
        out["c0"] = config.c0
    if config.sweep:
        out["sweep"] = [
            {"axis": axis.axis, "values": list(axis.values)} for axis in config.sweep
        ]
    return out


# ---------------------------------------------------------------------------
# result rows and CSV round-trip


@dataclass(frozen=True)
class ResultRow:
    """One CSV row: a run point plus its estimate and prediction."""

    figure_tag: str
    n: int
    s: int
    l: int
    n_eff: int
    k_mode: str
    n_samples: int
    master_seed: int
    var_est: float | None
    ci_low: float | None
    ci_high: float | None
    predicted: float
    prefactor_mode: str
    setting_id: str


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(path: str | Path, rows: list[ResultRow]) -> None:
    """Write rows as CSV; floats keep full precision via repr."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.figure_tag,
                    row.n,
                    row.s,
                    row.l,
                    row.n_eff,
                    row.k_mode,
                    row.n_samples,
                    row.master_seed,
                    _cell(row.var_est),
                    _cell(row.ci_low),
                    _cell(row.ci_high),
                    _cell(row.predicted),
                    row.prefactor_mode,
                    row.setting_id,
                ]
            )


def read_rows(path: str | Path) -> list[ResultRow]:
    """Exact inverse of write_rows."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = tuple(next(reader, ()))
        if header != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header!r}")
        rows = []
        for record in reader:
            if len(record) != len(CSV_COLUMNS):
                raise ValueError(f"CSV row has {len(record)} cells")
            opt = lambda cell: None if cell == "" else float(cell)
            rows.append(
                ResultRow(
                    figure_tag=record[0],
                    n=int(record[1]),
                    s=int(record[2]),
                    l=int(record[3]),
                    n_eff=int(record[4]),
                    k_mode=record[5],
                    n_samples=int(record[6]),
                    master_seed=int(record[7]),
                    var_est=opt(record[8]),
                    ci_low=opt(record[9]),
                    ci_high=opt(record[10]),
                    predicted=float(record[11]),
                    prefactor_mode=record[12],
                    setting_id=record[13],
                )
            )
    return rows


def write_manifest(
    path: str | Path,
    figure_tag: str,
    config_echo: dict,
    n_rows: int,
    csv_name: str,
    svg_name: str | None,
    wall_time_s: float,
    extra: dict,
) -> None:
    """Emit the run manifest next to its CSV."""
    canonical = json.dumps(config_echo, sort_keys=True, separators=(",", ":"))
    payload = {
        "schema": MANIFEST_SCHEMA,
        "tool_version": __version__,
        "figure_tag": figure_tag,
        "master_seed": config_echo["master_seed"],
        "config": config_echo,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "wall_time_s": round(wall_time_s, 3),
        "rows": n_rows,
        "csv": csv_name,
        "svg": svg_name,
        "extra": extra,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


# ---------------------------------------------------------------------------
# sweep execution


def _prune_stream(row_seed: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=row_seed, spawn_key=(_PRUNE_TAG,))
    return np.random.Generator(np.random.Philox(key=seq.generate_state(2, np.uint64)))


def _apply_prune(spec: CircuitSpec, fraction: float, row_seed: int) -> CircuitSpec:
    if fraction == 0.0:
        return spec
    return prune(spec, fraction, _prune_stream(row_seed))


def sweep_points(config: ExperimentConfig) -> list[dict]:
    """The cartesian point grid, rightmost sweep axis fastest."""
    if not config.sweep:
        return [{}]
    names = [axis.axis for axis in config.sweep]
    return [
        dict(zip(names, combo))
        for combo in itertools.product(*(axis.values for axis in config.sweep))
    ]


def _point_spec(
    config: ExperimentConfig, point: dict, index: int
) -> tuple[CircuitSpec, str, float]:
    base = config.circuit
    n = point.get("n", base.n)
    l = point.get("l", base.l)
    s = point.get("s", base.s)
    mask = base.active_mask if (n, l, s) == (base.n, base.l, base.s) else None
    try:
        spec = CircuitSpec(
            n=n,
            l=l,
            s=s,
            entangler=base.entangler,
            generator_policy=base.generator_policy,
            init_kind=base.init_kind,
            active_mask=mask,
            theta_dist=base.theta_dist,
        )
    except ValueError as exc:
        raise ConfigError(f"sweep point {index}: {exc}") from exc
    if config.observable == "Z^n":
        text = "Z" * n
    elif config.observable == "Z^m":
        m = point["support"]
        if not 0 <= m <= n:
            raise ConfigError(f"sweep point {index}: support {m} outside 0..{n}")
        text = "Z" * m + "I" * (n - m)
    else:
        text = config.observable
        if len(text) != n:
            raise ConfigError(
                f"sweep point {index}: observable length {len(text)} != n={n}"
            )
    fraction = point.get("prune_fraction", config.prune_fraction)
    return spec, text, fraction


def _predicted(
    spec: CircuitSpec, effective: int, mode: str, c0: float | None
) -> float:
    if spec.l == 1:
        return predict_single_layer_variance(spec.n, spec.s, effective, mode)
    if c0 is None:
        raise ConfigError("config field 'c0': required to predict deep (l>1) variance")
    return predict_deep_variance(spec.n, spec.s, effective, spec.l, c0)


def run_config(
    config: ExperimentConfig,
    *,
    sample: bool = True,
    prefactor_modes: tuple[str, ...] = ("eq14",),
) -> list[ResultRow]:
    """Execute (or just predict) every sweep point of a config.

    Single-layer points emit one row per requested prefactor mode; deeper
    points emit one "deep" row and need c0.  Row seeds derive from the
    master seed and the point index.
    """
    for mode in prefactor_modes:
        if mode not in PREFACTOR_MODES:
            raise ConfigError(f"config field 'prefactor': expected {PREFACTOR_MODES}")
    setting_id = (
        f"{config.circuit.generator_policy}:"
        f"{config.circuit.entangler}:{config.circuit.init_kind}"
    )
    rows = []
    for index, point in enumerate(sweep_points(config)):
        spec, text, fraction = _point_spec(config, point, index)
        row_seed = derive_run_seed(config.master_seed, index)
        spec = _apply_prune(spec, fraction, row_seed)
        observable = PauliString.from_text(text)
        effective = n_eff(spec, observable)
        if sample:
            try:
                estimate = run_ensemble(
                    spec,
                    observable,
                    config.k_mode,
                    config.n_samples,
                    row_seed,
                    workers=config.workers,
                )
            except ValueError as exc:
                raise ConfigError(f"sweep point {index}: {exc}") from exc
            measured = (estimate.variance, estimate.ci_low, estimate.ci_high)
            samples = config.n_samples
        else:
            measured = (None, None, None)
            samples = 0
        modes = prefactor_modes if spec.l == 1 else ("deep",)
        for mode in modes:
            rows.append(
                ResultRow(
                    figure_tag=config.figure_tag,
                    n=spec.n,
                    s=spec.s,
                    l=spec.l,
                    n_eff=effective,
                    k_mode=config.k_mode,
                    n_samples=samples,
                    master_seed=row_seed,
                    var_est=measured[0],
                    ci_low=measured[1],
                    ci_high=measured[2],
                    predicted=_predicted(spec, effective, mode, config.c0),
                    prefactor_mode=mode,
                    setting_id=setting_id,
                )
            )
    return rows


@dataclass(frozen=True)
class RunPaths:
    csv: Path
    manifest: Path
    svg: Path | None = None


def run_sample(
    config: ExperimentConfig, out_dir: str | Path, prefactor_mode: str = "eq14"
) -> RunPaths:
    """Sample a config's grid and write <tag>.csv + <tag>.manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    rows = run_config(config, sample=True, prefactor_modes=(prefactor_mode,))
    csv_path = out / f"{config.figure_tag}.csv"
    write_rows(csv_path, rows)
    manifest_path = out / f"{config.figure_tag}.manifest.json"
    write_manifest(
        manifest_path,
        config.figure_tag,
        config_to_dict(config),
        len(rows),
        csv_path.name,
        None,
        time.perf_counter() - start,
        extra={"prefactor": prefactor_mode},
    )
    return RunPaths(csv=csv_path, manifest=manifest_path)


def run_predict(
    config: ExperimentConfig, out_dir: str | Path, c0: float | None = None
) -> RunPaths:
    """Emit predicted-only rows (both prefactor modes for single layers)."""
    if c0 is not None:
        config = dataclasses.replace(config, c0=c0)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    rows = run_config(config, sample=False, prefactor_modes=PREFACTOR_MODES)
    csv_path = out / f"{config.figure_tag}.predict.csv"
    write_rows(csv_path, rows)
    manifest_path = out / f"{config.figure_tag}.predict.manifest.json"
    write_manifest(
        manifest_path,
        config.figure_tag,
        config_to_dict(config),
        len(rows),
        csv_path.name,
        None,
        time.perf_counter() - start,
        extra={},
    )
    return RunPaths(csv=csv_path, manifest=manifest_path)


# ---------------------------------------------------------------------------
# figure grids

# Default master seeds per figure; chosen once, recorded in the manifest, and
# shared with the acceptance checks so published numbers are reproducible.
FIGURE_SEEDS = {"fig1": 11, "fig2": 2, "fig3": 3, "fig4": 41}

_FIG_SAMPLES = {
    ("fig1", "desk"): 10**4,
    ("fig1", "paper"): 10**5,
    ("fig2", "desk"): 10**4,
    ("fig2", "paper"): 10**5,
    ("fig3", "desk"): 10**4,
    ("fig3", "paper"): 10**5,
    ("fig4", "desk"): 10**4,
    ("fig4", "paper"): 2 * 10**4,
}

# Deep grids probe the layered laws in the canonical convention; they do not
# depend on the single-layer calibration report.
_DEEP_SETTING_FIG3 = CalibrationSetting("full_minus_identity", "none", "zeros")
_DEEP_SETTING_FIG4 = CalibrationSetting("full_minus_identity", "cz_brick", "zeros")

FIG3_LAYERS = (5, 10, 25, 50, 100, 150)
FIG4_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)
FIG4_LAYERS = (50, 100)


@dataclass(frozen=True)
class FigurePoint:
    spec: CircuitSpec
    observable: str
    k_mode: str
    fraction: float = 0.0


def load_calibration(path: str | Path) -> CalibrationReport:
    """Load calibration.json; a missing file gets an instructive error."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(
            f"missing calibration report {path}; run "
            f"`bpgrad calibrate --out {path.parent}` first"
        )
    try:
        return CalibrationReport.from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"calibration report {path} is malformed: {exc}") from exc


def _spec_for(setting: CalibrationSetting, n: int, l: int, s: int) -> CircuitSpec:
    return CircuitSpec(
        n=n,
        l=l,
        s=s,
        entangler=setting.entangler,
        generator_policy=setting.generator_policy,
        init_kind=setting.init_kind,
    )


def _fig1_points(setting: CalibrationSetting) -> list[FigurePoint]:
    points = []
    for s in (1, 2, 3, 4):
        for n in range(max(s, 2), 11, s):
            spec = _spec_for(setting, n, 1, s)
            for k_mode in ("fixed_slot(0)", "random_effective"):
                points.append(FigurePoint(spec, "Z" * n, k_mode))
    return points


def _fig2_points(setting: CalibrationSetting) -> list[FigurePoint]:
    points = []
    for m in range(1, 19):
        spec = _spec_for(setting, 18, 1, 1)
        text = "Z" * m + "I" * (18 - m)
        for k_mode in ("fixed_slot(0)", "random_effective"):
            points.append(FigurePoint(spec, text, k_mode))
    return points


def _fig3_points() -> list[FigurePoint]:
    points = []
    for n in range(2, 11):
        for l in FIG3_LAYERS:
            spec = _spec_for(_DEEP_SETTING_FIG3, n, l, 1)
            for k_mode in ("random_effective", "random_all"):
                points.append(FigurePoint(spec, "Z" * n, k_mode))
    return points


def _fig4_points(n: int) -> list[FigurePoint]:
    points = []
    for s in (1, 2, 4):
        for l in FIG4_LAYERS:
            for fraction in FIG4_FRACTIONS:
                spec = _spec_for(_DEEP_SETTING_FIG4, n, l, s)
                points.append(FigurePoint(spec, "Z" * n, "random_all", fraction))
    return points


def _run_points(
    points: list[FigurePoint], n_samples: int, master_seed: int, workers: int
) -> list[tuple[FigurePoint, CircuitSpec, int, object, int]]:
    runs = []
    for index, point in enumerate(points):
        row_seed = derive_run_seed(master_seed, index)
        spec = _apply_prune(point.spec, point.fraction, row_seed)
        observable = PauliString.from_text(point.observable)
        effective = n_eff(spec, observable)
        estimate = run_ensemble(
            spec, observable, point.k_mode, n_samples, row_seed, workers=workers
        )
        runs.append((point, spec, effective, estimate, row_seed))
    return runs


def fit_through_origin(xs, ys) -> tuple[float, float]:
    """Least-squares slope through the origin and its uncentered R^2."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
        raise ValueError("need matching 1-d arrays with at least 2 points")
    denom = float(np.sum(xs * xs))
    if denom == 0.0:
        raise ValueError("all x are zero")
    beta = float(np.sum(xs * ys)) / denom
    ss_res = float(np.sum((ys - beta * xs) ** 2))
    ss_tot = float(np.sum(ys * ys))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return beta, r2


def _fit_c0(entries: list[tuple[int, int, int, int, float]]) -> float:
    """Geometric-mean c0 over (n, s, l, N_eff, var) with the deep law."""
    logs = [
        math.log(var * n * l / (_DEEP_BASE**n * s * effective))
        for n, s, l, effective, var in entries
        if effective > 0 and var > 0.0
    ]
    if not logs:
        raise ValueError("no usable points to fit c0")
    return float(math.exp(np.mean(logs)))


def _deep_rows(
    tag: str, runs, c0: float, setting: CalibrationSetting
) -> list[ResultRow]:
    rows = []
    for point, spec, effective, estimate, row_seed in runs:
        rows.append(
            ResultRow(
                figure_tag=tag,
                n=spec.n,
                s=spec.s,
                l=spec.l,
                n_eff=effective,
                k_mode=point.k_mode,
                n_samples=estimate.n_samples,
                master_seed=row_seed,
                var_est=estimate.variance,
                ci_low=estimate.ci_low,
                ci_high=estimate.ci_high,
                predicted=predict_deep_variance(spec.n, spec.s, effective, spec.l, c0),
                prefactor_mode="deep",
                setting_id=setting.setting_id,
            )
        )
    return rows


def _single_layer_rows(
    tag: str, runs, setting: CalibrationSetting
) -> list[ResultRow]:
    rows = []
    for point, spec, effective, estimate, row_seed in runs:
        for mode in PREFACTOR_MODES:
            rows.append(
                ResultRow(
                    figure_tag=tag,
                    n=spec.n,
                    s=spec.s,
                    l=spec.l,
                    n_eff=effective,
                    k_mode=point.k_mode,
                    n_samples=estimate.n_samples,
                    master_seed=row_seed,
                    var_est=estimate.variance,
                    ci_low=estimate.ci_low,
                    ci_high=estimate.ci_high,
                    predicted=predict_single_layer_variance(
                        spec.n, spec.s, effective, mode
                    ),
                    prefactor_mode=mode,
                    setting_id=setting.setting_id,
                )
            )
    return rows


def _fig3_extra(runs, c0: float) -> dict:
    """Saturated-depth decay fits per k-mode plus the closer mode."""
    extra = {"c0": c0}
    deviations = {}
    for mode in ("random_effective", "random_all"):
        tail = [
            (spec.n, est.variance)
            for point, spec, _, est, _ in runs
            if point.k_mode == mode and spec.l == FIG3_LAYERS[-1]
        ]
        xs = np.array([n for n, _ in tail], dtype=float)
        ys = np.array([v for _, v in tail], dtype=float)
        fit = fit_exponential(xs, ys)
        extra[f"fit_{mode}"] = {
            "amplitude": fit.amplitude,
            "base": fit.base,
            "r2": fit.r2,
        }
        logs = [
            (
                math.log(est.variance)
                - math.log(
                    predict_deep_variance(spec.n, spec.s, effective, spec.l, c0)
                )
            )
            ** 2
            for point, spec, effective, est, _ in runs
            if point.k_mode == mode and est.variance > 0
        ]
        deviations[mode] = float(np.mean(logs))
    extra["mean_sq_log_residual"] = deviations
    extra["better_k_mode"] = min(deviations, key=deviations.get)
    return extra


def run_figure(
    tag: str,
    out_dir: str | Path,
    *,
    scale: str = "desk",
    samples: int | None = None,
    master_seed: int | None = None,
    workers: int = 1,
    n12: bool = False,
    calibration: str | Path | None = None,
    render: bool = True,
) -> RunPaths:
    """Run one named figure grid: CSV + SVG + manifest in out_dir.

    fig1/fig2 read the calibrated convention from calibration.json (next to
    the output unless an explicit path is given); fig3/fig4 use the canonical
    deep-law settings and fit their c0 from their own saturated points.
    """
    if tag not in FIGURE_TAGS:
        raise ConfigError(f"unknown figure tag '{tag}'; expected one of {FIGURE_TAGS}")
    if scale not in ("desk", "paper"):
        raise ConfigError("scale must be 'desk' or 'paper'")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_samples = samples if samples is not None else _FIG_SAMPLES[(tag, scale)]
    if n_samples < 2:
        raise ConfigError("need at least 2 samples")
    seed = master_seed if master_seed is not None else FIGURE_SEEDS[tag]
    if not 0 <= seed < 2**64:
        raise ConfigError("master seed outside [0, 2^64)")

    start = time.perf_counter()
    extra: dict = {}
    if tag in ("fig1", "fig2"):
        report = load_calibration(
            Path(calibration) if calibration else out / "calibration.json"
        )
        setting = report.selected
        points = _fig1_points(setting) if tag == "fig1" else _fig2_points(setting)
        runs = _run_points(points, n_samples, seed, workers)
        rows = _single_layer_rows(tag, runs, setting)
        extra["calibrated_setting"] = vars(setting)
        extra["any_matched"] = report.any_matched
        entry = fg_lookup(1)
        extra["reference_F_G"] = [float(entry.F), float(entry.G)]
    elif tag == "fig3":
        points = _fig3_points()
        runs = _run_points(points, n_samples, seed, workers)
        c0 = _fit_c0(
            [
                (spec.n, spec.s, spec.l, effective, est.variance)
                for point, spec, effective, est, _ in runs
                if point.k_mode == "random_all" and spec.l == FIG3_LAYERS[-1]
            ]
        )
        rows = _deep_rows(tag, runs, c0, _DEEP_SETTING_FIG3)
        extra.update(_fig3_extra(runs, c0))
    else:
        n = 12 if n12 else 8
        points = _fig4_points(n)
        runs = _run_points(points, n_samples, seed, workers)
        c0 = _fit_c0(
            [
                (spec.n, spec.s, spec.l, effective, est.variance)
                for _, spec, effective, est, _ in runs
            ]
        )
        rows = _deep_rows(tag, runs, c0, _DEEP_SETTING_FIG4)
        xs = [spec.s * effective / spec.l for _, spec, effective, _, _ in runs]
        ys = [est.variance for _, _, _, est, _ in runs]
        beta, r2 = fit_through_origin(xs, ys)
        extra.update(
            {"c0": c0, "collapse": {"beta": beta, "r2": r2}, "n": n}
        )

    csv_path = out / f"{tag}.csv"
    write_rows(csv_path, rows)
    svg_path = None
    if render:
        from . import report as report_mod

        svg_path = out / f"{tag}.svg"
        report_mod.render_figure(tag, rows, svg_path, extra)
    config_echo = {
        "schema": FIGURE_SCHEMA,
        "figure_tag": tag,
        "scale": scale,
        "n_samples": n_samples,
        "master_seed": seed,
        "workers": workers,
        "n12": bool(n12),
    }
    manifest_path = out / f"{tag}.manifest.json"
    write_manifest(
        manifest_path,
        tag,
        config_echo,
        len(rows),
        csv_path.name,
        svg_path.name if svg_path else None,
        time.perf_counter() - start,
        extra,
    )
    return RunPaths(csv=csv_path, manifest=manifest_path, svg=svg_path)
