"""Batch front door for the library: config-driven runs, machine-readable output.

Each run is described by a JSON config file::

    {
      "schema_version": 1,
      "kind": "bp-solve",            # must match the subcommand
      "seed": 0,                     # master seed (optional, default 0)
      "threads": 1,                  # worker threads (optional, default 1)
      "out": "runs/bp",              # output directory (optional)
      "params": { ... }              # kind-specific block, see the runners
    }

``--seed``, ``--threads`` and ``--out`` flags override the config values.
Every runner writes its result files plus a ``manifest.json`` that echoes the
complete effective config, so a manifest can be fed back via ``--config`` to
replay the run.  Result files are formatted deterministically (shortest
round-trip float repr, sorted JSON keys): identical configs produce
byte-identical result files, independent of the thread count.  Only the
manifest's ``timings`` block varies between reruns.

Exit codes: 0 success, 2 malformed config, 3 numeric guard tripped, 4 I/O
failure.  Failures print a one-line JSON error report to stderr.
"""

from __future__ import annotations

import argparse
import cmath
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .cumulants import (
    CumulantEvaluator,
    CumulantTable,
    TableOracle,
    _as_index,
    _key_to_str,
    _str_to_key,
    moments_from_cumulants,
)
from .dnls import (
    Dispersion,
    Lattice,
    _jackknife_stderr,
    estimate_W,
    integrate_ensemble,
    nearest_neighbor_dispersion,
    next_nearest_dispersion,
    sample_initial,
    write_spectrum_csv,
    read_spectrum_csv,
    zero_dispersion,
)
from .errors import ConfigError, GuardError
from .hierarchy import (
    AmplitudeModel,
    HierarchyState,
    InteractionTerm,
    all_keys_up_to,
    constant_amplitude,
    hierarchy_rhs_table,
)
from .indexing import LabeledSeq
from .kinetic import (
    BPTrajectory,
    CollisionConfig,
    EquilibriumParams,
    bp_solve,
    collision_operator,
    prelimit_kernel,
)
from .wick import wick_from_cumulants

__all__ = [
    "SCHEMA_VERSION",
    "RunConfig",
    "load_run_config",
    "run",
    "main",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

SCHEMA_VERSION = 1

KINDS = (
    "wick-expand",
    "cumulant-convert",
    "hierarchy-rhs",
    "dnls-simulate",
    "estimate-w",
    "bp-solve",
    "bp-compare",
    "kinetic-check",
)


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved run description; equal configs produce equal outputs."""

    kind: str
    params: Mapping
    seed: int = 0
    threads: int = 1
    out: str = "out"

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown run kind {self.kind!r}; expected one of {KINDS}")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if not isinstance(self.params, Mapping):
            raise ConfigError("params must be a JSON object")

    def echo(self) -> dict:
        """The complete effective config, replayable via ``--config``."""
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "seed": self.seed,
            "threads": self.threads,
            "out": self.out,
            "params": json.loads(json.dumps(self.params)),
        }


def _check_keys(block: Mapping, where: str, required: Sequence[str], optional: Sequence[str] = ()) -> None:
    """Strict schema check: every required key present, no stray keys."""
    missing = [k for k in required if k not in block]
    if missing:
        raise ConfigError(f"{where}: missing required key(s) {missing}")
    allowed = set(required) | set(optional)
    unknown = [k for k in block if k not in allowed]
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(allowed)}")


def load_run_config(
    path: str | Path,
    kind: str | None = None,
    seed: int | None = None,
    threads: int | None = None,
    out: str | None = None,
) -> RunConfig:
    """Load and validate a config file; flag values override file values.

    A manifest written by a previous run is accepted too: its echoed config
    block is unwrapped, which is what makes replay a one-liner.
    """
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(data, Mapping):
        raise ConfigError(f"config {path} must be a JSON object")
    if "package_version" in data and "config" in data:
        data = data["config"]
        if not isinstance(data, Mapping):
            raise ConfigError(f"manifest {path} has a malformed config block")
    _check_keys(
        data, f"config {path}",
        required=["schema_version", "kind", "params"],
        optional=["seed", "threads", "out"],
    )
    if data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"config schema_version {data['schema_version']!r} is not supported; "
            f"this tool reads version {SCHEMA_VERSION}"
        )
    if kind is not None and data["kind"] != kind:
        raise ConfigError(f"config kind {data['kind']!r} does not match subcommand {kind!r}")
    return RunConfig(
        kind=data["kind"],
        params=data["params"],
        seed=int(data.get("seed", 0)) if seed is None else int(seed),
        threads=int(data.get("threads", 1)) if threads is None else int(threads),
        out=str(data.get("out", "out")) if out is None else str(out),
    )


# ---------------------------------------------------------------------------
# deterministic writers and readers
# ---------------------------------------------------------------------------


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def write_trajectory_csv(lattice: Lattice, trajectory: BPTrajectory, path: str | Path) -> None:
    """Write a kinetic trajectory as rows of (tau, k components..., value).

    Momenta are written as fractions of the Brillouin zone, spectra in
    row-major dual-grid order within each time slice; float formatting is
    repr, so equal trajectories give byte-identical files.
    """
    header = ["tau"] + [f"k{i + 1}" for i in range(lattice.dimension)] + ["value"]
    rows = []
    for step, tau in enumerate(trajectory.taus):
        values = trajectory.spectra[step]
        if values.shape != lattice.shape:
            raise ConfigError("trajectory spectra do not match the lattice shape")
        for site in np.ndindex(lattice.shape):
            ks = [repr(component / lattice.side) for component in site]
            rows.append([repr(float(tau))] + ks + [repr(float(values[site]))])
    _write_csv(Path(path), header, rows)


def read_trajectory_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse a trajectory CSV back into (taus, k rows, values[step, site])."""
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise ConfigError(f"{path} is empty")
    header = lines[0].split(",")
    if header[0] != "tau" or header[-1] != "value":
        raise ConfigError(f"{path} does not look like a trajectory CSV")
    dim = len(header) - 2
    taus: list[float] = []
    k_rows: list[list[float]] = []
    blocks: list[list[float]] = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != dim + 2:
            raise ConfigError(f"malformed trajectory row: {line!r}")
        tau = float(parts[0])
        if not taus or tau != taus[-1]:
            taus.append(tau)
            blocks.append([])
        if len(taus) == 1:
            k_rows.append([float(p) for p in parts[1 : dim + 1]])
        blocks[-1].append(float(parts[dim + 1]))
    sizes = {len(b) for b in blocks}
    if len(sizes) != 1:
        raise ConfigError(f"{path} has ragged time slices")
    return np.asarray(taus), np.asarray(k_rows), np.asarray(blocks)


# ---------------------------------------------------------------------------
# descriptor parsers (shared across runners)
# ---------------------------------------------------------------------------


def _parse_lattice(block, where: str) -> Lattice:
    if not isinstance(block, Mapping):
        raise ConfigError(f"{where}: lattice must be an object")
    _check_keys(block, f"{where}.lattice", required=["dimension", "side"])
    return Lattice(dimension=int(block["dimension"]), side=int(block["side"]))


def _parse_dispersion(block, dimension: int, where: str) -> Dispersion:
    if not isinstance(block, Mapping):
        raise ConfigError(f"{where}: dispersion must be an object")
    _check_keys(block, f"{where}.dispersion", required=["kind"], optional=["second_shell"])
    kind = block["kind"]
    if kind == "nearest-neighbor":
        return nearest_neighbor_dispersion(dimension)
    if kind == "next-nearest":
        return next_nearest_dispersion(dimension, second_shell=float(block.get("second_shell", 0.25)))
    if kind == "zero":
        return zero_dispersion(dimension)
    raise ConfigError(
        f"{where}: unknown dispersion kind {kind!r}; "
        "expected nearest-neighbor | next-nearest | zero"
    )


def _parse_w0(block, lattice: Lattice, dispersion: Dispersion, where: str) -> np.ndarray:
    """Initial spectrum descriptors: flat | cosine | equilibrium | csv."""
    if not isinstance(block, Mapping):
        raise ConfigError(f"{where}: w0 must be an object")
    kind = block.get("kind")
    if kind == "flat":
        _check_keys(block, f"{where}.w0", required=["kind", "value"])
        return np.full(lattice.shape, float(block["value"]))
    if kind == "cosine":
        _check_keys(block, f"{where}.w0", required=["kind", "mean", "amplitudes"])
        amps = [float(a) for a in block["amplitudes"]]
        if len(amps) != lattice.dimension:
            raise ConfigError(
                f"{where}.w0: cosine needs {lattice.dimension} amplitudes, got {len(amps)}"
            )
        grid = lattice.k_grid()
        values = np.full(lattice.shape, float(block["mean"]))
        for axis, amp in enumerate(amps):
            values = values + amp * np.cos(2.0 * np.pi * grid[..., axis])
        return values
    if kind == "equilibrium":
        _check_keys(block, f"{where}.w0", required=["kind", "beta", "mu"])
        params = EquilibriumParams(beta=float(block["beta"]), mu=float(block["mu"]))
        return params.spectrum(lattice, dispersion).values
    if kind == "csv":
        _check_keys(block, f"{where}.w0", required=["kind", "path"])
        _, values, _ = read_spectrum_csv(block["path"])
        if values.size != lattice.size:
            raise ConfigError(
                f"{where}.w0: file has {values.size} rows, lattice has {lattice.size} sites"
            )
        return values.reshape(lattice.shape)
    raise ConfigError(
        f"{where}: unknown w0 kind {kind!r}; expected flat | cosine | equilibrium | csv"
    )


def _parse_collision(
    lattice: Lattice,
    dispersion: Dispersion,
    delta_block,
    method,
    where: str,
) -> CollisionConfig:
    """Build a CollisionConfig from a delta-model descriptor."""
    if not isinstance(delta_block, Mapping):
        raise ConfigError(f"{where}: delta model must be an object")
    model = delta_block.get("model")
    if model == "gaussian":
        _check_keys(delta_block, f"{where}.delta", required=["model"], optional=["epsilon"])
        eps = delta_block.get("epsilon")
        kwargs = {"delta_model": "gaussian", "epsilon": None if eps is None else float(eps)}
    elif model == "fejer":
        _check_keys(
            delta_block, f"{where}.delta",
            required=["model", "window_tau", "window_coupling"],
        )
        kwargs = {
            "delta_model": "fejer",
            "window_tau": float(delta_block["window_tau"]),
            "window_coupling": float(delta_block["window_coupling"]),
        }
    else:
        raise ConfigError(f"{where}: unknown delta model {model!r}; expected gaussian | fejer")
    if method is None:
        method = "fft" if model == "gaussian" else "direct"
    return CollisionConfig(lattice=lattice, dispersion=dispersion, method=str(method), **kwargs)


def _load_block(params: Mapping, name: str, where: str):
    """Fetch a JSON block given inline (``name``) or by file (``name_path``)."""
    inline = params.get(name)
    path = params.get(f"{name}_path")
    if (inline is None) == (path is None):
        raise ConfigError(f"{where}: supply exactly one of {name!r} or '{name}_path'")
    if inline is not None:
        return inline
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{where}: {path} is not valid JSON: {err}") from err


def _value_map_to_json(entries: Mapping[tuple, complex]) -> dict[str, list[float]]:
    """Canonical-key map -> {key string: [re, im]}, deterministically ordered."""
    out = {}
    for key in sorted(entries, key=_key_to_str):
        value = complex(entries[key])
        out[_key_to_str(key)] = [value.real, value.imag]
    return out


def _map_in_order(worker: Callable, items: Sequence, threads: int) -> list:
    """Apply ``worker`` to independent items, results in item order.

    Each item is computed by a self-contained sequential numpy routine, so
    the result list — and everything derived from it — is identical for any
    thread count; threads only change the wall-clock time.
    """
    if threads <= 1 or len(items) <= 1:
        return [worker(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, items))


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------


def _run_wick_expand(rc: RunConfig, out_dir: Path) -> dict:
    """Expand the Wick polynomial of an index sequence over a cumulant table."""
    params = rc.params
    _check_keys(
        params, "wick-expand params",
        required=["indices"], optional=["cumulants", "cumulants_path"],
    )
    indices = params["indices"]
    if not isinstance(indices, list) or not indices:
        raise ConfigError("wick-expand: indices must be a nonempty list")
    indices = [_as_index(idx) for idx in indices]
    table_json = _load_block(params, "cumulants", "wick-expand")
    table = CumulantTable.from_json(table_json)
    poly = wick_from_cumulants(table, LabeledSeq.from_indices(indices))
    _write_json(out_dir / "wick_poly.json", poly.to_json())
    return {
        "outputs": ["wick_poly.json"],
        "summary": {"indices": len(indices), "terms": len(poly.terms)},
    }


def _run_cumulant_convert(rc: RunConfig, out_dir: Path) -> dict:
    """Convert a moment table to cumulants, or a cumulant table to moments."""
    params = rc.params
    _check_keys(
        params, "cumulant-convert params",
        required=["direction"], optional=["table", "table_path"],
    )
    direction = params["direction"]
    table_json = _load_block(params, "table", "cumulant-convert")
    if not isinstance(table_json, Mapping):
        raise ConfigError("cumulant-convert: table must be a JSON object")
    keys = [_str_to_key(s) for s in table_json]
    entries = {k: complex(v[0], v[1]) for k, v in zip(keys, table_json.values())}
    if direction == "moments-to-cumulants":
        oracle = TableOracle(entries)
        evaluator = CumulantEvaluator(oracle)
        try:
            converted = {key: evaluator.kappa(key) for key in keys}
        except KeyError as err:
            raise ConfigError(
                f"cumulant-convert: moment table is missing the sub-moment {err.args[0]!r}"
            ) from err
    elif direction == "cumulants-to-moments":
        table = CumulantTable(entries=dict(entries))
        converted = {
            key: moments_from_cumulants(table, LabeledSeq.from_indices(key)) for key in keys
        }
    else:
        raise ConfigError(
            f"cumulant-convert: unknown direction {direction!r}; "
            "expected moments-to-cumulants | cumulants-to-moments"
        )
    _write_json(out_dir / "converted.json", _value_map_to_json(converted))
    return {"outputs": ["converted.json"], "summary": {"entries": len(converted)}}


def _amplitude_from_descriptor(block, where: str):
    """Amplitude descriptors: constant | phase (e^{i omega t}) | table-driven."""
    if not isinstance(block, Mapping):
        raise ConfigError(f"{where}: amplitude must be an object")
    kind = block.get("type")
    if kind == "constant":
        _check_keys(block, where, required=["type", "value"])
        value = block["value"]
        return constant_amplitude(complex(value[0], value[1]))
    if kind == "phase":
        _check_keys(block, where, required=["type", "omega"], optional=["scale"])
        scale = block.get("scale", [1.0, 0.0])
        s = complex(scale[0], scale[1])
        omega = float(block["omega"])
        return lambda t, table: s * cmath.exp(1j * omega * t)
    if kind == "table":
        _check_keys(block, where, required=["type", "key"], optional=["scale"])
        scale = block.get("scale", [1.0, 0.0])
        s = complex(scale[0], scale[1])
        key = tuple(_as_index(idx) for idx in block["key"])
        return lambda t, table: s * table.kappa(key)
    raise ConfigError(f"{where}: unknown amplitude type {kind!r}; expected constant | phase | table")


def _run_hierarchy_rhs(rc: RunConfig, out_dir: Path) -> dict:
    """Evaluate the cumulant-hierarchy right-hand side for one model state."""
    params = rc.params
    _check_keys(
        params, "hierarchy-rhs params",
        required=["order"],
        optional=["model", "model_path", "table", "table_path", "time"],
    )
    order = int(params["order"])
    if order < 1:
        raise ConfigError("hierarchy-rhs: order must be at least 1")
    model_json = _load_block(params, "model", "hierarchy-rhs")
    if not isinstance(model_json, Mapping):
        raise ConfigError("hierarchy-rhs: model must be a JSON object")
    _check_keys(model_json, "hierarchy-rhs model", required=["terms"])
    if not isinstance(model_json["terms"], list):
        raise ConfigError("hierarchy-rhs: model terms must be a list")
    terms: dict = {}
    for pos, item in enumerate(model_json["terms"]):
        where = f"hierarchy-rhs model terms[{pos}]"
        if not isinstance(item, Mapping):
            raise ConfigError(f"{where}: must be an object")
        _check_keys(item, where, required=["index", "seq", "amplitude"])
        seq = item["seq"]
        if not isinstance(seq, list) or not seq:
            raise ConfigError(f"{where}: seq must be a nonempty list")
        term = InteractionTerm(
            seq=LabeledSeq.from_indices([_as_index(idx) for idx in seq]),
            amplitude=_amplitude_from_descriptor(item["amplitude"], f"{where}.amplitude"),
        )
        terms.setdefault(_as_index(item["index"]), []).append(term)
    model = AmplitudeModel(terms=terms)
    table_json = _load_block(params, "table", "hierarchy-rhs")
    table = CumulantTable.from_json(table_json, max_order=order)
    state = HierarchyState(table=table, time=float(params.get("time", 0.0)))
    targets = all_keys_up_to(model.universe(), order)
    rhs = hierarchy_rhs_table(model, state, targets)
    _write_json(out_dir / "rhs_table.json", _value_map_to_json(rhs))
    return {"outputs": ["rhs_table.json"], "summary": {"targets": len(rhs), "order": order}}


def _ensemble_observables(fields: np.ndarray, omega: np.ndarray, coupling: float, axes) -> tuple[float, float]:
    """Ensemble means of the per-realization mass and energy."""
    size = omega.size
    psi_hat = np.fft.fftn(fields, axes=axes)
    mass = np.sum(np.abs(fields) ** 2, axis=axes)
    kinetic = np.sum(omega * np.abs(psi_hat) ** 2, axis=axes) / size
    quartic = 0.5 * coupling * np.sum(np.abs(fields) ** 4, axis=axes)
    return float(np.mean(mass)), float(np.mean(kinetic + quartic))


def _run_dnls_simulate(rc: RunConfig, out_dir: Path) -> dict:
    """Evolve a sampled ensemble, recording observables and the final spectrum."""
    params = rc.params
    _check_keys(
        params, "dnls-simulate params",
        required=["lattice", "dispersion", "coupling", "w0", "n_realizations", "dt", "t_end"],
        optional=["family", "record_every"],
    )
    lattice = _parse_lattice(params["lattice"], "dnls-simulate")
    dispersion = _parse_dispersion(params["dispersion"], lattice.dimension, "dnls-simulate")
    w0 = _parse_w0(params["w0"], lattice, dispersion, "dnls-simulate")
    coupling = float(params["coupling"])
    n_real = int(params["n_realizations"])
    if n_real < 2:
        raise ConfigError("dnls-simulate: n_realizations must be at least 2")
    dt = float(params["dt"])
    t_end = float(params["t_end"])
    if dt <= 0.0 or t_end <= 0.0:
        raise ConfigError("dnls-simulate: dt and t_end must be positive")
    n_steps = round(t_end / dt)
    if n_steps < 1 or abs(n_steps * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ConfigError("dnls-simulate: t_end must be a whole number of dt steps")
    record_every = int(params.get("record_every", 1))
    if record_every < 1 or n_steps % record_every:
        raise ConfigError("dnls-simulate: record_every must divide the step count")

    ensemble = sample_initial(
        lattice, w0, n_real, seed=rc.seed,
        family=str(params.get("family", "gaussian")), coupling=coupling,
    )
    omega = dispersion.omega(lattice)
    axes = tuple(axis + 1 for axis in lattice.axes)
    rows = []
    mass, energy = _ensemble_observables(ensemble.fields, omega, coupling, axes)
    rows.append([repr(0.0), repr(mass), repr(energy)])
    for block in range(n_steps // record_every):
        ensemble = integrate_ensemble(ensemble, dispersion, dt, record_every)
        mass, energy = _ensemble_observables(ensemble.fields, omega, coupling, axes)
        rows.append([repr(float((block + 1) * record_every * dt)), repr(mass), repr(energy)])
    _write_csv(out_dir / "observables.csv", ["time", "mean_mass", "mean_energy"], rows)
    write_spectrum_csv(lattice, estimate_W(ensemble), out_dir / "spectrum.csv")
    return {
        "outputs": ["observables.csv", "spectrum.csv"],
        "summary": {"n_steps": n_steps, "records": len(rows), "final_mean_mass": mass},
    }


def _run_estimate_w(rc: RunConfig, out_dir: Path) -> dict:
    """Sample an initial ensemble and estimate its covariance spectrum."""
    params = rc.params
    _check_keys(
        params, "estimate-w params",
        required=["lattice", "dispersion", "w0", "n_realizations"], optional=["family"],
    )
    lattice = _parse_lattice(params["lattice"], "estimate-w")
    dispersion = _parse_dispersion(params["dispersion"], lattice.dimension, "estimate-w")
    w0 = _parse_w0(params["w0"], lattice, dispersion, "estimate-w")
    n_real = int(params["n_realizations"])
    if n_real < 2:
        raise ConfigError("estimate-w: n_realizations must be at least 2")
    ensemble = sample_initial(
        lattice, w0, n_real, seed=rc.seed, family=str(params.get("family", "gaussian")),
    )
    estimate = estimate_W(ensemble)
    write_spectrum_csv(lattice, estimate, out_dir / "spectrum.csv")
    worst = float(np.max(np.abs(estimate.values - w0) / np.maximum(estimate.stderr, 1e-300)))
    return {
        "outputs": ["spectrum.csv"],
        "summary": {"n_realizations": n_real, "max_zscore_vs_w0": worst},
    }


def _run_bp_solve(rc: RunConfig, out_dir: Path) -> dict:
    """Integrate the kinetic equation and emit the trajectory + summary."""
    params = rc.params
    _check_keys(
        params, "bp-solve params",
        required=["lattice", "dispersion", "delta", "w0", "tau_end", "dtau"],
        optional=["method"],
    )
    lattice = _parse_lattice(params["lattice"], "bp-solve")
    dispersion = _parse_dispersion(params["dispersion"], lattice.dimension, "bp-solve")
    config = _parse_collision(lattice, dispersion, params["delta"], params.get("method"), "bp-solve")
    w0 = _parse_w0(params["w0"], lattice, dispersion, "bp-solve")
    trajectory = bp_solve(w0, config, tau_end=float(params["tau_end"]), dtau=float(params["dtau"]))
    write_trajectory_csv(lattice, trajectory, out_dir / "trajectory.csv")
    _write_json(
        out_dir / "summary.json",
        {
            "taus": [float(t) for t in trajectory.taus],
            "number": [float(v) for v in trajectory.number],
            "energy": [float(v) for v in trajectory.energy],
            "entropy": [float(v) for v in trajectory.entropy],
        },
    )
    drift = float(np.max(np.abs(trajectory.number - trajectory.number[0])))
    return {
        "outputs": ["trajectory.csv", "summary.json"],
        "summary": {"n_steps": trajectory.n_steps, "number_drift": drift},
    }


def _run_bp_compare(rc: RunConfig, out_dir: Path) -> dict:
    """Tabulate the gap between the pre-limit kernel and the limit operator.

    One row per coupling value: as the coupling shrinks at fixed tau, the
    time-averaged first-order kernel divided by tau approaches the collision
    operator computed with the configured reference delta model.
    """
    params = rc.params
    _check_keys(
        params, "bp-compare params",
        required=["lattice", "dispersion", "w0", "tau", "lambda_list", "reference_delta"],
        optional=["method"],
    )
    lattice = _parse_lattice(params["lattice"], "bp-compare")
    dispersion = _parse_dispersion(params["dispersion"], lattice.dimension, "bp-compare")
    w0 = _parse_w0(params["w0"], lattice, dispersion, "bp-compare")
    tau = float(params["tau"])
    if tau <= 0.0:
        raise ConfigError("bp-compare: tau must be positive")
    lambdas = [float(v) for v in params["lambda_list"]]
    if not lambdas or any(v <= 0.0 for v in lambdas):
        raise ConfigError("bp-compare: lambda_list must be a nonempty list of positive values")
    config = _parse_collision(
        lattice, dispersion, params["reference_delta"], params.get("method"), "bp-compare",
    )
    reference = collision_operator(w0, config).values

    def gaps_for(coupling: float) -> np.ndarray:
        return prelimit_kernel(w0, coupling, tau, config).values / tau - reference

    gap_fields = _map_in_order(gaps_for, lambdas, rc.threads)
    rows = []
    for coupling, gaps in zip(lambdas, gap_fields):
        rows.append(
            [
                repr(coupling),
                repr(float(np.max(np.abs(gaps)))),
                repr(float(np.sqrt(np.mean(gaps**2)))),
                repr(float(np.mean(np.abs(gaps)))),
            ]
        )
    _write_csv(out_dir / "convergence.csv", ["lambda", "sup_gap", "rms_gap", "mean_abs_gap"], rows)
    return {
        "outputs": ["convergence.csv"],
        "summary": {"lambdas": len(lambdas), "final_sup_gap": float(rows[-1][1])},
    }


def _run_kinetic_check(rc: RunConfig, out_dir: Path) -> dict:
    """Monte Carlo spectrum increments against the kinetic prediction.

    For each coupling lambda the sampled ensemble is evolved to the kinetic
    time tau/lambda^2 and the per-mode increment (W_t - W_0)/tau is averaged
    over realizations with jackknife errors.  The emitted table carries, per
    (lambda, k): the reference collision operator, the analytic first-order
    kernel over tau (noise-free), the MC mean, its standard error, and the
    MC-minus-reference gap.  All couplings reuse the same initial ensemble
    stream, so columns are comparable realization by realization.
    """
    params = rc.params
    _check_keys(
        params, "kinetic-check params",
        required=["lattice", "dispersion", "w0", "coupling_list", "tau", "dt", "n_realizations"],
        optional=["family", "reference_delta", "method", "se_threshold", "min_resolved_modes"],
    )
    lattice = _parse_lattice(params["lattice"], "kinetic-check")
    dispersion = _parse_dispersion(params["dispersion"], lattice.dimension, "kinetic-check")
    w0 = _parse_w0(params["w0"], lattice, dispersion, "kinetic-check")
    tau = float(params["tau"])
    dt = float(params["dt"])
    if tau <= 0.0 or dt <= 0.0:
        raise ConfigError("kinetic-check: tau and dt must be positive")
    lambdas = [float(v) for v in params["coupling_list"]]
    if not lambdas or any(v <= 0.0 for v in lambdas):
        raise ConfigError("kinetic-check: coupling_list must be a nonempty list of positive values")
    n_real = int(params["n_realizations"])
    if n_real < 2:
        raise ConfigError("kinetic-check: n_realizations must be at least 2")
    family = str(params.get("family", "gaussian"))
    se_threshold = float(params.get("se_threshold", 3.0))
    min_resolved = int(params.get("min_resolved_modes", 1))
    delta_block = params.get("reference_delta", {"model": "gaussian"})
    config = _parse_collision(lattice, dispersion, delta_block, params.get("method"), "kinetic-check")
    reference = collision_operator(w0, config).values

    step_counts = []
    for coupling in lambdas:
        t_end = tau / coupling**2
        n_steps = round(t_end / dt)
        if n_steps < 1 or abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
            raise ConfigError(
                f"kinetic-check: kinetic time {t_end!r} at coupling {coupling!r} "
                "is not a whole number of dt steps"
            )
        step_counts.append(n_steps)

    def check_for(item: tuple[float, int]):
        coupling, n_steps = item
        ensemble = sample_initial(lattice, w0, n_real, seed=rc.seed, family=family, coupling=coupling)
        before = np.abs(ensemble.fourier()) ** 2 / lattice.size
        evolved = integrate_ensemble(ensemble, dispersion, dt, n_steps)
        after = np.abs(evolved.fourier()) ** 2 / lattice.size
        increments = (after - before) / tau
        analytic = prelimit_kernel(w0, coupling, tau, config).values / tau
        mc_mean = increments.mean(axis=0)
        mc_se = _jackknife_stderr(increments)
        resolved = int(np.sum(np.abs(analytic) > se_threshold * mc_se))
        return analytic, mc_mean, mc_se, resolved

    results = _map_in_order(check_for, list(zip(lambdas, step_counts)), rc.threads)

    header = (
        ["lambda"]
        + [f"k{i + 1}" for i in range(lattice.dimension)]
        + ["collision", "prelimit", "mc_mean", "mc_se", "gap"]
    )
    rows = []
    resolved_counts = {}
    for coupling, (analytic, mc_mean, mc_se, resolved) in zip(lambdas, results):
        if resolved < min_resolved:
            raise ConfigError(
                f"kinetic-check: ensemble too small for the requested error bars "
                f"(coupling {coupling!r} resolves {resolved} modes at "
                f"{se_threshold} standard errors; need {min_resolved})"
            )
        resolved_counts[repr(coupling)] = resolved
        for site in np.ndindex(lattice.shape):
            rows.append(
                [repr(coupling)]
                + [repr(component / lattice.side) for component in site]
                + [
                    repr(float(reference[site])),
                    repr(float(analytic[site])),
                    repr(float(mc_mean[site])),
                    repr(float(mc_se[site])),
                    repr(float(mc_mean[site] - reference[site])),
                ]
            )
    _write_csv(out_dir / "kinetic_check.csv", header, rows)
    return {
        "outputs": ["kinetic_check.csv"],
        "summary": {"resolved_modes": resolved_counts, "n_realizations": n_real},
    }


_RUNNERS = {
    "wick-expand": _run_wick_expand,
    "cumulant-convert": _run_cumulant_convert,
    "hierarchy-rhs": _run_hierarchy_rhs,
    "dnls-simulate": _run_dnls_simulate,
    "estimate-w": _run_estimate_w,
    "bp-solve": _run_bp_solve,
    "bp-compare": _run_bp_compare,
    "kinetic-check": _run_kinetic_check,
}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def run(rc: RunConfig) -> list[Path]:
    """Execute one run: write result files and the manifest, return their paths."""
    out_dir = Path(rc.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    report = _RUNNERS[rc.kind](rc, out_dir)
    manifest = {
        "package_version": __version__,
        "kind": rc.kind,
        "config": rc.echo(),
        "outputs": report["outputs"],
        "summary": report["summary"],
        "timings": {"total_seconds": time.perf_counter() - started},
    }
    _write_json(out_dir / "manifest.json", manifest)
    return [out_dir / name for name in report["outputs"]] + [out_dir / "manifest.json"]


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="wickkit",
        description="Deterministic batch runs of the wickkit library modules.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run config (or a manifest to replay)")
    common.add_argument("--seed", type=int, default=None, help="override the config's master seed")
    common.add_argument("--threads", type=int, default=None, help="override the worker thread count")
    common.add_argument("--out", default=None, help="override the output directory")
    subparsers = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        subparsers.add_parser(kind, parents=[common], help=f"run a {kind} experiment")
    args = parser.parse_args(argv)
    try:
        rc = load_run_config(
            args.config, kind=args.kind, seed=args.seed, threads=args.threads, out=args.out,
        )
        written = run(rc)
    except ConfigError as err:
        return _fail(2, err)
    except GuardError as err:
        return _fail(3, err)
    except OSError as err:
        return _fail(4, err)
    print(f"{args.kind}: wrote {len(written)} files to {Path(rc.out)}")
    return 0


def _fail(code: int, err: Exception) -> int:
    report = {"error": type(err).__name__, "message": str(err), "exit_code": code}
    print(json.dumps(report, sort_keys=True), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
