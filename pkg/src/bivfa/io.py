"""File formats: matrix CSV, instance manifests, references and traces.

Matrix CSV
    First line ``rows,cols``; then one comma-separated line per row.
    Vectors are stored as a single column. Floats are written with 17
    significant digits so that a round trip is exact.

Manifest
    A JSON object with an ``instance`` section (a generator spec and/or
    matrix files), an optional ``solver`` section with :class:`OuterConfig`
    fields, and an optional ``reference`` path. Relative paths are resolved
    against the manifest's directory.

Trace CSV
    Header ``iter,queries,c,l,u,branch,f_val,g_val,f_gap,g_gap``; gap
    cells are empty when no reference is available. With wall-clock
    timing the second column is ``time`` (seconds) instead of ``queries``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .dual import InnerOptions
from .errors import ConfigurationError
from .problems import (InstanceData, InstanceSpec, ReferenceValues, generate_data)
from .solver import OuterConfig, SolveReport, TraceRow

__all__ = [
    "TRACE_HEADER",
    "write_matrix_csv",
    "read_matrix_csv",
    "save_instance",
    "load_manifest",
    "load_instance",
    "config_from_manifest",
    "write_reference",
    "read_reference",
    "format_trace",
    "write_trace",
    "report_to_dict",
    "write_json",
]

TRACE_HEADER = "iter,queries,c,l,u,branch,f_val,g_val,f_gap,g_gap"
TIME_TRACE_HEADER = "iter,time,c,l,u,branch,f_val,g_val,f_gap,g_gap"


def _fmt(v: float) -> str:
    return repr(float(v))


def write_matrix_csv(path, M) -> None:
    """Write a matrix (or a vector as one column) in the ``rows,cols`` format."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2:
        raise ConfigurationError(f"only vectors and matrices can be written, got ndim={M.ndim}")
    lines = [f"{M.shape[0]},{M.shape[1]}"]
    lines += [",".join(_fmt(v) for v in row) for row in M]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path, vector: bool = False) -> np.ndarray:
    """Read a matrix written by :func:`write_matrix_csv`.

    With ``vector=True`` a single-column (or single-row) matrix is returned
    as a one-dimensional array.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise ConfigurationError(f"cannot read matrix file {path}: {exc.strerror}") from exc
    if not rows or len(rows[0]) != 2:
        raise ConfigurationError(f"{path}: first line must be 'rows,cols'")
    try:
        m, n = int(rows[0][0]), int(rows[0][1])
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: malformed number ({exc})") from exc
    if data.shape != (m, n):
        raise ConfigurationError(f"{path}: header says {m}x{n} but the body is {data.shape}")
    if vector:
        if min(m, n) != 1:
            raise ConfigurationError(f"{path}: expected a vector, got a {m}x{n} matrix")
        return data.reshape(-1)
    return data


def save_instance(data: InstanceData, out_dir, extra: dict | None = None) -> Path:
    """Write the matrices of ``data`` and a manifest into ``out_dir``.

    Returns the path of ``manifest.json``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"cannot create output directory {out}: {exc.strerror}") from exc
    files = {}
    for key in sorted(data.matrices):
        if key == "x_true":
            continue
        name = f"{key}.csv"
        write_matrix_csv(out / name, data.matrices[key])
        files[key] = name
    instance = {
        "family": data.family,
        "upper_smooth": data.upper_smooth,
        "upper_nonsmooth": data.upper_nonsmooth,
        "lower_smooth": data.lower_smooth,
        "lower_nonsmooth": data.lower_nonsmooth,
        "params": {k: data.params[k] for k in sorted(data.params)},
        "matrices": files,
    }
    if data.spec:
        instance["spec"] = dict(data.spec)
    manifest = {"instance": instance}
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    write_json(path, manifest)
    return path


def load_manifest(path) -> dict:
    """Parse a manifest file; missing or malformed files raise ``FileNotFoundError``/``ConfigurationError``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict) or "instance" not in manifest:
        raise ConfigurationError(f"{path}: a manifest needs an 'instance' section")
    return manifest


def load_instance(manifest: dict, base_dir) -> InstanceData:
    """Build :class:`InstanceData` from a manifest.

    Matrix files take precedence; a manifest with only a ``spec`` is
    regenerated from the seed.
    """
    inst = manifest["instance"]
    base = Path(base_dir)
    if "matrices" not in inst:
        if "spec" not in inst:
            raise ConfigurationError("instance section needs 'matrices' or 'spec'")
        return generate_data(_spec_from_dict(inst["spec"]))
    matrices = {}
    for key, rel in inst["matrices"].items():
        p = base / rel
        if not p.is_file():
            raise FileNotFoundError(f"matrix file for {key!r} not found: {p}")
        matrices[key] = read_matrix_csv(p, vector=key.endswith("_b"))
    required = ("upper_smooth", "upper_nonsmooth", "lower_smooth", "lower_nonsmooth")
    missing = [k for k in required if k not in inst]
    if missing:
        raise ConfigurationError(f"instance section is missing {missing}")
    return InstanceData(inst.get("family", "Custom"), matrices, inst["upper_smooth"],
                        inst["upper_nonsmooth"], inst["lower_smooth"], inst["lower_nonsmooth"],
                        dict(inst.get("params", {})), dict(inst.get("spec", {})))


def _spec_from_dict(d: dict) -> InstanceSpec:
    names = {f.name for f in fields(InstanceSpec)}
    unknown = set(d) - names
    if unknown:
        raise ConfigurationError(f"unknown instance spec fields {sorted(unknown)}")
    return InstanceSpec(**d)


def config_from_manifest(manifest: dict, **overrides) -> OuterConfig:
    """:class:`OuterConfig` from the manifest's ``solver`` section plus overrides.

    An ``inner`` sub-object is forwarded to :class:`InnerOptions`.
    """
    section = dict(manifest.get("solver", {}))
    section.update({k: v for k, v in overrides.items() if v is not None})
    inner = section.pop("inner", None)
    names = {f.name for f in fields(OuterConfig)}
    unknown = set(section) - names
    if unknown:
        raise ConfigurationError(f"unknown solver settings {sorted(unknown)}")
    if "eps" not in section:
        raise ConfigurationError("solver settings need 'eps'")
    if inner is not None:
        inner_names = {f.name for f in fields(InnerOptions)}
        if set(inner) - inner_names:
            raise ConfigurationError(f"unknown inner settings {sorted(set(inner) - inner_names)}")
        section["inner"] = InnerOptions(**inner)
    return OuterConfig(**section)


def write_reference(path, ref: ReferenceValues) -> None:
    write_json(path, ref.as_dict())


def read_reference(path) -> ReferenceValues:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"reference file not found: {path}")
    d = json.loads(path.read_text())
    try:
        return ReferenceValues(float(d["g_star"]), float(d["f_star"]), float(d["p_star"]),
                               np.asarray(d.get("x_ref", []), dtype=float),
                               float(d["tolerance_achieved"]), float(d.get("relaxation", 1e-10)))
    except KeyError as exc:
        raise ConfigurationError(f"{path}: missing field {exc.args[0]!r}") from exc


def _cell(v) -> str:
    return "" if v is None else _fmt(v)


def format_trace(rows: Iterable[TraceRow], wall_clock: bool = False) -> str:
    """Render trace rows as CSV text (header included)."""
    lines = [TIME_TRACE_HEADER if wall_clock else TRACE_HEADER]
    for r in rows:
        cost = _fmt(r.seconds) if wall_clock else str(int(r.queries))
        lines.append(",".join([str(int(r.iteration)), cost, _fmt(r.c), _fmt(r.l), _fmt(r.u),
                               r.branch.value, _fmt(r.f_val), _fmt(r.g_val),
                               _cell(r.f_gap), _cell(r.g_gap)]))
    return "\n".join(lines) + "\n"


def write_trace(path, rows: Iterable[TraceRow], wall_clock: bool = False) -> None:
    Path(path).write_text(format_trace(rows, wall_clock))


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "value") and not isinstance(v, (str, int)):
        return v.value
    return v


def report_to_dict(rep: SolveReport) -> dict:
    """JSON-ready view of a :class:`SolveReport` (the trace lives in the CSV)."""
    return _jsonable({
        "exit_kind": rep.exit_kind,
        "x_final": rep.x_final,
        "f_val": rep.f_val,
        "g_val": rep.g_val,
        "f_gap": rep.f_gap,
        "g_gap": rep.g_gap,
        "outer_iterations": rep.outer_iterations,
        "total_queries": rep.total_queries.as_dict(),
        "l": rep.l, "u": rep.u, "l0": rep.l0, "u0": rep.u0,
        "Delta1": rep.Delta1,
        "schedule": rep.schedule.as_dict(),
        "interval_calls": rep.interval_calls,
        "interval_caps": rep.interval_caps,
        "trace_rows": len(rep.trace),
        "seconds": rep.seconds,
    })


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n")


def default_output_dir(fallback) -> Path:
    """``$BIVFA_OUTPUT_DIR`` when set, otherwise ``fallback``."""
    env = os.environ.get("BIVFA_OUTPUT_DIR")
    return Path(env) if env else Path(fallback)
