"""Stable on-disk formats: state snapshots, records, grids, sweep tables.

Payload files never contain timestamps or host information, so a fixed
(config, seed) pair reproduces them byte-for-byte; volatile details go to a
sidecar ``*.meta.json``.  State snapshots store amplitudes as interleaved
(re, im) pairs in the row-major mode order of the basis.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
import time
from typing import Any

import numpy as np

from . import bell, fock, protocol

SNAPSHOT_VERSION = 1

SWEEP_COLUMNS = ("r", "mean_fidelity", "stderr", "oracle_value", "truncation_budget")
DENSITY_COLUMNS = ("chi_plus", "chi_minus", "density")


def _interleave(z: np.ndarray) -> list[float]:
    out = np.empty(2 * z.size)
    out[0::2] = z.real
    out[1::2] = z.imag
    return [float(v) for v in out]


def _deinterleave(vals: list[float]) -> np.ndarray:
    arr = np.asarray(vals, dtype=float)
    return arr[0::2] + 1j * arr[1::2]


def state_to_dict(state: fock.FockVector | fock.DensityOperator) -> dict:
    basis = state.basis
    out = {
        "format": "cvteleport-state",
        "version": SNAPSHOT_VERSION,
        "modes": list(basis.modes),
        "cutoff": basis.cutoff,
        "trunc_budget": float(state.trunc_budget),
    }
    if isinstance(state, fock.FockVector):
        out["kind"] = "vector"
        out["normalized"] = bool(state.normalized)
        out["amplitudes"] = _interleave(state.amplitudes)
    else:
        out["kind"] = "density"
        out["matrix"] = _interleave(state.matrix.reshape(-1))
    return out


def state_from_dict(data: dict) -> fock.FockVector | fock.DensityOperator:
    if data.get("format") != "cvteleport-state":
        raise ValueError("not a cvteleport state snapshot")
    basis = fock.BasisSpec(tuple(data["modes"]), int(data["cutoff"]))
    budget = float(data.get("trunc_budget", 0.0))
    if data["kind"] == "vector":
        amps = _deinterleave(data["amplitudes"])
        return fock.FockVector(basis, amps, normalized=bool(data["normalized"]),
                               trunc_budget=budget)
    mat = _deinterleave(data["matrix"]).reshape(basis.dim, basis.dim)
    return fock.DensityOperator(basis, mat, trunc_budget=budget)


def record_to_dict(record: protocol.TeleportRecord, resolved_config: dict) -> dict:
    return {
        "format": "cvteleport-record",
        "version": SNAPSHOT_VERSION,
        "config": resolved_config,
        "outcome": {
            "chi_plus": record.outcome.chi_plus,
            "chi_minus": record.outcome.chi_minus,
            "alpha": [record.outcome.alpha.real, record.outcome.alpha.imag],
            "density_weight": record.outcome.density_weight,
        },
        "fidelity_post": record.fidelity_post,
        "density_weight": record.density_weight,
        "truncation_budget": record.truncation_budget,
        "route_check": record.route_check,
        "bob_pre": state_to_dict(record.bob_pre),
        "bob_post": state_to_dict(record.bob_post),
    }


def report_to_dict(report: protocol.FidelityReport) -> dict:
    return {
        "r": report.r,
        "gain": report.gain,
        "method": report.method,
        "mean_fidelity": report.mean,
        "stderr": report.stderr,
        "n_samples": report.n_samples,
        "quantiles": {f"{q:.2f}": v for q, v in report.quantiles.items()},
        "normalization_deficit": report.normalization_deficit,
        "truncation_budget": report.truncation_budget,
    }


# ---------------------------------------------------------------------------
# atomic writers


def atomic_write_text(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, payload: dict):
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_sidecar_metadata(path: str, extra: dict | None = None):
    meta = {"written_at_unix": time.time()}
    if extra:
        meta.update(extra)
    write_json(path + ".meta.json", meta)


def sweep_rows_to_csv(rows: list[protocol.SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        if row.report is None:
            writer.writerow([_fmt(row.value), "", "", "", f"error: {row.error}"])
            continue
        oracle = "" if row.oracle_value is None else _fmt(row.oracle_value)
        writer.writerow([_fmt(row.value), _fmt(row.report.mean),
                         _fmt(row.report.stderr), oracle,
                         _fmt(row.report.truncation_budget)])
    return buf.getvalue()


def grid_to_csv(grid: bell.OutcomeGrid) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DENSITY_COLUMNS)
    xs = grid.chi_plus
    ys = grid.chi_minus
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            writer.writerow([_fmt(x), _fmt(y), _fmt(grid.density[i, j])])
    return buf.getvalue()


def grid_metadata(grid: bell.OutcomeGrid) -> dict:
    return {
        "format": "cvteleport-density",
        "version": SNAPSHOT_VERSION,
        "normalization_deficit": grid.normalization_deficit,
        "metadata": _plain(grid.metadata),
        "columns": list(DENSITY_COLUMNS),
        "row_count": int(grid.density.size),
    }


def _fmt(x: float) -> str:
    return repr(float(x))


def _plain(obj: Any):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
