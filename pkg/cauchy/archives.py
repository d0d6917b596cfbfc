"""
Measurement archives: one directory per experiment.

Layout::

    manifest.json           kind, grid, config hash, knowns, noise, file index
    traces/<name>.csv       boundary traces (see grid.fieldio)
    fields/<name>.mfgf      interior slices (C1 only)

The manifest exposes the grid, the declared knowns and the perturbation
metadata; the cost model never enters it, only the hash of the run
configuration that produced the archive.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Mapping, Optional, Tuple, Union

import numpy as np

from cauchy.measurements import (
    ExperimentRecord,
    MeasurementC1,
    MeasurementC2,
    MeasurementC3,
    ProbeRecord,
    gaussian_noise,
)
from grid.fieldio import (
    atomic_write_text,
    read_field,
    read_trace_csv,
    write_field,
    write_trace_csv,
)
from grid.mesh import GridSpec, build_grid
from mfglab.errors import ArchiveError, ArchiveIntegrityError

logger = logging.getLogger(__name__)

ARCHIVE_FORMAT = "mfglab-measurement"
ARCHIVE_VERSION = 1
MANIFEST = "manifest.json"

Measurement = Union[MeasurementC1, MeasurementC2, MeasurementC3]


def config_hash(config: Any) -> str:
    """sha256 of the canonical JSON form of ``config``."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _spec_from_dict(data: Mapping) -> GridSpec:
    try:
        return GridSpec(
            int(data["dim"]),
            tuple(tuple(float(b) for b in pair) for pair in data["extents"]),
            tuple(int(n) for n in data["nx"]),
            int(data["nt"]),
            float(data["horizon"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ArchiveError(f"manifest grid entry is malformed: {exc}") from exc


def write_archive(
    directory,
    measurement: Measurement,
    config_digest: str,
    knowns: Optional[Mapping[str, Any]] = None,
    noise_level: float = 0.0,
    seed: int = 0,
) -> Path:
    """Write ``measurement`` (with optional noise) and return the manifest path."""
    directory = Path(directory)
    if noise_level:
        measurement = measurement.map_traces(gaussian_noise(noise_level, seed))
    traces = {}
    for name, trace in measurement.traces().items():
        relative = f"traces/{name}.csv"
        write_trace_csv(directory / relative, trace)
        traces[name] = relative
    fields = {}
    if isinstance(measurement, MeasurementC1):
        for name, values in measurement.slices().items():
            relative = f"fields/{name}.mfgf"
            write_field(directory / relative, values)
            fields[name] = relative
    manifest = {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "kind": measurement.kind,
        "grid": measurement.grid.spec.to_dict(),
        "config_hash": config_digest,
        "knowns": dict(knowns or {}),
        "noise": {"level": noise_level, "seed": seed},
        "traces": traces,
        "fields": fields,
    }
    if isinstance(measurement, MeasurementC2):
        manifest["records"] = [r.describe() for r in measurement.records]
    if isinstance(measurement, MeasurementC3):
        manifest["records"] = [
            {"labels": list(r.labels), "name": r.name} for r in measurement.records
        ]
        manifest["epsilon"] = list(measurement.epsilon)
    path = atomic_write_text(
        directory / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True)
    )
    logger.info(
        f"Wrote {measurement.kind} archive with {len(traces)} traces to {directory}"
    )
    return path


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise ArchiveError(f"no measurement archive at {directory}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"{path}: invalid JSON ({exc})") from exc
    if manifest.get("format") != ARCHIVE_FORMAT:
        raise ArchiveError(f"{path}: not a measurement archive")
    if manifest.get("version") != ARCHIVE_VERSION:
        raise ArchiveError(f"{path}: unsupported archive version {manifest.get('version')}")
    return manifest


def read_archive(
    directory, expected_hash: Optional[str] = None, kind: Optional[str] = None
) -> Tuple[Measurement, dict]:
    """Load an archive, refusing it when its config hash or kind differs."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    if expected_hash is not None and manifest.get("config_hash") != expected_hash:
        raise ArchiveIntegrityError(
            f"archive {directory} was produced by another configuration "
            f"({manifest.get('config_hash')} != {expected_hash})"
        )
    if kind is not None and manifest.get("kind") != kind:
        raise ArchiveError(f"archive {directory} holds {manifest.get('kind')}, not {kind}")
    grid = build_grid(_spec_from_dict(manifest["grid"]))
    files = manifest.get("traces", {})

    def trace(name: str, time_dependent: bool):
        if name not in files:
            raise ArchiveError(f"archive {directory} lacks trace {name!r}")
        return read_trace_csv(directory / files[name], grid, time_dependent)

    kind = manifest.get("kind")
    if kind == "c1":
        slices = {
            name: read_field(directory / relative)
            for name, relative in manifest.get("fields", {}).items()
        }
        try:
            measurement = MeasurementC1(
                grid,
                slices["v_initial"],
                slices["v_final"],
                slices["m_initial"],
                slices["m_final"],
                trace("v", True),
                trace("m", True),
                trace("sigma_m", True),
            )
        except KeyError as exc:
            raise ArchiveError(f"archive {directory} lacks slice {exc}") from exc
    elif kind == "c2":
        records = []
        for entry in manifest.get("records", []):
            xi = np.array(entry["xi_real"]) + 1j * np.array(entry["xi_imag"])
            records.append(
                ProbeRecord(
                    entry["label"], entry["n"], entry["R"], xi, trace(entry["label"], False)
                )
            )
        measurement = MeasurementC2(grid, trace("v", False), trace("m", False), records)
    elif kind == "c3":
        records = [
            ExperimentRecord(
                tuple(entry["labels"]),
                trace(f"{entry['name']}_v", True),
                trace(f"{entry['name']}_m", True),
            )
            for entry in manifest.get("records", [])
        ]
        measurement = MeasurementC3(
            grid,
            trace("v", True),
            trace("m", True),
            records,
            manifest.get("epsilon", ()),
        )
    else:
        raise ArchiveError(f"archive {directory} has unknown kind {kind!r}")
    logger.info(f"Read {kind} archive from {directory}")
    return measurement, manifest
