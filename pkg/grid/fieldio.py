"""
Field and trace files.

Binary field files start with the magic ``MFGF`` followed by a little-endian
header (version u16, dim u8, interior counts u32 per axis, extent pairs f64,
nt u32, horizon f64) and the row-major f64 node payload. Complex fields are
stored as two files, ``<name>.re`` and ``<name>.im``. Boundary traces go to
CSV with one row per boundary node (and time level).
"""

import csv
import io
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

from grid.fields import BoundaryTrace, ScalarField, SpaceTimeField
from grid.mesh import Grid, GridSpec, build_grid
from mfglab.errors import ArchiveError

logger = logging.getLogger(__name__)

MAGIC = b"MFGF"
VERSION = 1

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    """Write ``payload`` to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _header(spec: GridSpec) -> bytes:
    parts = [MAGIC, struct.pack("<HB", VERSION, spec.dim)]
    parts.append(struct.pack(f"<{spec.dim}I", *spec.nx))
    flat = [bound for pair in spec.extents for bound in pair]
    parts.append(struct.pack(f"<{2 * spec.dim}d", *flat))
    parts.append(struct.pack("<Id", spec.nt, spec.horizon))
    return b"".join(parts)


def encode_field(field: Union[ScalarField, SpaceTimeField]) -> bytes:
    values = np.ascontiguousarray(field.values, dtype="<f8")
    return _header(field.grid.spec) + values.tobytes(order="C")


def decode_field(payload: bytes, source: str = "<bytes>"):
    if payload[:4] != MAGIC:
        raise ArchiveError(f"{source}: not a field file (bad magic)")
    try:
        offset = 4
        version, dim = struct.unpack_from("<HB", payload, offset)
        offset += struct.calcsize("<HB")
        if version != VERSION:
            raise ArchiveError(f"{source}: unsupported field file version {version}")
        nx = struct.unpack_from(f"<{dim}I", payload, offset)
        offset += 4 * dim
        flat = struct.unpack_from(f"<{2 * dim}d", payload, offset)
        offset += 16 * dim
        nt, horizon = struct.unpack_from("<Id", payload, offset)
        offset += struct.calcsize("<Id")
    except struct.error as exc:
        raise ArchiveError(f"{source}: truncated header ({exc})") from exc
    extents = tuple(zip(flat[0::2], flat[1::2]))
    grid = build_grid(GridSpec(dim, extents, nx, nt, horizon))
    values = np.frombuffer(payload, dtype="<f8", offset=offset)
    if values.size == grid.size:
        return ScalarField(grid, values.reshape(grid.shape))
    if nt and values.size == grid.size * (nt + 1):
        return SpaceTimeField(grid, values.reshape(grid.space_time_shape))
    raise ArchiveError(f"{source}: payload of {values.size} values fits no field")


def write_field(path: PathLike, field: Union[ScalarField, SpaceTimeField]) -> list:
    """Write a field; complex fields become a ``.re``/``.im`` pair.

    Returns the list of written paths.
    """
    path = Path(path)
    if np.iscomplexobj(field.values):
        real = field.with_values(field.values.real)
        imag = field.with_values(field.values.imag)
        return [
            atomic_write_bytes(path.with_name(path.name + ".re"), encode_field(real)),
            atomic_write_bytes(path.with_name(path.name + ".im"), encode_field(imag)),
        ]
    return [atomic_write_bytes(path, encode_field(field))]


def read_field(path: PathLike):
    """Read a field written by :func:`write_field` (either form)."""
    path = Path(path)
    re_path = path.with_name(path.name + ".re")
    if not path.exists() and re_path.exists():
        real = read_field(re_path)
        imag = read_field(path.with_name(path.name + ".im"))
        return real.with_values(real.values + 1j * imag.values)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise ArchiveError(f"cannot read field file {path}: {exc}") from exc
    return decode_field(payload, str(path))


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def trace_header(grid: Grid, complex_values: bool = False) -> list:
    header = ["face"] + [f"i{a + 1}" for a in range(grid.dim)]
    header += ["t", "value", "normal_derivative"]
    if complex_values:
        header += ["value_imag", "normal_derivative_imag"]
    return header


def write_trace_csv(path: PathLike, trace: BoundaryTrace) -> Path:
    grid = trace.grid
    is_complex = any(np.iscomplexobj(v) for v in trace.values + trace.normal_derivatives)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(trace_header(grid, is_complex))
    levels = range(grid.nt + 1) if trace.time_dependent else [None]
    for face, vals, ders in zip(trace.faces, trace.values, trace.normal_derivatives):
        for level in levels:
            v = vals if level is None else vals[level]
            d = ders if level is None else ders[level]
            t = 0.0 if level is None else grid.times[level]
            for local in np.ndindex(*face.shape):
                node = list(local)
                node.insert(face.axis, 0 if face.side == 0 else grid.shape[face.axis] - 1)
                row = [face.label] + node + [_fmt(t)]
                row += [_fmt(np.real(v[local])), _fmt(np.real(d[local]))]
                if is_complex:
                    row += [_fmt(np.imag(v[local])), _fmt(np.imag(d[local]))]
                writer.writerow(row)
    return atomic_write_text(path, buffer.getvalue())


def read_trace_csv(path: PathLike, grid: Grid, time_dependent: bool) -> BoundaryTrace:
    path = Path(path)
    lead = (grid.nt + 1,) if time_dependent else ()
    labels = [f.label for f in grid.faces]
    values = [np.zeros(lead + f.shape, dtype=complex) for f in grid.faces]
    derivs = [np.zeros(lead + f.shape, dtype=complex) for f in grid.faces]
    any_imag = False
    try:
        with path.open(newline="") as handle:
            reader = csv.DictReader(handle)
            for row in reader:
                i = labels.index(row["face"])
                face = grid.faces[i]
                node = [int(row[f"i{a + 1}"]) for a in range(grid.dim)]
                del node[face.axis]
                key = tuple(node)
                if time_dependent:
                    level = int(round(float(row["t"]) / grid.dt))
                    key = (level,) + key
                re_v, re_d = float(row["value"]), float(row["normal_derivative"])
                im_v = float(row.get("value_imag") or 0.0)
                im_d = float(row.get("normal_derivative_imag") or 0.0)
                any_imag = any_imag or "value_imag" in row
                values[i][key] = re_v + 1j * im_v
                derivs[i][key] = re_d + 1j * im_d
    except (OSError, KeyError, ValueError) as exc:
        raise ArchiveError(f"cannot read trace file {path}: {exc}") from exc
    if not any_imag:
        values = [v.real for v in values]
        derivs = [d.real for d in derivs]
    return BoundaryTrace(grid, tuple(values), tuple(derivs), time_dependent)

