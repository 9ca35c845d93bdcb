"""Persistence: field snapshots, checkpoint bundles, CSV series and manifests.

Field snapshot (little endian)::

    magic   4 bytes  b"NSVF"
    version u32      1
    dim     u32
    n       u32
    box     f64      box length
    time    f64
    data    complex128[dim, n, ..., n]

The data block lists components first and, within a component, the wave numbers
``-n/2 .. n/2 - 1`` of every axis in lexicographic (C) order.

A checkpoint is a directory holding ``manifest.json`` and ``fields.npy`` (the
history slots, oldest first) plus ``prev_rhs.npy`` when the two-step scheme is
mid-stream.  All writes go to a temporary file that is renamed into place.
"""

from __future__ import annotations

import hashlib
import io as _io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .delay import HistorySegment, ProcessState
from .errors import ConfigurationError, MissingArtifact
from .spectral import Grid, SpectralField

MAGIC = b"NSVF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"artifact not found: {path}")
    return path


# --------------------------------------------------------------------------- snapshots

def snapshot_bytes(u: SpectralField, time: float) -> bytes:
    g = u.grid
    head = _HEADER.pack(MAGIC, VERSION, g.dim, g.n, float(g.box_length), float(time))
    data = np.fft.fftshift(u.coeffs, axes=g.axes).astype("<c16")
    return head + data.tobytes(order="C")


def write_snapshot(path, u: SpectralField, time: float) -> Path:
    return atomic_write_bytes(path, snapshot_bytes(u, time))


def read_snapshot(path) -> tuple:
    """Return ``(field, time)``."""
    raw = _require(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigurationError(f"{path}: truncated snapshot header")
    magic, version, dim, n, box, time = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise ConfigurationError(f"{path}: not a version-{VERSION} field snapshot")
    grid = Grid(dim, n, box)
    body = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    if body.size != int(np.prod(grid.coeff_shape)):
        raise ConfigurationError(f"{path}: payload size does not match the header")
    coeffs = np.fft.ifftshift(body.reshape(grid.coeff_shape), axes=grid.axes)
    return SpectralField(grid, coeffs.astype(np.complex128)), time


# --------------------------------------------------------------------------- json / csv

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_text(path, canonical_json(obj))


def read_json(path) -> dict:
    return json.loads(_require(path).read_text())


def digest(obj) -> str:
    """SHA-256 of bytes, arrays or canonical JSON."""
    h = hashlib.sha256()
    if isinstance(obj, (bytes, bytearray)):
        h.update(obj)
    elif isinstance(obj, np.ndarray):
        h.update(np.ascontiguousarray(obj).tobytes())
    else:
        h.update(canonical_json(obj).encode())
    return h.hexdigest()


def csv_text(header, rows) -> str:
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(x if isinstance(x, str) else format(float(x), ".17g") for x in row))
    return "\n".join(out) + "\n"


def write_csv(path, header, rows) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


ENERGY_HEADER = ("t", "h_sq", "v_sq", "da_sq", "dtv_sq")


def write_energy_csv(path, run) -> Path:
    return write_csv(path, ENERGY_HEADER, run.record_rows())


def read_csv(path) -> tuple:
    lines = _require(path).read_text().splitlines()
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:] if line]
    return header, rows


# --------------------------------------------------------------------------- checkpoints

def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = _io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path, state: ProcessState, manifest_hash: str = "", extra=None) -> Path:
    """Write the full state (segment and scheme phase) as a bundle directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    stack = np.stack([f.coeffs for f in state.history.fields])
    fields_blob = _npy_bytes(stack)
    atomic_write_bytes(path / "fields.npy", fields_blob)
    phase = "startup"
    rhs_hash = None
    if state.prev_rhs is not None:
        phase = "multistep"
        blob = _npy_bytes(state.prev_rhs)
        rhs_hash = digest(blob)
        atomic_write_bytes(path / "prev_rhs.npy", blob)
    elif (path / "prev_rhs.npy").exists():
        (path / "prev_rhs.npy").unlink()
    g = state.grid
    manifest = {
        "kind": "checkpoint",
        "grid": {"dim": g.dim, "n": g.n, "box_length": g.box_length},
        "step": state.step,
        "dt": state.dt,
        "t": state.t,
        "n_delay": state.history.n_delay,
        "scheme_phase": phase,
        "run_manifest_hash": manifest_hash,
        "fields_sha256": digest(fields_blob),
        "prev_rhs_sha256": rhs_hash,
    }
    if extra:
        manifest["extra"] = extra
    write_json(path / "manifest.json", manifest)
    return path


def load_checkpoint(path) -> tuple:
    """Return ``(state, manifest)``; checksums are verified."""
    path = _require(path)
    manifest = read_json(path / "manifest.json")
    blob = _require(path / "fields.npy").read_bytes()
    if digest(blob) != manifest["fields_sha256"]:
        raise ConfigurationError(f"{path}: field checksum mismatch")
    stack = np.load(_io.BytesIO(blob), allow_pickle=False)
    gd = manifest["grid"]
    grid = Grid(gd["dim"], gd["n"], gd["box_length"])
    fields = tuple(SpectralField(grid, c) for c in stack)
    hist = HistorySegment(manifest["dt"], manifest["step"], fields)
    prev = None
    if manifest["scheme_phase"] == "multistep":
        rblob = _require(path / "prev_rhs.npy").read_bytes()
        if digest(rblob) != manifest["prev_rhs_sha256"]:
            raise ConfigurationError(f"{path}: scheme-phase checksum mismatch")
        prev = np.load(_io.BytesIO(rblob), allow_pickle=False)
    return ProcessState(hist, prev), manifest
