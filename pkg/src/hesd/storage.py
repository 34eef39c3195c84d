"""On-disk formats: binary checkpoints, JSON documents, density CSVs.

Checkpoint layout (all integers little-endian)::

    offset  size   field
    0       8      magic b"HESDCKPT"
    8       4      uint32 format version (currently 1)
    12      4      uint32 header length H in bytes
    16      H      UTF-8 JSON header, keys sorted, no whitespace
    16+H    8*P    float64 LE trainable weights, in segment-table order
    ...     8*B    float64 LE buffers (batchnorm running stats), in buffer-table order

The header holds ``model`` (ModelSpec), ``segments`` and ``buffers`` (lists of
``{"name", "shape", "offset"}``), ``metadata`` (epoch, seed, accuracies, run
id, optimizer, dataset config, config hash) and ``payload_sha256``, the hash
of the float payload.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import CheckpointError
from .models import Model, ModelSpec
from .params import ParameterVector, make_layout
from .spectral import SpectralDensity

MAGIC = b"HESDCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
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


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return _jsonable(x.item())
    if isinstance(x, Mapping):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def dumps(doc: Any) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, doc: Any) -> None:
    atomic_write_bytes(path, dumps(doc).encode())


def read_json(path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _table(layout) -> list[dict]:
    return [{"name": s.name, "shape": list(s.shape), "offset": s.offset} for s in layout]


def encode_checkpoint(model: Model, params: ParameterVector, metadata: Mapping) -> bytes:
    model.check(params)
    buf_layout = make_layout((k, np.shape(v)) for k, v in sorted(model.buffers.items()))
    buf_vals = (np.concatenate([np.asarray(model.buffers[s.name], dtype="<f8").reshape(-1)
                                for s in buf_layout]) if buf_layout else np.zeros(0))
    payload = (np.asarray(params.values, dtype="<f8").tobytes()
               + np.asarray(buf_vals, dtype="<f8").tobytes())
    header = {
        "model": model.spec.to_dict(),
        "segments": _table(params.segments),
        "buffers": _table(buf_layout),
        "metadata": _jsonable(dict(metadata)),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)) + hbytes + payload


def decode_checkpoint(blob: bytes) -> tuple[Model, ParameterVector, dict]:
    if len(blob) < _PREFIX.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    if version > FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format {version} is newer than supported")
    try:
        header = json.loads(blob[_PREFIX.size:_PREFIX.size + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    payload = blob[_PREFIX.size + hlen:]
    try:
        segs = make_layout((s["name"], tuple(s["shape"])) for s in header["segments"])
        bufs = make_layout((s["name"], tuple(s["shape"])) for s in header["buffers"])
        spec = ModelSpec.from_dict(header["model"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: missing {exc}") from None
    n_par = segs[-1].stop if segs else 0
    n_buf = bufs[-1].stop if bufs else 0
    if len(payload) != 8 * (n_par + n_buf):
        raise CheckpointError(
            f"payload has {len(payload)} bytes, segment tables need {8 * (n_par + n_buf)}")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError("payload checksum mismatch")
    vals = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    params = ParameterVector(segs, vals[:n_par])
    buffers = {s.name: vals[n_par + s.offset:n_par + s.stop].reshape(s.shape).copy()
               for s in bufs}
    model = Model(spec, segs, buffers)
    return model, params, header["metadata"]


def save_checkpoint(path, model: Model, params: ParameterVector, metadata: Mapping) -> None:
    atomic_write_bytes(path, encode_checkpoint(model, params, metadata))


def load_checkpoint(path) -> tuple[Model, ParameterVector, dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return decode_checkpoint(blob)


def _fmt(x: float) -> str:
    return repr(float(x))


def density_csv(density: SpectralDensity, provenance: Mapping) -> str:
    head = " ".join(f"{k}={provenance[k]}" for k in sorted(provenance))
    lines = [f"# {head}", "grid,density"]
    lines += [f"{_fmt(g)},{_fmt(d)}" for g, d in zip(density.grid, density.density)]
    return "\n".join(lines) + "\n"


def density_sidecar(density: SpectralDensity, provenance: Mapping) -> dict:
    return {
        "sigma": density.sigma, "steps": density.steps, "n_probes": density.n_probes,
        "seed": density.seed, "lambda_min": density.lambda_min,
        "lambda_max": density.lambda_max, "degenerate": density.degenerate,
        "grid_points": int(density.grid.size), "integral": density.integral(),
        "provenance": dict(provenance),
    }


def read_density_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", comments="#", skiprows=2)
    return data[:, 0], data[:, 1]


def rows_csv(rows: list[Mapping], columns: list[str], provenance: Mapping | None = None) -> str:
    out = []
    if provenance:
        out.append("# " + " ".join(f"{k}={provenance[k]}" for k in sorted(provenance)))
    out.append(",".join(columns))
    for r in rows:
        cells = []
        for c in columns:
            v = r.get(c)
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(_fmt(v))
            else:
                cells.append(str(v))
        out.append(",".join(cells))
    return "\n".join(out) + "\n"
