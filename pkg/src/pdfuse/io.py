"""Artifact file formats: images, latents, directions, checkpoints.

Formats are deliberately plain so they can be read without this package:

* image: raw little-endian float64, C-order (H, W, C), next to a JSON
  sidecar ``<name>.json`` holding the shape and format version.
* latent: small binary record, magic ``PDFL``, format version, latent
  dimension, a JSON metadata blob, then the float64 values.
* direction: JSON with the unit vector, its expression-pair tags, and the
  fit diagnostics.
* checkpoint: magic ``PDCK`` container of named float64 arrays plus a JSON
  metadata blob (kind, config echo). Byte-for-byte deterministic for equal
  contents, unlike a zip, which matters for reproducibility checks.

Writers accept an optional ``meta`` mapping; the CLI uses it to stamp every
artifact with the producing config hash.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .direction_discovery import DirectionVector, FitDiagnostics
from .errors import FormatError
from .latent_editing import ImageTensor, LatentVector

IMAGE_VERSION = 1
LATENT_VERSION = 1
DIRECTION_VERSION = 1
CHECKPOINT_VERSION = 1

_LATENT_MAGIC = b"PDFL"
_CHECKPOINT_MAGIC = b"PDCK"


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_image(path: str | Path, image: ImageTensor, meta: dict | None = None) -> None:
    path = Path(path)
    H, W, C = image.shape
    header = {
        "format_version": IMAGE_VERSION,
        "height": H,
        "width": W,
        "channels": C,
        "dtype": "float64",
        "byte_order": "little",
    }
    if meta:
        header.update(meta)
    arr = np.ascontiguousarray(image.pixels, dtype="<f8")
    path.write_bytes(arr.tobytes())
    _sidecar(path).write_text(json.dumps(header, sort_keys=True) + "\n")


def load_image(path: str | Path) -> ImageTensor:
    path = Path(path)
    sidecar = _sidecar(path)
    if not sidecar.exists():
        raise FormatError(f"image {path} has no sidecar header {sidecar.name}")
    try:
        header = json.loads(sidecar.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"image sidecar {sidecar} is not valid JSON: {exc}") from exc
    if header.get("format_version") != IMAGE_VERSION:
        raise FormatError(
            f"image {path}: format_version {header.get('format_version')!r} unsupported"
        )
    try:
        shape = (header["height"], header["width"], header["channels"])
    except KeyError as exc:
        raise FormatError(f"image sidecar {sidecar} missing field {exc}") from exc
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * 8
    if len(raw) != expected:
        raise FormatError(
            f"image {path}: payload is {len(raw)} bytes, header implies {expected}"
        )
    pixels = np.frombuffer(raw, dtype="<f8").reshape(shape)
    try:
        return ImageTensor(pixels)
    except Exception as exc:
        raise FormatError(f"image {path}: {exc}") from exc


def save_latent(path: str | Path, latent: LatentVector, meta: dict | None = None) -> None:
    path = Path(path)
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    with path.open("wb") as fh:
        fh.write(_LATENT_MAGIC)
        fh.write(struct.pack("<II", LATENT_VERSION, latent.dim))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(np.ascontiguousarray(latent.values, dtype="<f8").tobytes())


def load_latent(path: str | Path) -> LatentVector:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != _LATENT_MAGIC:
        raise FormatError(f"latent {path}: bad magic or truncated header")
    version, dim = struct.unpack("<II", raw[4:12])
    if version != LATENT_VERSION:
        raise FormatError(f"latent {path}: format_version {version} unsupported")
    (meta_len,) = struct.unpack("<I", raw[12:16])
    offset = 16 + meta_len
    payload = raw[offset:]
    if len(payload) != dim * 8:
        raise FormatError(f"latent {path}: payload is {len(payload)} bytes, header implies {dim * 8}")
    values = np.frombuffer(payload, dtype="<f8")
    try:
        return LatentVector(values)
    except Exception as exc:
        raise FormatError(f"latent {path}: {exc}") from exc


def save_direction(path: str | Path, direction: DirectionVector, meta: dict | None = None) -> None:
    path = Path(path)
    obj = {
        "format_version": DIRECTION_VERSION,
        "kind": "direction",
        "source": direction.source,
        "target": direction.target,
        "values": [float(v) for v in direction.values],
    }
    if direction.diagnostics is not None:
        obj["diagnostics"] = direction.diagnostics.to_dict()
    if meta:
        obj.update(meta)
    path.write_text(json.dumps(obj, sort_keys=True) + "\n")


def load_direction(path: str | Path) -> DirectionVector:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"direction {path} is not valid JSON: {exc}") from exc
    if obj.get("kind") != "direction" or obj.get("format_version") != DIRECTION_VERSION:
        raise FormatError(f"direction {path}: missing or unsupported header fields")
    diag = None
    if "diagnostics" in obj:
        d = obj["diagnostics"]
        try:
            diag = FitDiagnostics(
                mode=d["mode"],
                epochs_run=d["epochs_run"],
                initial_loss=d["initial_loss"],
                final_loss=d["final_loss"],
                converged=d["converged"],
                degenerate=d["degenerate"],
                separation=d["separation"],
            )
        except KeyError as exc:
            raise FormatError(f"direction {path}: diagnostics missing field {exc}") from exc
    try:
        return DirectionVector(
            values=np.asarray(obj["values"], dtype=np.float64),
            source=obj["source"],
            target=obj["target"],
            diagnostics=diag,
        )
    except KeyError as exc:
        raise FormatError(f"direction {path}: missing field {exc}") from exc


def save_checkpoint(
    path: str | Path, kind: str, arrays: dict[str, np.ndarray], config: dict, meta: dict | None = None
) -> None:
    """Write named arrays plus a config echo as one deterministic binary file."""
    path = Path(path)
    header = {"format_version": CHECKPOINT_VERSION, "kind": kind, "config": config}
    if meta:
        header.update(meta)
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with path.open("wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            name_bytes = name.encode()
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> tuple[str, dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (kind, arrays, header)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != _CHECKPOINT_MAGIC:
        raise FormatError(f"checkpoint {path}: bad magic or truncated header")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint {path}: format_version {version} unsupported")
    pos = 12
    try:
        header = json.loads(raw[pos : pos + header_len].decode())
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint {path}: header is not valid JSON: {exc}") from exc
    pos += header_len
    (count,) = struct.unpack("<I", raw[pos : pos + 4])
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack("<I", raw[pos : pos + 4])
            pos += 4
            name = raw[pos : pos + name_len].decode()
            pos += name_len
            (ndim,) = struct.unpack("<I", raw[pos : pos + 4])
            pos += 4
            shape = struct.unpack(f"<{ndim}q", raw[pos : pos + 8 * ndim])
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(raw[pos : pos + 8 * size], dtype="<f8").reshape(shape).copy()
            pos += 8 * size
    except (struct.error, ValueError) as exc:
        raise FormatError(f"checkpoint {path}: truncated or corrupt payload: {exc}") from exc
    return header.get("kind", ""), arrays, header


def config_hash(config: dict) -> str:
    """Stable hash of a config mapping (canonical JSON, SHA-256)."""
    import hashlib

    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
