"""On-disk formats: LF4D fields, view-image directories, parameter records.

LF4D container (bit-exact round trip):

    magic "LF4D" | version byte 1 | five u32 LE extents (c, S, T, Y, X)
    | dtype byte (1 = float32, 2 = float64) | raw little-endian values
    in (c, s, t, y, x) row-major order.

Parameter archives reuse the same conventions, one named record per tensor:

    magic "LF4P" | version byte 1 | u32 record count | per record:
    u16 name length, UTF-8 name, dtype byte, u8 ndim, u32 extents, raw data.

Checkpoints prepend a human-readable key=value header (length-prefixed)
describing the model configuration, followed by a parameter archive.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import LightField

__all__ = [
    "save_lf4d",
    "load_lf4d",
    "save_params",
    "load_params",
    "save_checkpoint",
    "load_checkpoint",
    "export_view_images",
    "import_view_images",
    "read_manifest",
    "read_keyvalue",
    "write_keyvalue",
]

_MAGIC_FIELD = b"LF4D"
_MAGIC_PARAMS = b"LF4P"
_MAGIC_CKPT = b"LF4C"
_VERSION = 1

_DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAG_FOR_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def _dtype_tag(dtype):
    dt = np.dtype(dtype)
    try:
        return _TAG_FOR_KIND[dt]
    except KeyError:
        raise ValueError(f"unsupported dtype {dt}; use float32 or float64") from None


def save_lf4d(field, path):
    """Write a LightField to an LF4D container."""
    arr = np.ascontiguousarray(field.data)
    tag = _dtype_tag(arr.dtype)
    with open(path, "wb") as fh:
        fh.write(_MAGIC_FIELD)
        fh.write(bytes([_VERSION]))
        fh.write(struct.pack("<5I", *arr.shape))
        fh.write(bytes([tag]))
        fh.write(arr.astype(_DTYPE_TAGS[tag], copy=False).tobytes())


def load_lf4d(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC_FIELD:
            raise ValueError(f"{path}: not an LF4D container (magic {magic!r})")
        version = fh.read(1)[0]
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported LF4D version {version}")
        shape = struct.unpack("<5I", fh.read(20))
        tag = fh.read(1)[0]
        if tag not in _DTYPE_TAGS:
            raise ValueError(f"{path}: unknown dtype tag {tag}")
        dtype = _DTYPE_TAGS[tag]
        count = int(np.prod(shape))
        raw = fh.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise ValueError(f"{path}: truncated payload")
        data = np.frombuffer(raw, dtype=dtype).reshape(shape)
    return LightField(data.astype(dtype.newbyteorder("="), copy=True))


def _write_record(fh, name, arr):
    encoded = name.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise ValueError(f"parameter name too long: {name!r}")
    arr = np.ascontiguousarray(arr)
    tag = _dtype_tag(arr.dtype)
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(bytes([tag, arr.ndim]))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype(_DTYPE_TAGS[tag], copy=False).tobytes())


def _read_record(fh):
    (name_len,) = struct.unpack("<H", fh.read(2))
    name = fh.read(name_len).decode("utf-8")
    tag, ndim = fh.read(2)
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
    dtype = _DTYPE_TAGS[tag]
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(count * dtype.itemsize)
    data = np.frombuffer(raw, dtype=dtype).reshape(shape)
    return name, data.astype(dtype.newbyteorder("="), copy=True)


def save_params(params, path):
    """Write an ordered name -> array mapping as a parameter archive."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC_PARAMS)
        fh.write(bytes([_VERSION]))
        fh.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            _write_record(fh, name, arr)


def load_params(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC_PARAMS:
            raise ValueError(f"{path}: not a parameter archive")
        if fh.read(1)[0] != _VERSION:
            raise ValueError(f"{path}: unsupported version")
        (count,) = struct.unpack("<I", fh.read(4))
        out = {}
        for _ in range(count):
            name, arr = _read_record(fh)
            out[name] = arr
    return out


def save_checkpoint(header, params, path):
    """Write a checkpoint: text header (key=value lines) + parameter records."""
    text = "".join(f"{k}={v}\n" for k, v in header.items()).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC_CKPT)
        fh.write(bytes([_VERSION]))
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)
        fh.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            _write_record(fh, name, arr)


def load_checkpoint(path):
    """Read a checkpoint; returns (header dict, params dict)."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC_CKPT:
            raise ValueError(f"{path}: not a checkpoint file")
        if fh.read(1)[0] != _VERSION:
            raise ValueError(f"{path}: unsupported version")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = {}
        for line in fh.read(hlen).decode("utf-8").splitlines():
            line = line.strip()
            if line and "=" in line:
                key, value = line.split("=", 1)
                header[key.strip()] = value.strip()
        (count,) = struct.unpack("<I", fh.read(4))
        params = {}
        for _ in range(count):
            name, arr = _read_record(fh)
            params[name] = arr
    return header, params


def export_view_images(field, directory):
    """Write each sub-aperture view as an 8-bit PNG, view_{s:02}_{t:02}.png.

    Grayscale for 1-channel fields, RGB for 3-channel; values are clipped
    to [0, 1] then scaled to [0, 255].
    """
    if field.c not in (1, 3):
        raise ValueError(f"image export needs 1 or 3 channels, got {field.c}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for s in range(field.S):
        for t in range(field.T):
            view = np.clip(field.data[:, s, t], 0.0, 1.0)
            pixels = np.round(view * 255.0).astype(np.uint8)
            if field.c == 1:
                img = Image.fromarray(pixels[0], mode="L")
            else:
                img = Image.fromarray(np.moveaxis(pixels, 0, -1), mode="RGB")
            img.save(directory / f"view_{s:02d}_{t:02d}.png")


def import_view_images(directory):
    """Load a view_{s:02}_{t:02}.png directory back into a LightField in [0,1]."""
    directory = Path(directory)
    coords = {}
    for path in sorted(directory.glob("view_*_*.png")):
        stem = path.stem.split("_")
        coords[(int(stem[1]), int(stem[2]))] = path
    if not coords:
        raise ValueError(f"{directory}: no view_SS_TT.png images found")
    S = max(s for s, _ in coords) + 1
    T = max(t for _, t in coords) + 1
    if len(coords) != S * T:
        raise ValueError(f"{directory}: incomplete {S}x{T} view grid")
    first = np.asarray(Image.open(coords[(0, 0)]))
    c = 1 if first.ndim == 2 else first.shape[2]
    Y, X = first.shape[:2]
    data = np.empty((c, S, T, Y, X), dtype=np.float64)
    for (s, t), path in coords.items():
        img = np.asarray(Image.open(path), dtype=np.float64) / 255.0
        data[:, s, t] = img[None] if img.ndim == 2 else np.moveaxis(img, -1, 0)
    return LightField(data)


def read_manifest(path):
    """Parse a dataset manifest: one LF4D path per line, optional metadata.

    Line format: ``<path> [id=<scene id>] [disparity=<lo>,<hi>]``. Blank
    lines and ``#`` comments are skipped; relative paths resolve against
    the manifest's own directory. Returns a list of dicts with keys
    ``path``, ``id``, ``disparity``.
    """
    path = Path(path)
    base = path.parent
    scenes = []
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        entry = {"path": (base / tokens[0]).resolve(), "id": Path(tokens[0]).stem, "disparity": None}
        for token in tokens[1:]:
            if token.startswith("id="):
                entry["id"] = token[3:]
            elif token.startswith("disparity="):
                lo, hi = token[len("disparity="):].split(",")
                entry["disparity"] = (float(lo), float(hi))
            else:
                raise ValueError(f"{path}: unknown manifest token {token!r}")
        scenes.append(entry)
    if not scenes:
        raise ValueError(f"{path}: manifest lists no scenes")
    return scenes


def read_keyvalue(path):
    """Read a flat key=value text file into a dict of strings."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_keyvalue(mapping, path):
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in mapping.items()))
