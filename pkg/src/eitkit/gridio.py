"""On-disk formats for pixel grids, class maps and headered binary arrays."""

from __future__ import annotations

import base64
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

_DTYPES = {"uint8": "|u1", "float32": "<f4", "float64": "<f8"}


def write_headered(path, magic: bytes, header: dict, array: np.ndarray, dtype: str) -> None:
    """``magic`` (8 bytes), u64 header length, JSON header, raw little-endian data."""
    assert len(magic) == 8
    head = dict(header, shape=list(array.shape), dtype=dtype)
    blob = json.dumps(head, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes())


def read_headered(path, magic: bytes) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != magic:
        raise ParseError(f"{path}: missing {magic!r} file signature")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + hlen])
        shape = tuple(int(s) for s in header["shape"])
        dt = np.dtype(_DTYPES[header["dtype"]])
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: bad header: {exc}") from exc
    body = data[16 + hlen:]
    if len(body) != int(np.prod(shape)) * dt.itemsize:
        raise ParseError(f"{path}: payload size does not match header shape {shape}")
    return header, np.frombuffer(body, dtype=dt).reshape(shape).copy()


def save_grid(path, array: np.ndarray, disk_radius: float, dtype: str) -> list[Path]:
    """Raw ``<stem>.bin`` plus a JSON sidecar ``<stem>.json``; returns both paths."""
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    bin_path.write_bytes(np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes())
    json_path.write_text(json.dumps(
        {"shape": list(array.shape), "dtype": dtype, "disk_radius": float(disk_radius)},
        sort_keys=True) + "\n")
    return [bin_path, json_path]


def load_grid(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    try:
        meta = json.loads(json_path.read_text())
        dt = np.dtype(_DTYPES[meta["dtype"]])
        shape = tuple(int(s) for s in meta["shape"])
    except FileNotFoundError as exc:
        raise ParseError(f"{json_path}: sidecar not found") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{json_path}: bad grid sidecar: {exc}") from exc
    raw = bin_path.read_bytes()
    if len(raw) != int(np.prod(shape)) * dt.itemsize:
        raise ParseError(f"{bin_path}: size does not match sidecar shape {shape}")
    return np.frombuffer(raw, dtype=dt).reshape(shape).copy(), meta


def save_class_map(path, cmap: np.ndarray, disk_radius: float = 0.115) -> list[Path]:
    """Format by suffix: ``.png`` (8-bit grey), ``.json`` (base64 bytes) or ``.bin`` + sidecar."""
    path = Path(path)
    cmap = np.asarray(cmap, dtype=np.uint8)
    if path.suffix == ".png":
        from PIL import Image

        Image.fromarray(cmap, mode="L").save(path)
        return [path]
    if path.suffix == ".json":
        path.write_text(json.dumps({
            "shape": list(cmap.shape), "dtype": "uint8", "disk_radius": float(disk_radius),
            "data": base64.b64encode(cmap.tobytes()).decode("ascii"),
        }, sort_keys=True) + "\n")
        return [path]
    return save_grid(path, cmap, disk_radius, "uint8")


def load_class_map(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".png":
        from PIL import Image

        try:
            with Image.open(path) as im:
                arr = np.asarray(im.convert("L"), dtype=np.uint8)
        except OSError as exc:
            raise ParseError(f"{path}: unreadable PNG: {exc}") from exc
    elif path.suffix == ".json" and not path.with_suffix(".bin").exists():
        try:
            doc = json.loads(path.read_text())
            shape = tuple(int(s) for s in doc["shape"])
            arr = np.frombuffer(base64.b64decode(doc["data"]), dtype=np.uint8)
            arr = arr.reshape(shape).copy()
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"{path}: bad class map document: {exc}") from exc
    else:
        arr, _ = load_grid(path)
        arr = arr.astype(np.uint8)
    if arr.size and arr.max() > 2:
        raise ParseError(f"{path}: class map values must lie in {{0, 1, 2}}")
    return arr


def find_class_map(directory) -> Path | None:
    """The class map stored in a sample directory, whatever its format."""
    d = Path(directory)
    for name in ("class_map.bin", "class_map.png", "class_map.json"):
        if (d / name).exists():
            return d / name
    return None


IMAGE_MAGIC = b"EITIMG01"


def save_image(path, images: np.ndarray, disk_radius: float, labels=()) -> None:
    """Float32 image or image stack in one file with a JSON header."""
    write_headered(path, IMAGE_MAGIC, {"disk_radius": float(disk_radius), "labels": list(labels)},
                   np.asarray(images), "float32")


def load_image(path) -> tuple[np.ndarray, dict]:
    """Read :func:`save_image` output, or a ``.bin`` grid with a JSON sidecar."""
    path = Path(path)
    if path.is_file():
        with open(path, "rb") as fh:
            if fh.read(8) == IMAGE_MAGIC:
                header, arr = read_headered(path, IMAGE_MAGIC)
                return arr.astype(np.float64), header
    arr, meta = load_grid(path)
    return arr.astype(np.float64), meta
