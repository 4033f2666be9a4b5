"""File formats: PFM depth images, 16-bit PGM renders, CSV tables, JSON.

All writers go through a temp file + rename so a crashed run never leaves a
half-written output behind.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# PFM: "Pf" (1 channel) header, width height, scale (<0 little-endian),
# then float32 rows stored bottom-to-top.

def encode_pfm(image) -> bytes:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 2:
        raise ValueError("only single-channel PFM is supported")
    h, w = img.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return header + np.flipud(img).astype("<f4").tobytes()


def write_pfm(path, image) -> None:
    atomic_write_bytes(path, encode_pfm(image))


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    buf = io.BytesIO(data)
    magic = buf.readline().strip()
    if magic == b"PF":
        channels = 3
    elif magic == b"Pf":
        channels = 1
    else:
        raise ValueError(f"{path}: not a PFM file")
    dims = buf.readline()
    while dims.startswith(b"#"):
        dims = buf.readline()
    m = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", dims)
    if not m:
        raise ValueError(f"{path}: malformed PFM header")
    w, h = int(m.group(1)), int(m.group(2))
    scale = float(buf.readline().strip())
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(buf.read(), dtype=dtype, count=w * h * channels)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(arr.reshape(shape)).astype(np.float64)


def write_pgm16(path, image) -> None:
    """Binary PGM, maxval 65535; input values are clipped to [0, 1]."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM holds a single channel")
    h, w = img.shape
    q = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(">u2")
    atomic_write_bytes(path, f"P5\n{w} {h}\n65535\n".encode("ascii") + q.tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary PGM (8 or 16 bit) as floats in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(data, pos)
        if m is None:
            raise ValueError(f"{path}: malformed PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: only binary P5 PGM is supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    return arr.reshape(h, w).astype(np.float64) / maxval


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header: list[str], rows) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    atomic_write_text(path, out.getvalue())


def read_csv(path, expected_header: list[str] | None = None) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if expected_header is not None and reader.fieldnames != expected_header:
            raise ValueError(f"{path}: expected header {','.join(expected_header)}, "
                             f"got {','.join(reader.fieldnames or [])}")
        return list(reader)


def write_points_csv(path, points) -> None:
    write_csv(path, ["x", "y", "z"], np.asarray(points, dtype=float).reshape(-1, 3))


def read_points_csv(path) -> np.ndarray:
    rows = read_csv(path, ["x", "y", "z"])
    if not rows:
        return np.zeros((0, 3))
    return np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])
