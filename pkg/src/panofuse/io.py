"""PNG, PFM and PLY readers/writers plus the JSON manifest.

PLY layouts (binary_little_endian 1.0, one ``vertex`` element):

* point cloud: ``x y z`` float, ``red green blue`` uchar;
* Gaussian cloud: the same, then ``opacity`` float (pre-sigmoid logit)
  and ``scale`` float (log of the world-space sigma).

Positions and Gaussian parameters are stored as float32.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from PIL import Image

from panofuse.geometry import Intrinsics
from panofuse.pointcloud import DepthMap, PointCloud
from panofuse.splat import GaussianCloud

__all__ = [
    "PanoIOError",
    "read_png",
    "write_png",
    "read_pfm",
    "write_pfm",
    "read_ply",
    "write_ply",
    "intrinsics_to_dict",
    "intrinsics_from_dict",
    "write_json",
    "read_json",
]

POINT_PROPS = ("x", "y", "z", "red", "green", "blue")
GAUSSIAN_PROPS = POINT_PROPS + ("opacity", "scale")

_PLY_TYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "ushort": "<u2", "uint16": "<u2", "short": "<i2", "int16": "<i2",
    "uint": "<u4", "uint32": "<u4", "int": "<i4", "int32": "<i4",
}


class PanoIOError(OSError):
    """Unreadable or malformed file."""


def read_png(path) -> np.ndarray:
    """8-bit RGB PNG as float64 (H, W, 3) in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != "RGB":
                raise PanoIOError(f"{path}: expected an RGB image, got mode {im.mode}")
            data = np.asarray(im, dtype=np.uint8)
    except PanoIOError:
        raise
    except (OSError, ValueError, SyntaxError) as exc:
        raise PanoIOError(f"{path}: cannot read PNG ({exc})") from exc
    return data.astype(np.float64) / 255.0


def write_png(path, image) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    try:
        Image.fromarray(data, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise PanoIOError(f"{path}: cannot write PNG ({exc})") from exc


def write_pfm(path, depth: DepthMap) -> None:
    """Little-endian grayscale PFM; invalid pixels are stored as 0."""
    values = np.where(depth.valid, depth.values, 0.0).astype("<f4")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(values).tobytes())


def _pfm_token(fh, path):
    token = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise PanoIOError(f"{path}: truncated PFM header")
        if ch.isspace():
            if token:
                return token.decode("ascii", errors="replace")
            continue
        token += ch


def read_pfm(path) -> DepthMap:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            magic = _pfm_token(fh, path)
            if magic != "Pf":
                raise PanoIOError(f"{path}: expected grayscale PFM magic 'Pf', got {magic!r}")
            try:
                w = int(_pfm_token(fh, path))
                h = int(_pfm_token(fh, path))
                scale = float(_pfm_token(fh, path))
            except ValueError as exc:
                raise PanoIOError(f"{path}: malformed PFM header") from exc
            if w < 1 or h < 1 or scale == 0:
                raise PanoIOError(f"{path}: bad PFM dimensions {w}x{h} or scale {scale}")
            payload = fh.read()
    except PanoIOError:
        raise
    except OSError as exc:
        raise PanoIOError(f"{path}: cannot read PFM ({exc})") from exc
    need = 4 * w * h
    if len(payload) < need:
        raise PanoIOError(f"{path}: PFM payload has {len(payload)} bytes, expected {need}")
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.flipud(np.frombuffer(payload[:need], dtype=dtype).reshape(h, w)).astype(np.float64)
    valid = np.isfinite(values) & (values > 0)
    return DepthMap(np.where(valid, values, 0.0), valid)


def write_ply(path, cloud) -> None:
    """Write a :class:`PointCloud` or :class:`GaussianCloud` as binary PLY."""
    gaussian = isinstance(cloud, GaussianCloud)
    dtype = [(p, "<f4") for p in ("x", "y", "z")] + [(p, "u1") for p in ("red", "green", "blue")]
    if gaussian:
        dtype += [("opacity", "<f4"), ("scale", "<f4")]
    n = len(cloud)
    rec = np.empty(n, dtype=dtype)
    pos = cloud.positions.astype("<f4")
    col = np.round(np.clip(cloud.colors, 0.0, 1.0) * 255.0).astype(np.uint8)
    for i, p in enumerate(("x", "y", "z")):
        rec[p] = pos[:, i]
    for i, p in enumerate(("red", "green", "blue")):
        rec[p] = col[:, i]
    if gaussian:
        rec["opacity"] = cloud.opacity_logits.astype("<f4")
        rec["scale"] = cloud.log_scales.astype("<f4")
    header = ["ply", "format binary_little_endian 1.0"]
    if gaussian:
        header.append("comment opacity=logit scale=log_sigma")
        bg = " ".join(repr(float(c)) for c in cloud.background)
        header.append(f"comment background {bg}")
    header.append(f"element vertex {n}")
    for name, t in dtype:
        header.append(f"property {'float' if t == '<f4' else 'uchar'} {name}")
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path):
    """Read a PLY written by :func:`write_ply`.

    Returns a :class:`GaussianCloud` when the opacity/scale properties are
    present, else a :class:`PointCloud` (view ids are not stored and read
    back as 0).
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            if fh.readline().strip() != b"ply":
                raise PanoIOError(f"{path}: not a PLY file")
            fmt = None
            count = None
            props = []
            background = (0.0, 0.0, 0.0)
            while True:
                line = fh.readline()
                if not line:
                    raise PanoIOError(f"{path}: PLY header has no end_header")
                parts = line.decode("ascii", errors="replace").split()
                if not parts:
                    continue
                key = parts[0]
                if key == "end_header":
                    break
                if key == "format":
                    fmt = parts[1:]
                elif key == "comment":
                    if len(parts) == 5 and parts[1] == "background":
                        background = tuple(float(x) for x in parts[2:5])
                elif key == "element":
                    if parts[1] != "vertex" or count is not None:
                        raise PanoIOError(f"{path}: unsupported PLY element {parts[1]!r}")
                    count = int(parts[2])
                elif key == "property":
                    if parts[1] == "list" or parts[1] not in _PLY_TYPES:
                        raise PanoIOError(f"{path}: unsupported property type {' '.join(parts[1:])}")
                    props.append((parts[2], _PLY_TYPES[parts[1]]))
            payload = fh.read()
    except PanoIOError:
        raise
    except (OSError, ValueError, IndexError) as exc:
        raise PanoIOError(f"{path}: cannot read PLY ({exc})") from exc
    if fmt != ["binary_little_endian", "1.0"]:
        raise PanoIOError(f"{path}: unsupported PLY format {fmt}")
    if count is None:
        raise PanoIOError(f"{path}: PLY has no vertex element")
    names = tuple(name for name, _ in props)
    if names not in (POINT_PROPS, GAUSSIAN_PROPS):
        raise PanoIOError(
            f"{path}: unexpected vertex properties {list(names)}; "
            f"expected {list(POINT_PROPS)} or {list(GAUSSIAN_PROPS)}"
        )
    dtype = np.dtype(props)
    if len(payload) < count * dtype.itemsize:
        raise PanoIOError(f"{path}: PLY payload too short for {count} vertices")
    rec = np.frombuffer(payload[: count * dtype.itemsize], dtype=dtype)
    pos = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    col = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1).astype(np.float64)
    if dtype[3] == np.uint8:
        col /= 255.0
    if names == GAUSSIAN_PROPS:
        return GaussianCloud(
            pos, col, rec["opacity"].astype(np.float64), rec["scale"].astype(np.float64), background
        )
    return PointCloud(pos, col, np.zeros(count, dtype=np.int64))


def intrinsics_to_dict(intr: Intrinsics) -> dict:
    return {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height}


def intrinsics_from_dict(d: dict) -> Intrinsics:
    return Intrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                      int(d["width"]), int(d["height"]))


def write_json(path, obj) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PanoIOError(f"{path}: cannot read JSON ({exc})") from exc
