"""Readers and writers for flow (.flo), PFM, PGM masks and JSON scene/camera files.

All raster payloads are stored as little-endian float32 (or uint8 for masks)
and invalid pixels as NaN, so write -> read -> write reproduces the bytes.
"""

from __future__ import annotations

import json
import os
import re

import numpy as np

from .errors import MissingInput, ParseError
from .geom import DepthMap, FlowField, Intrinsics, Pointmap, Pose
from .synth import Motion, Plane, SceneConfig, ScenePrimitive, Sphere

FLO_MAGIC = 202021.25
_FLO_TAG = np.array([FLO_MAGIC], dtype="<f4").tobytes()  # b"PIEH"


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except FileNotFoundError:
        raise MissingInput(f"{path}: file not found") from None
    except IsADirectoryError:
        raise MissingInput(f"{path}: is a directory") from None


def _write_bytes(path, data: bytes):
    with open(path, "wb") as fh:
        fh.write(data)


# ---------------------------------------------------------------- .flo


def write_flo(path, flow):
    """Write an (H, W, 2) array or a FlowField; invalid vectors become NaN."""
    if isinstance(flow, FlowField):
        arr = np.where(flow.valid[..., None], flow.vectors, np.nan)
    else:
        arr = np.asarray(flow)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {arr.shape}")
    h, w = arr.shape[:2]
    header = _FLO_TAG + np.array([w, h], dtype="<i4").tobytes()
    _write_bytes(path, header + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_flo(path) -> np.ndarray:
    """Return the raw (H, W, 2) float32 payload."""
    data = _read_bytes(path)
    if len(data) < 12:
        raise ParseError(f"{path}: header: file too short for a .flo header")
    if data[:4] != _FLO_TAG:
        raise ParseError(f"{path}: magic: expected 202021.25 ('PIEH'), got {data[:4]!r}")
    w, h = (int(x) for x in np.frombuffer(data[4:12], dtype="<i4"))
    if w <= 0 or h <= 0:
        raise ParseError(f"{path}: dimensions: invalid size {w}x{h}")
    need = 12 + 8 * w * h
    if len(data) != need:
        raise ParseError(f"{path}: payload: expected {need} bytes, got {len(data)}")
    return np.frombuffer(data[12:], dtype="<f4").reshape(h, w, 2).copy()


def load_flow(path) -> FlowField:
    raw = read_flo(path).astype(np.float64)
    return FlowField(raw, np.all(np.isfinite(raw), axis=-1))


# ---------------------------------------------------------------- PFM


def write_pfm(path, image):
    """Write an (H, W) or (H, W, 3) array as little-endian PFM (rows bottom-up)."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM holds (H, W) or (H, W, 3) arrays, got {arr.shape}")
    h, w = arr.shape[:2]
    header = tag + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes()
    _write_bytes(path, header + body)


_PFM_HEADER = re.compile(rb"\A(P[Ff])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s")


def read_pfm(path) -> np.ndarray:
    """Return the float32 image, top row first; big-endian files are accepted."""
    data = _read_bytes(path)
    m = _PFM_HEADER.match(data)
    if m is None:
        raise ParseError(f"{path}: header: not a PFM file (expected 'Pf' or 'PF', size and scale lines)")
    channels = 3 if m.group(1) == b"PF" else 1
    w, h = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError:
        raise ParseError(f"{path}: scale: cannot parse {m.group(4)!r}") from None
    if w <= 0 or h <= 0:
        raise ParseError(f"{path}: dimensions: invalid size {w}x{h}")
    if scale == 0:
        raise ParseError(f"{path}: scale: must be nonzero")
    dtype = "<f4" if scale < 0 else ">f4"
    body = data[m.end():]
    need = 4 * w * h * channels
    if len(body) != need:
        raise ParseError(f"{path}: payload: expected {need} bytes, got {len(body)}")
    shape = (h, w) if channels == 1 else (h, w, 3)
    arr = np.frombuffer(body, dtype=dtype).reshape(shape)[::-1]
    return np.ascontiguousarray(arr.astype("<f4"))


def save_depth(path, depth: DepthMap):
    write_pfm(path, np.where(depth.valid, depth.values, np.nan))


def load_depth(path) -> DepthMap:
    raw = read_pfm(path)
    if raw.ndim != 2:
        raise ParseError(f"{path}: channels: depth maps must be single-channel ('Pf')")
    v = raw.astype(np.float64)
    return DepthMap(v, np.isfinite(v))


def save_pointmap(path, pm: Pointmap):
    write_pfm(path, np.where(pm.valid[..., None], pm.points, np.nan))


def load_pointmap(path, frame_tag: str) -> Pointmap:
    raw = read_pfm(path)
    if raw.ndim != 3:
        raise ParseError(f"{path}: channels: pointmaps must be three-channel ('PF')")
    v = raw.astype(np.float64)
    return Pointmap(v, np.all(np.isfinite(v), axis=-1), frame_tag=frame_tag)


# ---------------------------------------------------------------- PGM


def write_pgm(path, mask):
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got {m.shape}")
    h, w = m.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    _write_bytes(path, header + np.where(m, 255, 0).astype(np.uint8).tobytes())


def _pgm_tokens(data: bytes, count: int):
    """First ``count`` header tokens (comments skipped) and the payload offset."""
    tokens, i, n = [], 0, len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
            j += 1
        if j == i:
            return tokens, None
        tokens.append(data[i:j])
        i = j
    # exactly one whitespace byte separates the header from the raster
    return tokens, i + 1


def read_pgm(path) -> np.ndarray:
    """Binary PGM (P5, maxval 255) to a bool mask; any nonzero byte is true."""
    data = _read_bytes(path)
    tokens, off = _pgm_tokens(data, 4)
    if off is None or tokens[0] != b"P5":
        raise ParseError(f"{path}: header: expected binary PGM ('P5')")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise ParseError(f"{path}: dimensions: non-integer header field") from None
    if maxval != 255:
        raise ParseError(f"{path}: maxval: expected 255, got {maxval}")
    if w <= 0 or h <= 0:
        raise ParseError(f"{path}: dimensions: invalid size {w}x{h}")
    body = data[off:]
    if len(body) != w * h:
        raise ParseError(f"{path}: payload: expected {w * h} bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w) != 0


# ---------------------------------------------------------------- JSON


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise MissingInput(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: syntax: {exc}") from None


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _numbers(obj, key, n, path):
    if key not in obj:
        raise ParseError(f"{path}: {key}: missing field")
    v = obj[key]
    if not isinstance(v, list) or len(v) != n or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ParseError(f"{path}: {key}: expected a list of {n} numbers")
    return np.array(v, dtype=np.float64)


def _integer(obj, key, path, default=None):
    if key not in obj:
        if default is not None:
            return default
        raise ParseError(f"{path}: {key}: missing field")
    v = obj[key]
    if not isinstance(v, int) or isinstance(v, bool):
        raise ParseError(f"{path}: {key}: expected an integer")
    return v


def _pose(obj, key, path) -> Pose:
    M = _numbers(obj, key, 16, path).reshape(4, 4)
    try:
        return Pose.from_matrix(M)
    except ValueError as exc:
        raise ParseError(f"{path}: {key}: {exc}") from None


def _intrinsics(obj, key, path) -> Intrinsics:
    try:
        return Intrinsics.from_matrix(_numbers(obj, key, 9, path))
    except ValueError as exc:
        raise ParseError(f"{path}: {key}: {exc}") from None


def cameras_to_dict(K: Intrinsics, P1: Pose, P2: Pose, width: int, height: int) -> dict:
    return {
        "K": K.K.reshape(-1).tolist(),
        "P1": P1.matrix().reshape(-1).tolist(),
        "P2": P2.matrix().reshape(-1).tolist(),
        "width": int(width),
        "height": int(height),
    }


def write_cameras(path, K: Intrinsics, P1: Pose, P2: Pose, width: int, height: int):
    _write_json(path, cameras_to_dict(K, P1, P2, width, height))


def read_cameras(path):
    """Return ``(K, P1, P2, width, height)``."""
    obj = _load_json(path)
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: root: expected an object")
    return (
        _intrinsics(obj, "K", path),
        _pose(obj, "P1", path),
        _pose(obj, "P2", path),
        _integer(obj, "width", path),
        _integer(obj, "height", path),
    )


def scene_to_dict(scene: SceneConfig) -> dict:
    prims = []
    for p in scene.primitives:
        s = p.shape
        if isinstance(s, Sphere):
            d = {"type": "sphere", "center": s.center.tolist(), "radius": float(s.radius)}
        else:
            d = {
                "type": "plane",
                "center": s.center.tolist(),
                "normal": s.normal.tolist(),
                "u_axis": s.u_axis.tolist(),
                "half_extents": [float(h) for h in s.half_extents],
            }
        d["id"] = int(p.object_id)
        if p.is_dynamic:
            d["motion"] = {"R": p.motion.R.reshape(-1).tolist(), "T": p.motion.T.tolist()}
        prims.append(d)
    out = cameras_to_dict(scene.K, scene.P1, scene.P2, scene.width, scene.height)
    out.update({"seed": int(scene.seed), "primitives": prims})
    return out


def _primitive(d, k, path) -> ScenePrimitive:
    where = f"primitives[{k}]"
    if not isinstance(d, dict):
        raise ParseError(f"{path}: {where}: expected an object")
    kind = d.get("type")
    sub = f"{path}: {where}"
    try:
        if kind == "sphere":
            if not isinstance(d.get("radius"), (int, float)):
                raise ParseError(f"{sub}.radius: expected a number")
            shape = Sphere(_numbers(d, "center", 3, sub), float(d["radius"]))
        elif kind == "plane":
            shape = Plane(
                _numbers(d, "center", 3, sub),
                _numbers(d, "normal", 3, sub),
                _numbers(d, "u_axis", 3, sub),
                tuple(_numbers(d, "half_extents", 2, sub)),
            )
        else:
            raise ParseError(f"{sub}.type: expected 'sphere' or 'plane', got {kind!r}")
        motion = Motion()
        if "motion" in d:
            m = d["motion"]
            if not isinstance(m, dict):
                raise ParseError(f"{sub}.motion: expected an object")
            motion = Motion(_numbers(m, "R", 9, sub + ".motion").reshape(3, 3), _numbers(m, "T", 3, sub + ".motion"))
    except ValueError as exc:
        raise ParseError(f"{sub}: {exc}") from None
    return ScenePrimitive(shape, _integer(d, "id", sub, default=k), motion)


def scene_from_dict(obj, path="<config>") -> SceneConfig:
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: root: expected an object")
    prims = obj.get("primitives")
    if not isinstance(prims, list):
        raise ParseError(f"{path}: primitives: expected a list")
    if not prims:
        raise ParseError(f"{path}: primitives: scene needs at least one primitive")
    width = _integer(obj, "width", path)
    height = _integer(obj, "height", path)
    try:
        return SceneConfig(
            K=_intrinsics(obj, "K", path),
            P1=_pose(obj, "P1", path),
            P2=_pose(obj, "P2", path),
            width=width,
            height=height,
            primitives=[_primitive(d, k, path) for k, d in enumerate(prims)],
            seed=_integer(obj, "seed", path, default=0),
        )
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_scene(path, scene: SceneConfig):
    _write_json(path, scene_to_dict(scene))


def read_scene(path) -> SceneConfig:
    return scene_from_dict(_load_json(path), os.fspath(path))
