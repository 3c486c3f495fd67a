"""Middlebury ``.flo`` optical flow files.

Layout: float32 magic 202021.25 (the bytes ``PIEH``), int32 width, int32
height, then ``height * width`` interleaved (u, v) float32 pairs, all
little-endian.
"""
from pathlib import Path

import numpy as np

FLO_MAGIC = b"PIEH"


class FloFormatError(ValueError):
    pass


def read_flo(path) -> np.ndarray:
    """Read a flow file into a ``[2, H, W]`` float32 array (u first)."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FLO_MAGIC:
            raise FloFormatError(f"{path}: bad magic {magic!r}, expected {FLO_MAGIC!r}")
        w, h = np.frombuffer(f.read(8), dtype="<i4")
        if w <= 0 or h <= 0:
            raise FloFormatError(f"{path}: invalid dimensions {w}x{h}")
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != 2 * w * h:
        raise FloFormatError(f"{path}: expected {2 * w * h} floats, found {data.size}")
    return np.ascontiguousarray(data.reshape(h, w, 2).transpose(2, 0, 1)).astype(np.float32)


def write_flo(path, flow) -> None:
    """Write a ``[2, H, W]`` array as a flow file."""
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"flow must have shape [2, H, W], got {flow.shape}")
    _, h, w = flow.shape
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        f.write(np.array([w, h], dtype="<i4").tobytes())
        f.write(flow.transpose(1, 2, 0).astype("<f4").tobytes())
