"""Binary instance masks stored as row-major run-length encodings.

A run is ``(start, length)`` over the flattened ``height x width`` image.
Canonical form: runs sorted, non-empty, and maximal (touching runs merged).
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np


class MaskError(ValueError):
    pass


Run = Tuple[int, int]


def canonical_runs(runs: Sequence[Run], width: int, height: int) -> Tuple[Run, ...]:
    """Validate runs and merge touching neighbours. Rejects overlap and out-of-bounds."""
    total = width * height
    out = []
    prev_end = -1
    for start, length in runs:
        start, length = int(start), int(length)
        if length < 0 or start < 0:
            raise MaskError(f"negative run ({start}, {length})")
        if length == 0:
            continue
        if start + length > total:
            raise MaskError(f"run ({start}, {length}) out of bounds for {width}x{height}")
        if start < prev_end:
            raise MaskError(f"runs overlapping or unsorted at start {start}")
        if out and start == prev_end:
            out[-1] = (out[-1][0], out[-1][1] + length)
        else:
            out.append((start, length))
        prev_end = start + length
    return tuple(out)


def runs_from_array(arr: np.ndarray) -> Tuple[Run, ...]:
    flat = np.asarray(arr, dtype=bool).reshape(-1).astype(np.int8)
    edges = np.diff(np.concatenate([[0], flat, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return tuple((int(s), int(e - s)) for s, e in zip(starts, ends))


@dataclass(frozen=True)
class InstanceMask:
    width: int
    height: int
    runs: Tuple[Run, ...] = ()
    instance_id: int = 0
    category: int = -1

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise MaskError("mask dimensions must be positive")
        object.__setattr__(self, "runs", canonical_runs(self.runs, self.width, self.height))

    @classmethod
    def from_array(cls, arr, instance_id: int = 0, category: int = -1) -> "InstanceMask":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise MaskError("mask array must be 2-D")
        h, w = arr.shape
        return cls(w, h, runs_from_array(arr), instance_id, category)

    def to_array(self) -> np.ndarray:
        flat = np.zeros(self.width * self.height, dtype=bool)
        for s, n in self.runs:
            flat[s:s + n] = True
        return flat.reshape(self.height, self.width)

    @property
    def area(self) -> int:
        return sum(n for _, n in self.runs)

    def is_empty(self) -> bool:
        return not self.runs

    def bbox(self) -> Optional[Tuple[int, int, int, int]]:
        """Inclusive ``(x0, y0, x1, y1)`` or None for an empty mask."""
        if not self.runs:
            return None
        ys, xs = np.nonzero(self.to_array())
        return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())

    def replace_pixels(self, arr) -> "InstanceMask":
        return InstanceMask.from_array(arr, self.instance_id, self.category)

    def to_rle_dict(self) -> dict:
        flat = [v for run in self.runs for v in run]
        return {"width": self.width, "height": self.height, "runs": flat,
                "instance_id": self.instance_id, "category": self.category}

    @classmethod
    def from_rle_dict(cls, d: dict) -> "InstanceMask":
        try:
            w, h, flat = int(d["width"]), int(d["height"]), list(d["runs"])
        except (KeyError, TypeError) as exc:
            raise MaskError(f"bad RLE mask: {exc}") from None
        if len(flat) % 2:
            raise MaskError("RLE runs must be start/length pairs")
        runs = list(zip(flat[0::2], flat[1::2]))
        return cls(w, h, runs, int(d.get("instance_id", 0)), int(d.get("category", -1)))


_PGM_HEADER = re.compile(rb"\AP5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+"
                         rb"(?:#[^\n]*\n\s*)*(\d+)\s")


def decode_pgm(data: bytes) -> np.ndarray:
    """Binary P5 PGM with maxval 255 -> bool array (nonzero is foreground)."""
    m = _PGM_HEADER.match(data)
    if m is None:
        raise MaskError("malformed PGM header")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise MaskError(f"PGM maxval must be 255, got {maxval}")
    if w < 1 or h < 1:
        raise MaskError("PGM dimensions must be positive")
    body = data[m.end():]
    if len(body) != w * h:
        raise MaskError(f"PGM body has {len(body)} bytes, expected {w * h}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w) != 0


def encode_pgm(arr) -> bytes:
    arr = np.asarray(arr, dtype=bool)
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode() + (arr.astype(np.uint8) * 255).tobytes()


def load_mask(source, instance_id: int = 0, category: int = -1) -> InstanceMask:
    """Load from a ``.pgm`` path, a JSON RLE dict, or a path to a JSON RLE file."""
    if isinstance(source, dict):
        return InstanceMask.from_rle_dict(source)
    path = Path(source)
    data = path.read_bytes()
    if data.startswith(b"P5"):
        return InstanceMask.from_array(decode_pgm(data), instance_id, category)
    try:
        d = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MaskError(f"{path}: neither PGM nor RLE JSON ({exc})") from None
    return InstanceMask.from_rle_dict(d)


def save_mask_pgm(mask: InstanceMask, path) -> None:
    Path(path).write_bytes(encode_pgm(mask.to_array()))
