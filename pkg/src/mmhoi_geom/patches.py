"""Dual-patch object encoding from instance masks.

Each object is summarized by a *main* patch (the grid cell holding its
bounding-box center) and a *sub* patch among the 8 neighbours (preferring
cells where the object touches a human), plus pixel offsets from each patch
center. Pixel centers sit at integer coordinates; patch ``(r, c)`` spans
pixels ``[c*P, (c+1)*P) x [r*P, (r+1)*P)`` and is centered at
``((c + 0.5) * P - 0.5, (r + 0.5) * P - 0.5)``. Offsets and rays are ``(x, y)``
with y pointing down.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .masks import InstanceMask
from .scene import Scene

Patch = Tuple[int, int]
Offset = Tuple[float, float]

PATCH_SIZE = 24
IMAGE_SIZE = 672

# Object category ids for the categories that carry published shrink rules.
CHAIR, TABLE, MONITOR, FLOWER = 0, 1, 2, 3
CATEGORY_NAMES = {CHAIR: "chair", TABLE: "table", MONITOR: "monitor", FLOWER: "flower"}


class PatchError(ValueError):
    pass


class ObjectPatchError(PatchError):
    def __init__(self, object_index: int, message: str):
        super().__init__(f"object {object_index}: {message}")
        self.object_index = object_index


@dataclass(frozen=True)
class ShrinkRule:
    """Vertical band of the bounding box kept, as fractions of its height from the top."""

    category: int
    top_fraction: float
    bottom_fraction: float

    def __post_init__(self):
        if not 0.0 <= self.top_fraction < self.bottom_fraction <= 1.0:
            raise ValueError(f"bad shrink band [{self.top_fraction}, {self.bottom_fraction}]")


DEFAULT_SHRINK_RULES: Dict[int, ShrinkRule] = {
    CHAIR: ShrinkRule(CHAIR, 0.20, 0.55),
    TABLE: ShrinkRule(TABLE, 0.00, 0.15),
    MONITOR: ShrinkRule(MONITOR, 0.00, 0.60),
    FLOWER: ShrinkRule(FLOWER, 0.40, 1.00),
}


def load_shrink_rules(path) -> Dict[int, ShrinkRule]:
    """Read ``{category_id: [top, bottom]}`` JSON."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    rules = {}
    for key, band in raw.items():
        if not (isinstance(band, list) and len(band) == 2):
            raise ValueError(f"shrink rule {key!r}: expected [top, bottom]")
        cat = int(key)
        rules[cat] = ShrinkRule(cat, float(band[0]), float(band[1]))
    return rules


def dump_shrink_rules(rules: Mapping[int, ShrinkRule]) -> str:
    return json.dumps({str(k): [r.top_fraction, r.bottom_fraction]
                       for k, r in sorted(rules.items())}, indent=2)


@dataclass(frozen=True)
class PatchGrid:
    image_width: int = IMAGE_SIZE
    image_height: int = IMAGE_SIZE
    patch_size: int = PATCH_SIZE

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if self.image_width < 1 or self.image_height < 1:
            raise ValueError("image dimensions must be positive")

    @property
    def rows(self) -> int:
        return -(-self.image_height // self.patch_size)

    @property
    def cols(self) -> int:
        return -(-self.image_width // self.patch_size)

    def contains(self, patch: Patch) -> bool:
        return 0 <= patch[0] < self.rows and 0 <= patch[1] < self.cols

    def center(self, patch: Patch) -> Tuple[float, float]:
        """Nominal ``(x, y)`` center, also for clipped border patches."""
        p = self.patch_size
        return (patch[1] + 0.5) * p - 0.5, (patch[0] + 0.5) * p - 0.5

    def patch_at(self, x: float, y: float) -> Patch:
        p = self.patch_size
        r = min(max(math.floor((y + 0.5) / p), 0), self.rows - 1)
        c = min(max(math.floor((x + 0.5) / p), 0), self.cols - 1)
        return r, c

    def neighbors(self, patch: Patch) -> List[Patch]:
        r, c = patch
        out = [(r + dr, c + dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if dr or dc]
        return [q for q in out if self.contains(q)]

    def counts(self, arr: np.ndarray) -> np.ndarray:
        """Foreground pixel count per patch, shape ``(rows, cols)``."""
        p = self.patch_size
        padded = np.zeros((self.rows * p, self.cols * p), dtype=np.int64)
        padded[:arr.shape[0], :arr.shape[1]] = arr
        return padded.reshape(self.rows, p, self.cols, p).sum(axis=(1, 3))

    def check_mask(self, mask: InstanceMask) -> None:
        if (mask.width, mask.height) != (self.image_width, self.image_height):
            raise PatchError(f"mask is {mask.width}x{mask.height}, grid image is "
                             f"{self.image_width}x{self.image_height}")


def _is_neighbor(a: Patch, b: Patch) -> bool:
    return a != b and abs(a[0] - b[0]) <= 1 and abs(a[1] - b[1]) <= 1


@dataclass(frozen=True)
class DualPatch:
    main_patch: Patch
    sub_patch: Patch
    main_offset: Offset
    sub_offset: Offset
    sub_has_interaction: bool

    def __post_init__(self):
        if not _is_neighbor(self.main_patch, self.sub_patch):
            raise PatchError(f"sub patch {self.sub_patch} is not a neighbour of {self.main_patch}")

    def to_dict(self) -> dict:
        return {"main_patch": list(self.main_patch), "sub_patch": list(self.sub_patch),
                "main_offset": list(self.main_offset), "sub_offset": list(self.sub_offset),
                "sub_has_interaction": self.sub_has_interaction}

    @classmethod
    def from_dict(cls, d: dict) -> "DualPatch":
        return cls(tuple(d["main_patch"]), tuple(d["sub_patch"]),
                   tuple(float(v) for v in d["main_offset"]),
                   tuple(float(v) for v in d["sub_offset"]), bool(d["sub_has_interaction"]))


def shrink_mask(mask: InstanceMask,
                rules: Mapping[int, ShrinkRule] = DEFAULT_SHRINK_RULES) -> InstanceMask:
    """Keep only the rows of the category's band of the mask bounding box.

    A row is kept when its pixel center lies within ``[top * H, bottom * H]``
    measured from the top edge of the bounding box (``H`` = bbox height).
    Categories without a rule pass through unchanged.
    """
    rule = rules.get(mask.category)
    if rule is None or mask.is_empty():
        return mask
    _, y0, _, y1 = mask.bbox()
    height = y1 - y0 + 1
    rel = np.arange(mask.height) - y0 + 0.5
    keep = (rel >= rule.top_fraction * height) & (rel <= rule.bottom_fraction * height)
    arr = mask.to_array() & keep[:, None]
    if not arr.any():
        raise PatchError("mask vanished under shrink rule")
    return mask.replace_pixels(arr)


def bbox_center(mask: InstanceMask) -> Tuple[float, float]:
    x0, y0, x1, y1 = mask.bbox()
    return (x0 + x1) / 2.0, (y0 + y1) / 2.0


def select_main_patch(mask: InstanceMask, grid: PatchGrid) -> Tuple[Patch, Offset]:
    """Patch holding the bounding-box center, with the center's offset from it.

    Falls back to the patch with the most mask pixels (smallest ``(row, col)``
    on ties) if the center patch holds none.
    """
    if mask.is_empty():
        raise PatchError("empty mask")
    grid.check_mask(mask)
    x, y = bbox_center(mask)
    patch = grid.patch_at(x, y)
    counts = grid.counts(mask.to_array())
    if counts[patch] == 0:
        flat = int(np.argmax(counts))
        patch = divmod(flat, grid.cols)
    u, v = grid.center(patch)
    return (int(patch[0]), int(patch[1])), (x - u, y - v)


def select_sub_patch(mask: InstanceMask, interaction_mask: Optional[InstanceMask],
                     main: Patch, grid: PatchGrid) -> Tuple[Patch, Offset, bool]:
    if mask.is_empty():
        raise PatchError("empty mask")
    if not grid.contains(main):
        raise PatchError(f"main patch {main} outside grid")
    grid.check_mask(mask)
    arr = mask.to_array()
    obj_counts = grid.counts(arr)
    if interaction_mask is not None:
        grid.check_mask(interaction_mask)
        inter_counts = grid.counts(interaction_mask.to_array())
    else:
        inter_counts = np.zeros_like(obj_counts)
    # neighbors() is row-major, so max() keeps the smallest (row, col) on ties
    candidates = [q for q in grid.neighbors(main) if obj_counts[q] > 0]
    if not candidates:
        raise PatchError("no sub-patch candidate")
    touching = [q for q in candidates if inter_counts[q] > 0]
    pool = touching or candidates
    best = max(pool, key=lambda q: (obj_counts[q], -q[0], -q[1]))

    p = grid.patch_size
    r, c = best
    ys, xs = np.nonzero(arr[r * p:(r + 1) * p, c * p:(c + 1) * p])
    # patch-local coordinates: integer sums, one division, so moving the mask
    # by whole patches leaves the offset bit-identical
    half = (p - 1) / 2.0
    n = len(xs)
    return best, (int(xs.sum()) / n - half, int(ys.sum()) / n - half), bool(touching)


def orientation_ray(dp: DualPatch, grid: PatchGrid) -> Tuple[float, float]:
    """Unit vector from the object center toward the sub-patch mask centroid."""
    mu, mv = grid.center(dp.main_patch)
    su, sv = grid.center(dp.sub_patch)
    dx = (su + dp.sub_offset[0]) - (mu + dp.main_offset[0])
    dy = (sv + dp.sub_offset[1]) - (mv + dp.main_offset[1])
    n = math.hypot(dx, dy)
    if n == 0:
        raise PatchError("degenerate ray")
    return dx / n, dy / n


def interaction_pixels(object_mask: InstanceMask,
                       human_masks: Sequence[Optional[InstanceMask]]) -> InstanceMask:
    """Human-mask pixels within one pixel (8-neighbourhood) of the object mask."""
    grown = ndimage.binary_dilation(object_mask.to_array(), structure=np.ones((3, 3), bool))
    humans = np.zeros_like(grown)
    for m in human_masks:
        if m is not None:
            humans |= m.to_array()
    return InstanceMask.from_array(grown & humans, object_mask.instance_id, object_mask.category)


def extract_object_patch(scene: Scene, index: int, grid: PatchGrid,
                         rules: Mapping[int, ShrinkRule] = DEFAULT_SHRINK_RULES) -> DualPatch:
    """Shrink, then select main and sub patches for one object of the scene."""
    mask = scene.object_masks[index]
    try:
        if mask is None:
            raise PatchError("no mask")
        if mask.is_empty():
            raise PatchError("empty mask")
        touching = interaction_pixels(mask, scene.human_masks)
        # the shrink band follows the object's category, whatever the mask says
        shrunk = shrink_mask(replace(mask, category=scene.objects[index].category), rules)
        main, main_off = select_main_patch(shrunk, grid)
        sub, sub_off, flag = select_sub_patch(shrunk, touching, main, grid)
    except PatchError as exc:
        raise ObjectPatchError(index, str(exc)) from None
    return DualPatch(main, sub, main_off, sub_off, flag)


def extract_dual_patches(scene: Scene, grid: PatchGrid,
                         rules: Mapping[int, ShrinkRule] = DEFAULT_SHRINK_RULES) -> List[DualPatch]:
    return [extract_object_patch(scene, i, grid, rules) for i in range(len(scene.objects))]
