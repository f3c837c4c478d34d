"""Reference loss values (no gradients) and their weighted combination.

L1 terms use the mean absolute error.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Tuple

import numpy as np

from .geometry import CameraIntrinsics, project
from .patches import DualPatch


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_h: float = 1.0
    lambda_param: float = 1.0
    lambda_det: float = 1.0
    lambda_o: float = 10.0
    lambda_p: float = 10.0
    lambda_main: float = 10.0
    lambda_sub: float = 10.0
    lambda_act: float = 100.0
    lambda_bp: float = 10.0
    lambda_cons: float = 100.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise LossError(f"{f.name} must be non-negative")

    @classmethod
    def from_json(cls, path) -> "LossWeights":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise LossError(f"unknown loss weights: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in raw.items()})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossComponents:
    """Unweighted loss values, one per term of the training objective."""

    hproj: float = 0.0
    hmesh: float = 0.0
    param: float = 0.0
    det: float = 0.0
    oproj: float = 0.0
    omesh: float = 0.0
    pose: float = 0.0
    main: float = 0.0
    sub: float = 0.0
    act: float = 0.0
    bp: float = 0.0
    cons: float = 0.0


@dataclass(frozen=True)
class ObjectPoseTarget:
    rotation: np.ndarray
    translation: np.ndarray
    center: np.ndarray
    depth: float

    def __post_init__(self):
        if not self.depth > 0:
            raise LossError("depth must be positive")


def l1(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise LossError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        return 0.0
    return math.fsum(np.abs(a - b)) / a.size


def cross_entropy(logits, label: int) -> float:
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not 0 <= label < z.size:
        raise LossError(f"label {label} out of range for {z.size} classes")
    if not np.all(np.isfinite(z)):
        raise LossError("logits must be finite")
    m = z.max()
    return float(m + math.log(np.exp(z - m).sum()) - z[label])


def binary_cross_entropy(scores, targets, eps: float = 1e-12) -> float:
    """Mean BCE of probabilities ``scores`` against 0/1 ``targets`` (detection map)."""
    p = np.clip(np.asarray(scores, dtype=np.float64).reshape(-1), eps, 1.0 - eps)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise LossError("score map and target map differ in size")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def reprojection_loss(points, cam: CameraIntrinsics, targets_2d) -> float:
    """L1 between projected 3D points and 2D pixel targets."""
    return l1(project(points, cam), targets_2d)


def mesh_loss(pred_vertices, gt_vertices) -> float:
    return l1(pred_vertices, gt_vertices)


def object_pose_loss(pred: ObjectPoseTarget, gt: ObjectPoseTarget) -> float:
    return (l1(pred.rotation, gt.rotation) + l1(pred.translation, gt.translation)
            + l1(pred.center, gt.center) + l1([pred.depth], [gt.depth]))


def offset_loss(pred: DualPatch, gt: DualPatch) -> Tuple[float, float]:
    """``(main, sub)`` L1 offset terms, kept apart for separate weighting."""
    return l1(pred.main_offset, gt.main_offset), l1(pred.sub_offset, gt.sub_offset)


def human_loss(c: LossComponents, w: LossWeights) -> float:
    return w.lambda_h * (c.hproj + c.hmesh) + w.lambda_param * c.param + w.lambda_det * c.det


def object_loss(c: LossComponents, w: LossWeights) -> float:
    return (w.lambda_o * (c.oproj + c.omesh) + w.lambda_p * c.pose
            + w.lambda_main * c.main + w.lambda_sub * c.sub)


def interaction_loss(c: LossComponents, w: LossWeights) -> float:
    return w.lambda_act * c.act + w.lambda_bp * c.bp + w.lambda_cons * c.cons


def total_loss(c: LossComponents, w: LossWeights = LossWeights()) -> float:
    for f in fields(c):
        v = getattr(c, f.name)
        if not math.isfinite(v) or v < 0:
            raise LossError(f"invalid loss component {f.name}={v}")
    return human_loss(c, w) + object_loss(c, w) + interaction_loss(c, w)
