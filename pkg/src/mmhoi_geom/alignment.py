"""Procrustes alignment, HOI-level evaluation alignment, ICP and pose averaging."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (GeometryError, RigidTransform, SimilarityTransform, as_points,
                       chamfer_distance, v2v_distance)
from .scene import Scene

# relative singular-value floor below which a point set counts as rank deficient
_RANK_TOL = 1e-10


class DegenerateError(GeometryError):
    pass


class IcpError(GeometryError):
    pass


def _rank2(centered: np.ndarray) -> bool:
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[0] > 0 and sv[1] > _RANK_TOL * sv[0]


def procrustes(source, target, with_scale: bool = True, weights=None) -> SimilarityTransform:
    """Least-squares similarity (or rigid) transform taking ``source`` onto ``target``.

    Closed form via SVD of the cross-covariance. When the unconstrained optimum
    is a reflection the axis of the smallest singular value is flipped so the
    rotation keeps det +1. ``weights`` are optional non-negative per-point weights.
    """
    src = as_points(source, "source")
    dst = as_points(target, "target")
    if src.shape != dst.shape:
        raise GeometryError(f"point count mismatch: {len(src)} vs {len(dst)}")
    if len(src) < 3:
        raise DegenerateError("degenerate point set: need at least 3 points")
    if weights is None:
        w = np.full(len(src), 1.0 / len(src))
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape != (len(src),) or np.any(w < 0) or w.sum() <= 0:
            raise GeometryError("weights must be non-negative, one per point, not all zero")
        w = w / w.sum()
    if np.array_equal(src, dst):
        return SimilarityTransform.identity()

    mu_s = w @ src
    mu_t = w @ dst
    xs = src - mu_s
    xt = dst - mu_t
    if not _rank2(xs * np.sqrt(w)[:, None]):
        raise DegenerateError("degenerate point set")
    cov = (xt * w[:, None]).T @ xs
    u, sv, vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    rot = (u * d) @ vt
    if with_scale:
        var_s = float(w @ (xs ** 2).sum(1))
        scale = float(sv @ d) / var_s
        if not scale > 0:
            raise DegenerateError("degenerate point set: non-positive scale")
    else:
        scale = 1.0
    trans = mu_t - scale * rot @ mu_s
    return SimilarityTransform(scale, rot, trans)


def squared_residual(transform, source, target) -> float:
    """Sum of squared distances between transformed ``source`` and ``target``."""
    diff = transform.apply(source) - as_points(target)
    return float((diff ** 2).sum())


@dataclass
class AlignmentReport:
    """Per-entity CD/V2V (meters) after alignment. Indices name the entities reported."""

    transform: SimilarityTransform
    mode: str
    human_indices: List[int]
    object_indices: List[int]
    per_human_cd: List[float]
    per_object_cd: List[float]
    per_human_v2v: List[float]
    per_object_v2v: List[float]


def _checked_pair(pred: Scene, gt: Scene, pair: Tuple[int, int]):
    h, o = pair
    for scene, name in ((pred, "pred"), (gt, "gt")):
        if not 0 <= h < len(scene.humans):
            raise IndexError(f"human index {h} out of range in {name} scene")
        if not 0 <= o < len(scene.objects):
            raise IndexError(f"object index {o} out of range in {name} scene")
    ph, gh = pred.humans[h].vertices, gt.humans[h].vertices
    po, go = pred.objects[o].posed().vertices, gt.objects[o].posed().vertices
    if ph.shape != gh.shape or po.shape != go.shape:
        raise GeometryError(f"topology mismatch in pair {pair}")
    return ph, po, gh, go


def align_single_hoi(pred: Scene, gt: Scene, pair: Tuple[int, int],
                     with_scale: bool = True) -> AlignmentReport:
    """One Procrustes fit over the pair's concatenated human and object vertices."""
    ph, po, gh, go = _checked_pair(pred, gt, pair)
    t = procrustes(np.vstack([ph, po]), np.vstack([gh, go]), with_scale)
    ah, ao = t.apply(ph), t.apply(po)
    return AlignmentReport(
        transform=t, mode="S", human_indices=[pair[0]], object_indices=[pair[1]],
        per_human_cd=[chamfer_distance(ah, gh)], per_object_cd=[chamfer_distance(ao, go)],
        per_human_v2v=[v2v_distance(ah, gh)], per_object_v2v=[v2v_distance(ao, go)])


def scene_entities(scene: Scene) -> List[np.ndarray]:
    """Humans followed by posed objects, as vertex arrays."""
    return [m.vertices for m in scene.humans] + [m.vertices for m in scene.posed_objects]


def global_fit(pred: Scene, gt: Scene, with_scale: bool = True,
               per_entity_weights: bool = False) -> SimilarityTransform:
    if len(pred.humans) != len(gt.humans) or len(pred.objects) != len(gt.objects):
        raise GeometryError(
            f"entity count mismatch: pred {len(pred.humans)}h/{len(pred.objects)}o, "
            f"gt {len(gt.humans)}h/{len(gt.objects)}o")
    pe, ge = scene_entities(pred), scene_entities(gt)
    for i, (a, b) in enumerate(zip(pe, ge)):
        if a.shape != b.shape:
            raise GeometryError(f"topology mismatch in entity {i}")
    weights = None
    if per_entity_weights:
        weights = np.concatenate([np.full(len(a), 1.0 / len(a)) for a in pe])
    return procrustes(np.vstack(pe), np.vstack(ge), with_scale, weights)


def align_multi_hoi(pred: Scene, gt: Scene, with_scale: bool = True,
                    per_entity_weights: bool = False) -> AlignmentReport:
    """One global Procrustes fit over every human and object vertex in the scene.

    Vertices are weighted uniformly unless ``per_entity_weights`` gives every
    entity equal total weight.
    """
    t = global_fit(pred, gt, with_scale, per_entity_weights)
    nh = len(gt.humans)
    pe, ge = scene_entities(pred), scene_entities(gt)
    cds, v2vs = [], []
    for a, b in zip(pe, ge):
        aa = t.apply(a)
        cds.append(chamfer_distance(aa, b))
        v2vs.append(v2v_distance(aa, b))
    return AlignmentReport(
        transform=t, mode="M", human_indices=list(range(nh)),
        object_indices=list(range(len(gt.objects))),
        per_human_cd=cds[:nh], per_object_cd=cds[nh:],
        per_human_v2v=v2vs[:nh], per_object_v2v=v2vs[nh:])


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")


@dataclass
class IcpResult:
    transform: RigidTransform
    rmse: float
    iterations: int
    rmse_trace: List[float] = field(default_factory=list)


def icp(source, target, init: Optional[RigidTransform] = None,
        params: IcpParams = IcpParams()) -> IcpResult:
    """Point-to-point ICP.

    Each sweep matches every transformed source point to its nearest target
    point and refits a rigid transform from the original source to the matches.
    Stops when the RMSE changes by less than ``convergence_tol`` or after
    ``max_iterations`` sweeps; returns the lowest-RMSE transform seen.
    ``rmse_trace[0]`` is the RMSE of ``init``.
    """
    src = as_points(source, "source")
    dst = as_points(target, "target")
    if len(src) < 3 or len(dst) < 3:
        raise IcpError("icp degenerate: need at least 3 points in each set")
    tree = cKDTree(dst)
    t = init if init is not None else RigidTransform.identity()
    dist, idx = tree.query(t.apply(src))
    rmse = math.sqrt(float(np.mean(dist ** 2)))
    trace = [rmse]
    best_t, best_rmse = t, rmse
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        matched = dst[idx]
        if not _rank2(matched - matched.mean(0)):
            raise IcpError("icp degenerate: correspondences collapse to a line or point")
        try:
            t = procrustes(src, matched, with_scale=False).rigid()
        except DegenerateError as exc:
            raise IcpError(f"icp degenerate: {exc}") from None
        dist, idx = tree.query(t.apply(src))
        new_rmse = math.sqrt(float(np.mean(dist ** 2)))
        trace.append(new_rmse)
        if new_rmse < best_rmse:
            best_t, best_rmse = t, new_rmse
        if abs(rmse - new_rmse) < params.convergence_tol:
            break
        rmse = new_rmse
    return IcpResult(best_t, best_rmse, iterations, trace)


def matrix_to_quaternion(r) -> np.ndarray:
    """Rotation matrix -> unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s,
                      (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s,
                      (r[1, 2] + r[2, 1]) / s])
    else:
        s = 2.0 * math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def quaternion_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def average_quaternions(quaternions: Sequence) -> np.ndarray:
    """Chordal L2 mean of unit quaternions ``(w, x, y, z)``.

    The mean is the principal eigenvector of ``sum q q^T``, which minimizes
    the summed squared Frobenius distance between the rotation matrices and
    does not depend on input order or on the sign of any input. The result's
    sign is aligned with the first input.
    """
    qs = np.asarray(list(quaternions), dtype=np.float64).reshape(-1, 4)
    if len(qs) == 0:
        raise ValueError("cannot average an empty list of rotations")
    qs = qs / np.linalg.norm(qs, axis=1, keepdims=True)
    _, vecs = np.linalg.eigh(qs.T @ qs)
    q = vecs[:, -1]
    return -q if q @ qs[0] < 0 else q


def average_rotations(rotations: Sequence) -> np.ndarray:
    """Chordal L2 mean of rotation matrices (see ``average_quaternions``)."""
    rs = list(rotations)
    if not rs:
        raise ValueError("cannot average an empty list of rotations")
    return quaternion_to_matrix(average_quaternions([matrix_to_quaternion(r) for r in rs]))


def average_translations(translations: Sequence) -> np.ndarray:
    ts = np.asarray(list(translations), dtype=np.float64)
    if ts.size == 0:
        raise ValueError("cannot average an empty list of translations")
    return ts.reshape(-1, 3).mean(axis=0)
