"""Core 3D types, rigid/similarity transforms, distance metrics and pinhole projection.

All lengths are meters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

NUM_BODY_PARTS = 14
NO_PART = -1
# Below this many points the nearest-neighbour search is a plain distance matrix.
KDTREE_MIN_POINTS = 64
_KD_CANDIDATES = 4
_ROT_TOL = 1e-9


class GeometryError(ValueError):
    pass


def as_points(points, name: str = "points") -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise GeometryError(f"{name} must have shape (N, 3), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Mesh:
    """Vertex set with optional triangles and per-vertex body-part labels.

    ``part_labels`` uses ``-1`` for vertices without a part.
    """

    vertices: np.ndarray
    faces: Optional[np.ndarray] = None
    part_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        v = as_points(self.vertices, "vertices")
        if len(v) < 1:
            raise GeometryError("mesh needs at least one vertex")
        object.__setattr__(self, "vertices", v)
        if self.faces is not None:
            f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
            if f.size and (f.min() < 0 or f.max() >= len(v)):
                raise GeometryError("face index out of range")
            object.__setattr__(self, "faces", f)
        if self.part_labels is not None:
            lab = np.asarray(self.part_labels, dtype=np.int64).reshape(-1)
            if len(lab) != len(v):
                raise GeometryError(
                    f"{len(lab)} part labels for {len(v)} vertices")
            if lab.size and (lab.min() < NO_PART or lab.max() >= NUM_BODY_PARTS):
                raise GeometryError("part label outside 0..13")
            object.__setattr__(self, "part_labels", lab)

    def __len__(self):
        return len(self.vertices)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (np.array_equal(self.vertices, other.vertices)
                and _opt_equal(self.faces, other.faces)
                and _opt_equal(self.part_labels, other.part_labels))

    def with_vertices(self, vertices) -> "Mesh":
        return Mesh(vertices, self.faces, self.part_labels)


def _opt_equal(a, b):
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


def _check_rotation(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise GeometryError(f"rotation must be 3x3, got {r.shape}")
    if np.abs(r.T @ r - np.eye(3)).max() > _ROT_TOL or abs(np.linalg.det(r) - 1.0) > _ROT_TOL:
        raise GeometryError("rotation is not orthonormal with det +1")
    return r


def _check_vec3(t, name="translation") -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if t.shape != (3,):
        raise GeometryError(f"{name} must be a 3-vector")
    return t


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        object.__setattr__(self, "translation", _check_vec3(self.translation))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return as_points(points) @ self.rotation.T + self.translation

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ inner`` (``inner`` applied first)."""
        return RigidTransform(self.rotation @ inner.rotation,
                              self.rotation @ inner.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def as_similarity(self) -> "SimilarityTransform":
        return SimilarityTransform(1.0, self.rotation, self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        s = float(self.scale)
        if not s > 0:
            raise GeometryError("scale must be positive")
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        object.__setattr__(self, "translation", _check_vec3(self.translation))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return self.scale * (as_points(points) @ self.rotation.T) + self.translation

    def rigid(self) -> RigidTransform:
        return RigidTransform(self.rotation, self.translation)

    def to_dict(self) -> dict:
        return {"scale": self.scale, "rotation": self.rotation.tolist(),
                "translation": self.translation.tolist()}


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")


def rotation_about_axis(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + math.sin(angle_rad) * k + (1.0 - math.cos(angle_rad)) * (k @ k)


def rot_z(angle_rad: float) -> np.ndarray:
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def apply_transform(mesh: Mesh, t: RigidTransform) -> Mesh:
    return mesh.with_vertices(t.apply(mesh.vertices))


def _nn_distances_brute(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return d.min(axis=1)


def _nn_distances_tree(a: np.ndarray, b: np.ndarray, tree: cKDTree) -> np.ndarray:
    k = min(_KD_CANDIDATES, len(b))
    _, idx = tree.query(a, k=k)
    idx = idx.reshape(len(a), k)
    # distances are recomputed with the brute-force arithmetic so both paths agree bit for bit
    d = np.sqrt(((a[:, None, :] - b[idx]) ** 2).sum(-1))
    return d.min(axis=1)


def nearest_distances(a, b) -> np.ndarray:
    """Euclidean distance from every point of ``a`` to its nearest point in ``b``."""
    a = as_points(a, "a")
    b = as_points(b, "b")
    if len(a) == 0 or len(b) == 0:
        raise GeometryError("empty point set")
    if len(a) < KDTREE_MIN_POINTS and len(b) < KDTREE_MIN_POINTS:
        return _nn_distances_brute(a, b)
    return _nn_distances_tree(a, b, cKDTree(b))


def nearest_indices(a, b, tree: Optional[cKDTree] = None):
    """Index of, and distance to, the nearest point of ``b`` for every point of ``a``."""
    a = as_points(a, "a")
    b = as_points(b, "b")
    if len(a) == 0 or len(b) == 0:
        raise GeometryError("empty point set")
    if tree is None:
        tree = cKDTree(b)
    dist, idx = tree.query(a, k=1)
    return idx, dist


def chamfer_distance(a, b) -> float:
    """Symmetric Chamfer distance in meters.

    Mean nearest-neighbour distance from ``a`` to ``b`` and from ``b`` to ``a``,
    averaged. Not squared.
    """
    a = as_points(a, "a")
    b = as_points(b, "b")
    if len(a) == 0 or len(b) == 0:
        raise GeometryError("empty point set")
    d_ab = nearest_distances(a, b)
    d_ba = nearest_distances(b, a)
    return (math.fsum(d_ab) / len(d_ab) + math.fsum(d_ba) / len(d_ba)) / 2.0


def v2v_distance(a, b) -> float:
    """Mean distance between corresponding vertices of two same-topology meshes."""
    va = a.vertices if isinstance(a, Mesh) else as_points(a, "a")
    vb = b.vertices if isinstance(b, Mesh) else as_points(b, "b")
    if va.shape != vb.shape:
        raise GeometryError(f"topology mismatch: {len(va)} vs {len(vb)} vertices")
    d = np.sqrt(((va - vb) ** 2).sum(-1))
    return math.fsum(d) / len(d)


def project(points, cam: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection to pixel coordinates, shape (N, 2)."""
    p = as_points(points)
    z = p[:, 2]
    if np.any(z <= 0):
        raise GeometryError("point behind camera")
    u = cam.fx * p[:, 0] / z + cam.cx
    v = cam.fy * p[:, 1] / z + cam.cy
    return np.stack([u, v], axis=1)
