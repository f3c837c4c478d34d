"""Deterministic synthetic (ground truth, prediction) scene pairs.

Humans are stick figures made of 14 labeled point clusters; objects are small
ellipsoids. A contacting object is co-located with one body-part cluster, which
is what a symmetric part-to-object Chamfer distance below 5 mm requires.

Randomness comes from numpy's PCG64 generator. Every entity draws from its own
stream, keyed ``SeedSequence(seed, spawn_key=(stream, index))``, so adding an
entity never changes the draws of the others.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull

from .geometry import (CameraIntrinsics, GeometryError, Mesh, RigidTransform, chamfer_distance,
                       project, rotation_about_axis)
from .interaction import DEFAULT_DELTA
from .masks import InstanceMask
from .patches import IMAGE_SIZE, PatchGrid
from .scene import NUM_ACTION_CLASSES, BodyPart, InteractionAnnotation, ObjectInstance, Scene

NUM_CATEGORIES = 22
PART_RADIUS = 0.01
OBJECT_RADIUS = 0.01
MAX_PLACEMENT_ATTEMPTS = 1000
# minimum clearance between a free object and any body part or other free object
FREE_CLEARANCE = 0.15

# part cluster centers relative to the pelvis, meters, camera axes (y down)
PART_LAYOUT = {
    BodyPart.HEAD: (0.0, -0.70, 0.0),
    BodyPart.TORSO: (0.0, -0.30, 0.0),
    BodyPart.LEFT_UPPER_ARM: (-0.22, -0.42, 0.0),
    BodyPart.RIGHT_UPPER_ARM: (0.22, -0.42, 0.0),
    BodyPart.LEFT_MIDDLE_ARM: (-0.30, -0.18, 0.05),
    BodyPart.RIGHT_MIDDLE_ARM: (0.30, -0.18, 0.05),
    BodyPart.LEFT_HAND: (-0.34, 0.02, 0.12),
    BodyPart.RIGHT_HAND: (0.34, 0.02, 0.12),
    BodyPart.LEFT_UPPER_LEG: (-0.11, 0.20, 0.0),
    BodyPart.RIGHT_UPPER_LEG: (0.11, 0.20, 0.0),
    BodyPart.LEFT_LOWER_LEG: (-0.12, 0.55, 0.0),
    BodyPart.RIGHT_LOWER_LEG: (0.12, 0.55, 0.0),
    BodyPart.LEFT_FOOT: (-0.13, 0.85, 0.08),
    BodyPart.RIGHT_FOOT: (0.13, 0.85, 0.08),
}

# stream ids for SeedSequence spawn keys
_LAYOUT, _HUMAN, _OBJECT, _HUMAN_NOISE, _OBJECT_NOISE = range(5)


class SynthError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_humans: int = 2
    n_objects: int = 3
    human_vertex_count: int = 14 * 24
    object_vertex_count: int = 32
    rotation_noise_deg: float = 0.0
    translation_noise_m: float = 0.0
    vertex_noise_m: float = 0.0
    contact_fraction: float = 0.5
    image_size: int = IMAGE_SIZE

    def __post_init__(self):
        if self.n_humans < 0 or self.n_objects < 0 or self.n_humans + self.n_objects < 1:
            raise ValueError("need at least one human or object")
        if self.n_objects and self.n_humans < 1 and self.contact_fraction > 0:
            raise ValueError("contacts need at least one human")
        if self.human_vertex_count < len(BodyPart):
            raise ValueError(f"human_vertex_count must be >= {len(BodyPart)}")
        if self.object_vertex_count < 4:
            raise ValueError("object_vertex_count must be >= 4")
        if min(self.rotation_noise_deg, self.translation_noise_m, self.vertex_noise_m) < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if not 0.0 <= self.contact_fraction <= 1.0:
            raise ValueError("contact_fraction must lie in [0, 1]")


def stream(seed: int, kind: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(kind, index))))


def _unit(rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
    v = rng.normal(size=(3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    return rotation_about_axis(_unit(rng), rng.uniform(0.0, 2.0 * math.pi))


def default_camera(image_size: int = IMAGE_SIZE) -> CameraIntrinsics:
    return CameraIntrinsics(600.0, 600.0, image_size / 2.0, image_size / 2.0)


def make_human(rng: np.random.Generator, n_vertices: int, root, yaw: float) -> Mesh:
    parts = list(BodyPart)
    per = [n_vertices // len(parts) + (i < n_vertices % len(parts)) for i in range(len(parts))]
    rot = rotation_about_axis((0.0, 1.0, 0.0), yaw)
    verts, labels = [], []
    for part, k in zip(parts, per):
        radii = PART_RADIUS * rng.random(k) ** (1.0 / 3.0)
        pts = np.asarray(PART_LAYOUT[part]) + _unit(rng, k) * radii[:, None]
        verts.append(pts)
        labels.extend([int(part)] * k)
    v = np.vstack(verts) @ rot.T + np.asarray(root, dtype=np.float64)
    return Mesh(v, None, np.array(labels))


def make_object_mesh(rng: np.random.Generator, n_vertices: int) -> Mesh:
    """Convex ellipsoid point set centered at the origin, triangulated by its hull."""
    i = np.arange(n_vertices) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n_vertices)
    theta = math.pi * (1.0 + 5.0 ** 0.5) * i
    sphere = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], 1)
    v = sphere * (OBJECT_RADIUS * rng.uniform(0.7, 1.0, size=3))
    return Mesh(v, ConvexHull(v).simplices)


def _place_contact(rng, obj: Mesh, part_points: np.ndarray, center, delta: float) -> RigidTransform:
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        pose = RigidTransform(_random_rotation(rng), center + 0.002 * _unit(rng))
        if chamfer_distance(pose.apply(obj.vertices), part_points) < delta:
            return pose
    raise SynthError("contact placement failed")


def _place_free(rng, anchors: List[np.ndarray], lo, hi) -> np.ndarray:
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        c = rng.uniform(lo, hi)
        if all(np.linalg.norm(c - a) >= FREE_CLEARANCE for a in anchors):
            return c
    raise SynthError("free object placement failed")


def render_masks(scene: Scene, grid: PatchGrid) -> Tuple[List[InstanceMask], List[InstanceMask]]:
    """One-pixel point splats of every vertex, per entity.

    Each vertex is projected with the scene camera and sets the pixel nearest
    to its projection; projections outside the image are dropped.
    """
    w, h = grid.image_width, grid.image_height

    def splat(vertices, instance_id, category, what):
        try:
            uv = project(vertices, scene.camera)
        except GeometryError as exc:
            raise GeometryError(f"{what}: {exc}") from None
        cols = np.floor(uv[:, 0] + 0.5).astype(np.int64)
        rows = np.floor(uv[:, 1] + 0.5).astype(np.int64)
        ok = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
        arr = np.zeros((h, w), dtype=bool)
        arr[rows[ok], cols[ok]] = True
        return InstanceMask.from_array(arr, instance_id, category)

    if not scene.humans and not scene.objects:
        raise GeometryError("empty scene")
    hm = [splat(m.vertices, i, -1, f"human {i}") for i, m in enumerate(scene.humans)]
    om = [splat(o.posed().vertices, i, o.category, f"object {i}")
          for i, o in enumerate(scene.objects)]
    return hm, om


def with_masks(scene: Scene, grid: PatchGrid) -> Scene:
    hm, om = render_masks(scene, grid)
    return Scene(scene.humans, scene.objects, scene.camera, (grid.image_width, grid.image_height),
                 scene.interactions, scene.object_object_contacts, hm, om)


def _perturb_points(rng, pts: np.ndarray, cfg: SynthConfig, center) -> np.ndarray:
    axis, angle = _unit(rng), math.radians(cfg.rotation_noise_deg)
    shift = cfg.translation_noise_m * _unit(rng)
    jitter = cfg.vertex_noise_m * _unit(rng, len(pts))
    out = pts
    if angle:
        out = (out - center) @ rotation_about_axis(axis, angle).T + center
    if cfg.translation_noise_m:
        out = out + shift
    if cfg.vertex_noise_m:
        out = out + jitter
    return out


def perturb(gt: Scene, cfg: SynthConfig) -> Scene:
    """Per-entity rigid noise of exact magnitude plus per-vertex jitter.

    Humans rotate about their centroid; objects rotate about their pose origin.
    Zero noise leaves the entity bit-identical.
    """
    humans = []
    for i, m in enumerate(gt.humans):
        rng = stream(cfg.seed, _HUMAN_NOISE, i)
        humans.append(m.with_vertices(_perturb_points(rng, m.vertices, cfg, m.vertices.mean(0))))
    objects = []
    for i, o in enumerate(gt.objects):
        rng = stream(cfg.seed, _OBJECT_NOISE, i)
        axis, angle = _unit(rng), math.radians(cfg.rotation_noise_deg)
        shift = cfg.translation_noise_m * _unit(rng)
        jitter = cfg.vertex_noise_m * _unit(rng, len(o.mesh))
        pose, mesh = o.pose, o.mesh
        if angle:
            pose = RigidTransform(rotation_about_axis(axis, angle) @ pose.rotation, pose.translation)
        if cfg.translation_noise_m:
            pose = RigidTransform(pose.rotation, pose.translation + shift)
        if cfg.vertex_noise_m:
            mesh = mesh.with_vertices(mesh.vertices + jitter)
        objects.append(ObjectInstance(o.category, mesh, pose))
    return Scene(humans, objects, gt.camera, gt.image_size, gt.interactions,
                 gt.object_object_contacts)


def generate(cfg: SynthConfig, grid: Optional[PatchGrid] = None,
             delta: float = DEFAULT_DELTA) -> Tuple[Scene, Scene]:
    """Build ``(gt, pred)`` for a config. Same config, same bytes."""
    grid = grid or PatchGrid(cfg.image_size, cfg.image_size)
    layout = stream(cfg.seed, _LAYOUT)
    cam = default_camera(cfg.image_size)

    humans = []
    for i in range(cfg.n_humans):
        rng = stream(cfg.seed, _HUMAN, i)
        root = np.array([(i - (cfg.n_humans - 1) / 2.0) * 1.0, 0.0, 4.0 + rng.uniform(0.0, 0.5)])
        humans.append(make_human(rng, cfg.human_vertex_count, root,
                                 rng.uniform(-math.pi / 6, math.pi / 6)))

    n_contact = int(round(cfg.contact_fraction * cfg.n_objects)) if humans else 0
    slots = [(h, p) for h in range(len(humans)) for p in BodyPart]
    if n_contact > len(slots):
        raise SynthError("contact placement failed: more contacts than body parts")
    chosen = layout.choice(len(slots), size=n_contact, replace=False) if n_contact else []
    targets = [slots[int(k)] for k in chosen]

    anchors = [c for m in humans for c in _part_centers(m)]
    span = max(1.0, (cfg.n_humans - 1) / 2.0 + 0.8)
    lo, hi = np.array([-span, -0.9, 3.6]), np.array([span, 0.9, 5.2])

    objects, interactions, free = [], [], []
    for o in range(cfg.n_objects):
        rng = stream(cfg.seed, _OBJECT, o)
        mesh = make_object_mesh(rng, cfg.object_vertex_count)
        category = int(rng.integers(NUM_CATEGORIES))
        action = int(rng.integers(NUM_ACTION_CLASSES))
        if o < n_contact:
            h, part = targets[o]
            pts = humans[h].vertices[humans[h].part_labels == int(part)]
            pose = _place_contact(rng, mesh, pts, pts.mean(0), delta)
            interactions.append(InteractionAnnotation(h, o, action, {part}))
        else:
            center = _place_free(rng, anchors, lo, hi)
            if len(free) % 2 == 1:
                # second object of a touching pair sits against the first
                prev = objects[free[-1]].pose.translation
                center = prev + 2.0 * OBJECT_RADIUS * _unit(rng)
            else:
                anchors.append(center)
            pose = RigidTransform(_random_rotation(rng), center)
            free.append(o)
        objects.append(ObjectInstance(category, mesh, pose))
    oo = [(free[k], free[k + 1]) for k in range(0, len(free) - 1, 2)]

    gt = with_masks(Scene(humans, objects, cam, (grid.image_width, grid.image_height),
                          interactions, oo), grid)
    pred = with_masks(perturb(gt, cfg), grid)
    return gt, pred


def _part_centers(human: Mesh) -> List[np.ndarray]:
    return [human.vertices[human.part_labels == int(p)].mean(0) for p in BodyPart
            if np.any(human.part_labels == int(p))]


def generate_batch(base: SynthConfig, count: int) -> List[Tuple[Scene, Scene]]:
    """Scenes for seeds ``base.seed, base.seed + 1, ...``."""
    return [generate(replace(base, seed=base.seed + k)) for k in range(count)]
