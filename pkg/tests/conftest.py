import math
import sys

import numpy as np
import pytest

from mmhoi_geom.geometry import CameraIntrinsics, Mesh, RigidTransform
from mmhoi_geom.scene import BodyPart, InteractionAnnotation, ObjectInstance, Scene

CAM = CameraIntrinsics(600.0, 600.0, 336.0, 336.0)


def brute_chamfer(a, b):
    """O(N*M) scan over the full distance matrix."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return (math.fsum(d.min(1)) / len(a) + math.fsum(d.min(0)) / len(b)) / 2.0


def horn_similarity(src, dst):
    """Horn's unit-quaternion absolute orientation; returns (s, R, t)."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    ms, md = src.mean(0), dst.mean(0)
    x, y = src - ms, dst - md
    m = x.T @ y
    sxx, sxy, sxz = m[0]
    syx, syy, syz = m[1]
    szx, szy, szz = m[2]
    n = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    vals, vecs = np.linalg.eigh(n)
    w, qx, qy, qz = vecs[:, -1]
    r = np.array([
        [w * w + qx * qx - qy * qy - qz * qz, 2 * (qx * qy - w * qz), 2 * (qx * qz + w * qy)],
        [2 * (qx * qy + w * qz), w * w - qx * qx + qy * qy - qz * qz, 2 * (qy * qz - w * qx)],
        [2 * (qx * qz - w * qy), 2 * (qy * qz + w * qx), w * w - qx * qx - qy * qy + qz * qz],
    ])
    s = float(np.sum(y * (x @ r.T)) / np.sum(x * x))
    t = md - s * r @ ms
    return s, r, t


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def labeled_human(rng, per_part=5, origin=(0.0, 0.0, 4.0), spread=0.2):
    """Point-cluster human: part k sits at a distinct spot on a grid."""
    verts, labels = [], []
    for k, part in enumerate(BodyPart):
        c = np.asarray(origin) + spread * np.array([k % 4, k // 4, 0.0])
        verts.append(c + 0.01 * rng.normal(size=(per_part, 3)))
        labels += [int(part)] * per_part
    return Mesh(np.vstack(verts), None, np.array(labels))


def point_object(points, category=5):
    return ObjectInstance(category, Mesh(np.asarray(points, float).reshape(-1, 3)),
                          RigidTransform.identity())


def scene_of(humans, objects, interactions=(), oo=()):
    return Scene(list(humans), list(objects), CAM, (672, 672), list(interactions), list(oo))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def simple_scene(rng):
    """One labeled human and one object touching its right hand."""
    human = labeled_human(rng)
    hand = human.vertices[human.part_labels == int(BodyPart.RIGHT_HAND)]
    obj = point_object(hand + 0.001)
    ann = InteractionAnnotation(0, 0, 3, {BodyPart.RIGHT_HAND})
    return scene_of([human], [obj], [ann])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in mod.TITLES.items():
        terminalreporter.write_line(f"criterion {n:2d}: {mod.RESULTS.get(n, 'NOT RUN'):7s} {title}")
