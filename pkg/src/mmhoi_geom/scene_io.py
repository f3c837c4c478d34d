"""Loading and saving meshes (OBJ subset), label sidecars and scene JSON.

Floats are written with ``repr`` (shortest string that round-trips, at most
17 significant digits), so save -> load is bit-exact and a second save
reproduces the first byte for byte.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Optional, Tuple

import jsonschema
import numpy as np

from .geometry import CameraIntrinsics, GeometryError, Mesh, NO_PART, RigidTransform
from .masks import InstanceMask, MaskError, load_mask
from .scene import InteractionAnnotation, ObjectInstance, Scene, SceneError

SCENE_VERSION = 1
_IGNORED_OBJ = {"vt", "vn", "vp", "o", "g", "s", "usemtl", "mtllib", "l"}


class MeshFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def _face_index(token: str, path, lineno: int) -> int:
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise MeshFormatError(path, lineno, f"bad face index {token!r}") from None
    if idx < 1:
        raise MeshFormatError(path, lineno, f"face index {idx} must be >= 1")
    return idx - 1


def parse_obj(text: str, path="<string>") -> Tuple[np.ndarray, Optional[np.ndarray]]:
    verts, faces, face_lines = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) != 3:
                raise MeshFormatError(path, lineno, "vertex needs exactly 3 coordinates")
            try:
                verts.append([float(x) for x in rest])
            except ValueError:
                raise MeshFormatError(path, lineno, f"bad vertex {line!r}") from None
        elif tag == "f":
            if len(rest) != 3:
                raise MeshFormatError(path, lineno, "only triangular faces are supported")
            faces.append([_face_index(t, path, lineno) for t in rest])
            face_lines.append(lineno)
        elif tag not in _IGNORED_OBJ:
            raise MeshFormatError(path, lineno, f"unknown statement {tag!r}")
    if not verts:
        raise MeshFormatError(path, 0, "no vertices")
    for f, lineno in zip(faces, face_lines):
        if max(f) >= len(verts):
            raise MeshFormatError(path, lineno,
                                  f"face index {max(f) + 1} out of range ({len(verts)} vertices)")
    return np.array(verts, dtype=np.float64), (np.array(faces, dtype=np.int64) if faces else None)


def parse_labels(text: str, n_vertices: int, path="<string>") -> np.ndarray:
    labels = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tok = raw.strip()
        if not tok:
            raise MeshFormatError(path, lineno, "empty label line")
        if tok == "-":
            labels.append(NO_PART)
            continue
        try:
            v = int(tok)
        except ValueError:
            raise MeshFormatError(path, lineno, f"bad label {tok!r}") from None
        if not 0 <= v <= 13:
            raise MeshFormatError(path, lineno, f"label {v} outside 0..13")
        labels.append(v)
    if len(labels) != n_vertices:
        raise MeshFormatError(path, len(labels), f"{len(labels)} labels for {n_vertices} vertices")
    return np.array(labels, dtype=np.int64)


def load_mesh(path, labels_path=None) -> Mesh:
    """Read an OBJ file (``v``/``f`` lines) plus an optional label sidecar.

    Without ``labels_path``, a sibling ``<stem>.labels`` file is used if present.
    """
    path = Path(path)
    verts, faces = parse_obj(path.read_text(encoding="utf-8"), path)
    if labels_path is None and path.with_suffix(".labels").exists():
        labels_path = path.with_suffix(".labels")
    labels = None
    if labels_path is not None:
        lp = Path(labels_path)
        labels = parse_labels(lp.read_text(encoding="utf-8"), len(verts), lp)
    return Mesh(verts, faces, labels)


def format_obj(mesh: Mesh) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    if mesh.faces is not None:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    return "\n".join(lines) + "\n"


def format_labels(labels: np.ndarray) -> str:
    return "".join("-\n" if v == NO_PART else f"{v}\n" for v in labels.tolist())


def save_mesh(mesh: Mesh, path) -> None:
    """Write OBJ; labels (if any) go to the ``<stem>.labels`` sidecar."""
    path = Path(path)
    path.write_text(format_obj(mesh), encoding="utf-8")
    if mesh.part_labels is not None:
        path.with_suffix(".labels").write_text(format_labels(mesh.part_labels), encoding="utf-8")


def _schema() -> dict:
    text = resources.files(__package__).joinpath("scene.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _path_str(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def validate_scene_dict(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        raise SceneError(_path_str(e.absolute_path), e.message)


def _load_entity_mask(spec, base: Path, where: str, instance_id: int, category: int,
                      image_size) -> Optional[InstanceMask]:
    if spec is None:
        return None
    try:
        if isinstance(spec, str):
            m = load_mask(base / spec)
        else:
            m = InstanceMask.from_rle_dict(spec)
    except (MaskError, OSError) as exc:
        raise SceneError(where, str(exc)) from None
    if (m.width, m.height) != tuple(image_size):
        raise SceneError(where, f"mask is {m.width}x{m.height}, image is "
                                f"{image_size[0]}x{image_size[1]}")
    return InstanceMask(m.width, m.height, m.runs, instance_id, category)


def scene_from_dict(doc: dict, base: Path) -> Scene:
    validate_scene_dict(doc)
    image_size = tuple(doc["image_size"])
    humans, human_masks = [], []
    for i, h in enumerate(doc["humans"]):
        try:
            humans.append(load_mesh(base / h["mesh"],
                                    base / h["labels"] if "labels" in h else None))
        except (MeshFormatError, GeometryError, OSError) as exc:
            raise SceneError(f"humans[{i}].mesh", str(exc)) from None
        human_masks.append(_load_entity_mask(h.get("mask"), base, f"humans[{i}].mask", i, -1,
                                             image_size))
    objects, object_masks = [], []
    for i, o in enumerate(doc["objects"]):
        try:
            mesh = load_mesh(base / o["mesh"])
        except (MeshFormatError, GeometryError, OSError) as exc:
            raise SceneError(f"objects[{i}].mesh", str(exc)) from None
        try:
            pose = RigidTransform(np.array(o["pose"]["rotation"], dtype=np.float64),
                                  np.array(o["pose"]["translation"], dtype=np.float64))
        except GeometryError as exc:
            raise SceneError(f"objects[{i}].pose", str(exc)) from None
        objects.append(ObjectInstance(o["category"], mesh, pose))
        object_masks.append(_load_entity_mask(o.get("mask"), base, f"objects[{i}].mask", i,
                                              o["category"], image_size))
    interactions = [InteractionAnnotation(a["human"], a["object"], a["action"], a["body_parts"])
                    for a in doc.get("interactions", [])]
    cam = CameraIntrinsics(**doc["camera"])
    return Scene(humans, objects, cam, image_size, interactions,
                 [tuple(p) for p in doc.get("object_object_contacts", [])],
                 human_masks, object_masks)


def load_scene(path) -> Scene:
    """Load scene JSON; mesh and mask paths resolve relative to the scene file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneError("<root>", f"invalid JSON: {exc}") from None
    return scene_from_dict(doc, path.parent)


def _mask_doc(m: Optional[InstanceMask]):
    if m is None:
        return None
    return {"width": m.width, "height": m.height, "runs": [v for r in m.runs for v in r]}


def scene_to_dict(scene: Scene, stem: str) -> Tuple[dict, dict]:
    """Scene document plus ``{relative file name: Mesh}`` for the referenced meshes."""
    files = {}
    humans = []
    for i, (h, m) in enumerate(zip(scene.humans, scene.human_masks)):
        name = f"{stem}.human{i}.obj"
        files[name] = h
        entry = {"mesh": name}
        if h.part_labels is not None:
            entry["labels"] = f"{stem}.human{i}.labels"
        if m is not None:
            entry["mask"] = _mask_doc(m)
        humans.append(entry)
    objects = []
    for i, (o, m) in enumerate(zip(scene.objects, scene.object_masks)):
        name = f"{stem}.object{i}.obj"
        files[name] = o.mesh
        entry = {"category": o.category, "mesh": name,
                 "pose": {"rotation": o.pose.rotation.tolist(),
                          "translation": o.pose.translation.tolist()}}
        if m is not None:
            entry["mask"] = _mask_doc(m)
        objects.append(entry)
    cam = scene.camera
    doc = {
        "version": SCENE_VERSION,
        "image_size": list(scene.image_size),
        "camera": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy},
        "humans": humans,
        "objects": objects,
        "interactions": [{"human": a.human_index, "object": a.object_index,
                          "action": a.action_class,
                          "body_parts": sorted(int(p) for p in a.body_parts)}
                         for a in scene.interactions],
        "object_object_contacts": [list(p) for p in scene.object_object_contacts],
    }
    return doc, files


def dumps_scene(doc: dict) -> str:
    return json.dumps(doc, indent=1) + "\n"


def save_scene(scene: Scene, path) -> None:
    """Write ``path`` plus ``<stem>.human<i>.obj``/``.labels`` and ``<stem>.object<i>.obj``."""
    path = Path(path)
    doc, files = scene_to_dict(scene, path.stem)
    for name, mesh in files.items():
        save_mesh(mesh, path.parent / name)
    path.write_text(dumps_scene(doc), encoding="utf-8")
