"""Scene container: labeled humans, posed objects, annotations, camera and masks."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import CameraIntrinsics, Mesh, RigidTransform, apply_transform
from .masks import InstanceMask

NUM_ACTION_CLASSES = 78


class BodyPart(enum.IntEnum):
    """Interacting body parts. "Middle arm" is the forearm."""

    HEAD = 0
    TORSO = 1
    LEFT_UPPER_ARM = 2
    RIGHT_UPPER_ARM = 3
    LEFT_MIDDLE_ARM = 4
    RIGHT_MIDDLE_ARM = 5
    LEFT_HAND = 6
    RIGHT_HAND = 7
    LEFT_UPPER_LEG = 8
    RIGHT_UPPER_LEG = 9
    LEFT_LOWER_LEG = 10
    RIGHT_LOWER_LEG = 11
    LEFT_FOOT = 12
    RIGHT_FOOT = 13

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", " ")


class SceneError(ValueError):
    """Invalid scene content; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class InteractionAnnotation:
    human_index: int
    object_index: int
    action_class: int
    body_parts: FrozenSet[BodyPart] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "body_parts", frozenset(BodyPart(p) for p in self.body_parts))
        if not 0 <= self.action_class < NUM_ACTION_CLASSES:
            raise SceneError("action_class", f"{self.action_class} not in 0..{NUM_ACTION_CLASSES - 1}")


@dataclass(frozen=True, eq=False)
class ObjectInstance:
    category: int
    mesh: Mesh
    pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def posed(self) -> Mesh:
        return apply_transform(self.mesh, self.pose)

    def __eq__(self, other):
        if not isinstance(other, ObjectInstance):
            return NotImplemented
        return (self.category == other.category and self.mesh == other.mesh
                and np.array_equal(self.pose.rotation, other.pose.rotation)
                and np.array_equal(self.pose.translation, other.pose.translation))


@dataclass(eq=False)
class Scene:
    humans: List[Mesh]
    objects: List[ObjectInstance]
    camera: CameraIntrinsics
    image_size: Tuple[int, int] = (672, 672)
    interactions: List[InteractionAnnotation] = field(default_factory=list)
    object_object_contacts: List[Tuple[int, int]] = field(default_factory=list)
    human_masks: List[Optional[InstanceMask]] = field(default_factory=list)
    object_masks: List[Optional[InstanceMask]] = field(default_factory=list)

    def __post_init__(self):
        self.humans = list(self.humans)
        self.objects = list(self.objects)
        self.interactions = list(self.interactions)
        self.object_object_contacts = [(int(a), int(b)) for a, b in self.object_object_contacts]
        self.image_size = (int(self.image_size[0]), int(self.image_size[1]))
        if not self.human_masks:
            self.human_masks = [None] * len(self.humans)
        if not self.object_masks:
            self.object_masks = [None] * len(self.objects)
        self.validate()

    def validate(self) -> None:
        nh, no = len(self.humans), len(self.objects)
        if nh + no == 0:
            raise SceneError("humans", "scene needs at least one human or object")
        for i, ann in enumerate(self.interactions):
            if not 0 <= ann.human_index < nh:
                raise SceneError(f"interactions[{i}].human",
                                 f"index {ann.human_index} out of range ({nh} humans)")
            if not 0 <= ann.object_index < no:
                raise SceneError(f"interactions[{i}].object",
                                 f"index {ann.object_index} out of range ({no} objects)")
        for i, (a, b) in enumerate(self.object_object_contacts):
            for j, k in enumerate((a, b)):
                if not 0 <= k < no:
                    raise SceneError(f"object_object_contacts[{i}][{j}]",
                                     f"index {k} out of range ({no} objects)")
            if a == b:
                raise SceneError(f"object_object_contacts[{i}]", "object paired with itself")
        _check_masks("human_masks", self.human_masks, nh, self.image_size)
        _check_masks("object_masks", self.object_masks, no, self.image_size)

    @property
    def posed_objects(self) -> List[Mesh]:
        return [o.posed() for o in self.objects]

    def contacts(self) -> List[Tuple[int, BodyPart, int]]:
        """Every annotated (human, part, object) contact in annotation order."""
        out = []
        for ann in self.interactions:
            for part in sorted(ann.body_parts):
                out.append((ann.human_index, part, ann.object_index))
        return out

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.humans == other.humans and self.objects == other.objects
                and self.camera == other.camera and self.image_size == other.image_size
                and self.interactions == other.interactions
                and self.object_object_contacts == other.object_object_contacts
                and self.human_masks == other.human_masks
                and self.object_masks == other.object_masks)


def _check_masks(name: str, masks: Sequence[Optional[InstanceMask]], n: int,
                 image_size: Tuple[int, int]) -> None:
    if len(masks) != n:
        raise SceneError(name, f"{len(masks)} masks for {n} instances")
    w, h = image_size
    for i, m in enumerate(masks):
        if m is not None and (m.width, m.height) != (w, h):
            raise SceneError(f"{name}[{i}]", f"mask is {m.width}x{m.height}, image is {w}x{h}")
