"""Body-part/object contact measures and threshold-accuracy curves.

Contact misalignment. After aligning the prediction to the ground truth, a
contact between source ``X`` (a body part, or an object) and object ``Y`` is
scored as the excess of the predicted source's Chamfer distance to the GT
``Y`` over the GT contact distance::

    e = max(CD(aligned pred X, gt Y) - CD(gt X, gt Y), 0)

so a perfect prediction scores exactly 0. Object-object pairs add the score
of both directions.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Set, Tuple, Union

import numpy as np

from .alignment import align_single_hoi, global_fit
from .geometry import GeometryError, Mesh, SimilarityTransform, chamfer_distance
from .scene import BodyPart, Scene

DEFAULT_DELTA = 0.005
DEFAULT_THRESHOLDS = tuple(i / 100 for i in range(31))


class InteractionError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    delta: float = DEFAULT_DELTA
    thresholds: Tuple[float, ...] = DEFAULT_THRESHOLDS
    with_scale: bool = True

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.thresholds:
            raise ValueError("need at least one threshold")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be strictly increasing")


@dataclass(frozen=True)
class InteractionCurve:
    thresholds: Tuple[float, ...]
    accuracy: Tuple[float, ...]
    protocol: str = ""

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        object.__setattr__(self, "accuracy", tuple(float(a) for a in self.accuracy))
        if len(self.thresholds) != len(self.accuracy):
            raise ValueError("thresholds and accuracy differ in length")
        if any(not 0.0 <= a <= 1.0 for a in self.accuracy):
            raise ValueError("accuracy outside [0, 1]")
        self.check_monotone()

    def check_monotone(self) -> None:
        if any(b < a for a, b in zip(self.accuracy, self.accuracy[1:])):
            raise ValueError("curve accuracy decreases with threshold")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold_cm", "accuracy"])
        for t, a in zip(self.thresholds, self.accuracy):
            w.writerow([repr(round(t * 100, 10)), repr(a)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"protocol": self.protocol,
                "threshold_cm": [round(t * 100, 10) for t in self.thresholds],
                "accuracy": list(self.accuracy)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "InteractionCurve":
        return cls(tuple(t / 100 for t in d["threshold_cm"]), tuple(d["accuracy"]),
                   d.get("protocol", ""))


def enumerate_pairs(n_humans: int, m_objects: int) -> List[Tuple[int, int]]:
    """All human-object index pairs in row-major order."""
    if n_humans < 0 or m_objects < 0:
        raise ValueError("counts must be non-negative")
    return [(h, o) for h in range(n_humans) for o in range(m_objects)]


def body_part_points(human: Mesh, part) -> np.ndarray:
    if human.part_labels is None:
        raise InteractionError("unlabeled part: mesh carries no part labels")
    part = BodyPart(part)
    pts = human.vertices[human.part_labels == int(part)]
    if len(pts) == 0:
        raise InteractionError(f"unlabeled part: no vertex labeled {part.label}")
    return pts


def consistency_loss(human: Mesh, object_points, parts: Iterable,
                     delta: float = DEFAULT_DELTA) -> float:
    """Sum over parts of the hinge ``max(CD(part, object) - delta, 0)``."""
    parts = sorted(BodyPart(p) for p in parts)
    if not parts:
        raise InteractionError("no body parts given")
    terms = [max(chamfer_distance(body_part_points(human, p), object_points) - delta, 0.0)
             for p in parts]
    return math.fsum(terms)


def detect_interactions(human: Mesh, object_points, delta: float = DEFAULT_DELTA) -> Set[BodyPart]:
    """Parts whose Chamfer distance to the object is strictly below ``delta``."""
    if human.part_labels is None:
        return set()
    found = set()
    for part in BodyPart:
        mask = human.part_labels == int(part)
        if mask.any() and chamfer_distance(human.vertices[mask], object_points) < delta:
            found.add(part)
    return found


def contact_misalignment(pred_source, gt_source, gt_target) -> float:
    """Excess of the predicted source's distance to the GT target over the GT distance."""
    return max(chamfer_distance(pred_source, gt_target) - chamfer_distance(gt_source, gt_target),
               0.0)


ScenePairs = Union[Scene, Sequence[Scene]]


def _pairs(pred: ScenePairs, gt: ScenePairs) -> List[Tuple[Scene, Scene]]:
    preds = [pred] if isinstance(pred, Scene) else list(pred)
    gts = [gt] if isinstance(gt, Scene) else list(gt)
    if len(preds) != len(gts):
        raise InteractionError(f"{len(preds)} predicted scenes for {len(gts)} GT scenes")
    return list(zip(preds, gts))


def _part_points(pred: Scene, gt: Scene, h: int, part: BodyPart, t: SimilarityTransform):
    """Aligned predicted and GT points of a part; GT labels select the predicted vertices."""
    gh = gt.humans[h]
    if pred.humans[h].vertices.shape != gh.vertices.shape:
        raise GeometryError(f"topology mismatch in human {h}")
    gpts = body_part_points(gh, part)
    ppts = t.apply(pred.humans[h].vertices[gh.part_labels == int(part)])
    return ppts, gpts


def single_misalignments(pred: Scene, gt: Scene, cfg: EvalConfig = EvalConfig()) -> List[float]:
    """One score per annotated GT contact, each under its own pair alignment."""
    fits: Dict[Tuple[int, int], SimilarityTransform] = {}
    out = []
    for h, part, o in gt.contacts():
        if (h, o) not in fits:
            fits[(h, o)] = align_single_hoi(pred, gt, (h, o), cfg.with_scale).transform
        ppts, gpts = _part_points(pred, gt, h, part, fits[(h, o)])
        out.append(contact_misalignment(ppts, gpts, gt.objects[o].posed().vertices))
    return out


def multi_misalignment(pred: Scene, gt: Scene, cfg: EvalConfig = EvalConfig()) -> float:
    """Summed contact scores of a scene under one global alignment."""
    t = global_fit(pred, gt, cfg.with_scale)
    gobj = gt.posed_objects
    terms = []
    for h, part, o in gt.contacts():
        ppts, gpts = _part_points(pred, gt, h, part, t)
        terms.append(contact_misalignment(ppts, gpts, gobj[o].vertices))
    return math.fsum(terms)


def object_object_misalignment(pred: Scene, gt: Scene, cfg: EvalConfig = EvalConfig()) -> float:
    t = global_fit(pred, gt, cfg.with_scale)
    gobj = [m.vertices for m in gt.posed_objects]
    pobj = [t.apply(m.vertices) for m in pred.posed_objects]
    terms = []
    for a, b in gt.object_object_contacts:
        terms.append(contact_misalignment(pobj[a], gobj[a], gobj[b]))
        terms.append(contact_misalignment(pobj[b], gobj[b], gobj[a]))
    return math.fsum(terms)


def curve_from_scores(scores: Sequence[float], thresholds: Sequence[float],
                      protocol: str = "") -> InteractionCurve:
    """Fraction of scores ``<= threshold`` for each threshold."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise InteractionError("no interactions to evaluate")
    acc = [float(np.count_nonzero(s <= t)) / s.size for t in thresholds]
    return InteractionCurve(tuple(thresholds), tuple(acc), protocol)


def single_interaction_curve(pred: ScenePairs, gt: ScenePairs,
                             cfg: EvalConfig = EvalConfig()) -> InteractionCurve:
    """Per-contact accuracy, pooled over all contacts of all scenes."""
    scores = []
    for p, g in _pairs(pred, gt):
        scores.extend(single_misalignments(p, g, cfg))
    return curve_from_scores(scores, cfg.thresholds, "single")


def multi_interaction_curve(pred: ScenePairs, gt: ScenePairs,
                            cfg: EvalConfig = EvalConfig()) -> InteractionCurve:
    """Per-scene accuracy; scenes without annotated contacts are skipped."""
    scores = [multi_misalignment(p, g, cfg) for p, g in _pairs(pred, gt) if g.contacts()]
    return curve_from_scores(scores, cfg.thresholds, "multi")


def object_object_curve(pred: ScenePairs, gt: ScenePairs,
                        cfg: EvalConfig = EvalConfig()) -> InteractionCurve:
    """Per-scene accuracy over annotated object-object contacts."""
    scores = [object_object_misalignment(p, g, cfg) for p, g in _pairs(pred, gt)
              if g.object_object_contacts]
    if not scores:
        raise InteractionError("no object-object interactions to evaluate")
    return curve_from_scores(scores, cfg.thresholds, "object-object")


PROTOCOLS = {
    "single": single_interaction_curve,
    "multi": multi_interaction_curve,
    "object-object": object_object_curve,
}
