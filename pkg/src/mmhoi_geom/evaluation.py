"""Scene-level reconstruction metrics (S/M alignment) and serialized reports.

Distances are meters internally and centimeters in every serialized report.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from . import __version__
from .alignment import align_multi_hoi, align_single_hoi
from .interaction import InteractionCurve, enumerate_pairs
from .scene import Scene

CM = 100.0


@dataclass
class SceneMetrics:
    """Per-entity CD and V2V in meters for one scene."""

    name: str
    mode: str
    human_cd: List[float]
    human_v2v: List[float]
    object_cd: List[float]
    object_v2v: List[float]

    def to_dict(self) -> dict:
        return {
            "scene": self.name,
            "humans": [{"cd_cm": c * CM, "v2v_cm": v * CM}
                       for c, v in zip(self.human_cd, self.human_v2v)],
            "objects": [{"cd_cm": c * CM, "v2v_cm": v * CM}
                        for c, v in zip(self.object_cd, self.object_v2v)],
        }


def evaluate_scene(pred: Scene, gt: Scene, mode: str = "m", name: str = "",
                   with_scale: bool = True) -> SceneMetrics:
    """CD/V2V per entity after alignment.

    ``"m"`` fits one transform for the whole scene. ``"s"`` fits every
    human-object pair separately; an entity's value is then the mean over the
    pairs it belongs to.
    """
    mode = mode.lower()
    if mode == "m":
        r = align_multi_hoi(pred, gt, with_scale)
        return SceneMetrics(name, "M", r.per_human_cd, r.per_human_v2v,
                            r.per_object_cd, r.per_object_v2v)
    if mode != "s":
        raise ValueError(f"unknown alignment mode {mode!r}")
    if len(pred.humans) != len(gt.humans) or len(pred.objects) != len(gt.objects):
        raise ValueError("entity count mismatch")
    pairs = enumerate_pairs(len(gt.humans), len(gt.objects))
    if not pairs:
        raise ValueError("S-mode needs at least one human and one object")
    hc: Dict[int, list] = {i: [] for i in range(len(gt.humans))}
    hv: Dict[int, list] = {i: [] for i in range(len(gt.humans))}
    oc: Dict[int, list] = {i: [] for i in range(len(gt.objects))}
    ov: Dict[int, list] = {i: [] for i in range(len(gt.objects))}
    for h, o in pairs:
        r = align_single_hoi(pred, gt, (h, o), with_scale)
        hc[h].append(r.per_human_cd[0])
        hv[h].append(r.per_human_v2v[0])
        oc[o].append(r.per_object_cd[0])
        ov[o].append(r.per_object_v2v[0])

    def mean(d):
        return [math.fsum(d[i]) / len(d[i]) for i in sorted(d)]

    return SceneMetrics(name, "S", mean(hc), mean(hv), mean(oc), mean(ov))


def aggregate(results: List[SceneMetrics]) -> dict:
    """Mean over all entities of all scenes, in cm (None when no entity of that kind)."""
    def avg(vals):
        return math.fsum(vals) / len(vals) * CM if vals else None

    return {
        "hum_cd_cm": avg([v for r in results for v in r.human_cd]),
        "hum_v2v_cm": avg([v for r in results for v in r.human_v2v]),
        "obj_cd_cm": avg([v for r in results for v in r.object_cd]),
        "obj_v2v_cm": avg([v for r in results for v in r.object_v2v]),
        "scenes": len(results),
    }


@dataclass
class EvalReport:
    mode: str
    scenes: List[SceneMetrics]
    errors: List[dict] = field(default_factory=list)
    curves: List[InteractionCurve] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "toolkit_version": __version__,
            "mode": self.mode.upper(),
            "units": "cm",
            "config": self.config,
            "aggregate": aggregate(self.scenes),
            "scenes": [s.to_dict() for s in self.scenes],
            "curves": [c.to_dict() for c in self.curves],
            "errors": self.errors,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scene", "entity", "index", "cd_cm", "v2v_cm"])
        for s in self.scenes:
            for kind, cds, v2vs in (("human", s.human_cd, s.human_v2v),
                                    ("object", s.object_cd, s.object_v2v)):
                for i, (c, v) in enumerate(zip(cds, v2vs)):
                    w.writerow([s.name, kind, i, repr(c * CM), repr(v * CM)])
        return buf.getvalue()


def report_summary(report: EvalReport) -> Optional[str]:
    agg = aggregate(report.scenes)
    if not report.scenes:
        return None
    parts = [f"{k}={agg[k]:.4f}" for k in ("hum_cd_cm", "hum_v2v_cm", "obj_cd_cm", "obj_v2v_cm")
             if agg[k] is not None]
    return f"{report.mode.upper()} ({agg['scenes']} scenes): " + " ".join(parts)
