"""Geometry and evaluation toolkit for multi-human multi-object interaction scenes."""

__version__ = "0.1.0"

from .geometry import (CameraIntrinsics, GeometryError, Mesh, RigidTransform,  # noqa: E402
                       SimilarityTransform, apply_transform, chamfer_distance, project,
                       v2v_distance)
from .alignment import (AlignmentReport, IcpParams, IcpResult, align_multi_hoi,  # noqa: E402
                        align_single_hoi, average_quaternions, average_rotations,
                        average_translations, icp, procrustes)
from .masks import InstanceMask, load_mask  # noqa: E402
from .scene import BodyPart, InteractionAnnotation, ObjectInstance, Scene  # noqa: E402
from .patches import (DualPatch, PatchGrid, ShrinkRule, extract_dual_patches,  # noqa: E402
                      orientation_ray, select_main_patch, select_sub_patch, shrink_mask)
from .interaction import (EvalConfig, InteractionCurve, body_part_points,  # noqa: E402
                          consistency_loss, detect_interactions, enumerate_pairs,
                          multi_interaction_curve, object_object_curve,
                          single_interaction_curve)
from .losses import LossComponents, LossWeights, ObjectPoseTarget, total_loss  # noqa: E402
from .scene_io import load_mesh, load_scene, save_mesh, save_scene  # noqa: E402
from .synth import SynthConfig, generate, render_masks  # noqa: E402
