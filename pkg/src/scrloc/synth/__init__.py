from scrloc.synth.camera import CameraIntrinsics, project, back_project
from scrloc.synth.world import WorldParams, TrueWorldModel
from scrloc.synth.scene import (
    Degradation,
    Envelope,
    ScrewSpec,
    ConfuserSpec,
    SceneSpec,
    ScrewTruth,
    render_scene,
    render_patch,
    random_scene_spec,
    random_screw_spec,
)
from scrloc.synth.jig import JigCapture, simulate_jig_capture

__all__ = [
    "CameraIntrinsics",
    "project",
    "back_project",
    "WorldParams",
    "TrueWorldModel",
    "Degradation",
    "Envelope",
    "ScrewSpec",
    "ConfuserSpec",
    "SceneSpec",
    "ScrewTruth",
    "render_scene",
    "render_patch",
    "random_scene_spec",
    "random_screw_spec",
    "JigCapture",
    "simulate_jig_capture",
]
