"""Optical-anchor localization and RIS codebook simulation toolkit."""

__version__ = "0.1.0"

from .channel import (
    ChannelParams,
    ChannelSample,
    OpticalAnchor,
    PdArray,
    PdElement,
    count_los_anchors,
    los_gain,
    measure,
    pyramid_array,
)
from .geometry import Box, Pose, Room, Vec3, angle_between, segment_occluded
from .localization import (
    LocalizationEstimate,
    SolverOptions,
    aoa_direction,
    beam_scan_localize,
    hybrid_rss_aoa,
    rss_trilaterate,
    select_top4,
)
from .protocol import (
    LatcOutcome,
    ServiceRequest,
    Timing,
    feedback_recalibrate,
    method_select,
    run_latc,
)
from .ris import (
    Codebook,
    CodebookEntry,
    CodebookGridSpec,
    PhaseProfile,
    RisPanel,
    ScatteringDiagram,
    beam_gain_at,
    codebook_build,
    codebook_select,
    diffusion_profile,
    hpbw,
    scattering_diagram,
    steer_profile,
    tolerated_error,
)
from .scenario import Scenario, build_scene, load_scenario
from .scene import Scene

__all__ = [
    "__version__",
    "Box",
    "ChannelParams",
    "ChannelSample",
    "Codebook",
    "CodebookEntry",
    "CodebookGridSpec",
    "LatcOutcome",
    "LocalizationEstimate",
    "OpticalAnchor",
    "PdArray",
    "PdElement",
    "PhaseProfile",
    "Pose",
    "RisPanel",
    "Room",
    "Scenario",
    "ScatteringDiagram",
    "Scene",
    "ServiceRequest",
    "SolverOptions",
    "Timing",
    "Vec3",
    "angle_between",
    "aoa_direction",
    "beam_gain_at",
    "beam_scan_localize",
    "build_scene",
    "codebook_build",
    "codebook_select",
    "count_los_anchors",
    "diffusion_profile",
    "feedback_recalibrate",
    "hpbw",
    "hybrid_rss_aoa",
    "load_scenario",
    "los_gain",
    "measure",
    "method_select",
    "pyramid_array",
    "rss_trilaterate",
    "run_latc",
    "scattering_diagram",
    "segment_occluded",
    "select_top4",
    "steer_profile",
    "tolerated_error",
]
