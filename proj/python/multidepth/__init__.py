"""Multi-view consistent depth refinement.

Depth maps are float32 ``(H, W)`` arrays in meters where 0 marks an invalid
pixel. Images are float32 ``(C, H, W)`` arrays in [0, 1]. Intrinsics are
dicts with ``fx``, ``fy``, ``cx``, ``cy``.
"""

from ._multidepth import (
    Error,
    aggregate,
    default_config,
    delta_threshold,
    evaluate,
    f_score,
    generate_scene,
    load_depth,
    mean_of_k_medians,
    pixel_shuffle,
    pixel_unshuffle,
    refine,
    save_depth,
    si_log,
    unproject,
)

__all__ = [
    "Error",
    "aggregate",
    "default_config",
    "delta_threshold",
    "evaluate",
    "f_score",
    "generate_scene",
    "load_depth",
    "mean_of_k_medians",
    "pixel_shuffle",
    "pixel_unshuffle",
    "refine",
    "save_depth",
    "si_log",
    "unproject",
]
