"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the pure-Python
module is used. Setting ``MODESWITCH_PURE=1`` forces the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MODESWITCH_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

wrap_angle = _impl.wrap_angle
vehicle_step = _impl.vehicle_step
obb_overlap = _impl.obb_overlap
segment_hits_rect = _impl.segment_hits_rect
segment_hits_rects = _impl.segment_hits_rects
project_polyline = _impl.project_polyline
project_polyline_batch = _impl.project_polyline_batch
branch_forward = _impl.branch_forward

__all__ = [
    "BACKEND",
    "wrap_angle",
    "vehicle_step",
    "obb_overlap",
    "segment_hits_rect",
    "segment_hits_rects",
    "project_polyline",
    "project_polyline_batch",
    "branch_forward",
]
