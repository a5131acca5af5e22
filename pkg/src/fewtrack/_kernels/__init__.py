"""Backend selection for the per-frame geometry kernels.

The compiled extension is preferred when importable; the pure-numpy module
is the fallback. Setting FEWTRACK_PURE_PYTHON=1 forces the fallback, which
is mainly useful for the backend benchmark and parity tests.
"""

import os

from . import _py

if os.environ.get("FEWTRACK_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _py
    BACKEND = "python"
else:
    try:
        from . import _ext as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _py
        BACKEND = "python"

iou_single = _impl.iou_single
iou_matrix = _impl.iou_matrix
nms_indices = _impl.nms_indices
penalized_scores = _impl.penalized_scores
fuse_box_arrays = _impl.fuse_box_arrays

__all__ = [
    "BACKEND",
    "iou_single",
    "iou_matrix",
    "nms_indices",
    "penalized_scores",
    "fuse_box_arrays",
]
