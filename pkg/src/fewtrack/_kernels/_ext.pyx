# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the geometry kernels in fewtrack._kernels._py.

Same signatures, same arithmetic order, so results agree with the numpy
backend to floating-point round-off (exactly, for the pure +-*/ paths).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport M_PI, cos, exp, sqrt

cnp.import_array()


cdef inline double _iou(double cx1, double cy1, double w1, double h1,
                        double cx2, double cy2, double w2, double h2) nogil:
    cdef double left = max(cx1 - 0.5 * w1, cx2 - 0.5 * w2)
    cdef double right = min(cx1 + 0.5 * w1, cx2 + 0.5 * w2)
    cdef double top = max(cy1 - 0.5 * h1, cy2 - 0.5 * h2)
    cdef double bottom = min(cy1 + 0.5 * h1, cy2 + 0.5 * h2)
    cdef double iw = right - left
    cdef double ih = bottom - top
    cdef double inter, union_
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union_ = w1 * h1 + w2 * h2 - inter
    return inter / union_


def iou_single(double cx1, double cy1, double w1, double h1,
               double cx2, double cy2, double w2, double h2):
    """Intersection-over-union of two center-format boxes."""
    return _iou(cx1, cy1, w1, h1, cx2, cy2, w2, h2)


def iou_matrix(boxes_a, boxes_b):
    """Pairwise IoU between two (M, 4) box arrays, returned as (Ma, Mb)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a = np.ascontiguousarray(boxes_a, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] b = np.ascontiguousarray(boxes_b, dtype=np.float64)
    cdef Py_ssize_t ma = a.shape[0], mb = b.shape[0], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((ma, mb), dtype=np.float64)
    for i in range(ma):
        for j in range(mb):
            out[i, j] = _iou(a[i, 0], a[i, 1], a[i, 2], a[i, 3],
                             b[j, 0], b[j, 1], b[j, 2], b[j, 3])
    return out


def nms_indices(boxes, scores, double threshold, Py_ssize_t max_keep):
    """Greedy non-maximum suppression; kept indices by descending score."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] b = np.ascontiguousarray(boxes, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef Py_ssize_t m = b.shape[0]
    if m == 0:
        return np.empty(0, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.argsort(-s, kind="stable").astype(np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] suppressed = np.zeros(m, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] keep = np.empty(m, dtype=np.int64)
    cdef Py_ssize_t n_keep = 0, oi, idx, j
    cdef double v
    for oi in range(m):
        idx = order[oi]
        if suppressed[idx]:
            continue
        keep[n_keep] = idx
        n_keep += 1
        if n_keep >= max_keep:
            break
        suppressed[idx] = 1
        for j in range(m):
            if suppressed[j]:
                continue
            v = _iou(b[idx, 0], b[idx, 1], b[idx, 2], b[idx, 3],
                     b[j, 0], b[j, 1], b[j, 2], b[j, 3])
            if v > threshold:
                suppressed[j] = 1
    return keep[:n_keep].copy()


def penalized_scores(raw_scores, boxes, prev_box, double penalty_k,
                     double window_influence, double window_radius):
    """Shape-change penalty plus cosine-window prior applied to raw scores."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] raw = np.ascontiguousarray(raw_scores, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] b = np.ascontiguousarray(boxes, dtype=np.float64)
    cdef double pcx = prev_box[0], pcy = prev_box[1], pw = prev_box[2], ph = prev_box[3]
    cdef Py_ssize_t m = b.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(m, dtype=np.float64)
    cdef double ratio_prev = pw / ph
    cdef double pad_prev = 0.5 * (pw + ph)
    cdef double scale_prev = sqrt((pw + pad_prev) * (ph + pad_prev))
    cdef double ratio, r_c, pad, scale, s_c, penalty, dx, dy, dist, u, window
    for i in range(m):
        ratio = b[i, 2] / b[i, 3]
        r_c = max(ratio / ratio_prev, ratio_prev / ratio)
        pad = 0.5 * (b[i, 2] + b[i, 3])
        scale = sqrt((b[i, 2] + pad) * (b[i, 3] + pad))
        s_c = max(scale / scale_prev, scale_prev / scale)
        penalty = exp(-penalty_k * (r_c * s_c - 1.0))
        dx = b[i, 0] - pcx
        dy = b[i, 1] - pcy
        dist = sqrt(dx * dx + dy * dy)
        u = min(dist / window_radius, 1.0)
        window = 0.5 * (1.0 + cos(M_PI * u))
        out[i] = (1.0 - window_influence) * penalty * raw[i] + window_influence * window
    return out


def fuse_box_arrays(boxes_rpn, boxes_rcnn, scores_rpn, scores_meta, double mu_loc):
    """Componentwise score-weighted combination of first- and second-stage boxes."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] br = np.ascontiguousarray(boxes_rpn, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bc = np.ascontiguousarray(boxes_rcnn, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sr = np.ascontiguousarray(scores_rpn, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sm = np.ascontiguousarray(scores_meta, dtype=np.float64)
    cdef Py_ssize_t m = br.shape[0], i, k
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((m, 4), dtype=np.float64)
    cdef double denom, w_rpn, w_rcnn
    for i in range(m):
        denom = sr[i] + mu_loc * sm[i]
        if denom <= 0.0:
            raise ValueError(
                "degenerate fusion weights: score_rpn + mu_loc * score_meta must be > 0")
        w_rpn = sr[i] / denom
        w_rcnn = mu_loc * sm[i] / denom
        for k in range(4):
            out[i, k] = w_rpn * br[i, k] + w_rcnn * bc[i, k]
    return out
