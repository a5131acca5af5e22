"""Pure-numpy implementations of the per-frame geometry kernels.

This module is the reference backend. fewtrack._kernels._ext provides a
compiled twin with identical signatures and semantics; the package falls
back to this module when the extension is unavailable.

Boxes are (cx, cy, w, h) float64 rows with w > 0 and h > 0.
"""

import numpy as np


def iou_single(cx1, cy1, w1, h1, cx2, cy2, w2, h2):
    """Intersection-over-union of two center-format boxes."""
    left = max(cx1 - 0.5 * w1, cx2 - 0.5 * w2)
    right = min(cx1 + 0.5 * w1, cx2 + 0.5 * w2)
    top = max(cy1 - 0.5 * h1, cy2 - 0.5 * h2)
    bottom = min(cy1 + 0.5 * h1, cy2 + 0.5 * h2)
    iw = right - left
    ih = bottom - top
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = w1 * h1 + w2 * h2 - inter
    return inter / union


def iou_matrix(boxes_a, boxes_b):
    """Pairwise IoU between two (M, 4) box arrays, returned as (Ma, Mb)."""
    a = np.asarray(boxes_a, dtype=np.float64)
    b = np.asarray(boxes_b, dtype=np.float64)
    ax1 = a[:, 0] - 0.5 * a[:, 2]
    ax2 = a[:, 0] + 0.5 * a[:, 2]
    ay1 = a[:, 1] - 0.5 * a[:, 3]
    ay2 = a[:, 1] + 0.5 * a[:, 3]
    bx1 = b[:, 0] - 0.5 * b[:, 2]
    bx2 = b[:, 0] + 0.5 * b[:, 2]
    by1 = b[:, 1] - 0.5 * b[:, 3]
    by2 = b[:, 1] + 0.5 * b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(ax1[:, None], bx1[None, :])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(ay1[:, None], by1[None, :])
    iw = np.maximum(iw, 0.0)
    ih = np.maximum(ih, 0.0)
    inter = iw * ih
    area_a = a[:, 2] * a[:, 3]
    area_b = b[:, 2] * b[:, 3]
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=inter > 0.0)
    return out


def nms_indices(boxes, scores, threshold, max_keep):
    """Greedy non-maximum suppression.

    Returns indices of kept boxes sorted by descending score. Ties keep the
    earlier candidate first. A box is suppressed when its IoU with an
    already-kept box exceeds threshold (strictly).
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    m = boxes.shape[0]
    if m == 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(-scores, kind="stable")
    suppressed = np.zeros(m, dtype=bool)
    keep = []
    for idx in order:
        if suppressed[idx]:
            continue
        keep.append(idx)
        if len(keep) >= max_keep:
            break
        ious = iou_matrix(boxes[idx : idx + 1], boxes)[0]
        suppressed |= ious > threshold
        suppressed[idx] = True
    return np.asarray(keep, dtype=np.int64)


def penalized_scores(raw_scores, boxes, prev_box, penalty_k, window_influence, window_radius):
    """Shape-change penalty plus cosine-window prior applied to raw scores.

    The penalty compares each candidate's aspect ratio and padded scale to
    the previous box; the window term decays with center distance and hits
    zero at window_radius.
    """
    raw = np.asarray(raw_scores, dtype=np.float64)
    b = np.asarray(boxes, dtype=np.float64)
    pcx, pcy, pw, ph = (float(v) for v in prev_box)

    ratio = b[:, 2] / b[:, 3]
    ratio_prev = pw / ph
    r_c = np.maximum(ratio / ratio_prev, ratio_prev / ratio)

    pad = 0.5 * (b[:, 2] + b[:, 3])
    scale = np.sqrt((b[:, 2] + pad) * (b[:, 3] + pad))
    pad_prev = 0.5 * (pw + ph)
    scale_prev = np.sqrt((pw + pad_prev) * (ph + pad_prev))
    s_c = np.maximum(scale / scale_prev, scale_prev / scale)

    penalty = np.exp(-penalty_k * (r_c * s_c - 1.0))

    dx = b[:, 0] - pcx
    dy = b[:, 1] - pcy
    dist = np.sqrt(dx * dx + dy * dy)
    u = np.minimum(dist / window_radius, 1.0)
    window = 0.5 * (1.0 + np.cos(np.pi * u))

    return (1.0 - window_influence) * penalty * raw + window_influence * window


def fuse_box_arrays(boxes_rpn, boxes_rcnn, scores_rpn, scores_meta, mu_loc):
    """Componentwise score-weighted combination of first- and second-stage boxes."""
    br = np.asarray(boxes_rpn, dtype=np.float64)
    bc = np.asarray(boxes_rcnn, dtype=np.float64)
    sr = np.asarray(scores_rpn, dtype=np.float64)
    sm = np.asarray(scores_meta, dtype=np.float64)
    denom = sr + mu_loc * sm
    if np.any(denom <= 0.0):
        raise ValueError("degenerate fusion weights: score_rpn + mu_loc * score_meta must be > 0")
    w_rpn = (sr / denom)[:, None]
    w_rcnn = (mu_loc * sm / denom)[:, None]
    return w_rpn * br + w_rcnn * bc
