"""Fusing first-stage proposal scores and boxes with second-stage predictions.

Raw proposal scores are first re-weighted by a shape-change penalty and a
cosine window centered on the previous box. Fused scores are a convex mix of
the penalized first-stage score and the learner's foreground probability;
fused boxes mix the raw and refined boxes with score-proportional weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import Box


@dataclass(frozen=True)
class FusionConfig:
    """Stage-fusion weights and spatial-prior shape."""

    mu_cls: float = 0.5
    mu_loc: float = 1.0
    penalty_k: float = 0.04
    window_influence: float = 0.3
    window_radius: float = 127.5

    def __post_init__(self):
        if not 0.0 <= self.mu_cls <= 1.0:
            raise ValueError(f"mu_cls must be in [0, 1], got {self.mu_cls}")
        if self.mu_loc < 0.0:
            raise ValueError(f"mu_loc must be >= 0, got {self.mu_loc}")
        if self.penalty_k < 0.0:
            raise ValueError(f"penalty_k must be >= 0, got {self.penalty_k}")
        if not 0.0 <= self.window_influence <= 1.0:
            raise ValueError(f"window_influence must be in [0, 1], got {self.window_influence}")
        if self.window_radius <= 0.0:
            raise ValueError(f"window_radius must be > 0, got {self.window_radius}")


def penalize(scores, boxes: list[Box], prev_box: Box, cfg: FusionConfig) -> np.ndarray:
    """Apply the shape-change penalty and cosine window to raw scores.

    penalty = exp(-k ((r_c s_c) - 1)) from aspect-ratio and padded-scale
    change against prev_box; output is
    (1 - wi) penalty score + wi window(center distance / radius).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.shape[0] != len(boxes):
        raise ValueError("scores and boxes must have matching length")
    if len(boxes) == 0:
        return np.empty(0, dtype=np.float64)
    arr = np.stack([b.as_array() for b in boxes])
    return _kernels.penalized_scores(
        scores,
        arr,
        prev_box.as_array(),
        cfg.penalty_k,
        cfg.window_influence,
        cfg.window_radius,
    )


def fuse_scores(scores_rpn, scores_meta, mu_cls: float) -> np.ndarray:
    """Convex mix (1 - mu_cls) s_rpn + mu_cls s_meta."""
    if not 0.0 <= mu_cls <= 1.0:
        raise ValueError(f"mu_cls must be in [0, 1], got {mu_cls}")
    sr = np.asarray(scores_rpn, dtype=np.float64)
    sm = np.asarray(scores_meta, dtype=np.float64)
    if sr.shape != sm.shape:
        raise ValueError("score vectors must have matching shape")
    return (1.0 - mu_cls) * sr + mu_cls * sm


def fuse_boxes(
    box_rpn: Box, box_rcnn: Box, score_rpn: float, score_meta: float, mu_loc: float
) -> Box:
    """Score-weighted componentwise box mix.

    Weights are score_rpn and mu_loc * score_meta, normalized. Their sum must
    be positive; mu_loc = 0 returns the first-stage box exactly.
    """
    if mu_loc < 0.0:
        raise ValueError(f"mu_loc must be >= 0, got {mu_loc}")
    fused = _kernels.fuse_box_arrays(
        box_rpn.as_array()[None, :],
        box_rcnn.as_array()[None, :],
        np.array([score_rpn], dtype=np.float64),
        np.array([score_meta], dtype=np.float64),
        mu_loc,
    )
    return Box.from_array(fused[0])
