"""Core domain types and support-set memory.

Boxes are center-format (cx, cy, w, h). The support set is the labeled
memory the second-stage learners are fitted on: a weighted collection of
feature vectors with FIFO eviction over non-initial samples, per-step
exponential weight decay, and a pre-normalization weight floor that keeps
the first-frame positives alive indefinitely.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

LABEL_BACKGROUND = 0
LABEL_TARGET = 1


class TrackState(enum.Enum):
    """Per-frame confidence state of the tracker."""

    NORMAL = "normal"
    UNCERTAIN = "uncertain"
    NOT_FOUND = "not-found"
    DISTRACTOR_DETECTED = "distractor-detected"


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, center format."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box dimensions must be positive, got w={self.w} h={self.h}")
        for v in (self.cx, self.cy, self.w, self.h):
            if not math.isfinite(v):
                raise ValueError("box fields must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    @staticmethod
    def from_array(arr) -> "Box":
        cx, cy, w, h = (float(v) for v in arr)
        return Box(cx, cy, w, h)


@dataclass(frozen=True)
class Candidate:
    """One first-stage proposal: raw box, raw score, refined box, feature."""

    box: Box
    score_rpn: float
    box_refined: Box
    feature: np.ndarray

    def __post_init__(self):
        feat = np.asarray(self.feature, dtype=np.float64)
        if feat.ndim != 1:
            raise ValueError(f"candidate feature must be a vector, got shape {feat.shape}")
        if not np.all(np.isfinite(feat)):
            raise ValueError("candidate feature must be finite")
        object.__setattr__(self, "feature", feat)


@dataclass
class Sample:
    """Labeled, weighted feature vector held in the support set."""

    feature: np.ndarray
    label: int
    weight: float
    frame: int
    is_initial: bool = False

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if self.label not in (LABEL_BACKGROUND, LABEL_TARGET):
            raise ValueError(f"label must be 0 (background) or 1 (target), got {self.label}")
        if not self.weight > 0:
            raise ValueError(f"sample weight must be positive, got {self.weight}")


class SupportSet:
    """FIFO memory of weighted samples with decay bookkeeping.

    Weights are stored normalized (they sum to 1 after every decay or
    normalize call). Internally the set tracks the current scale of a
    freshly inserted unit weight so that relative weights follow
    (1 - rate)^age regardless of how often the set was renormalized.
    Initial samples are never evicted and their pre-normalization weight
    is floored at min_initial_weight on every decay call.
    """

    def __init__(self, capacity: int, min_initial_weight: float = 0.15):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        if not 0 < min_initial_weight < 1:
            raise ValueError("min_initial_weight must be in (0, 1)")
        self.capacity = capacity
        self.min_initial_weight = min_initial_weight
        self.samples: list[Sample] = []
        # scale of a weight inserted as 1.0, in currently stored units
        self._unit = 1.0
        # samples added since the last decay cycle are not decayed by it
        self._fresh: list[bool] = []

    def __len__(self) -> int:
        return len(self.samples)

    def num_initial(self) -> int:
        return sum(1 for s in self.samples if s.is_initial)

    def add(self, sample: Sample) -> None:
        """Insert a sample at unit age-0 weight, evicting the oldest
        non-initial sample if the set is full."""
        if len(self.samples) >= self.capacity:
            evict = next(
                (i for i, s in enumerate(self.samples) if not s.is_initial), None
            )
            if evict is None:
                raise ValueError("support set full of protected initial samples")
            del self.samples[evict]
            del self._fresh[evict]
        sample.weight = self._unit
        self.samples.append(sample)
        self._fresh.append(True)

    def decay_weights(self, rate: float) -> None:
        """Age the memory one step: decay, floor initial samples, renormalize.

        Non-initial samples inserted before this cycle are multiplied by
        (1 - rate); samples inserted since the previous cycle keep age-0
        weight. Initial samples are floored at min_initial_weight in
        pre-normalization units. All weights are then renormalized to sum 1.
        """
        if not 0 <= rate < 1:
            raise ValueError(f"decay rate must be in [0, 1), got {rate}")
        if not self.samples:
            raise ValueError("cannot decay an empty support set")
        floor = self.min_initial_weight * self._unit
        for i, s in enumerate(self.samples):
            if s.is_initial:
                if s.weight < floor:
                    s.weight = floor
            elif not self._fresh[i]:
                s.weight *= 1.0 - rate
            self._fresh[i] = False
        self.normalize()

    def normalize(self) -> None:
        """Rescale weights to sum to 1, keeping relative ages intact."""
        if not self.samples:
            raise ValueError("cannot normalize an empty support set")
        total = sum(s.weight for s in self.samples)
        for s in self.samples:
            s.weight /= total
        self._unit /= total

    def features(self) -> np.ndarray:
        return np.stack([s.feature for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.samples], dtype=np.float64)


def iou(box_a: Box, box_b: Box) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    return float(
        _kernels.iou_single(
            box_a.cx, box_a.cy, box_a.w, box_a.h, box_b.cx, box_b.cy, box_b.w, box_b.h
        )
    )


def nms(candidates: list[Candidate], threshold: float, max_keep: int) -> list[Candidate]:
    """Greedy non-maximum suppression over candidates by raw score.

    Returns at most max_keep candidates sorted by descending score_rpn,
    ties broken toward the earlier candidate. Any candidate overlapping a
    kept one with IoU strictly above threshold is suppressed.
    """
    if max_keep < 1:
        raise ValueError(f"max_keep must be >= 1, got {max_keep}")
    if not 0 <= threshold <= 1:
        raise ValueError(f"nms threshold must be in [0, 1], got {threshold}")
    if not candidates:
        return []
    boxes = np.stack([c.box.as_array() for c in candidates])
    scores = np.array([c.score_rpn for c in candidates], dtype=np.float64)
    keep = _kernels.nms_indices(boxes, scores, threshold, max_keep)
    return [candidates[i] for i in keep]


def design_matrix(support: SupportSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted design matrix and one-hot targets for the ridge learners.

    Row n of phi is weight_n * feature_n; row n of y is weight_n * onehot_n
    (column 0 background, column 1 target). The raw weights are returned
    separately because the SVM dual needs them unmixed as box constraints.
    """
    if len(support) == 0:
        raise ValueError("support set is empty")
    feats = support.features()
    labels = support.labels()
    w = support.weights()
    onehot = np.zeros((len(labels), 2), dtype=np.float64)
    onehot[np.arange(len(labels)), labels] = 1.0
    phi = w[:, None] * feats
    y = w[:, None] * onehot
    return phi, y, w
