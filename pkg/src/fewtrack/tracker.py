"""Online tracking loop over first-stage candidates.

Each step suppresses near-duplicate proposals, penalizes the raw scores
against the previous box, scores the survivors with the current few-shot
learner, fuses the two stages, and classifies the frame's confidence state.
Confident frames feed the top candidates back into the support set (the
best as a positive, the rest as negatives) and age the sample weights;
the learner itself is refreshed on a fixed schedule and immediately when a
distractor is detected.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import Box, Candidate, Sample, SupportSet, TrackState, iou, nms
from .fusion import FusionConfig, fuse_boxes, fuse_scores, penalize
from .learners import LearnerConfig, LearnerKind, LearnerState, fit_initial, predict, refresh


@dataclass(frozen=True)
class TrackerConfig:
    """Loop behavior: state thresholds, memory policy, refresh schedule."""

    learner: LearnerConfig = field(default_factory=LearnerConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    memory_capacity: int | None = None
    nms_threshold: float = 0.2
    max_candidates: int = 8
    top_k: int = 4
    init_samples: int = 24
    tau_not_found: float = 0.25
    tau_uncertain: float = 0.45
    distractor_ratio: float = 0.8
    decay_normal: float = 0.01
    decay_distractor: float = 0.02
    min_initial_weight: float = 0.15
    refresh_interval: int = 10
    init_aug_positives: int = 8
    aug_sigma_scale: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.memory_capacity is not None and self.memory_capacity < 1:
            raise ValueError("memory_capacity must be >= 1 when set")
        if not 0.0 <= self.nms_threshold <= 1.0:
            raise ValueError("nms_threshold must be in [0, 1]")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.top_k > self.max_candidates:
            raise ValueError("top_k must not exceed max_candidates")
        if self.init_samples < 1:
            raise ValueError("init_samples must be >= 1")
        if not 0.0 <= self.tau_not_found <= self.tau_uncertain <= 1.0:
            raise ValueError("need 0 <= tau_not_found <= tau_uncertain <= 1")
        if not 0.0 < self.distractor_ratio <= 1.0:
            raise ValueError("distractor_ratio must be in (0, 1]")
        for rate in (self.decay_normal, self.decay_distractor):
            if not 0.0 <= rate < 1.0:
                raise ValueError("decay rates must be in [0, 1)")
        if not 0.0 < self.min_initial_weight < 1.0:
            raise ValueError("min_initial_weight must be in (0, 1)")
        if self.refresh_interval < 1:
            raise ValueError("refresh_interval must be >= 1")
        if self.init_aug_positives < 0:
            raise ValueError("init_aug_positives must be >= 0")
        if self.aug_sigma_scale < 0:
            raise ValueError("aug_sigma_scale must be >= 0")

    def resolved_memory_capacity(self) -> int:
        if self.memory_capacity is not None:
            return self.memory_capacity
        return 1000 if self.learner.kind == LearnerKind.RR_PRIM_ITR else 60


@dataclass
class TrackerSession:
    """Mutable tracking state carried between frames."""

    config: TrackerConfig
    support: SupportSet
    learner: LearnerState
    prev_box: Box
    frame_index: int
    last_state: TrackState


@dataclass(frozen=True)
class FrameDecision:
    """Outcome of one step: pick, fused quantities, confidence state.

    chosen is None only when the frame had no candidates. fused_scores
    aligns with the post-suppression candidate list the step worked on.
    """

    chosen: Candidate | None
    fused_score: float
    fused_box: Box
    state: TrackState
    fused_scores: np.ndarray


def classify_state(fused_scores, cfg: TrackerConfig) -> TrackState:
    """Confidence state from the fused score vector.

    Below tau_not_found: lost. Two or more scores within distractor_ratio
    of the max: ambiguous pick. Below tau_uncertain: low confidence, keep
    the pick but do not learn from it.
    """
    scores = np.asarray(fused_scores, dtype=np.float64)
    if scores.size == 0:
        return TrackState.NOT_FOUND
    top = float(np.max(scores))
    if top < cfg.tau_not_found:
        return TrackState.NOT_FOUND
    if int(np.sum(scores >= cfg.distractor_ratio * top)) >= 2:
        return TrackState.DISTRACTOR_DETECTED
    if top < cfg.tau_uncertain:
        return TrackState.UNCERTAIN
    return TrackState.NORMAL


def init_session(
    config: TrackerConfig,
    candidates: list[Candidate],
    gt_box: Box,
    gt_feature: np.ndarray,
) -> TrackerSession:
    """First-frame setup: label candidates against the ground truth, seed
    the support set, and run the learner's initial fit.

    The post-suppression candidate with highest IoU to gt_box becomes a
    positive; the rest become negatives. The ground-truth feature itself and
    init_aug_positives jittered copies are appended as protected initial
    positives. When no candidate overlaps the ground truth the support set
    is initialized from the ground truth alone.
    """
    support = SupportSet(config.resolved_memory_capacity(), config.min_initial_weight)
    kept = nms(candidates, config.nms_threshold, max(len(candidates), 1))
    gt_feature = np.asarray(gt_feature, dtype=np.float64)

    if kept:
        overlaps = [iou(c.box, gt_box) for c in kept]
        best = int(np.argmax(overlaps))
        if overlaps[best] > 0.0:
            support.add(
                Sample(kept[best].feature, 1, 1.0, frame=1, is_initial=True)
            )
            rest = [c for i, c in enumerate(kept) if i != best]
        else:
            warnings.warn("no candidate overlaps the ground truth; ground-truth-only init")
            rest = []
        for c in rest:
            support.add(Sample(c.feature, 0, 1.0, frame=1, is_initial=False))
    support.add(Sample(gt_feature.copy(), 1, 1.0, frame=1, is_initial=True))

    rng = np.random.default_rng(config.seed)
    sigma = config.aug_sigma_scale * float(np.linalg.norm(gt_feature))
    for _ in range(config.init_aug_positives):
        jittered = gt_feature + sigma * rng.standard_normal(gt_feature.shape[0])
        support.add(Sample(jittered, 1, 1.0, frame=1, is_initial=True))
    support.normalize()

    learner = fit_initial(config.learner, support, gt_feature)
    return TrackerSession(
        config=config,
        support=support,
        learner=learner,
        prev_box=gt_box,
        frame_index=1,
        last_state=TrackState.NORMAL,
    )


def step(session: TrackerSession, candidates: list[Candidate]) -> FrameDecision:
    """Process one frame and advance the session."""
    cfg = session.config
    current = session.frame_index + 1

    if not candidates:
        decision = FrameDecision(
            chosen=None,
            fused_score=0.0,
            fused_box=session.prev_box,
            state=TrackState.NOT_FOUND,
            fused_scores=np.empty(0, dtype=np.float64),
        )
        if current % cfg.refresh_interval == 0:
            session.learner = refresh(session.learner, session.support)
        session.frame_index = current
        session.last_state = decision.state
        return decision

    kept = nms(candidates, cfg.nms_threshold, cfg.max_candidates)
    raw = np.array([c.score_rpn for c in kept], dtype=np.float64)
    boxes = [c.box for c in kept]
    s_rpn = penalize(raw, boxes, session.prev_box, cfg.fusion)
    feats = np.stack([c.feature for c in kept])
    s_meta = predict(session.learner, feats)
    fused = fuse_scores(s_rpn, s_meta, cfg.fusion.mu_cls)
    fused_boxes = [
        fuse_boxes(kept[i].box, kept[i].box_refined, float(s_rpn[i]), float(s_meta[i]), cfg.fusion.mu_loc)
        for i in range(len(kept))
    ]

    state = classify_state(fused, cfg)
    order = np.argsort(-fused, kind="stable")
    best = int(order[0])

    if state not in (TrackState.UNCERTAIN, TrackState.NOT_FOUND):
        for rank, idx in enumerate(order[: cfg.top_k]):
            label = 1 if rank == 0 else 0
            session.support.add(
                Sample(kept[int(idx)].feature, label, 1.0, frame=current, is_initial=False)
            )
        rate = (
            cfg.decay_distractor
            if state == TrackState.DISTRACTOR_DETECTED
            else cfg.decay_normal
        )
        session.support.decay_weights(rate)

    if current % cfg.refresh_interval == 0 or state == TrackState.DISTRACTOR_DETECTED:
        session.learner = refresh(session.learner, session.support)

    session.prev_box = fused_boxes[best]
    session.frame_index = current
    session.last_state = state
    return FrameDecision(
        chosen=kept[best],
        fused_score=float(fused[best]),
        fused_box=fused_boxes[best],
        state=state,
        fused_scores=fused,
    )
