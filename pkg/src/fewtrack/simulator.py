"""Synthetic first-stage proposal generator and run evaluation.

The feature model is a drifting target mean near the unit sphere, a
configurable number of distractor means random-walking at a bounded
separation from it, and isotropic background features. Raw proposal scores
start from the cosine similarity of each candidate feature to the frame-1
target mean, mapped to [0, 1]; the generator then enforces the first-stage
ranking contract: while the target is visible, every other candidate is
capped strictly below the target's score, except that with probability
rpn_confusion per frame the highest-scoring distractor is boosted above the
target instead. Confusion is therefore the exact probability the first
stage misranks, which is the failure mode the second stage exists to fix.
Refined boxes move the target candidate's box a refine_quality fraction
toward the ground truth.

Everything is driven by one generator seeded from params.seed, so a given
params value reproduces the sequence exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Box, Candidate, TrackState, iou
from .tracker import FrameDecision

# spatial behavior constants: box sizes, walk steps, distractor separation
_SIZE_MIN, _SIZE_MAX = 32.0, 88.0
_CENTER_STEP = 2.0
_DISTRACTOR_STEP = 3.0
_SEPARATION_MIN, _SEPARATION_MAX = 0.45, 0.85
# emitted feature norm; embedding-like scale rather than unit vectors
_FEATURE_SCALE = 4.0
# per-frame chance a distractor proposal track dies and respawns elsewhere
_RESPAWN_PROB = 0.02
_BOX_DIST_MIN, _BOX_DIST_MAX = 55.0, 140.0
# score-ranking contract: margin below the target for unconfused candidates,
# boost above it for the confused distractor
_CAP_GAP_LO, _CAP_GAP_HI = 0.20, 0.60
_BOOST_LO, _BOOST_HI = 0.10, 0.40


@dataclass(frozen=True)
class SimParams:
    """Sequence shape and difficulty knobs.

    drift_sigma is the expected per-frame step norm of the target mean;
    None resolves to 0.02 * sqrt(d). feature_noise is the expected norm of
    the per-candidate perturbation around its class mean, on the same
    unit-norm scale as the means themselves. distractor_offset is the
    initial feature-space separation between target and distractor means.
    occlusion_start > 0 removes the target candidate for occlusion_length
    frames starting there. seed names the random stream; equal params give
    byte-identical sequences.
    """

    seed: int = 0
    d: int = 64
    num_frames: int = 200
    candidates_init: int = 24
    candidates_step: int = 16
    num_distractors: int = 2
    feature_noise: float = 0.1
    drift_sigma: float | None = None
    distractor_offset: float = 0.5
    refine_quality: float = 0.7
    rpn_confusion: float = 0.3
    arena: float = 255.0
    occlusion_start: int = 0
    occlusion_length: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be >= 2")
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        if self.candidates_step < self.num_distractors + 2:
            raise ValueError("candidates_step must fit target, distractors, and background")
        if self.candidates_init < self.candidates_step:
            raise ValueError("candidates_init must be >= candidates_step")
        if self.num_distractors < 0:
            raise ValueError("num_distractors must be >= 0")
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be >= 0")
        if self.drift_sigma is not None and self.drift_sigma < 0:
            raise ValueError("drift_sigma must be >= 0")
        if self.distractor_offset <= 0:
            raise ValueError("distractor_offset must be > 0")
        if not 0.0 <= self.refine_quality <= 1.0:
            raise ValueError("refine_quality must be in [0, 1]")
        if not 0.0 <= self.rpn_confusion <= 1.0:
            raise ValueError("rpn_confusion must be in [0, 1]")
        if self.arena < 4 * _SIZE_MAX / 3:
            raise ValueError("arena too small for the box size range")
        if self.occlusion_start < 0 or self.occlusion_length < 0:
            raise ValueError("occlusion fields must be >= 0")
        if self.occlusion_start == 1:
            raise ValueError("occlusion cannot start at the init frame")

    def resolved_drift_sigma(self) -> float:
        if self.drift_sigma is not None:
            return self.drift_sigma
        return 0.02 * math.sqrt(self.d)


@dataclass(frozen=True)
class SimFrame:
    """One simulated frame; gt_candidate_index is -1 when the target has no
    candidate (occlusion)."""

    frame: int
    candidates: list[Candidate]
    gt_box: Box
    gt_candidate_index: int


@dataclass(frozen=True)
class RunMetrics:
    """Evaluation summary of one tracked sequence."""

    frames: int
    selection_accuracy: float
    mean_iou: float
    drift_count: int
    mean_ms: float | None = None


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _clip_center(c: np.ndarray, half: float, arena: float) -> np.ndarray:
    return np.clip(c, half, arena - half)


def generate_sequence(params: SimParams) -> list[SimFrame]:
    """Simulate num_frames frames of proposals under params.seed."""
    rng = np.random.default_rng(params.seed)
    d = params.d
    drift = params.resolved_drift_sigma() / math.sqrt(d)
    # per-coordinate noise scale so the perturbation norm is feature_noise
    noise = params.feature_noise / math.sqrt(d)

    target_mean = _unit(rng.standard_normal(d))
    template = target_mean.copy()

    center = np.array([params.arena / 2.0, params.arena / 2.0])
    w = rng.uniform(48.0, 72.0)
    h = w * rng.uniform(0.8, 1.25)
    size = np.array([w, h])

    def spawn_distractor_mean():
        direction = _unit(rng.standard_normal(d))
        return _unit(target_mean + params.distractor_offset * direction)

    def spawn_distractor_box():
        angle = rng.uniform(0.0, 2.0 * math.pi)
        radius = rng.uniform(60.0, 110.0)
        c = center + radius * np.array([math.cos(angle), math.sin(angle)])
        return _clip_center(c, _SIZE_MAX / 2.0, params.arena), size * rng.uniform(0.85, 1.2, size=2)

    distractor_means = []
    dist_centers = []
    dist_sizes = []
    for _ in range(params.num_distractors):
        distractor_means.append(spawn_distractor_mean())
        c, s = spawn_distractor_box()
        dist_centers.append(c)
        dist_sizes.append(s)

    def respawn_distractors():
        # a proposal track dies and a fresh one appears elsewhere
        for j in range(params.num_distractors):
            if rng.random() < _RESPAWN_PROB:
                distractor_means[j] = spawn_distractor_mean()
                c, s = spawn_distractor_box()
                dist_centers[j] = c
                dist_sizes[j] = s

    def walk_features():
        nonlocal target_mean
        target_mean = _unit(target_mean + drift * rng.standard_normal(d))
        for j in range(params.num_distractors):
            m = _unit(distractor_means[j] + drift * rng.standard_normal(d))
            gap = m - target_mean
            sep = float(np.linalg.norm(gap))
            if sep < _SEPARATION_MIN:
                m = _unit(target_mean + _SEPARATION_MIN * _unit(gap if sep > 0 else rng.standard_normal(d)))
            elif sep > _SEPARATION_MAX:
                m = _unit(target_mean + _SEPARATION_MAX * gap / sep)
            distractor_means[j] = m

    def walk_boxes():
        nonlocal center, size
        center = _clip_center(
            center + rng.normal(0.0, _CENTER_STEP, size=2), max(size) / 2.0, params.arena
        )
        size = np.clip(size * np.exp(rng.normal(0.0, 0.01, size=2)), _SIZE_MIN, _SIZE_MAX)
        for j in range(params.num_distractors):
            c = dist_centers[j] + rng.normal(0.0, _DISTRACTOR_STEP, size=2)
            c = c + 0.05 * (center - c)
            gap = c - center
            dist = float(np.linalg.norm(gap))
            if dist < _BOX_DIST_MIN:
                c = center + _BOX_DIST_MIN * (gap / dist if dist > 0 else np.array([1.0, 0.0]))
            elif dist > _BOX_DIST_MAX:
                c = center + _BOX_DIST_MAX * gap / dist
            dist_centers[j] = _clip_center(c, max(dist_sizes[j]) / 2.0, params.arena)
            dist_sizes[j] = np.clip(
                dist_sizes[j] * np.exp(rng.normal(0.0, 0.01, size=2)), _SIZE_MIN, _SIZE_MAX
            )

    def jitter_box(c: np.ndarray, s: np.ndarray) -> Box:
        jc = c + rng.normal(0.0, 2.0, size=2)
        js = np.clip(s * np.exp(rng.normal(0.0, 0.03, size=2)), _SIZE_MIN * 0.8, _SIZE_MAX * 1.2)
        jc = _clip_center(jc, 1.0, params.arena)
        return Box(float(jc[0]), float(jc[1]), float(js[0]), float(js[1]))

    def lerp_box(a: Box, b: Box, t: float) -> Box:
        return Box(
            (1.0 - t) * a.cx + t * b.cx,
            (1.0 - t) * a.cy + t * b.cy,
            (1.0 - t) * a.w + t * b.w,
            (1.0 - t) * a.h + t * b.h,
        )

    frames: list[SimFrame] = []
    for k in range(1, params.num_frames + 1):
        if k > 1:
            respawn_distractors()
            walk_features()
            walk_boxes()
        gt_box = Box(float(center[0]), float(center[1]), float(size[0]), float(size[1]))
        occluded = (
            params.occlusion_start > 0
            and params.occlusion_start <= k < params.occlusion_start + params.occlusion_length
        )
        count = params.candidates_init if k == 1 else params.candidates_step

        entries = []  # (kind, feature, box, refined)
        if not occluded:
            box = jitter_box(center, size)
            feature = _FEATURE_SCALE * _unit(target_mean + noise * rng.standard_normal(d))
            refined = lerp_box(box, gt_box, params.refine_quality)
            entries.append(("target", feature, box, refined))
        for j in range(params.num_distractors):
            box = jitter_box(dist_centers[j], dist_sizes[j])
            feature = _FEATURE_SCALE * _unit(distractor_means[j] + noise * rng.standard_normal(d))
            refined = jitter_box(
                np.array([box.cx, box.cy]), np.array([box.w, box.h])
            )
            entries.append(("distractor", feature, box, refined))
        while len(entries) < count:
            s = np.array([rng.uniform(_SIZE_MIN, _SIZE_MAX), rng.uniform(_SIZE_MIN, _SIZE_MAX)])
            c = np.array(
                [
                    rng.uniform(s[0] / 2.0, params.arena - s[0] / 2.0),
                    rng.uniform(s[1] / 2.0, params.arena - s[1] / 2.0),
                ]
            )
            box = Box(float(c[0]), float(c[1]), float(s[0]), float(s[1]))
            feature = _FEATURE_SCALE * _unit(rng.standard_normal(d))
            entries.append(("background", feature, box, jitter_box(c, s)))

        scores = np.empty(len(entries))
        for i, (_, feature, _, _) in enumerate(entries):
            cos = float(feature @ template) / (float(np.linalg.norm(feature)) or 1.0)
            scores[i] = float(np.clip(0.5 * (cos + 1.0), 0.0, 1.0))
        kinds = [e[0] for e in entries]
        if not occluded:
            tgt = kinds.index("target")
            t_score = scores[tgt]
            # ranking contract: cap everything else strictly below the target
            for i in range(len(entries)):
                if i != tgt:
                    gap = rng.uniform(_CAP_GAP_LO, _CAP_GAP_HI)
                    scores[i] = max(0.0, min(scores[i], t_score - gap))
            dis = [i for i, kind in enumerate(kinds) if kind == "distractor"]
            if k > 1 and dis and rng.random() < params.rpn_confusion:
                top = max(dis, key=lambda i: scores[i])
                scores[top] = min(1.0, t_score + rng.uniform(_BOOST_LO, _BOOST_HI))

        perm = rng.permutation(len(entries))
        candidates = []
        gt_index = -1
        for pos, i in enumerate(perm):
            kind, feature, box, refined = entries[i]
            if kind == "target":
                gt_index = pos
            candidates.append(
                Candidate(box=box, score_rpn=float(np.clip(scores[i], 0.0, 1.0)), box_refined=refined, feature=feature)
            )
        frames.append(
            SimFrame(frame=k, candidates=candidates, gt_box=gt_box, gt_candidate_index=gt_index)
        )
    return frames


def chosen_index(frame: SimFrame, decision: FrameDecision) -> int:
    """Index of the decision's candidate in the frame's original list, -1
    when the frame produced no pick."""
    if decision.chosen is None:
        return -1
    for i, c in enumerate(frame.candidates):
        if c is decision.chosen:
            return i
    raise ValueError(f"decision candidate not found in frame {frame.frame}")


def evaluate_run(
    frames: list[SimFrame],
    decisions: list[FrameDecision],
    elapsed_ms: list[float] | None = None,
) -> RunMetrics:
    """Score a tracked run: selection accuracy, IoU on correct frames, and
    drift events (first frames of maximal runs of >= 5 consecutive misses)."""
    if len(frames) != len(decisions):
        raise ValueError("frames and decisions must have equal length")
    if elapsed_ms is not None and len(elapsed_ms) != len(decisions):
        raise ValueError("elapsed_ms must match decisions length")
    if not frames:
        raise ValueError("nothing to evaluate")
    correct = []
    ious = []
    for frame, decision in zip(frames, decisions):
        ok = chosen_index(frame, decision) == frame.gt_candidate_index
        correct.append(ok)
        if ok:
            ious.append(iou(decision.fused_box, frame.gt_box))
    drift_count = 0
    run = 0
    for ok in correct:
        if ok:
            run = 0
        else:
            run += 1
            if run == 5:
                drift_count += 1
    return RunMetrics(
        frames=len(frames),
        selection_accuracy=float(np.mean(correct)),
        mean_iou=float(np.mean(ious)) if ious else 0.0,
        drift_count=drift_count,
        mean_ms=float(np.mean(elapsed_ms)) if elapsed_ms else None,
    )
