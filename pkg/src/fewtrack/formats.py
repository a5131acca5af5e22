"""File formats: sequences, support sets, session snapshots, metrics tables.

Sequence and support files are line-delimited JSON with a self-describing
header record; floats survive a write/read cycle exactly (shortest-repr
serialization), so a reloaded snapshot replays bit-identically. All readers
reject unknown format versions and report malformed input by line number.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from typing import Any

import numpy as np

from .core import Box, Candidate, Sample, SupportSet, TrackState
from .fusion import FusionConfig
from .learners import LearnerConfig, LearnerKind, LearnerState
from .simulator import SimFrame, SimParams
from .tracker import TrackerConfig, TrackerSession

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised for unreadable or wrong-version files."""


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _parse_line(text: str, path: str, lineno: int) -> dict:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{lineno}: malformed record: {exc}") from None
    if not isinstance(record, dict):
        raise FormatError(f"{path}:{lineno}: expected an object record")
    return record


def _check_header(record: dict, kind: str, path: str) -> None:
    version = record.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}:1: unsupported format_version {version!r}")
    if record.get("kind") != kind:
        raise FormatError(f"{path}:1: expected a {kind} file, got {record.get('kind')!r}")


def _box_list(box: Box) -> list[float]:
    return [box.cx, box.cy, box.w, box.h]


def _box_from(values, path: str, lineno: int) -> Box:
    try:
        return Box.from_array(values)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}:{lineno}: bad box: {exc}") from None


# ---------------------------------------------------------------- sequences


def write_sequence(path: str, params: SimParams, frames: list[SimFrame]) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "sequence",
        "d": params.d,
        "num_frames": len(frames),
        "seed": params.seed,
        "params": dataclasses.asdict(params),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dumps(header) + "\n")
        for frame in frames:
            record = {
                "frame": frame.frame,
                "gt_box": _box_list(frame.gt_box),
                "gt_index": frame.gt_candidate_index,
                "candidates": [
                    {
                        "box": _box_list(c.box),
                        "score_rpn": c.score_rpn,
                        "box_refined": _box_list(c.box_refined),
                        "feature": c.feature.tolist(),
                    }
                    for c in frame.candidates
                ],
            }
            fh.write(_dumps(record) + "\n")


def read_sequence(path: str) -> tuple[dict, list[SimFrame]]:
    """Returns (header, frames). Raises FormatError on version or shape
    problems, naming the offending line."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}:1: empty file")
    header = _parse_line(lines[0], path, 1)
    _check_header(header, "sequence", path)
    d = header.get("d")
    frames = []
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        record = _parse_line(text, path, lineno)
        try:
            candidates = []
            for c in record["candidates"]:
                feature = np.asarray(c["feature"], dtype=np.float64)
                if feature.shape != (d,):
                    raise FormatError(
                        f"{path}:{lineno}: feature length {feature.shape} != d={d}"
                    )
                candidates.append(
                    Candidate(
                        box=_box_from(c["box"], path, lineno),
                        score_rpn=float(c["score_rpn"]),
                        box_refined=_box_from(c["box_refined"], path, lineno),
                        feature=feature,
                    )
                )
            frame = SimFrame(
                frame=int(record["frame"]),
                candidates=candidates,
                gt_box=_box_from(record["gt_box"], path, lineno),
                gt_candidate_index=int(record["gt_index"]),
            )
        except KeyError as exc:
            raise FormatError(f"{path}:{lineno}: missing field {exc}") from None
        frames.append(frame)
    if len(frames) != header.get("num_frames"):
        raise FormatError(
            f"{path}: header promises {header.get('num_frames')} frames, found {len(frames)}"
        )
    return header, frames


# ------------------------------------------------------------- support sets


def write_support(path: str, support: SupportSet) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "support",
        "d": int(support.samples[0].feature.shape[0]) if len(support) else 0,
        "n": len(support),
        "capacity": support.capacity,
        "min_initial_weight": support.min_initial_weight,
        "unit": support._unit,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dumps(header) + "\n")
        for sample, fresh in zip(support.samples, support._fresh):
            fh.write(
                _dumps(
                    {
                        "feature": sample.feature.tolist(),
                        "label": sample.label,
                        "weight": sample.weight,
                        "frame": sample.frame,
                        "initial": sample.is_initial,
                        "fresh": fresh,
                    }
                )
                + "\n"
            )


def read_support(path: str) -> SupportSet:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}:1: empty file")
    header = _parse_line(lines[0], path, 1)
    _check_header(header, "support", path)
    support = SupportSet(
        capacity=int(header.get("capacity", max(int(header.get("n", 1)), 1))),
        min_initial_weight=float(header.get("min_initial_weight", 0.15)),
    )
    support._unit = float(header.get("unit", 1.0))
    d = header.get("d")
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        record = _parse_line(text, path, lineno)
        try:
            feature = np.asarray(record["feature"], dtype=np.float64)
            if feature.shape != (d,):
                raise FormatError(f"{path}:{lineno}: feature length != d={d}")
            sample = Sample(
                feature=feature,
                label=int(record["label"]),
                weight=float(record["weight"]),
                frame=int(record.get("frame", 0)),
                is_initial=bool(record.get("initial", False)),
            )
            support.samples.append(sample)
            support._fresh.append(bool(record.get("fresh", False)))
        except KeyError as exc:
            raise FormatError(f"{path}:{lineno}: missing field {exc}") from None
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    if len(support) != header.get("n"):
        raise FormatError(f"{path}: header promises n={header.get('n')}, found {len(support)}")
    return support


# --------------------------------------------------------- session snapshots


def _array_or_none(value) -> np.ndarray | None:
    return None if value is None else np.asarray(value, dtype=np.float64)


def save_session(path: str, session: TrackerSession) -> None:
    cfg = dataclasses.asdict(session.config)
    cfg["learner"]["kind"] = session.config.learner.kind.value
    learner = session.learner
    record = {
        "format_version": FORMAT_VERSION,
        "kind": "session",
        "config": cfg,
        "support": {
            "capacity": session.support.capacity,
            "min_initial_weight": session.support.min_initial_weight,
            "unit": session.support._unit,
            "samples": [
                {
                    "feature": s.feature.tolist(),
                    "label": s.label,
                    "weight": s.weight,
                    "frame": s.frame,
                    "initial": s.is_initial,
                    "fresh": fresh,
                }
                for s, fresh in zip(session.support.samples, session.support._fresh)
            ],
        },
        "learner": {
            "theta": learner.theta.tolist(),
            "dual": None if learner.dual is None else learner.dual.tolist(),
            "prototypes": None if learner.prototypes is None else learner.prototypes.tolist(),
            "snapshot_features": None
            if learner.snapshot_features is None
            else learner.snapshot_features.tolist(),
            "snapshot_labels": None
            if learner.snapshot_labels is None
            else learner.snapshot_labels.tolist(),
            "snapshot_weights": None
            if learner.snapshot_weights is None
            else learner.snapshot_weights.tolist(),
            "fitted": learner.fitted,
        },
        "prev_box": _box_list(session.prev_box),
        "frame_index": session.frame_index,
        "last_state": session.last_state.value,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dumps(record) + "\n")


def load_session(path: str) -> TrackerSession:
    with open(path, encoding="utf-8") as fh:
        record = _parse_line(fh.readline(), path, 1)
    _check_header(record, "session", path)
    cfg = record["config"]
    learner_cfg = dict(cfg["learner"])
    learner_cfg["kind"] = LearnerKind(learner_cfg["kind"])
    config = TrackerConfig(
        learner=LearnerConfig(**learner_cfg),
        fusion=FusionConfig(**cfg["fusion"]),
        **{k: v for k, v in cfg.items() if k not in ("learner", "fusion")},
    )
    sup = record["support"]
    support = SupportSet(int(sup["capacity"]), float(sup["min_initial_weight"]))
    support._unit = float(sup["unit"])
    for s in sup["samples"]:
        support.samples.append(
            Sample(
                feature=np.asarray(s["feature"], dtype=np.float64),
                label=int(s["label"]),
                weight=float(s["weight"]),
                frame=int(s["frame"]),
                is_initial=bool(s["initial"]),
            )
        )
        support._fresh.append(bool(s["fresh"]))
    lrn = record["learner"]
    labels = lrn["snapshot_labels"]
    learner = LearnerState(
        config=config.learner,
        theta=np.asarray(lrn["theta"], dtype=np.float64),
        dual=_array_or_none(lrn["dual"]),
        prototypes=_array_or_none(lrn["prototypes"]),
        snapshot_features=_array_or_none(lrn["snapshot_features"]),
        snapshot_labels=None if labels is None else np.asarray(labels, dtype=np.int64),
        snapshot_weights=_array_or_none(lrn["snapshot_weights"]),
        fitted=bool(lrn["fitted"]),
    )
    return TrackerSession(
        config=config,
        support=support,
        learner=learner,
        prev_box=Box.from_array(record["prev_box"]),
        frame_index=int(record["frame_index"]),
        last_state=TrackState(record["last_state"]),
    )


# ------------------------------------------------------------------- tables


def write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
