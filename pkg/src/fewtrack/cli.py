"""Command-line interface: simulate | track | bench | solve.

Configuration is a flat key=value file ('#' comments allowed) with every key
namespaced by section (sim.*, tracker.*, learner.*, fusion.*, bench.*);
--set key=value applies the same schema on top of the file. Unknown keys are
rejected. simulate writes a sequence file, track replays one through a
tracker session, bench sweeps learners over fresh sequences, solve fits a
single learner on a stored support set.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time

import numpy as np

from .core import SupportSet
from .formats import (
    FormatError,
    read_sequence,
    read_support,
    save_session,
    write_csv,
    write_sequence,
)
from .fusion import FusionConfig
from .learners import (
    METRIC_KINDS,
    LearnerConfig,
    LearnerKind,
    LearnerState,
    fit_initial,
    fit_metric,
    fit_rr_dual_cls,
    fit_rr_dual_itr,
    fit_rr_prim_itr,
    fit_svm_dual,
    init_theta,
)
from .losses import ridge_objective, svm_primal_objective
from .simulator import RunMetrics, SimParams, chosen_index, evaluate_run, generate_sequence
from .tracker import TrackerConfig, init_session, step
from .core import design_matrix, iou

# first-stage-only reference row: matching learner with its score weight
# zeroed. bench always includes it, listed or not.
BENCH_BASELINE = "baseline"
DEFAULT_BENCH_KINDS = tuple(k.value for k in LearnerKind) + (BENCH_BASELINE,)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything a command needs: simulation, tracking, bench shape."""

    sim: SimParams = dataclasses.field(default_factory=SimParams)
    tracker: TrackerConfig = dataclasses.field(default_factory=TrackerConfig)
    bench_sequences: int = 5
    bench_kinds: tuple[str, ...] = DEFAULT_BENCH_KINDS

    def __post_init__(self):
        if self.bench_sequences < 1:
            raise ValueError("bench.num_sequences must be >= 1")
        valid = {k.value for k in LearnerKind} | {BENCH_BASELINE}
        for kind in self.bench_kinds:
            if kind not in valid:
                raise ValueError(f"unknown bench kind {kind!r}")


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, LearnerKind):
        return value.value
    return str(value)


def _parse_typed(key: str, text: str, kind: type, optional: bool):
    text = text.strip()
    if optional and text == "none":
        return None
    try:
        if kind is bool:
            if text not in ("true", "false"):
                raise ValueError("expected true or false")
            return text == "true"
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ValueError(f"bad value for {key}: {exc}") from None


# section name -> (dataclass, fields excluded from the flat schema)
_SECTIONS = {
    "sim": (SimParams, ()),
    "tracker": (TrackerConfig, ("learner", "fusion")),
    "learner": (LearnerConfig, ()),
    "fusion": (FusionConfig, ()),
}
_OPTIONAL_KEYS = {
    "sim.drift_sigma",
    "tracker.memory_capacity",
    "learner.iters_refresh",
    "learner.gamma",
}


def _schema() -> dict[str, tuple[str, str, type, bool]]:
    schema: dict[str, tuple[str, str, type, bool]] = {}
    for section, (cls, excluded) in _SECTIONS.items():
        for f in dataclasses.fields(cls):
            if f.name in excluded:
                continue
            key = f"{section}.{f.name}"
            if f.name == "kind":
                kind = str
            elif f.type in ("int", "int | None"):
                kind = int
            elif f.type in ("float", "float | None"):
                kind = float
            elif f.type == "bool":
                kind = bool
            else:
                kind = str
            schema[key] = (section, f.name, kind, key in _OPTIONAL_KEYS)
    schema["bench.num_sequences"] = ("bench", "num_sequences", int, False)
    schema["bench.kinds"] = ("bench", "kinds", str, False)
    return schema


_SCHEMA = _schema()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """key = value lines into an ordered mapping; malformed lines are errors."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"{source}:{lineno}: empty key")
        mapping[key] = value
    return mapping


def build_run_config(overrides: dict[str, str]) -> RunConfig:
    """Defaults plus overrides, every key validated against the schema."""
    values = {section: {} for section in _SECTIONS}
    bench = {"num_sequences": 5, "kinds": ",".join(DEFAULT_BENCH_KINDS)}
    for key, text in overrides.items():
        if key not in _SCHEMA:
            raise ValueError(f"unknown configuration key {key!r}")
        section, name, kind, optional = _SCHEMA[key]
        parsed = _parse_typed(key, text, kind, optional)
        if section == "bench":
            bench[name] = parsed
        else:
            values[section][name] = parsed
    if "kind" in values["learner"]:
        try:
            values["learner"]["kind"] = LearnerKind(values["learner"]["kind"])
        except ValueError:
            names = ", ".join(k.value for k in LearnerKind)
            raise ValueError(
                f"unknown learner kind {values['learner']['kind']!r} (choose from {names})"
            ) from None
    learner = LearnerConfig(**values["learner"])
    fusion = FusionConfig(**values["fusion"])
    tracker = TrackerConfig(learner=learner, fusion=fusion, **values["tracker"])
    sim = SimParams(**values["sim"])
    kinds = tuple(k.strip() for k in str(bench["kinds"]).split(",") if k.strip())
    return RunConfig(
        sim=sim, tracker=tracker, bench_sequences=int(bench["num_sequences"]), bench_kinds=kinds
    )


def serialize_run_config(cfg: RunConfig) -> str:
    """Canonical text form; parsing it back reproduces cfg exactly."""
    lines = []
    holders = {
        "sim": cfg.sim,
        "tracker": cfg.tracker,
        "learner": cfg.tracker.learner,
        "fusion": cfg.tracker.fusion,
    }
    for key in sorted(_SCHEMA):
        section, name, _, _ = _SCHEMA[key]
        if section == "bench":
            value = (
                cfg.bench_sequences if name == "num_sequences" else ",".join(cfg.bench_kinds)
            )
        else:
            value = getattr(holders[section], name)
        lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def load_run_config(config_path: str | None, sets: list[str]) -> RunConfig:
    overrides: dict[str, str] = {}
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            overrides.update(parse_config_text(fh.read(), config_path))
    for item in sets:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return build_run_config(overrides)


def _with_learner_kind(tracker: TrackerConfig, kind: LearnerKind) -> TrackerConfig:
    return dataclasses.replace(tracker, learner=dataclasses.replace(tracker.learner, kind=kind))


def _run_sequence(tracker_cfg: TrackerConfig, frames):
    first = frames[0]
    if first.gt_candidate_index < 0:
        raise ValueError("sequence has no ground-truth candidate in its first frame")
    gt_feature = first.candidates[first.gt_candidate_index].feature
    session = init_session(tracker_cfg, first.candidates, first.gt_box, gt_feature)
    decisions = []
    elapsed = []
    for frame in frames[1:]:
        t0 = time.perf_counter()
        decisions.append(step(session, frame.candidates))
        elapsed.append((time.perf_counter() - t0) * 1000.0)
    metrics = evaluate_run(frames[1:], decisions, elapsed)
    return metrics, decisions, elapsed, session


def _summary_line(metrics: RunMetrics) -> str:
    fps = 1000.0 / metrics.mean_ms if metrics.mean_ms else float("nan")
    return (
        f"frames={metrics.frames} accuracy={metrics.selection_accuracy:.4f} "
        f"mean_iou={metrics.mean_iou:.4f} drift_count={metrics.drift_count} "
        f"mean_ms={metrics.mean_ms:.3f} fps={fps:.1f}"
    )


def cmd_simulate(args) -> int:
    cfg = load_run_config(args.config, args.set)
    sim = cfg.sim
    if args.seed is not None:
        sim = dataclasses.replace(sim, seed=args.seed)
    frames = generate_sequence(sim)
    write_sequence(args.out, sim, frames)
    print(f"wrote {len(frames)} frames (d={sim.d}, seed={sim.seed}) to {args.out}")
    return 0


def cmd_track(args) -> int:
    cfg = load_run_config(args.config, args.set)
    tracker_cfg = cfg.tracker
    if args.learner:
        tracker_cfg = _with_learner_kind(tracker_cfg, LearnerKind(args.learner))
    if args.seed is not None:
        tracker_cfg = dataclasses.replace(tracker_cfg, seed=args.seed)
    _, frames = read_sequence(args.sequence)
    metrics, decisions, elapsed, session = _run_sequence(tracker_cfg, frames)
    if args.out:
        rows = []
        for frame, decision, ms in zip(frames[1:], decisions, elapsed):
            rows.append(
                {
                    "frame": frame.frame,
                    "chosen_index": chosen_index(frame, decision),
                    "fused_score": repr(decision.fused_score),
                    "iou_gt": repr(iou(decision.fused_box, frame.gt_box)),
                    "state": decision.state.value,
                    "ms_elapsed": f"{ms:.3f}",
                }
            )
        write_csv(
            args.out,
            ["frame", "chosen_index", "fused_score", "iou_gt", "state", "ms_elapsed"],
            rows,
        )
    if args.save_session:
        save_session(args.save_session, session)
    print(_summary_line(metrics))
    return 0


def cmd_bench(args) -> int:
    cfg = load_run_config(args.config, args.set)
    master = args.seed if args.seed is not None else cfg.sim.seed
    sequences = [
        generate_sequence(dataclasses.replace(cfg.sim, seed=master + i))
        for i in range(cfg.bench_sequences)
    ]
    kinds = list(cfg.bench_kinds)
    if BENCH_BASELINE not in kinds:
        kinds.append(BENCH_BASELINE)
    rows = []
    for kind_name in kinds:
        if kind_name == BENCH_BASELINE:
            tracker_cfg = _with_learner_kind(cfg.tracker, LearnerKind.MATCHING)
            tracker_cfg = dataclasses.replace(
                tracker_cfg, fusion=dataclasses.replace(tracker_cfg.fusion, mu_cls=0.0)
            )
        else:
            tracker_cfg = _with_learner_kind(cfg.tracker, LearnerKind(kind_name))
        accs, mious, drifts = [], [], []
        total_frames = 0
        total_seconds = 0.0
        for frames in sequences:
            metrics, _, elapsed, _ = _run_sequence(tracker_cfg, frames)
            accs.append(metrics.selection_accuracy)
            mious.append(metrics.mean_iou)
            drifts.append(metrics.drift_count)
            total_frames += metrics.frames
            total_seconds += sum(elapsed) / 1000.0
        rows.append(
            {
                "learner": kind_name,
                "accuracy": f"{np.mean(accs):.4f}",
                "mean_iou": f"{np.mean(mious):.4f}",
                "mean_drift_count": f"{np.mean(drifts):.2f}",
                "fps": f"{total_frames / total_seconds:.1f}" if total_seconds else "nan",
            }
        )
    columns = ["learner", "accuracy", "mean_iou", "mean_drift_count", "fps"]
    if args.out:
        write_csv(args.out, columns, rows)
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in columns}
    print("  ".join(c.ljust(widths[c]) for c in columns))
    for row in rows:
        print("  ".join(str(row[c]).ljust(widths[c]) for c in columns))
    return 0


def _solve_objective(kind: LearnerKind, theta, support: SupportSet, lam: float) -> float:
    if kind == LearnerKind.SVM_DUAL_ITR:
        return svm_primal_objective(theta, support, lam)
    phi, y, _ = design_matrix(support)
    return ridge_objective(theta, phi, y, lam)


_RR_KINDS = frozenset(
    {LearnerKind.RR_PRIM_ITR, LearnerKind.RR_DUAL_CLS, LearnerKind.RR_DUAL_ITR}
)


def cmd_solve(args) -> int:
    cfg = load_run_config(args.config, args.set)
    learner_cfg = cfg.tracker.learner
    if args.learner:
        learner_cfg = dataclasses.replace(learner_cfg, kind=LearnerKind(args.learner))
    support = read_support(args.support)
    if len(support) == 0:
        raise ValueError("empty support set")
    kind = learner_cfg.kind
    if kind in METRIC_KINDS:
        state = fit_metric(support, kind, learner_cfg)
        theta = state.prototypes.T if kind == LearnerKind.PROTO else state.theta
        objective = float("nan")
    elif kind == LearnerKind.RR_PRIM_ITR:
        positives = [s for s in support.samples if s.label == 1]
        if not positives:
            raise ValueError("primal solve needs at least one positive sample")
        target = np.mean([s.feature for s in positives], axis=0)
        start = LearnerState(config=learner_cfg, theta=init_theta(target, support), fitted=True)
        state = fit_rr_prim_itr(start, support, learner_cfg.iters_init)
        theta = state.theta
        objective = _solve_objective(kind, theta, support, learner_cfg.lam)
    else:
        fitter = {
            LearnerKind.RR_DUAL_CLS: fit_rr_dual_cls,
            LearnerKind.RR_DUAL_ITR: fit_rr_dual_itr,
            LearnerKind.SVM_DUAL_ITR: fit_svm_dual,
        }[kind]
        state = fitter(support, learner_cfg.lam, learner_cfg)
        theta = state.theta
        objective = _solve_objective(kind, theta, support, learner_cfg.lam)
    norm = float(np.linalg.norm(theta))
    if args.out:
        record = {
            "kind": kind.value,
            "lam": learner_cfg.lam,
            "n": len(support),
            "objective": None if np.isnan(objective) else objective,
            "theta": np.asarray(theta).tolist(),
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(record, fh, sort_keys=True)
            fh.write("\n")
    print(
        f"kind={kind.value} n={len(support)} lam={learner_cfg.lam} "
        f"theta_norm={norm:.6f} objective={objective:.6f}"
    )
    theta = np.asarray(theta)
    if theta.size <= 32:
        print(f"theta={json.dumps(theta.tolist())}")
    else:
        print(f"theta_shape={theta.shape} (pass --out for the full matrix)")
    if kind not in METRIC_KINDS:
        print(
            f"solver: status={state.solve_status} iterations={state.solve_iterations}"
            + (
                f" kkt_residual={state.solve_kkt_residual:.3e}"
                if state.solve_kkt_residual is not None
                else ""
            )
        )
    if kind in _RR_KINDS:
        phi, y, _ = design_matrix(support)
        oracle = np.linalg.solve(
            phi.T @ phi + learner_cfg.lam * np.eye(phi.shape[1]), phi.T @ y
        )
        disc = float(
            np.linalg.norm(theta - oracle) / max(np.linalg.norm(oracle), 1e-30)
        )
        print(f"closed_form_discrepancy={disc:.3e}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--out", help="output path")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one configuration key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewtrack", description="online few-shot candidate discrimination"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic proposal sequence")
    _add_common(p_sim)

    p_track = sub.add_parser("track", help="run a tracker over a sequence file")
    p_track.add_argument("sequence", help="sequence file from simulate")
    _add_common(p_track)
    p_track.add_argument("--learner", choices=[k.value for k in LearnerKind])
    p_track.add_argument("--save-session", help="write the final session snapshot here")

    p_bench = sub.add_parser("bench", help="compare learners over fresh sequences")
    _add_common(p_bench)

    p_solve = sub.add_parser("solve", help="fit one learner on a stored support set")
    p_solve.add_argument("support", help="support-set file")
    _add_common(p_solve)
    p_solve.add_argument("--learner", choices=[k.value for k in LearnerKind])
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "simulate" and not args.out:
        print("simulate requires --out", file=sys.stderr)
        return 2
    handlers = {
        "simulate": cmd_simulate,
        "track": cmd_track,
        "bench": cmd_bench,
        "solve": cmd_solve,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
