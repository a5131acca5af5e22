"""Second-stage few-shot learners over the support set.

Four optimization-based learners share one weighted ridge / multiclass-hinge
family: steepest descent on the ridge primal, a closed-form ridge dual, the
same ridge dual routed through the QP solver, and a multiclass SVM dual
solved as a QP. Two metric baselines (weighted prototypes, cosine-attention
matching) share the predict interface but never optimize anything.

All learners are binary over columns (background, target) and emit a
foreground probability per query feature.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .core import LABEL_TARGET, SupportSet, design_matrix
from .losses import ridge_gradient
from .qpsolver import QPProblem, solve_qp

_NORM_EPS = 1e-12


class LearnerKind(enum.Enum):
    RR_PRIM_ITR = "rr-prim-itr"
    RR_DUAL_ITR = "rr-dual-itr"
    RR_DUAL_CLS = "rr-dual-cls"
    SVM_DUAL_ITR = "svm-dual-itr"
    PROTO = "proto"
    MATCHING = "matching"


OPTIMIZATION_KINDS = frozenset(
    {LearnerKind.RR_PRIM_ITR, LearnerKind.RR_DUAL_ITR, LearnerKind.RR_DUAL_CLS, LearnerKind.SVM_DUAL_ITR}
)
DUAL_KINDS = frozenset({LearnerKind.RR_DUAL_ITR, LearnerKind.RR_DUAL_CLS, LearnerKind.SVM_DUAL_ITR})
METRIC_KINDS = frozenset({LearnerKind.PROTO, LearnerKind.MATCHING})

# per-kind softmax scale standing in for the learned scaling factor; the
# ridge solutions shrink with support size and weight normalization, so
# their raw logits need a much larger scale than the margin-based SVM.
# Metric learners keep temperature 1.
_GAMMA_DEFAULTS = {
    LearnerKind.RR_PRIM_ITR: 100.0,
    LearnerKind.RR_DUAL_ITR: 10.0,
    LearnerKind.RR_DUAL_CLS: 10.0,
    LearnerKind.SVM_DUAL_ITR: 0.5,
    LearnerKind.PROTO: 1.0,
    LearnerKind.MATCHING: 1.0,
}


@dataclass(frozen=True)
class LearnerConfig:
    """Learner selection and optimization hyperparameters.

    iters_refresh defaults per kind: 3 gradient steps for the primal
    learner, 1 full re-solve for the dual learners.
    """

    kind: LearnerKind = LearnerKind.RR_DUAL_CLS
    lam: float = 0.1
    gamma: float | None = None
    iters_init: int = 10
    iters_refresh: int | None = None
    mu_theta: float = 0.5
    qp_tol: float = 1e-8
    qp_max_iter: int = 50

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.iters_init < 1:
            raise ValueError("iters_init must be >= 1")
        if self.iters_refresh is not None and self.iters_refresh < 1:
            raise ValueError("iters_refresh must be >= 1 when set")
        if not 0.0 <= self.mu_theta <= 1.0:
            raise ValueError(f"mu_theta must be in [0, 1], got {self.mu_theta}")
        if self.qp_tol <= 0:
            raise ValueError("qp_tol must be positive")
        if self.qp_max_iter < 1:
            raise ValueError("qp_max_iter must be >= 1")

    def resolved_iters_refresh(self) -> int:
        if self.iters_refresh is not None:
            return self.iters_refresh
        return 3 if self.kind == LearnerKind.RR_PRIM_ITR else 1

    def resolved_gamma(self) -> float:
        if self.gamma is not None:
            return self.gamma
        return _GAMMA_DEFAULTS[self.kind]


@dataclass
class LearnerState:
    """Fitted learner: primal weights plus per-kind extras.

    The solve_* fields carry diagnostics of the most recent dual solve for
    reporting; they do not affect predictions.
    """

    config: LearnerConfig
    theta: np.ndarray
    dual: np.ndarray | None = None
    prototypes: np.ndarray | None = None
    snapshot_features: np.ndarray | None = None
    snapshot_labels: np.ndarray | None = None
    snapshot_weights: np.ndarray | None = None
    fitted: bool = False
    solve_status: str | None = None
    solve_iterations: int | None = None
    solve_kkt_residual: float | None = None


def init_theta(target_feature: np.ndarray, support: SupportSet) -> np.ndarray:
    """First-frame template weights.

    Foreground column is the normalized target feature; background column is
    the normalized mean of negative-sample features, zero when the support
    holds no negatives.
    """
    target = np.asarray(target_feature, dtype=np.float64)
    norm = float(np.linalg.norm(target))
    if norm <= _NORM_EPS:
        raise ValueError("target feature has zero norm")
    theta = np.zeros((target.shape[0], 2), dtype=np.float64)
    theta[:, 1] = target / norm
    negatives = [s.feature for s in support.samples if s.label != LABEL_TARGET]
    if negatives:
        mean = np.mean(negatives, axis=0)
        mnorm = float(np.linalg.norm(mean))
        if mnorm > _NORM_EPS:
            theta[:, 0] = mean / mnorm
    return theta


def fit_rr_prim_itr(state: LearnerState, support: SupportSet, iters: int) -> LearnerState:
    """Steepest descent on the weighted ridge objective, continuing from
    state.theta.

    Exact line search for a quadratic: step = (g'g) / (g'Hg) with
    H g = 2 phi'(phi g) + 2 lam g, both columns of theta flattened jointly.
    A zero gradient leaves theta unchanged.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    lam = state.config.lam
    phi, y, _ = design_matrix(support)
    theta = np.array(state.theta, dtype=np.float64)
    steps = 0
    for _ in range(iters):
        g = ridge_gradient(theta, phi, y, lam)
        gg = float(np.sum(g * g))
        if gg == 0.0:
            break
        hg = 2.0 * (phi.T @ (phi @ g)) + 2.0 * lam * g
        denom = float(np.sum(g * hg))
        theta = theta - (gg / denom) * g
        steps += 1
    return replace(state, theta=theta, fitted=True, solve_status="descent", solve_iterations=steps)


def _config_for(kind: LearnerKind, lam: float, config: LearnerConfig | None) -> LearnerConfig:
    if config is not None:
        return config
    return LearnerConfig(kind=kind, lam=lam)


def fit_rr_dual_cls(
    support: SupportSet, lam: float, config: LearnerConfig | None = None
) -> LearnerState:
    """Closed-form ridge dual: a = (phi phi' + lam I)^-1 y, theta = phi'a."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    phi, y, _ = design_matrix(support)
    n = phi.shape[0]
    gram = phi @ phi.T + lam * np.eye(n)
    try:
        factor = scipy.linalg.cho_factor(gram)
    except scipy.linalg.LinAlgError as exc:  # lam > 0 makes this unreachable
        raise ValueError(f"dual system not positive definite: {exc}") from None
    dual = scipy.linalg.cho_solve(factor, y)
    return LearnerState(
        config=_config_for(LearnerKind.RR_DUAL_CLS, lam, config),
        theta=project_dual(dual, phi, 1.0),
        dual=dual,
        fitted=True,
        solve_status="closed-form",
        solve_iterations=1,
    )


def fit_rr_dual_itr(
    support: SupportSet, lam: float, config: LearnerConfig | None = None
) -> LearnerState:
    """Ridge dual per class column as an unconstrained QP.

    Each column solves min_a a'(phi phi' + lam I)a - 2 a'y_c, deliberately
    routed through the general QP solver so dual iterates share one code
    path with the constrained learners.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    cfg = _config_for(LearnerKind.RR_DUAL_ITR, lam, config)
    phi, y, _ = design_matrix(support)
    n = phi.shape[0]
    p = 2.0 * (phi @ phi.T + lam * np.eye(n))
    dual = np.zeros((n, 2), dtype=np.float64)
    iterations = 0
    residual = 0.0
    status = None
    for c in range(2):
        sol = solve_qp(QPProblem(P=p, q=-2.0 * y[:, c]), tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
        dual[:, c] = sol.z
        iterations = max(iterations, sol.iterations)
        residual = max(residual, sol.kkt_residual)
        status = sol.status.value if status is None else status
    return LearnerState(
        config=cfg,
        theta=project_dual(dual, phi, 1.0),
        dual=dual,
        fitted=True,
        solve_status=status,
        solve_iterations=iterations,
        solve_kkt_residual=residual,
    )


def _degenerate_one_class_theta(support: SupportSet, label: int) -> np.ndarray:
    feats = support.features()
    w = support.weights()
    mean = (w[:, None] * feats).sum(axis=0) / w.sum()
    norm = float(np.linalg.norm(mean))
    d = feats.shape[1]
    theta = np.zeros((d, 2), dtype=np.float64)
    if norm > _NORM_EPS:
        theta[:, label] = mean / norm
    return theta


def fit_svm_dual(
    support: SupportSet, lam: float, config: LearnerConfig | None = None
) -> LearnerState:
    """Weighted multiclass-hinge dual solved as a QP.

    With raw features X, unweighted one-hot targets Y, and sample weights w,
    the dual over A (one row per sample) is

        min_A  (1 / 4 lam) <A, X X' A>  -  <A, Y>
        s.t.   A[n, k] <= w[n] * Y[n, k],   sum_k A[n, k] == 0,

    recovered as theta = X'A / (2 lam). A one-class support set has no
    margin to optimize; it yields the weighted-mean template for the present
    class with a warning.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if len(support) == 0:
        raise ValueError("support set is empty")
    cfg = _config_for(LearnerKind.SVM_DUAL_ITR, lam, config)
    feats = support.features()
    labels = support.labels()
    w = support.weights()
    classes = np.unique(labels)
    if classes.size == 1:
        warnings.warn("one-class support set: SVM fit degenerates to a class template")
        return LearnerState(
            config=cfg,
            theta=_degenerate_one_class_theta(support, int(classes[0])),
            fitted=True,
            solve_status="one-class-degenerate",
        )

    n = feats.shape[0]
    onehot = np.zeros((n, 2), dtype=np.float64)
    onehot[np.arange(n), labels] = 1.0
    gram = feats @ feats.T
    p = np.kron(gram, np.eye(2)) / (2.0 * lam)
    q = -onehot.reshape(-1)
    a_eq = np.kron(np.eye(n), np.ones((1, 2)))
    b_eq = np.zeros(n)
    g = np.eye(2 * n)
    h = (w[:, None] * onehot).reshape(-1)
    sol = solve_qp(QPProblem(P=p, q=q, A=a_eq, b=b_eq, G=g, h=h), tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
    dual = sol.z.reshape(n, 2)
    return LearnerState(
        config=cfg,
        theta=project_dual(dual, feats, 1.0 / (2.0 * lam)),
        dual=dual,
        fitted=True,
        solve_status=sol.status.value,
        solve_iterations=sol.iterations,
        solve_kkt_residual=sol.kkt_residual,
    )


def project_dual(dual: np.ndarray, phi: np.ndarray, scale: float) -> np.ndarray:
    """Dual-to-primal projection theta = scale * phi' a.

    scale is 1 for the ridge duals (phi already carries the sample weights)
    and 1 / (2 lam) for the SVM dual over raw features.
    """
    dual = np.asarray(dual, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if dual.ndim != 2 or phi.ndim != 2 or dual.shape[0] != phi.shape[0]:
        raise ValueError(f"incompatible shapes dual {dual.shape}, phi {phi.shape}")
    return scale * (phi.T @ dual)


def update_theta_moving_average(state: LearnerState, theta_new: np.ndarray, mu: float) -> LearnerState:
    """Template blend theta <- (1 - mu) theta_old + mu theta_new."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must be in [0, 1], got {mu}")
    theta_new = np.asarray(theta_new, dtype=np.float64)
    if state.theta.shape != theta_new.shape:
        raise ValueError("theta shapes differ")
    return replace(state, theta=(1.0 - mu) * state.theta + mu * theta_new)


def fit_metric(
    support: SupportSet, kind: LearnerKind, config: LearnerConfig | None = None
) -> LearnerState:
    """Fit one of the metric learners from the current support set.

    Proto stores weight-averaged class prototypes (zero vector for an absent
    class); Matching stores the support snapshot it attends over at predict
    time.
    """
    if kind not in METRIC_KINDS:
        raise ValueError(f"{kind.value} is not a metric learner")
    if len(support) == 0:
        raise ValueError("support set is empty")
    cfg = config if config is not None else LearnerConfig(kind=kind)
    feats = support.features()
    labels = support.labels()
    w = support.weights()
    d = feats.shape[1]
    if kind == LearnerKind.PROTO:
        protos = np.zeros((2, d), dtype=np.float64)
        for c in (0, 1):
            mask = labels == c
            if not np.any(mask):
                raise ValueError(f"proto needs at least one sample of class {c}")
            wc = w[mask]
            protos[c] = (wc[:, None] * feats[mask]).sum(axis=0) / wc.sum()
        return LearnerState(
            config=cfg, theta=np.zeros((d, 2)), prototypes=protos, fitted=True
        )
    return LearnerState(
        config=cfg,
        theta=np.zeros((d, 2)),
        snapshot_features=feats.copy(),
        snapshot_labels=labels.copy(),
        snapshot_weights=w.copy(),
        fitted=True,
    )


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def predict(state: LearnerState, features: np.ndarray) -> np.ndarray:
    """Foreground probability per query row, in (0, 1)."""
    if not state.fitted:
        raise RuntimeError("learner is not fitted")
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"features must be (M, d), got shape {feats.shape}")
    kind = state.config.kind
    if kind in OPTIMIZATION_KINDS:
        return _softmax_rows(state.config.resolved_gamma() * (feats @ state.theta))[:, 1]
    if kind == LearnerKind.PROTO:
        diff = feats[:, None, :] - state.prototypes[None, :, :]
        sq = np.sum(diff * diff, axis=2)
        return _softmax_rows(-sq)[:, 1]
    # matching: weight-modulated softmax attention over support cosines
    sf = state.snapshot_features
    norms = np.maximum(np.linalg.norm(sf, axis=1), _NORM_EPS)
    qnorms = np.maximum(np.linalg.norm(feats, axis=1), _NORM_EPS)
    cos = (feats / qnorms[:, None]) @ (sf / norms[:, None]).T
    att = state.snapshot_weights[None, :] * np.exp(cos)
    att = att / np.sum(att, axis=1, keepdims=True)
    return att @ (state.snapshot_labels == LABEL_TARGET).astype(np.float64)


_DUAL_FITTERS = {
    LearnerKind.RR_DUAL_CLS: fit_rr_dual_cls,
    LearnerKind.RR_DUAL_ITR: fit_rr_dual_itr,
    LearnerKind.SVM_DUAL_ITR: fit_svm_dual,
}


def fit_initial(config: LearnerConfig, support: SupportSet, target_feature: np.ndarray) -> LearnerState:
    """First-frame fit: template init, then the per-kind full fit."""
    kind = config.kind
    if kind in METRIC_KINDS:
        return fit_metric(support, kind, config)
    theta0 = init_theta(target_feature, support)
    state = LearnerState(config=config, theta=theta0, fitted=True)
    if kind == LearnerKind.RR_PRIM_ITR:
        return fit_rr_prim_itr(state, support, config.iters_init)
    return _DUAL_FITTERS[kind](support, config.lam, config)


def refresh(state: LearnerState, support: SupportSet) -> LearnerState:
    """Scheduled update: continue the primal iterate, or re-solve the dual
    and blend the projected weights into the running template."""
    cfg = state.config
    kind = cfg.kind
    if kind == LearnerKind.RR_PRIM_ITR:
        return fit_rr_prim_itr(state, support, cfg.resolved_iters_refresh())
    if kind in METRIC_KINDS:
        return fit_metric(support, kind, cfg)
    for _ in range(cfg.resolved_iters_refresh()):
        new = _DUAL_FITTERS[kind](support, cfg.lam, cfg)
        state = replace(
            update_theta_moving_average(state, new.theta, cfg.mu_theta),
            dual=new.dual,
            solve_status=new.solve_status,
            solve_iterations=new.solve_iterations,
            solve_kkt_residual=new.solve_kkt_residual,
        )
    return state
