"""Objectives and diagnostics for the second-stage learners.

The ridge pieces operate on the weighted design matrix from
core.design_matrix. The multiclass hinge pieces operate on raw features and
raw sample weights, matching the slack-per-sample primal they diagnose.
Focal loss is a scoring diagnostic only; no learner descends on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SupportSet


@dataclass(frozen=True)
class FocalParams:
    """Focal loss hyperparameters: class balance, focusing power, temperature."""

    alpha: float = 0.25
    beta: float = 2.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def ridge_objective(theta: np.ndarray, phi: np.ndarray, y: np.ndarray, lam: float) -> float:
    """Weighted ridge objective ||phi theta - y||_F^2 + lam ||theta||_F^2."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    resid = phi @ theta - y
    return float(np.sum(resid * resid) + lam * np.sum(theta * theta))


def ridge_gradient(theta: np.ndarray, phi: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Gradient of ridge_objective in theta: 2 phi'(phi theta - y) + 2 lam theta."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    return 2.0 * (phi.T @ (phi @ theta - y)) + 2.0 * lam * theta


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def focal_loss(logits: np.ndarray, labels: np.ndarray, params: FocalParams = FocalParams()) -> float:
    """Summed focal loss over rows of logits.

    Per row: alpha * (1 - p_true)^beta * (-log p_true) with p = softmax of
    gamma-scaled logits. labels is a one-hot matrix matching logits, or a
    vector of class indices. With alpha=1, beta=0, gamma=1 this is plain
    cross-entropy.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError(f"logits must be (rows, classes), got shape {logits.shape}")
    if labels.ndim == 2:
        if labels.shape != logits.shape:
            raise ValueError("one-hot labels must match logits shape")
        onehot = labels.astype(np.float64)
        if not (
            np.all((onehot == 0.0) | (onehot == 1.0))
            and np.all(onehot.sum(axis=1) == 1.0)
        ):
            raise ValueError("label rows must be exactly one-hot")
        labels = np.argmax(onehot, axis=1)
    else:
        labels = labels.astype(np.int64)
    if labels.shape != (logits.shape[0],):
        raise ValueError("labels length must match logits rows")
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ValueError("labels out of range")
    logp = _log_softmax(params.gamma * logits)
    logp_true = logp[np.arange(len(labels)), labels]
    p_true = np.exp(logp_true)
    weight = params.alpha * np.power(1.0 - p_true, params.beta)
    return float(np.sum(weight * (-logp_true)))


def svm_slack(theta: np.ndarray, feature: np.ndarray, label: int) -> float:
    """Multiclass hinge slack max_k(theta_k'phi + 1 - [k==label]) - theta_label'phi.

    Always >= 0: the k == label entry of the max is exactly the subtracted
    term.
    """
    theta = np.asarray(theta, dtype=np.float64)
    feature = np.asarray(feature, dtype=np.float64)
    scores = theta.T @ feature
    if not 0 <= label < scores.shape[0]:
        raise ValueError(f"label {label} out of range for {scores.shape[0]} classes")
    margin = scores + 1.0
    margin[label] -= 1.0
    return float(np.max(margin) - scores[label])


def svm_primal_objective(theta: np.ndarray, support: SupportSet, lam: float) -> float:
    """Weighted hinge primal: sum_n w_n slack_n + lam ||theta||_F^2."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if len(support) == 0:
        raise ValueError("support set is empty")
    total = 0.0
    for s in support.samples:
        total += s.weight * svm_slack(theta, s.feature, s.label)
    return float(total + lam * np.sum(theta * theta))
