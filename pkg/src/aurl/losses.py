"""Contrastive and classification objectives with analytic gradients.

All cosine-softmax losses share one kernel, :func:`cosine_softmax_xent`:
rows of a query matrix are scored against rows of a prototype matrix by
``lam * cos``, and the loss is the cross entropy against a target index.
Gradients are returned for the *mean* over query rows and are taken with
respect to the raw (un-normalized) vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import lse_rows, normalize_rows, softplus_lambda
from .errors import BadIndex, DimMismatch, ShapeMismatch, ZeroNormRow


@dataclass(frozen=True)
class LossConfig:
    lambda_temp: float = 10.0

    def __post_init__(self):
        if not self.lambda_temp > 0:
            raise ValueError(f"lambda_temp must be positive, got {self.lambda_temp}")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    alignment_term: float
    uniformity_term: float

    def reconstructed(self, lam: float) -> float:
        """lam * SP_lam(alignment + uniformity); equals ``total`` up to rounding."""
        return lam * softplus_lambda(self.alignment_term + self.uniformity_term, lam)


@dataclass
class GradPair:
    d_query: np.ndarray
    d_prototypes: np.ndarray


def _check_query(v, P, pos) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(v, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or v.ndim != 1 or v.shape[0] != P.shape[1]:
        raise DimMismatch(f"query shape {v.shape} vs prototypes {P.shape}")
    if P.shape[0] < 2:
        raise BadIndex(f"need at least 2 prototypes, got {P.shape[0]}")
    if not 0 <= pos < P.shape[0]:
        raise BadIndex(f"positive index {pos} outside [0, {P.shape[0]})")
    return v, P


def _cosines(V: np.ndarray, P: np.ndarray):
    Vn, vnorm = normalize_rows(V, name="query")
    Pn, pnorm = normalize_rows(P, name="prototype")
    return Vn, vnorm, Pn, pnorm, Vn @ Pn.T


def _cos_backward(Vn, vnorm, Pn, pnorm, dC):
    """Pull a gradient on the cosine matrix back to the raw row vectors."""
    dVn = dC @ Pn
    dPn = dC.T @ Vn
    dV = (dVn - np.sum(dVn * Vn, axis=1, keepdims=True) * Vn) / vnorm[:, None]
    dP = (dPn - np.sum(dPn * Pn, axis=1, keepdims=True) * Pn) / pnorm[:, None]
    return dV, dP


def cosine_softmax_xent(V, P, labels, lam: float):
    """Per-row ``-log softmax(lam * cos(V_i, P))[labels_i]``.

    Returns ``(losses, dV, dP)`` where the gradients are of ``losses.mean()``.
    """
    V = np.asarray(V, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if V.shape[1] != P.shape[1]:
        raise DimMismatch(f"query dim {V.shape[1]} vs prototype dim {P.shape[1]}")
    if labels.shape != (V.shape[0],):
        raise DimMismatch("one label per query row required")
    if labels.size and (labels.min() < 0 or labels.max() >= P.shape[0]):
        raise BadIndex("label outside prototype range")
    Vn, vnorm, Pn, pnorm, C = _cosines(V, P)
    logits = lam * C
    rows = np.arange(V.shape[0])
    neg = np.ones_like(logits, dtype=bool)
    neg[rows, labels] = False
    # softplus(LSE(negatives) - positive) keeps tiny losses from cancelling to 0
    losses = np.logaddexp(0.0, lse_rows(logits, neg) - logits[rows, labels])

    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    probs[rows, labels] -= 1.0
    dC = lam * probs / V.shape[0]
    dV, dP = _cos_backward(Vn, vnorm, Pn, pnorm, dC)
    return losses, dV, dP


def sup_contrastive(v, S, pos: int, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """Supervised contrastive loss (positive kept in the denominator) and its split.

    ``alignment_term`` is ``-cos(v, s_pos)``; ``uniformity_term`` is
    ``LSE(lam * cos(v, s_j), j != pos) / lam``.
    """
    v, S = _check_query(v, S, pos)
    lam = cfg.lambda_temp
    _, _, _, _, C = _cosines(v[None, :], S)
    logits = lam * C[0]
    neg = np.ones(S.shape[0], dtype=bool)
    neg[pos] = False
    neg_lse = float(lse_rows(logits[None, :], neg[None, :])[0])
    total = float(np.logaddexp(0.0, neg_lse - logits[pos]))
    uniformity = neg_lse / lam
    return LossBreakdown(total=total, alignment_term=-float(C[0, pos]), uniformity_term=uniformity)


def sup_contrastive_grad(v, S, pos: int, cfg: LossConfig = LossConfig()) -> GradPair:
    v, S = _check_query(v, S, pos)
    _, dV, dS = cosine_softmax_xent(v[None, :], S, [pos], cfg.lambda_temp)
    return GradPair(dV[0], dS)


def self_contrastive(v, S, pos: int, cfg: LossConfig = LossConfig()) -> float:
    """Label-based self-supervised form: the positive is left out of the denominator.

    Can be negative.
    """
    v, S = _check_query(v, S, pos)
    lam = cfg.lambda_temp
    _, _, _, _, C = _cosines(v[None, :], S)
    neg = np.ones(S.shape[0], dtype=bool)
    neg[pos] = False
    return float(-lam * C[0, pos] + lse_rows(lam * C, neg[None, :])[0])


def self_contrastive_grad(v, S, pos: int, cfg: LossConfig = LossConfig()) -> GradPair:
    v, S = _check_query(v, S, pos)
    lam = cfg.lambda_temp
    Vn, vnorm, Sn, snorm, C = _cosines(v[None, :], S)
    logits = lam * C[0]
    neg = np.ones(S.shape[0], dtype=bool)
    neg[pos] = False
    w = np.where(neg, np.exp(logits - logits[neg].max()), 0.0)
    w /= w.sum()
    dC = lam * w
    dC[pos] = -lam
    dV, dS = _cos_backward(Vn, vnorm, Sn, snorm, dC[None, :])
    return GradPair(dV[0], dS)


def classification_loss(v, W, pos: int, cfg: LossConfig = LossConfig()) -> tuple[float, GradPair]:
    """Angular softmax against visual centers (rows of ``W``)."""
    v, W = _check_query(v, W, pos)
    losses, dV, dW = cosine_softmax_xent(v[None, :], W, [pos], cfg.lambda_temp)
    return float(losses[0]), GradPair(dV[0], dW)


def unseen_loss(theta, Z, cfg: LossConfig = LossConfig()) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean supervised contrastive loss over synthetic pairs (theta_i, Z_i).

    Returns ``(loss, d_theta, d_z)``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if theta.shape != Z.shape or theta.ndim != 2:
        raise ShapeMismatch(f"theta {theta.shape} vs Z {Z.shape}")
    if theta.shape[0] < 2:
        raise ShapeMismatch("need at least 2 synthetic classes")
    for name, m in (("theta", theta), ("Z", Z)):
        norms = np.linalg.norm(m, axis=1)
        if not np.all(norms > 1e-12):
            raise ZeroNormRow(f"{name} row {int(np.argmin(norms))} has zero norm")
    losses, d_theta, d_z = cosine_softmax_xent(theta, Z, np.arange(theta.shape[0]), cfg.lambda_temp)
    return float(losses.mean()), d_theta, d_z


def mse_baseline(v, s) -> tuple[float, np.ndarray]:
    """Mean squared coordinate difference; gradient is with respect to ``v``."""
    v = np.asarray(v, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if v.shape != s.shape:
        raise DimMismatch(f"mse of shapes {v.shape} and {s.shape}")
    diff = v - s
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def mse_batch(V, T) -> tuple[float, np.ndarray]:
    """Batch mean of :func:`mse_baseline` over rows; gradient w.r.t. ``V``."""
    V = np.asarray(V, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if V.shape != T.shape:
        raise DimMismatch(f"mse of shapes {V.shape} and {T.shape}")
    diff = V - T
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def total_aurl(loss_s: float, loss_us: float, loss_c: float) -> float:
    return loss_s + loss_us + loss_c
