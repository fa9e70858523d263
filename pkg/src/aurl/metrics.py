"""Closeness (alignment), dispersion (uniformity), and top-k accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .core import EPS_NORM, normalize_rows
from .errors import BadK, DimMismatch, MissingClass, SingleClass, ZeroNormMean


@dataclass
class DiagnosticsReport:
    closeness: float | None = None
    dispersion: float | None = None
    top1: float | None = None
    top5: float | None = None
    per_class_accuracy: dict[int, float] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_accuracy"] = {str(k): v for k, v in self.per_class_accuracy.items()}
        extra = d.pop("extra")
        d.update(extra)
        return d


def closeness(V, labels, S, class_ids=None) -> float:
    """Mean over classes of the mean cosine distance from each sample to its class semantic.

    ``S`` holds one row per class; ``class_ids[k]`` names the class of row
    ``k`` (defaults to ``0..K-1``). Every class in ``class_ids`` must have at
    least one sample.
    """
    V = np.asarray(V, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    labels = np.asarray(labels)
    if V.shape[1] != S.shape[1]:
        raise DimMismatch(f"embedding dim {V.shape[1]} vs semantic dim {S.shape[1]}")
    class_ids = np.arange(S.shape[0]) if class_ids is None else np.asarray(class_ids)
    row_of = {int(c): k for k, c in enumerate(class_ids)}
    unknown = set(np.unique(labels).tolist()) - row_of.keys()
    if unknown:
        raise MissingClass(f"labels without a semantic embedding: {sorted(unknown)[:5]}")
    Vn, _ = normalize_rows(V, name="embedding")
    Sn, _ = normalize_rows(S, name="semantic")
    rows = np.array([row_of[int(y)] for y in labels], dtype=np.int64)
    dist = 1.0 - np.clip(np.sum(Vn * Sn[rows], axis=1), -1.0, 1.0)
    per_class = []
    for k in range(len(class_ids)):
        sel = rows == k
        if not sel.any():
            raise MissingClass(f"class {int(class_ids[k])} has no samples")
        per_class.append(dist[sel].mean())
    return float(np.mean(per_class))


def class_means(V, labels) -> tuple[np.ndarray, np.ndarray]:
    """(sorted class ids, mean of unit-normalized embeddings per class)."""
    Vn, _ = normalize_rows(V, name="embedding")
    labels = np.asarray(labels)
    ids = np.unique(labels)
    means = np.stack([Vn[labels == c].mean(axis=0) for c in ids])
    return ids, means


def dispersion(V, labels) -> float:
    """Mean over classes of the cosine distance to the nearest other class mean."""
    V = np.asarray(V, dtype=np.float64)
    ids, means = class_means(V, labels)
    if len(ids) < 2:
        raise SingleClass("dispersion needs at least two classes")
    norms = np.linalg.norm(means, axis=1)
    if not np.all(norms > EPS_NORM):
        raise ZeroNormMean(f"class {int(ids[np.argmin(norms)])} has a zero-norm mean embedding")
    mn = means / norms[:, None]
    dist = 1.0 - np.clip(mn @ mn.T, -1.0, 1.0)
    np.fill_diagonal(dist, np.inf)
    return float(dist.min(axis=1).mean())


def topk_hits(scores, labels, k: int) -> np.ndarray:
    """Boolean per sample: true class ranks within the top ``k`` (ties go to the lower index)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, K = scores.shape
    if not 1 <= k <= K:
        raise BadK(f"k={k} outside [1, {K}]")
    true = scores[np.arange(n), labels][:, None]
    cols = np.arange(K)[None, :]
    ahead = (scores > true) | ((scores == true) & (cols < labels[:, None]))
    return ahead.sum(axis=1) < k


def topk_accuracy(scores, labels, k: int) -> float:
    return float(topk_hits(scores, labels, k).mean())
