"""Train/test class disjointness filter and nearest-neighbor zero-shot inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import normalize_rows
from .dataio import ClassVocabulary, FeatureSet
from .errors import EmptyVocab, LabelOutOfVocab, RaggedGroups, ValidationError
from .metrics import DiagnosticsReport, closeness, dispersion, topk_hits


@dataclass(frozen=True)
class FilterConfig:
    tau: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.tau <= 2.0:
            raise ValidationError(f"tau must lie in [0, 2], got {self.tau}")


@dataclass(frozen=True)
class Exclusion:
    train_id: int
    test_id: int
    distance: float


@dataclass
class FilterResult:
    retained: list[int]
    excluded: list[Exclusion]


def filter_train_classes(train_vocab: ClassVocabulary, test_vocab: ClassVocabulary,
                         cfg: FilterConfig = FilterConfig()) -> FilterResult:
    """Keep a training class only if its word embedding is farther than ``tau``
    (cosine distance) from every test class's embedding."""
    if len(test_vocab) == 0:
        return FilterResult(train_vocab.ids.tolist(), [])
    a, _ = normalize_rows(train_vocab.embeddings, name="train word embedding")
    b, _ = normalize_rows(test_vocab.embeddings, name="test word embedding")
    dist = 1.0 - np.clip(a @ b.T, -1.0, 1.0)
    retained, excluded = [], []
    for i, cid in enumerate(train_vocab.ids):
        j = int(np.argmin(dist[i]))
        if dist[i, j] > cfg.tau:
            retained.append(int(cid))
        else:
            excluded.append(Exclusion(int(cid), int(test_vocab.ids[j]), float(dist[i, j])))
    return FilterResult(retained, excluded)


def _scores(Q: np.ndarray, S: np.ndarray) -> np.ndarray:
    Qn, _ = normalize_rows(Q, name="projected query")
    Sn, _ = normalize_rows(S, name="test semantic")
    return Qn @ Sn.T


def predict_batch(queries, model, test_vocab: ClassVocabulary) -> np.ndarray:
    """Class id with the highest cosine to each projected query (ties -> lowest index)."""
    if len(test_vocab) == 0:
        raise EmptyVocab("test vocabulary is empty")
    Q = model.embed_features(np.atleast_2d(np.asarray(queries, dtype=np.float64)))
    S = model.embed_vocab(test_vocab.embeddings)
    return test_vocab.ids[np.argmax(_scores(Q, S), axis=1)]


def predict(query, model, test_vocab: ClassVocabulary) -> int:
    return int(predict_batch(np.asarray(query)[None, :], model, test_vocab)[0])


@dataclass
class EvaluationSet:
    features: FeatureSet
    vocab: ClassVocabulary


def video_groups(features: FeatureSet, clips_per_video: int) -> list[np.ndarray]:
    """Row indices of each video: consecutive rows sharing a group id."""
    if clips_per_video < 1:
        raise ValidationError("clips_per_video must be >= 1")
    g = features.group_ids
    if len(g) == 0:
        return []
    starts = np.flatnonzero(np.r_[True, g[1:] != g[:-1]])
    ends = np.r_[starts[1:], len(g)]
    groups = []
    for s, e in zip(starts, ends):
        if e - s != clips_per_video:
            raise RaggedGroups(f"video group {int(g[s])} has {e - s} clips, expected {clips_per_video}")
        if np.any(features.class_ids[s:e] != features.class_ids[s]):
            raise RaggedGroups(f"video group {int(g[s])} mixes class labels")
        groups.append(np.arange(s, e))
    return groups


def evaluate(model, eval_set: EvaluationSet, clips_per_video: int = 1) -> DiagnosticsReport:
    """Zero-shot top-1/top-5 over the test vocabulary.

    A video's embedding is the mean of its clips' projected embeddings. Top-5
    is reported as top-min(5, T) when the vocabulary has fewer than 5 classes.
    """
    vocab = eval_set.vocab
    if len(vocab) == 0:
        raise EmptyVocab("test vocabulary is empty")
    fs = eval_set.features
    if len(fs) == 0:
        raise ValidationError("evaluation feature set is empty")
    try:
        rows_of = vocab.index_of(fs.class_ids)
    except KeyError as exc:
        raise LabelOutOfVocab(f"evaluation label {exc} not in test vocabulary") from None
    groups = video_groups(fs, clips_per_video)
    E = model.embed_features(fs.features)
    Q = np.stack([E[g].mean(axis=0) for g in groups])
    labels = rows_of[[g[0] for g in groups]]
    S = model.embed_vocab(vocab.embeddings)
    scores = _scores(Q, S)
    hit1 = topk_hits(scores, labels, 1)
    hit5 = topk_hits(scores, labels, min(5, len(vocab)))
    per_class = {int(vocab.ids[k]): float(hit1[labels == k].mean()) for k in np.unique(labels)}
    class_ids = vocab.ids[labels]
    present = np.isin(vocab.ids, class_ids)
    rep = DiagnosticsReport(
        closeness=closeness(Q, class_ids, S[present], vocab.ids[present]),
        dispersion=dispersion(Q, class_ids) if present.sum() >= 2 else None,
        top1=float(hit1.mean()), top5=float(hit5.mean()), per_class_accuracy=per_class,
    )
    rep.extra["n_videos"] = len(groups)
    return rep
