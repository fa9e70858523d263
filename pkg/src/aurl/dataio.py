"""Feature / vocabulary text formats, synthetic benchmark, 3-D export.

``fvec 1`` feature file::

    fvec 1 <dim> <count>
    <class_id> <group_id> <v1> ... <vdim>      # count rows, floats at 17 significant digits

``cvoc 1`` vocabulary file::

    cvoc 1 <word_dim>
    <class_id>\\t<name>\\t<floats>

where ``<floats>`` is either one prototype of ``word_dim`` values or one
vector per whitespace-separated word of ``<name>`` (averaged on load).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Rng, make_rng, normalize_rows
from .errors import (BadHeader, BadRow, DimMismatch, DuplicateId, NotThreeDim,
                     RejectionExhausted, ValidationError)


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class FeatureSet:
    class_ids: np.ndarray  # (N,) int64
    group_ids: np.ndarray  # (N,) int64
    features: np.ndarray  # (N, dim) float64

    def __post_init__(self):
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        self.group_ids = np.asarray(self.group_ids, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DimMismatch("features must be a 2-D array")
        n = self.features.shape[0]
        if self.class_ids.shape != (n,) or self.group_ids.shape != (n,):
            raise DimMismatch("one class id and one group id per feature row")
        if n and self.class_ids.min() < 0:
            raise ValidationError("class ids must be nonnegative")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def __eq__(self, other) -> bool:
        return (isinstance(other, FeatureSet)
                and self.features.shape == other.features.shape
                and np.array_equal(self.class_ids, other.class_ids)
                and np.array_equal(self.group_ids, other.group_ids)
                and np.array_equal(self.features.view(np.uint64), other.features.view(np.uint64)))


@dataclass
class ClassVocabulary:
    ids: np.ndarray  # (K,) int64
    names: list[str]
    embeddings: np.ndarray  # (K, word_dim)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.ids) or len(self.names) != len(self.ids):
            raise DimMismatch("vocabulary ids, names and embeddings must align")
        if len(set(self.ids.tolist())) != len(self.ids):
            raise DuplicateId("duplicate class id in vocabulary")

    @property
    def word_dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self, class_ids) -> np.ndarray:
        """Row positions for the given class ids; raises KeyError on unknown ids."""
        pos = {int(c): k for k, c in enumerate(self.ids)}
        return np.array([pos[int(c)] for c in np.asarray(class_ids).ravel()], dtype=np.int64)

    def subset(self, class_ids) -> "ClassVocabulary":
        rows = self.index_of(class_ids)
        return ClassVocabulary(self.ids[rows], [self.names[r] for r in rows], self.embeddings[rows])

    def __eq__(self, other) -> bool:
        return (isinstance(other, ClassVocabulary)
                and np.array_equal(self.ids, other.ids)
                and self.names == other.names
                and self.embeddings.shape == other.embeddings.shape
                and np.array_equal(self.embeddings.view(np.uint64), other.embeddings.view(np.uint64)))


def write_features(path, fs: FeatureSet) -> None:
    lines = [f"fvec 1 {fs.dim} {len(fs)}"]
    for c, g, row in zip(fs.class_ids, fs.group_ids, fs.features):
        lines.append(" ".join([str(int(c)), str(int(g))] + [fmt(x) for x in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_float(tok: str, where: str) -> float:
    try:
        x = float(tok)
    except ValueError:
        raise BadRow(f"{where}: not a number: {tok!r}") from None
    if not np.isfinite(x):
        raise BadRow(f"{where}: non-finite value {tok!r}")
    return x


def _parse_int(tok: str, where: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise BadRow(f"{where}: not an integer: {tok!r}") from None


def read_features(path) -> FeatureSet:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise BadHeader(f"{path}:1: empty file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "fvec" or head[1] != "1":
        raise BadHeader(f"{path}:1: expected 'fvec 1 <dim> <count>', got {lines[0]!r}")
    try:
        dim, count = int(head[2]), int(head[3])
    except ValueError:
        raise BadHeader(f"{path}:1: dim and count must be integers") from None
    if dim < 1 or count < 0:
        raise BadHeader(f"{path}:1: invalid dim/count")
    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != count:
        raise BadRow(f"{path}: header declares {count} rows, found {len(body)}")
    cls = np.empty(count, dtype=np.int64)
    grp = np.empty(count, dtype=np.int64)
    feats = np.empty((count, dim), dtype=np.float64)
    for i, line in enumerate(body):
        where = f"{path}:{i + 2}"
        toks = line.split()
        if len(toks) != dim + 2:
            raise DimMismatch(f"{where}: expected {dim + 2} fields, got {len(toks)}")
        cls[i] = _parse_int(toks[0], where)
        grp[i] = _parse_int(toks[1], where)
        if cls[i] < 0:
            raise BadRow(f"{where}: negative class id")
        feats[i] = [_parse_float(t, where) for t in toks[2:]]
    return FeatureSet(cls, grp, feats)


def write_vocab(path, vocab: ClassVocabulary) -> None:
    lines = [f"cvoc 1 {vocab.word_dim}"]
    for c, name, emb in zip(vocab.ids, vocab.names, vocab.embeddings):
        if "\t" in name or "\n" in name:
            raise ValidationError(f"class name {name!r} contains a tab or newline")
        lines.append(f"{int(c)}\t{name}\t" + " ".join(fmt(x) for x in emb))
    Path(path).write_text("\n".join(lines) + "\n")


def read_vocab(path) -> ClassVocabulary:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise BadHeader(f"{path}:1: empty file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "cvoc" or head[1] != "1":
        raise BadHeader(f"{path}:1: expected 'cvoc 1 <word_dim>', got {lines[0]!r}")
    try:
        wd = int(head[2])
    except ValueError:
        raise BadHeader(f"{path}:1: word_dim must be an integer") from None
    if wd < 1:
        raise BadHeader(f"{path}:1: word_dim must be positive")
    ids, names, embs = [], [], []
    seen: dict[int, int] = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        where = f"{path}:{i}"
        parts = line.split("\t")
        if len(parts) != 3:
            raise BadRow(f"{where}: expected '<id>\\t<name>\\t<floats>'")
        cid = _parse_int(parts[0].strip(), where)
        if cid in seen:
            raise DuplicateId(f"{where}: class id {cid} already defined on line {seen[cid]}")
        seen[cid] = i
        name = parts[1]
        vals = np.array([_parse_float(t, where) for t in parts[2].split()])
        n_words = len(name.split())
        if vals.size == wd:
            proto = vals
        elif n_words > 1 and vals.size == n_words * wd:
            proto = vals.reshape(n_words, wd).mean(axis=0)
        else:
            raise DimMismatch(f"{where}: {vals.size} values is neither {wd} nor {n_words} x {wd}")
        ids.append(cid)
        names.append(name)
        embs.append(proto)
    emb = np.array(embs, dtype=np.float64).reshape(len(embs), wd)
    return ClassVocabulary(np.array(ids, dtype=np.int64), names, emb)


@dataclass(frozen=True)
class SynthBenchConfig:
    d_raw: int = 32
    latent_dim: int | None = 8
    n_seen_classes: int = 20
    n_unseen_classes: int = 8
    samples_per_class: int = 100
    cluster_spread: float = 0.3
    word_dim: int = 300
    word_noise: float = 0.5
    word_anisotropy: float = 0.0
    nuisance_dim: int = 8
    nuisance_scale: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.cluster_spread <= 0 or self.word_noise < 0:
            raise ValidationError("cluster_spread must be > 0 and word_noise >= 0")
        if self.latent_dim is not None and not 1 <= self.latent_dim <= self.d_raw:
            raise ValidationError("latent_dim must lie in [1, d_raw]")
        r = self.d_raw if self.latent_dim is None else self.latent_dim
        if self.nuisance_dim < 0 or r + self.nuisance_dim > self.d_raw or self.nuisance_scale < 0:
            raise ValidationError("nuisance_dim must lie in [0, d_raw - latent_dim] and nuisance_scale >= 0")
        if min(self.d_raw, self.n_seen_classes, self.n_unseen_classes, self.samples_per_class, self.word_dim) < 1:
            raise ValidationError("benchmark sizes must be positive")


@dataclass
class Benchmark:
    train: FeatureSet
    train_vocab: ClassVocabulary
    test: FeatureSet
    test_vocab: ClassVocabulary


MAX_CLASS_COS = 0.95


def _class_directions(n: int, d: int, rng: Rng, attempts: int = 1000) -> np.ndarray:
    dirs = np.empty((0, d))
    tries = 0
    while dirs.shape[0] < n:
        tries += 1
        if tries > attempts * n:
            raise RejectionExhausted(f"could not place {n} directions with pairwise cosine < {MAX_CLASS_COS}")
        cand = rng.standard_normal(d)
        cand /= np.linalg.norm(cand)
        if dirs.shape[0] == 0 or np.max(dirs @ cand) < MAX_CLASS_COS:
            dirs = np.vstack([dirs, cand])
    return dirs


def synth_benchmark(cfg: SynthBenchConfig = SynthBenchConfig(), rng: Rng | None = None,
                    attempts: int = 100) -> Benchmark:
    """Seen/unseen classes drawn as unit directions with noisy samples around each.

    Class directions are Gaussian in a ``latent_dim``-dimensional subspace
    (a random orthonormal basis of the ``d_raw`` space; ``None`` means the
    full space), so unseen classes are mixtures of seen ones. The sample
    noise is Gaussian with unit variance in every direction except a fixed
    ``nuisance_dim``-dimensional subspace, orthogonal to the class subspace,
    where its standard deviation is ``nuisance_scale``. That subspace stands
    in for class-independent variation (background, camera) that a learned
    projector can discard but a fixed one cannot. Word
    embeddings are a shared random linear image of the class direction plus
    noise, so word similarity tracks visual similarity; ``word_anisotropy``
    adds a shared offset to every word vector, the way real word embeddings
    crowd around a common direction. A draw whose
    seen and unseen word embeddings come within cosine distance 0.05 is
    rejected and redrawn.
    """
    rng = make_rng(cfg.seed) if rng is None else rng
    K = cfg.n_seen_classes + cfg.n_unseen_classes
    for _ in range(attempts):
        r = cfg.d_raw if cfg.latent_dim is None else cfg.latent_dim
        q, _ = np.linalg.qr(rng.standard_normal((cfg.d_raw, r + cfg.nuisance_dim)))
        basis, nuisance = q[:, :r], q[:, r:]
        dirs = _class_directions(K, r, rng) @ basis.T
        proj = rng.standard_normal((cfg.d_raw, cfg.word_dim))
        common = rng.standard_normal(cfg.word_dim)
        words = (dirs @ proj + cfg.word_noise * rng.standard_normal((K, cfg.word_dim))
                 + cfg.word_anisotropy * common)
        wn, _ = normalize_rows(words)
        cross = wn[:cfg.n_seen_classes] @ wn[cfg.n_seen_classes:].T
        if np.max(cross) < 1.0 - 0.05:
            break
    else:
        raise RejectionExhausted("could not draw disjoint seen/unseen vocabularies")

    def samples(class_range) -> FeatureSet:
        rows, cls = [], []
        for k in class_range:
            noise = rng.standard_normal((cfg.samples_per_class, cfg.d_raw))
            noise += (cfg.nuisance_scale - 1.0) * (noise @ nuisance) @ nuisance.T
            x, _ = normalize_rows(dirs[k] + cfg.cluster_spread * noise)
            rows.append(x)
            cls.extend([k] * cfg.samples_per_class)
        feats = np.vstack(rows)
        return FeatureSet(np.array(cls), np.arange(len(cls)), feats)

    seen = range(cfg.n_seen_classes)
    unseen = range(cfg.n_seen_classes, K)
    names = [f"class {k:03d}" for k in range(K)]

    def vocab(class_range) -> ClassVocabulary:
        ids = np.array(list(class_range))
        return ClassVocabulary(ids, [names[k] for k in ids], words[ids])

    train = samples(seen)
    test = samples(unseen)
    return Benchmark(train, vocab(seen), test, vocab(unseen))


def write_benchmark(out_dir, bench: Benchmark) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_features(out / "train.fvec", bench.train)
    write_vocab(out / "train.cvoc", bench.train_vocab)
    write_features(out / "test.fvec", bench.test)
    write_vocab(out / "test.cvoc", bench.test_vocab)


def read_benchmark(data_dir) -> Benchmark:
    d = Path(data_dir)
    return Benchmark(read_features(d / "train.fvec"), read_vocab(d / "train.cvoc"),
                     read_features(d / "test.fvec"), read_vocab(d / "test.cvoc"))


def export_projection(path, V, labels, S, class_ids) -> int:
    """Write unit 3-vectors, visual rows (``v``) then semantic rows (``s``). Returns the row count."""
    V = np.asarray(V, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if V.shape[1] != 3 or S.shape[1] != 3:
        raise NotThreeDim(f"export needs 3-D embeddings, got {V.shape[1]} and {S.shape[1]}")
    Vn, _ = normalize_rows(V)
    Sn, _ = normalize_rows(S)
    lines = []
    for kind, ids, rows in (("v", labels, Vn), ("s", class_ids, Sn)):
        for c, r in zip(ids, rows):
            lines.append(f"{int(c)} {kind} " + " ".join(fmt(x) for x in r))
    Path(path).write_text("\n".join(lines) + "\n")
    return len(lines)
