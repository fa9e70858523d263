"""Training loop: supervised contrastive + synthetic-class + center losses, SGD with momentum.

Loss modes (ablation rows):

* ``aurl``         L_S + L_US + L_C, both projectors and the visual centers trained
* ``aurl_no_cg``   L_S + L_C (no class generator)
* ``ls_e2e``       L_S only, both projectors trained
* ``ls_only``      L_S, only the last linear map of the video projector trained,
                   raw word embeddings used as semantics
* ``mse_baseline`` MSE to raw word embeddings, same frozen setting as ``ls_only``
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import ckpt
from .classgen import GeneratorConfig, semantics_grad, synthesize
from .core import Rng, rng_state, set_rng_state, split_rng
from .dataio import ClassVocabulary, FeatureSet
from .errors import BadIter, CorruptFile, EmptyData, LabelOutOfVocab, ShapeMismatch, ValidationError
from .losses import LossConfig, cosine_softmax_xent, mse_batch, unseen_loss
from .metrics import closeness, dispersion
from .projectors import (ProjectorParams, init_params, mlp_backward, mlp_forward, params_from_meta,
                         params_meta, video_projector_spec, word_projector_spec)

LOSS_MODES = ("aurl", "aurl_no_cg", "ls_e2e", "ls_only", "mse_baseline")
BASE_MODES = ("ls_only", "mse_baseline")


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 2048
    word_fc: int = 512
    embed_dim: int = 2048
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    base_lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    total_iters: int = 58500
    lambda_temp: float = 10.0
    seed: int = 0
    loss_mode: str = "aurl"
    eval_interval: int = 50
    probe_size: int = 2000
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValidationError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.batch_size < 2 or self.total_iters < 1 or self.eval_interval < 1:
            raise ValidationError("batch_size >= 2, total_iters >= 1 and eval_interval >= 1 required")
        if self.base_lr < 0 or self.momentum < 0 or self.weight_decay < 0 or not self.lambda_temp > 0:
            raise ValidationError("lr, momentum, weight_decay must be >= 0 and lambda_temp > 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        gen = GeneratorConfig(**d.pop("generator", {}))
        model = ModelConfig(**d.pop("model", {}))
        return cls(generator=gen, model=model, **d)


def cosine_lr(t: int, total: int, lr0: float) -> float:
    if not 0 <= t <= total:
        raise BadIter(f"iteration {t} outside [0, {total}]")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * t / total))


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], velocity: dict[str, np.ndarray],
             lr: float, momentum: float, weight_decay: float, decay: Iterable[str] = ()) -> None:
    """In-place SGD with momentum; weight decay is applied only to names in ``decay``."""
    decay = set(decay)
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        if name in decay and weight_decay:
            g = g + weight_decay * p
        v = velocity.setdefault(name, np.zeros_like(p))
        if v.shape != p.shape:
            raise ShapeMismatch(f"{name}: velocity {v.shape} vs parameter {p.shape}")
        v *= momentum
        v += g
        p -= lr * v


@dataclass
class Model:
    """Trained projectors and visual centers; ``fs=None`` means raw word embeddings are the semantics."""

    fv: ProjectorParams
    fs: ProjectorParams | None
    W: np.ndarray | None
    loss_mode: str

    def embed_features(self, X) -> np.ndarray:
        return mlp_forward(self.fv, X, "eval")[0]

    def embed_vocab(self, C) -> np.ndarray:
        C = np.asarray(C, dtype=np.float64)
        if self.fs is None:
            return C
        return mlp_forward(self.fs, C, "eval")[0]

    def trainable(self) -> dict[str, np.ndarray]:
        """Name -> array for every parameter the optimizer updates under this loss mode."""
        if self.loss_mode in BASE_MODES:
            last = max(i for i, layer in enumerate(self.fv.layers) if layer.kind == "linear")
            names = [n for n in self.fv.trainable_names() if n.startswith(f"{last}.")]
            return {f"fv/{n}": self.fv.tensors[n] for n in names}
        out = {f"fv/{n}": self.fv.tensors[n] for n in self.fv.trainable_names()}
        if self.fs is not None:
            out.update({f"fs/{n}": self.fs.tensors[n] for n in self.fs.trainable_names()})
        if self.W is not None:
            out["W"] = self.W
        return out

    def decay_names(self) -> set[str]:
        names = {f"fv/{n}" for n in self.fv.decay_names()}
        if self.fs is not None:
            names |= {f"fs/{n}" for n in self.fs.decay_names()}
        names.add("W")
        return names


def build_model(cfg: TrainConfig, feature_dim: int, word_dim: int, rng: Rng) -> Model:
    m = cfg.model
    if cfg.loss_mode in BASE_MODES:
        fv = init_params(video_projector_spec(feature_dim, m.hidden, word_dim), rng, m.bn_eps, m.bn_momentum)
        return Model(fv, None, None, cfg.loss_mode)
    fv = init_params(video_projector_spec(feature_dim, m.hidden, m.embed_dim), rng, m.bn_eps, m.bn_momentum)
    fs = init_params(word_projector_spec(word_dim, m.word_fc, m.hidden, m.embed_dim), rng, m.bn_eps, m.bn_momentum)
    return Model(fv, fs, None, cfg.loss_mode)


def init_centers(n_classes: int, embed_dim: int, rng: Rng) -> np.ndarray:
    """One visual center per class, initialized like a linear layer's weight."""
    bound = 1.0 / math.sqrt(embed_dim)
    return rng.uniform(-bound, bound, size=(n_classes, embed_dim))


@dataclass
class StepResult:
    components: dict[str, float | None]
    grads: dict[str, np.ndarray]
    m: np.ndarray | None = None
    relu_margin: float = math.inf

    @property
    def total(self) -> float:
        return float(sum(v for v in self.components.values() if v is not None))


def compute_step(model: Model, X, y, C, lam: float, gen: GeneratorConfig | None = None,
                 rng: Rng | None = None, m: np.ndarray | None = None,
                 theta_centers: np.ndarray | None = None) -> StepResult:
    """Losses and gradients for one mini-batch.

    ``X``: raw features (B, feature_dim); ``y``: vocabulary row per sample;
    ``C``: raw word embeddings of the whole seen vocabulary. With a class
    generator (``aurl``), ``m`` fixes the mixing matrix (else it is drawn
    from ``rng``) and ``theta_centers`` is the center matrix mixed into
    theta, treated as a constant (defaults to a copy of ``model.W``).
    """
    mode = model.loss_mode
    comps: dict[str, float | None] = {"loss_S": None, "loss_US": None, "loss_C": None, "loss_MSE": None}
    V, cache_v = mlp_forward(model.fv, X, "train")
    if model.fs is not None:
        S, cache_s = mlp_forward(model.fs, C, "train")
    else:
        S, cache_s = np.asarray(C, dtype=np.float64), None
    dS = np.zeros_like(S)
    used_m = None

    if mode == "mse_baseline":
        comps["loss_MSE"], dV = mse_batch(V, S[y])
    else:
        losses, dV, dS_ls = cosine_softmax_xent(V, S, y, lam)
        comps["loss_S"] = float(losses.mean())
        dS += dS_ls

    grads: dict[str, np.ndarray] = {}
    if mode in ("aurl", "aurl_no_cg"):
        lc, dV_c, dW = cosine_softmax_xent(V, model.W, y, lam)
        comps["loss_C"] = float(lc.mean())
        dV = dV + dV_c
        grads["W"] = dW
    if mode == "aurl":
        centers = model.W.copy() if theta_centers is None else theta_centers
        bank = synthesize(centers, S, gen, rng, m=m)
        lus, _, d_z = unseen_loss(bank.theta, bank.z, LossConfig(lam))
        comps["loss_US"] = lus
        dS += semantics_grad(bank.m, S, d_z)
        used_m = bank.m

    gv, _ = mlp_backward(model.fv, cache_v, dV)
    grads.update({f"fv/{n}": g for n, g in gv.items()})
    if cache_s is not None:
        gs, _ = mlp_backward(model.fs, cache_s, dS)
        grads.update({f"fs/{n}": g for n, g in gs.items()})
    wanted = model.trainable()
    margin = min(cache_v.relu_margin, math.inf if cache_s is None else cache_s.relu_margin)
    return StepResult(comps, {n: grads[n] for n in wanted}, used_m, margin)


@dataclass
class TrainData:
    features: FeatureSet
    vocab: ClassVocabulary
    rows: np.ndarray  # vocabulary row of each sample

    @classmethod
    def build(cls, features: FeatureSet, vocab: ClassVocabulary) -> "TrainData":
        if len(features) == 0:
            raise EmptyData("training feature set is empty")
        if len(vocab) < 2:
            raise ValidationError("training needs at least 2 classes")
        known = set(vocab.ids.tolist())
        missing = sorted(set(np.unique(features.class_ids).tolist()) - known)
        if missing:
            raise LabelOutOfVocab(f"labels not in vocabulary: {missing[:10]}")
        return cls(features, vocab, vocab.index_of(features.class_ids))


class Trainer:
    """Owns all mutable training state; every random draw comes from ``cfg.seed``."""

    def __init__(self, cfg: TrainConfig, features: FeatureSet, vocab: ClassVocabulary, eval_set=None):
        self.cfg = cfg
        self.data = TrainData.build(features, vocab)
        self.eval_set = eval_set
        init_rng, self.rng, probe_rng = split_rng(cfg.seed, 3)
        self.model = build_model(cfg, features.dim, vocab.word_dim, init_rng)
        if cfg.loss_mode in ("aurl", "aurl_no_cg"):
            self.model.W = init_centers(len(vocab), cfg.model.embed_dim, init_rng)
        n = len(features)
        self.probe = np.sort(probe_rng.choice(n, size=min(n, cfg.probe_size), replace=False))
        self.velocity: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in self.model.trainable().items()}
        self.fixed_m: np.ndarray | None = None
        self.iteration = 0

    # -- stepping ---------------------------------------------------------
    def step(self) -> dict:
        cfg = self.cfg
        t = self.iteration
        lr = cosine_lr(t, cfg.total_iters, cfg.base_lr)
        n = len(self.data.features)
        idx = self.rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        X = self.data.features.features[idx]
        y = self.data.rows[idx]
        C = self.data.vocab.embeddings
        m = None if cfg.generator.resample_each_step else self.fixed_m
        res = compute_step(self.model, X, y, C, cfg.lambda_temp, cfg.generator, self.rng, m=m)
        if not cfg.generator.resample_each_step and res.m is not None:
            self.fixed_m = res.m
        params = self.model.trainable()
        sgd_step(params, res.grads, self.velocity, lr, cfg.momentum, cfg.weight_decay,
                 self.model.decay_names())
        self.iteration += 1
        rec = {"iter": self.iteration, "lr": lr}
        rec.update(res.components)
        rec["loss_total"] = res.total
        if self.iteration % cfg.eval_interval == 0 or self.iteration == cfg.total_iters:
            rec.update(self.diagnostics())
        return rec

    def run(self, until: int | None = None, sink: Callable[[dict], None] | None = None) -> list[dict]:
        until = self.cfg.total_iters if until is None else min(until, self.cfg.total_iters)
        log = []
        while self.iteration < until:
            rec = self.step()
            log.append(rec)
            if sink is not None:
                sink(rec)
        return log

    def diagnostics(self) -> dict:
        fs = self.data.features
        V = self.model.embed_features(fs.features[self.probe])
        S = self.model.embed_vocab(self.data.vocab.embeddings)
        labels = fs.class_ids[self.probe]
        present = np.isin(self.data.vocab.ids, labels)
        out = {"closeness": closeness(V, labels, S[present], self.data.vocab.ids[present]),
               "dispersion": dispersion(V, labels) if present.sum() >= 2 else None}
        if self.eval_set is not None:
            from .zeroshot import evaluate

            rep = evaluate(self.model, self.eval_set)
            out["top1_unseen"] = rep.top1
            out["top5_unseen"] = rep.top5
        return out

    # -- checkpointing ----------------------------------------------------
    def save_checkpoint(self, path) -> None:
        meta = {
            "kind": "train",
            "config": self.cfg.to_dict(),
            "iteration": self.iteration,
            "rng": rng_state(self.rng),
            "fv": params_meta(self.model.fv),
            "fs": None if self.model.fs is None else params_meta(self.model.fs),
            "has_W": self.model.W is not None,
            "has_fixed_m": self.fixed_m is not None,
            "velocity": list(self.velocity),
        }
        tensors = {f"fv/{k}": v for k, v in self.model.fv.tensors.items()}
        if self.model.fs is not None:
            tensors.update({f"fs/{k}": v for k, v in self.model.fs.tensors.items()})
        if self.model.W is not None:
            tensors["W"] = self.model.W
        if self.fixed_m is not None:
            tensors["fixed_m"] = self.fixed_m
        tensors.update({f"vel/{k}": v for k, v in self.velocity.items()})
        ckpt.write_container(path, meta, tensors)

    @classmethod
    def from_checkpoint(cls, path, features: FeatureSet, vocab: ClassVocabulary, eval_set=None) -> "Trainer":
        meta, tensors = read_train_checkpoint(path)
        cfg = TrainConfig.from_dict(meta["config"])
        tr = cls(cfg, features, vocab, eval_set)
        tr.model = model_from_checkpoint(meta, tensors)
        tr.velocity = {k: tensors[f"vel/{k}"] for k in meta["velocity"]}
        tr.fixed_m = tensors.get("fixed_m")
        tr.iteration = meta["iteration"]
        set_rng_state(tr.rng, meta["rng"])
        return tr


def read_train_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    meta, tensors = ckpt.read_container(path)
    if meta.get("kind") != "train":
        raise CorruptFile(f"{path}: not a training checkpoint")
    return meta, tensors


def model_from_checkpoint(meta: dict, tensors: dict[str, np.ndarray]) -> Model:
    def sub(prefix):
        return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

    fv = params_from_meta(meta["fv"], sub("fv/"))
    fs = None if meta["fs"] is None else params_from_meta(meta["fs"], sub("fs/"))
    W = tensors["W"] if meta["has_W"] else None
    return Model(fv, fs, W, meta["config"]["loss_mode"])


def load_model(path) -> tuple[Model, TrainConfig]:
    meta, tensors = read_train_checkpoint(path)
    return model_from_checkpoint(meta, tensors), TrainConfig.from_dict(meta["config"])


@dataclass
class TrainResult:
    model: Model
    log: list[dict]
    trainer: Trainer


def train(cfg: TrainConfig, features: FeatureSet, vocab: ClassVocabulary, eval_set=None,
          sink: Callable[[dict], None] | None = None) -> TrainResult:
    tr = Trainer(cfg, features, vocab, eval_set)
    log = tr.run(sink=sink)
    return TrainResult(tr.model, log, tr)


def log_line(rec: dict) -> str:
    return json.dumps(rec, sort_keys=False)
