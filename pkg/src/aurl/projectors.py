"""MLP projectors (linear / batchnorm / relu chains) with hand-written backprop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Rng
from .errors import BadSpec, BatchTooSmall, DimMismatch, StaleCache

LINEAR, BATCHNORM, RELU = "linear", "batchnorm", "relu"


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    bias: bool = True  # linear only

    def to_dict(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim, "bias": self.bias}


def linear(in_dim: int, out_dim: int, bias: bool = True) -> LayerSpec:
    return LayerSpec(LINEAR, in_dim, out_dim, bias)


def batchnorm(dim: int) -> LayerSpec:
    return LayerSpec(BATCHNORM, dim, dim, False)


def relu(dim: int) -> LayerSpec:
    return LayerSpec(RELU, dim, dim, False)


def mlp3(in_dim: int, hidden: int, out_dim: int) -> list[LayerSpec]:
    """fc+bn+relu, fc+bn+relu, fc+bn. A bias in front of batchnorm is a no-op, so it is omitted."""
    return [
        linear(in_dim, hidden, bias=False), batchnorm(hidden), relu(hidden),
        linear(hidden, hidden, bias=False), batchnorm(hidden), relu(hidden),
        linear(hidden, out_dim, bias=False), batchnorm(out_dim),
    ]


def video_projector_spec(in_dim: int = 512, hidden: int = 2048, out_dim: int = 2048) -> list[LayerSpec]:
    return mlp3(in_dim, hidden, out_dim)


def word_projector_spec(in_dim: int = 300, first: int = 512, hidden: int = 2048,
                        out_dim: int = 2048) -> list[LayerSpec]:
    # the first bias would pass through another linear map into batchnorm, which cancels it
    return [linear(in_dim, first, bias=False)] + mlp3(first, hidden, out_dim)


def validate_spec(spec) -> list[LayerSpec]:
    spec = list(spec)
    if not spec:
        raise BadSpec("empty layer chain")
    for i, layer in enumerate(spec):
        if layer.kind not in (LINEAR, BATCHNORM, RELU):
            raise BadSpec(f"layer {i}: unknown kind {layer.kind!r}")
        if layer.in_dim < 1 or layer.out_dim < 1:
            raise BadSpec(f"layer {i}: dims must be positive")
        if layer.kind != LINEAR and layer.in_dim != layer.out_dim:
            raise BadSpec(f"layer {i}: {layer.kind} must preserve dimension")
        if i and spec[i - 1].out_dim != layer.in_dim:
            raise BadSpec(f"layer {i}: input dim {layer.in_dim} != previous output {spec[i - 1].out_dim}")
    return spec


@dataclass
class ProjectorParams:
    """Layer chain plus named float64 tensors.

    Tensor names are ``"<layer>.<field>"`` with fields ``weight`` (in x out),
    ``bias``, ``scale``, ``shift``, ``running_mean``, ``running_var``.
    Insertion order of ``tensors`` is the declaration order used on disk.
    """

    layers: list[LayerSpec]
    tensors: dict[str, np.ndarray]
    eps: float = 1e-5
    momentum: float = 0.1

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def trainable_names(self) -> list[str]:
        return [n for n in self.tensors if not n.endswith(("running_mean", "running_var"))]

    def decay_names(self) -> list[str]:
        """Tensors subject to weight decay (linear layers only)."""
        return [n for n in self.tensors if n.endswith((".weight", ".bias"))]

    def copy(self) -> "ProjectorParams":
        return ProjectorParams(list(self.layers), {k: v.copy() for k, v in self.tensors.items()},
                               self.eps, self.momentum)


def init_params(spec, rng: Rng, eps: float = 1e-5, momentum: float = 0.1) -> ProjectorParams:
    """Linear weights ~ U(-1/sqrt(in), 1/sqrt(in)), zero biases, identity batchnorm."""
    spec = validate_spec(spec)
    tensors: dict[str, np.ndarray] = {}
    for i, layer in enumerate(spec):
        if layer.kind == LINEAR:
            bound = 1.0 / math.sqrt(layer.in_dim)
            tensors[f"{i}.weight"] = rng.uniform(-bound, bound, size=(layer.in_dim, layer.out_dim))
            if layer.bias:
                tensors[f"{i}.bias"] = np.zeros(layer.out_dim)
        elif layer.kind == BATCHNORM:
            tensors[f"{i}.scale"] = np.ones(layer.out_dim)
            tensors[f"{i}.shift"] = np.zeros(layer.out_dim)
            tensors[f"{i}.running_mean"] = np.zeros(layer.out_dim)
            tensors[f"{i}.running_var"] = np.ones(layer.out_dim)
    return ProjectorParams(spec, tensors, eps, momentum)


@dataclass
class ForwardCache:
    mode: str
    owner: int
    batch: int
    saved: list = field(default_factory=list)
    relu_margin: float = math.inf  # smallest |input| seen by any relu; gradient checks avoid kinks


def mlp_forward(params: ProjectorParams, X, mode: str = "train") -> tuple[np.ndarray, ForwardCache]:
    """Run the chain. Train mode normalizes with batch statistics and updates running stats."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.in_dim:
        raise DimMismatch(f"input shape {X.shape}, expected (batch, {params.in_dim})")
    n = X.shape[0]
    has_bn = any(layer.kind == BATCHNORM for layer in params.layers)
    if mode == "train" and has_bn and n < 2:
        raise BatchTooSmall(f"batchnorm in train mode needs batch >= 2, got {n}")
    t = params.tensors
    cache = ForwardCache(mode, id(params), n)
    h = X
    for i, layer in enumerate(params.layers):
        if layer.kind == LINEAR:
            cache.saved.append(h)
            h = h @ t[f"{i}.weight"]
            if layer.bias:
                h = h + t[f"{i}.bias"]
        elif layer.kind == BATCHNORM:
            if mode == "train":
                mean = h.mean(axis=0)
                var = h.var(axis=0)
                rm, rv = t[f"{i}.running_mean"], t[f"{i}.running_var"]
                rm *= 1.0 - params.momentum
                rm += params.momentum * mean
                # running variance tracks the unbiased estimate
                rv *= 1.0 - params.momentum
                rv += params.momentum * var * (n / (n - 1))
            else:
                mean = t[f"{i}.running_mean"]
                var = t[f"{i}.running_var"]
            inv_std = 1.0 / np.sqrt(var + params.eps)
            xhat = (h - mean) * inv_std
            cache.saved.append((xhat, inv_std))
            h = xhat * t[f"{i}.scale"] + t[f"{i}.shift"]
        else:
            cache.saved.append(h > 0)
            if h.size:
                cache.relu_margin = min(cache.relu_margin, float(np.abs(h).min()))
            h = np.maximum(h, 0.0)
    return h, cache


def mlp_backward(params: ProjectorParams, cache: ForwardCache, dY) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of a train-mode forward pass; batch statistics are differentiated through."""
    if cache.mode != "train" or cache.owner != id(params) or len(cache.saved) != len(params.layers):
        raise StaleCache("backward needs the train-mode cache produced by these params")
    dY = np.asarray(dY, dtype=np.float64)
    if dY.shape != (cache.batch, params.out_dim):
        raise StaleCache(f"upstream gradient shape {dY.shape} does not match cached forward")
    t = params.tensors
    grads: dict[str, np.ndarray] = {}
    g = dY
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        saved = cache.saved[i]
        if layer.kind == LINEAR:
            grads[f"{i}.weight"] = saved.T @ g
            if layer.bias:
                grads[f"{i}.bias"] = g.sum(axis=0)
            g = g @ t[f"{i}.weight"].T
        elif layer.kind == BATCHNORM:
            xhat, inv_std = saved
            grads[f"{i}.scale"] = np.sum(g * xhat, axis=0)
            grads[f"{i}.shift"] = g.sum(axis=0)
            dxhat = g * t[f"{i}.scale"]
            n = g.shape[0]
            g = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
        else:
            g = g * saved
    ordered = {name: grads[name] for name in params.trainable_names()}
    return ordered, g


@dataclass
class FDReport:
    max_rel_error: float
    worst_name: str | None
    worst_index: tuple | None
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def finite_diff_check(fn: Callable[[], float], params: dict[str, np.ndarray],
                      analytic: dict[str, np.ndarray], step: float = 1e-6, tol: float = 1e-4,
                      max_coords: int | None = None, rng: Rng | None = None) -> FDReport:
    """Compare ``analytic`` against central differences of ``fn``.

    ``fn`` reads the arrays in ``params``, which are perturbed in place and
    restored. With ``max_coords`` set, a random subset of that many
    coordinates (at least 200) is checked instead of all of them.
    """
    coords = [(name, idx) for name, arr in params.items() for idx in np.ndindex(arr.shape)]
    if max_coords is not None and len(coords) > max(max_coords, 200):
        if rng is None:
            raise ValueError("rng required for coordinate subsampling")
        pick = rng.choice(len(coords), size=max(max_coords, 200), replace=False)
        coords = [coords[j] for j in sorted(pick)]
    worst = (0.0, None, None)
    for name, idx in coords:
        arr = params[name]
        orig = arr[idx]
        arr[idx] = orig + step
        fp = fn()
        arr[idx] = orig - step
        fm = fn()
        arr[idx] = orig
        numeric = float((fp - fm) / (2.0 * step))
        a = float(analytic[name][idx])
        rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        if rel > worst[0] or worst[1] is None:
            worst = (rel, name, idx)
    return FDReport(worst[0], worst[1], worst[2], len(coords), tol)


def params_meta(params: ProjectorParams) -> dict:
    return {"layers": [layer.to_dict() for layer in params.layers],
            "eps": params.eps, "momentum": params.momentum,
            "names": list(params.tensors)}


def params_from_meta(meta: dict, tensors: dict[str, np.ndarray]) -> ProjectorParams:
    layers = validate_spec(LayerSpec(**d) for d in meta["layers"])
    ordered = {name: tensors[name] for name in meta["names"]}
    return ProjectorParams(layers, ordered, meta["eps"], meta["momentum"])


def save_params(path, params: ProjectorParams) -> None:
    from .ckpt import write_container

    write_container(path, {"kind": "projector", "projector": params_meta(params)}, params.tensors)


def load_params(path) -> ProjectorParams:
    from .ckpt import read_container
    from .errors import CorruptFile

    meta, tensors = read_container(path)
    if meta.get("kind") != "projector":
        raise CorruptFile(f"{path}: not a projector checkpoint")
    return params_from_meta(meta["projector"], tensors)
