"""Hypersphere geometry, stable log-sum-exp/softplus, and seeded sampling.

Everything is float64. Random streams come from numpy's Philox counter-based
generator so a seed fully determines every draw.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimMismatch, EmptyInput, InvalidAlpha, ZeroNorm

EPS_NORM = 1e-12

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """Philox-backed generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.Philox(int(seed)))


def split_rng(seed: int, n: int) -> list[Rng]:
    """Independent generators for concurrent consumers of one seed."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def rng_state(rng: Rng) -> dict:
    """JSON-serializable snapshot of a generator's state."""
    return _to_jsonable(rng.bit_generator.state)


def set_rng_state(rng: Rng, state: dict) -> None:
    bg = rng.bit_generator
    current = bg.state
    bg.state = _from_jsonable(state, current)


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return [int(x) for x in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(obj, template):
    if isinstance(template, dict):
        return {k: _from_jsonable(obj[k], template[k]) for k in template}
    if isinstance(template, np.ndarray):
        return np.array(obj, dtype=template.dtype)
    return obj


def _as_vector(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64)


def normalize(v, eps: float = EPS_NORM) -> np.ndarray:
    v = _as_vector(v)
    n = float(np.linalg.norm(v))
    if not n > eps:
        raise ZeroNorm(f"vector norm {n:g} <= {eps:g}")
    return v / n


def normalize_rows(m, eps: float = EPS_NORM, name: str = "matrix") -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize ``m``; returns (unit rows, row norms)."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=-1)
    bad = np.flatnonzero(~(norms > eps))
    if bad.size:
        raise ZeroNorm(f"{name} row {int(bad[0])} has norm {norms[bad[0]]:g} <= {eps:g}")
    return m / norms[..., None], norms


def cosine(u, v, eps: float = EPS_NORM) -> float:
    u = _as_vector(u)
    v = _as_vector(v)
    if u.shape != v.shape:
        raise DimMismatch(f"cosine of shapes {u.shape} and {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if not (nu > eps and nv > eps):
        raise ZeroNorm("cosine of a zero-norm vector")
    c = float(np.dot(u, v)) / (nu * nv)
    return min(1.0, max(-1.0, c))


def cosine_matrix(a, b) -> np.ndarray:
    """Pairwise cosines between rows of ``a`` and rows of ``b``, clamped."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise DimMismatch(f"row dims {a.shape[-1]} and {b.shape[-1]}")
    an, _ = normalize_rows(a)
    bn, _ = normalize_rows(b)
    return np.clip(an @ bn.T, -1.0, 1.0)


def lse(xs) -> float:
    xs = np.asarray(xs, dtype=np.float64).ravel()
    if xs.size == 0:
        raise EmptyInput("lse of an empty sequence")
    m = float(xs.max())
    return m + math.log(float(np.exp(xs - m).sum()))


def lse_rows(x: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise log-sum-exp, optionally over the entries where ``mask`` is True."""
    x = np.asarray(x, dtype=np.float64)
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = x.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True)))[..., 0]


def softplus_lambda(x: float, lam: float) -> float:
    """(1/lam) * log(1 + exp(lam * x)) without overflow."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    z = lam * x
    if z > 30.0:
        return x + math.log1p(math.exp(-z)) / lam
    return math.log1p(math.exp(z)) / lam


def sample_uniform_matrix(rows: int, cols: int, alpha: float, rng: Rng) -> np.ndarray:
    """Entries drawn i.i.d. from U(alpha, 1)."""
    if not (-1.0 <= alpha < 1.0):
        raise InvalidAlpha(f"alpha must lie in [-1, 1), got {alpha}")
    if rows <= 0 or cols <= 0:
        raise ValueError("rows and cols must be positive")
    return rng.uniform(alpha, 1.0, size=(rows, cols))
