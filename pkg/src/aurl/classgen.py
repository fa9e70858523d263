"""Synthetic unseen classes from a shared random mix of seen-class features.

One matrix ``M ~ U(alpha, 1)`` of shape (K_u, D) mixes the row-normalized
visual centers and the row-normalized semantics of the first ``D`` seen
classes. Positive ``alpha`` interpolates, negative ``alpha`` extrapolates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import Rng, normalize_rows, sample_uniform_matrix
from .errors import DegenerateRow, DimMismatch, EmptyInput, InvalidAlpha

EPS_GEN = 1e-6
MAX_RETRIES = 100


@dataclass(frozen=True)
class GeneratorConfig:
    ku: int = 662
    d: int | None = None  # seen classes mixed; None means all of them
    alpha: float = 0.0
    resample_each_step: bool = True

    def __post_init__(self):
        if self.ku < 1:
            raise ValueError("ku must be positive")
        if self.d is not None and self.d < 1:
            raise ValueError("d must be positive")
        if not -1.0 <= self.alpha < 1.0:
            raise InvalidAlpha(f"alpha must lie in [-1, 1), got {self.alpha}")


@dataclass(frozen=True)
class SyntheticClassBank:
    theta: np.ndarray  # (K_u, d) synthetic visual centers
    z: np.ndarray  # (K_u, d) synthetic semantics
    m: np.ndarray  # (K_u, D) mixing matrix used for both


def _select(W, S, cfg: GeneratorConfig) -> tuple[np.ndarray, np.ndarray]:
    W = np.asarray(W, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if W.shape != S.shape or W.ndim != 2:
        raise DimMismatch(f"visual centers {W.shape} vs semantics {S.shape}")
    D = W.shape[0] if cfg.d is None else cfg.d
    if D > W.shape[0]:
        raise DimMismatch(f"D={D} exceeds the {W.shape[0]} available seen classes")
    return W[:D], S[:D]


def synthesize(W, S, cfg: GeneratorConfig, rng: Rng, m: np.ndarray | None = None) -> SyntheticClassBank:
    """Build (theta, z) = (M norm(W), M norm(S)).

    Rows of either output whose norm falls below ``EPS_GEN`` get their row of
    ``M`` redrawn, at most ``MAX_RETRIES`` times. Passing ``m`` skips sampling
    (used for tests and for replaying a stored bank).
    """
    W, S = _select(W, S, cfg)
    D, dim = W.shape
    if dim > D:
        warnings.warn(f"D={D} is smaller than the embedding dim {dim}; mixes span a subspace",
                      stacklevel=2)
    Wn, _ = normalize_rows(W, name="visual center")
    Sn, _ = normalize_rows(S, name="semantic")
    if m is None:
        m = sample_uniform_matrix(cfg.ku, D, cfg.alpha, rng)
    else:
        m = np.array(m, dtype=np.float64)
        if m.shape[1] != D:
            raise DimMismatch(f"mixing matrix has {m.shape[1]} columns, expected {D}")
    theta = m @ Wn
    z = m @ Sn
    for _ in range(MAX_RETRIES):
        bad = np.flatnonzero((np.linalg.norm(theta, axis=1) < EPS_GEN)
                             | (np.linalg.norm(z, axis=1) < EPS_GEN))
        if bad.size == 0:
            return SyntheticClassBank(theta, z, m)
        m[bad] = sample_uniform_matrix(bad.size, D, cfg.alpha, rng)
        theta[bad] = m[bad] @ Wn
        z[bad] = m[bad] @ Sn
    raise DegenerateRow(f"synthetic rows {bad.tolist()} stayed degenerate after {MAX_RETRIES} retries")


def semantics_grad(m: np.ndarray, S, d_z: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the full semantic matrix ``S`` given one w.r.t. ``z = m norm(S[:D])``."""
    S = np.asarray(S, dtype=np.float64)
    D = m.shape[1]
    Sn, norms = normalize_rows(S[:D], name="semantic")
    dSn = m.T @ d_z
    dS = np.zeros_like(S)
    dS[:D] = (dSn - np.sum(dSn * Sn, axis=1, keepdims=True) * Sn) / norms[:, None]
    return dS


def coverage_stats(theta, probes) -> float:
    """Mean over probes of the cosine distance to the nearest synthetic row."""
    theta = np.asarray(theta, dtype=np.float64)
    probes = np.asarray(probes, dtype=np.float64)
    if probes.size == 0 or theta.size == 0:
        raise EmptyInput("coverage needs at least one probe and one synthetic row")
    Tn, _ = normalize_rows(theta)
    Pn, _ = normalize_rows(probes)
    cos = np.clip(Pn @ Tn.T, -1.0, 1.0)
    return float(np.mean(1.0 - cos.max(axis=1)))
