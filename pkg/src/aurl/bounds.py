"""Upper bounds of the two contrastive losses and their numerical verification."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, asdict

import numpy as np

from .core import Rng
from .errors import BadK
from .losses import LossConfig, self_contrastive, sup_contrastive


class Regime(str, enum.Enum):
    CONTRASTIVE_LIKE = "contrastive_like"
    TRIPLET_LIKE = "triplet_like"


def _check_k(K: int) -> None:
    if K < 2:
        raise BadK(f"K must be >= 2, got {K}")


def self_bound(sim_pos: float, sim_max: float, K: int, lam: float) -> float:
    _check_k(K)
    return lam * (sim_max - sim_pos) + math.log(K - 1)


def sup_bound(sim_pos: float, sim_max: float, K: int, lam: float) -> float:
    _check_k(K)
    return lam * max(sim_max - sim_pos + math.log(K - 1) / lam, 0.0) + math.log(2.0)


def regime(K: int, lam: float) -> Regime:
    """Triplet-like when log(K-1)/lam < 2, contrastive-like otherwise."""
    _check_k(K)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return Regime.TRIPLET_LIKE if math.log(K - 1) / lam < 2.0 else Regime.CONTRASTIVE_LIKE


@dataclass
class BoundReport:
    loss_value: float
    bound_value: float
    slack: float
    regime: Regime


def bound_reports(v, S, pos: int, lam: float) -> tuple[BoundReport, BoundReport]:
    """(self, sup) reports for one configuration; sim_max comes from its negatives."""
    v = np.asarray(v, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    K = S.shape[0]
    cfg = LossConfig(lam)
    cos = (S @ v) / (np.linalg.norm(S, axis=1) * np.linalg.norm(v))
    sim_pos = float(cos[pos])
    sim_max = float(np.delete(cos, pos).max())
    r = regime(K, lam)
    ls = self_contrastive(v, S, pos, cfg)
    bs = self_bound(sim_pos, sim_max, K, lam)
    lp = sup_contrastive(v, S, pos, cfg).total
    bp = sup_bound(sim_pos, sim_max, K, lam)
    return BoundReport(ls, bs, bs - ls, r), BoundReport(lp, bp, bp - lp, r)


@dataclass
class BoundSummary:
    n_samples: int
    dim: int
    n_classes: int
    lambda_temp: float
    regime: Regime
    min_self_slack: float
    min_sup_slack: float
    tolerance: float = 1e-9

    @property
    def passed(self) -> bool:
        return self.min_self_slack >= -self.tolerance and self.min_sup_slack >= -self.tolerance

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regime"] = self.regime.value
        d["passed"] = self.passed
        return d


def verify_bounds(n_samples: int, dim: int, n_classes: int, lam: float, rng: Rng) -> BoundSummary:
    """Sample random unit configurations and record the smallest slack of each bound."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    _check_k(n_classes)
    min_self = math.inf
    min_sup = math.inf
    for _ in range(n_samples):
        v = rng.standard_normal(dim)
        S = rng.standard_normal((n_classes, dim))
        pos = int(rng.integers(n_classes))
        rs, rp = bound_reports(v, S, pos, lam)
        min_self = min(min_self, rs.slack)
        min_sup = min(min_sup, rp.slack)
    return BoundSummary(n_samples, dim, n_classes, lam, regime(n_classes, lam), min_self, min_sup)
