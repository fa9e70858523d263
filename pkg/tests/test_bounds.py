import math

import numpy as np
import pytest

from aurl.bounds import Regime, bound_reports, regime, self_bound, sup_bound, verify_bounds
from aurl.core import make_rng
from aurl.errors import BadK
from aurl.losses import LossConfig, self_contrastive, sup_contrastive


def test_self_bound_examples():
    assert self_bound(0.3, 0.3, 2, 10) == 0
    assert self_bound(1, 0, 3, 10) == pytest.approx(-10 + math.log(2), abs=1e-15)
    with pytest.raises(BadK):
        self_bound(0, 0, 1, 10)


def test_sup_bound_examples():
    assert sup_bound(0.2, 0.2, 2, 10) == pytest.approx(math.log(2), abs=1e-15)
    assert sup_bound(1, -1, 2, 10) == pytest.approx(math.log(2), abs=1e-15)
    with pytest.raises(BadK):
        sup_bound(0, 0, 0, 10)


def test_regime_examples():
    assert math.log(661) / 10 == pytest.approx(0.649375, abs=1e-6)
    assert regime(662, 10) is Regime.TRIPLET_LIKE
    for lam in (0.01, 1, 1000):
        assert regime(2, lam) is Regime.TRIPLET_LIKE
    assert regime(10**9, 1) is Regime.CONTRASTIVE_LIKE
    with pytest.raises(BadK):
        regime(1, 1)


def _direct_slacks(v, S, pos, lam):
    """Bounds evaluated straight from their definitions, independent of bound_reports."""
    cfg = LossConfig(lam)
    cos = [float(np.dot(v, s) / (np.linalg.norm(v) * np.linalg.norm(s))) for s in S]
    sim_pos = cos[pos]
    sim_max = max(c for j, c in enumerate(cos) if j != pos)
    K = len(S)
    self_b = lam * (sim_max - sim_pos + math.log(K - 1) / lam)
    sup_b = lam * max(sim_max - sim_pos + math.log(K - 1) / lam, 0) + math.log(2)
    return self_b - self_contrastive(v, S, pos, cfg), sup_b - sup_contrastive(v, S, pos, cfg).total


def test_bounds_hold_on_random_instances():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        K = int(rng.integers(2, 12))
        v = rng.standard_normal(6)
        S = rng.standard_normal((K, 6))
        pos = int(rng.integers(K))
        lam = float(rng.choice([1, 10, 100]))
        s_self, s_sup = _direct_slacks(v, S, pos, lam)
        assert s_self >= -1e-9 and s_sup >= -1e-9
        rs, rp = bound_reports(v, S, pos, lam)
        assert abs(rs.slack - s_self) < 1e-9 and abs(rp.slack - s_sup) < 1e-9


def test_self_bound_tight_for_two_classes():
    rng = np.random.default_rng(2)
    for _ in range(100):
        v = rng.standard_normal(5)
        S = rng.standard_normal((2, 5))
        rs, _ = bound_reports(v, S, 0, 10.0)
        assert abs(rs.slack) < 1e-12


def test_sup_bound_is_self_bound_plus_log2_when_unclamped():
    rng = np.random.default_rng(3)
    for _ in range(200):
        v = rng.standard_normal(4)
        S = rng.standard_normal((6, 4))
        rs, rp = bound_reports(v, S, 0, 1.0)
        if rs.bound_value > 0:
            assert rp.bound_value == pytest.approx(rs.bound_value + math.log(2), abs=1e-12)
        else:
            assert rp.bound_value == pytest.approx(math.log(2), abs=1e-12)


def test_verify_bounds_summary():
    rep = verify_bounds(1000, 8, 5, 10.0, make_rng(7))
    assert rep.passed
    assert rep.min_self_slack >= -1e-9 and rep.min_sup_slack >= -1e-9
    again = verify_bounds(1000, 8, 5, 10.0, make_rng(7))
    assert again.to_dict() == rep.to_dict()
