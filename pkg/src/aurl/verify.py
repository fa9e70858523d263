"""Numerical self-checks behind ``aurl verify``.

Three families of checks, all driven by one seed:

* the alignment/uniformity decomposition of the supervised contrastive loss,
* the upper bounds of both contrastive losses (and tightness at K=2),
* analytic gradients against central finite differences, for every loss and
  for a full training step through both projectors.

Single-sample losses are differenced in extended precision (mpmath), which
removes the cancellation noise that otherwise swamps gradient entries many
orders of magnitude below the loss. The full training step is differenced
through an independent forward pass in ``np.longdouble``; instances whose
relu inputs sit within ``KINK_MARGIN`` of zero are redrawn because the
function is not differentiable there.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .bounds import bound_reports
from .classgen import GeneratorConfig
from .core import Rng, sample_uniform_matrix, split_rng
from .losses import (LossConfig, classification_loss, mse_baseline, self_contrastive_grad, sup_contrastive,
                     sup_contrastive_grad, unseen_loss)
from .projectors import finite_diff_check

TOL_DECOMP = 1e-9
TOL_SLACK = 1e-9
TOL_TIGHT = 1e-12
TOL_GRAD = 1e-4
FD_STEP = 1e-6
KINK_MARGIN = 1e-4
SWEEP_D = (4, 16)
SWEEP_K = (3, 10, 100)
SWEEP_LAMBDA = (1.0, 10.0, 100.0)


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "passed": self.passed, **self.detail}


# -- decomposition and bounds ------------------------------------------------

def _sweep_instance(rng: Rng):
    d = int(rng.choice(SWEEP_D))
    K = int(rng.choice(SWEEP_K))
    lam = float(rng.choice(SWEEP_LAMBDA))
    return rng.standard_normal(d), rng.standard_normal((K, d)), int(rng.integers(K)), lam


def decomposition_check(n: int, rng: Rng) -> Check:
    """max |total - lam * SP_lam(alignment + uniformity)| over ``n`` random configurations."""
    worst = 0.0
    for _ in range(n):
        v, S, pos, lam = _sweep_instance(rng)
        b = sup_contrastive(v, S, pos, LossConfig(lam))
        worst = max(worst, abs(b.total - b.reconstructed(lam)))
    return Check("decomposition", worst, TOL_DECOMP, worst < TOL_DECOMP, {"configurations": n})


def bounds_checks(n: int, rng: Rng) -> list[Check]:
    """Minimum slack of both bounds over the sweep, plus K=2 tightness of the self bound."""
    min_self = min_sup = math.inf
    for _ in range(n):
        v, S, pos, lam = _sweep_instance(rng)
        rs, rp = bound_reports(v, S, pos, lam)
        min_self = min(min_self, rs.slack)
        min_sup = min(min_sup, rp.slack)
    tight = 0.0
    for _ in range(max(1, n // 10)):
        d = int(rng.choice(SWEEP_D))
        rs, _ = bound_reports(rng.standard_normal(d), rng.standard_normal((2, d)), int(rng.integers(2)),
                              float(rng.choice(SWEEP_LAMBDA)))
        tight = max(tight, abs(rs.slack))
    return [
        Check("self_bound_slack", min_self, -TOL_SLACK, min_self >= -TOL_SLACK, {"configurations": n}),
        Check("sup_bound_slack", min_sup, -TOL_SLACK, min_sup >= -TOL_SLACK, {"configurations": n}),
        Check("self_bound_tight_k2", tight, TOL_TIGHT, tight < TOL_TIGHT),
    ]


# -- extended-precision references for the single-sample losses ----------------

def _mp_cos(u, v):
    dot = mpmath.fsum(a * b for a, b in zip(u, v))
    return dot / (mpmath.sqrt(mpmath.fsum(a * a for a in u)) * mpmath.sqrt(mpmath.fsum(b * b for b in v)))


def _mp_lse(xs):
    return mpmath.log(mpmath.fsum(mpmath.exp(x) for x in xs))


def _mp_sup(v, S, pos, lam):
    logits = [lam * _mp_cos(v, s) for s in S]
    return _mp_lse(logits) - logits[pos]


def _mp_self(v, S, pos, lam):
    logits = [lam * _mp_cos(v, s) for s in S]
    return _mp_lse([z for j, z in enumerate(logits) if j != pos]) - logits[pos]


def _mp_unseen(theta, Z, lam):
    return mpmath.fsum(_mp_sup(theta[i], Z, i, lam) for i in range(len(theta))) / len(theta)


def _mp_mse(v, s):
    return mpmath.fsum((a - b) ** 2 for a, b in zip(v, s)) / len(v)


def mp_central_diff(f, x, step: float = FD_STEP, dps: int = 40) -> np.ndarray:
    """Central differences of ``f`` (taking an object array of mpf) at ``dps`` digits."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    with mpmath.workdps(dps):
        h = mpmath.mpf(step)
        base = np.vectorize(mpmath.mpf, otypes=[object])(x)
        for idx in np.ndindex(x.shape):
            hi, lo = base.copy(), base.copy()
            hi[idx] += h
            lo[idx] -= h
            g[idx] = float((f(hi) - f(lo)) / (2 * h))
    return g


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))))


def loss_gradient_checks(n: int, rng: Rng, lam: float = 10.0, d: int = 5, K: int = 4) -> list[Check]:
    cfg = LossConfig(lam)
    worst = {"sup": 0.0, "self": 0.0, "classification": 0.0, "unseen": 0.0, "mse": 0.0}
    for _ in range(n):
        v = rng.standard_normal(d)
        P = rng.standard_normal((K, d))
        pos = int(rng.integers(K))
        for name, grad, ref in (("sup", sup_contrastive_grad, _mp_sup), ("self", self_contrastive_grad, _mp_self)):
            g = grad(v, P, pos, cfg)
            err = max(relative_error(g.d_query, mp_central_diff(lambda x: ref(x, P, pos, lam), v)),
                      relative_error(g.d_prototypes, mp_central_diff(lambda x: ref(v, x, pos, lam), P)))
            worst[name] = max(worst[name], err)
        _, g = classification_loss(v, P, pos, cfg)
        err = max(relative_error(g.d_query, mp_central_diff(lambda x: _mp_sup(x, P, pos, lam), v)),
                  relative_error(g.d_prototypes, mp_central_diff(lambda x: _mp_sup(v, x, pos, lam), P)))
        worst["classification"] = max(worst["classification"], err)
        theta = rng.standard_normal((K, d))
        _, d_theta, d_z = unseen_loss(theta, P, cfg)
        err = max(relative_error(d_theta, mp_central_diff(lambda x: _mp_unseen(x, P, lam), theta)),
                  relative_error(d_z, mp_central_diff(lambda x: _mp_unseen(theta, x, lam), P)))
        worst["unseen"] = max(worst["unseen"], err)
        _, g = mse_baseline(v, P[pos])
        worst["mse"] = max(worst["mse"], relative_error(g, mp_central_diff(lambda x: _mp_mse(x, P[pos]), v)))
    return [Check(f"grad_{name}", err, TOL_GRAD, err < TOL_GRAD, {"instances": n, "step": FD_STEP})
            for name, err in worst.items()]


# -- the full training step ---------------------------------------------------

@dataclass
class GraphInstance:
    """A tiny end-to-end training step with its synthetic mix frozen."""

    model: object
    X: np.ndarray
    y: np.ndarray
    C: np.ndarray
    m: np.ndarray
    centers: np.ndarray
    gen: GeneratorConfig
    lam: float

    def step(self):
        from .trainer import compute_step

        return compute_step(self.model, self.X, self.y, self.C, self.lam, self.gen, None,
                            m=self.m, theta_centers=self.centers)


def make_graph_instance(rng: Rng, lam: float = 10.0, n_classes: int = 4, feature_dim: int = 5,
                        word_dim: int = 6, hidden: int = 6, embed_dim: int = 4, batch: int = 6,
                        ku: int = 5) -> GraphInstance:
    """Random small ``aurl`` model and batch; parameters are jittered away from their init."""
    from .trainer import ModelConfig, TrainConfig, build_model, init_centers

    gen = GeneratorConfig(ku=ku)
    cfg = TrainConfig(loss_mode="aurl", lambda_temp=lam, generator=gen,
                      model=ModelConfig(hidden=hidden, word_fc=hidden, embed_dim=embed_dim))
    model = build_model(cfg, feature_dim, word_dim, rng)
    model.W = init_centers(n_classes, embed_dim, rng)
    for p in model.trainable().values():
        p += 0.1 * rng.standard_normal(p.shape)
    X = rng.standard_normal((batch, feature_dim))
    y = rng.integers(n_classes, size=batch)
    C = rng.standard_normal((n_classes, word_dim))
    m = sample_uniform_matrix(ku, n_classes, gen.alpha, rng)
    return GraphInstance(model, X, y, C, m, model.W.copy(), gen, lam)


def _ref_chain(layers, params: dict, prefix: str, h, eps: float):
    for i, layer in enumerate(layers):
        if layer.kind == "linear":
            h = h @ params[f"{prefix}{i}.weight"]
            if layer.bias:
                h = h + params[f"{prefix}{i}.bias"]
        elif layer.kind == "batchnorm":
            mean = h.mean(axis=0)
            var = ((h - mean) ** 2).mean(axis=0)
            h = (h - mean) / np.sqrt(var + eps) * params[f"{prefix}{i}.scale"] + params[f"{prefix}{i}.shift"]
        else:
            h = np.where(h > 0, h, 0)
    return h


def _ref_unit(a):
    return a / np.sqrt((a * a).sum(axis=1, keepdims=True))


def _ref_xent(Q, P, labels, lam):
    logits = lam * (_ref_unit(Q) @ _ref_unit(P).T)
    top = logits.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logits - top).sum(axis=1))
    return (lse - logits[np.arange(len(labels)), labels]).mean()


def reference_total(inst: GraphInstance, params: dict):
    """Independent forward pass of L_S + L_US + L_C, in the dtype of ``params``.

    ``params`` maps the trainable names of ``inst.model`` to arrays; the
    synthetic centers and the mixing matrix stay fixed as in training.
    """
    dt = params["W"].dtype
    fv, fs = inst.model.fv, inst.model.fs
    V = _ref_chain(fv.layers, params, "fv/", inst.X.astype(dt), dt.type(fv.eps))
    S = _ref_chain(fs.layers, params, "fs/", inst.C.astype(dt), dt.type(fs.eps))
    lam = dt.type(inst.lam)
    m = inst.m.astype(dt)
    theta = m @ _ref_unit(inst.centers.astype(dt))
    z = m @ _ref_unit(S)
    return (_ref_xent(V, S, inst.y, lam) + _ref_xent(V, params["W"], inst.y, lam)
            + _ref_xent(theta, z, np.arange(len(m)), lam))


def graph_gradient_check(n: int, rng: Rng, max_redraws: int = 1000) -> Check:
    """Finite-difference check of L_S + L_US + L_C through both projectors and the centers.

    The numeric side differences :func:`reference_total` in extended
    precision (``np.longdouble``), so rounding noise stays far below the
    tolerance even for gradient entries near zero.
    """
    worst, redraws = 0.0, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # tiny configs have fewer classes than embedding dims
        for _ in range(n):
            while True:
                inst = make_graph_instance(rng)
                res = inst.step()
                if res.relu_margin > KINK_MARGIN:
                    break
                redraws += 1
                if redraws > max_redraws:
                    raise RuntimeError("could not draw a kink-free instance")
            wide = {k: v.astype(np.longdouble) for k, v in inst.model.trainable().items()}
            rep = finite_diff_check(lambda: reference_total(inst, wide), wide, res.grads,
                                    step=FD_STEP, tol=TOL_GRAD)
            worst = max(worst, rep.max_rel_error)
    return Check("grad_full_aurl_step", worst, TOL_GRAD, worst < TOL_GRAD,
                 {"instances": n, "step": FD_STEP, "kink_redraws": redraws})


# -- driver ---------------------------------------------------------------------

@dataclass
class VerifyReport:
    seed: int
    checks: list[Check]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "passed": self.passed, "seconds": self.seconds,
                "checks": [c.to_dict() for c in self.checks]}


def run_verify(samples: int = 1000, seed: int = 0, grad_instances: int = 100) -> VerifyReport:
    """All checks with independent random streams spawned from ``seed``."""
    if samples < 1 or grad_instances < 1:
        raise ValueError("samples and grad_instances must be >= 1")
    t0 = time.perf_counter()
    s_dec, s_bnd, s_loss, s_graph = split_rng(seed, 4)
    checks = [decomposition_check(samples, s_dec)]
    checks += bounds_checks(samples, s_bnd)
    checks += loss_gradient_checks(grad_instances, s_loss)
    checks.append(graph_gradient_check(grad_instances, s_graph))
    return VerifyReport(seed, checks, time.perf_counter() - t0)
