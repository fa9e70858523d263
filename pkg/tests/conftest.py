import numpy as np
import pytest

from aurl.core import make_rng


@pytest.fixture
def rng():
    return make_rng(20240601)


def central_diff(f, x, step=1e-4):
    """Fourth-order central-difference gradient of scalar ``f`` at array ``x``.

    The five-point stencil lets the step stay large enough that rounding noise
    does not swamp gradient entries that are many orders below the loss value.
    """
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        vals = []
        for k in (2, 1, -1, -2):
            x[idx] = orig + k * step
            vals.append(f(x))
        x[idx] = orig
        g[idx] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * step)
    return g


def max_rel_error(a, n):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))))


def mp_grad(f, x, dps=40, step="1e-6"):
    """Central difference of an mpmath-valued ``f`` evaluated at ``dps`` digits.

    ``f`` receives an object array of ``mpf`` shaped like ``x``. Extended
    precision removes the cancellation noise that otherwise dominates gradient
    entries many orders smaller than the loss itself.
    """
    import mpmath

    x = np.asarray(x, dtype=np.float64)
    with mpmath.workdps(dps):
        h = mpmath.mpf(step)
        base = np.vectorize(mpmath.mpf, otypes=[object])(x)
        g = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            hi, lo = base.copy(), base.copy()
            hi[idx] += h
            lo[idx] -= h
            g[idx] = float((f(hi) - f(lo)) / (2 * h))
    return g


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
