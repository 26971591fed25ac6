import numpy as np
import pytest


def rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Finite-difference gradient of scalar f at x, one probe per element."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(x)
        flat[i] = keep - h
        dn = f(x)
        flat[i] = keep
        gf[i] = (up - dn) / (2.0 * h)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    worst = 0.0
    for a, n in zip(analytic.reshape(-1), numeric.reshape(-1)):
        worst = max(worst, rel_err(float(a), float(n)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)
