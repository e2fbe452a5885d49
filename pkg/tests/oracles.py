"""Independent reference computations used by the tests (plain numpy, no tape)."""

import numpy as np


def central_diff(f, x, h=1e-5):
    """Gradient of scalar f at x by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def rk4_exp_decay(alpha0, t, substeps):
    """RK4 for d alpha/dt = -alpha by hand: one step multiplies by the degree-4 Taylor factor."""
    h = t / substeps
    factor = 1 - h + h**2 / 2 - h**3 / 6 + h**4 / 24
    return alpha0 * factor**substeps
