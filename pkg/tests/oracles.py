"""Independent reference computations used by the acceptance checks.

Nothing here imports the estimator or solver internals.
"""

import math

import numpy as np


def _coefficients(tup, actions, decisions):
    """Per-day (b**t, low-cost coefficient, high-cost offset, lambda) by forward recursion."""
    lam_l, lam_h, b = tup
    n = len(actions)
    pw, kc, hc, lam = (np.empty(n) for _ in range(4))
    p, k, h = 1.0, 0.0, 0.0
    for t in range(n):
        low = int(actions[t]) == 0
        pw[t], kc[t], hc[t], lam[t] = p, k, h, lam_l if low else lam_h
        p *= b
        k = b * k + (1.0 if low and decisions[t] else 0.0)
        h = b * h + (0.0 if low or not decisions[t] else 1.0)
    return pw, kc, hc, lam


def grid_objective(tup, actions, decisions, c_values, x_values):
    """Log-likelihood on the full (c, x0) product grid, shape (len(c), len(x))."""
    pw, kc, hc, lam = _coefficients(tup, actions, decisions)
    d = np.asarray(decisions, dtype=bool)
    x_values = np.asarray(x_values, dtype=float)
    # adherent days contribute -lam * x_t, which is affine in (c, x0)
    a_x, a_c, a_0 = -(lam[d] * pw[d]).sum(), -(lam[d] * kc[d]).sum(), -(lam[d] * hc[d]).sum()
    out = np.empty((len(c_values), len(x_values)))
    base = pw[~d, None] * x_values[None, :]
    for i, c in enumerate(c_values):
        z = lam[~d, None] * (base + (kc[~d] * c + hc[~d])[:, None])
        with np.errstate(divide="ignore"):
            term = np.log(-np.expm1(-z)).sum(axis=0)
        out[i] = a_x * x_values + a_c * c + a_0 + term
    return out


def brute_force_argmax(tup, actions, decisions, step=1e-3, zoom_step=1e-5, zoom_halfwidth=2e-3):
    """Exhaustive search on a ``step`` grid over [0,1] x [0, x_bar], then a finer
    exhaustive grid of half-width ``zoom_halfwidth`` around the coarse winner."""
    x_bar = 1.0 / (1.0 - tup[2])
    cs = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    xs = np.linspace(0.0, x_bar, int(math.ceil(x_bar / step)) + 1)
    f = grid_objective(tup, actions, decisions, cs, xs)
    i, j = np.unravel_index(np.argmax(f), f.shape)
    coarse = (cs[i], xs[j], f[i, j])
    m = int(round(zoom_halfwidth / zoom_step))
    fine_c = np.clip(cs[i] + zoom_step * np.arange(-m, m + 1), 0.0, 1.0)
    fine_x = np.clip(xs[j] + zoom_step * np.arange(-m, m + 1), 0.0, x_bar)
    g = grid_objective(tup, actions, decisions, fine_c, fine_x)
    k, l = np.unravel_index(np.argmax(g), g.shape)
    return coarse, (fine_c[k], fine_x[l], g[k, l])
