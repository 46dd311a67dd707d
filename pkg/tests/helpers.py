"""Independent oracles used across the test-suite.

Everything here is deliberately written from first principles (finite
differences, brute-force sums, grid refinement, exact enumeration) and
shares no algorithmic code with the package.
"""

from __future__ import annotations

import numpy as np

from swbal.balance import dual_objective


def fd_gradient(lam, u, v, h=1e-6):
    """Central finite-difference gradient of the dual objective."""
    lam = np.asarray(lam, dtype=float)
    g = np.zeros_like(lam)
    for a in range(lam.shape[0]):
        for b in range(lam.shape[1]):
            hi = lam.copy()
            lo = lam.copy()
            hi[a, b] += h
            lo[a, b] -= h
            g[a, b] = (dual_objective(hi, u, v)[0] - dual_objective(lo, u, v)[0]) / (2 * h)
    return g


def check_objective(beta, m, y, w, tau):
    """Weighted check-loss objective, direct summation."""
    r = y - m @ np.asarray(beta, dtype=float)
    return float(np.sum(w * r * (tau - (r <= 0))))


def _check_location(r, g, w, tau):
    """Exact argmin over b of sum_i w_i check_tau(r_i - b g_i).

    Terms with g_i > 0 contribute w_i|g_i| check_tau(r_i/g_i - b); those
    with g_i < 0 flip the asymmetry to 1 - tau.  The summed subgradient
    in b is a step function through the sorted breakpoints r_i/g_i, so
    the argmin is the first breakpoint where it turns nonnegative.  The
    one-sided derivatives are re-evaluated from the definition at the
    returned point, making the step self-verifying.
    """
    live = g != 0.0
    if not np.any(live):
        return 0.0
    b = r[live] / g[live]
    v = w[live] * np.abs(g[live])
    ta = np.where(g[live] > 0.0, tau, 1.0 - tau)
    order = np.argsort(b, kind="stable")
    b, v, ta = b[order], v[order], ta[order]
    # Right derivative just after breakpoint k: passed terms pull with
    # weight (1 - ta), unpassed ones with -ta.
    right = np.cumsum(v) - np.sum(v * ta)
    k = int(np.argmax(right >= 0.0))
    best = float(b[k])
    passed = b <= best
    d_right = float(np.sum(v * passed) - np.sum(v * ta))
    d_left = float(np.sum(v * (b < best)) - np.sum(v * ta))
    assert d_left <= 1e-9 * np.sum(v) and d_right >= -1e-9 * np.sum(v)
    return best


def grid_quantile_oracle(m, y, w, tau, *, levels=60, points=41):
    """Argmin of the weighted check loss by profile grid refinement.

    The leading coordinate is scanned on a zooming one-dimensional grid
    of the profile objective, with any second coordinate minimized out
    exactly per grid point (a weighted asymmetric-L1 location problem).
    Profiling keeps the search one-dimensional, where convexity puts the
    true minimizer inside the cell pair flanking the grid argmin, so
    each zoom provably retains it; a boxed multivariate zoom can lose a
    shallow diagonal valley, this cannot.
    """
    m = np.asarray(m, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    p = m.shape[1]
    if p not in (1, 2):
        raise ValueError("profile oracle supports one or two columns")

    def profile(c):
        r = y - c * m[:, 0]
        b = _check_location(r, m[:, 1], w, tau) if p == 2 else 0.0
        if p == 2:
            r = r - b * m[:, 1]
        return float(np.sum(w * r * (tau - (r < 0)))), b

    center = np.linalg.lstsq(m * np.sqrt(w)[:, None], y * np.sqrt(w), rcond=None)[0][0]
    width = 4.0 * float(np.max(np.abs(y - np.median(y)))) + 1.0
    best_b = 0.0
    for _ in range(levels):
        grid = np.linspace(center - width, center + width, points)
        values = [profile(c) for c in grid]
        j = int(np.argmin([val for val, _ in values]))
        center, best_b = grid[j], values[j][1]
        if j in (0, points - 1):
            width *= 4.0  # argmin on the edge: widen, the minimizer is outside
        else:
            width = grid[j + 1] - grid[j - 1]  # convexity: minimizer in this cell pair
        if width <= 1e-14 * (1.0 + abs(center)):
            break
    return np.array([center, best_b][:p])


def binary_toy_bounds(q, p1, f, sig2):
    """Closed-form efficient and known-weight variance matrices.

    Binary toy: X ~ Bernoulli(q), T | X=x ~ Bernoulli(p1[x]),
    Y = f(T, X) + noise with Var = sig2, estimand (E[Y(0)], E[Y(1)]).
    Everything is an exact enumeration over the four (t, x) cells.
    """
    px = {0: 1.0 - q, 1: q}

    def pt_given(t, x):
        return p1[x] if t == 1 else 1.0 - p1[x]

    mu = {t: sum(f(t, x) * px[x] for x in (0, 1)) for t in (0, 1)}
    v_eff = np.zeros((2, 2))
    v_ineff = np.zeros((2, 2))
    for t in (0, 1):
        v_eff[t, t] = sum(
            (sig2 / pt_given(t, x) + (f(t, x) - mu[t]) ** 2) * px[x] for x in (0, 1)
        )
        v_ineff[t, t] = sum(
            (sig2 + (f(t, x) - mu[t]) ** 2) / pt_given(t, x) * px[x] for x in (0, 1)
        )
    cov = sum((f(0, x) - mu[0]) * (f(1, x) - mu[1]) * px[x] for x in (0, 1))
    v_eff[0, 1] = v_eff[1, 0] = cov
    return np.array([mu[0], mu[1]]), v_eff, v_ineff


def brute_force_density(point, data, bandwidths):
    """Plain-loop product-Gaussian KDE and its y-derivative."""
    y0, t0, x0 = point
    ys, ts, xs = data
    n = len(ys)
    h_y, h_t, h_x = bandwidths
    norm = np.sqrt(2 * np.pi)
    total = 0.0
    dtotal = 0.0
    for i in range(n):
        k = np.exp(-0.5 * ((ys[i] - y0) / h_y) ** 2) / (norm * h_y)
        k *= np.exp(-0.5 * ((ts[i] - t0) / h_t) ** 2) / (norm * h_t)
        for j in range(len(h_x)):
            k *= np.exp(-0.5 * ((xs[i, j] - x0[j]) / h_x[j]) ** 2) / (norm * h_x[j])
        total += k
        dtotal += k * (ys[i] - y0) / h_y**2
    return total / n, dtotal / n
