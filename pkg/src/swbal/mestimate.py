"""Weighted M-estimation of outcome-model coefficients.

Given weights pi (estimated by the balance module or supplied
externally), the coefficient estimate solves

    min_beta  sum_i pi_i L(Y_i - m(T_i)' beta)

for one of the three losses.  Squared error reduces to weighted least
squares.  The expectile loss is solved by iteratively reweighted least
squares on the asymmetry weights.  The check loss is solved by damped
Newton continuation on a Huberized surrogate whose smoothing width
shrinks geometrically (the IRLS weight matrix supplies the step model
where the surrogate Hessian is singular); the reported first-order
condition is the surrogate's at the final width (the exact kink
derivative is a step function whose jumps are O(1/N), so it cannot be
driven to zero on finite samples).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, RankDeficientError
from .model import Dataset, LinkSpec, LossSpec

__all__ = ["FitResult", "fit", "fit_known_weights", "weighted_quantile"]

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class FitResult:
    """Coefficients and convergence record from one weighted fit."""

    beta: np.ndarray
    loss: LossSpec
    link: LinkSpec
    converged: bool
    iterations: int
    foc_norm: float
    objective: float

    @property
    def p(self) -> int:
        return self.beta.shape[0]


def weighted_quantile(values: np.ndarray, weights: np.ndarray, tau: float) -> float:
    """Smallest v with weighted CDF F_w(v) >= tau."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape:
        raise DataError("values and weights must have matching shapes")
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    order = np.argsort(values, kind="stable")
    cw = np.cumsum(weights[order])
    target = tau * cw[-1]
    idx = int(np.searchsorted(cw, target, side="left"))
    return float(values[order][min(idx, len(values) - 1)])


def _weighted_ls(m: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    gram = m.T @ (m * w[:, None])
    ev = np.linalg.eigvalsh(gram)
    if ev[0] <= 0 or ev[-1] / ev[0] > _COND_LIMIT:
        raise RankDeficientError(
            f"weighted design Gram is numerically singular (cond ~ {ev[-1] / max(ev[0], 1e-300):.2e})"
        )
    return np.linalg.solve(gram, m.T @ (w * y))


def _foc(beta, m, y, w, deriv):
    r = y - m @ beta
    return (m * (w * deriv(r))[:, None]).mean(axis=0)


def _foc_scale(m, y, beta, w, loss):
    r = y - m @ beta
    return 1.0 + float(np.mean(w * np.abs(loss.derivative(r)) * np.abs(m).max(axis=1)))


def fit(
    dataset: Dataset,
    weights: np.ndarray,
    loss: LossSpec,
    link: LinkSpec,
    *,
    tol: float = 1e-7,
    max_iter: int = 200,
) -> FitResult:
    """Minimize the weighted loss over the link coefficients.

    Returns a FitResult whose foc_norm is the max-norm of
    (1/N) sum_i pi_i L'(r_i) m(T_i) at the solution (surrogate L' for
    the check loss; see module docstring).
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != dataset.y.shape:
        raise DataError("weights must have one entry per observation")
    if not np.all(np.isfinite(w)) or np.any(w < 0) or w.sum() <= 0:
        raise DataError("weights must be finite, nonnegative, not all zero")
    m = link.gradient(dataset.t)
    y = dataset.y

    if loss.kind == "squared":
        beta = _weighted_ls(m, y, w)
        foc = _foc(beta, m, y, w, loss.derivative)
        fn = float(np.abs(foc).max())
        return FitResult(
            beta=beta, loss=loss, link=link, converged=True, iterations=1,
            foc_norm=fn, objective=float(np.mean(w * loss.value(y - m @ beta))),
        )
    if loss.kind == "expectile":
        return _fit_expectile(m, y, w, loss, link, tol, max_iter)
    return _fit_check(m, y, w, loss, link, tol, max_iter)


def fit_known_weights(
    dataset: Dataset,
    pi: np.ndarray,
    loss: LossSpec,
    link: LinkSpec,
    **options,
) -> FitResult:
    """Fit with externally supplied weights (e.g. true density ratios).

    Identical to ``fit``; named separately so oracle-weight comparisons
    read clearly in simulation code.
    """
    return fit(dataset, pi, loss, link, **options)


def _fit_expectile(m, y, w, loss, link, tol, max_iter):
    tau = loss.tau
    beta = _weighted_ls(m, y, w)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        r = y - m @ beta
        omega = w * np.abs(tau - (r <= 0))
        beta_new = _weighted_ls(m, y, omega)
        delta = np.abs(beta_new - beta).max()
        beta = beta_new
        if delta <= 1e-10 * (1.0 + np.abs(beta).max()):
            break
    foc = _foc(beta, m, y, w, loss.derivative)
    fn = float(np.abs(foc).max())
    return FitResult(
        beta=beta, loss=loss, link=link,
        converged=bool(fn <= tol * _foc_scale(m, y, beta, w, loss)),
        iterations=iterations, foc_norm=fn,
        objective=float(np.mean(w * loss.value(y - m @ beta))),
    )


def _smoothed_check_deriv(r, tau, eps):
    # Huberized check derivative: the exact tau - I(r<=0) outside the
    # eps band, a continuous ramp through zero inside it.
    a = np.abs(tau - (r <= 0))
    return a * r / np.maximum(np.abs(r), eps)


def _smoothed_check_value(r, tau, eps):
    a = np.abs(tau - (r <= 0))
    q = np.where(np.abs(r) <= eps, r * r / (2.0 * eps), np.abs(r) - eps / 2.0)
    return a * q


def _check_stage(m, y, w, tau, eps, beta, gtol, max_iter):
    """Minimize the width-eps surrogate by damped Newton.

    The surrogate is piecewise quadratic, so once the band membership
    stabilizes a full Newton step on the in-band Hessian lands on the
    exact piece minimizer.  When fewer than p points sit in the band the
    in-band Hessian is singular and the IRLS weight matrix (which
    majorizes the curvature) supplies the step model instead.  Each step
    length is an exact line minimization: the section derivative is
    continuous, monotone and piecewise linear, so doubling brackets its
    root and bisection pins it to machine precision.
    """
    n, p = m.shape

    fn = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        r = y - m @ beta
        foc = m.T @ (w * _smoothed_check_deriv(r, tau, eps)) / n
        fn = float(np.abs(foc).max())
        if fn <= gtol:
            break
        a = np.abs(tau - (r <= 0))
        band = np.abs(r) <= eps
        omega = w * a * band / eps
        h = (m * omega[:, None]).T @ m / n
        if np.linalg.matrix_rank(h) < p:
            omega = w * a / np.maximum(np.abs(r), eps)
            h = (m * omega[:, None]).T @ m / n
        h += 1e-12 * (np.trace(h) / p) * np.eye(p)
        d = np.linalg.solve(h, foc)
        g = m @ d

        def descent(alpha):
            # Negated section derivative; positive while alpha is short
            # of the section minimizer, zero there, negative beyond.
            return float(np.mean(w * g * _smoothed_check_deriv(r - alpha * g, tau, eps)))

        lo, hi = 0.0, 1.0
        for _ in range(64):
            if descent(hi) <= 0.0:
                break
            lo, hi = hi, 2.0 * hi
        if descent(hi) > 0.0:
            break
        for _ in range(90):
            mid = 0.5 * (lo + hi)
            if descent(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        alpha = 0.5 * (lo + hi)
        if np.abs(alpha * d).max() <= 1e-17 * (1.0 + np.abs(beta).max()):
            break
        beta = beta + alpha * d
    return beta, it, fn


def _exact_line_min(r, g, w, tau):
    """Global minimizer of alpha -> sum w rho_tau(r - alpha g), exactly.

    Each term with g != 0 rewrites as w|g| rho_{tau'}(r/g - alpha) with
    tau' = tau for g > 0 and 1 - tau for g < 0, so the section is a
    weighted asymmetric-L1 location problem: sort the breakpoints r/g
    and take the first one where the cumulative weight reaches the
    asymmetry target (the subgradient's zero crossing).
    """
    live = g != 0.0
    if not np.any(live):
        return 0.0
    breaks = r[live] / g[live]
    v = w[live] * np.abs(g[live])
    target = float(np.sum(v * np.where(g[live] > 0.0, tau, 1.0 - tau)))
    order = np.argsort(breaks, kind="stable")
    cum = np.cumsum(v[order])
    k = int(np.searchsorted(cum, target))
    return float(breaks[order[min(k, len(order) - 1)]])


def _vertex_polish(m, y, w, tau, beta, max_rounds=60):
    """Descend the exact check objective by exact line searches.

    Directions per round: the edges of the current near-active vertex
    (columns of the inverse of the p interpolated rows), which move one
    interpolated residual at a time.  Each exact section minimizer lands
    on a breakpoint, so the iterate walks vertex to vertex and the loop
    ends when no edge improves - at a nondegenerate vertex that is the
    subgradient optimality condition, checked edge-separably.
    """
    n, p = m.shape

    def objective(b):
        r = y - m @ b
        return float(np.mean(w * np.abs(r) * np.abs(tau - (r <= 0))))

    f0 = objective(beta)
    for _ in range(max_rounds):
        r = y - m @ beta
        basis: list[int] = []
        for i in np.argsort(np.abs(r), kind="stable"):
            trial = basis + [int(i)]
            if np.linalg.matrix_rank(m[trial]) == len(trial):
                basis = trial
            if len(basis) == p:
                break
        if len(basis) < p:
            break
        edges = np.linalg.inv(m[basis])
        improved = False
        for k in range(p):
            d = edges[:, k]
            g = m @ d
            alpha = _exact_line_min(y - m @ beta, g, w, tau)
            if alpha == 0.0:
                continue
            cand = beta + alpha * d
            f1 = objective(cand)
            if f1 < f0 - 1e-15 * (1.0 + abs(f0)):
                beta, f0, improved = cand, f1, True
        if not improved:
            break
    return beta


def _fit_check(m, y, w, loss, link, tol, max_iter):
    tau = loss.tau
    scale = float(np.median(np.abs(y - np.median(y)))) + 1e-12
    beta = _weighted_ls(m, y, w)
    iterations = 0
    widths = scale * 10.0 ** np.arange(-2.0, -9.0, -1.0)
    for eps in widths[:-1]:
        fscale = _foc_scale(m, y, beta, w, loss)
        beta, its, _ = _check_stage(m, y, w, tau, eps, beta, 1e-6 * fscale, max_iter)
        iterations += its
    beta = _vertex_polish(m, y, w, tau, beta)
    # Re-solve at the final width from the polished vertex: its basic
    # residuals are zero, so the band holds the right points and Newton
    # terminates on the surrogate minimizer a distance O(eps) away.
    fscale = _foc_scale(m, y, beta, w, loss)
    beta, its, fn = _check_stage(m, y, w, tau, widths[-1], beta, 1e-9 * fscale, max_iter)
    iterations += its
    fscale = _foc_scale(m, y, beta, w, loss)
    return FitResult(
        beta=beta, loss=loss, link=link,
        converged=bool(fn <= tol * fscale),
        iterations=iterations, foc_norm=fn,
        objective=float(np.mean(w * loss.value(y - m @ beta))),
    )
