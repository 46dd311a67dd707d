"""Dose-response curve and average-effect estimation.

With stabilized weights pi_i, the average potential-outcome curve
theta(t) = E[Y*(t)] is estimated by series regression of pi_i Y_i on an
orthonormalized treatment basis u(t):

    gamma_hat = [sum u_i u_i']^{-1} [sum u_i pi_i Y_i],
    theta_hat(t) = gamma_hat' u(t),

with pointwise variance V(t) = u(t)' Phi^-1 Sigma Phi^-1 u(t) built
from Eicker-White style series residuals.  The squared-error loss is
the only loss these curve formulas cover.

The average effect psi = E[Y*(T)] integrates the curve against the
marginal treatment law and reduces to (1/N) sum pi_i Y_i; its standard
error plugs into the three-term efficient influence function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import RankDeficientError
from .inference import (
    KernelConfig,
    _density_scale,
    _drop_own,
    _kernel_t,
    _kernel_x,
    _nw_rows,
    _resolve_delta,
    _sq_diff,
)
from .model import Dataset
from .sieve import SieveBasis, evaluate_at

__all__ = ["CurveFit", "fit_curve", "curve_variance", "curve_grid", "average_effect"]


@dataclass(frozen=True)
class CurveFit:
    """Series regression of weighted outcomes on the treatment basis."""

    gamma: np.ndarray
    basis: SieveBasis
    phi: np.ndarray
    sigma: np.ndarray

    def theta(self, t: np.ndarray) -> np.ndarray:
        """theta_hat(t) = gamma' u(t)."""
        return evaluate_at(self.basis, np.atleast_1d(np.asarray(t, dtype=float))) @ self.gamma


def fit_curve(dataset: Dataset, weights: np.ndarray, basis: SieveBasis) -> CurveFit:
    """Regress pi Y on the orthonormalized treatment basis."""
    w = np.asarray(weights, dtype=float)
    u = basis.matrix
    n = dataset.n
    if u.shape[0] != n:
        raise ValueError("basis was built on a different sample size")
    phi = u.T @ u / n
    ev = np.linalg.eigvalsh(phi)
    if ev[0] <= 0 or ev[-1] / ev[0] > 1e12:
        raise RankDeficientError("singular treatment-basis Gram in curve fit")
    target = w * dataset.y
    gamma = np.linalg.solve(phi, u.T @ target / n)
    resid = target - u @ gamma
    sigma = u.T @ (u * (resid * resid)[:, None]) / n
    return CurveFit(gamma=gamma, basis=basis, phi=phi, sigma=sigma)


def curve_variance(fit: CurveFit, t) -> np.ndarray | float:
    """V(t) = u(t)' Phi^-1 Sigma Phi^-1 u(t); scalar in, scalar out."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    rows = evaluate_at(fit.basis, t_arr)
    q = np.linalg.solve(fit.phi, rows.T).T  # rows @ Phi^-1
    vals = np.einsum("ij,jk,ik->i", q, fit.sigma, q)
    vals = np.maximum(vals, 0.0)
    return vals if np.ndim(t) else float(vals[0])


def curve_grid(
    dataset: Dataset,
    fit: CurveFit,
    *,
    n_points: int = 101,
    level: float = 0.95,
):
    """Curve report rows over an interior treatment grid.

    The grid spans the 1st to 99th percentile of observed T (series
    variance explodes at the boundary).  Returns a dict of columns
    t, theta, se, lower, upper.
    """
    lo, hi = np.percentile(dataset.t, [1.0, 99.0])
    t_grid = np.linspace(lo, hi, n_points)
    theta = fit.theta(t_grid)
    se = np.sqrt(np.asarray(curve_variance(fit, t_grid)) / dataset.n)
    z = stats.norm.ppf(0.5 + level / 2.0)
    return {
        "t": t_grid,
        "theta": theta,
        "se": se,
        "lower": theta - z * se,
        "upper": theta + z * se,
    }


def average_effect(
    dataset: Dataset,
    weights: np.ndarray,
    config: KernelConfig | None = None,
):
    """(psi_hat, standard error) for the average effect E[Y*(T)].

    psi_hat = (1/N) sum pi_i Y_i.  The standard error plugs kernel
    regressions into the efficient influence function
    pi (Y - E[Y|X,T]) + (E[pi Y|X] - psi) + (E[pi Y|T] - psi).
    """
    w = np.asarray(weights, dtype=float)
    n = dataset.n
    psi_hat = float(np.mean(w * dataset.y))

    config = config or KernelConfig.from_data(dataset)
    k_t = _kernel_t(dataset, config)
    k_x = _kernel_x(dataset, config)
    k_y = np.exp(-0.5 * _sq_diff(dataset.y, config.h_y))
    delta = _resolve_delta(dataset, config, k_y, k_t, k_x)
    del k_y
    k_t = _drop_own(k_t)
    k_x = _drop_own(k_x)
    k_tx = k_t * k_x
    dens_t = k_t.sum(axis=1) * _density_scale(1, n - 1, config.h_t)
    dens_x = k_x.sum(axis=1) * _density_scale(dataset.r, n - 1, float(np.prod(config.h_x)))
    dens_tx = k_tx.sum(axis=1) * _density_scale(
        dataset.r + 1, n - 1, config.h_t * float(np.prod(config.h_x))
    )
    counter = [0]
    e_y_tx = _nw_rows(k_tx, dataset.y, dens_tx, delta, counter)
    a_x = _nw_rows(k_x, w * dataset.y, dens_x, delta, counter)
    a_t = _nw_rows(k_t, w * dataset.y, dens_t, delta, counter)
    s = w * (dataset.y - e_y_tx) + (a_x - psi_hat) + (a_t - psi_hat)
    se = float(np.sqrt(np.mean(s * s) / n))
    return psi_hat, se
